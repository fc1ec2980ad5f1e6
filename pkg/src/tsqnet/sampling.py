"""Inference-time saliency aggregation, multi-modality fusion, and the
rule-based baseline samplers.

Every tie, everywhere, is broken toward the lower index."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DimensionError
from .layers import softmax


def _rank_desc(scores: np.ndarray) -> np.ndarray:
    """Indices in descending score order, ties -> lower index first."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def aggregate_saliency(A: np.ndarray, z: np.ndarray, top_n_classes: int = 5) -> np.ndarray:
    """Per-frame saliency: confidence-weighted mix of the most confident
    categories' attention rows.

    softmax(z) is computed, the top_n_classes largest masses kept and
    renormalized to sum 1, and the kept rows of A combined with those
    weights.  A single-row A (class-agnostic attention) is shared by every
    category."""
    A = np.asarray(A, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if A.ndim != 2:
        raise DimensionError("saliency matrix must be C x T")
    if A.shape[0] not in (1, z.shape[0]):
        raise DimensionError(f"saliency matrix has {A.shape[0]} rows for {z.shape[0]} categories")
    if not (1 <= top_n_classes <= z.shape[0]):
        raise ConfigError(f"top_n_classes must be in [1, {z.shape[0]}]")

    p = softmax(z)
    kept = _rank_desc(p)[:top_n_classes]
    w = p[kept]
    w = w / w.sum()
    if A.shape[0] == 1:
        return A[0].copy()
    return w @ A[kept]


@dataclass(frozen=True)
class SelectionResult:
    """K distinct frame indices in selection order, with the modality that
    claimed each one."""

    indices: tuple[int, ...]
    provenance: tuple[str, ...]  # "visual" | "textual" | "backfill"

    def __post_init__(self):
        if len(self.indices) != len(set(self.indices)):
            raise ConfigError("selected indices must be distinct")
        if len(self.provenance) != len(self.indices):
            raise ConfigError("provenance must align with indices")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def fuse_and_select(
    s_visual: np.ndarray,
    s_textual: np.ndarray,
    budget: int,
    lambda_visual: float = 0.6,
    lambda_textual: float = 0.4,
) -> SelectionResult:
    """Union of the two modalities' top frames under a fixed split.

    round(lambda_visual * K) frames come from the visual scores and the
    rest from the textual scores; duplicates are backfilled from the
    remaining visual ranking until K distinct frames are held."""
    sv = np.asarray(s_visual, dtype=np.float64).reshape(-1)
    st = np.asarray(s_textual, dtype=np.float64).reshape(-1)
    if sv.shape != st.shape:
        raise DimensionError("modality score vectors differ in length")
    t = sv.shape[0]
    if not (1 <= budget <= t):
        raise ConfigError(f"budget must be in [1, {t}], got {budget}")
    if abs(lambda_visual + lambda_textual - 1.0) > 1e-9:
        raise ConfigError("fusion proportions must sum to 1")

    n_visual = _round_half_up(lambda_visual * budget)
    n_visual = min(max(n_visual, 0), budget)
    n_textual = budget - n_visual

    visual_rank = _rank_desc(sv)
    textual_rank = _rank_desc(st)

    chosen: list[int] = []
    provenance: list[str] = []
    taken = set()
    for i in visual_rank[:n_visual]:
        chosen.append(int(i))
        provenance.append("visual")
        taken.add(int(i))
    for i in textual_rank[:n_textual]:
        if int(i) not in taken:
            chosen.append(int(i))
            provenance.append("textual")
            taken.add(int(i))
    for i in visual_rank:
        if len(chosen) >= budget:
            break
        if int(i) not in taken:
            chosen.append(int(i))
            provenance.append("backfill")
            taken.add(int(i))
    return SelectionResult(tuple(chosen), tuple(provenance))


# ---------------------------------------------------------------------------
# Baseline samplers
# ---------------------------------------------------------------------------

def baseline_uniform(total: int, budget: int) -> list[int]:
    """Evenly spaced indices floor(j * T / K)."""
    if not (1 <= budget <= total):
        raise ConfigError(f"budget must be in [1, {total}], got {budget}")
    return [j * total // budget for j in range(budget)]


def baseline_random(total: int, budget: int, seed) -> list[int]:
    """Seed-deterministic sample without replacement."""
    if not (1 <= budget <= total):
        raise ConfigError(f"budget must be in [1, {total}], got {budget}")
    rng = np.random.default_rng(seed)
    return [int(i) for i in rng.choice(total, size=budget, replace=False)]


def baseline_dense(total: int) -> list[int]:
    return list(range(total))


def baseline_maxconf(frame_logits: np.ndarray, budget: int) -> list[int]:
    """Top-K frames by maximum class confidence (softmax over each frame's
    logits).  The lightweight variant is this same rule applied to the
    pre-sampled frames with probe logits."""
    logits = np.asarray(frame_logits, dtype=np.float64)
    if logits.ndim != 2:
        raise DimensionError("frame logits must be T x C")
    t = logits.shape[0]
    if not (1 <= budget <= t):
        raise ConfigError(f"budget must be in [1, {t}], got {budget}")
    conf = softmax(logits, axis=1).max(axis=1)
    return [int(i) for i in _rank_desc(conf)[:budget]]
