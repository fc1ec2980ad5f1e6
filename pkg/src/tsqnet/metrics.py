"""Evaluation metrics (mAP, top-1), the giga-FLOPs accounting model, and the
policy comparison harness."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Callable

import numpy as np

from .data import VideoRecord
from .exceptions import ConfigError

_CENT = Decimal("0.01")


def _dec(x) -> Decimal:
    if isinstance(x, Decimal):
        return x
    if isinstance(x, int):
        return Decimal(x)
    # via str() so 0.0975 means the decimal 0.0975, not its binary neighbour
    return Decimal(str(x))


def _round2(x: Decimal) -> Decimal:
    return x.quantize(_CENT, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class FlopsComponent:
    """A per-frame cost applied to a frame count (`frames` None or 0 means a
    fixed-cost head)."""

    name: str
    flops: Decimal
    frames: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "flops", _dec(self.flops))
        if self.flops < 0:
            raise ConfigError(f"component {self.name}: negative cost")
        if self.frames is not None and self.frames < 0:
            raise ConfigError(f"component {self.name}: negative frame count")

    @property
    def raw_total(self) -> Decimal:
        if self.frames:
            return self.flops * self.frames
        return self.flops


@dataclass(frozen=True)
class FlopsConfig:
    components: tuple[FlopsComponent, ...]

    @classmethod
    def from_dict(cls, d: dict) -> "FlopsConfig":
        comps = [
            FlopsComponent(c["name"], _dec(c["flops_per_frame"]), int(c["frames"]))
            for c in d.get("components", [])
        ]
        comps += [FlopsComponent(h["name"], _dec(h["flops"])) for h in d.get("heads", [])]
        return cls(tuple(comps))

    @classmethod
    def from_json(cls, path: str | Path) -> "FlopsConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f, parse_float=Decimal))


@dataclass
class FlopsBreakdown:
    rows: list[tuple[str, Decimal]]  # display rows, rounded to 2 decimals
    total: Decimal                   # sum of the rounded rows
    raw_total: Decimal               # exact sum before any rounding

    def lines(self) -> list[str]:
        width = max((len(name) for name, _ in self.rows), default=5)
        out = [f"{name:<{width}}  {value:>8}G" for name, value in self.rows]
        out.append(f"{'Total':<{width}}  {self.total:>8}G")
        return out


def flops_total(config: FlopsConfig) -> FlopsBreakdown:
    """Decimal-exact cost table: each row is rounded to 2 decimals for
    display and the total is the sum of the rounded rows (the raw sum is
    also reported)."""
    rows = [(c.name, _round2(c.raw_total)) for c in config.components]
    total = sum((v for _, v in rows), Decimal("0.00"))
    raw = sum((c.raw_total for c in config.components), Decimal(0))
    return FlopsBreakdown(rows, _round2(total), raw)


# ---------------------------------------------------------------------------
# Ranking metrics
# ---------------------------------------------------------------------------

def average_precision(scores: np.ndarray, relevant: np.ndarray) -> float:
    """Non-interpolated AP: mean precision at each positive, ranked by
    descending score (ties keep input order)."""
    scores = np.asarray(scores, dtype=np.float64)
    relevant = np.asarray(relevant, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    rel = relevant[order]
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        raise ConfigError("average_precision: no positives")
    precision_at_hits = (np.arange(hits.size) + 1.0) / (hits + 1.0)
    return float(precision_at_hits.mean())


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean AP over classes with at least one positive; empty classes are
    skipped with a warning."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise ConfigError("scores must be N x C aligned with N labels")
    aps = []
    for c in range(scores.shape[1]):
        rel = labels == c
        if not rel.any():
            warnings.warn(f"class {c} has no positives; excluded from mAP", stacklevel=2)
            continue
        aps.append(average_precision(scores[:, c], rel))
    if not aps:
        raise ConfigError("mean_average_precision: no class has positives")
    return float(np.mean(aps))


def top1_accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    return float((scores.argmax(axis=1) == labels).mean())


def planted_recall(selected, planted) -> float:
    """Fraction of the planted salient frames recovered by a selection."""
    planted = set(int(i) for i in planted)
    if not planted:
        raise ConfigError("planted_recall: empty ground truth")
    return len(planted & set(int(i) for i in selected)) / len(planted)


# ---------------------------------------------------------------------------
# Policy comparison harness
# ---------------------------------------------------------------------------

@dataclass
class PolicyReport:
    policy: str
    map: float
    top1: float
    gflops: float
    recall: float | None = None

    def to_dict(self) -> dict:
        d = {"policy": self.policy, "map": self.map, "top1": self.top1, "gflops": self.gflops}
        if self.recall is not None:
            d["recall"] = self.recall
        return d


@dataclass
class EvalReport:
    rows: list[PolicyReport] = field(default_factory=list)

    def by_policy(self) -> dict[str, PolicyReport]:
        return {r.policy: r for r in self.rows}


def desk_flops_config(policy: str, presample: int, budget: int,
                      recognizer_per_frame: float = 4.109,
                      probe_per_frame: float = 0.098,
                      sampler_heads: float = 0.46) -> FlopsConfig:
    """Synthetic cost model mirroring the published decomposition: a heavy
    recognizer applied to the frames a policy keeps, plus whatever the
    policy spends scoring frames."""
    rec = _dec(recognizer_per_frame)
    probe = _dec(probe_per_frame)
    comps: list[FlopsComponent] = []
    if policy == "dense":
        comps.append(FlopsComponent("recognizer", rec, presample))
    elif policy == "maxconf":
        comps.append(FlopsComponent("recognizer-scan", rec, presample))
        comps.append(FlopsComponent("recognizer", rec, budget))
    elif policy == "maxconf-l":
        comps.append(FlopsComponent("probe-scan", probe, presample))
        comps.append(FlopsComponent("recognizer", rec, budget))
    elif policy == "tsq":
        comps.append(FlopsComponent("probe-scan", probe, presample))
        comps.append(FlopsComponent("sampler-heads", _dec(sampler_heads)))
        comps.append(FlopsComponent("recognizer", rec, budget))
    else:  # uniform / random need no scoring pass
        comps.append(FlopsComponent("recognizer", rec, budget))
    return FlopsConfig(tuple(comps))


Selector = Callable[[VideoRecord], "list[int] | tuple[int, ...]"]


def compare_policies(
    videos: list[VideoRecord],
    policies: dict[str, Selector],
    recognizer,
    budget: int,
    flops_for_policy: Callable[[str], FlopsConfig] | None = None,
) -> EvalReport:
    """Select frames per policy, classify the mean selected feature with the
    frozen recognizer, and score the resulting rankings."""
    if not videos:
        raise ConfigError("compare_policies: empty evaluation set")
    labels = np.array([v.label for v in videos])
    with_truth = [v.planted_salient is not None for v in videos]
    report = EvalReport()
    for name, selector in policies.items():
        scores = []
        recalls = []
        for video, has_truth in zip(videos, with_truth):
            picked = list(selector(video))
            feats = np.asarray(video.features.frames, dtype=np.float64)[picked].mean(axis=0)
            scores.append(recognizer(feats[None])[0])
            if has_truth:
                recalls.append(planted_recall(picked, video.planted_salient))
        scores = np.stack(scores)
        gflops = 0.0
        if flops_for_policy is not None:
            gflops = float(flops_total(flops_for_policy(name)).total)
        report.rows.append(PolicyReport(
            policy=name,
            map=mean_average_precision(scores, labels),
            top1=top1_accuracy(scores, labels),
            gflops=gflops,
            recall=float(np.mean(recalls)) if recalls else None,
        ))
    return report
