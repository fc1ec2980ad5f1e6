"""Textual branch: object-score-to-embedding features with top-N filtering,
word-embedding initialization, and the textual forward pass."""

from __future__ import annotations

import warnings

import numpy as np

from .data import TsqEmbeddingSet, VideoRecord, WordEmbeddingTable
from .exceptions import DimensionError, InitializationError
from .model import ModelConfig, branch_forward


def _table_rows(table: WordEmbeddingTable | np.ndarray) -> np.ndarray:
    rows = table.rows if isinstance(table, WordEmbeddingTable) else table
    return np.asarray(rows, dtype=np.float64)


def textual_features_batch(scores: np.ndarray, table: WordEmbeddingTable | np.ndarray,
                           top_n: int) -> np.ndarray:
    """Batched object-embedding frame features.

    scores (..., C_o): per frame, all but the top_n largest object scores
    (ties -> lower object index) are zeroed, the kept scores renormalized to
    sum 1, and the result used to weight the embedding rows.  top_n >= C_o
    keeps every object (still renormalized)."""
    rows = _table_rows(table)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[-1] != rows.shape[0]:
        raise DimensionError(
            f"object scores cover {scores.shape[-1]} objects, table holds {rows.shape[0]}"
        )
    c_o = rows.shape[0]
    n = min(int(top_n), c_o)

    if n < c_o:
        order = np.argsort(-scores, axis=-1, kind="stable")
        mask = np.zeros(scores.shape, dtype=bool)
        np.put_along_axis(mask, order[..., :n], True, axis=-1)
    else:
        mask = np.ones(scores.shape, dtype=bool)
    kept = np.where(mask, scores, 0.0)
    sums = kept.sum(axis=-1, keepdims=True)

    dead = sums[..., 0] == 0.0
    if dead.any():
        warnings.warn("all-zero object-score rows: using uniform weights over "
                      "the lowest-index objects", stacklevel=2)
        kept[dead] = mask[dead] / n
        sums = kept.sum(axis=-1, keepdims=True)

    weights = kept / sums
    return weights @ rows


def textual_frame_features(scores: np.ndarray, table: WordEmbeddingTable | np.ndarray,
                           top_n: int) -> np.ndarray:
    """Single-video variant: (T, C_o) object scores -> (T, D) features."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise DimensionError("expected a T x C_o score matrix")
    return textual_features_batch(scores, table, top_n)


def textual_embedding_init(class_rows: np.ndarray) -> TsqEmbeddingSet:
    """Copy pre-trained word-embedding rows of the category names into a
    fresh learnable textual embedding set."""
    rows = np.asarray(class_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise InitializationError("need one embedding row per class (C >= 2)")
    if not np.isfinite(rows).all():
        raise InitializationError("class embedding rows contain non-finite values")
    return TsqEmbeddingSet(rows.copy(), "textual")


def random_embedding_init(num_classes: int, dim: int, seed: int,
                          modality: str = "textual", scale: float | None = None) -> TsqEmbeddingSet:
    """Scaled-Gaussian fallback used by the random-initialization ablation."""
    rng = np.random.default_rng(seed)
    s = scale if scale is not None else 1.0 / np.sqrt(dim)
    return TsqEmbeddingSet(s * rng.standard_normal((num_classes, dim)), modality)


def tqm_forward(video: VideoRecord, table: WordEmbeddingTable | np.ndarray,
                params: dict[str, np.ndarray], cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Textual saliency rows and coarse logits for one video."""
    feats = textual_frame_features(video.objects.scores, table, cfg.top_n_objects)
    bp = branch_forward(params, cfg, "tqm", feats[None])
    return bp.A[0], bp.z[0]
