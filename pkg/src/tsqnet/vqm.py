"""Visual branch: prototype-based query-embedding initialization and the
visual saliency/prediction forward pass."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .data import TsqEmbeddingSet, VideoRecord
from .exceptions import InitializationError
from .layers import softmax
from .model import ModelConfig, branch_forward


def prototype_init(
    videos: list[VideoRecord],
    frame_probe: Callable[[np.ndarray], np.ndarray],
    m_percent: float = 30.0,
) -> TsqEmbeddingSet:
    """Per-category appearance prototypes from correctly-predicted frames.

    For each video the probe scores every frame; among frames whose argmax
    matches the video label, the top ceil(m% * T) by true-class confidence
    (ties -> lower frame index) are averaged into a video vector.  Videos
    with no correct frame fall back to the plain frame average.  Class
    prototypes are the means of their video vectors.
    """
    if not videos:
        raise InitializationError("prototype_init: empty training set")
    num_classes = 1 + max(v.label for v in videos)

    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for video in videos:
        frames = np.asarray(video.features.frames, dtype=np.float64)
        t = frames.shape[0]
        logits = np.asarray(frame_probe(frames), dtype=np.float64)
        pred = logits.argmax(axis=1)
        conf = softmax(logits, axis=1)[:, video.label]

        correct = np.flatnonzero(pred == video.label)
        if correct.size == 0:
            vec = frames.mean(axis=0)
        else:
            keep = math.ceil(m_percent / 100.0 * t)
            ranked = sorted(correct.tolist(), key=lambda i: (-conf[i], i))[:keep]
            vec = frames[ranked].mean(axis=0)

        if video.label in sums:
            sums[video.label] += vec
            counts[video.label] += 1
        else:
            sums[video.label] = vec.copy()
            counts[video.label] = 1

    missing = [c for c in range(num_classes) if c not in counts]
    if missing:
        raise InitializationError(f"prototype_init: no training videos for class {missing[0]}")

    protos = np.stack([sums[c] / counts[c] for c in range(num_classes)])
    return TsqEmbeddingSet(protos, "visual")


def vqm_forward(video: VideoRecord, params: dict[str, np.ndarray], cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Visual saliency rows and coarse logits for one video.

    Returns (A, z): A (C_q, T) row-stochastic attention, z (C,) logits."""
    frames = np.asarray(video.features.frames, dtype=np.float64)
    bp = branch_forward(params, cfg, "vqm", frames[None])
    return bp.A[0], bp.z[0]
