"""Momentum-SGD training loop, stepwise learning-rate schedule, linear-probe
fitting, and the finite-difference gradient verification harness."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import VideoRecord, WordEmbeddingTable
from .exceptions import ConfigError, NumericError
from .interaction import LossWeights, network_loss
from .layers import cross_entropy
from .model import ModelConfig
from .tqm import textual_features_batch


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; `paper_scale` restores the published schedule
    (100 epochs, batch 64, decays at 25/50/75)."""

    epochs: int = 30
    batch_size: int = 16
    base_lr: float = 1e-2
    momentum: float = 0.9
    decay_factor: float = 0.1
    decay_epochs: tuple[int, ...] = (8, 16, 24)
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    max_batch_loss: float = 1e4

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if list(self.decay_epochs) != sorted(self.decay_epochs):
            raise ConfigError("decay_epochs must be sorted ascending")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        base = cls(epochs=100, batch_size=64, decay_epochs=(25, 50, 75))
        return replace(base, **overrides) if overrides else base


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """base_lr decayed once per schedule point reached."""
    n = sum(1 for e in cfg.decay_epochs if e <= epoch)
    return cfg.base_lr * cfg.decay_factor ** n


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]
    momentum: float
    lr: float

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], momentum: float, lr: float) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in params.items()}, momentum, lr)


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             state: OptimizerState) -> None:
    """Heavy-ball update in place: v <- momentum*v + g; p <- p - lr*v."""
    for name in params:
        g = grads[name]
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
        v = state.velocity[name]
        v *= state.momentum
        v += g
        params[name] -= state.lr * v


def stack_inputs(videos: list[VideoRecord], table: WordEmbeddingTable | np.ndarray,
                 top_n_objects: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(visual (N,T,d), textual (N,T,D), labels (N,)) for a uniform-length set."""
    lengths = {v.length for v in videos}
    if len(lengths) != 1:
        raise ConfigError(f"videos must share a frame count, got {sorted(lengths)}")
    visual = np.stack([v.features.frames for v in videos]).astype(np.float64)
    scores = np.stack([v.objects.scores for v in videos]).astype(np.float64)
    textual = textual_features_batch(scores, table, top_n_objects)
    labels = np.array([v.label for v in videos], dtype=np.int64)
    return visual, textual, labels


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    log: list[dict]


def train(
    videos: list[VideoRecord],
    table: WordEmbeddingTable | np.ndarray,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    tcfg: TrainConfig,
) -> TrainResult:
    """Minimize the four-term objective over the training videos.

    Fully deterministic given (videos, params, configs): shuffling comes
    from the config seed and batch gradients accumulate in index order."""
    if not videos:
        raise ConfigError("empty training set")
    visual, textual, labels = stack_inputs(videos, table, cfg.top_n_objects)
    n = len(videos)
    rng = np.random.default_rng(tcfg.seed)
    state = OptimizerState.for_params(params, tcfg.momentum, tcfg.base_lr)

    log: list[dict] = []
    for epoch in range(tcfg.epochs):
        state.lr = lr_at(epoch, tcfg)
        order = rng.permutation(n)
        epoch_loss = 0.0
        hits_v = 0
        hits_t = 0
        for start in range(0, n, tcfg.batch_size):
            idx = order[start:start + tcfg.batch_size]
            res = network_loss(params, cfg, visual[idx], textual[idx], labels[idx], tcfg.weights)
            if not np.isfinite(res.loss) or res.loss > tcfg.max_batch_loss:
                raise NumericError(f"training diverged at epoch {epoch}: batch loss {res.loss}")
            sgd_step(params, res.grads, state)
            epoch_loss += res.loss * len(idx)
            hits_v += int((res.z_visual.argmax(axis=1) == labels[idx]).sum())
            hits_t += int((res.z_textual.argmax(axis=1) == labels[idx]).sum())
        log.append({
            "epoch": epoch,
            "lr": state.lr,
            "loss": epoch_loss / n,
            "acc_visual": hits_v / n,
            "acc_textual": hits_t / n,
        })
    return TrainResult(params, log)


# ---------------------------------------------------------------------------
# Linear probes (frame classifier / frozen recognizer stand-ins)
# ---------------------------------------------------------------------------

@dataclass
class LinearClassifier:
    W: np.ndarray  # (features, classes)
    b: np.ndarray  # (classes,)

    def logits(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.W + self.b

    __call__ = logits


def fit_linear_classifier(X: np.ndarray, y: np.ndarray, num_classes: int,
                          epochs: int = 150, lr: float = 0.5, momentum: float = 0.9,
                          weight_decay: float = 1e-4) -> LinearClassifier:
    """Full-batch softmax regression; zero init makes it deterministic."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, f = X.shape
    W = np.zeros((f, num_classes))
    b = np.zeros(num_classes)
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    for _ in range(epochs):
        z = X @ W + b
        _, dz = cross_entropy(z, y)
        dz /= n
        gW = X.T @ dz + weight_decay * W
        gb = dz.sum(axis=0)
        vW = momentum * vW + gW
        vb = momentum * vb + gb
        W -= lr * vW
        b -= lr * vb
    return LinearClassifier(W, b)


def fit_frame_probe(videos: list[VideoRecord], num_classes: int, **kwargs) -> LinearClassifier:
    """Frame-level classifier trained with each frame labeled by its video."""
    X = np.concatenate([v.features.frames for v in videos]).astype(np.float64)
    y = np.concatenate([np.full(v.length, v.label) for v in videos])
    return fit_linear_classifier(X, y, num_classes, **kwargs)


def mean_feature(video: VideoRecord, indices) -> np.ndarray:
    return np.asarray(video.features.frames, dtype=np.float64)[list(indices)].mean(axis=0)


def fit_recognizer(videos: list[VideoRecord], num_classes: int, budget: int, **kwargs) -> LinearClassifier:
    """Frozen downstream recognizer: linear classifier over the mean feature
    of uniformly selected frames, trained once on the training split."""
    from .sampling import baseline_uniform  # local import avoids a cycle

    X = np.stack([mean_feature(v, baseline_uniform(v.length, min(budget, v.length))) for v in videos])
    y = np.array([v.label for v in videos])
    return fit_linear_classifier(X, y, num_classes, **kwargs)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradcheckReport:
    per_param: dict[str, float]
    tolerance: float

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values())

    @property
    def worst_param(self) -> str:
        return max(self.per_param, key=self.per_param.get)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def failures(self) -> list[str]:
        return sorted(k for k, v in self.per_param.items() if v > self.tolerance)


def gradcheck(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    visual_frames: np.ndarray,
    textual_frames: np.ndarray,
    labels: np.ndarray,
    weights: LossWeights = LossWeights(),
    step: float = 1e-5,
    tolerance: float = 1e-4,
    analytic: dict[str, np.ndarray] | None = None,
) -> GradcheckReport:
    """Compare analytic gradients of the total objective against central
    finite differences, parameter tensor by parameter tensor.

    `analytic` overrides the computed gradients (fault-injection hook)."""

    def loss_value() -> float:
        return network_loss(params, cfg, visual_frames, textual_frames, labels,
                            weights, compute_grads=False).loss

    if analytic is None:
        analytic = network_loss(params, cfg, visual_frames, textual_frames, labels, weights).grads

    report: dict[str, float] = {}
    for name in sorted(params):
        tensor = params[name]
        a = analytic[name]
        worst = 0.0
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = tensor[ix]
            tensor[ix] = orig + step
            up = loss_value()
            tensor[ix] = orig - step
            down = loss_value()
            tensor[ix] = orig
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(a[ix]) + abs(numeric), 1e-4)
            worst = max(worst, abs(a[ix] - numeric) / denom)
            it.iternext()
        report[name] = worst
    return GradcheckReport(report, tolerance)
