"""Benchmark harness: trains the sampler on synthetic planted-saliency data,
wires up policy selectors, and runs the baseline/ablation comparisons."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, SynthConfig, VideoRecord, generate_synthetic_dataset, split_dataset
from .exceptions import ConfigError
from .interaction import LossWeights
from .metrics import (
    EvalReport,
    compare_policies,
    desk_flops_config,
    mean_average_precision,
)
from .model import ModelConfig, branch_forward, init_params
from .sampling import (
    aggregate_saliency,
    baseline_dense,
    baseline_maxconf,
    baseline_random,
    baseline_uniform,
    fuse_and_select,
)
from .tqm import textual_embedding_init, textual_features_batch
from .training import (
    LinearClassifier,
    TrainConfig,
    fit_frame_probe,
    fit_recognizer,
    train,
)
from .vqm import prototype_init


@dataclass
class BenchmarkConfig:
    """One self-contained desk-scale experiment."""

    synth: SynthConfig = field(default_factory=SynthConfig)
    data_seed: int = 17
    split_seed: int = 1
    train_fraction: float = 0.8
    reduced_dim: int = 8
    budget: int = 4
    lambda_visual: float = 0.6
    top_n_classes: int = 5
    top_n_objects: int = 10
    m_percent: float = 30.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=40, batch_size=16, base_lr=0.02, decay_epochs=(20, 30, 36)))


@dataclass
class Benchmark:
    """Dataset plus the sampler-independent trained pieces (frame probe,
    appearance prototypes, frozen recognizer)."""

    config: BenchmarkConfig
    dataset: Dataset
    train_videos: list[VideoRecord]
    heldout_videos: list[VideoRecord]
    probe: LinearClassifier
    recognizer: LinearClassifier
    prototypes: np.ndarray  # (C, d)

    def model_config(self, **overrides) -> ModelConfig:
        sample = self.dataset.videos[0]
        if self.dataset.word_table is None:
            raise ConfigError("dataset carries no word-embedding table")
        base = dict(
            num_classes=self.dataset.num_classes,
            visual_dim=sample.features.dim,
            word_dim=self.dataset.word_table.dim,
            reduced_dim=self.config.reduced_dim,
            t_max=max(max(v.length for v in self.dataset.videos), 2),
            top_n_objects=self.config.top_n_objects,
        )
        base.update(overrides)
        return ModelConfig(**base)


def prepare_benchmark(config: BenchmarkConfig, dataset: Dataset | None = None) -> Benchmark:
    """Assemble the benchmark from `dataset`, generating one when omitted."""
    if dataset is None:
        dataset = generate_synthetic_dataset(config.synth, config.data_seed)
    if not dataset.videos:
        raise ConfigError("empty dataset")
    num_classes = dataset.num_classes
    train_videos, heldout = split_dataset(dataset.videos, config.train_fraction, config.split_seed)
    probe = fit_frame_probe(train_videos, num_classes)
    recognizer = fit_recognizer(train_videos, num_classes, config.budget)
    prototypes = prototype_init(train_videos, probe.logits, config.m_percent).embeddings
    return Benchmark(config, dataset, train_videos, heldout, probe, recognizer, prototypes)


@dataclass
class TrainedSampler:
    params: dict[str, np.ndarray]
    model: ModelConfig
    weights: LossWeights
    log: list[dict] = field(default_factory=list)


def train_sampler(
    bench: Benchmark,
    seed: int = 0,
    visual_init: str = "prototype",
    textual_init: str = "wordvec",
    weights: LossWeights | None = None,
    train_config: TrainConfig | None = None,
    **model_overrides,
) -> TrainedSampler:
    """Initialize and train one sampler variant on the benchmark's split."""
    if visual_init not in ("prototype", "random") or textual_init not in ("wordvec", "random"):
        raise ConfigError("init modes: visual in {prototype,random}, textual in {wordvec,random}")
    cfg = bench.model_config(**model_overrides)
    v_emb = bench.prototypes if visual_init == "prototype" else None
    t_emb = None
    if textual_init == "wordvec":
        if bench.dataset.class_embeddings is None:
            raise ConfigError("dataset carries no class-name embedding rows; use textual_init='random'")
        t_emb = textual_embedding_init(bench.dataset.class_embeddings).embeddings
    params = init_params(cfg, np.random.default_rng(seed), v_emb, t_emb)

    weights = weights if weights is not None else LossWeights()
    tcfg = train_config if train_config is not None else bench.config.train
    tcfg = replace(tcfg, seed=seed, weights=weights)
    result = train(bench.train_videos, bench.dataset.word_table, params, cfg, tcfg)
    return TrainedSampler(result.params, cfg, weights, result.log)


@dataclass
class SamplerOutputs:
    """Batched branch outputs over a fixed video list."""

    s_visual: np.ndarray   # (N, T)
    s_textual: np.ndarray  # (N, T)
    z_visual: np.ndarray   # (N, C)
    z_textual: np.ndarray  # (N, C)


def sampler_outputs(sampler: TrainedSampler, videos: list[VideoRecord],
                    table, top_n_classes: int) -> SamplerOutputs:
    visual = np.stack([v.features.frames for v in videos]).astype(np.float64)
    scores = np.stack([v.objects.scores for v in videos]).astype(np.float64)
    textual = textual_features_batch(scores, table, sampler.model.top_n_objects)
    vp = branch_forward(sampler.params, sampler.model, "vqm", visual)
    tp = branch_forward(sampler.params, sampler.model, "tqm", textual)
    n = len(videos)
    top = min(top_n_classes, sampler.model.num_classes)
    sv = np.stack([aggregate_saliency(vp.A[i], vp.z[i], top) for i in range(n)])
    st = np.stack([aggregate_saliency(tp.A[i], tp.z[i], top) for i in range(n)])
    return SamplerOutputs(sv, st, vp.z, tp.z)


def make_policy_suite(
    bench: Benchmark,
    sampler: TrainedSampler | None,
    videos: list[VideoRecord],
    seed: int = 0,
    policies: tuple[str, ...] = ("tsq", "uniform", "random", "dense", "maxconf", "maxconf-l"),
) -> dict:
    """Per-policy selector callables over `videos`.

    The fused policy and the probe-based ones precompute their scores; the
    random policy derives one stream per video index from `seed`."""
    cfg = bench.config
    index_of = {id(v): i for i, v in enumerate(videos)}
    outputs = None
    if sampler is not None and "tsq" in policies:
        outputs = sampler_outputs(sampler, videos, bench.dataset.word_table, cfg.top_n_classes)

    suite: dict = {}
    for name in policies:
        if name == "tsq":
            if outputs is None:
                raise ConfigError("tsq policy requires a trained sampler checkpoint")

            def tsq_select(video, _o=outputs):
                i = index_of[id(video)]
                sel = fuse_and_select(_o.s_visual[i], _o.s_textual[i], cfg.budget,
                                      cfg.lambda_visual, 1.0 - cfg.lambda_visual)
                return list(sel.indices)

            suite[name] = tsq_select
        elif name == "uniform":
            suite[name] = lambda video: baseline_uniform(video.length, cfg.budget)
        elif name == "random":
            def random_select(video, _seed=seed):
                return baseline_random(video.length, cfg.budget, [_seed, index_of[id(video)]])

            suite[name] = random_select
        elif name == "dense":
            suite[name] = lambda video: baseline_dense(video.length)
        elif name == "maxconf":
            def maxconf_select(video):
                logits = bench.recognizer(np.asarray(video.features.frames, float))
                return baseline_maxconf(logits, cfg.budget)

            suite[name] = maxconf_select
        elif name == "maxconf-l":
            def maxconf_l_select(video):
                logits = bench.probe(np.asarray(video.features.frames, float))
                return baseline_maxconf(logits, cfg.budget)

            suite[name] = maxconf_l_select
        else:
            raise ConfigError(f"unknown policy {name!r}")
    return suite


def run_policy_comparison(
    bench: Benchmark,
    sampler: TrainedSampler | None,
    videos: list[VideoRecord] | None = None,
    seed: int = 0,
    policies: tuple[str, ...] = ("tsq", "uniform", "random", "dense", "maxconf", "maxconf-l"),
) -> EvalReport:
    videos = videos if videos is not None else bench.heldout_videos
    suite = make_policy_suite(bench, sampler, videos, seed, policies)
    cfg = bench.config

    def flops_for(policy: str):
        return desk_flops_config(policy, cfg.synth.frames, cfg.budget)

    return compare_policies(videos, suite, bench.recognizer, cfg.budget, flops_for)


def fused_selection_map(bench: Benchmark, sampler: TrainedSampler,
                        videos: list[VideoRecord] | None = None) -> float:
    """Held-out mAP of the frozen recognizer over fused-policy selections
    (the ablation-table metric)."""
    videos = videos if videos is not None else bench.heldout_videos
    suite = make_policy_suite(bench, sampler, videos, policies=("tsq",))
    labels = np.array([v.label for v in videos])
    scores = []
    for video in videos:
        picked = suite["tsq"](video)
        feats = np.asarray(video.features.frames, float)[picked].mean(axis=0)
        scores.append(bench.recognizer(feats[None])[0])
    return mean_average_precision(np.stack(scores), labels)
