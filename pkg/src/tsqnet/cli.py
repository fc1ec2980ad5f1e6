"""Command-line entry point.

Subcommands: synth-gen, train, sample, eval, flops, gradcheck, ablate.
Every subcommand accepts --config pointing at a JSON file; explicit flags
override config values, and the effective configuration is echoed into each
output artifact.  Exit codes: 0 success, 1 validation/usage error,
2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Dataset,
    SynthConfig,
    generate_synthetic_dataset,
    presample_and_pad,
    read_manifest,
    write_manifest,
)
from .exceptions import NumericError, TsqError
from .experiments import (
    BenchmarkConfig,
    Benchmark,
    TrainedSampler,
    fused_selection_map,
    make_policy_suite,
    prepare_benchmark,
    run_policy_comparison,
    sampler_outputs,
    train_sampler,
)
from .interaction import LossWeights
from .metrics import FlopsConfig, desk_flops_config, flops_total
from .model import ModelConfig, init_params
from .training import TrainConfig, gradcheck

POLICIES = ("tsq", "uniform", "random", "dense", "maxconf", "maxconf-l")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _merged(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """flags > config file > defaults."""
    cfg = dict(parser_defaults)
    cfg.update(_load_config_file(getattr(args, "config", None)))
    for key, value in vars(args).items():
        if key in ("config", "command", "fn"):
            continue
        if value is not None:
            cfg[key] = value
    return cfg


def _echo(cfg: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}


# ---------------------------------------------------------------------------
# synth-gen
# ---------------------------------------------------------------------------

_SYNTH_DEFAULTS = dict(classes=10, frames=16, dim=16, objects=16, embed_dim=12,
                       per_class=40, salient=4, noise=0.5, seed=17)


def _cmd_synth_gen(args) -> int:
    cfg = _merged(args, _SYNTH_DEFAULTS)
    synth = SynthConfig(
        classes=int(cfg["classes"]), frames=int(cfg["frames"]), feature_dim=int(cfg["dim"]),
        object_count=int(cfg["objects"]), embed_dim=int(cfg["embed_dim"]),
        per_class=int(cfg["per_class"]), salient_per_video=int(cfg["salient"]),
        noise=float(cfg["noise"]),
    )
    dataset = generate_synthetic_dataset(synth, int(cfg["seed"]))
    out = Path(cfg["out"])
    write_manifest(dataset, out)
    (out / "config.json").write_text(json.dumps(_echo(cfg), indent=2) + "\n")
    print(f"wrote {len(dataset.videos)} videos to {out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_DEFAULTS = dict(
    epochs=40, batch=16, lr=0.02, momentum=0.9, decay_factor=0.1,
    decay_epochs=(20, 30, 36), alpha=0.6, beta=0.6, seed=0,
    reduced_dim=8, m_percent=30.0, top_objects=10, budget=4,
    train_fraction=0.8, split_seed=1, positional=True,
    attention="cs", classifier="cs", self_attention=False, layers=1, heads=1,
    visual_init="prototype", textual_init="wordvec",
)


def _bench_from_args(cfg: dict, dataset: Dataset) -> Benchmark:
    get = lambda k: cfg.get(k, _TRAIN_DEFAULTS.get(k))
    bc = BenchmarkConfig(
        reduced_dim=int(get("reduced_dim")),
        budget=int(get("budget")),
        lambda_visual=float(cfg.get("lambda_v", 0.6)),
        top_n_classes=int(cfg.get("top_classes", 5)),
        top_n_objects=int(get("top_objects")),
        m_percent=float(get("m_percent")),
        train_fraction=float(get("train_fraction")),
        split_seed=int(get("split_seed")),
        train=TrainConfig(
            epochs=int(get("epochs")), batch_size=int(get("batch")),
            base_lr=float(get("lr")), momentum=float(get("momentum")),
            decay_factor=float(get("decay_factor")),
            decay_epochs=tuple(int(e) for e in get("decay_epochs")),
        ),
    )
    return prepare_benchmark(bc, dataset)


def _cmd_train(args) -> int:
    cfg = _merged(args, _TRAIN_DEFAULTS)
    dataset = read_manifest(cfg["data"])
    bench = _bench_from_args(cfg, dataset)
    sampler = train_sampler(
        bench,
        seed=int(cfg["seed"]),
        visual_init=cfg["visual_init"],
        textual_init=cfg["textual_init"],
        weights=LossWeights(float(cfg["alpha"]), float(cfg["beta"])),
        use_positional=bool(cfg["positional"]),
        attention=cfg["attention"],
        classifier=cfg["classifier"],
        self_attention=bool(cfg["self_attention"]),
        n_layers=int(cfg["layers"]),
        n_heads=int(cfg["heads"]),
    )
    out = Path(cfg["out"])
    arrays = dict(sampler.params)
    arrays["probe.W"] = bench.probe.W
    arrays["probe.b"] = bench.probe.b
    arrays["recognizer.W"] = bench.recognizer.W
    arrays["recognizer.b"] = bench.recognizer.b
    arrays["init.visual_prototypes"] = bench.prototypes
    save_checkpoint(out, arrays, sampler.model, extra={"config": _echo(cfg)})
    with open(out / "train_log.jsonl", "w") as f:
        f.write(json.dumps({"config": _echo(cfg)}) + "\n")
        for row in sampler.log:
            f.write(json.dumps(row) + "\n")
    last = sampler.log[-1] if sampler.log else {}
    print(f"checkpoint written to {out}"
          + (f" (final loss {last['loss']:.4f})" if last else ""))
    return 0


def _load_sampler(path: str) -> tuple[TrainedSampler, dict, dict]:
    arrays, model_cfg, extra = load_checkpoint(path)
    aux = {k: v for k, v in arrays.items()
           if k.startswith(("probe.", "recognizer.", "init."))}
    params = {k: v for k, v in arrays.items() if k not in aux}
    return TrainedSampler(params, model_cfg, LossWeights()), aux, extra


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

# published sampling protocol: budget 5 from a pre-sampled sequence
# (--presample 50 pads/subsamples raw sequences when they differ)
_SAMPLE_DEFAULTS = dict(budget=5, lambda_v=0.6, top_classes=5, policy="tsq", seed=0,
                        presample=None, split="all", reduced_dim=8, top_objects=10,
                        m_percent=30.0, train_fraction=0.8, split_seed=1)


def _apply_presample(dataset: Dataset, target: int) -> Dataset:
    from .data import FeatureSequence, ObjectScoreSequence, VideoRecord

    videos = []
    for v in dataset.videos:
        idx = presample_and_pad(v.length, target)
        planted = None
        if v.planted_salient is not None:
            planted = tuple(j for j, i in enumerate(idx) if i in set(v.planted_salient))
        videos.append(VideoRecord(
            features=FeatureSequence(v.features.frames[idx], v.video_id),
            objects=ObjectScoreSequence(v.objects.scores[idx]),
            label=v.label,
            planted_salient=planted,
        ))
    return replace(dataset, videos=videos)


def _select_split(bench: Benchmark, which: str):
    if which == "train":
        return bench.train_videos
    if which == "heldout":
        return bench.heldout_videos
    return bench.dataset.videos


def _cmd_sample(args) -> int:
    cfg = _merged(args, _SAMPLE_DEFAULTS)
    if abs(float(cfg["lambda_v"]) + float(cfg.get("lambda_t", 1.0 - float(cfg["lambda_v"]))) - 1.0) > 1e-9:
        raise TsqError("fusion proportions must sum to 1")
    dataset = read_manifest(cfg["data"])
    if cfg.get("presample"):
        dataset = _apply_presample(dataset, int(cfg["presample"]))
    policy = cfg["policy"]
    if policy not in POLICIES:
        raise TsqError(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")

    sampler = None
    if policy == "tsq":
        if not cfg.get("checkpoint"):
            raise TsqError("policy 'tsq' requires --checkpoint")
        sampler, _aux, _ = _load_sampler(cfg["checkpoint"])
        cfg["reduced_dim"] = sampler.model.reduced_dim

    bench = _bench_from_args(cfg, dataset)
    videos = _select_split(bench, cfg["split"])
    suite = make_policy_suite(bench, sampler, videos, seed=int(cfg["seed"]), policies=(policy,))
    selector = suite[policy]

    outputs = None
    if policy == "tsq":
        outputs = sampler_outputs(sampler, videos, bench.dataset.word_table,
                                  int(cfg["top_classes"]))

    lines = [json.dumps({"config": _echo(cfg)})]
    from .sampling import fuse_and_select

    for i, video in enumerate(videos):
        if policy == "tsq":
            sel = fuse_and_select(outputs.s_visual[i], outputs.s_textual[i],
                                  int(cfg["budget"]), float(cfg["lambda_v"]),
                                  1.0 - float(cfg["lambda_v"]))
            row = {
                "video_id": video.video_id,
                "indices": list(sel.indices),
                "provenance": list(sel.provenance),
                "scores": {
                    "visual": [round(float(x), 6) for x in outputs.s_visual[i]],
                    "textual": [round(float(x), 6) for x in outputs.s_textual[i]],
                },
            }
        else:
            picked = list(selector(video))
            row = {"video_id": video.video_id, "indices": picked,
                   "provenance": [policy] * len(picked)}
        lines.append(json.dumps(row))

    text = "\n".join(lines) + "\n"
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
        print(f"wrote {len(videos)} selections to {cfg['out']}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

_EVAL_DEFAULTS = dict(budget=5, lambda_v=0.6, top_classes=5, seed=0, split="heldout",
                      policies="tsq,uniform,random,dense,maxconf,maxconf-l",
                      reduced_dim=8, top_objects=10, m_percent=30.0,
                      train_fraction=0.8, split_seed=1, budgets=None)


def _cmd_eval(args) -> int:
    cfg = _merged(args, _EVAL_DEFAULTS)
    dataset = read_manifest(cfg["data"])
    policies = tuple(p.strip() for p in str(cfg["policies"]).split(",") if p.strip())
    for p in policies:
        if p not in POLICIES:
            raise TsqError(f"unknown policy {p!r}")
    sampler = None
    if "tsq" in policies:
        if not cfg.get("checkpoint"):
            raise TsqError("evaluating the 'tsq' policy requires --checkpoint")
        sampler, _aux, _ = _load_sampler(cfg["checkpoint"])
        cfg["reduced_dim"] = sampler.model.reduced_dim

    budgets = cfg.get("budgets")
    budgets = [int(b) for b in str(budgets).split(",")] if budgets else [int(cfg["budget"])]

    curve = []
    rows = []
    for budget in budgets:
        cfg_b = dict(cfg, budget=budget)
        bench = _bench_from_args(cfg_b, dataset)
        videos = _select_split(bench, cfg["split"])
        report = run_policy_comparison(bench, sampler, videos, seed=int(cfg["seed"]),
                                       policies=policies)
        for r in report.rows:
            entry = dict(r.to_dict(), budget=budget)
            rows.append(entry)
            curve.append({"policy": r.policy, "budget": budget,
                          "gflops": r.gflops, "map": r.map, "top1": r.top1})

    payload = {"config": _echo(cfg), "rows": rows, "curve": curve}
    if cfg.get("out"):
        Path(cfg["out"]).write_text(json.dumps(payload, indent=2) + "\n")
        print(f"report written to {cfg['out']}")
    header = f"{'policy':<12}{'budget':>7}{'mAP':>9}{'top1':>9}{'GFLOPs':>10}{'recall':>9}"
    print(header)
    for r in rows:
        rec = f"{r['recall']:.3f}" if r.get("recall") is not None else "-"
        print(f"{r['policy']:<12}{r['budget']:>7}{r['map']:>9.3f}{r['top1']:>9.3f}"
              f"{r['gflops']:>10.2f}{rec:>9}")
    return 0


# ---------------------------------------------------------------------------
# flops
# ---------------------------------------------------------------------------

def _cmd_flops(args) -> int:
    if args.config:
        fc = FlopsConfig.from_json(args.config)
    else:
        fc = desk_flops_config(args.policy or "tsq", int(args.presample or 16),
                               int(args.budget or 4))
    breakdown = flops_total(fc)
    for line in breakdown.lines():
        print(line)
    if args.raw:
        print(f"(raw sum {breakdown.raw_total}G)")
    return 0


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _cmd_gradcheck(args) -> int:
    cfg = ModelConfig(
        num_classes=args.classes, visual_dim=args.dim, word_dim=args.word_dim,
        reduced_dim=args.reduced_dim, t_max=max(args.frames, 2),
        use_positional=not args.no_positional,
        attention=args.attention, classifier=args.classifier,
        self_attention=args.self_attention, n_layers=args.layers, n_heads=args.heads,
    )
    rng = np.random.default_rng(args.seed)
    params = init_params(cfg, rng)
    visual = rng.standard_normal((args.batch, args.frames, args.dim))
    textual = rng.standard_normal((args.batch, args.frames, args.word_dim))
    labels = rng.integers(0, args.classes, size=args.batch)
    report = gradcheck(params, cfg, visual, textual, labels,
                       LossWeights(args.alpha, args.beta),
                       step=args.step, tolerance=args.tolerance)
    for name in sorted(report.per_param):
        flag = "ok" if report.per_param[name] <= report.tolerance else "FAIL"
        print(f"{name:<24} max_rel_err={report.per_param[name]:.3e}  {flag}")
    print(f"overall max_rel_err={report.max_rel_err:.3e} "
          f"({'PASS' if report.passed else 'FAIL'} at {report.tolerance:g})")
    if not report.passed:
        raise NumericError(f"gradient check failed at {report.worst_param}")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

_ABLATE_KEYS = {
    "alpha": float, "beta": float, "attention": str, "classifier": str,
    "visual_init": str, "textual_init": str, "self_attention": lambda s: s in ("1", "true", "on"),
    "layers": int, "heads": int, "positional": lambda s: s in ("1", "true", "on"),
}


def _cmd_ablate(args) -> int:
    cfg = _merged(args, dict(_TRAIN_DEFAULTS, seeds="0,1,2,3,4"))
    key, _, values = str(cfg["grid"]).partition("=")
    key = key.strip().replace("-", "_")
    if key not in _ABLATE_KEYS or not values:
        raise TsqError(f"--grid must be one of {sorted(_ABLATE_KEYS)} with comma-separated values")
    cast = _ABLATE_KEYS[key]
    grid = [cast(v.strip()) for v in values.split(",")]
    seeds = [int(s) for s in str(cfg["seeds"]).split(",")]

    dataset = read_manifest(cfg["data"])
    bench = _bench_from_args(cfg, dataset)

    rows = []
    for value in grid:
        run_cfg = dict(cfg)
        run_cfg[key] = value
        maps = []
        for seed in seeds:
            sampler = train_sampler(
                bench,
                seed=seed,
                visual_init=run_cfg["visual_init"],
                textual_init=run_cfg["textual_init"],
                weights=LossWeights(float(run_cfg["alpha"]), float(run_cfg["beta"])),
                use_positional=bool(run_cfg["positional"]),
                attention=run_cfg["attention"],
                classifier=run_cfg["classifier"],
                self_attention=bool(run_cfg["self_attention"]),
                n_layers=int(run_cfg["layers"]),
                n_heads=int(run_cfg["heads"]),
            )
            maps.append(fused_selection_map(bench, sampler))
        rows.append({
            "grid_key": key, "value": value, "seeds": seeds,
            "map_median": float(np.median(maps)),
            "map_values": [round(float(m), 4) for m in maps],
        })
        print(f"{key}={value}: median mAP {rows[-1]['map_median']:.4f} over seeds {seeds}")

    if cfg.get("out"):
        payload = {"config": _echo(cfg), "rows": rows}
        Path(cfg["out"]).write_text(json.dumps(payload, indent=2) + "\n")
        print(f"summary written to {cfg['out']}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsqnet", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command")

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.set_defaults(fn=fn)
        return p

    p = add("synth-gen", _cmd_synth_gen, "generate a planted-saliency dataset")
    p.add_argument("--classes", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--objects", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--salient", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = add("train", _cmd_train, "train the dual-branch sampler")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--reduced-dim", dest="reduced_dim", type=int)
    p.add_argument("--m-percent", dest="m_percent", type=float)
    p.add_argument("--top-objects", dest="top_objects", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--no-positional", dest="positional", action="store_false", default=None)
    p.add_argument("--attention", choices=("cs", "ca"))
    p.add_argument("--classifier", choices=("cs", "ca"))
    p.add_argument("--self-attention", dest="self_attention", action="store_true", default=None)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--visual-init", dest="visual_init", choices=("prototype", "random"))
    p.add_argument("--textual-init", dest="textual_init", choices=("wordvec", "random"))

    p = add("sample", _cmd_sample, "select salient frames per video")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--budget", type=int)
    p.add_argument("--presample", type=int)
    p.add_argument("--lambda-v", dest="lambda_v", type=float)
    p.add_argument("--top-classes", dest="top_classes", type=int)
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", choices=("train", "heldout", "all"))
    p.add_argument("--out")

    p = add("eval", _cmd_eval, "compare selection policies")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--budget", type=int)
    p.add_argument("--budgets", help="comma-separated budgets for the accuracy-vs-FLOPs curve")
    p.add_argument("--policies")
    p.add_argument("--lambda-v", dest="lambda_v", type=float)
    p.add_argument("--top-classes", dest="top_classes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", choices=("train", "heldout", "all"))
    p.add_argument("--out")

    p = sub.add_parser("flops", help="print a cost breakdown table")
    p.add_argument("--config", help="FlopsConfig JSON")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--presample", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--raw", action="store_true", help="also print the unrounded sum")
    p.set_defaults(fn=_cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--frames", type=int, default=6)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--word-dim", dest="word_dim", type=int, default=6)
    p.add_argument("--reduced-dim", dest="reduced_dim", type=int, default=4)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--beta", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--no-positional", dest="no_positional", action="store_true")
    p.add_argument("--attention", choices=("cs", "ca"), default="cs")
    p.add_argument("--classifier", choices=("cs", "ca"), default="cs")
    p.add_argument("--self-attention", dest="self_attention", action="store_true")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--heads", type=int, default=1)
    p.set_defaults(fn=_cmd_gradcheck)

    p = add("ablate", _cmd_ablate, "grid of training runs over one knob")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="e.g. beta=0,0.2,0.4,0.6,0.8,1.0")
    p.add_argument("--seeds", help="comma-separated model seeds (default 0,1,2,3,4)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--reduced-dim", dest="reduced_dim", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--out")

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.fn(args)
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return 2
    except TsqError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
