"""FLOPs accounting, ranking metrics, and the policy comparison harness."""

from decimal import Decimal

import numpy as np
import pytest

import oracles
from tsqnet.data import SynthConfig, generate_synthetic_dataset, split_dataset
from tsqnet.exceptions import ConfigError
from tsqnet.metrics import (
    FlopsComponent,
    FlopsConfig,
    compare_policies,
    desk_flops_config,
    flops_total,
    mean_average_precision,
    planted_recall,
    top1_accuracy,
)
from tsqnet.sampling import baseline_dense, baseline_uniform
from tsqnet.training import fit_recognizer


class TestFlops:
    def test_published_pipeline_breakdown(self):
        cfg = FlopsConfig.from_dict({
            "components": [
                {"name": "vis-enc", "flops_per_frame": Decimal("0.220"), "frames": 16},
                {"name": "obj-rec", "flops_per_frame": Decimal("0.0975"), "frames": 16},
                {"name": "rec-net", "flops_per_frame": Decimal("4.109"), "frames": 5},
            ],
            "heads": [
                {"name": "vqm", "flops": Decimal("0.36")},
                {"name": "tqm", "flops": Decimal("0.10")},
            ],
        })
        out = flops_total(cfg)
        assert [str(v) for _, v in out.rows] == ["3.52", "1.56", "20.55", "0.36", "0.10"]
        assert str(out.total) == "26.09"

    def test_empty_config_is_zero(self):
        out = flops_total(FlopsConfig(components=()))
        assert out.total == Decimal("0.00")
        assert out.rows == []

    def test_single_head(self):
        out = flops_total(FlopsConfig((FlopsComponent("head", Decimal("1.0")),)))
        assert str(out.total) == "1.00"
        assert str(out.rows[0][1]) == "1.00"

    def test_negative_cost_rejected(self):
        with pytest.raises(ConfigError):
            FlopsComponent("bad", Decimal("-1"))

    def test_additive_and_order_independent(self, rng):
        comps = [FlopsComponent(f"c{i}", Decimal(str(round(float(x), 3))), int(n))
                 for i, (x, n) in enumerate(zip(rng.random(6) * 5, rng.integers(1, 20, 6)))]
        a = flops_total(FlopsConfig(tuple(comps)))
        b = flops_total(FlopsConfig(tuple(reversed(comps))))
        assert a.total == b.total
        assert a.raw_total == sum(c.raw_total for c in comps)

    def test_rounded_vs_raw_mode(self):
        cfg = FlopsConfig((FlopsComponent("a", Decimal("0.333"), 2),
                           FlopsComponent("b", Decimal("0.333"), 2)))
        out = flops_total(cfg)
        assert str(out.total) == "1.34"        # 0.67 + 0.67 after per-row rounding
        assert out.raw_total == Decimal("1.332")


class TestRankingMetrics:
    def test_perfect_separation_gives_one(self, rng):
        labels = np.array([0, 0, 1, 1, 2])
        scores = np.full((5, 3), -5.0)
        scores[np.arange(5), labels] = 5.0 + rng.random(5)
        assert mean_average_precision(scores, labels) == 1.0

    def test_single_class_neg_above_pos(self):
        # ranking [neg, pos] -> precision at the only hit is 1/2
        from tsqnet.metrics import average_precision

        assert average_precision(np.array([0.9, 0.4]), np.array([False, True])) == 0.5
        assert oracles.average_precision([0.9, 0.4], [False, True]) == 0.5

    def test_matches_exhaustive_oracle(self, rng):
        for _ in range(100):
            c = int(rng.integers(2, 5))
            n = int(rng.integers(c, 11))
            labels = np.concatenate([np.arange(c), rng.integers(0, c, size=n - c)])
            rng.shuffle(labels)
            scores = rng.standard_normal((n, c))
            assert mean_average_precision(scores, labels) == pytest.approx(
                oracles.mean_average_precision(scores, labels), rel=1e-12)

    def test_six_by_two_example(self, rng):
        labels = np.array([0, 1, 0, 1, 0, 1])
        scores = rng.standard_normal((6, 2))
        assert mean_average_precision(scores, labels) == pytest.approx(
            oracles.mean_average_precision(scores, labels), rel=1e-12)

    def test_empty_class_warns_and_is_excluded(self, rng):
        labels = np.array([0, 0, 1])
        scores = rng.standard_normal((3, 3))
        with pytest.warns(UserWarning, match="class 2"):
            value = mean_average_precision(scores, labels)
        assert 0.0 <= value <= 1.0

    def test_monotone_transform_invariance(self, rng):
        labels = rng.integers(0, 3, size=12)
        scores = rng.standard_normal((12, 3))
        a = mean_average_precision(scores, labels)
        b = mean_average_precision(np.exp(scores) * 3 + 1, labels)
        assert a == pytest.approx(b, rel=1e-12)
        assert top1_accuracy(scores, labels) == top1_accuracy(10 * scores + 2, labels)

    def test_top1_all_correct(self):
        labels = np.array([0, 1, 2])
        assert top1_accuracy(np.eye(3), labels) == 1.0

    def test_top1_tie_goes_to_lower_index(self):
        scores = np.zeros((4, 3))
        labels = np.array([0, 0, 1, 2])
        assert top1_accuracy(scores, labels) == 0.5

    def test_top1_matches_loop(self, rng):
        scores = rng.standard_normal((10, 4))
        labels = rng.integers(0, 4, size=10)
        expected = sum(1 for i in range(10) if int(np.argmax(scores[i])) == labels[i]) / 10
        assert top1_accuracy(scores, labels) == expected

    def test_planted_recall(self):
        assert planted_recall([0, 1, 2], (1, 2, 5, 7)) == 0.5
        assert planted_recall([], (1,)) == 0.0


class TestComparePolicies:
    @pytest.fixture(scope="class")
    def world(self):
        ds = generate_synthetic_dataset(
            SynthConfig(classes=4, frames=10, feature_dim=8, object_count=8,
                        embed_dim=5, per_class=8, salient_per_video=3, noise=0.3), seed=31)
        train_vids, held = split_dataset(ds.videos, 0.75, seed=3)
        recognizer = fit_recognizer(train_vids, 4, budget=3)
        return held, recognizer

    def test_dense_flops_exceed_uniform_when_presample_exceeds_budget(self):
        dense = flops_total(desk_flops_config("dense", presample=16, budget=4)).total
        uniform = flops_total(desk_flops_config("uniform", presample=16, budget=4)).total
        assert dense > uniform

    def test_uniform_equals_dense_when_budget_is_everything(self, world):
        held, recognizer = world
        t = held[0].length
        policies = {
            "uniform": lambda v: baseline_uniform(v.length, v.length),
            "dense": lambda v: baseline_dense(v.length),
        }
        report = compare_policies(held, policies, recognizer, budget=t).by_policy()
        assert report["uniform"].map == report["dense"].map
        assert report["uniform"].top1 == report["dense"].top1
        assert report["uniform"].recall == report["dense"].recall

    def test_identical_policies_identical_rows(self, world):
        held, recognizer = world
        policies = {
            "a": lambda v: baseline_uniform(v.length, 3),
            "b": lambda v: baseline_uniform(v.length, 3),
        }
        report = compare_policies(held, policies, recognizer, budget=3).by_policy()
        assert report["a"].map == report["b"].map
        assert report["a"].top1 == report["b"].top1

    def test_recall_reported_only_with_ground_truth(self, world):
        held, recognizer = world
        report = compare_policies(held, {"u": lambda v: baseline_uniform(v.length, 3)},
                                  recognizer, budget=3)
        assert report.rows[0].recall is not None
