import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from conelab.config import ConfigError, TrainConfig
from conelab.data import build_datasets
from conelab.experiments import ABLATION_PRESETS, RunScore, run_ablation, run_sweep, summarize
from conelab.models import MetricsRow, RunManifest
from conelab.report_generator import ReportGenerator, get_report_generator
from conelab.analysis import margin_report
from conelab.trainer import fit

RUN_EXPERIMENTS = os.environ.get("CONE_RUN_EXPERIMENTS") == "1"
SEEDS = (0, 1, 2, 3, 4)


def desk_config(**overrides):
    """4 classes x 2 modes in 2-D, separation ten times the mode spread."""
    values = dict(data_classes=4, data_modes=2, data_dim=2, data_n_per_mode=313, data_separation=1.0, data_std=0.1)
    values.update(overrides)
    return TrainConfig(**values)


def tiny_config(**overrides):
    values = dict(
        data_classes=2,
        data_n_per_mode=20,
        hidden_dims=[8],
        proj_dims=[8, 4],
        batch_size=16,
        bank_capacity=64,
        top_n=4,
        epochs=1,
    )
    values.update(overrides)
    return TrainConfig(**values)


class SummaryTests(unittest.TestCase):
    def test_means_in_first_seen_order(self):
        scores = [
            RunScore(label="b", seed=0, train_acc=1.0, test_acc=0.5, probe_acc=0.2),
            RunScore(label="a", seed=0, train_acc=1.0, test_acc=1.0, probe_acc=1.0),
            RunScore(label="b", seed=1, train_acc=1.0, test_acc=0.7, probe_acc=0.4),
        ]
        summary = summarize(scores)
        self.assertEqual([s.label for s in summary], ["b", "a"])
        self.assertAlmostEqual(summary[0].mean_test_acc, 0.6, places=12)
        self.assertAlmostEqual(summary[0].mean_probe_acc, 0.3, places=12)
        self.assertEqual(summary[0].runs, 2)

    def test_presets_are_valid_configs(self):
        for name, flags in ABLATION_PRESETS.items():
            self.assertIsInstance(TrainConfig(**flags), TrainConfig, name)


class RunnerTests(unittest.TestCase):
    def test_ablation_runs_every_preset_per_seed(self):
        scores = run_ablation(tiny_config(), ["ce", "sup_in_only"], seeds=[0, 1])
        self.assertEqual([(s.seed, s.label) for s in scores], [(0, "ce"), (0, "sup_in_only"), (1, "ce"), (1, "sup_in_only")])
        for score in scores:
            self.assertTrue(0.0 <= score.probe_acc <= 1.0)

    def test_unknown_names(self):
        with self.assertRaises(ConfigError):
            run_ablation(tiny_config(), ["ce", "bogus"])
        with self.assertRaises(ConfigError):
            run_sweep(tiny_config(), "bogus_field", [1])
        with self.assertRaises(ConfigError):
            run_sweep(tiny_config(), "top_n", [0])

    def test_sweep_labels(self):
        scores = run_sweep(tiny_config(), "lambda_dc", [0.0, 0.4])
        self.assertEqual([s.label for s in scores], ["lambda_dc=0.0", "lambda_dc=0.4"])


class ReportGeneratorTests(unittest.TestCase):
    def test_renders_run_report_and_margin_summary(self):
        config = tiny_config()
        manifest = RunManifest(
            tool_version="test",
            config=config.model_dump(mode="json"),
            config_hash=config.config_hash(),
            seed=0,
            sub_seeds=config.sub_seeds(),
            rng_algorithm="PCG64",
            status="completed",
        )
        row = MetricsRow(
            epoch=0, step=4, l_ce=0.5, l_sup=0.2, l_dc=0.1, total=0.68, train_acc=0.75, test_acc=0.5,
            lr=0.01, ema_momentum=0.998, masked_fraction=0.25,
        )
        with tempfile.TemporaryDirectory() as tmp:
            html_path = Path(tmp) / "report.html"
            get_report_generator().render_run_report(manifest, [row], str(html_path))
            html = html_path.read_text()
            self.assertIn("75.0%", html)
            self.assertIn(config.config_hash(), html)

            train_set, test_set = build_datasets(config)
            result = fit(config, train_set, test_set)
            stats = margin_report(result.params, test_set, result.state.bank, config)
            txt_path = Path(tmp) / "margins.txt"
            ReportGenerator().render_margin_summary(stats, config, str(txt_path))
            text = txt_path.read_text()
            self.assertIn("0.06-0.1", text)
            self.assertIn(f"samples analyzed: {len(stats.samples)}", text)

    def test_filters(self):
        self.assertEqual(ReportGenerator.fixed(None), "-")
        self.assertEqual(ReportGenerator.fixed(0.123456, 2), "0.12")
        self.assertEqual(ReportGenerator.percent(0.5), "50.0%")


@unittest.skipUnless(RUN_EXPERIMENTS, "set CONE_RUN_EXPERIMENTS=1 to run desk-scale experiments")
class DeskScaleExperimentTests(unittest.TestCase):
    def test_joint_training_fits_separable_data(self):
        config = desk_config(epochs=30)
        train_set, test_set = build_datasets(config)
        result = fit(config, train_set, test_set)
        self.assertGreater(result.metrics[-1].train_acc, 0.9)

    def test_full_objective_keeps_up_with_cross_entropy(self):
        scores = run_ablation(desk_config(), ["ce", "cone"], seeds=SEEDS)
        means = {s.label: s.mean_test_acc for s in summarize(scores)}
        self.assertGreaterEqual(means["cone"], means["ce"] - 0.005)

    def test_standalone_contrast_learns_a_weaker_representation(self):
        scores = run_ablation(desk_config(), ["cone", "sup_in_only"], seeds=SEEDS)
        means = {s.label: s.mean_probe_acc for s in summarize(scores)}
        self.assertLess(means["sup_in_only"], means["cone"])

    def test_negative_bias_exceeds_positive_bias(self):
        gaps = []
        for seed in SEEDS:
            config = desk_config(seed=seed)
            train_set, test_set = build_datasets(config)
            result = fit(config, train_set, test_set)
            stats = margin_report(result.params, test_set, result.state.bank, config)
            gaps.append(stats.mean_m_neg - stats.mean_m_pos)
        self.assertGreater(float(np.mean(gaps)), 0.0)


if __name__ == "__main__":
    unittest.main()
