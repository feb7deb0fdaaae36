import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from conelab.config import (
    SEED_PURPOSES,
    ConfigError,
    Settings,
    TrainConfig,
    derive_seed,
    load_train_config,
    parse_override,
)


class TrainConfigTests(unittest.TestCase):
    def test_published_defaults(self):
        config = TrainConfig()
        self.assertEqual((config.lambda_sup, config.lambda_dc), (0.7, 0.4))
        self.assertEqual((config.tau_sup, config.tau_dc), (0.1, 0.07))
        self.assertEqual((config.sgd_momentum, config.ema_base_momentum), (0.9, 0.996))

    def test_invalid_combinations(self):
        for values in (
            {"use_ce": False, "use_sup_in": False, "use_dc": False},
            {"use_sup_out": True},
            {"proj_dims": [8]},
            {"tau_sup": 0.0},
            {"no_such_key": 1},
        ):
            with self.assertRaises(ValueError):
                TrainConfig(**values)

    def test_with_updates_validates(self):
        config = TrainConfig().with_updates(lambda_sup=0.0, seed=3)
        self.assertEqual((config.lambda_sup, config.seed), (0.0, 3))
        with self.assertRaises(ConfigError):
            TrainConfig().with_updates(top_n=0)

    def test_hash_is_stable_across_reserialization(self):
        config = TrainConfig(seed=7, hidden_dims=[4, 4])
        again = TrainConfig.model_validate(json.loads(config.canonical_json()))
        self.assertEqual(config.config_hash(), again.config_hash())
        self.assertNotEqual(config.config_hash(), TrainConfig(seed=8, hidden_dims=[4, 4]).config_hash())

    def test_imagenet_scale_preset(self):
        config = TrainConfig.imagenet_scale(seed=2)
        self.assertEqual((config.bank_capacity, config.top_n, config.seed), (65536, 512, 2))


class SeedTests(unittest.TestCase):
    def test_sub_seeds_are_stable_and_distinct(self):
        seeds = TrainConfig(seed=11).sub_seeds()
        self.assertEqual(set(seeds), set(SEED_PURPOSES))
        self.assertEqual(len(set(seeds.values())), len(SEED_PURPOSES))
        self.assertEqual(seeds["data"], derive_seed(11, "data"))
        self.assertTrue(all(0 <= s < 2**63 for s in seeds.values()))


class LoadConfigTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_file_overrides_and_seed(self):
        path = self.dir / "cone.json"
        path.write_text(json.dumps({"epochs": 5, "hidden_dims": [3]}))
        config = load_train_config(str(path), ["epochs=1", "lambda_dc=0", "activation=identity"], seed=9)
        self.assertEqual((config.epochs, config.lambda_dc, config.activation), (1, 0.0, "identity"))
        self.assertEqual((config.hidden_dims, config.seed), ([3], 9))

    def test_base_values(self):
        config = load_train_config(None, ["top_n=2"], base={"bank_capacity": 10})
        self.assertEqual((config.bank_capacity, config.top_n), (10, 2))

    def test_errors(self):
        with self.assertRaises(ConfigError):
            load_train_config(str(self.dir / "missing.json"))
        with self.assertRaises(ConfigError):
            load_train_config(None, ["unknown_key=1"])
        with self.assertRaises(ConfigError):
            load_train_config(None, ["epochs"])
        with self.assertRaises(ConfigError) as ctx:
            load_train_config(None, ["epochs=-1"])
        self.assertIn("epochs", str(ctx.exception))
        bad = self.dir / "bad.json"
        bad.write_text("[1, 2]")
        with self.assertRaises(ConfigError):
            load_train_config(str(bad))

    def test_parse_override(self):
        self.assertEqual(parse_override("hidden_dims=[2, 3]"), ("hidden_dims", [2, 3]))
        self.assertEqual(parse_override("data_path=/tmp/x.csv"), ("data_path", "/tmp/x.csv"))


class SettingsTests(unittest.TestCase):
    def test_environment_prefix(self):
        with mock.patch.dict(os.environ, {"CONE_LOG": "debug", "CONE_GRADCHECK_INSTANCES": "7"}):
            settings = Settings()
        self.assertEqual(settings.LOG, "debug")
        self.assertEqual(settings.GRADCHECK_INSTANCES, 7)


if __name__ == "__main__":
    unittest.main()
