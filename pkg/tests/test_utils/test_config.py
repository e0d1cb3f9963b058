import json
import os
import tempfile
import unittest
from unittest import mock

import torch

from deconvmode.cli import EstimateConfig
from deconvmode.errors import ConfigError
from deconvmode.simulation.experiment import SimConfig
from deconvmode.utils import (
    THREADS_ENV,
    config_header,
    load_config_from_file,
    make_generator,
    read_raw_config,
    resolve_threads,
    torch_threads,
    validate_config,
)


class TestValidateConfig(unittest.TestCase):

    def test_overrides_win_over_file_values(self):
        raw = {"estimator": "lc", "bandwidth": {"mode": "fixed", "h1": 0.2, "h2": 0.3}}
        cfg = validate_config(EstimateConfig, raw, {"bandwidth.h1": 0.4, "estimator": None})
        self.assertEqual(cfg.bandwidth.h1, 0.4)
        self.assertEqual(cfg.estimator.value, "lc")
        # the raw mapping is left untouched
        self.assertEqual(raw["bandwidth"]["h1"], 0.2)

    def test_override_creates_missing_sections(self):
        cfg = validate_config(EstimateConfig, {}, {"error.kind": "laplace", "error.lambda": 0.9})
        self.assertAlmostEqual(cfg.error.lam, 0.9)

    def test_first_offending_field_is_reported(self):
        with self.assertRaises(ConfigError) as ctx:
            validate_config(SimConfig, {"n": 1})
        self.assertEqual(ctx.exception.field, "n")
        with self.assertRaises(ConfigError) as ctx:
            validate_config(SimConfig, {"grid": {"x_lower": 0.0, "x_upper": 1.0, "delta": -0.1}})
        self.assertEqual(ctx.exception.field, "grid.delta")


class TestReadConfig(unittest.TestCase):

    def test_no_file(self):
        self.assertEqual(read_raw_config(None), {})

    def test_bad_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            cases = {"broken.json": "{not json", "list.json": "[1, 2]"}
            for name, text in cases.items():
                path = os.path.join(tmp, name)
                with open(path, "w") as f:
                    f.write(text)
                with self.subTest(name=name):
                    with self.assertRaises(ConfigError) as ctx:
                        read_raw_config(path)
                    self.assertEqual(ctx.exception.field, "--config")
            with self.assertRaises(ConfigError):
                read_raw_config(os.path.join(tmp, "missing.json"))

    def test_load_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "cfg.json")
            with open(path, "w") as f:
                json.dump({"scenario": "C2", "lambda": 0.95}, f)
            cfg = load_config_from_file(path, SimConfig, {"seed": 5})
        self.assertEqual((cfg.scenario, cfg.lam, cfg.seed), ("C2", 0.95, 5))


class TestConfigHeader(unittest.TestCase):

    def test_deterministic_and_without_threads(self):
        a = config_header(SimConfig(seed=3, threads=4))
        b = config_header(SimConfig(seed=3, threads=1))
        self.assertEqual(a, b)
        self.assertTrue(a.startswith("# config: {"))
        self.assertNotIn("threads", a)
        self.assertIn('"lambda": 0.85', a)
        self.assertNotIn("\n", a)


class TestRuntime(unittest.TestCase):

    def test_generator_streams(self):
        draw = lambda *key: torch.rand(4, generator=make_generator(*key)).tolist()
        self.assertEqual(draw(1, 2, 3), draw(1, 2, 3))
        self.assertNotEqual(draw(1, 2, 3), draw(1, 3, 2))
        self.assertNotEqual(draw(1), draw(2))

    def test_resolve_threads(self):
        self.assertEqual(resolve_threads(4), 4)
        self.assertEqual(resolve_threads(0), 1)
        with mock.patch.dict(os.environ, {THREADS_ENV: "3"}):
            self.assertEqual(resolve_threads(None), 3)
        with mock.patch.dict(os.environ, {THREADS_ENV: "many"}):
            with self.assertRaises(ConfigError):
                resolve_threads(None)
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertEqual(resolve_threads(None), 1)

    def test_torch_threads_restores(self):
        before = torch.get_num_threads()
        with torch_threads(1):
            self.assertEqual(torch.get_num_threads(), 1)
        self.assertEqual(torch.get_num_threads(), before)


if __name__ == "__main__":
    unittest.main(verbosity=2)
