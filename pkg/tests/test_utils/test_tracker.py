import unittest
from unittest import mock

from deconvmode import tracker as tracker_module
from deconvmode.core.mode_seek import Estimator, GridSpec
from deconvmode.errors import ConfigError
from deconvmode.simulation.experiment import OracleBandwidth, SimConfig, run_mc_experiment
from deconvmode.tracker import NoOpTracker, Tracker, create_tracker, get_tracker_class


class RecordingTracker(Tracker):
    @classmethod
    def check_available(cls):
        pass

    def __init__(self):
        super().__init__({}, ".")
        self.logged = []

    def log(self, log_dict, step=None):
        self.logged.append((step, dict(log_dict)))

    def close(self):
        pass


class TestTrackerFactory(unittest.TestCase):

    def test_noop(self):
        tracker = create_tracker("none", {}, ".")
        self.assertIsInstance(tracker, NoOpTracker)
        self.assertTrue(tracker.is_initialized)
        tracker.log({"ise": 1.0}, step=0)
        tracker.close()

    def test_unknown(self):
        self.assertIsNone(get_tracker_class("mlflow"))
        with self.assertRaises(ConfigError):
            create_tracker("mlflow", {}, ".")

    def test_availability_checked_on_creation(self):
        with mock.patch.object(NoOpTracker, "check_available") as check:
            create_tracker("none", {}, ".")
        check.assert_called_once_with()

    def test_missing_optional_package(self):
        with mock.patch.object(tracker_module, "wandb", None):
            with self.assertRaises(ConfigError):
                create_tracker("wandb", {}, ".")
        with mock.patch.object(tracker_module, "SummaryWriter", None):
            with self.assertRaises(ConfigError):
                create_tracker("tensorboard", {}, ".")


class TestReplicateLogging(unittest.TestCase):

    def test_one_entry_per_replicate(self):
        cfg = SimConfig(
            n=60,
            n_replicates=2,
            seed=4,
            grid=GridSpec(x_lower=-1.0, x_upper=1.0, delta=1.0),
            estimators=[Estimator.LC],
            bandwidth=OracleBandwidth(h1_grid=[0.5], h2_grid=[0.5]),
            threads=1,
        )
        recorder = RecordingTracker()
        result = run_mc_experiment(cfg, recorder)
        self.assertEqual([step for step, _ in recorder.logged], [0, 1])
        for (step, entry), record in zip(recorder.logged, result.records):
            self.assertEqual(entry, {"lc/ise": record.ise, "lc/h1": 0.5, "lc/h2": 0.5})


if __name__ == "__main__":
    unittest.main(verbosity=2)
