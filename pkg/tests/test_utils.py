"""Tests for utils module functionality."""

import logging
import unittest
from types import SimpleNamespace
from unittest.mock import Mock

from xmlforest.utils import (
    LOGGER_NAME,
    TrainingLogger,
    configure_logging,
    format_bytes,
    format_key_values,
    format_table,
)


class TestFormatting(unittest.TestCase):
    """Test cases for report formatting helpers."""

    def test_format_bytes(self):
        self.assertEqual(format_bytes(512), "512 B")
        self.assertEqual(format_bytes(2048), "2.0 KB")
        self.assertEqual(format_bytes(3 * 1024 * 1024), "3.0 MB")
        self.assertEqual(format_bytes(5 * 1024**4), "5120.0 GB")

    def test_format_table(self):
        table = format_table([("P@1", "87.20"), ("P@3", 0.5)], ["metric", "%"])
        self.assertEqual(
            table.splitlines(),
            ["metric  %", "------  ------", "P@1     87.20", "P@3     0.5000"],
        )

    def test_format_key_values(self):
        self.assertEqual(
            format_key_values({"a": 1, "bbb": 0.5, "name": "x"}),
            "a     1\nbbb   0.5000\nname  x",
        )
        self.assertEqual(format_key_values({}), "")


class TestTrainingLogger(unittest.TestCase):
    """Test cases for TrainingLogger."""

    def setUp(self):
        """Set up test fixtures."""
        self.cfg = SimpleNamespace(
            n_trees=2, k=3, n_leaf=5, n_s=100, proj_dx=64, proj_dy=32, master_seed=1
        )

    def test_training_start(self):
        with self.assertLogs(LOGGER_NAME, level="INFO") as logs:
            TrainingLogger().log_training_start(40, 20, 10, self.cfg, threads=4)
        self.assertIn("Training 2 tree(s) on 40 instances", logs.output[0])
        self.assertIn("proj=64x32", logs.output[1])

    def test_ok_and_fail_tags(self):
        training = TrainingLogger()
        with self.assertLogs(LOGGER_NAME, level="INFO") as logs:
            training.log_model_saved("forest.xmlf", 2048)
            training.log_failure("master: timed out")
        self.assertIn("[OK] Model saved to forest.xmlf (2.0 KB)", logs.output[0])
        self.assertTrue(logs.output[1].startswith("ERROR"))
        self.assertIn("[FAIL] master: timed out", logs.output[1])

    def test_quiet_suppresses_progress_only(self):
        log = Mock()
        training = TrainingLogger(verbose=False, log=log)
        training.log_forest_done(3, 1.0)
        training.log_tree_done(0, SimpleNamespace(node_count=3, leaf_count=2, depth=1))
        log.info.assert_not_called()
        training.log_send_retry(1, 2, RuntimeError("refused"))
        log.warning.assert_called_once()
        self.assertIn("[WARN] Worker 1", log.warning.call_args[0][0])

    def test_repeated_report_is_a_warning(self):
        log = Mock()
        TrainingLogger(verbose=False, log=log).log_repeated_report(2)
        log.warning.assert_called_once()
        self.assertIn("[WARN] Master: worker 2 resent", log.warning.call_args[0][0])


class TestConfigureLogging(unittest.TestCase):
    """Test cases for configure_logging."""

    def setUp(self):
        """Set up test fixtures."""
        self.logger = logging.getLogger(LOGGER_NAME)
        self.level = self.logger.level

    def tearDown(self):
        """Clean up test fixtures."""
        self.logger.setLevel(self.level)

    def test_handler_added_once(self):
        configure_logging()
        count = len(self.logger.handlers)
        configure_logging(verbose=False)
        self.assertEqual(len(self.logger.handlers), count)
        self.assertEqual(self.logger.level, logging.WARNING)
        configure_logging(verbose=True)
        self.assertEqual(self.logger.level, logging.INFO)


if __name__ == "__main__":
    unittest.main()
