import os
import tempfile
import unittest
from unittest import mock

from seplab.config import (
    USER_CONFIG_ENV,
    RunConfig,
    UserDefaults,
    load_run_config,
    load_user_defaults,
    parse_run_config,
)
from seplab.errors import DataFormatError, RejectedInputError

RUN_FILE = """
method:
  kind: trades
  beta: 3.0
  inner: {epsilon: 0.02, steps: 5, random_start: true}
network:
  hidden: [16, 8]
  dropout_rate: 0.2
epochs: 12
decay_epochs: [6]
seed: 4
attack: {epsilon: 0.02}
lipschitz: {epsilon: 0.01, steps: 3}
"""


class Config_TestCase(unittest.TestCase):
    ## Initialization

    def setUp(self):
        self.__tmp = tempfile.TemporaryDirectory()
        self.dir = self.__tmp.name

    def tearDown(self):
        self.__tmp.cleanup()

    ## Unit test

    ## RUN FILES

    def test_load_run_config(self):
        config = load_run_config(self._write("run.yml", RUN_FILE))

        train = config.train
        self.assertEqual(train.method.kind, "trades")
        self.assertEqual(train.method.params, {"beta": 3.0})
        self.assertEqual((train.method.inner.epsilon, train.method.inner.steps), (0.02, 5))
        self.assertEqual((train.hidden, train.dropout_rate), ((16, 8), 0.2))
        self.assertEqual((train.epochs, train.decay_epochs, train.seed), (12, (6,), 4))
        self.assertEqual(train.batch_size, 64)
        self.assertEqual(config.attack.epsilon, 0.02)
        self.assertEqual(config.lipschitz.steps, 3)

    def test_empty_document(self):
        config = parse_run_config(None)
        self.assertIsInstance(config, RunConfig)
        self.assertEqual(config.train.method.kind, "natural")
        self.assertIsNone(config.attack)
        self.assertIsNone(config.to_dict()["lipschitz"])

    def test_unknown_keys(self):
        for document in (
            {"epoch": 3},
            {"network": {"width": 3}},
            {"attack": {"epsilon": 0.1, "norm": "l2"}},
            {"method": {"kind": "at", "inner": {"eps": 0.1}}},
            {"method": {"kind": "natural", "beta": 1.0}},
        ):
            with self.assertRaises(RejectedInputError, msg=document):
                parse_run_config(document)

        with self.assertRaises(RejectedInputError) as ctx:
            parse_run_config({"epoch": 3})
        self.assertIn("'epoch'", str(ctx.exception))

    def test_invalid_values(self):
        with self.assertRaises(RejectedInputError):
            parse_run_config({"lr": -1.0})
        with self.assertRaises(RejectedInputError):
            parse_run_config({"network": [16]})
        with self.assertRaises(RejectedInputError):
            parse_run_config({"lipschitz": {"epsilon": 0.0}})

    def test_bad_yaml(self):
        with self.assertRaises(DataFormatError) as ctx:
            load_run_config(self._write("bad.yml", "method: [unclosed\n"))
        self.assertEqual(ctx.exception.field, "yaml")
        with self.assertRaises(DataFormatError) as ctx:
            load_run_config(self._write("list.yml", "- 1\n- 2\n"))
        self.assertEqual(ctx.exception.field, "root")

    ## USER DEFAULTS

    def test_user_defaults(self):
        path = self._write("defaults.yml", "data_dir: /data\nthreads: 8\n")
        self.assertEqual(load_user_defaults(path), UserDefaults("/data", 8))
        with mock.patch.dict(os.environ, {USER_CONFIG_ENV: path}):
            self.assertEqual(load_user_defaults().threads, 8)

    def test_missing_user_defaults(self):
        missing = os.path.join(self.dir, "absent.yml")
        with mock.patch.dict(os.environ, {USER_CONFIG_ENV: missing}):
            self.assertEqual(load_user_defaults(), UserDefaults())

    def test_bad_user_defaults(self):
        with self.assertRaises(RejectedInputError):
            load_user_defaults(self._write("defaults.yml", "cores: 8\n"))
        with self.assertRaises(DataFormatError):
            load_user_defaults(self._write("scalar.yml", "8\n"))

    ## Utils

    def _write(self, name, content):
        path = os.path.join(self.dir, name)
        with open(path, "w") as f:
            f.write(content)
        return path
