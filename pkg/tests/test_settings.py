import json
import os
import tempfile
from unittest import TestCase

from nbvae.exc import ConfigurationError
from nbvae.settings import (
    DEFAULT_SETTINGS,
    convert_setting,
    get_setting,
    read_config,
    resolve_settings,
    set_setting,
)


class TestConvertSetting(TestCase):
    def test_strings(self):
        self.assertEqual(convert_setting("train.seed", "7"), 7)
        self.assertEqual(convert_setting("train.learning_rate", "0.01"), 0.01)
        self.assertIs(convert_setting("model.shared_decoder", "false"), False)
        self.assertEqual(convert_setting("model.encoder_layers", "128, 64"), [128, 64])
        self.assertIsNone(convert_setting("model.decoder_layers", "none"))
        self.assertIsNone(convert_setting("data.validation", ""))

    def test_ints_accepted_as_floats(self):
        self.assertEqual(convert_setting("train.beta_max", 1), 1.0)
        self.assertIsInstance(convert_setting("train.beta_max", 1), float)

    def test_wrong_types(self):
        self.assertRaises(ConfigurationError, convert_setting, "train.seed", 1.5)
        self.assertRaises(ConfigurationError, convert_setting, "train.seed", True)
        self.assertRaises(ConfigurationError, convert_setting, "train.seed", "x")
        self.assertRaises(ConfigurationError, convert_setting, "task", None)
        self.assertRaises(ConfigurationError, convert_setting, "data.split", 0.8)

    def test_unknown_name(self):
        with self.assertRaises(ConfigurationError) as context:
            convert_setting("train.momentum", 0.9)
        self.assertIn("train.momentum", str(context.exception))


class TestGetSetSetting(TestCase):
    def test_default_from_defaults(self):
        self.assertEqual(get_setting({}, "model.latent_dim"), 64)
        self.assertEqual(get_setting({}, "model.latent_dim", 8), 8)

    def test_set_creates_sections(self):
        settings = {}
        self.assertEqual(set_setting(settings, "train.patience", "3"), 3)
        self.assertEqual(settings, {"train": {"patience": 3}})
        self.assertEqual(get_setting(settings, "train.patience"), 3)


class TestResolveSettings(TestCase):
    def test_defaults(self):
        settings = resolve_settings()
        self.assertEqual(settings["model"], DEFAULT_SETTINGS["model"])
        self.assertIsNot(settings["model"], DEFAULT_SETTINGS["model"])

    def test_task_defaults(self):
        settings = resolve_settings({"task": "cf"})
        self.assertEqual(settings["data"]["format"], "binary")
        self.assertEqual(settings["train"]["beta_max"], 0.2)
        self.assertEqual(settings["train"]["validation_metric"], "ndcg@10")
        multilabel = resolve_settings(overrides={"task": "multilabel"})
        self.assertEqual(multilabel["model"]["variant"], "nbvae_c")

    def test_precedence(self):
        config = {"task": "cf", "train": {"beta_max": 0.5, "seed": 1}}
        settings = resolve_settings(config, {"train.seed": "9"})
        self.assertEqual(settings["train"]["beta_max"], 0.5)
        self.assertEqual(settings["train"]["seed"], 9)

    def test_unknown_key_names_the_key(self):
        with self.assertRaises(ConfigurationError) as context:
            resolve_settings({"model": {"hidden": 3}})
        self.assertIn("model.hidden", str(context.exception))
        self.assertEqual(context.exception.exit_code, 2)

    def test_unknown_task(self):
        self.assertRaises(ConfigurationError, resolve_settings, {"task": "images"})

    def test_bad_value_in_config(self):
        with self.assertRaises(ConfigurationError) as context:
            resolve_settings({"train": {"batch_size": "big"}})
        self.assertIn("train.batch_size", str(context.exception))

    def test_section_must_be_object(self):
        self.assertRaises(ConfigurationError, resolve_settings, {"train": 3})


class TestReadConfig(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)
        self.path = os.path.join(self.directory.name, "config.json")

    def test_read(self):
        with open(self.path, "w") as fp:
            json.dump({"model": {"variant": "nbvae_dm"}}, fp)
        self.assertEqual(read_config(self.path), {"model": {"variant": "nbvae_dm"}})

    def test_missing(self):
        with self.assertRaises(ConfigurationError) as context:
            read_config(self.path)
        self.assertIn(self.path, str(context.exception))

    def test_invalid_json(self):
        with open(self.path, "w") as fp:
            fp.write("{model: }")
        self.assertRaises(ConfigurationError, read_config, self.path)
