from unittest import TestCase

from nbvae.util import NOT_SET, as_bool, as_list, is_sequence, merge_dicts


class TestAsBool(TestCase):
    def test_accepted_values(self):
        self.assertTrue(as_bool("1"))
        self.assertTrue(as_bool("TRUE"))
        self.assertFalse(as_bool("0"))
        self.assertFalse(as_bool("false"))

    def test_rejected_values(self):
        self.assertRaises(ValueError, as_bool, "yes")
        self.assertRaises(ValueError, as_bool, "")


class TestAsList(TestCase):
    def test_split(self):
        self.assertEqual(as_list("a, b,c"), ["a", "b", "c"])
        self.assertEqual(as_list("  "), [])
        self.assertEqual(as_list("a | b", sep="|", strip=False), ["a ", " b"])


class TestMergeDicts(TestCase):
    def test_nested(self):
        a = {"train": {"seed": 1, "patience": 2}, "task": "text"}
        b = {"train": {"seed": 3}}
        merged = merge_dicts(a, None, b)
        self.assertEqual(merged, {"train": {"seed": 3, "patience": 2}, "task": "text"})
        self.assertEqual(a["train"]["seed"], 1)

    def test_later_values_are_copied(self):
        b = {"data": {"split": [0.5, 0.5]}}
        merged = merge_dicts({}, b)
        merged["data"]["split"].append(0.0)
        self.assertEqual(b["data"]["split"], [0.5, 0.5])


class TestMisc(TestCase):
    def test_not_set_is_falsy(self):
        self.assertFalse(NOT_SET)

    def test_is_sequence(self):
        self.assertTrue(is_sequence([1]))
        self.assertTrue(is_sequence((1,)))
        self.assertFalse(is_sequence("abc"))
