"""Deterministic key-derived RNG streams."""
import numpy as np

from sfodkit.rng import child_rng, derive_int


def test_derive_int_frozen_values():
    # frozen: first 8 bytes of sha256("0\x1fworld") little-endian, etc.
    assert derive_int("0", "world") == 10614982894661656993
    assert derive_int("7") == 10271071260543353465
    assert derive_int("0", "adapt-weak", "3", "5") == 11777296557182631183


def test_keys_stringified():
    assert derive_int(0, "world") == derive_int("0", "world")
    assert derive_int(7) == derive_int("7")


def test_key_separation():
    # joining with a separator keeps ("ab","c") and ("a","bc") apart
    assert derive_int("ab", "c") != derive_int("a", "bc")
    assert derive_int("x", "y") != derive_int("x") != derive_int("y")


def test_child_rng_reproducible_and_independent():
    a = child_rng(3, "stream").standard_normal(5)
    b = child_rng(3, "stream").standard_normal(5)
    c = child_rng(3, "other").standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
