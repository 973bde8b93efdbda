from __future__ import annotations

import numpy as np
import pytest

from flad_sim.core.seeding import U64_MAX, derive_seed, rng_for


def test_derive_seed_is_stable_and_label_scoped() -> None:
    first = derive_seed(2024, "client", "000_WebDDoS")
    assert first == derive_seed(2024, "client", "000_WebDDoS")
    assert first != derive_seed(2024, "client", "001_LDAP")
    assert first != derive_seed(2025, "client", "000_WebDDoS")
    assert 0 <= first <= U64_MAX


def test_derive_seed_distinguishes_label_nesting() -> None:
    assert derive_seed(1, "train", 3) != derive_seed(1, "train", 4)
    assert derive_seed(1, "train") != derive_seed(1)


def test_derive_seed_rejects_out_of_range_roots() -> None:
    with pytest.raises(ValueError, match="unsigned 64-bit"):
        derive_seed(-1)
    with pytest.raises(ValueError, match="unsigned 64-bit"):
        derive_seed(U64_MAX + 1)
    assert derive_seed(U64_MAX, "edge") >= 0


def test_rng_for_matches_derived_seed_stream() -> None:
    left = rng_for(7, "split", "Syn").integers(0, 1000, size=8)
    right = np.random.default_rng(derive_seed(7, "split", "Syn")).integers(0, 1000, size=8)
    assert np.array_equal(left, right)
