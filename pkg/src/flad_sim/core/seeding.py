"""Labeled derivation of 64-bit seeds from one root seed."""

from __future__ import annotations

from hashlib import sha256

import numpy as np

U64_MAX = 2**64 - 1


def derive_seed(root: int, *labels: object) -> int:
    """Return a 64-bit seed for `root` scoped by `labels`.

    The result depends only on the root and the label values, never on call order,
    so clients and repetitions can be evaluated in any order.
    """
    if root < 0 or root > U64_MAX:
        raise ValueError(f"root seed must be an unsigned 64-bit integer, got {root}")
    payload = "/".join([str(root), *(str(label) for label in labels)])
    digest = sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(root: int, *labels: object) -> np.random.Generator:
    """Build a numpy generator seeded from `derive_seed(root, *labels)`."""
    return np.random.default_rng(derive_seed(root, *labels))
