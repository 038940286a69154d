"""Canonical JSON encoding and hashing.

Two equal documents must always produce identical bytes: keys are sorted,
separators are fixed, floats use Python's shortest-roundtrip repr, and
non-finite numbers are rejected outright.  Every snapshot hash and trace
line in the package goes through here.
"""

from __future__ import annotations

import hashlib
import json


def canonical_dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def canonical_hash(doc) -> str:
    """Hex sha256 of the canonical encoding."""
    return hashlib.sha256(canonical_dumps(doc).encode("utf-8")).hexdigest()
