"""Episode traces: append-only NDJSON in two disclosure tiers.

The live trace is what an external observer may see while an evaluation
runs: problem targets, validated actions, sensor-grid hashes, drift
marks, score samples.  It must never contain the world seed, the law
grammar, any law coefficient, the drift schedule, or a hidden action
script; `audit_live_trace` enforces that mechanically and the redaction
test feeds it the actual secrets to hunt for.

The disclosure trace is a strict superset written for post-hoc audit: it
adds the full generation spec, drifted law payloads, hidden scripts, and
periodic world snapshot hashes, which is what makes bit-exact replay
verification possible.  Neither trace contains wall-clock timestamps;
trace bytes are a pure function of the run's inputs.
"""

from __future__ import annotations

import json
import os

from .canon import canonical_dumps
from .errors import ContractViolation
from .worldgen import World

TRACE_FORMAT = 1

LIVE = "live"
DISCLOSURE = "disclosure"

#: Keys that must never appear anywhere in a live trace document.
FORBIDDEN_LIVE_KEYS = frozenset(
    {
        "seed", "grammar", "laws", "law", "terms", "coeff", "coefficients",
        "polarity_coupled", "drift_handle", "regime_times", "smooth_rate",
        "drift_levels", "hidden_actions", "scriptor_len", "p_null",
        "gen_spec", "rng", "streams",
    }
)


class TraceWriter:
    """Writes one header line then event lines, all canonical JSON."""

    def __init__(self, path: str, header: dict):
        if header.get("kind") != "header":
            raise ContractViolation("trace header must have kind 'header'")
        self.path = path
        self.mode = header.get("mode")
        if self.mode not in (LIVE, DISCLOSURE):
            raise ContractViolation("trace mode must be 'live' or 'disclosure'")
        self._fh = open(path, "w", encoding="utf-8")
        self._write(header)

    def _write(self, doc: dict) -> None:
        self._fh.write(canonical_dumps(doc))
        self._fh.write("\n")

    def event(self, doc: dict) -> None:
        if "kind" not in doc:
            raise ContractViolation("trace events need a kind")
        self._write(doc)

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def iter_trace(path: str):
    """Yield decoded lines; the first is the header."""
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ContractViolation(f"{path}:{n}: not valid JSON: {exc}") from exc


def read_trace(path: str) -> tuple[dict, list[dict]]:
    docs = list(iter_trace(path))
    if not docs or docs[0].get("kind") != "header":
        raise ContractViolation(f"{path}: missing trace header")
    return docs[0], docs[1:]


def _walk_keys(doc, found: list, trail: str) -> None:
    if isinstance(doc, dict):
        for key, value in doc.items():
            here = f"{trail}/{key}"
            if key in FORBIDDEN_LIVE_KEYS:
                found.append(here)
            _walk_keys(value, found, here)
    elif isinstance(doc, list):
        for i, value in enumerate(doc):
            _walk_keys(value, found, f"{trail}/{i}")


def secret_strings(world: World) -> list[str]:
    """Exact substrings whose appearance in a live trace is a leak.

    The seed and every law coefficient, as Python reprs; float reprs are
    long enough that an accidental collision is not a realistic worry.
    """
    secrets = [repr(world.spec.seed)]
    for law in world.laws:
        for _, coeff in law.terms:
            secrets.append(repr(coeff))
    return secrets


def audit_live_trace(path: str, secrets: list[str] | None = None) -> list[str]:
    """Scan a live trace for redaction failures.  Empty list means clean."""
    violations: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    if secrets:
        for secret in secrets:
            if len(secret) >= 8 and secret in raw:
                violations.append(f"secret value {secret!r} appears verbatim")
    for n, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        doc = json.loads(line)
        found: list[str] = []
        _walk_keys(doc, found, "")
        violations.extend(f"line {n}: forbidden key at {trail}" for trail in found)
    return violations


def flip_one_bit(path: str, out_path: str, byte_offset: int, bit: int = 0) -> None:
    """Copy a trace with a single bit flipped, for tamper-detection tests."""
    with open(path, "rb") as fh:
        data = bytearray(fh.read())
    if not 0 <= byte_offset < len(data):
        raise ContractViolation("byte_offset outside the file")
    data[byte_offset] ^= 1 << bit
    with open(out_path, "wb") as fh:
        fh.write(bytes(data))


def trace_bytes(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def same_bytes(path_a: str, path_b: str) -> bool:
    if os.path.getsize(path_a) != os.path.getsize(path_b):
        return False
    return trace_bytes(path_a) == trace_bytes(path_b)
