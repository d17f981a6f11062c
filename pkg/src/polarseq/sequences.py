"""Reliability sequences: the shared value type plus JSON serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SEQUENCE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ReliabilitySequence:
    """A permutation of [0, N), most reliable index first.

    The length-K prefix defines the rate-K/N information set, so one
    sequence yields a nested family of codes. provenance records how the
    order was produced (scheme name plus its parameters).
    """

    N: int
    order: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        object.__setattr__(self, "order", order)
        if self.N < 2 or self.N & (self.N - 1):
            raise ValueError("N must be a power of two >= 2")
        if sorted(order) != list(range(self.N)):
            raise ValueError("order must be a permutation of [0, N)")

    def info_set(self, K: int) -> frozenset:
        if not 1 <= K <= self.N:
            raise ValueError("K out of range")
        return frozenset(self.order[:K])

    def to_json(self) -> str:
        doc = {
            "version": SEQUENCE_FORMAT_VERSION,
            "N": self.N,
            "order": list(self.order),
            "provenance": self.provenance,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


def sequence_from_json(text: str) -> ReliabilitySequence:
    doc = json.loads(text)
    if doc.get("version") != SEQUENCE_FORMAT_VERSION:
        raise ValueError(f"unsupported sequence format version {doc.get('version')!r}")
    return ReliabilitySequence(N=int(doc["N"]), order=doc["order"],
                               provenance=dict(doc.get("provenance", {})))


def load_sequence(path) -> ReliabilitySequence:
    with open(path) as fh:
        return sequence_from_json(fh.read())
