"""Hash-split random streams.

A :class:`SeedSpec` names a substream by a master seed plus a path of
``(label, index)`` pairs.  The generator for a spec is rebuilt from a BLAKE2b
digest of that path every time it is needed, so sampling is a pure function
of ``(spec, count)`` and any worker can reproduce any substream without
coordination.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

_U64 = (1 << 64) - 1
_TWO53 = float(1 << 53)


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_path: tuple[tuple[str, int], ...] = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.master_seed) <= _U64:
            raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(
            self, "stream_path", tuple((str(lab), int(idx)) for lab, idx in self.stream_path)
        )

    def split(self, label: str, index: int = 0) -> "SeedSpec":
        return split(self, label, index)

    def digest(self) -> bytes:
        h = hashlib.blake2b(digest_size=32, person=b"iwvi-lab-rng")
        h.update(struct.pack("<Q", self.master_seed))
        for label, index in self.stream_path:
            raw = label.encode("utf-8")
            # length-prefix the label so ("ab", 1) and ("a", ...) cannot collide
            h.update(struct.pack("<Q", len(raw)))
            h.update(raw)
            h.update(struct.pack("<q", index))
        return h.digest()

    def generator(self) -> np.random.Generator:
        entropy = int.from_bytes(self.digest(), "little")
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def as_dict(self) -> dict:
        return {"master_seed": self.master_seed, "stream_path": [list(p) for p in self.stream_path]}

    def __str__(self) -> str:
        path = "/".join(f"{lab}:{idx}" for lab, idx in self.stream_path)
        return f"{self.master_seed}/{path}" if path else str(self.master_seed)


def split(parent: SeedSpec, label: str, index: int = 0) -> SeedSpec:
    """Child stream identified by ``(label, index)`` under ``parent``."""
    return SeedSpec(parent.master_seed, parent.stream_path + ((str(label), int(index)),))


def _shape(count) -> tuple[int, ...]:
    shape = (int(count),) if np.isscalar(count) else tuple(int(c) for c in count)
    if any(c < 0 for c in shape):
        raise ValueError(f"count must be non-negative, got {count}")
    return shape


def uniform_open(gen: np.random.Generator, shape) -> np.ndarray:
    """Uniforms on the open interval (0, 1): 53-bit grid shifted by half a step."""
    bits = gen.integers(0, 1 << 53, size=shape, dtype=np.int64)
    return (bits + 0.5) / _TWO53


def gumbel_from_uniform(u) -> np.ndarray:
    """Inverse CDF of the standard Gumbel law, F(z) = exp(-exp(-z))."""
    return -np.log(-np.log(u))


def sample_uniform(stream: SeedSpec, count) -> np.ndarray:
    return uniform_open(stream.generator(), _shape(count))


def sample_standard_normal(stream: SeedSpec, count) -> np.ndarray:
    return stream.generator().standard_normal(_shape(count))


def sample_gumbel(stream: SeedSpec, count) -> np.ndarray:
    """Gumbel variates with density exp(-z) * exp(-exp(-z))."""
    return gumbel_from_uniform(sample_uniform(stream, count))
