"""Keyed, replayable random streams.

Every stream is a Philox counter-based generator whose key is derived from
``(master_seed, purpose, level, replicate)`` through ``SeedSequence`` spawn
keys, so independence is decided by the key and not by the order in which
streams are created. Every scalar draw consumes exactly one 64-bit output of
the counter, which makes ``position`` an exact replay coordinate.

Normals are produced by inversion (one uniform per normal), so a Gaussian
vector of length ``n`` is a prefix of any longer vector drawn from the same
position. Fine and coarse chains rely on that when they share innovations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

KEY_SCHEMA_VERSION = 1

_TWO_M53 = 2.0**-53
_MAX_SEED = 2**64


class Purpose(enum.IntEnum):
    """What a derived stream is used for. Part of the stream key."""

    LEVEL_PAIR = 0
    LEVEL0 = 1
    REPLICATE_ROOT = 2
    ORACLE = 3
    DATA = 4


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    purpose: Purpose
    level: int = 0
    replicate: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < _MAX_SEED:
            raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.level < 0 or self.replicate < 0:
            raise ValueError("level and replicate must be non-negative")
        object.__setattr__(self, "purpose", Purpose(self.purpose))

    def seed_sequence(self) -> np.random.SeedSequence:
        spawn_key = (KEY_SCHEMA_VERSION, int(self.purpose), int(self.level), int(self.replicate))
        return np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=spawn_key)


class RngStream:
    """A deterministic stream of scalar innovations.

    ``position`` counts scalar draws. ``(key, position)`` fully determines
    every subsequent output.
    """

    def __init__(self, key: StreamKey, position: int = 0):
        self.key = key
        self._bitgen = np.random.Philox(key.seed_sequence())
        self.position = 0
        if position:
            self.seek(position)

    def __repr__(self):
        return f"RngStream({self.key!r}, position={self.position})"

    def seek(self, position: int) -> "RngStream":
        """Move to an absolute draw position (O(1) in the distance)."""
        if position < 0:
            raise ValueError("position must be non-negative")
        self._bitgen = np.random.Philox(self.key.seed_sequence())
        # Philox emits four 64-bit words per counter increment.
        self._bitgen.advance(position // 4)
        if position % 4:
            self._bitgen.random_raw(position % 4)
        self.position = position
        return self

    def replay(self, position: int = 0) -> "RngStream":
        """A fresh stream with the same key, positioned at ``position``."""
        return RngStream(self.key, position)

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` uniforms strictly inside (0, 1)."""
        if n <= 0:
            return np.empty(0)
        raw = self._bitgen.random_raw(int(n))
        self.position += int(n)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def normals(self, n: int) -> np.ndarray:
        return ndtri(self.uniforms(n))

    def normal(self) -> float:
        return float(ndtri(self.uniform()))

    def gamma(self, shape: float) -> float:
        """Standard Gamma(shape, rate=1) variate.

        ``shape == 1`` uses the exponential inverse CDF (one uniform). Other
        shapes use the Marsaglia-Tsang squeeze/rejection method, so the
        number of draws consumed is data dependent.
        """
        if not shape > 0:
            raise ValueError(f"gamma shape must be positive, got {shape}")
        if shape == 1.0:
            return -math.log(self.uniform())
        if shape < 1.0:
            # Gamma(a) = Gamma(a + 1) * U^(1/a)
            g = self._marsaglia_tsang(shape + 1.0)
            return g * self.uniform() ** (1.0 / shape)
        return self._marsaglia_tsang(shape)

    def _marsaglia_tsang(self, shape: float) -> float:
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = 1.0 + c * x
            if v <= 0.0:
                continue
            v = v * v * v
            u = self.uniform()
            x2 = x * x
            if u < 1.0 - 0.0331 * x2 * x2:
                return d * v
            if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
                return d * v


def derive_stream(master_seed: int, purpose: Purpose | int | str, level: int = 0, replicate: int = 0) -> RngStream:
    """Stream for one ``(purpose, level, replicate)`` under ``master_seed``, at position 0."""
    if isinstance(purpose, str):
        purpose = Purpose[purpose.upper()]
    return RngStream(StreamKey(int(master_seed), Purpose(purpose), int(level), int(replicate)))


def draw_uniform(stream: RngStream) -> float:
    return stream.uniform()


def draw_gaussian_vector(stream: RngStream, n: int) -> np.ndarray:
    return stream.normals(n)


def draw_gamma(stream: RngStream, shape: float) -> float:
    return stream.gamma(shape)
