"""Domain types and the distance parameterization shared by all modules.

Units are millimetres and picoseconds throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DegeneratePair, NoPhysicalDepth


def _vec3(p) -> tuple[float, float, float]:
    vals = tuple(float(x) for x in p)
    if len(vals) != 3:
        raise ConfigurationError(f"expected a 3-vector, got {p!r}")
    if not all(math.isfinite(x) for x in vals):
        raise ConfigurationError(f"non-finite coordinate in {p!r}")
    return vals  # type: ignore[return-value]


@dataclass(frozen=True)
class OpticalMedium:
    """Homogeneous half-space optical properties.

    Defaults are typical soft-tissue values at near-infrared wavelengths.
    """

    v: float = 0.219
    D: float = 1.0 / 3.0
    mu_a: float = 0.1
    beta: float = 0.5493
    lifetime: float = 1000.0

    def __post_init__(self):
        if not (self.v > 0 and self.D > 0 and self.mu_a > 0):
            raise ConfigurationError("v, D and mu_a must be strictly positive")
        if not (self.beta >= 0 and self.lifetime >= 0):
            raise ConfigurationError("beta and lifetime must be non-negative")

    @property
    def k(self) -> float:
        """Absorption rate mu_a * v (1/ps)."""
        return self.mu_a * self.v

    @property
    def vD(self) -> float:
        return self.v * self.D

    def replace(self, **changes) -> "OpticalMedium":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class SdPair:
    """One source and one detector on the boundary plane z = 0."""

    source: tuple[float, float, float]
    detector: tuple[float, float, float]

    def __post_init__(self):
        src, det = _vec3(self.source), _vec3(self.detector)
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "detector", det)
        if src[2] != 0.0 or det[2] != 0.0:
            raise ConfigurationError("source and detector must lie on z = 0")
        if src == det:
            raise DegeneratePair(f"source and detector coincide at {src}")

    @classmethod
    def centered(cls, midpoint: Sequence[float], separation: float, axis: int = 0) -> "SdPair":
        """Pair with the detector at +separation/2 and the source at -separation/2 along ``axis``."""
        off = [0.0, 0.0]
        off[axis] = separation / 2.0
        m1, m2 = float(midpoint[0]), float(midpoint[1])
        return cls(source=(m1 - off[0], m2 - off[1], 0.0), detector=(m1 + off[0], m2 + off[1], 0.0))

    @property
    def midpoint(self) -> tuple[float, float]:
        return (
            0.5 * (self.source[0] + self.detector[0]),
            0.5 * (self.source[1] + self.detector[1]),
        )

    @property
    def separation(self) -> float:
        return math.dist(self.source, self.detector)

    def swapped(self) -> "SdPair":
        return SdPair(source=self.detector, detector=self.source)


@dataclass(frozen=True)
class PointTarget:
    position: tuple[float, float, float]
    strength: float = 1.0

    def __post_init__(self):
        pos = _vec3(self.position)
        object.__setattr__(self, "position", pos)
        if not pos[2] > 0:
            raise ConfigurationError(f"target depth must be positive, got {pos[2]}")
        if not self.strength > 0:
            raise ConfigurationError("target strength must be positive")

    @property
    def depth(self) -> float:
        return self.position[2]


@dataclass(frozen=True)
class TargetSet:
    targets: tuple[PointTarget, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ts = tuple(t if isinstance(t, PointTarget) else PointTarget(tuple(t)) for t in self.targets)
        if not ts:
            raise ConfigurationError("a target set needs at least one target")
        object.__setattr__(self, "targets", ts)

    @classmethod
    def of(cls, *targets) -> "TargetSet":
        """Build from PointTargets or bare 3-vectors."""
        return cls(tuple(targets))

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)

    def __getitem__(self, i) -> PointTarget:
        return self.targets[i]

    @property
    def positions(self) -> np.ndarray:
        return np.array([t.position for t in self.targets], dtype=float)


def as_target_set(targets) -> TargetSet:
    if isinstance(targets, TargetSet):
        return targets
    if isinstance(targets, PointTarget):
        return TargetSet((targets,))
    return TargetSet(tuple(targets))


@dataclass(frozen=True)
class Roi:
    """Rectangle (x_l, x_r) x (x_b, x_t) on the boundary plane."""

    x_l: float
    x_r: float
    x_b: float
    x_t: float

    def __post_init__(self):
        if not (self.x_l < self.x_r and self.x_b < self.x_t):
            raise ConfigurationError(f"empty ROI {self}")

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_l + self.x_r), 0.5 * (self.x_b + self.x_t))

    @property
    def width(self) -> float:
        return self.x_r - self.x_l

    @property
    def height(self) -> float:
        return self.x_t - self.x_b

    def contains(self, p: Sequence[float]) -> bool:
        return self.x_l <= p[0] <= self.x_r and self.x_b <= p[1] <= self.x_t

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_l, self.x_r, self.x_b, self.x_t)


def squared_distances(pair: SdPair, position: Sequence[float]) -> tuple[float, float]:
    """(|x_d - x_c|^2, |x_s - x_c|^2)."""
    xc = position
    rd2 = sum((pair.detector[i] - xc[i]) ** 2 for i in range(3))
    rs2 = sum((pair.source[i] - xc[i]) ** 2 for i in range(3))
    return rd2, rs2


def lambda_param(pair: SdPair, target: PointTarget, medium: OpticalMedium) -> float:
    """Distance parameter sqrt((|x_d-x_c|^2 + |x_s-x_c|^2) / (2 v D))."""
    rd2, rs2 = squared_distances(pair, target.position)
    return math.sqrt((rd2 + rs2) / (2.0 * medium.vD))


def depth_from_lambda(
    lam: float, pair: SdPair, planar_location: Sequence[float], medium: OpticalMedium
) -> float:
    """Invert :func:`lambda_param` for the depth at a known planar location.

    Raises
    ------
    NoPhysicalDepth
        If ``2 v D lam^2`` does not exceed the planar part of the squared distances.
    """
    if not lam > 0:
        raise ConfigurationError("lambda must be positive")
    p1, p2 = float(planar_location[0]), float(planar_location[1])
    h_d = (pair.detector[0] - p1) ** 2 + (pair.detector[1] - p2) ** 2
    h_s = (pair.source[0] - p1) ** 2 + (pair.source[1] - p2) ** 2
    radicand = (2.0 * medium.vD * lam * lam - h_d - h_s) / 2.0
    if radicand <= 0.0:
        raise NoPhysicalDepth(
            f"lambda={lam:.6g} too small for planar location ({p1:.4g}, {p2:.4g})",
            measurement={"lambda": lam, "planar": (p1, p2), "pair": pair},
        )
    return math.sqrt(radicand)


def pairs_from(points: Iterable) -> list[SdPair]:
    return [p if isinstance(p, SdPair) else SdPair(*p) for p in points]
