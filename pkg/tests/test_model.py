import math

import numpy as np
import pytest

from tdfdot.errors import ConfigurationError, DegeneratePair, NoPhysicalDepth
from tdfdot.model import (
    OpticalMedium,
    PointTarget,
    Roi,
    SdPair,
    TargetSet,
    depth_from_lambda,
    lambda_param,
)


def test_lambda_hand_computed(pair, target, medium):
    # |xd - xc|^2 = |xs - xc|^2 = 16 + 400; 2 v D = 0.146
    assert lambda_param(pair, target, medium) == pytest.approx(math.sqrt(832 / 0.146), rel=1e-14)
    # extended-precision value of sqrt(832 / 0.146); a quoted 75.4926 is an arithmetic slip
    assert lambda_param(pair, target, medium) == pytest.approx(75.48927166814, rel=1e-12)


def test_lambda_symmetric_pair(medium):
    L, d = 3.0, 11.0
    p = SdPair((-L, 0, 0), (L, 0, 0))
    lam = lambda_param(p, PointTarget((0, 0, d)), medium)
    assert lam == pytest.approx(math.sqrt((L * L + d * d) / medium.vD), rel=1e-14)


def test_lambda_homogeneous(medium):
    p = SdPair((1, 2, 0), (5, -1, 0))
    t = PointTarget((3, 3, 7))
    p2 = SdPair((2, 4, 0), (10, -2, 0))
    t2 = PointTarget((6, 6, 14))
    assert lambda_param(p2, t2, medium) == pytest.approx(2 * lambda_param(p, t, medium), rel=1e-14)


def test_depth_round_trip_example(pair, target, medium):
    lam = lambda_param(pair, target, medium)
    assert depth_from_lambda(lam, pair, (10, 10), medium) == pytest.approx(20.0, rel=1e-12)


def test_depth_zero_radicand_rejected(pair, medium):
    h = 16.0 + 16.0
    lam = math.sqrt(h / (2 * medium.vD))
    with pytest.raises(NoPhysicalDepth) as info:
        depth_from_lambda(lam * (1 - 1e-15), pair, (10, 10), medium)
    assert info.value.measurement["lambda"] > 0


def test_depth_constructed_radicand(medium):
    p = SdPair.centered((3.0, 4.0), 8.0)
    # h_d = h_s = 16, radicand 400 -> 2 v D lam^2 = 832
    lam = math.sqrt(832 / (2 * medium.vD))
    assert depth_from_lambda(lam, p, (3.0, 4.0), medium) == pytest.approx(20.0, rel=1e-13)


def test_round_trip_random(rng):
    worst = 0.0
    for _ in range(1000):
        m = OpticalMedium(v=rng.uniform(0.1, 0.3), D=rng.uniform(0.1, 1.0), mu_a=rng.uniform(0.01, 0.3))
        src = (*rng.uniform(-20, 20, 2), 0.0)
        det = (*rng.uniform(-20, 20, 2), 0.0)
        p = SdPair(src, det)
        pos = (*rng.uniform(-20, 20, 2), rng.uniform(0.5, 50))
        lam = lambda_param(p, PointTarget(pos), m)
        d = depth_from_lambda(lam, p, pos[:2], m)
        worst = max(worst, abs(d - pos[2]) / pos[2])
    assert worst < 1e-12


def test_lambda_minimized_at_target_midpoint(medium):
    t = PointTarget((7.0, 13.0, 20.0))
    grid = np.linspace(-3, 17, 41) + 0.0
    grid2 = np.linspace(3, 23, 41)
    lam = np.array([[lambda_param(SdPair.centered((x, y), 4.0), t, medium) for y in grid2] for x in grid])
    i, j = np.unravel_index(np.argmin(lam), lam.shape)
    assert (grid[i], grid2[j]) == (7.0, 13.0)
    assert np.sum(lam == lam.min()) == 1


@pytest.mark.parametrize("kw", [dict(v=0), dict(D=-1), dict(mu_a=0), dict(beta=-0.1), dict(lifetime=-1)])
def test_medium_invariants(kw):
    with pytest.raises(ConfigurationError):
        OpticalMedium(**kw)


def test_medium_k():
    assert OpticalMedium().k == pytest.approx(0.0219)


def test_pair_invariants():
    with pytest.raises(ConfigurationError):
        SdPair((0, 0, 1), (1, 0, 0))
    with pytest.raises(DegeneratePair):
        SdPair((1, 1, 0), (1, 1, 0))


def test_pair_centered_convention():
    p = SdPair.centered((3, 5), 2.0)
    assert p.detector == (4.0, 5.0, 0.0) and p.source == (2.0, 5.0, 0.0)
    assert p.midpoint == (3.0, 5.0) and p.separation == 2.0
    q = SdPair.centered((3, 5), 2.0, axis=1)
    assert q.detector == (3.0, 6.0, 0.0)


def test_target_invariants():
    with pytest.raises(ConfigurationError):
        PointTarget((0, 0, 0))
    with pytest.raises(ConfigurationError):
        PointTarget((0, 0, 1), strength=0)
    with pytest.raises(ConfigurationError):
        TargetSet(())


def test_roi():
    r = Roi(0, 20, 0, 10)
    assert r.center == (10, 5) and r.width == 20 and r.height == 10
    assert r.contains((20, 0)) and not r.contains((21, 0))
    with pytest.raises(ConfigurationError):
        Roi(1, 1, 0, 1)
