import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_field
from rnls.errors import NumericalError, ValidationError
from rnls.fields import (
    Field2,
    Grid,
    OrbitMetric,
    action,
    apply_J,
    apply_gauge,
    charge,
    cubic,
    energy,
    h_inner,
    l2_norm2,
    orbital_distance,
    read_snapshot,
    tail_mass,
    translate,
    write_snapshot,
    x_norm,
)
from rnls.model_core import CouplingParams

P = CouplingParams(1.0, 0.8)


@pytest.fixture(scope="module")
def semi(phi1):
    z = np.zeros(phi1.grid.shape)
    return Field2(z, phi1.values, phi1.grid)


def test_grid_validation():
    for bad in [(4, 128, 10.0), (1, 100, 10.0), (1, 32, 10.0), (1, 128, -1.0)]:
        with pytest.raises(ValidationError):
            Grid(*bad)
    g = Grid(2, 64, 20.0)
    assert g.h * g.n == g.L and g.shape == (64, 64)


def test_fft_round_trip(grid1):
    rng = np.random.default_rng(0)
    u = rng.standard_normal(grid1.shape) + 1j * rng.standard_normal(grid1.shape)
    back = grid1.ifft(grid1.fft(u))
    assert np.linalg.norm(back - u) / np.linalg.norm(u) < 1e-13


def test_field_rejects_nan(grid1):
    u = np.zeros(grid1.shape)
    u[3] = np.nan
    with pytest.raises(NumericalError):
        Field2(u, np.zeros(grid1.shape), grid1)


def test_zero_field_functionals(grid1):
    z = Field2.zeros(grid1)
    assert energy(z, P) == 0 and charge(z) == 0
    rep = action(z, P, 1.0)
    assert all(v == 0 for v in rep.as_dict().values())


def test_soliton_energy_and_charge(semi, phi1):
    # ||phi'||^2 = 2.25 * 2 * int sech^4 tanh^2 = 1.2, ||phi||^3_3 = 7.2
    assert energy(semi, P) == pytest.approx(0.5 * 1.2 - 7.2 / 3, rel=1e-12)
    assert charge(semi) == pytest.approx(3.0, rel=1e-12)
    flipped = Field2(phi1.values, np.zeros(phi1.grid.shape), phi1.grid)
    assert charge(flipped) == pytest.approx(3.0, rel=1e-12)


def test_action_on_nehari(semi, phi1):
    rep = action(semi, P, 1.0)
    assert rep.action == pytest.approx(1.2, rel=1e-12)
    assert abs(rep.nehari) < 1e-10
    half = Field2(0.5 * phi1.values, 0.5 * phi1.values, phi1.grid)
    rep = action(half, CouplingParams(0.0, 2.0), 1.0)
    assert abs(rep.nehari) < 1e-10
    assert rep.action == pytest.approx(0.6, rel=1e-12)
    assert rep.action == pytest.approx(rep.xnorm2 / 6, rel=1e-8)


def test_action_rejects_bad_omega(semi):
    with pytest.raises(ValidationError):
        action(semi, P, 0.0)


def test_functional_identities_random(grid1):
    rng = np.random.default_rng(1)
    for _ in range(5):
        f = smooth_field(grid1, rng)
        r = action(f, P, 1.3)
        assert r.action == pytest.approx(r.energy + 1.3 * r.charge, rel=1e-12)
        assert r.action == pytest.approx(r.xnorm2 / 2 - r.cubic / 3, rel=1e-12)
        assert r.nehari == pytest.approx(r.xnorm2 - r.cubic, rel=1e-12, abs=1e-12)


def test_cubic_term_dropout(grid1):
    f = smooth_field(grid1, np.random.default_rng(2))
    assert cubic(f, CouplingParams(0.0, 1e-300)) == pytest.approx(
        np.sum(np.abs(f.u2) ** 3) * grid1.dV, rel=1e-14
    )


def test_gauge_examples(phi1):
    f = Field2(phi1.values, phi1.values, phi1.grid)
    assert apply_gauge(f, 0.0).u1 == pytest.approx(f.u1)
    g = apply_gauge(f, math.pi)
    np.testing.assert_allclose(g.u1, -phi1.values, atol=1e-15)
    np.testing.assert_allclose(g.u2, phi1.values, atol=1e-15)
    assert charge(apply_gauge(f, 0.3)) == pytest.approx(charge(f), rel=1e-14)


def test_J_properties(grid1):
    rng = np.random.default_rng(3)
    u, v = smooth_field(grid1, rng), smooth_field(grid1, rng)
    JJ = apply_J(apply_J(u))
    np.testing.assert_allclose(JJ.u1, -u.u1)
    np.testing.assert_allclose(JJ.u2, -4 * u.u2)
    a, b = h_inner(apply_J(u), v), -h_inner(u, apply_J(v))
    assert abs(a - b) <= 1e-13 * max(1.0, abs(a))


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(-20, 20), st.integers(0, 1000))
def test_invariance_under_symmetries(theta, y, seed):
    grid = Grid(1, 256, 40.0)
    f = smooth_field(grid, np.random.default_rng(seed))
    g = apply_gauge(translate(f, y), theta)
    for fn in (lambda h: energy(h, P), charge, lambda h: cubic(h, P), lambda h: action(h, P, 1.0).nehari):
        a, b = fn(f), fn(g)
        assert abs(a - b) <= 1e-11 * max(abs(a), 1e-3)


def test_translate_identities(grid1):
    f = smooth_field(grid1, np.random.default_rng(4))
    np.testing.assert_allclose(translate(f, 0.0).u1, f.u1, atol=1e-14)
    np.testing.assert_allclose(translate(f, grid1.L).u1, f.u1, atol=1e-12)
    assert energy(translate(f, 1.7), P) == pytest.approx(energy(f, P), rel=1e-11)


def test_orbital_distance_recovers_orbit_member(phi1):
    base = Field2(0.74 * phi1.values, 0.32 * phi1.values, phi1.grid)
    rng = np.random.default_rng(5)
    m = OrbitMetric(base)
    for theta, y in [(1.234, 2.5)] + [(rng.uniform(0, 2 * math.pi), rng.uniform(-10, 10)) for _ in range(19)]:
        d, th, ys = m.distance(apply_gauge(translate(base, y), theta))
        assert d <= 1e-9
        # G(theta) tau_y is determined mod pi for theta only up to the u1 sign; here u1 != 0
        assert abs(math.remainder(th - theta, 2 * math.pi)) < 1e-6
        assert abs(ys[0] - y) < 1e-6


def test_orbital_distance_bounds(phi1):
    g = phi1.grid
    base = Field2(np.zeros(g.shape), phi1.values, g)
    d, _, _ = orbital_distance(Field2.zeros(g), base)
    assert d == pytest.approx(x_norm(base), rel=1e-12)
    # odd perturbation of an even profile is orthogonal to the gauge tangent
    w = Field2(np.zeros(g.shape), phi1.values * np.tanh(g.x1d), g)
    w = w * (1.0 / x_norm(w))
    d, _, _ = orbital_distance(base + w * 1e-3, base)
    assert d <= 1e-3 + 1e-12


def test_tail_mass(phi1):
    f = Field2(phi1.values, phi1.values, phi1.grid)
    assert tail_mass(f) < 1e-12
    wide = Field2(np.ones(phi1.grid.shape), np.zeros(phi1.grid.shape), phi1.grid)
    assert tail_mass(wide) > 0.1


def test_snapshot_round_trip(tmp_path, grid1):
    f = smooth_field(grid1, np.random.default_rng(6))
    path = write_snapshot(tmp_path / "f.dat", f, 1.5, P, time=2.25)
    g, meta = read_snapshot(path)
    assert np.array_equal(g.u1, f.u1) and np.array_equal(g.u2, f.u2)
    assert meta["omega"] == 1.5 and meta["time"] == 2.25 and meta["kappa"] == 1.0
    raw = path.read_bytes()
    assert raw[:4] == b"RNLS"
    (tmp_path / "bad.dat").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValidationError):
        read_snapshot(tmp_path / "bad.dat")
    (tmp_path / "short.dat").write_bytes(raw[:-8])
    with pytest.raises(ValidationError):
        read_snapshot(tmp_path / "short.dat")


def test_snapshot_layout(tmp_path):
    g = Grid(1, 64, 10.0)
    u1 = np.arange(64) + 1j * np.arange(64, 128)
    f = Field2(u1, np.zeros(64), g)
    raw = write_snapshot(tmp_path / "f.dat", f, 1.0, P).read_bytes()
    body = np.frombuffer(raw[-2 * 64 * 16:], dtype="<f8")
    assert body[0] == 0.0 and body[1] == 64.0 and body[2] == 1.0  # (re, im) interleaved
