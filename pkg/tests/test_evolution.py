import csv
import math

import numpy as np
import pytest

from conftest import smooth_field
from rnls.errors import ValidationError
from rnls.evolution import (
    EvolutionConfig,
    Verdict,
    evolve,
    growth_rate,
    phase_track,
    stability_probe,
    step,
)
from rnls.fields import Field2, Grid, apply_gauge, x_norm
from rnls.ground_state import branch_state
from rnls.model_core import CouplingParams, get_branch, semitrivial_point

P = CouplingParams(0.5, 0.8)


@pytest.fixture(scope="module")
def grid_small():
    return Grid(1, 256, 40.0)


def test_config_validation():
    with pytest.raises(ValidationError):
        EvolutionConfig(dt=0.0)
    with pytest.raises(ValidationError):
        EvolutionConfig(t_final=-1.0)
    with pytest.raises(ValidationError):
        EvolutionConfig(monitor_stride=0)
    with pytest.raises(ValidationError):
        EvolutionConfig(dt=0.02).check_omega(1.0)
    EvolutionConfig(dt=0.0025).check_omega(4.0)
    assert EvolutionConfig(dt=1e-3, t_final=2.0).n_steps == 2000


def test_zero_field(grid_small):
    z = Field2(np.zeros(grid_small.shape, complex), np.zeros(grid_small.shape, complex), grid_small)
    out = step(z, EvolutionConfig(), P)
    assert np.all(out.u1 == 0) and np.all(out.u2 == 0)


def test_linear_plane_wave(grid_small):
    g = grid_small
    k = 2 * np.pi * 3 / g.L
    dt = 0.01
    f = Field2(np.exp(1j * k * g.x1d), np.exp(1j * k * g.x1d), g)
    out = step(f, EvolutionConfig(dt=dt), P, nonlinear=False)
    assert np.max(np.abs(out.u1 - np.exp(-1j * k**2 * dt) * f.u1)) < 1e-13
    assert np.max(np.abs(out.u2 - np.exp(-2j * k**2 * dt) * f.u2)) < 1e-13


def test_standing_wave_short(phi1):
    p = CouplingParams(1, 0.8)
    state = branch_state(get_branch(p, "plus_minus"), phi1, p)
    cfg = EvolutionConfig(dt=5e-4, t_final=1.0, monitor_stride=2000)
    s = evolve(state, cfg, p)
    err = x_norm(s.final - apply_gauge(state, 1.0))
    assert err < 1e-6
    th, res = phase_track([s.final], state)
    assert th[0] == pytest.approx(1.0, abs=1e-6) and res[0] < 1e-6


def test_charge_conservation_and_mass_exchange(grid1):
    f = smooth_field(grid1, np.random.default_rng(5))
    cfg = EvolutionConfig(dt=1e-3, t_final=2.0, monitor_stride=200)
    s = evolve(f, cfg, P)
    assert s.drift("charge") <= 1e-10
    m1 = np.asarray(s.mass1)
    assert np.max(np.abs(m1 - m1[0])) > 1e-4  # the coupling moves mass between components
    total = m1 + np.asarray(s.mass2)
    assert np.max(np.abs(total - total[0])) / total[0] <= 1e-10


def test_energy_error_is_second_order(grid1):
    f = smooth_field(grid1, np.random.default_rng(5))
    drift = lambda dt: evolve(f, EvolutionConfig(dt=dt, t_final=1.0, monitor_stride=int(0.1 / dt)), P).drift("energy")
    assert drift(1e-3) / drift(5e-4) == pytest.approx(4.0, rel=0.2)


def test_standing_wave_energy_budget(phi1):
    state = branch_state(semitrivial_point(P), phi1, P)
    s = evolve(state, EvolutionConfig(dt=1e-3, t_final=2.0, monitor_stride=500), P)
    assert s.drift("energy") <= 1e-8 and s.drift("charge") <= 1e-10


def test_splitting_order(grid_small):
    f = smooth_field(grid_small, np.random.default_rng(2))
    T = 0.5
    run = lambda dt: evolve(f, EvolutionConfig(dt=dt, t_final=T, monitor_stride=10**6), P).final
    ref = run(0.01 / 8)
    e1 = x_norm(run(0.01) - ref)
    e2 = x_norm(run(0.005) - ref)
    assert e1 / e2 == pytest.approx(4.0, rel=0.2)


def test_gauge_covariance(grid_small):
    f = smooth_field(grid_small, np.random.default_rng(3))
    cfg = EvolutionConfig(dt=1e-3, t_final=1.0, monitor_stride=10**6)
    a = evolve(apply_gauge(f, 0.7), cfg, P).final
    b = apply_gauge(evolve(f, cfg, P).final, 0.7)
    assert x_norm(a - b) <= 1e-10


def test_time_reversal(grid_small):
    f = smooth_field(grid_small, np.random.default_rng(4))
    g = step(step(f, EvolutionConfig(dt=1e-3), P), EvolutionConfig(dt=-1e-3), P)
    assert x_norm(g - f) <= 1e-10


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_abort_returns_partial(grid_small):
    g = grid_small
    f = Field2(np.full(g.shape, 1e200 + 0j), np.zeros(g.shape, complex), g)
    s = evolve(f, EvolutionConfig(dt=1e-3, t_final=0.01, monitor_stride=1), CouplingParams(1, 1))
    assert s.aborted and s.abort_reason == "nan_abort"
    assert s.last_good_time == s.times[-1]
    assert len(s.times) >= 1


def test_csv_format(tmp_path, grid_small, phi1):
    g = grid_small
    f = smooth_field(g, np.random.default_rng(0))
    s = evolve(f, EvolutionConfig(dt=1e-3, t_final=0.01, monitor_stride=5), P, reference=f)
    path = tmp_path / "s.csv"
    s.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["time", "energy", "charge", "mass1", "mass2", "orbital_dist", "theta_track"]
    assert len(rows) == 4  # header + t = 0, 0.005, 0.01
    for i, row in enumerate(rows[1:]):
        vals = [float(v) for v in row]
        assert vals[1] == s.energy[i]  # 17 significant digits round-trip exactly
    s2 = evolve(f, EvolutionConfig(dt=1e-3, t_final=0.01, monitor_stride=5), P)
    s2.write_csv(path)
    assert open(path).read().splitlines()[1].endswith(",,")


def test_phase_track_static(phi1):
    state = branch_state(semitrivial_point(P), phi1, P)
    th, res = phase_track([state, apply_gauge(state, 2.0)], state)
    assert th[0] == pytest.approx(0.0, abs=1e-12) or th[0] == pytest.approx(2 * np.pi, abs=1e-12)
    assert res[0] < 1e-12
    # the semitrivial state only sees e^{2 i theta}: theta is defined modulo pi
    assert np.mod(th[1], np.pi) == pytest.approx(2.0, abs=1e-9)
    assert res[1] < 1e-10


def test_probe_rejects_delta(phi1):
    with pytest.raises(ValidationError):
        stability_probe(None, P, phi1, delta=0.05)
    with pytest.raises(ValidationError):
        stability_probe(None, P, phi1, delta=1e-5)


def test_probe_unstable_semitrivial_short(phi1):
    p = CouplingParams(0.5, 1.5)
    v = stability_probe(None, p, phi1, delta=1e-3, claim="unstable", seed=1)
    assert v.verdict is Verdict.UNSTABLE
    assert v.max_dist >= 10 * v.perturbation_size
    assert v.growth_time is not None and v.growth_time < 50
    rate = growth_rate(v.series, 2 * v.perturbation_size, 8 * v.perturbation_size)
    assert rate is not None and rate > 0
    d = v.as_dict()
    assert d["verdict"] == "unstable_growth" and d["thresholds"]["growth_factor"] == 10


def test_probe_stable_branch_short(phi1):
    p = CouplingParams(1, 0.8)
    cfg = EvolutionConfig(dt=0.01, t_final=20.0, monitor_stride=10)
    v = stability_probe(get_branch(p, "plus_minus"), p, phi1, delta=1e-3, cfg=cfg, seed=2)
    assert v.verdict is Verdict.STABLE
    assert v.max_dist <= 3 * v.perturbation_size
    assert not v.shift_flag


def test_psi_direction_size(phi1):
    p = CouplingParams(-1, 1)
    cfg = EvolutionConfig(dt=0.01, t_final=0.1, monitor_stride=10)
    v = stability_probe(None, p, phi1, delta=1e-3, direction="psi_first_component", cfg=cfg)
    # ||(phi,0)||_X / ||phi||_L2 = sqrt(1 + ||phi'||^2/||phi||^2) = sqrt(1.2)
    assert v.perturbation_size == pytest.approx(1e-3 * math.sqrt(1.2), rel=1e-8)
