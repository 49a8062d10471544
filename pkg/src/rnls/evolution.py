"""Strang-split pseudospectral time stepping and stability probes."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .errors import NumericalError, ValidationError
from .fields import Field2, OrbitMetric, apply_J, charge, energy, l2_norm2, x_norm
from .ground_state import ScalarProfile, branch_state
from .model_core import BranchPoint, CouplingParams, semitrivial_point, validate_branch_point

GROWTH_FACTOR = 10.0
BOUNDED_FACTOR = 3.0
STABLE_HORIZON = 100.0
UNSTABLE_HORIZON = 50.0


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 1e-3
    t_final: float = 1.0
    nonlinear_substeps: int = 1
    monitor_stride: int = 100
    dealias: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt != 0.0):
            raise ValidationError(f"dt must be finite and nonzero, got {self.dt}")
        if not (math.isfinite(self.t_final) and self.t_final > 0):
            raise ValidationError(f"t_final must be positive, got {self.t_final}")
        if self.nonlinear_substeps < 1:
            raise ValidationError("nonlinear_substeps must be >= 1")
        if self.monitor_stride < 1:
            raise ValidationError("monitor_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / abs(self.dt)))

    def check_omega(self, omega: float) -> None:
        """Enforce the default splitting-accuracy ceiling dt <= 0.01 / omega."""
        if abs(self.dt) > 0.01 / omega * (1 + 1e-12):
            raise ValidationError(f"dt={self.dt} exceeds 0.01/omega={0.01 / omega}")

    def as_dict(self):
        return asdict(self)


class Verdict(str, Enum):
    STABLE = "stable_bounded"
    UNSTABLE = "unstable_growth"
    INCONCLUSIVE = "inconclusive"


# ---------------------------------------------------------------------------
# stepping


def _nl_rhs(u1, u2, kappa, gamma):
    d1 = 1j * (kappa * np.abs(u1) * u1 + gamma * np.conj(u1) * u2)
    d2 = 1j * (2.0 * np.abs(u2) * u2 + gamma * u1 * u1)
    return d1, d2


def _nonlinear_flow(u1, u2, p: CouplingParams, tau: float, substeps: int):
    """Pointwise RK4 for u1' = i(k|u1|u1 + g conj(u1) u2), u2' = i(2|u2|u2 + g u1^2)."""
    h = tau / substeps
    k, g = p.kappa, p.gamma
    for _ in range(substeps):
        a1, a2 = _nl_rhs(u1, u2, k, g)
        b1, b2 = _nl_rhs(u1 + 0.5 * h * a1, u2 + 0.5 * h * a2, k, g)
        c1, c2 = _nl_rhs(u1 + 0.5 * h * b1, u2 + 0.5 * h * b2, k, g)
        d1, d2 = _nl_rhs(u1 + h * c1, u2 + h * c2, k, g)
        u1 = u1 + (h / 6.0) * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
        u2 = u2 + (h / 6.0) * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
    return u1, u2


class _Propagator:
    """Cached half-step linear multipliers for one grid and dt."""

    def __init__(self, grid, dt: float, dealias: bool):
        k2 = grid.k2
        self.grid = grid
        self.e1 = np.exp(-1j * k2 * dt / 2.0)
        self.e2 = np.exp(-2j * k2 * dt / 2.0)
        if dealias:
            m = grid.dealias_mask
            self.e1 = self.e1 * m
            self.e2 = self.e2 * m

    def half(self, u1, u2):
        g = self.grid
        return g.ifft(self.e1 * g.fft(u1)), g.ifft(self.e2 * g.fft(u2))


def _strang(u1, u2, prop: _Propagator, p, dt, substeps, nonlinear=True):
    u1, u2 = prop.half(u1, u2)
    if nonlinear:
        u1, u2 = _nonlinear_flow(u1, u2, p, dt, substeps)
    return prop.half(u1, u2)


def step(f: Field2, cfg: EvolutionConfig, p: CouplingParams, nonlinear: bool = True) -> Field2:
    """One Strang step of size cfg.dt (negative dt runs backward).

    `nonlinear=False` drops the cubic terms, leaving the exact linear propagator.
    """
    prop = _Propagator(f.grid, cfg.dt, cfg.dealias)
    u1, u2 = _strang(f.u1, f.u2, prop, p, cfg.dt, cfg.nonlinear_substeps, nonlinear)
    if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))):
        raise NumericalError("non-finite values after one step", last_good_time=0.0)
    return Field2(u1, u2, f.grid)


@dataclass
class TrajectorySeries:
    times: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    charge: list = field(default_factory=list)
    mass1: list = field(default_factory=list)
    mass2: list = field(default_factory=list)
    orbital_dist: list = field(default_factory=list)
    theta_track: list = field(default_factory=list)
    max_shift: float = 0.0  # largest |y*| seen by the orbit alignment
    aborted: bool = False
    abort_reason: str = ""
    last_good_time: float | None = None
    final: Field2 | None = None

    COLUMNS = ("time", "energy", "charge", "mass1", "mass2", "orbital_dist", "theta_track")

    def arrays(self) -> dict:
        return {
            "time": np.asarray(self.times),
            "energy": np.asarray(self.energy),
            "charge": np.asarray(self.charge),
            "mass1": np.asarray(self.mass1),
            "mass2": np.asarray(self.mass2),
            "orbital_dist": np.asarray(self.orbital_dist),
            "theta_track": np.asarray(self.theta_track),
        }

    def drift(self, name: str) -> float:
        """max_t |q(t) - q(0)| / |q(0)| for q = energy or charge."""
        a = np.asarray(getattr(self, name))
        return float(np.max(np.abs(a - a[0])) / abs(a[0]))

    def rows(self):
        for i, t in enumerate(self.times):
            yield (t, self.energy[i], self.charge[i], self.mass1[i], self.mass2[i],
                   self.orbital_dist[i], self.theta_track[i])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow(["" if (isinstance(v, float) and math.isnan(v)) else "%.17g" % v for v in row])


def _sample(series: TrajectorySeries, t, u1, u2, grid, p, metric):
    f = Field2(u1, u2, grid)
    series.times.append(float(t))
    series.energy.append(energy(f, p))
    series.charge.append(charge(f))
    series.mass1.append(l2_norm2(u1, grid))
    series.mass2.append(l2_norm2(u2, grid))
    if metric is not None:
        d, theta, y = metric.distance(f)
        series.max_shift = max(series.max_shift, float(np.max(np.abs(y))))
        series.orbital_dist.append(float(d))
        series.theta_track.append(float(theta))
    else:
        series.orbital_dist.append(math.nan)
        series.theta_track.append(math.nan)
    return f


def evolve(
    f: Field2,
    cfg: EvolutionConfig,
    p: CouplingParams,
    reference: Field2 | None = None,
    stop_when=None,
    nonlinear: bool = True,
) -> TrajectorySeries:
    """Step to t_final, sampling functionals every monitor_stride steps.

    stop_when(series) -> bool ends the run early after a sample. A non-finite
    state aborts the run; the series gathered so far is returned with
    aborted=True instead of raising.
    """
    grid = f.grid
    metric = OrbitMetric(reference) if reference is not None else None
    prop = _Propagator(grid, cfg.dt, cfg.dealias)
    series = TrajectorySeries()
    u1, u2 = f.u1, f.u2
    _sample(series, 0.0, u1, u2, grid, p, metric)
    last_good = (0.0, u1, u2)
    n = cfg.n_steps
    for i in range(1, n + 1):
        with np.errstate(over="ignore", invalid="ignore"):  # blow-up is caught below
            u1, u2 = _strang(u1, u2, prop, p, cfg.dt, cfg.nonlinear_substeps, nonlinear)
        if i % cfg.monitor_stride == 0 or i == n:
            t = i * cfg.dt
            if not (np.isfinite(u1).all() and np.isfinite(u2).all()):
                series.aborted = True
                series.abort_reason = "nan_abort"
                break
            _sample(series, t, u1, u2, grid, p, metric)
            last_good = (t, u1, u2)
            if stop_when is not None and stop_when(series):
                break
    series.last_good_time = last_good[0]
    series.final = Field2(last_good[1], last_good[2], grid)
    return series


def phase_track(snapshots, phi: Field2, weight: float = 1.0):
    """Gauge angle theta minimizing ||f - G(theta) phi||_X, and the residual, per snapshot.

    Translations are not optimized here: this diagnoses the standing-wave
    ansatz, where the profile does not move.
    """
    g = phi.grid
    w = g.k2 + weight
    p1, p2 = g.fft(phi.u1), g.fft(phi.u2)
    s = g.dV / g.size
    th_grid = 2.0 * np.pi * np.arange(256) / 256
    thetas, residuals = [], []
    for f in snapshots:
        c1 = s * np.sum(w * g.fft(f.u1) * np.conj(p1))
        c2 = s * np.sum(w * g.fft(f.u2) * np.conj(p2))
        F = np.real(np.exp(-1j * th_grid) * c1 + np.exp(-2j * th_grid) * c2)
        th = float(th_grid[np.argmax(F)])
        for _ in range(60):
            e1, e2 = np.exp(-1j * th), np.exp(-2j * th)
            d1 = np.real(-1j * e1 * c1 - 2j * e2 * c2)
            d2 = np.real(-e1 * c1 - 4.0 * e2 * c2)
            stp = -d1 / d2 if d2 < 0 else 1e-2 * math.copysign(1.0, d1)
            th += max(-0.5, min(0.5, stp))
            if abs(stp) < 1e-14:
                break
        th = float(np.mod(th, 2.0 * np.pi))
        thetas.append(th)
        residuals.append(x_norm(f - Field2(np.exp(1j * th) * phi.u1, np.exp(2j * th) * phi.u2, g), weight))
    return np.array(thetas), np.array(residuals)


# ---------------------------------------------------------------------------
# stability probes


class Direction(str, Enum):
    RANDOM_EVEN = "random_even"
    PSI_FIRST = "psi_first_component"
    PHASE_KICK = "phase_kick"


@dataclass
class StabilityVerdict:
    verdict: Verdict
    max_dist: float
    growth_time: float | None
    perturbation_size: float
    t_reached: float
    direction: str
    delta: float
    thresholds: dict
    max_shift: float = 0.0
    shift_flag: bool = False  # |y*| > L/4: one-period search may under-estimate the distance
    series: TrajectorySeries | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "max_dist": self.max_dist,
            "growth_time": self.growth_time,
            "perturbation_size": self.perturbation_size,
            "t_reached": self.t_reached,
            "direction": self.direction,
            "delta": self.delta,
            "thresholds": self.thresholds,
            "max_shift": self.max_shift,
            "shift_flag": self.shift_flag,
        }


def _smooth_even_bump(grid, rng):
    r2 = sum(c**2 for c in grid.coords)
    width = rng.uniform(1.0, 3.0)
    return np.exp(-0.5 * r2 / width**2)


def perturbation_direction(direction, state: Field2, phi: ScalarProfile, rng: np.random.Generator) -> Field2:
    """Unnormalized perturbation direction."""
    grid = state.grid
    direction = Direction(direction)
    if direction is Direction.PSI_FIRST:
        v = phi.values.astype(complex)
        return Field2(v, np.zeros_like(v), grid)
    if direction is Direction.RANDOM_EVEN:
        c = rng.standard_normal(4)
        z1 = complex(c[0], c[1])
        z2 = complex(c[2], c[3])
        return Field2(z1 * _smooth_even_bump(grid, rng), z2 * _smooth_even_bump(grid, rng), grid)
    # phase kick: J(w Phi) with a smooth even weight w, plus a first-component seed
    # so the semitrivial state is kicked in both components
    w = _smooth_even_bump(grid, rng)
    kick = apply_J(Field2(w * state.u1, w * state.u2, grid))
    if np.max(np.abs(state.u1)) == 0.0:
        kick = kick + Field2(1j * w * phi.values, np.zeros(grid.shape), grid)
    return kick


def stability_probe(
    bp: BranchPoint | None,
    p: CouplingParams,
    phi: ScalarProfile,
    delta: float = 1e-3,
    direction: str = "random_even",
    cfg: EvolutionConfig | None = None,
    seed: int | np.random.SeedSequence = 0,
    claim: str = "stable",
    keep_series: bool = True,
) -> StabilityVerdict:
    """Perturb Phi by delta in a normalized direction and classify the orbit distance history.

    bp=None means the semitrivial state (0, phi). The direction is normalized
    in the X norm, except psi_first_component, which is (phi, 0)/||phi||_L2.
    The default horizon is 100 for claim="stable" and 50 for claim="unstable".
    """
    if not (1e-4 <= delta <= 1e-2):
        raise ValidationError(f"delta must lie in [1e-4, 1e-2], got {delta}")
    if claim not in ("stable", "unstable"):
        raise ValidationError(f"claim must be 'stable' or 'unstable', got {claim!r}")
    if bp is None:
        bp = semitrivial_point(p)
    validate_branch_point(p, bp)
    omega = phi.omega
    if cfg is None:
        horizon = STABLE_HORIZON if claim == "stable" else UNSTABLE_HORIZON
        cfg = EvolutionConfig(dt=0.01 / omega, t_final=horizon, monitor_stride=10)
    cfg.check_omega(omega)
    state = branch_state(bp, phi)
    rng = np.random.default_rng(seed)
    d = perturbation_direction(direction, state, phi, rng)
    if Direction(direction) is Direction.PSI_FIRST:
        scale = delta / math.sqrt(l2_norm2(phi.values, phi.grid))
    else:
        scale = delta / x_norm(d)
    u0 = state + d * scale
    size = x_norm(u0 - state)

    grow = GROWTH_FACTOR * size

    def stop(series):
        return series.orbital_dist[-1] >= grow

    series = evolve(u0, cfg, p, reference=state, stop_when=stop)
    dist = np.asarray(series.orbital_dist)
    max_dist = float(np.max(dist))
    t_end = series.times[-1]
    growth_time = None
    if series.aborted:
        verdict = Verdict.INCONCLUSIVE
    elif max_dist >= grow:
        verdict = Verdict.UNSTABLE
        growth_time = float(series.times[int(np.argmax(dist >= grow))])
    elif max_dist <= BOUNDED_FACTOR * size and t_end >= cfg.t_final - 1e-9:
        verdict = Verdict.STABLE
    else:
        verdict = Verdict.INCONCLUSIVE
    return StabilityVerdict(
        verdict=verdict,
        max_dist=max_dist,
        growth_time=growth_time,
        perturbation_size=size,
        t_reached=float(t_end),
        direction=Direction(direction).value,
        delta=delta,
        thresholds={"growth_factor": GROWTH_FACTOR, "bounded_factor": BOUNDED_FACTOR},
        max_shift=series.max_shift,
        shift_flag=series.max_shift > 0.25 * phi.grid.L,
        series=series if keep_series else None,
    )


def growth_rate(series: TrajectorySeries, lo: float, hi: float) -> float | None:
    """Least-squares exponential rate of orbital_dist over the window where lo <= dist <= hi."""
    d = np.asarray(series.orbital_dist)
    t = np.asarray(series.times)
    m = (d >= lo) & (d <= hi)
    if m.sum() < 3:
        return None
    return float(np.polyfit(t[m], np.log(d[m]), 1)[0])
