"""Soliton profiles, branch states and Nehari-constrained ground states."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import k0

from .errors import NumericalError, ValidationError
from .fields import (
    Field2,
    Grid,
    OrbitMetric,
    action,
    h1w_norm2,
    l2_norm2,
    l3_cubed,
    stationary_residual,
)
from .model_core import (
    BranchKind,
    BranchPoint,
    CouplingParams,
    KRegion,
    branch_points,
    classify_K,
    semitrivial_point,
    validate_branch_point,
)

RESIDUAL_TOL = 1e-8
RESIDUAL_TOL_3D = 1e-6  # n = 128 tensor grids cannot resolve the 3-D profile to 1e-8


@dataclass(frozen=True, eq=False)
class ScalarProfile:
    """Positive radial solution of -Lap phi + omega phi = phi^2 sampled on a grid.

    ``radial`` evaluates the profile at arbitrary radii when it is known
    (closed form or shooting); the spectra module uses it to resample onto
    radial finite-difference grids.
    """

    omega: float
    grid: Grid
    values: np.ndarray
    method: str
    radial: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.grid.dim

    def residual(self) -> float:
        """||-Lap phi + omega phi - phi^2||_2 / ||phi||_2 with the spectral Laplacian."""
        g, phi = self.grid, self.values
        r = -g.laplacian(phi) + self.omega * phi - phi**2
        return math.sqrt(l2_norm2(r, g) / l2_norm2(phi, g))

    def pohozaev_gap(self) -> float:
        """Relative gap between ||phi||_{H^1_omega}^2 and ||phi||_3^3 (zero for a solution)."""
        a = h1w_norm2(self.values, self.grid, self.omega)
        b = l3_cubed(self.values, self.grid)
        return abs(a - b) / b

    def l3_cubed(self) -> float:
        return l3_cubed(self.values, self.grid)

    def certify(self, tol: float = RESIDUAL_TOL) -> "ScalarProfile":
        if self.values.min() <= 0:
            raise NumericalError("profile is not positive on the grid", min=float(self.values.min()))
        res = self.residual()
        if res > tol:
            raise NumericalError(f"profile residual {res:.3e} exceeds {tol:.1e}", residual=res)
        gap = self.pohozaev_gap()
        if gap > tol:
            raise NumericalError(f"Pohozaev gap {gap:.3e} exceeds {tol:.1e}", gap=gap)
        return self


def _sech2(z):
    # 1/cosh^2 without overflow for large |z|
    e = np.exp(-2.0 * np.abs(z))
    return 4.0 * e / (1.0 + e) ** 2


def phi_closed_form_1d(omega: float, grid: Grid) -> ScalarProfile:
    """phi(x) = (3 omega / 2) sech^2(sqrt(omega) x / 2)."""
    if grid.dim != 1:
        raise ValidationError("closed-form profile exists only for dim = 1")
    if not omega > 0:
        raise ValidationError(f"omega must be > 0, got {omega}")
    s = math.sqrt(omega)

    def radial(r):
        return 1.5 * omega * _sech2(0.5 * s * np.asarray(r, dtype=float))

    return ScalarProfile(omega, grid, radial(grid.x1d), "closed_form_1d", radial)


# ---------------------------------------------------------------------------
# radial shooting (dim 2, 3)


def _shoot(a: float, dim: int, r_max: float = 40.0):
    """Integrate phi'' + (dim-1)/r phi' = phi - phi^2 from phi(0)=a (omega = 1).

    Returns ("over" | "under" | "none", solution). "over" means phi crossed
    zero, "under" means phi turned back up while positive.
    """
    r0 = 1e-6
    c = (a - a * a) / (2.0 * dim)
    y0 = [a + c * r0**2, 2.0 * c * r0]

    def rhs(r, y):
        return [y[1], -(dim - 1) / r * y[1] + y[0] - y[0] ** 2]

    def crossed(r, y):
        return y[0]

    crossed.terminal = True
    crossed.direction = -1

    def turned(r, y):
        return y[1]

    turned.terminal = True
    turned.direction = 1

    sol = solve_ivp(
        rhs,
        (r0, r_max),
        y0,
        method="DOP853",
        rtol=1e-13,
        atol=1e-16,
        events=(crossed, turned),
        dense_output=True,
    )
    if sol.t_events[0].size:
        return "over", sol
    if sol.t_events[1].size:
        return "under", sol
    return "none", sol


def _radial_unit_profile(dim: int, max_bisections: int = 200):
    """Shooting + bisection for omega = 1; returns a vectorized phi(r)."""
    lo, hi = 1.0, 60.0  # phi(0) = 1 is the constant solution -> undershoot
    if _shoot(lo, dim)[0] != "under" or _shoot(hi, dim)[0] != "over":
        raise NumericalError("shooting bracket is invalid", bracket=(lo, hi))
    it = 0
    for it in range(max_bisections):
        mid = 0.5 * (lo + hi)
        kind, _ = _shoot(mid, dim)
        if kind == "over":
            hi = mid
        else:
            lo = mid
        if hi - lo <= 4.0 * np.finfo(float).eps * hi:
            break
    else:
        raise NumericalError("shooting did not converge", bracket=(lo, hi), iterations=it)
    # Both bracket ends are accurate until roundoff growth; their average
    # departs from the decaying solution last.
    sols = [_shoot(x, dim)[1] for x in (lo, hi)]
    r_stop = min(s.t[-1] for s in sols)
    rs = np.linspace(1e-6, r_stop, 20001)
    va, vb = sols[0].sol(rs)[0], sols[1].sol(rs)[0]
    spread = np.abs(va - vb)
    mean = 0.5 * (va + vb)
    # trust the shooting solution while the two ends agree to 1e-6 relative
    ok = spread <= 1e-6 * np.abs(mean)
    j = int(np.argmin(ok)) - 1 if not ok.all() else len(rs) - 1
    r_match = float(rs[j])
    if r_match < 6.0:
        raise NumericalError("shooting solution departs too early", r_match=r_match)
    sol = sols[0]

    if dim == 2:
        tail_shape = lambda r: k0(r)  # noqa: E731
    else:
        tail_shape = lambda r: np.exp(-r) / r  # noqa: E731
    amp = float(0.5 * (sols[0].sol(r_match)[0] + sols[1].sol(r_match)[0])) / float(tail_shape(r_match))
    a_star = 0.5 * (lo + hi)

    def radial_unit(r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inner = r <= r_match
        rr = np.maximum(r[inner], 1e-6)
        out[inner] = 0.5 * (sols[0].sol(rr)[0] + sols[1].sol(rr)[0])
        small = r[inner] < 1e-6
        if small.any():
            out[inner][small] = a_star
        out[~inner] = amp * tail_shape(r[~inner])
        return out

    return radial_unit, {"phi0": a_star, "r_match": r_match, "iterations": it, "nfev": sol.nfev}


_UNIT_CACHE: dict[int, tuple] = {}


def phi_radial(omega: float, dim: int, grid: Grid, certify: bool = True) -> ScalarProfile:
    """Positive radial profile for dim 2 or 3 by shooting on phi(0).

    The omega = 1 profile is computed once per dimension and rescaled with
    phi_omega(r) = omega * phi_1(sqrt(omega) r).
    """
    if dim not in (2, 3):
        raise ValidationError("phi_radial handles dim 2 and 3")
    if grid.dim != dim:
        raise ValidationError(f"grid dim {grid.dim} != requested dim {dim}")
    if not omega > 0:
        raise ValidationError(f"omega must be > 0, got {omega}")
    if dim not in _UNIT_CACHE:
        _UNIT_CACHE[dim] = _radial_unit_profile(dim)
    unit, _info = _UNIT_CACHE[dim]
    s = math.sqrt(omega)

    def radial(r):
        return omega * unit(s * np.asarray(r, dtype=float))

    prof = ScalarProfile(omega, grid, radial(grid.radius), "shooting_radial", radial)
    if not certify:
        return prof
    return prof.certify(RESIDUAL_TOL if dim == 2 else RESIDUAL_TOL_3D)


def scalar_profile(omega: float, grid: Grid) -> ScalarProfile:
    if grid.dim == 1:
        return phi_closed_form_1d(omega, grid)
    return phi_radial(omega, grid.dim, grid)


def phi_imaginary_time(
    omega: float, grid: Grid, tol: float = 1e-10, max_iter: int = 5000
) -> ScalarProfile:
    """Independent cross-check: normalized gradient flow for the scalar profile.

    Iterates v <- v - tau (v - A^{-1} v^2) with A = -Lap + omega, rescaling
    after each step onto ||v||_{H^1_omega}^2 = ||v||_3^3.
    """
    if not omega > 0:
        raise ValidationError(f"omega must be > 0, got {omega}")
    sym = 1.0 / (grid.k2 + omega)
    v = np.exp(-0.5 * grid.radius**2 * omega)
    tau = 0.5
    for it in range(max_iter):
        t = h1w_norm2(v, grid, omega) / l3_cubed(v, grid)
        v = t * v
        grad = v - np.real(grid.ifft(sym * grid.fft(np.abs(v) * v)))
        gn = math.sqrt(h1w_norm2(grad, grid, omega))
        if gn < tol:
            break
        v = v - tau * grad
    else:
        raise NumericalError("imaginary-time iteration did not converge", grad=gn, iterations=it)
    return ScalarProfile(omega, grid, np.abs(v), "imaginary_time")


# ---------------------------------------------------------------------------
# two-component states


def branch_state(bp: BranchPoint, phi: ScalarProfile, p: CouplingParams | None = None) -> Field2:
    """(alpha phi, beta phi) on the profile's grid."""
    if p is not None:
        validate_branch_point(p, bp)
    elif bp.kind is not BranchKind.SEMITRIVIAL and (
        abs(bp.residual_line) > 1e-10 or abs(bp.residual_ellipse) > 1e-10
    ):
        raise ValidationError(f"branch point residuals too large: {bp}")
    v = phi.values.astype(complex)
    return Field2(bp.alpha * v, bp.beta * v, phi.grid)


@dataclass
class GroundStateVerdict:
    minimizer: Field2
    action_value: float
    family: str  # semitrivial_G0 | branch_G1 | both
    match_error: float
    k_region: str
    candidates: dict
    iterations: int
    grad_norm: float
    nehari_residual: float
    aligned: tuple = ()

    def summary(self) -> dict:
        return {
            "action": self.action_value,
            "family": self.family,
            "match_error": self.match_error,
            "k_region": self.k_region,
            "candidates": self.candidates,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "nehari_residual": self.nehari_residual,
        }


def _nonlinear_parts(u1, u2, p: CouplingParams):
    n1 = p.kappa * np.abs(u1) * u1 + p.gamma * np.conj(u1) * u2
    n2 = np.abs(u2) * u2 + 0.5 * p.gamma * u1**2
    return n1, n2


def _random_positive_start(grid: Grid, rng: np.random.Generator):
    c = rng.uniform(-0.25 * grid.L, 0.25 * grid.L, size=grid.dim)
    width = rng.uniform(1.0, 3.0)
    r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c))
    bump = np.exp(-0.5 * r2 / width**2)
    out = []
    for _ in range(2):
        amp = rng.uniform(0.5, 1.5)
        # smooth positive modulation, still a single hump
        mod = 1.0 + 0.1 * rng.uniform(-1, 1) * np.exp(-0.5 * r2 / (2.0 * width) ** 2)
        out.append(amp * bump * mod)
    return out[0].astype(complex), out[1].astype(complex)


def nehari_minimize(
    p: CouplingParams,
    omega: float,
    grid: Grid,
    seed: int = 0,
    tol: float = 1e-7,
    max_iter: int = 20000,
    phi: ScalarProfile | None = None,
) -> GroundStateVerdict:
    """Minimize S_omega on {K_omega = 0} by projected Sobolev-gradient descent.

    Each iteration takes a Barzilai-Borwein step along the X_omega gradient
    u - A^{-1} N(u) and projects back with the exact rescaling u -> t u,
    t = ||u||_{X_omega}^2 / V(u). The result is compared with the two
    candidate families (0, phi) and (alpha_+ phi, beta_- phi) by orbital
    distance.
    """
    if not omega > 0:
        raise ValidationError(f"omega must be > 0, got {omega}")
    rng = np.random.default_rng(seed)
    sym = 1.0 / (grid.k2 + omega)

    def precond(a):
        return grid.ifft(sym * grid.fft(a))

    def project(u1, u2):
        f = Field2(u1, u2, grid)
        rep = action(f, p, omega)
        if rep.cubic <= 0:
            return None
        t = rep.xnorm2 / rep.cubic
        return t * u1, t * u2

    for _attempt in range(20):
        pr = project(*_random_positive_start(grid, rng))
        if pr is not None:
            break
    else:
        raise NumericalError("could not draw an initial field with positive cubic term")
    u1, u2 = pr

    def xdot(a1, a2, b1, b2):
        s = 0.0
        for a, b in ((a1, b1), (a2, b2)):
            s += float(np.real(np.sum((grid.k2 + omega) * grid.fft(a) * np.conj(grid.fft(b)))))
        return s * grid.dV / grid.size

    tau = 0.5
    prev = None
    gn = math.inf
    it = 0
    for it in range(max_iter):
        n1, n2 = _nonlinear_parts(u1, u2, p)
        g1 = u1 - precond(n1)
        g2 = u2 - precond(n2)
        gn = math.sqrt(max(xdot(g1, g2, g1, g2), 0.0))
        if gn < tol:
            break
        if prev is not None:
            s1, s2 = u1 - prev[0], u2 - prev[1]
            y1, y2 = g1 - prev[2], g2 - prev[3]
            sy = xdot(s1, s2, y1, y2)
            if sy > 0:
                tau = min(max(xdot(s1, s2, s1, s2) / sy, 0.05), 2.0)
        prev = (u1, u2, g1, g2)
        step = tau
        for _ in range(30):
            pr = project(u1 - step * g1, u2 - step * g2)
            if pr is not None:
                break
            step *= 0.5
        else:
            raise NumericalError("Nehari projection failed (cubic term <= 0)", iteration=it)
        u1, u2 = pr
    else:
        raise NumericalError("Nehari minimization did not converge", grad_norm=gn, iterations=it)

    minimizer = Field2(u1, u2, grid)
    rep = action(minimizer, p, omega)
    if phi is None:
        phi = scalar_profile(omega, grid)
    return classify_minimizer(minimizer, p, omega, phi, rep.action, it, gn, rep.nehari / rep.xnorm2)


def classify_minimizer(minimizer, p, omega, phi, act, iterations=0, grad_norm=0.0, nehari_rel=0.0):
    cands = {"semitrivial_G0": semitrivial_point(p)}
    for bp in branch_points(p):
        if bp.kind in (BranchKind.PLUS_MINUS, BranchKind.DEGENERATE):
            cands["branch_G1"] = bp
    phi3 = phi.l3_cubed()
    info, dists = {}, {}
    for name, bp in cands.items():
        ref = branch_state(bp, phi)
        dist, theta, y = OrbitMetric(ref).distance(minimizer)
        dists[name] = dist
        info[name] = {
            "alpha": bp.alpha,
            "beta": bp.beta,
            "distance": dist,
            "theta": theta,
            "y": [float(v) for v in np.atleast_1d(y)],
            "closed_form_action": bp.norm2 * phi3 / 6.0,
        }
    best = min(dists, key=dists.get)
    family = best
    if len(cands) == 2:
        a0 = info["semitrivial_G0"]["closed_form_action"]
        a1 = info["branch_G1"]["closed_form_action"]
        if abs(a0 - a1) <= 1e-8 * max(a0, a1):
            family = "both"
    return GroundStateVerdict(
        minimizer=minimizer,
        action_value=act,
        family=family,
        match_error=dists[best],
        k_region=classify_K(p).value,
        candidates=info,
        iterations=iterations,
        grad_norm=grad_norm,
        nehari_residual=nehari_rel,
    )


def expected_family(p: CouplingParams) -> str:
    return {
        KRegion.K1: "branch_G1",
        KRegion.K2: "semitrivial_G0",
        KRegion.K3: "both",
    }[classify_K(p)]


def d_omega(
    p: CouplingParams,
    omega: float,
    grid: Grid,
    cross_check: bool = False,
    seed: int = 0,
):
    """Ground-state level d(omega) = min over the two families of (a^2 + b^2) ||phi||_3^3 / 6.

    With ``cross_check`` the Nehari minimizer is run too and returned as the
    second element of a tuple.
    """
    phi = scalar_profile(omega, grid)
    phi3 = phi.l3_cubed()
    levels = [1.0]
    for bp in branch_points(p):
        if bp.kind in (BranchKind.PLUS_MINUS, BranchKind.DEGENERATE):
            levels.append(bp.norm2)
    d = min(levels) * phi3 / 6.0
    if cross_check:
        return d, nehari_minimize(p, omega, grid, seed=seed, phi=phi)
    return d


def stationary_check(f: Field2, p: CouplingParams, omega: float) -> tuple[float, float]:
    return stationary_residual(f, p, omega)
