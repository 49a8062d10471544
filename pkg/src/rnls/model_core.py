"""Closed-form parameter algebra.

Branch values of the scaled-soliton states (alpha*phi, beta*phi), the J- and
K-region classification of the (kappa, gamma) half plane, and small geometric
verifiers for the line/ellipse/circle configuration behind the ground-state
classification. Nothing here depends on a discretization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError

# Absolute tolerance for the measure-zero boundary sets J3 and K3.
BOUNDARY_TOL = 1e-12
RESIDUAL_TOL = 1e-12


class JRegion(str, Enum):
    J0 = "J0"
    J1 = "J1"
    J2 = "J2"
    J3 = "J3"


class KRegion(str, Enum):
    K1 = "K1"
    K2 = "K2"
    K3 = "K3"


class BranchKind(str, Enum):
    PLUS_MINUS = "plus_minus"  # (alpha_+, beta_-)
    MINUS_PLUS = "minus_plus"  # (alpha_-, beta_+)
    DEGENERATE = "degenerate"  # (alpha_0, beta_0), tangency on J3
    SEMITRIVIAL = "semitrivial"  # (0, 1)


@dataclass(frozen=True)
class CouplingParams:
    kappa: float
    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.kappa) and math.isfinite(self.gamma)):
            raise ValidationError(f"non-finite coupling parameters {self}")
        if self.gamma <= 0:
            raise ValidationError(f"gamma must be > 0, got {self.gamma}")

    def as_dict(self):
        return {"kappa": float(self.kappa), "gamma": float(self.gamma)}


@dataclass(frozen=True)
class BranchPoint:
    alpha: float
    beta: float
    kind: BranchKind
    residual_line: float
    residual_ellipse: float

    @property
    def norm2(self) -> float:
        return self.alpha**2 + self.beta**2

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "kind": self.kind.value,
            "residual_line": self.residual_line,
            "residual_ellipse": self.residual_ellipse,
        }


def _params(p) -> CouplingParams:
    if isinstance(p, CouplingParams):
        return p
    kappa, gamma = p
    return CouplingParams(float(kappa), float(gamma))


def residuals(p: CouplingParams, alpha: float, beta: float) -> tuple[float, float]:
    """Residuals of ``kappa a + gamma b = 1`` and ``gamma a^2 + 2 b^2 = 2 b``."""
    r_line = p.kappa * alpha + p.gamma * beta - 1.0
    r_ell = p.gamma * alpha**2 + 2.0 * beta**2 - 2.0 * beta
    return r_line, r_ell


def make_branch_point(p: CouplingParams, alpha: float, beta: float, kind) -> BranchPoint:
    kind = BranchKind(kind)
    r_line, r_ell = residuals(p, alpha, beta)
    return BranchPoint(float(alpha), float(beta), kind, float(r_line), float(r_ell))


def semitrivial_point(p: CouplingParams) -> BranchPoint:
    """The (0, 1) state; it solves the stationary system for every (kappa, gamma)."""
    # The line residual is gamma - 1 here and is irrelevant: alpha = 0 kills
    # the first stationary equation identically.
    return make_branch_point(_params(p), 0.0, 1.0, BranchKind.SEMITRIVIAL)


def validate_branch_point(p: CouplingParams, bp: BranchPoint, tol: float = 1e-10) -> None:
    if bp.kind is BranchKind.SEMITRIVIAL:
        if bp.alpha != 0.0 or bp.beta != 1.0:
            raise ValidationError(f"semitrivial point must be (0, 1), got ({bp.alpha}, {bp.beta})")
        return
    r_line, r_ell = residuals(p, bp.alpha, bp.beta)
    if abs(r_line) > tol or abs(r_ell) > tol or bp.alpha < 0 or not 0 < bp.beta < 1:
        raise ValidationError(
            f"invalid branch point ({bp.alpha}, {bp.beta}) for {p}: "
            f"residuals ({r_line:.3e}, {r_ell:.3e})"
        )


# ---------------------------------------------------------------------------
# region boundaries


def kappa_c(gamma: float) -> float:
    """Critical coupling separating K1 from K2 for 0 < gamma < 1."""
    if not 0.0 < gamma < 1.0:
        raise ValidationError(f"kappa_c needs 0 < gamma < 1, got {gamma}")
    return 0.5 * (gamma + 2.0) * math.sqrt(1.0 - gamma)


def gamma_c(kappa: float, tol: float = 1e-15) -> float:
    """Inverse of :func:`kappa_c` on (0, 1), by bisection."""
    if not 0.0 < kappa < 1.0:
        raise ValidationError(f"gamma_c needs 0 < kappa < 1, got {kappa}")
    lo, hi = 0.0, 1.0
    # kappa_c is strictly decreasing: kappa_c(lo) > kappa > kappa_c(hi).
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (mid + 2.0) * math.sqrt(1.0 - mid) > kappa:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def gamma_pm(kappa: float) -> tuple[float, float]:
    """Roots (gamma_-, gamma_+) of 2 gamma (1 - gamma) = kappa^2."""
    if not 0.0 < kappa <= 1.0 / math.sqrt(2.0) + 1e-15:
        raise ValidationError(f"gamma_pm needs 0 < kappa <= 1/sqrt(2), got {kappa}")
    disc = max(1.0 - 2.0 * kappa**2, 0.0)
    s = math.sqrt(disc)
    g_plus = 0.5 * (1.0 + s)
    # Product of roots is kappa^2 / 2; avoids cancellation in (1 - s) / 2.
    g_minus = 0.5 * kappa**2 / g_plus
    return g_minus, g_plus


def _j3_kappa(gamma: float) -> float:
    return math.sqrt(2.0 * gamma * (1.0 - gamma))


def classify_J(p) -> JRegion:
    p = _params(p)
    k, g = p.kappa, p.gamma
    if (k <= 0 and g > 1) or (k > 0 and g >= 1):
        return JRegion.J1
    if 0 < g < 1:
        k3 = _j3_kappa(g)
        if abs(k - k3) <= BOUNDARY_TOL:
            return JRegion.J3
        if k > k3:
            return JRegion.J2
    return JRegion.J0


def classify_K(p) -> KRegion:
    p = _params(p)
    k, g = p.kappa, p.gamma
    if 0 < k < 1 and 0 < g < 1 and abs(k - kappa_c(g)) <= BOUNDARY_TOL:
        return KRegion.K3
    if k <= 0:
        return KRegion.K1 if g > 1 else KRegion.K2
    if k >= 1 or g >= 1:
        return KRegion.K1
    # 0 < kappa < 1, 0 < gamma < 1: gamma > gamma_c(kappa) iff kappa > kappa_c(gamma)
    return KRegion.K1 if k > kappa_c(g) else KRegion.K2


# ---------------------------------------------------------------------------
# branch values


def branch_values(p) -> dict[str, float]:
    """alpha_pm, beta_pm, alpha_0, beta_0 where defined (kappa^2 >= 2 gamma (1 - gamma))."""
    p = _params(p)
    k, g = p.kappa, p.gamma
    den = 2.0 * k**2 + g**3
    D = k**2 + 2.0 * g * (g - 1.0)
    out = {"D": D, "alpha0": (2.0 - g) * k / den, "beta0": (k**2 + g**2) / den}
    if D >= 0:
        s = math.sqrt(D)
        out.update(
            alpha_plus=((2.0 - g) * k + g * s) / den,
            alpha_minus=((2.0 - g) * k - g * s) / den,
            beta_plus=(k**2 + g**2 + k * s) / den,
            beta_minus=(k**2 + g**2 - k * s) / den,
        )
    return out


def branch_points(p) -> list[BranchPoint]:
    """The set of positive solutions (alpha, beta) of the line/ellipse system.

    Returned in ascending alpha. Empty on J0, one point on J1 and J3, two on J2.
    """
    p = _params(p)
    region = classify_J(p)
    if region is JRegion.J0:
        return []
    v = branch_values(p)
    if region is JRegion.J3:
        pts = [make_branch_point(p, v["alpha0"], v["beta0"], BranchKind.DEGENERATE)]
    elif region is JRegion.J1:
        pts = [make_branch_point(p, v["alpha_plus"], v["beta_minus"], BranchKind.PLUS_MINUS)]
    else:
        pts = [
            make_branch_point(p, v["alpha_plus"], v["beta_minus"], BranchKind.PLUS_MINUS),
            make_branch_point(p, v["alpha_minus"], v["beta_plus"], BranchKind.MINUS_PLUS),
        ]
    return sorted(pts, key=lambda b: b.alpha)


def get_branch(p, kind) -> BranchPoint:
    """Select one branch point by kind (``semitrivial`` is always available)."""
    p = _params(p)
    kind = BranchKind(kind)
    if kind is BranchKind.SEMITRIVIAL:
        return semitrivial_point(p)
    for bp in branch_points(p):
        if bp.kind is kind:
            return bp
    raise ValidationError(f"branch {kind.value} does not exist at {p} ({classify_J(p).value})")


# ---------------------------------------------------------------------------
# brute-force oracle


def _bisect(f, a, b, iters=80):
    """Vectorized bisection for a sign change of f on [a, b]."""
    fa = f(a)
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = f(m)
        same = np.sign(fm) == np.sign(fa)
        a = np.where(same, m, a)
        fa = np.where(same, fm, fa)
        b = np.where(same, b, m)
    return 0.5 * (a + b)


def branch_points_bruteforce_many(kappa, gamma, resolution: int = 256, tangent_tol: float = 1e-12):
    """Intersections of the line and ellipse in the open first quadrant for many parameters.

    Works on the ellipse parametrization x = cos t / sqrt(2 gamma), y = (1 + sin t) / 2,
    t in (-pi/2, pi/2): samples the line residual r(t), locates its interior
    extrema by bisecting r'(t), and bisects each monotone piece that changes
    sign. A refined extremum with |r| <= tangent_tol counts as a tangency root.

    Returns a list (one entry per parameter pair) of sorted lists of (x, y).
    """
    if resolution < 100:
        raise ValidationError("resolution must be >= 100")
    kappa, gamma = np.broadcast_arrays(
        np.atleast_1d(np.asarray(kappa, dtype=float)), np.atleast_1d(np.asarray(gamma, dtype=float))
    )
    kappa = kappa.ravel()
    gamma = gamma.ravel()
    P = kappa.shape[0]
    sg = np.sqrt(2.0 * gamma)

    def resid(t, rows):
        return kappa[rows] * np.cos(t) / sg[rows] + 0.5 * gamma[rows] * (1.0 + np.sin(t)) - 1.0

    def slope(t, rows):
        return -kappa[rows] * np.sin(t) / sg[rows] + 0.5 * gamma[rows] * np.cos(t)

    lo, hi = -0.5 * math.pi, 0.5 * math.pi
    ts = np.linspace(lo, hi, resolution + 1)
    allrows = np.arange(P)
    r = resid(ts[None, :], allrows[:, None])
    dr = np.diff(r, axis=1)
    turn = dr[:, :-1] * dr[:, 1:] <= 0
    erow, ecol = np.nonzero(turn)
    # An extremum shows up in consecutive sample windows; keep one bracket per run.
    if erow.size:
        keep = np.ones(erow.size, dtype=bool)
        keep[1:] = ~((erow[1:] == erow[:-1]) & (ecol[1:] == ecol[:-1] + 1))
        erow, ecol = erow[keep], ecol[keep]
    text = _bisect(lambda t: slope(t, erow), ts[ecol], ts[ecol + 2]) if erow.size else np.empty(0)

    # knots per row: lo, extrema (sorted), hi
    order = np.lexsort((text, erow))
    erow, text = erow[order], text[order]
    counts = np.bincount(erow, minlength=P)
    width = int(counts.max()) + 2 if P else 2
    knots = np.full((P, width), np.nan)
    knots[:, 0] = lo
    pos = np.arange(erow.size) - np.repeat(np.cumsum(counts) - counts, counts)
    knots[erow, 1 + pos] = text
    knots[allrows, 1 + counts] = hi

    roots_row, roots_t = [], []
    for j in range(width - 1):
        a, b = knots[:, j], knots[:, j + 1]
        ok = np.isfinite(a) & np.isfinite(b) & (b > a)
        rows = np.nonzero(ok)[0]
        ra, rb = resid(a[rows], rows), resid(b[rows], rows)
        rows = rows[ra * rb < 0]
        if rows.size:
            roots_row.append(rows)
            roots_t.append(_bisect(lambda t, rows=rows: resid(t, rows), a[rows], b[rows]))
    if erow.size:
        tang = np.abs(resid(text, erow)) <= tangent_tol
        roots_row.append(erow[tang])
        roots_t.append(text[tang])

    results: list[list[tuple[float, float]]] = [[] for _ in range(P)]
    if roots_row:
        rr = np.concatenate(roots_row)
        tt = np.concatenate(roots_t)
        xs = np.cos(tt) / sg[rr]
        ys = 0.5 * (1.0 + np.sin(tt))
        for row, t, x, y in zip(rr.tolist(), tt.tolist(), xs.tolist(), ys.tolist()):
            if lo < t < hi and x > 0 and y > 0:
                pts = results[row]
                if all(abs(x - px) + abs(y - py) > 1e-12 for px, py in pts):
                    pts.append((x, y))
        for pts in results:
            pts.sort()
    return results


def branch_points_bruteforce(p, resolution: int = 256) -> list[tuple[float, float]]:
    """Independent oracle for :func:`branch_points` (no closed forms used)."""
    p = _params(p)
    return branch_points_bruteforce_many(p.kappa, p.gamma, resolution)[0]


def hausdorff(a, b) -> float:
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) == 0 and len(b) == 0:
        return 0.0
    if len(a) == 0 or len(b) == 0:
        return math.inf
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


# ---------------------------------------------------------------------------
# ground-state geometry


def ell(p) -> float:
    """alpha_+^2 + beta_-^2 on K1, and 1 on K2 and K3."""
    p = _params(p)
    if classify_K(p) is not KRegion.K1:
        return 1.0
    v = branch_values(p)
    return v["alpha_plus"] ** 2 + v["beta_minus"] ** 2


def k3_point(gamma: float) -> tuple[float, float]:
    """The circle/ellipse contact point on K3: (2 sqrt(1-g)/(2-g), g/(2-g))."""
    return 2.0 * math.sqrt(1.0 - gamma) / (2.0 - gamma), gamma / (2.0 - gamma)


def _e1e2_violation(p: CouplingParams, ell_value: float, x, y):
    v1 = 1.0 - p.kappa * x - p.gamma * y
    v2 = 2.0 * y - p.gamma * x**2 - 2.0 * y**2
    v3 = x**2 + y**2 - ell_value
    return np.maximum(np.maximum(v1, v2), v3)


@dataclass(frozen=True)
class E1E2Result:
    status: str  # "empty" or "singleton"
    point: tuple[float, float] | None
    min_violation: float

    def as_dict(self):
        return {"status": self.status, "point": self.point, "min_violation": self.min_violation}


def _feasible_extent(p, lv, point, tol, n_dir=32, reach=0.5):
    """Largest distance from ``point`` along n_dir rays that stays within tolerance."""
    best = 0.0
    for th in np.linspace(0.0, 2.0 * math.pi, n_dir, endpoint=False):
        ux, uy = math.cos(th), math.sin(th)
        lo, hi = 0.0, reach
        if _e1e2_violation(p, lv, point[0] + hi * ux, point[1] + hi * uy) <= tol:
            return reach
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if _e1e2_violation(p, lv, point[0] + mid * ux, point[1] + mid * uy) <= tol:
                lo = mid
            else:
                hi = mid
        best = max(best, lo)
    return best


def verify_E1E2(p, resolution: int = 400, tol: float = 1e-9) -> E1E2Result:
    """Grid-scan (0, sqrt(ell)]^2 for points of E1 n E2, then refine by zooming.

    E1: kappa x + gamma y >= 1; E2: gamma x^2 + 2 y^2 >= 2 y and x^2 + y^2 <= ell.
    The max of the three constraint violations is minimized; a minimum <= tol
    means E1 n E2 is nonempty. Ray probes from the refined point then bound the
    extent of the feasible set; an extent below 1e-4 is reported as a singleton.
    """
    if resolution < 200:
        raise ValidationError("resolution must be >= 200")
    p = _params(p)
    lv = ell(p)
    side = math.sqrt(lv)
    x0, x1, y0, y1 = 0.0, side, 0.0, side
    best = (math.nan, math.nan)
    for level in range(60):
        xs = np.linspace(x0, x1, resolution + 1)
        ys = np.linspace(y0, y1, resolution + 1)
        if level == 0:
            xs, ys = xs[1:], ys[1:]  # open at the origin
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        V = _e1e2_violation(p, lv, X, Y)
        i, j = np.unravel_index(np.argmin(V), V.shape)
        best = (float(X[i, j]), float(Y[i, j]))
        hx, hy = xs[1] - xs[0], ys[1] - ys[0]
        if max(hx, hy) < 1e-14:
            break
        span = 4.0
        x0, x1 = max(best[0] - span * hx, 0.0), best[0] + span * hx
        y0, y1 = max(best[1] - span * hy, 0.0), best[1] + span * hy
    vmin = float(_e1e2_violation(p, lv, best[0], best[1]))
    if vmin > tol:
        return E1E2Result("empty", None, vmin)
    extent = _feasible_extent(p, lv, best, tol)
    status = "singleton" if extent < 1e-4 else "region"
    return E1E2Result(status, best, vmin)
