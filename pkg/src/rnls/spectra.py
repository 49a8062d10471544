"""Linearized operators L_a, L_R, L_I and their low-lying spectra.

One-dimensional operators use the Fourier Laplacian on the periodic grid (the
same discretization the time stepper uses). Radial operators in dim 2 and 3
use a cell-centred, flux-form finite-difference Laplacian whose first cell
has no inner flux, which enforces v'(0) = 0; the matrix is symmetrized with
the r^{dim-1} weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import NumericalError, ValidationError
from .ground_state import ScalarProfile
from .model_core import BranchKind, BranchPoint, CouplingParams, validate_branch_point


@dataclass(frozen=True, eq=False)
class Discretization:
    """Symmetric form of -Lap together with the quadrature weights.

    Functions v on the nodes map to the symmetric frame by w = sqrt(weights) v,
    in which <A v, v> = w^T M w.
    """

    boundary: str  # periodic_1d | radial_regular
    dim: int
    nodes: np.ndarray
    weights: np.ndarray
    minus_lap: np.ndarray  # symmetric-frame matrix
    omega: float
    phi: np.ndarray  # profile on the nodes
    tridiagonal: bool = False

    @property
    def size(self) -> int:
        return self.nodes.size

    def to_sym(self, v):
        return np.sqrt(self.weights) * v

    def from_sym(self, w):
        return w / np.sqrt(self.weights)

    def dot(self, u, v) -> float:
        return float(np.sum(self.weights * u * v))

    def h1_norm2(self, v) -> float:
        """Unweighted H^1 norm ||grad v||^2 + ||v||^2 with this Laplacian."""
        w = self.to_sym(v)
        return float(w @ (self.minus_lap @ w) + w @ w)

    def derivative(self, v):
        if self.boundary != "periodic_1d":
            raise ValidationError("derivative is only needed on the periodic grid")
        n = self.size
        h = self.nodes[1] - self.nodes[0]
        k = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
        return np.real(np.fft.ifft(1j * k * np.fft.fft(v)))

    def reflect(self, v):
        """v(-x) on the periodic grid (index j -> n - j)."""
        return np.roll(v[::-1], 1)


def _periodic_minus_lap(n: int, h: float) -> np.ndarray:
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
    c = np.real(np.fft.ifft(k**2))
    c = 0.5 * (c + np.roll(c[::-1], 1))
    return sla.circulant(c)


def _radial_tridiag(dim: int, M: int, R: float):
    dr = R / M
    r = (np.arange(M) + 0.5) * dr
    face = np.arange(1, M + 1) * dr  # r_{j+1/2}
    fw = face ** (dim - 1)
    inner = np.concatenate([[0.0], fw[:-1]])  # r_{j-1/2}^{d-1}, zero flux at the origin
    diag_T = fw + inner  # outer face of the last cell sees v_M = 0
    off_T = -fw[:-1]
    D = r ** (dim - 1) * dr**2
    d_sym = diag_T / D
    e_sym = off_T / np.sqrt(D[:-1] * D[1:])
    return r, dr, d_sym, e_sym


def _polish_radial_profile(guess, d_sym, e_sym, D, omega, tol=1e-13, max_iter=50):
    """Newton solve of A phi + omega phi = phi^2 on the radial grid."""
    # A in function frame: D^{-1/2} S D^{1/2}, tridiagonal
    s = np.sqrt(D)
    lower = e_sym * s[:-1] / s[1:]  # A[j+1, j]
    upper = e_sym * s[1:] / s[:-1]  # A[j, j+1]
    phi = guess.copy()
    scale = np.abs(d_sym).max() + omega  # roundoff floor of A phi grows like 1/dr^2
    for _ in range(max_iter):
        Aphi = d_sym * phi
        Aphi[:-1] += upper * phi[1:]
        Aphi[1:] += lower * phi[:-1]
        F = Aphi + omega * phi - phi**2
        if np.abs(F).max() <= tol * scale * np.abs(phi).max():
            return phi
        ab = np.zeros((3, phi.size))
        ab[0, 1:] = upper
        ab[1] = d_sym + omega - 2.0 * phi
        ab[2, :-1] = lower
        phi = phi - sla.solve_banded((1, 1), ab, F)
    raise NumericalError("radial profile Newton polish did not converge", residual=float(np.abs(F).max()))


def discretize(phi: ScalarProfile, radial_points: int = 1024) -> Discretization:
    grid = phi.grid
    if grid.dim == 1:
        n, h = grid.n, grid.h
        return Discretization(
            boundary="periodic_1d",
            dim=1,
            nodes=grid.x1d.copy(),
            weights=np.full(n, h),
            minus_lap=_periodic_minus_lap(n, h),
            omega=phi.omega,
            phi=phi.values.copy(),
        )
    if phi.radial is None:
        raise ValidationError("radial discretization needs a profile with a radial evaluator")
    dim = grid.dim
    R = 0.5 * grid.L
    r, dr, d_sym, e_sym = _radial_tridiag(dim, radial_points, R)
    D = r ** (dim - 1) * dr**2
    prof = _polish_radial_profile(phi.radial(r), d_sym, e_sym, D, phi.omega)
    surface = 2.0 * np.pi if dim == 2 else 4.0 * np.pi
    lap = np.diag(d_sym) + np.diag(e_sym, 1) + np.diag(e_sym, -1)
    return Discretization(
        boundary="radial_regular",
        dim=dim,
        nodes=r,
        weights=surface * r ** (dim - 1) * dr,
        minus_lap=lap,
        omega=phi.omega,
        phi=prof,
        tridiagonal=True,
    )


# ---------------------------------------------------------------------------
# operators


@dataclass(frozen=True, eq=False)
class ScalarOperator:
    a: float
    omega: float
    dim: int
    matrix: np.ndarray
    boundary: str
    disc: Discretization = field(repr=False)

    def apply(self, v):
        d = self.disc
        return d.from_sym(self.matrix @ d.to_sym(v))

    def norm_estimate(self) -> float:
        return float(np.abs(self.matrix).sum(axis=1).max())

    def asymmetry(self) -> float:
        return float(np.abs(self.matrix - self.matrix.T).max())


def assemble_La(a: float, phi: ScalarProfile | Discretization, grid=None) -> ScalarOperator:
    """L_a v = -Lap v + omega v - a phi v."""
    disc = phi if isinstance(phi, Discretization) else discretize(phi)
    if grid is not None and isinstance(phi, ScalarProfile) and grid != phi.grid:
        raise ValidationError("grid/profile mismatch")
    M = disc.minus_lap + np.diag(disc.omega - a * disc.phi)
    return ScalarOperator(float(a), disc.omega, disc.dim, M, disc.boundary, disc)


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """2x2 block operator (-Lap + omega) I - C phi with a constant symmetric C."""

    kind: str  # LR | LI
    alpha: float
    beta: float
    coeffs: np.ndarray  # C
    matrix: np.ndarray
    disc: Discretization = field(repr=False)

    @property
    def blocks(self):
        m = self.disc.size
        M = self.matrix
        return [[M[:m, :m], M[:m, m:]], [M[m:, :m], M[m:, m:]]]

    def apply(self, v1, v2):
        d = self.disc
        w = np.concatenate([d.to_sym(v1), d.to_sym(v2)])
        out = self.matrix @ w
        m = d.size
        return d.from_sym(out[:m]), d.from_sym(out[m:])

    def norm_estimate(self) -> float:
        return float(np.abs(self.matrix).sum(axis=1).max())


def block_coefficients(kind: str, alpha: float, beta: float, p: CouplingParams) -> np.ndarray:
    """Potential coefficient matrices of L_R and L_I (multiplying phi).

    L_R: [[2 kappa alpha + gamma beta, gamma alpha], [gamma alpha, 2 beta]]
    L_I: [[kappa alpha - gamma beta, gamma alpha], [gamma alpha, beta]]
    """
    k, g = p.kappa, p.gamma
    if kind == "LR":
        return np.array([[2.0 * k * alpha + g * beta, g * alpha], [g * alpha, 2.0 * beta]])
    if kind == "LI":
        return np.array([[k * alpha - g * beta, g * alpha], [g * alpha, beta]])
    raise ValidationError(f"unknown block kind {kind!r}")


def _assemble_block(kind, bp: BranchPoint, p: CouplingParams, disc: Discretization) -> BlockOperator:
    C = block_coefficients(kind, bp.alpha, bp.beta, p)
    base = disc.minus_lap + disc.omega * np.eye(disc.size)
    ph = np.diag(disc.phi)
    M = np.block([[base - C[0, 0] * ph, -C[0, 1] * ph], [-C[1, 0] * ph, base - C[1, 1] * ph]])
    return BlockOperator(kind, bp.alpha, bp.beta, C, M, disc)


def assemble_blocks(bp: BranchPoint, p: CouplingParams, phi) -> tuple[BlockOperator, BlockOperator]:
    validate_branch_point(p, bp)
    disc = phi if isinstance(phi, Discretization) else discretize(phi)
    return _assemble_block("LR", bp, p, disc), _assemble_block("LI", bp, p, disc)


# ---------------------------------------------------------------------------
# spectra


@dataclass
class OperatorSpectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, symmetric frame
    negative_count: int
    kernel_dim: int
    kernel_tol: float
    residuals: np.ndarray

    def report(self, params: dict | None = None, grid: dict | None = None) -> dict:
        return {
            "params": params or {},
            "grid": grid or {},
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "negative_count": int(self.negative_count),
            "kernel_dim": int(self.kernel_dim),
            "kernel_tol": float(self.kernel_tol),
            "residuals": [float(x) for x in self.residuals],
        }


def eig_low(op, k: int, residual_tol: float = 1e-8) -> OperatorSpectrum:
    """k lowest eigenpairs of the symmetric discretization, with residual certificates."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    M = op.matrix
    k = min(k, M.shape[0])
    disc = op.disc
    if isinstance(op, ScalarOperator) and disc.tridiagonal:
        d = np.diag(M).copy()
        e = np.diag(M, 1).copy()
        vals, vecs = sla.eigh_tridiagonal(d, e, select="i", select_range=(0, k - 1))
    else:
        vals, vecs = sla.eigh(M, subset_by_index=[0, k - 1])
    res = np.linalg.norm(M @ vecs - vecs * vals, axis=0)
    if np.any(res > residual_tol):
        raise NumericalError(
            "eigen-residual certificate failed", worst=float(res.max()), tol=residual_tol
        )
    tol = 1e-6 * op.norm_estimate()
    return OperatorSpectrum(
        eigenvalues=vals,
        eigenvectors=vecs,
        negative_count=int(np.sum(vals < -tol)),
        kernel_dim=int(np.sum(np.abs(vals) <= tol)),
        kernel_tol=tol,
        residuals=res,
    )


def eigenfunction(spec: OperatorSpectrum, i: int, disc: Discretization, component: int | None = None):
    w = spec.eigenvectors[:, i]
    m = disc.size
    if component is None and w.size == m:
        return disc.from_sym(w)
    c = component or 0
    return disc.from_sym(w[c * m : (c + 1) * m])


def correlation(u, v, disc: Discretization) -> float:
    """|<u, v>| / (||u|| ||v||) in the discrete L^2 product."""
    return abs(disc.dot(u, v)) / math.sqrt(disc.dot(u, u) * disc.dot(v, v))


def quadratic_form(op, v) -> float:
    """<op v, v>; v is a function (scalar op) or a pair of functions (block op)."""
    disc = op.disc
    if isinstance(op, BlockOperator):
        v1, v2 = v
        if np.shape(v1) != (disc.size,) or np.shape(v2) != (disc.size,):
            raise ValidationError("shape mismatch for block quadratic form")
        w = np.concatenate([disc.to_sym(np.asarray(v1)), disc.to_sym(np.asarray(v2))])
    else:
        if np.shape(v) != (disc.size,):
            raise ValidationError(f"shape mismatch: {np.shape(v)} vs ({disc.size},)")
        w = disc.to_sym(np.asarray(v))
    return float(w @ (op.matrix @ w))


def kernel_residuals(bp: BranchPoint, p: CouplingParams, phi) -> dict:
    """Relative residuals of L_R grad(Phi) = 0 and L_I Phi_2 = 0."""
    LR, LI = assemble_blocks(bp, p, phi)
    disc = LR.disc
    out = {}
    if disc.boundary == "periodic_1d":
        dphi = disc.derivative(disc.phi)
        g1, g2 = bp.alpha * dphi, bp.beta * dphi
        r1, r2 = LR.apply(g1, g2)
        out["LR_grad_Phi"] = math.sqrt(disc.dot(r1, r1) + disc.dot(r2, r2)) / math.sqrt(
            disc.dot(g1, g1) + disc.dot(g2, g2)
        )
    p1, p2 = bp.alpha * disc.phi, 2.0 * bp.beta * disc.phi
    r1, r2 = LI.apply(p1, p2)
    out["LI_Phi2"] = math.sqrt(disc.dot(r1, r1) + disc.dot(r2, r2)) / math.sqrt(
        disc.dot(p1, p1) + disc.dot(p2, p2)
    )
    return out


def rotation_matrices(alpha: float, beta: float):
    """The orthogonal matrices A (for L_R) and B (for L_I)."""
    sa = math.sqrt(alpha**2 + beta**2)
    sb = math.sqrt(alpha**2 + 4.0 * beta**2)
    A = np.array([[alpha, beta], [-beta, alpha]]) / sa
    B = np.array([[alpha, 2.0 * beta], [-2.0 * beta, alpha]]) / sb
    return A, B


def _conjugate(op: BlockOperator, Q: np.ndarray):
    """Blocks of (Q x I) M (Q x I)^T."""
    b = op.blocks
    out = [[None, None], [None, None]]
    for i in range(2):
        for j in range(2):
            out[i][j] = sum(Q[i, k] * Q[j, l] * b[k][l] for k in range(2) for l in range(2))
    return out


def verify_diagonalization(bp: BranchPoint, p: CouplingParams, phi, k: int = 8) -> dict:
    """Check that A and B decouple L_R and L_I into (L_2, L_{(2-g)b}) and (L_1, L_{(1-2g)b})."""
    if bp.alpha <= 0:
        raise ValidationError("diagonalization needs alpha > 0; use the decoupled semitrivial form")
    if bp.beta <= 0:
        raise ValidationError("diagonalization needs beta > 0")
    disc = phi if isinstance(phi, Discretization) else discretize(phi)
    LR, LI = assemble_blocks(bp, p, disc)
    A, B = rotation_matrices(bp.alpha, bp.beta)
    report = {
        "A_orthogonality": float(np.abs(A.T @ A - np.eye(2)).max()),
        "B_orthogonality": float(np.abs(B.T @ B - np.eye(2)).max()),
    }
    g, b = p.gamma, bp.beta
    pairs = {"LR": (LR, A, 2.0, (2.0 - g) * b), "LI": (LI, B, 1.0, (1.0 - 2.0 * g) * b)}
    for name, (op, Q, a1, a2) in pairs.items():
        C = _conjugate(op, Q)
        off = max(np.linalg.norm(C[0][1]), np.linalg.norm(C[1][0]))
        S1 = assemble_La(a1, disc)
        S2 = assemble_La(a2, disc)
        diag_err = max(np.abs(C[0][0] - S1.matrix).max(), np.abs(C[1][1] - S2.matrix).max())
        full = eig_low(op, k).eigenvalues
        merged = np.sort(np.concatenate([eig_low(S1, k).eigenvalues, eig_low(S2, k).eigenvalues]))[:k]
        report[name] = {
            "scalar_coefficients": (a1, a2),
            "offdiag_norm": float(off),
            "diag_block_error": float(diag_err),
            "eigenvalues": full.tolist(),
            "merged_eigenvalues": merged.tolist(),
            "spectrum_error": float(np.abs(full - merged).max()),
        }
    return report


# ---------------------------------------------------------------------------
# coercivity probes

_PRECONDITIONS = {
    "Lr1": ("(2 - gamma) beta < 1", lambda s: s < 1.0),
    "Lr2": ("1 <= (2 - gamma) beta < 2", lambda s: 1.0 <= s < 2.0),
    "Li1": ("none", lambda s: True),
}
_LEMMA = {"Lr1": "L_R coercivity on {Phi, grad Phi}^perp", "Lr2": "L_R coercivity on radial {Phi, Phi_1}^perp", "Li1": "L_I coercivity on {Phi_2}^perp"}


@dataclass
class CoercivityReport:
    kind: str
    min_quotient: float
    trials: int
    margin: float

    @property
    def passed(self) -> bool:
        return self.min_quotient >= self.margin

    def as_dict(self):
        return {
            "kind": self.kind,
            "min_quotient": self.min_quotient,
            "trials": self.trials,
            "margin": self.margin,
            "passed": self.passed,
        }


def _gram_schmidt_project(v1, v2, constraints, disc: Discretization):
    """Project the pair (v1, v2) H-orthogonally off the span of constraint pairs."""
    basis = []
    for c1, c2 in constraints:
        c1, c2 = c1.copy(), c2.copy()
        for b1, b2 in basis:
            t = disc.dot(c1, b1) + disc.dot(c2, b2)
            c1, c2 = c1 - t * b1, c2 - t * b2
        nrm = math.sqrt(disc.dot(c1, c1) + disc.dot(c2, c2))
        if nrm > 1e-12:
            basis.append((c1 / nrm, c2 / nrm))
    for _ in range(2):  # re-orthogonalize once for stability
        for b1, b2 in basis:
            t = disc.dot(v1, b1) + disc.dot(v2, b2)
            v1, v2 = v1 - t * b1, v2 - t * b2
    return v1, v2


def _random_field(disc: Discretization, rng: np.random.Generator, low_modes=None):
    x = disc.nodes
    if low_modes is not None and rng.random() < 0.5:
        coeffs = rng.standard_normal(low_modes.shape[1]) / (1.0 + np.arange(low_modes.shape[1]))
        return low_modes @ coeffs
    width = rng.uniform(0.5, 6.0)
    centre = rng.uniform(-3.0, 3.0) if disc.boundary == "periodic_1d" else 0.0
    env = np.exp(-0.5 * ((x - centre) / width) ** 2)
    freq = rng.uniform(0.0, 2.0)
    phase = rng.uniform(0, 2 * np.pi)
    return env * (rng.standard_normal() + np.cos(freq * x + phase))


def coercivity_probe(
    kind: str,
    bp: BranchPoint,
    p: CouplingParams,
    phi,
    trials: int = 200,
    seed: int = 0,
    margin: float = 1e-6,
) -> CoercivityReport:
    """Minimum Rayleigh quotient <L v, v> / ||v||_X^2 over random constrained trial fields.

    A probe, not a proof: it certifies that no counterexample was found.
    """
    if kind not in _PRECONDITIONS:
        raise ValidationError(f"unknown probe kind {kind!r}")
    label, cond = _PRECONDITIONS[kind]
    s = (2.0 - p.gamma) * bp.beta
    if not cond(s):
        raise ValidationError(f"{_LEMMA[kind]} requires {label}; got (2 - gamma) beta = {s:.6g}")
    disc = phi if isinstance(phi, Discretization) else discretize(phi)
    LR, LI = assemble_blocks(bp, p, disc)
    ph = disc.phi
    Phi = (bp.alpha * ph, bp.beta * ph)
    if kind == "Lr1":
        op = LR
        cons = [Phi]
        if disc.boundary == "periodic_1d":
            dph = disc.derivative(ph)
            cons.append((bp.alpha * dph, bp.beta * dph))
    elif kind == "Lr2":
        op = LR
        cons = [Phi, (-bp.beta * ph, bp.alpha * ph)]
    else:
        op = LI
        cons = [(bp.alpha * ph, 2.0 * bp.beta * ph)]
    even = kind == "Lr2" and disc.boundary == "periodic_1d"

    rng = np.random.default_rng(seed)
    # low eigenmodes of the scalar pieces make the random trials probe the soft directions
    nm = 8
    modes = np.column_stack(
        [
            disc.from_sym(eig_low(assemble_La(a, disc), nm).eigenvectors[:, i])
            for a in (2.0, 1.0)
            for i in range(nm)
        ]
    )
    qmin = math.inf
    for _ in range(trials):
        v1 = _random_field(disc, rng, modes)
        v2 = _random_field(disc, rng, modes)
        if even:
            v1 = 0.5 * (v1 + disc.reflect(v1))
            v2 = 0.5 * (v2 + disc.reflect(v2))
        v1, v2 = _gram_schmidt_project(v1, v2, cons, disc)
        xn = disc.h1_norm2(v1) + disc.h1_norm2(v2)
        if xn < 1e-20:
            continue
        qmin = min(qmin, quadratic_form(op, (v1, v2)) / xn)
    return CoercivityReport(kind, float(qmin), trials, margin)


def negative_direction_witness(bp: BranchPoint, p: CouplingParams, phi) -> float:
    """<L_R psi, psi> for psi = Phi_1 / ||Phi_1||_H, Phi_1 = (-beta phi, alpha phi)."""
    disc = phi if isinstance(phi, Discretization) else discretize(phi)
    LR, _ = assemble_blocks(bp, p, disc)
    v1, v2 = -bp.beta * disc.phi, bp.alpha * disc.phi
    nrm = math.sqrt(disc.dot(v1, v1) + disc.dot(v2, v2))
    return quadratic_form(LR, (v1 / nrm, v2 / nrm))


def semitrivial_blocks_expected(p: CouplingParams):
    """Scalar coefficients of the decoupled semitrivial operators: L_R = (L_g, L_2), L_I = (L_-g, L_1)."""
    return {"LR": (p.gamma, 2.0), "LI": (-p.gamma, 1.0)}


def poschl_teller_ground(a: float) -> float:
    """Lowest eigenvalue of L_a at omega = 1, N = 1 on the line: (4 - lam^2) / 4."""
    lam = 0.5 * (-1.0 + math.sqrt(1.0 + 24.0 * a))
    return 0.25 * (4.0 - lam**2)


def poschl_teller_levels(a: float) -> list[float]:
    """All bound levels (4 - (lam - m)^2) / 4, m = 0, 1, ... with lam - m > 0."""
    lam = 0.5 * (-1.0 + math.sqrt(1.0 + 24.0 * a))
    out = []
    m = 0
    while lam - m > 0:
        out.append(0.25 * (4.0 - (lam - m) ** 2))
        m += 1
    return out


__all__ = [
    "BranchKind",
    "BlockOperator",
    "CoercivityReport",
    "Discretization",
    "OperatorSpectrum",
    "ScalarOperator",
    "assemble_La",
    "assemble_blocks",
    "coercivity_probe",
    "correlation",
    "discretize",
    "eig_low",
    "kernel_residuals",
    "negative_direction_witness",
    "quadratic_form",
    "verify_diagonalization",
]
