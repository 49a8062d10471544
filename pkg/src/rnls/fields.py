"""Two-component complex fields on periodic grids and the conserved functionals.

All spatial derivatives are spectral; integrals use the rectangle rule, which
is spectrally accurate for smooth periodic data.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import NumericalError, ValidationError
from .model_core import CouplingParams


@dataclass(frozen=True)
class Grid:
    """Periodic box [-L/2, L/2)^dim with n points per axis."""

    dim: int
    n: int
    L: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValidationError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 64 or self.n & (self.n - 1):
            raise ValidationError(f"n must be a power of two >= 64, got {self.n}")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValidationError(f"L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def dV(self) -> float:
        return self.h**self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @cached_property
    def x1d(self) -> np.ndarray:
        return -0.5 * self.L + self.h * np.arange(self.n)

    @cached_property
    def k1d(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.x1d] * self.dim), indexing="ij"))

    @cached_property
    def ks(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.k1d] * self.dim), indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(k**2 for k in self.ks)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x**2 for x in self.coords))

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        kmax = np.abs(self.k1d).max()
        m = np.ones(self.shape, dtype=bool)
        for k in self.ks:
            m &= np.abs(k) <= (2.0 / 3.0) * kmax
        return m

    def fft(self, u):
        return np.fft.fftn(u)

    def ifft(self, uh):
        return np.fft.ifftn(uh)

    def laplacian(self, u):
        out = self.ifft(-self.k2 * self.fft(u))
        return out.real if np.isrealobj(u) else out

    def gradient(self, u):
        uh = self.fft(u)
        out = [self.ifft(1j * k * uh) for k in self.ks]
        return [g.real for g in out] if np.isrealobj(u) else out

    def summary(self) -> dict:
        return {"dim": self.dim, "n": self.n, "L": float(self.L), "h": float(self.h)}


@dataclass(frozen=True, eq=False)
class Field2:
    u1: np.ndarray
    u2: np.ndarray
    grid: Grid

    def __post_init__(self):
        u1 = np.asarray(self.u1, dtype=complex)
        u2 = np.asarray(self.u2, dtype=complex)
        if u1.shape != self.grid.shape or u2.shape != self.grid.shape:
            raise ValidationError(
                f"field shapes {u1.shape}, {u2.shape} do not match grid {self.grid.shape}"
            )
        if not (np.isfinite(u1).all() and np.isfinite(u2).all()):
            raise NumericalError("field contains NaN or Inf")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field2":
        return cls(np.zeros(grid.shape, complex), np.zeros(grid.shape, complex), grid)

    def __add__(self, other: "Field2") -> "Field2":
        _same_grid(self, other)
        return Field2(self.u1 + other.u1, self.u2 + other.u2, self.grid)

    def __sub__(self, other: "Field2") -> "Field2":
        _same_grid(self, other)
        return Field2(self.u1 - other.u1, self.u2 - other.u2, self.grid)

    def __mul__(self, c) -> "Field2":
        return Field2(c * self.u1, c * self.u2, self.grid)

    __rmul__ = __mul__

    def real_part(self) -> "Field2":
        return Field2(self.u1.real, self.u2.real, self.grid)

    def imag_part(self) -> "Field2":
        return Field2(self.u1.imag, self.u2.imag, self.grid)


def _same_grid(a: Field2, b: Field2) -> None:
    if a.grid != b.grid:
        raise ValidationError(f"grid mismatch: {a.grid} vs {b.grid}")


# ---------------------------------------------------------------------------
# norms and functionals


def l2_inner(a, b, grid: Grid) -> float:
    """Real L^2 inner product Re int a conj(b)."""
    return float(np.real(np.vdot(b, a)) * grid.dV)


def l2_norm2(u, grid: Grid) -> float:
    return float(np.sum(np.abs(u) ** 2) * grid.dV)


def grad_norm2(u, grid: Grid) -> float:
    uh = grid.fft(u)
    return float(np.sum(grid.k2 * np.abs(uh) ** 2) * grid.dV / grid.size)


def l3_cubed(u, grid: Grid) -> float:
    return float(np.sum(np.abs(u) ** 3) * grid.dV)


def h1w_norm2(u, grid: Grid, weight: float = 1.0) -> float:
    """||grad u||^2 + weight ||u||^2 for a scalar function."""
    uh = grid.fft(u)
    return float(np.sum((grid.k2 + weight) * np.abs(uh) ** 2) * grid.dV / grid.size)


def h_inner(f: Field2, g: Field2) -> float:
    """(f, g)_H = sum of componentwise real L^2 products."""
    _same_grid(f, g)
    return l2_inner(f.u1, g.u1, f.grid) + l2_inner(f.u2, g.u2, f.grid)


def x_inner(f: Field2, g: Field2, weight: float = 1.0) -> float:
    """(f, g)_X with L^2 part weighted by ``weight`` (1 gives the plain H^1 product)."""
    _same_grid(f, g)
    grid = f.grid
    tot = 0.0
    for a, b in ((f.u1, g.u1), (f.u2, g.u2)):
        ah, bh = grid.fft(a), grid.fft(b)
        tot += float(np.real(np.sum((grid.k2 + weight) * ah * np.conj(bh))))
    return tot * grid.dV / grid.size


def x_norm(f: Field2, weight: float = 1.0) -> float:
    return math.sqrt(max(x_inner(f, f, weight), 0.0))


def xnorm2(f: Field2, omega: float) -> float:
    """||u||_{X_omega}^2 = ||grad u||_H^2 + omega ||u||_H^2."""
    g = f.grid
    return h1w_norm2(f.u1, g, omega) + h1w_norm2(f.u2, g, omega)


def coupling_integral(f: Field2) -> float:
    """Re int u1^2 conj(u2)."""
    return float(np.real(np.sum(f.u1**2 * np.conj(f.u2))) * f.grid.dV)


def cubic(f: Field2, p: CouplingParams) -> float:
    """V(u) = kappa ||u1||_3^3 + ||u2||_3^3 + (3/2) gamma Re int u1^2 conj(u2)."""
    g = f.grid
    return p.kappa * l3_cubed(f.u1, g) + l3_cubed(f.u2, g) + 1.5 * p.gamma * coupling_integral(f)


def energy(f: Field2, p: CouplingParams) -> float:
    g = f.grid
    kin = 0.5 * (grad_norm2(f.u1, g) + grad_norm2(f.u2, g))
    return (
        kin
        - p.kappa / 3.0 * l3_cubed(f.u1, g)
        - l3_cubed(f.u2, g) / 3.0
        - 0.5 * p.gamma * coupling_integral(f)
    )


def charge(f: Field2) -> float:
    return 0.5 * (l2_norm2(f.u1, f.grid) + l2_norm2(f.u2, f.grid))


@dataclass(frozen=True)
class FunctionalReport:
    energy: float
    charge: float
    action: float
    nehari: float
    cubic: float
    xnorm2: float

    def as_dict(self):
        return dict(self.__dict__)


def action(f: Field2, p: CouplingParams, omega: float) -> FunctionalReport:
    if not omega > 0:
        raise ValidationError(f"omega must be > 0, got {omega}")
    E = energy(f, p)
    Q = charge(f)
    V = cubic(f, p)
    X2 = xnorm2(f, omega)
    return FunctionalReport(
        energy=E, charge=Q, action=E + omega * Q, nehari=X2 - V, cubic=V, xnorm2=X2
    )


def stationary_residual(f: Field2, p: CouplingParams, omega: float) -> tuple[float, float]:
    """Relative L^2 residuals of the two stationary equations S_omega'(u) = 0."""
    g = f.grid
    u1, u2 = f.u1, f.u2
    r1 = -g.laplacian(u1) + omega * u1 - p.kappa * np.abs(u1) * u1 - p.gamma * np.conj(u1) * u2
    r2 = -g.laplacian(u2) + omega * u2 - np.abs(u2) * u2 - 0.5 * p.gamma * u1**2
    scale = math.sqrt(l2_norm2(u1, g) + l2_norm2(u2, g)) or 1.0
    return math.sqrt(l2_norm2(r1, g)) / scale, math.sqrt(l2_norm2(r2, g)) / scale


def tail_mass(f: Field2, band: float = 0.1) -> float:
    """Fraction of the L^2 mass within ``band * L`` of the box boundary."""
    g = f.grid
    edge = np.zeros(g.shape, dtype=bool)
    for x in g.coords:
        edge |= np.abs(x) >= 0.5 * g.L * (1.0 - 2.0 * band)
    dens = np.abs(f.u1) ** 2 + np.abs(f.u2) ** 2
    tot = dens.sum()
    return float(dens[edge].sum() / tot) if tot > 0 else 0.0


# ---------------------------------------------------------------------------
# symmetries


def apply_gauge(f: Field2, theta: float) -> Field2:
    return Field2(np.exp(1j * theta) * f.u1, np.exp(2j * theta) * f.u2, f.grid)


def apply_J(f: Field2) -> Field2:
    return Field2(1j * f.u1, 2j * f.u2, f.grid)


def _shift_phase(grid: Grid, y) -> np.ndarray:
    y = np.broadcast_to(np.asarray(y, dtype=float), (grid.dim,))
    return np.exp(-1j * sum(k * yi for k, yi in zip(grid.ks, y)))


def translate(f: Field2, y) -> Field2:
    """tau_y u(x) = u(x - y), by a spectral phase shift (periodic wrap)."""
    g = f.grid
    ph = _shift_phase(g, y)
    return Field2(g.ifft(g.fft(f.u1) * ph), g.ifft(g.fft(f.u2) * ph), g)


# ---------------------------------------------------------------------------
# orbital distance


class OrbitMetric:
    """Distance from fields to the orbit {G(theta) tau_y phi}.

    Spectra of the reference are cached so repeated calls (one per monitor
    sample during a run) only pay for the field's own transforms.
    """

    n_theta = 64
    n_y = 32

    def __init__(self, phi: Field2, weight: float = 1.0):
        self.phi = phi
        self.grid = phi.grid
        self.weight = weight
        g = self.grid
        self._w = g.k2 + weight
        self._p1 = g.fft(phi.u1)
        self._p2 = g.fft(phi.u2)
        self._norm2 = x_inner(phi, phi, weight)

    def _coefficients(self, f: Field2):
        g = self.grid
        s = g.dV / g.size
        a1 = s * self._w * g.fft(f.u1) * np.conj(self._p1)
        a2 = s * self._w * g.fft(f.u2) * np.conj(self._p2)
        return a1, a2

    def _coarse(self, a1, a2):
        g = self.grid
        c1 = g.size * g.ifft(a1)  # c(y_m) at every grid shift
        c2 = g.size * g.ifft(a2)
        stride = max(g.n // self.n_y, 1)
        sl = (slice(None, None, stride),) * g.dim
        c1s, c2s = c1[sl].ravel(), c2[sl].ravel()
        th = 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta
        F = np.real(
            np.exp(-1j * th)[:, None] * c1s[None, :] + np.exp(-2j * th)[:, None] * c2s[None, :]
        )
        it, iy = np.unravel_index(np.argmax(F), F.shape)
        idx = np.unravel_index(iy, c1[sl].shape)
        y = np.array([g.x1d[0] + g.L / 2 + stride * g.h * i for i in idx])
        return float(th[it]), y

    def _derivs(self, a1, a2, theta, y, axis):
        """First and second derivative of the overlap F along one coordinate."""
        g = self.grid
        ph = np.conj(_shift_phase(g, y))  # e^{+i k.y}
        e1, e2 = np.exp(-1j * theta), np.exp(-2j * theta)
        if axis == 0:
            c1 = np.sum(a1 * ph)
            c2 = np.sum(a2 * ph)
            d1 = np.real(-1j * e1 * c1 - 2j * e2 * c2)
            d2 = np.real(-e1 * c1 - 4.0 * e2 * c2)
        else:
            k = g.ks[axis - 1]
            t1, t2 = a1 * ph, a2 * ph
            d1 = np.real(e1 * np.sum(1j * k * t1) + e2 * np.sum(1j * k * t2))
            d2 = np.real(-(e1 * np.sum(k**2 * t1) + e2 * np.sum(k**2 * t2)))
        return float(d1), float(d2)

    def align(self, f: Field2, tol: float = 1e-10, max_sweeps: int = 100):
        """Return (theta*, y*) maximizing the X-overlap with the orbit."""
        _same_grid(f, self.phi)
        a1, a2 = self._coefficients(f)
        theta, y = self._coarse(a1, a2)
        g = self.grid
        for _ in range(max_sweeps):
            biggest = 0.0
            for axis in range(g.dim + 1):
                for _ in range(50):
                    cur = theta if axis == 0 else y[axis - 1]
                    d1, d2 = self._derivs(a1, a2, theta, y, axis)
                    if d2 < 0:
                        step = -d1 / d2
                    else:  # not locally concave: small ascent step
                        step = 1e-2 * math.copysign(1.0, d1) if d1 else 0.0
                    cap = 0.5 if axis == 0 else 2.0 * g.h
                    step = max(-cap, min(cap, step))
                    if axis == 0:
                        theta = cur + step
                    else:
                        y[axis - 1] = cur + step
                    biggest = max(biggest, abs(step))
                    if abs(step) < tol:
                        break
            if biggest < tol:
                break
        theta = float(np.mod(theta, 2.0 * np.pi))
        y = (y + 0.5 * g.L) % g.L - 0.5 * g.L
        return theta, y

    def distance(self, f: Field2):
        """(distance, theta*, y*) with the distance evaluated directly, not via overlaps."""
        theta, y = self.align(f)
        member = apply_gauge(translate(self.phi, y), theta)
        return x_norm(f - member, self.weight), theta, y


def orbital_distance(f: Field2, phi: Field2, omega_weight: float = 1.0):
    """inf over (theta, y) of ||f - G(theta) tau_y phi||_X.

    Coarse search on 64 theta samples x 32 shifts per axis, then coordinate-wise
    Newton refinement until every step is below 1e-10.
    """
    return OrbitMetric(phi, omega_weight).distance(f)


# ---------------------------------------------------------------------------
# snapshot format

MAGIC = b"RNLS"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIddddd")


def write_snapshot(path, f: Field2, omega: float, p: CouplingParams, time: float = 0.0) -> Path:
    g = f.grid
    path = Path(path)
    header = _HEADER.pack(
        MAGIC, SNAPSHOT_VERSION, g.dim, g.n, g.L, omega, p.kappa, p.gamma, time
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.u1, dtype="<c16").tobytes(order="C"))
        fh.write(np.ascontiguousarray(f.u2, dtype="<c16").tobytes(order="C"))
    return path


def read_snapshot(path):
    """Return (field, meta) where meta has omega, kappa, gamma, time, version."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValidationError(f"{path}: truncated snapshot header")
    magic, version, dim, n, L, omega, kappa, gamma, time = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ValidationError(f"{path}: unsupported snapshot version {version}")
    grid = Grid(dim, n, L)
    count = grid.size
    expected = _HEADER.size + 2 * count * 16
    if len(data) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes, found {len(data)}")
    body = np.frombuffer(data, dtype="<c16", offset=_HEADER.size)
    u1 = body[:count].reshape(grid.shape).astype(complex)
    u2 = body[count:].reshape(grid.shape).astype(complex)
    meta = {"omega": omega, "kappa": kappa, "gamma": gamma, "time": time, "version": version}
    return Field2(u1, u2, grid), meta
