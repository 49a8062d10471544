"""Run configuration, manifests, persistence, and parameter sweeps."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import NumericalError, RNLSError, ValidationError
from .evolution import EvolutionConfig, Verdict, evolve, perturbation_direction, stability_probe
from .fields import Grid, tail_mass, write_snapshot, x_norm
from .ground_state import branch_state, d_omega, expected_family, nehari_minimize, scalar_profile
from .model_core import (
    BranchKind,
    CouplingParams,
    JRegion,
    branch_points,
    branch_values,
    classify_J,
    classify_K,
    get_branch,
    semitrivial_point,
)
from .spectra import assemble_blocks, discretize, eig_low

DEFAULT_GRIDS = {1: (1024, 80.0), 2: (256, 64.0), 3: (128, 40.0)}
TAIL_MASS_LIMIT = 1e-12
EXPERIMENTS = ("regions", "branch", "spectrum", "probe", "ground_state")

# ---------------------------------------------------------------------------
# config files


def _parse_value(text: str):
    s = text.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def parse_config(text: str) -> dict:
    """Flat dict from `dotted.key = value` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValidationError(f"config line {lineno}: empty key")
        out[key] = _parse_value(value)
    return out


def load_config(path) -> dict:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# seeds and hashing


def _key_int(part) -> int:
    if isinstance(part, bool):
        return int(part)
    if isinstance(part, int):
        if part < 0:
            raise ValidationError("seed keys must be non-negative")
        return part
    if isinstance(part, float):
        return struct.unpack("<Q", struct.pack("<d", part))[0]
    return int.from_bytes(hashlib.sha256(str(part).encode()).digest()[:8], "little")


def derive_seed(master: int, *parts) -> np.random.SeedSequence:
    """Counter-based child seed: the same (master, parts) always gives the same stream."""
    return np.random.SeedSequence(master, spawn_key=tuple(_key_int(p) for p in parts))


def derive_int(master: int, *parts) -> int:
    return int(derive_seed(master, *parts).generate_state(1, dtype=np.uint32)[0])


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def compute_run_id(inputs: dict) -> str:
    return hashlib.sha256(canonical_json(inputs).encode()).hexdigest()[:16]


def fmt(v) -> str:
    """CSV cell: 17 significant digits for floats, empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else "%.17g" % v
    if isinstance(v, (np.floating,)):
        return fmt(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row.get(c)) for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# manifests


def manifest_schema() -> dict:
    return json.loads(resources.files("rnls").joinpath("manifest.schema.json").read_text())


@dataclass
class RunManifest:
    run_id: str
    command: str
    params: dict
    grid: dict | None
    cfg: dict | None
    options: dict
    seed: int
    verdicts: dict = field(default_factory=dict)
    artifact_paths: list = field(default_factory=list)
    tool_version: str = __version__
    wall_time: float = 0.0
    threads: int = 1
    exploratory: bool = False

    def as_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "params": self.params,
            "grid": self.grid,
            "cfg": self.cfg,
            "options": self.options,
            "seed": self.seed,
            "verdicts": self.verdicts,
            "artifact_paths": sorted(self.artifact_paths),
            "tool_version": self.tool_version,
            "wall_time": self.wall_time,
            "threads": self.threads,
            "exploratory": self.exploratory,
        }

    def validate(self) -> None:
        jsonschema.validate(self.as_dict(), manifest_schema())

    def write(self, run_dir: Path) -> Path:
        self.validate()
        path = run_dir / "manifest.json"
        path.write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")
        return path


def read_manifest(path) -> RunManifest:
    data = json.loads(Path(path).read_text())
    jsonschema.validate(data, manifest_schema())
    return RunManifest(**data)


def out_root(cli_value: str | None) -> Path:
    env = os.environ.get("RNLS_OUT")
    return Path(env or cli_value or "runs")


# ---------------------------------------------------------------------------
# request resolution


@dataclass(frozen=True)
class Request:
    """Everything that determines a run's numeric output."""

    command: str
    kappa: float
    gamma: float
    omega: float = 1.0
    dim: int = 1
    n: int | None = None
    L: float | None = None
    seed: int = 0
    cfg: dict | None = None
    options: dict = field(default_factory=dict)

    @property
    def params(self) -> CouplingParams:
        return CouplingParams(self.kappa, self.gamma)

    def grid(self) -> Grid:
        """Explicit n/L, else the per-dim default with L scaled by 1/sqrt(omega)."""
        n0, L0 = DEFAULT_GRIDS.get(self.dim, (None, None))
        if n0 is None:
            raise ValidationError(f"dim must be 1, 2 or 3, got {self.dim}")
        _check_omega(self.omega)
        return Grid(self.dim, self.n or n0, self.L or L0 / math.sqrt(self.omega))

    def inputs(self) -> dict:
        g = self.grid()
        return {
            "command": self.command,
            "params": {"kappa": self.kappa, "gamma": self.gamma, "omega": self.omega, "dim": self.dim},
            "grid": {"dim": g.dim, "n": g.n, "L": g.L},
            "seed": self.seed,
            "cfg": self.cfg,
            "options": self.options,
        }

    def run_id(self) -> str:
        return compute_run_id(self.inputs())


def _check_omega(omega: float) -> None:
    if not (math.isfinite(omega) and omega > 0):
        raise ValidationError(f"omega must be positive, got {omega}")


def resolve_state(p: CouplingParams, name: str):
    if name == "semitrivial":
        return semitrivial_point(p)
    try:
        kind = BranchKind(name)
    except ValueError:
        raise ValidationError(f"unknown state {name!r}") from None
    return get_branch(p, kind)


def predicted_stability(p: CouplingParams, state: str) -> str:
    """Predicted stability of a state at (kappa, gamma): stable, unstable, open or none."""
    k, g = p.kappa, p.gamma
    if state == "semitrivial":
        if g < 1:
            return "stable"
        if g > 1:
            return "unstable"
        return "unstable" if k > 0 else "stable"
    j = classify_J(p)
    if state == "plus_minus":
        return "stable" if j in (JRegion.J1, JRegion.J2) else "none"
    if state == "minus_plus":
        return "unstable" if j is JRegion.J2 else "none"
    if state == "degenerate":
        return "open" if j is JRegion.J3 else "none"
    return "none"


def default_direction(state: str) -> str:
    """Semitrivial probes push along (phi, 0); branch probes use random even data."""
    return "psi_first_component" if state == "semitrivial" else "random_even"


# ---------------------------------------------------------------------------
# experiments: each returns (verdicts, writers) where writers persist artifacts


def _finish(req: Request, verdicts: dict, writers: dict, root: Path | None, t0: float, threads: int,
            cfg: dict | None = None) -> RunManifest:
    g = req.grid()
    m = RunManifest(
        run_id=req.run_id(),
        command=req.command,
        params={"kappa": req.kappa, "gamma": req.gamma, "omega": req.omega, "dim": req.dim},
        grid=g.summary(),
        cfg=cfg if cfg is not None else req.cfg,
        options=req.options,
        seed=req.seed,
        verdicts=verdicts,
        artifact_paths=sorted(writers),
        threads=threads,
        exploratory=req.dim > 1,
    )
    if root is not None:
        run_dir = root / m.run_id
        (run_dir / "fields").mkdir(parents=True, exist_ok=True)
        for rel, writer in writers.items():
            writer(run_dir / rel)
        m.wall_time = time.perf_counter() - t0
        m.write(run_dir)
    else:
        m.wall_time = time.perf_counter() - t0
    return m


def _probe_cfg(req: Request, claim: str) -> EvolutionConfig:
    c = dict(req.cfg or {})
    horizon = 100.0 if claim == "stable" else 50.0
    return EvolutionConfig(
        dt=float(c.get("dt", 0.01 / req.omega)),
        t_final=float(c.get("t_final", horizon)),
        nonlinear_substeps=int(c.get("nonlinear_substeps", 1)),
        monitor_stride=int(c.get("monitor_stride", 10)),
        dealias=bool(c.get("dealias", False)),
    )


def run_probe(req: Request, root: Path | None, threads: int = 1) -> RunManifest:
    t0 = time.perf_counter()
    _check_omega(req.omega)
    p = req.params
    opts = req.options
    state_name = opts.get("state", "semitrivial")
    bp = resolve_state(p, state_name)
    direction = opts.get("direction") or default_direction(state_name)
    claim = opts.get("claim", "stable")
    delta = float(opts.get("delta", 1e-3))
    cfg = _probe_cfg(req, claim)
    cfg.check_omega(req.omega)
    grid = req.grid()
    phi = scalar_profile(req.omega, grid)
    state = branch_state(bp, phi)
    tm = tail_mass(state)
    if tm > TAIL_MASS_LIMIT:
        raise ValidationError(f"profile tail mass {tm:.3g} exceeds {TAIL_MASS_LIMIT:g}; enlarge L")
    v = stability_probe(bp, p, phi, delta, direction, cfg, seed=derive_seed(req.seed, "probe"), claim=claim)
    verdicts = v.as_dict()
    verdicts["state"] = state_name
    verdicts["predicted"] = predicted_stability(p, state_name)
    ser = v.series
    writers = {
        "series.csv": ser.write_csv,
        "fields/initial.dat": lambda path: write_snapshot(path, state, req.omega, p, 0.0),
        "fields/final.dat": lambda path: write_snapshot(path, ser.final, req.omega, p, ser.last_good_time),
    }
    return _finish(req, verdicts, writers, root, t0, threads, cfg.as_dict())


def run_evolve(req: Request, root: Path | None, threads: int = 1) -> RunManifest:
    t0 = time.perf_counter()
    _check_omega(req.omega)
    p = req.params
    opts = req.options
    state_name = opts.get("state", "semitrivial")
    bp = resolve_state(p, state_name)
    c = dict(req.cfg or {})
    cfg = EvolutionConfig(
        dt=float(c.get("dt", 1e-3)),
        t_final=float(c.get("t_final", 5.0)),
        nonlinear_substeps=int(c.get("nonlinear_substeps", 1)),
        monitor_stride=int(c.get("monitor_stride", 100)),
        dealias=bool(c.get("dealias", False)),
    )
    cfg.check_omega(req.omega)
    grid = req.grid()
    phi = scalar_profile(req.omega, grid)
    state = branch_state(bp, phi)
    tm = tail_mass(state)
    if tm > TAIL_MASS_LIMIT:
        raise ValidationError(f"profile tail mass {tm:.3g} exceeds {TAIL_MASS_LIMIT:g}; enlarge L")
    u0 = state
    delta = float(opts.get("delta", 0.0))
    if delta:
        direction = opts.get("direction", "random_even")
        rng = np.random.default_rng(derive_seed(req.seed, "evolve"))
        d = perturbation_direction(direction, state, phi, rng)
        u0 = state + d * (delta / x_norm(d))
    ser = evolve(u0, cfg, p, reference=state)
    verdicts = {
        "state": state_name,
        "energy_drift": ser.drift("energy"),
        "charge_drift": ser.drift("charge"),
        "max_orbital_dist": float(np.max(ser.orbital_dist)),
        "aborted": ser.aborted,
        "last_good_time": ser.last_good_time,
    }
    writers = {
        "series.csv": ser.write_csv,
        "fields/initial.dat": lambda path: write_snapshot(path, u0, req.omega, p, 0.0),
        "fields/final.dat": lambda path: write_snapshot(path, ser.final, req.omega, p, ser.last_good_time),
    }
    if ser.aborted:
        m = _finish(req, verdicts, writers, root, t0, threads, cfg.as_dict())
        raise NumericalError("evolution produced non-finite values", last_good_time=ser.last_good_time,
                             run_id=m.run_id)
    return _finish(req, verdicts, writers, root, t0, threads, cfg.as_dict())


def regions_row(p: CouplingParams) -> dict:
    row = {"kappa": p.kappa, "gamma": p.gamma, "J": classify_J(p).value, "K": classify_K(p).value}
    cols = branch_columns(p)
    row.update(cols)
    return row


def branch_columns(p: CouplingParams) -> dict:
    cols = dict.fromkeys(DIAGRAM_COLUMNS[1:7])
    for bp in branch_points(p):
        if bp.kind is BranchKind.PLUS_MINUS:
            cols["alpha_plus"], cols["beta_minus"] = bp.alpha, bp.beta
        elif bp.kind is BranchKind.MINUS_PLUS:
            cols["alpha_minus"], cols["beta_plus"] = bp.alpha, bp.beta
        elif bp.kind is BranchKind.DEGENERATE:
            cols["alpha0"], cols["beta0"] = bp.alpha, bp.beta
    return cols


def stability_tag(p: CouplingParams) -> str:
    parts = [f"semitrivial:{predicted_stability(p, 'semitrivial')}"]
    for name in ("plus_minus", "minus_plus", "degenerate"):
        s = predicted_stability(p, name)
        if s != "none":
            parts.append(f"{name}:{s}")
    return ";".join(parts)


DIAGRAM_COLUMNS = ("gamma", "alpha_plus", "beta_minus", "alpha_minus", "beta_plus", "alpha0", "beta0", "stability")
REGION_COLUMNS = ("kappa", "gamma", "J", "K") + DIAGRAM_COLUMNS[1:7]


def linspace_range(lo: float, hi: float, count: int, positive: bool = False, name: str = "range"):
    for v in (lo, hi):
        if not math.isfinite(v):
            raise ValidationError(f"{name}: bounds must be finite")
    if int(count) != count or count < 1:
        raise ValidationError(f"{name}: count must be an integer >= 1")
    if hi < lo:
        raise ValidationError(f"{name}: hi < lo")
    if positive and lo <= 0:
        raise ValidationError(f"{name}: lower bound must be > 0")
    if count == 1:
        return [float(lo)]
    return [float(x) for x in np.linspace(lo, hi, int(count))]


def diagram_rows(kappa: float, gamma_lo: float, gamma_hi: float, count: int) -> list[dict]:
    rows = []
    for g in linspace_range(gamma_lo, gamma_hi, count, positive=True, name="gamma"):
        p = CouplingParams(kappa, g)
        row = {"gamma": g, **branch_columns(p), "stability": stability_tag(p)}
        rows.append(row)
    return rows


def spectrum_summary(req: Request) -> dict:
    p = req.params
    state_name = req.options.get("state", "plus_minus")
    k = int(req.options.get("k", 6))
    bp = resolve_state(p, state_name)
    grid = req.grid()
    phi = scalar_profile(req.omega, grid)
    disc = discretize(phi)
    LR, LI = assemble_blocks(bp, p, disc)
    out = {"state": state_name, "alpha": bp.alpha, "beta": bp.beta}
    for name, op in (("LR", LR), ("LI", LI)):
        s = eig_low(op, k)
        out[name] = s.report()
        out[name].pop("params")
        out[name].pop("grid")
    return out


def ground_state_summary(req: Request) -> dict:
    p = req.params
    grid = req.grid()
    phi = scalar_profile(req.omega, grid)
    seed = derive_int(req.seed, "nehari")
    v = nehari_minimize(p, req.omega, grid, seed=seed, phi=phi)
    d = d_omega(p, req.omega, grid)
    out = v.summary()
    out["d_omega"] = d
    out["expected_family"] = expected_family(p)
    return out


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    kappa_range: tuple
    gamma_range: tuple
    omega: float = 1.0
    experiment: str = "regions"
    parallelism: int = 1
    options: tuple = ()  # sorted (key, value) pairs, hashable
    cfg: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if int(self.parallelism) != self.parallelism or self.parallelism < 1:
            raise ValidationError("parallelism must be an integer >= 1")
        _check_omega(self.omega)
        self.kappas()
        self.gammas()

    def kappas(self):
        return linspace_range(*self.kappa_range, name="kappa")

    def gammas(self):
        return linspace_range(*self.gamma_range, positive=True, name="gamma")

    def cells(self):
        return [
            (i, j, k, g) for i, k in enumerate(self.kappas()) for j, g in enumerate(self.gammas())
        ]

    def inputs(self) -> dict:
        return {
            "command": "sweep",
            "kappa_range": list(self.kappa_range),
            "gamma_range": list(self.gamma_range),
            "omega": self.omega,
            "experiment": self.experiment,
            "options": dict(self.options),
            "cfg": dict(self.cfg),
            "seed": self.seed,
        }


SWEEP_COLUMNS = {
    "regions": REGION_COLUMNS + ("status", "error"),
    "branch": ("kappa", "gamma", "n_points", "alpha_plus", "beta_minus", "alpha_minus", "beta_plus",
               "alpha0", "beta0", "status", "error"),
    "spectrum": ("kappa", "gamma", "state", "LR_negative", "LR_kernel", "LR_lowest", "LI_negative",
                 "LI_kernel", "LI_lowest", "status", "error"),
    "probe": ("kappa", "gamma", "state", "direction", "verdict", "predicted", "max_dist_ratio", "growth_time",
              "run_id", "status", "error"),
    "ground_state": ("kappa", "gamma", "K", "family", "expected_family", "action", "match_error", "d_omega",
                     "status", "error"),
}


def _cell_request(spec: SweepSpec, i: int, j: int, kappa: float, gamma: float, command: str) -> Request:
    return Request(
        command=command,
        kappa=kappa,
        gamma=gamma,
        omega=spec.omega,
        seed=derive_int(spec.seed, "cell", i, j),
        cfg=dict(spec.cfg) or None,
        options=dict(spec.options),
    )


def _error_class(exc: Exception) -> str:
    if isinstance(exc, NumericalError):
        return "nan_abort" if "non-finite" in str(exc) else "numerical_error"
    if isinstance(exc, ValidationError):
        return "no_branch" if "does not exist" in str(exc) else "validation_error"
    return type(exc).__name__


def run_cell(spec: SweepSpec, cell, root: Path | None, threads: int = 1) -> dict:
    i, j, kappa, gamma = cell
    row = {"kappa": kappa, "gamma": gamma, "status": "ok", "error": ""}
    try:
        p = CouplingParams(kappa, gamma)
        exp = spec.experiment
        if exp == "regions":
            row.update(regions_row(p))
        elif exp == "branch":
            pts = branch_points(p)
            row["n_points"] = len(pts)
            row.update(branch_columns(p))
        elif exp == "spectrum":
            req = _cell_request(spec, i, j, kappa, gamma, "spectrum")
            s = spectrum_summary(req)
            row.update(state=s["state"], LR_negative=s["LR"]["negative_count"], LR_kernel=s["LR"]["kernel_dim"],
                       LR_lowest=s["LR"]["eigenvalues"][0], LI_negative=s["LI"]["negative_count"],
                       LI_kernel=s["LI"]["kernel_dim"], LI_lowest=s["LI"]["eigenvalues"][0])
        elif exp == "probe":
            req = _cell_request(spec, i, j, kappa, gamma, "probe")
            m = run_probe(req, root, threads)
            v = m.verdicts
            row.update(state=v["state"], direction=v["direction"], verdict=v["verdict"], predicted=v["predicted"],
                       max_dist_ratio=v["max_dist"] / v["perturbation_size"], growth_time=v["growth_time"],
                       run_id=m.run_id)
            if v["verdict"] == Verdict.INCONCLUSIVE.value:
                row["status"], row["error"] = "failed", "inconclusive"
        elif exp == "ground_state":
            req = _cell_request(spec, i, j, kappa, gamma, "ground-state")
            s = ground_state_summary(req)
            row.update(K=classify_K(p).value, family=s["family"], expected_family=s["expected_family"],
                       action=s["action"], match_error=s["match_error"], d_omega=s["d_omega"])
    except RNLSError as exc:
        row["status"], row["error"] = "failed", f"{_error_class(exc)}: {exc}"
    return row


def _init_worker(threads: int) -> None:
    threadpool_limits(threads)


def _run_cell_task(args):
    spec, cell, root, threads = args
    return run_cell(spec, cell, root, threads)


def run_sweep(spec: SweepSpec, root: Path | None, threads: int = 1) -> tuple[list[dict], RunManifest]:
    """Run every cell, sort rows by (kappa, gamma), and persist sweep.csv plus a manifest."""
    t0 = time.perf_counter()
    cells = spec.cells()
    tasks = [(spec, c, root, threads) for c in cells]
    if spec.parallelism == 1 or len(cells) == 1:
        rows = [_run_cell_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(
            max_workers=spec.parallelism, initializer=_init_worker, initargs=(threads,)
        ) as pool:
            rows = list(pool.map(_run_cell_task, tasks))
    rows.sort(key=lambda r: (r["kappa"], r["gamma"]))
    columns = SWEEP_COLUMNS[spec.experiment]
    run_id = compute_run_id(spec.inputs())
    failed = sum(r["status"] != "ok" for r in rows)
    m = RunManifest(
        run_id=run_id,
        command="sweep",
        params={"omega": spec.omega},
        grid=None,
        cfg=dict(spec.cfg) or None,
        options={**spec.inputs(), "parallelism": spec.parallelism},
        seed=spec.seed,
        verdicts={"cells": len(rows), "failed": failed},
        artifact_paths=["sweep.csv"],
        threads=threads,
    )
    if root is not None:
        run_dir = root / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        write_csv(run_dir / "sweep.csv", columns, rows)
        m.wall_time = time.perf_counter() - t0
        m.write(run_dir)
    return rows, m
