"""Command-line front end: `rnls <subcommand> [options]`."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from .errors import NumericalError, RNLSError, ValidationError
from .harness import (
    DIAGRAM_COLUMNS,
    REGION_COLUMNS,
    SWEEP_COLUMNS,
    Request,
    RunManifest,
    SweepSpec,
    compute_run_id,
    csv_text,
    diagram_rows,
    ground_state_summary,
    linspace_range,
    load_config,
    out_root,
    regions_row,
    run_evolve,
    run_probe,
    run_sweep,
    spectrum_summary,
)
from .model_core import CouplingParams, branch_points, classify_J, classify_K, ell, gamma_pm, kappa_c


def _range(text: str):
    """'lo:hi:count' or a single value."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            v = float(parts[0])
            return (v, v, 1)
        if len(parts) == 3:
            return (float(parts[0]), float(parts[1]), int(parts[2]))
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected LO:HI:COUNT or a number, got {text!r}")


def _global_flags(parser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="key=value config file")
    parser.add_argument("--out", default=d, help="run directory root (RNLS_OUT overrides)")
    parser.add_argument("--seed", type=int, default=d)
    parser.add_argument("--threads", type=int, default=d)
    parser.add_argument("--json", action="store_true", default=d, help="machine-readable stdout")


def _point_flags(parser, with_grid=True):
    parser.add_argument("--kappa", type=float)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--omega", type=float)
    if with_grid:
        parser.add_argument("--dim", type=int)
        parser.add_argument("--n", type=int)
        parser.add_argument("--L", type=float)


def _cfg_flags(parser):
    parser.add_argument("--dt", type=float)
    parser.add_argument("--t-final", dest="t_final", type=float)
    parser.add_argument("--stride", dest="monitor_stride", type=int)
    parser.add_argument("--substeps", dest="nonlinear_substeps", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rnls", description="Coupled quadratic NLS standing-wave toolkit")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    p = add("regions", "label (kappa, gamma) points with J/K regions and branch values")
    p.add_argument("--kappa", type=_range, default=(1.0, 1.0, 1))
    p.add_argument("--gamma", type=_range, default=(0.8, 0.8, 1))
    p.add_argument("--save", action="store_true")

    p = add("branch", "branch points and region data at one parameter point")
    _point_flags(p, with_grid=False)
    p.add_argument("--save", action="store_true")

    p = add("ground-state", "Nehari minimization and ground-state family")
    _point_flags(p)
    p.add_argument("--save", action="store_true")

    p = add("spectrum", "low spectrum of the linearized operators L_R, L_I")
    _point_flags(p)
    p.add_argument("--state", choices=["semitrivial", "plus_minus", "minus_plus", "degenerate"])
    p.add_argument("--k", type=int)
    p.add_argument("--save", action="store_true")

    p = add("evolve", "evolve a (possibly perturbed) standing wave")
    _point_flags(p)
    _cfg_flags(p)
    p.add_argument("--state", choices=["semitrivial", "plus_minus", "minus_plus", "degenerate"])
    p.add_argument("--delta", type=float)
    p.add_argument("--direction", choices=["random_even", "psi_first_component", "phase_kick"])

    p = add("probe", "orbital stability probe of a standing wave")
    _point_flags(p)
    _cfg_flags(p)
    p.add_argument("--state", choices=["semitrivial", "plus_minus", "minus_plus", "degenerate"])
    p.add_argument("--delta", type=float)
    p.add_argument("--direction", choices=["random_even", "psi_first_component", "phase_kick"])
    p.add_argument("--claim", choices=["stable", "unstable"], help="selects the default horizon (100 / 50)")

    p = add("sweep", "run one experiment over a (kappa, gamma) grid")
    p.add_argument("--experiment", choices=["regions", "branch", "spectrum", "probe", "ground_state"])
    p.add_argument("--kappa", type=_range)
    p.add_argument("--gamma", type=_range)
    p.add_argument("--omega", type=float)
    p.add_argument("--parallelism", type=int)
    _cfg_flags(p)
    p.add_argument("--state", choices=["semitrivial", "plus_minus", "minus_plus", "degenerate"])
    p.add_argument("--delta", type=float)
    p.add_argument("--direction", choices=["random_even", "psi_first_component", "phase_kick"])
    p.add_argument("--claim", choices=["stable", "unstable"])

    p = add("diagram", "bifurcation-diagram table at fixed kappa")
    p.add_argument("--kappa", type=float)
    p.add_argument("--gamma", type=_range, default=(0.5, 1.5, 21))
    p.add_argument("--save", action="store_true")
    return parser


# ---------------------------------------------------------------------------
# settings: config file first, CLI flags on top


def _settings(args) -> dict:
    s = load_config(args.config) if getattr(args, "config", None) else {}
    flat = dict(s)

    def put(key, value):
        if value is not None:
            flat[key] = value

    for key in ("kappa", "gamma", "omega", "dim"):
        v = getattr(args, key, None)
        if not isinstance(v, tuple):
            put(f"params.{key}", v)
    put("grid.n", getattr(args, "n", None))
    put("grid.L", getattr(args, "L", None))
    for key in ("dt", "t_final", "monitor_stride", "nonlinear_substeps"):
        put(f"cfg.{key}", getattr(args, key, None))
    for key in ("state", "delta", "direction", "claim", "k"):
        put(f"options.{key}", getattr(args, key, None))
    put("seed", getattr(args, "seed", None))
    put("threads", getattr(args, "threads", None))
    put("out", getattr(args, "out", None))
    put("sweep.experiment", getattr(args, "experiment", None))
    put("sweep.parallelism", getattr(args, "parallelism", None))
    return flat


def _section(flat: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in flat.items() if k.startswith(prefix + ".")}


def _request(command: str, flat: dict, need_point=True) -> Request:
    params = _section(flat, "params")
    if need_point and ("kappa" not in params or "gamma" not in params):
        raise ValidationError("--kappa and --gamma are required")
    grid = _section(flat, "grid")
    cfg = _section(flat, "cfg") or None
    return Request(
        command=command,
        kappa=float(params["kappa"]),
        gamma=float(params["gamma"]),
        omega=float(params.get("omega", 1.0)),
        dim=int(params.get("dim", 1)),
        n=grid.get("n"),
        L=grid.get("L"),
        seed=int(flat.get("seed", 0)),
        cfg=cfg,
        options=_section(flat, "options"),
    )


def _emit(args, payload, text: str):
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _persist_table(command: str, inputs: dict, filename: str, body: str, flat: dict, verdicts: dict) -> Path:
    t0 = time.perf_counter()
    root = out_root(flat.get("out"))
    run_id = compute_run_id({"command": command, **inputs})
    run_dir = root / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / filename).write_text(body)
    m = RunManifest(
        run_id=run_id,
        command=command,
        params=inputs.get("params", {}),
        grid=None,
        cfg=None,
        options=inputs,
        seed=int(flat.get("seed", 0)),
        verdicts=verdicts,
        artifact_paths=[filename],
        threads=int(flat.get("threads", 1)),
        wall_time=time.perf_counter() - t0,
    )
    m.write(run_dir)
    return run_dir


# ---------------------------------------------------------------------------
# subcommands


def cmd_regions(args, flat):
    ks = linspace_range(*args.kappa, name="kappa")
    gs = linspace_range(*args.gamma, positive=True, name="gamma")
    rows = sorted((regions_row(CouplingParams(k, g)) for k in ks for g in gs), key=lambda r: (r["kappa"], r["gamma"]))
    body = csv_text(REGION_COLUMNS, rows)
    if args.save:
        d = _persist_table("regions", {"kappa_range": list(args.kappa), "gamma_range": list(args.gamma)},
                           "regions.csv", body, flat, {"rows": len(rows)})
        print(f"saved {d}", file=sys.stderr)
    _emit(args, rows, body)


def cmd_branch(args, flat):
    params = _section(flat, "params")
    if "kappa" not in params or "gamma" not in params:
        raise ValidationError("--kappa and --gamma are required")
    p = CouplingParams(float(params["kappa"]), float(params["gamma"]))
    info = {
        "kappa": p.kappa,
        "gamma": p.gamma,
        "J": classify_J(p).value,
        "K": classify_K(p).value,
        "points": [bp.as_dict() for bp in branch_points(p)],
        "ell": ell(p),
    }
    if 0 < p.gamma < 1:
        info["kappa_c"] = kappa_c(p.gamma)
    if abs(p.kappa) <= 2**-0.5:
        info["gamma_pm"] = list(gamma_pm(p.kappa))
    lines = [f"(kappa, gamma) = ({p.kappa:g}, {p.gamma:g})  J={info['J']}  K={info['K']}  ell={info['ell']:.12g}"]
    for bp in info["points"]:
        lines.append(f"  {bp['kind']:<11} alpha={bp['alpha']:.15g} beta={bp['beta']:.15g}")
    if not info["points"]:
        lines.append("  no nontrivial branch points")
    if args.save:
        d = _persist_table("branch", {"params": {"kappa": p.kappa, "gamma": p.gamma}}, "branch.json",
                           json.dumps(info, indent=2, sort_keys=True) + "\n", flat, {"J": info["J"], "K": info["K"]})
        print(f"saved {d}", file=sys.stderr)
    _emit(args, info, "\n".join(lines))


def cmd_ground_state(args, flat):
    req = _request("ground-state", flat)
    s = ground_state_summary(req)
    text = (
        f"K={s['k_region']} family={s['family']} (expected {s['expected_family']}) "
        f"action={s['action']:.12g} d(omega)={s['d_omega']:.12g} match_error={s['match_error']:.3g} "
        f"iterations={s['iterations']}"
    )
    if args.save:
        d = _persist_table("ground-state", req.inputs(), "ground_state.json",
                           json.dumps(s, indent=2, sort_keys=True, default=str) + "\n", flat,
                           {"family": s["family"], "action": s["action"]})
        print(f"saved {d}", file=sys.stderr)
    _emit(args, s, text)


def cmd_spectrum(args, flat):
    req = _request("spectrum", flat)
    s = spectrum_summary(req)
    lines = [f"state={s['state']} alpha={s['alpha']:.12g} beta={s['beta']:.12g}"]
    for name in ("LR", "LI"):
        r = s[name]
        ev = " ".join(f"{x:.10g}" for x in r["eigenvalues"])
        lines.append(f"{name}: negative={r['negative_count']} kernel={r['kernel_dim']} eigenvalues: {ev}")
    if args.save:
        d = _persist_table("spectrum", req.inputs(), "spectrum.json",
                           json.dumps(s, indent=2, sort_keys=True) + "\n", flat,
                           {"LR_negative": s["LR"]["negative_count"], "LI_negative": s["LI"]["negative_count"]})
        print(f"saved {d}", file=sys.stderr)
    _emit(args, s, "\n".join(lines))


def _run_persisted(fn, command, args, flat):
    req = _request(command, flat)
    root = out_root(flat.get("out"))
    m = fn(req, root, int(flat.get("threads", 1)))
    run_dir = root / m.run_id
    v = m.verdicts
    if command == "probe":
        text = (f"{v['verdict']} (predicted {v['predicted']}) max_dist/size={v['max_dist'] / v['perturbation_size']:.4g} "
                f"growth_time={v['growth_time']} t={v['t_reached']:g}\nrun: {run_dir}")
    else:
        text = (f"energy drift={v['energy_drift']:.3g} charge drift={v['charge_drift']:.3g} "
                f"max orbital dist={v['max_orbital_dist']:.4g}\nrun: {run_dir}")
    _emit(args, m.as_dict(), text)


def cmd_evolve(args, flat):
    _run_persisted(run_evolve, "evolve", args, flat)


def cmd_probe(args, flat):
    _run_persisted(run_probe, "probe", args, flat)


def cmd_sweep(args, flat):
    sw = _section(flat, "sweep")
    kr = args.kappa or _range(str(sw.get("kappa", "1")))
    gr = args.gamma or _range(str(sw.get("gamma", "0.8")))
    spec = SweepSpec(
        kappa_range=kr,
        gamma_range=gr,
        omega=float(_section(flat, "params").get("omega", 1.0)),
        experiment=sw.get("experiment", "regions"),
        parallelism=int(sw.get("parallelism", 1)),
        options=tuple(sorted(_section(flat, "options").items())),
        cfg=tuple(sorted(_section(flat, "cfg").items())),
        seed=int(flat.get("seed", 0)),
    )
    root = out_root(flat.get("out"))
    rows, m = run_sweep(spec, root, int(flat.get("threads", 1)))
    body = csv_text(SWEEP_COLUMNS[spec.experiment], rows)
    print(f"sweep: {root / m.run_id} ({m.verdicts['failed']} failed of {m.verdicts['cells']})", file=sys.stderr)
    _emit(args, {"manifest": m.as_dict(), "rows": rows}, body)


def cmd_diagram(args, flat):
    kappa = _section(flat, "params").get("kappa")
    if kappa is None:
        raise ValidationError("--kappa is required")
    rows = diagram_rows(float(kappa), *args.gamma)
    body = csv_text(DIAGRAM_COLUMNS, rows)
    if args.save:
        d = _persist_table("diagram", {"params": {"kappa": float(kappa)}, "gamma_range": list(args.gamma)},
                           "diagram.csv", body, flat, {"rows": len(rows)})
        print(f"saved {d}", file=sys.stderr)
    _emit(args, rows, body)


COMMANDS = {
    "regions": cmd_regions,
    "branch": cmd_branch,
    "ground-state": cmd_ground_state,
    "spectrum": cmd_spectrum,
    "evolve": cmd_evolve,
    "probe": cmd_probe,
    "sweep": cmd_sweep,
    "diagram": cmd_diagram,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        flat = _settings(args)
        threads = int(flat.get("threads", 1))
        if threads < 1:
            raise ValidationError("--threads must be >= 1")
        with threadpool_limits(threads):
            COMMANDS[args.command](args, flat)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    except RNLSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
