"""Command line pipeline.

    marangoni <command> [--config FILE] [--out DIR] [--seed N] [--threads N]

Commands: spectrum, tune, coeffs, control, realize, simulate, compare.
Every run writes <command>.json (canonical JSON carrying the config digest)
and, where relevant, flat CSV tables or binary snapshots. Exit status is 0
on pass, 2 on a precondition failure and 3 on a numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from contextlib import contextmanager
from pathlib import Path

EXIT_OK, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 2, 3

COMMANDS = ("spectrum", "tune", "coeffs", "control", "realize", "simulate", "compare")

DEFAULTS = {
    "physical": {"preset": 2, "h_rule": "log"},
    "nuMode": "finite",
    "spectrum": {"region": [-2.0, 0.25, -5.0, 5.0], "Kmax": 12, "rhp": [30.0, 30.0]},
    "coeffs": {"sources": True},
    "control": {"targets": 20, "basisSize": 24, "forcingBasis": 16, "strict": False, "rtol": 1e-6},
    "realize": {"target": "attracting", "N": 8, "tensor_seed": 1, "scale": 0.5,
                "xis": [1e-2, 1e-3, 1e-4], "T": 20.0, "dt": 0.01, "tolerance": 0.05,
                "require_inward": True},
    "simulate": {"Nx": 64, "Ny": 128, "gamma": 1e-2, "dt": 0.01, "T": 10.0, "initial": "random",
                 "amplitude": 0.05, "samples": 10, "sources": True},
    "compare": {"Nx": 32, "Ny": 2048, "dt": 0.05, "gammas": [1e-2, 3e-3, 1e-3],
                "X0": [0.5, -0.3, 0.4, 0.2], "tolerance": 0.1, "sources": True},
}

_SECTIONS = set(DEFAULTS)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def resolve_config(raw: dict | None) -> dict:
    """Merge a user document into the defaults and check it."""
    from .errors import PreconditionError

    raw = raw or {}
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise PreconditionError(f"unknown config sections {sorted(unknown)}")
    for sec, body in raw.items():
        if sec != "physical" and isinstance(body, dict):
            extra = set(body) - set(DEFAULTS[sec])
            if extra:
                raise PreconditionError(f"unknown keys in {sec}: {sorted(extra)}")
    cfg = _merge(DEFAULTS, raw)
    if "physical" in raw:
        # a physical section describes the whole configuration (or names a preset)
        cfg["physical"] = dict(raw["physical"])
    if cfg["nuMode"] not in ("finite", "limit"):
        raise PreconditionError("nuMode must be 'finite' or 'limit'")
    for sec, keys in (("control", ("rtol",)), ("realize", ("T", "dt", "tolerance")), ("simulate", ("dt", "T", "gamma")),
                      ("compare", ("dt", "tolerance"))):
        for key in keys:
            if not float(cfg[sec][key]) > 0:
                raise PreconditionError(f"{sec}.{key} must be positive")
    if any(float(x) <= 0 for x in cfg["realize"]["xis"]) or any(float(g) <= 0 for g in cfg["compare"]["gammas"]):
        raise PreconditionError("xi and gamma values must be positive")
    return cfg


def physical_config(cfg: dict):
    from .heatprofile import PhysicalConfig

    from .errors import PreconditionError

    phys = dict(cfg["physical"])
    preset = phys.pop("preset", None)
    try:
        if preset is not None:
            return PhysicalConfig.preset(int(preset), **phys)
        return PhysicalConfig(**phys)
    except (TypeError, KeyError) as exc:
        raise PreconditionError(f"invalid physical section: {exc}") from None


# ---------------------------------------------------------------- commands

def _profile(cfg):
    from .heatprofile import tune_d

    return tune_d(physical_config(cfg), cfg["nuMode"])


def cmd_tune(cfg, rng, out: Path) -> dict:
    import numpy as np
    from .io import write_table

    prof = _profile(cfg)
    y = np.linspace(0.0, prof.config.h, 401)
    write_table(out / "profile.csv", ["y", "U", "U_y"],
                np.column_stack([y, prof.base_U(y), prof.base_Uy(y)]))
    return {"pass": True, "d": list(prof.d), "polyCoeffs": prof.polyCoeffs,
            "residual": prof.info.get("residual"), "iterations": len(prof.info.get("history", [])),
            "physical": prof.config.to_dict()}


def cmd_spectrum(cfg, rng, out: Path) -> dict:
    from .errors import GapViolation
    from .io import write_table
    from .spectral import scan_spectrum

    prof = _profile(cfg)
    sc = cfg["spectrum"]
    rep = scan_spectrum(prof, cfg["nuMode"], tuple(sc["region"]), int(sc["Kmax"]),
                        rhp=tuple(sc["rhp"]) if sc["rhp"] else None)
    write_table(out / "roots.csv", ["k", "re", "im", "residual"], rep.table())
    result = {"pass": rep.stable and sorted(rep.zeroModes) == list(range(1, prof.config.N + 1)),
              "d": list(prof.d), **rep.to_dict()}
    if not result["pass"]:
        raise GapViolation("spectral gap condition fails", report=result)
    return result


def _modes(prof):
    from .spectral import tuned_modes

    return tuned_modes(prof)


def cmd_coeffs(cfg, rng, out: Path) -> dict:
    from .galerkin import assemble_reduced
    from .pdesim import random_sources

    prof = _profile(cfg)
    modes, conj = _modes(prof)
    u1 = eta1 = None
    if cfg["coeffs"]["sources"]:
        u1, eta1 = random_sources(rng, prof.config.h, prof.delta1)
    red = assemble_reduced(prof, u1, eta1, prof.config.gamma, modes, conj)
    blocks = red.blocks()
    return {"pass": True, "reduced": red.to_dict(),
            "zero_blocks_max": max(float(abs(blocks[b]).max()) for b in ("+-+", "++-", "---")),
            "u1": None if u1 is None else u1.to_dict(), "eta1": None if eta1 is None else eta1.to_dict()}


def cmd_control(cfg, rng, out: Path) -> dict:
    import numpy as np
    from .control import ControlOperator, ControlTarget, solve_forcing
    from .galerkin import compute_f

    prof = _profile(cfg)
    modes, conj = _modes(prof)
    cc = cfg["control"]
    op = ControlOperator(modes, conj, int(cc["basisSize"]), prof.delta1)
    rows, worst_m, worst_f = [], 0.0, 0.0
    for i in range(int(cc["targets"])):
        tgt = ControlTarget.random(prof.config.N, rng)
        u = op.solve(tgt, strict=bool(cc["strict"]))
        em = float(np.abs(op.forward(u) - tgt.matrix).max() / np.abs(tgt.matrix).max())
        eta = solve_forcing(tgt.forcing, conj, int(cc["forcingBasis"]))
        ef = float(np.abs(compute_f(eta, conj) - tgt.forcing).max() / np.abs(tgt.forcing).max())
        rows.append((i, em, ef, u.meta.get("rank", -1)))
        worst_m, worst_f = max(worst_m, em), max(worst_f, ef)
    from .io import write_table
    write_table(out / "control.csv", ["target", "M_relerr", "f_relerr", "rank"], rows)
    rtol = float(cc["rtol"])
    return {"pass": worst_m < rtol and worst_f < rtol, "M_relerr_max": worst_m, "f_relerr_max": worst_f,
            "rank": rows[0][3] if rows else None, "constraints": (2 * prof.config.N) ** 2}


def _target(spec):
    import numpy as np
    from .quadratic import TargetField

    if isinstance(spec, dict):
        return TargetField.from_dict(spec)
    if spec == "saddle":
        return TargetField(2, np.zeros((2, 2, 2)), np.diag([1.0, -1.0]), np.zeros(2))
    if spec == "attracting":
        D = np.zeros((2, 2, 2))
        D[0, 0, 1], D[1, 0, 0] = 0.2, -0.1
        return TargetField(2, D, np.array([[-1.0, 0.5], [-0.5, -1.0]]), np.array([0.2, -0.1]))
    from .errors import PreconditionError
    raise PreconditionError(f"unknown target {spec!r}")


@contextmanager
def _stage(name: str):
    """Tag package errors raised inside with the pipeline stage name."""
    from .errors import NumericalError, PreconditionError

    try:
        yield
    except (PreconditionError, NumericalError) as exc:
        exc.diagnostics = dict(getattr(exc, "diagnostics", {}), stage=name)
        raise


def cmd_realize(cfg, rng, out: Path) -> dict:
    import numpy as np
    from .control import ControlOperator, ControlTarget, check_p_decomposition, sidon_set
    from .errors import PreconditionError
    from .io import write_table
    from .quadratic import (build_realizer, fit_exponent, generic_tensor, integrate,
                            realization_error, slow_jacobian)

    rc = cfg["realize"]
    with _stage("target"):
        target = _target(rc["target"])
        if rc["require_inward"]:
            bad = target.inward_violations()
            if len(bad):
                raise PreconditionError("target is not inward on the boundary of its ball",
                                        samples=bad[:10].tolist())
    stages = {}
    # Sidon wavenumbers and the pivots of the p-decomposition: on the Galerkin
    # tensor of the tuned profile when it carries every pair sum, otherwise on
    # a formal tensor with all wavenumbers up to the largest sum
    with _stage("p_decomposition"):
        sid = sidon_set(target.p)
        kmax = max(sid.sums)
        prof = _profile(cfg)
        if kmax <= prof.config.N:
            from .galerkin import assemble_reduced
            ok, u = check_p_decomposition(assemble_reduced(prof, None, None, prof.config.gamma), sid,
                                          strict=False)
            source = "galerkin"
        else:
            formal = generic_tensor(kmax, int(rc["tensor_seed"]), 1.0)
            ok, u = check_p_decomposition(formal, sid, ks=range(1, kmax + 1), strict=False)
            source = "formal"
    stages["sidon"] = {"ks": list(sid.ks), "strict_candidates": list(sid.strict_candidates),
                       "tensor": source, "p_decomposition_solvable": ok, "u": {str(k): v for k, v in sorted(u.items())}}
    with _stage("realizer"):
        K = generic_tensor(int(rc["N"]), int(rc["tensor_seed"]), float(rc["scale"]))
        xis = sorted((float(x) for x in rc["xis"]), reverse=True)
        splits = [build_realizer(target, K, xi) for xi in xis]
    fine = splits[-1]
    # control stage: the realizer's linear part and forcing as a control target
    # for the tuned profile, when the slow dimension matches 2N
    with _stage("control"):
        if fine.N == 2 * prof.config.N:
            modes, conj = _modes(prof)
            op = ControlOperator(modes, conj, int(cfg["control"]["basisSize"]), prof.delta1)
            tgt = ControlTarget.from_matrix(fine.system.M, fine.system.g)
            u1 = op.solve(tgt, strict=False)
            stages["control"] = {"M_relerr": float(np.abs(op.forward(u1) - tgt.matrix).max()
                                                   / np.abs(tgt.matrix).max()), "meta": u1.meta}
        else:
            stages["control"] = {"skipped": f"realizer dimension {fine.N} != 2N = {2 * prof.config.N}"}
    g = [-0.375, -0.125, 0.125, 0.375]
    if target.p == 2:
        Y0s = [np.array([a, b]) * target.R0 for a in g for b in g if a * a + b * b <= 0.25]
    else:
        Y0s = [0.5 * target.R0 * v for v in np.eye(target.p)]
    with _stage("integrate"):
        errs = [realization_error(sp, Y0s, float(rc["T"]), float(rc["dt"])) for sp in splits]
        J = slow_jacobian(fine, np.zeros(target.p))
        tr = integrate(fine, fine.lift(Y0s[0]), float(rc["T"]), 0.1)
    write_table(out / "realize_errors.csv", ["xi", "sup_error"], list(zip(xis, errs)))
    write_table(out / "trajectory.csv", ["t"] + [f"X{i}" for i in range(fine.N)], tr.table())
    expo = fit_exponent(xis, errs) if len(errs) > 1 else float("nan")
    passed = errs[-1] <= float(rc["tolerance"]) and (len(errs) == 1 or expo >= 0.8)
    return {"pass": bool(passed), "stages": stages, "xis": xis, "errors": errs, "exponent": expo,
            "jacobian_at_origin": J, "jacobian_eigenvalues": sorted(np.linalg.eigvals(J).real.tolist())}


def _initial_state(sim, kind: str, amplitude: float, rng, X0=None):
    import numpy as np
    from .pdesim import SimState

    g = sim.grid
    if kind == "zero":
        return SimState.zeros(g)
    if kind == "modes":
        return sim.mode_state(sim.gamma * np.asarray(X0, dtype=float), sim.discrete_modes())
    if kind == "random":
        x, y = g.x, g.y
        w = np.zeros((g.Nx, g.Ny + 1))
        for m in range(0, 4):
            for n in range(0, 4):
                a, b = amplitude * rng.uniform(-1, 1, 2)
                w += np.outer(a * np.cos(m * x) + b * np.sin(m * x), np.cos(n * np.pi * y / g.h))
        return SimState.from_physical(np.zeros_like(w), w, g)
    from .errors import PreconditionError
    raise PreconditionError(f"unknown initial state {kind!r}")


def cmd_simulate(cfg, rng, out: Path) -> dict:
    import numpy as np
    from .io import write_snapshot, write_table
    from .pdesim import Grid, MarangoniSim, random_sources

    sc = cfg["simulate"]
    prof = _profile(cfg)
    grid = Grid(int(sc["Nx"]), int(sc["Ny"]), prof.config.h)
    u1 = eta1 = None
    if sc["sources"]:
        u1, eta1 = random_sources(rng, prof.config.h, prof.delta1)
    sim = MarangoniSim(prof, grid, float(sc["gamma"]), float(sc["dt"]), u1=u1, eta1=eta1)
    st = _initial_state(sim, sc["initial"], float(sc["amplitude"]), rng, sc.get("X0"))
    m0 = sim.mean_temperature(st)
    T = float(sc["T"])
    every = max(1, int(round(T / sim.dt / int(sc["samples"]))))
    st, series = sim.run(st, T, every=every, callback=lambda s: (
        s.t, sim.mean_temperature(s) - m0, float(np.abs(s.w_hat).max()), sim.cfl_number(s)))
    write_table(out / "series.csv", ["t", "mean_drift", "w_hat_max", "cfl"], series)
    f = sim.fields(st)
    write_snapshot(out / "snapshot", {"w": f["w"], "omega": f["omega"], "psi": f["psi"]},
                   {"t": st.t, "Nx": grid.Nx, "Ny": grid.Ny, "h": grid.h, "gamma": sim.gamma,
                    "physical": prof.config.to_dict(), "d": list(prof.d)})
    drift = max(abs(r[1]) for r in series)
    return {"pass": bool(drift < 1e-8), "mean_drift_max": drift, "t_final": st.t,
            "boundary": sim.boundary_residuals(st)}


def cmd_compare(cfg, rng, out: Path) -> dict:
    from .galerkin import assemble_reduced
    from .io import write_table
    from .pdesim import Grid, gamma_scan, random_sources, retune_discrete

    cc = cfg["compare"]
    prof = _profile(cfg)
    grid = Grid(int(cc["Nx"]), int(cc["Ny"]), prof.config.h)
    u1 = eta1 = None
    if cc["sources"]:
        u1, eta1 = random_sources(rng, prof.config.h, prof.delta1)
    red = assemble_reduced(prof, u1, eta1, 1.0)
    disc = retune_discrete(prof, grid)
    scan = gamma_scan(disc, grid, cc["gammas"], cc["X0"], red, u1, eta1, float(cc["dt"]))
    for r in scan["runs"]:
        write_table(out / f"track_gamma_{r['gamma']:.0e}.csv",
                    ["t"] + [f"pde{i}" for i in range(len(cc["X0"]))] + [f"ode{i}" for i in range(len(cc["X0"]))],
                    [(t, *a, *b) for t, a, b in zip(r["t"], r["X_pde"], r["X_ode"])])
    smallest = scan["errors"][int(min(range(len(scan["gammas"])), key=lambda i: scan["gammas"][i]))]
    return {"pass": bool(scan["monotone"] and smallest <= float(cc["tolerance"])),
            "gammas": scan["gammas"], "errors": scan["errors"], "exponent": scan["exponent"],
            "monotone": scan["monotone"], "d_continuum": list(prof.d), "d_discrete": list(disc.d)}


HANDLERS = {"spectrum": cmd_spectrum, "tune": cmd_tune, "coeffs": cmd_coeffs, "control": cmd_control,
            "realize": cmd_realize, "simulate": cmd_simulate, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marangoni", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON config document (merged into the defaults)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    import numpy as np
    from .errors import NumericalError, PreconditionError
    from .io import config_digest, read_json, write_json

    out = args.out / args.command
    try:
        raw = read_json(args.config) if args.config else {}
        cfg = resolve_config(raw)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    digest = config_digest({"command": args.command, "config": cfg, "seed": args.seed})
    header = {"command": args.command, "config": cfg, "seed": args.seed, "config_digest": digest}
    rng = np.random.default_rng(args.seed)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = HANDLERS[args.command](cfg, rng, out)
    except PreconditionError as exc:
        write_json(out / f"{args.command}.json", dict(header, status="precondition", error=str(exc),
                                                     diagnostics=getattr(exc, "diagnostics", {})))
        print(f"{args.command}: precondition failure: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except NumericalError as exc:
        write_json(out / f"{args.command}.json", dict(header, status="numerical", error=str(exc),
                                                     diagnostics=getattr(exc, "diagnostics", {})))
        print(f"{args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    status = "pass" if result.get("pass", True) else "fail"
    write_json(out / f"{args.command}.json", dict(header, status=status, result=result))
    print(f"{args.command}: {status} (digest {digest[:12]})")
    return EXIT_OK if status == "pass" else EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
