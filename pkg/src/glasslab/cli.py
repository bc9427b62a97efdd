"""Command-line experiment driver.

Every run resolves its configuration (flags, with GLASSLAB_SEED as seed
fallback), dispatches to one module, and emits a self-describing JSON
artifact — schema version, tool versions, argv, resolved inputs, outputs,
seed, wall time — so any external tool can re-run or plot it. Commands
whose primary product is a domain object (Hamiltonians, states, kernels)
write that object to ``--out`` in its documented schema and print the run
artifact to stdout; report-style commands write the artifact itself.

Exit codes: 0 success, 1 domain error (bad inputs, size caps), 2 numerical
failure, 64 usage.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__, analytic, exactq, glass, pauli, transport
from . import rng as _rng
from .errors import DomainError, NumericalError
from .replica import (
    ImaginaryTimeKernel,
    RsSolverConfig,
    kernel_from_json,
    kernel_to_json,
    liouville_init,
    rs_solve,
    rs_transition_scan,
    tap_complexity,
)

__all__ = ["main", "build_parser"]

SCHEMA_VERSION = 1
_USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 64."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(_USAGE_EXIT, f"{self.prog}: error: {message}\n")


# --- flag value parsing -------------------------------------------------------


def parse_float_range(text: str) -> list[float]:
    """Float grid: 'a:b:step' (inclusive ends), 'x,y,z', or a single value."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
        start, stop, step = (float(v) for v in parts)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + k * step for k in range(count)]
    if "," in text:
        return [float(v) for v in text.split(",") if v.strip()]
    return [float(text)]


def parse_int_range(text: str) -> list[int]:
    """Integer grid: 'a..b' (inclusive), 'x,y,z', or a single value."""
    text = text.strip()
    if ".." in text:
        lo_s, hi_s = text.split("..", 1)
        lo, hi = int(lo_s), int(hi_s)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        return list(range(lo, hi + 1))
    if "," in text:
        return [int(v) for v in text.split(",") if v.strip()]
    return [int(text)]


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("GLASSLAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise DomainError(f"GLASSLAB_SEED must be an integer, got {env!r}") from exc
    return 0


# --- artifact plumbing --------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def _artifact(subcommand: str, seed: int | None, inputs: dict, outputs: dict,
              t0: float, argv: list[str]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "generator": {
            "name": "glasslab",
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "subcommand": subcommand,
        "argv": list(argv),
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "wall_seconds": round(time.perf_counter() - t0, 6),
    }


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default)
    if out is None or out == "-":
        print(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")


def _initial_state(n: int, kind: str, gen: np.random.Generator) -> exactq.DensityState:
    if kind == "plus":
        return exactq.plus_product_state(n)
    if kind == "mixed":
        return exactq.maximally_mixed(n)
    if kind == "random":
        return exactq.random_density_state(n, gen)
    raise DomainError(f"unknown initial state {kind!r}")


# --- subcommand handlers --------------------------------------------------------


def _cmd_ensemble_sample(args, argv) -> int:
    t0 = time.perf_counter()
    seed = _resolve_seed(args.seed)
    ham = pauli.sample_ensemble(args.n, args.p, args.J, seed, letters=args.letters)
    doc = pauli.ham_to_json(ham)
    if args.out:
        _write_text(args.out, doc)
    outputs = {
        "n_terms": len(ham.strings),
        "ensemble_variance": pauli.ensemble_variance(args.n, args.p, args.J),
        "coeff_sq_sum": float(np.sum(ham.coeffs**2)),
        "out": args.out,
    }
    inputs = {"n": args.n, "p": args.p, "J": args.J, "letters": args.letters}
    _emit(_artifact("ensemble sample", seed, inputs, outputs, t0, argv),
          None if args.out else "-")
    return 0


def _cmd_gibbs(args, argv) -> int:
    t0 = time.perf_counter()
    seed = _resolve_seed(args.seed)
    if args.ham:
        with open(args.ham, encoding="utf-8") as fh:
            ham = pauli.ham_from_json(fh.read())
        source = {"ham": args.ham}
    else:
        if args.n is None or args.p is None:
            raise DomainError("gibbs needs --ham or --n/--p (with optional --J, --seed)")
        ham = pauli.sample_ensemble(args.n, args.p, args.J, seed)
        source = {"n": args.n, "p": args.p, "J": args.J}
    result = exactq.gibbs_state(pauli.to_dense(ham), args.beta)
    if args.out:
        _write_text(args.out, exactq.state_to_json(result.state))
    outputs = {
        "log_z": result.log_z,
        "free_energy": result.free_energy,
        "purity": float(np.real(np.trace(result.state.matrix @ result.state.matrix))),
        "out": args.out,
    }
    _emit(_artifact("gibbs", seed, {**source, "beta": args.beta}, outputs, t0, argv),
          None if args.out else "-")
    return 0


def _cmd_lindblad_evolve(args, argv) -> int:
    t0 = time.perf_counter()
    seed = _resolve_seed(args.seed)
    gen = _rng.derive(seed, 0)
    spec = exactq.random_lindblad_spec(args.n, gen)
    rho0 = _initial_state(args.n, args.init, gen)
    state = exactq.lindblad_evolve(spec, rho0, args.beta, args.t, backend=args.backend)
    if args.out:
        _write_text(args.out, exactq.state_to_json(state))
    inputs = {
        "n": args.n, "beta": args.beta, "t": args.t,
        "backend": args.backend, "init": args.init,
        "n_jumps": len(spec.jumps),
        "beta_domain": list(spec.beta_domain()),
    }
    outputs = {
        "purity": float(np.real(np.trace(state.matrix @ state.matrix))),
        "bloch_table": transport.bloch_table(state),
        "out": args.out,
    }
    _emit(_artifact("lindblad evolve", seed, inputs, outputs, t0, argv),
          None if args.out else "-")
    return 0


def _cmd_stability_scan(args, argv) -> int:
    t0 = time.perf_counter()
    seed = _resolve_seed(args.seed)
    gen = _rng.derive(seed, 0 if args.algorithm == "lindblad" else 1)
    betas = args.betas
    if args.algorithm == "lindblad":
        spec = exactq.random_lindblad_spec(args.n, gen)
        theta = None
        if args.t is None:
            raise DomainError("--t is required for --algorithm lindblad")
    else:
        spec = exactq.random_shallow_spec(args.n, gen, num_layers=args.depth)
        theta = gen.uniform(-np.pi, np.pi, spec.num_gates())
    rho0 = _initial_state(args.n, args.init, gen)
    report = exactq.stability_experiment(
        args.algorithm, spec, rho0, betas,
        t=args.t, theta=theta, max_beta_gap=args.max_beta_gap,
    )
    inputs = {
        "algorithm": args.algorithm, "n": args.n, "betas": betas,
        "t": args.t, "depth": args.depth, "init": args.init,
        "max_beta_gap": args.max_beta_gap,
    }
    _emit(_artifact("stability scan", seed, inputs, report.to_dict(), t0, argv), args.out)
    return 0


def _cmd_transport_w1(args, argv) -> int:
    t0 = time.perf_counter()
    with open(args.state_a, encoding="utf-8") as fh:
        sa = exactq.state_from_json(fh.read())
    with open(args.state_b, encoding="utf-8") as fh:
        sb = exactq.state_from_json(fh.read())
    outputs = {
        "w1_lower": transport.w1_lower(sa.matrix, sb.matrix),
        "w1_upper": transport.w1_upper(sa.matrix, sb.matrix),
        "pauli_sq_dist": transport.pauli_sq_dist(sa.matrix, sb.matrix),
        "trace_distance": transport.trace_distance(sa.matrix, sb.matrix),
    }
    if args.exact:
        res = transport.w1_exact_small(sa.matrix, sb.matrix)
        outputs["w1_exact"] = res.value
        outputs["duality_gap"] = res.duality_gap
        outputs["solver"] = res.solver
    inputs = {"state_a": args.state_a, "state_b": args.state_b, "exact": args.exact, "n": sa.n}
    _emit(_artifact("transport w1", None, inputs, outputs, t0, argv), args.out)
    return 0


def _cmd_glass_scan(args, argv) -> int:
    t0 = time.perf_counter()
    if not args.ensemble.startswith("p") or not args.ensemble[1:].isdigit():
        raise DomainError(f"--ensemble must look like 'p3', got {args.ensemble!r}")
    p = int(args.ensemble[1:])
    rows = glass.transition_scan(
        args.n, p, args.J, args.betas, args.seeds,
        q=args.q, weight_floor=args.weight_floor, workers=args.threads,
    )
    glass.write_scan_csv(rows, args.out)
    inputs = {
        "ensemble": args.ensemble, "n": args.n, "J": args.J,
        "betas": args.betas, "seeds": args.seeds,
        "q": args.q, "weight_floor": args.weight_floor,
    }
    outputs = {
        "rows": len(rows),
        "columns": list(glass.SCAN_COLUMNS),
        "out": args.out,
    }
    _emit(_artifact("glass scan", None, inputs, outputs, t0, argv), None)
    return 0


def _cmd_replica_rs_solve(args, argv) -> int:
    t0 = time.perf_counter()
    seed = _resolve_seed(args.seed)
    config = RsSolverConfig(
        n_tau=args.ntau,
        n_z=args.nz,
        n_xi=args.nxi,
        n_xi_two_point=args.nxi_two_point,
        tolerance=args.tolerance,
        max_iters=args.max_iters,
        seed=seed,
        q0_init=args.q0_init,
        tilt_steps=args.tilt_steps,
    )
    kernel, report = rs_solve(args.betaJ / args.J, args.J, args.p, config,
                              workers=args.threads)
    if args.out:
        _write_text(args.out, kernel_to_json(kernel))
    inputs = {
        "p": args.p, "J": args.J, "betaJ": args.betaJ,
        "ntau": args.ntau, "nz": args.nz, "nxi": args.nxi,
        "tolerance": args.tolerance, "max_iters": args.max_iters,
        "q0_init": args.q0_init, "tilt_steps": args.tilt_steps,
    }
    outputs = {**report.as_dict(), "out": args.out}
    _emit(_artifact("replica rs-solve", seed, inputs, outputs, t0, argv),
          None if args.out else "-")
    return 0


def _cmd_replica_tap(args, argv) -> int:
    t0 = time.perf_counter()
    seed = _resolve_seed(args.seed)
    if args.kernel:
        with open(args.kernel, encoding="utf-8") as fh:
            kernel = kernel_from_json(fh.read())
        source = {"kernel": args.kernel}
    else:
        if args.betaJ is None or args.p is None:
            raise DomainError("replica tap needs --kernel or --p/--betaJ")
        kernel = liouville_init(args.betaJ / args.J, args.J, args.p, args.ntau)
        source = {"p": args.p, "J": args.J, "betaJ": args.betaJ, "ntau": args.ntau}
    est = tap_complexity(kernel, args.q1, n_z=args.nz, n_xi=args.nxi, seed=seed,
                         workers=args.threads, tilt_steps=args.tilt_steps)
    inputs = {**source, "q1": args.q1, "nz": args.nz, "nxi": args.nxi,
              "tilt_steps": args.tilt_steps}
    _emit(_artifact("replica tap", seed, inputs, est.as_dict(), t0, argv), args.out)
    return 0


def _cmd_replica_scan(args, argv) -> int:
    t0 = time.perf_counter()
    seed = _resolve_seed(args.seed)

    def progress(pt) -> None:
        print(
            f"{pt.branch:4s} betaJ={pt.betaJ:4.1f} q0={pt.q0:6.3f}"
            f" conv={int(pt.converged)} abort={int(pt.aborted)}"
            f" iters={pt.iterations} {pt.seconds:6.1f}s",
            file=sys.stderr, flush=True,
        )

    scan = rs_transition_scan(
        args.p, args.J,
        betaJ_values=args.betas,
        n_tau=args.ntau, n_z=args.nz, seed=seed, workers=args.threads,
        up_stop=args.up_stop, down_stop=args.down_stop,
        progress=progress if args.verbose else None,
    )
    inputs = {
        "p": args.p, "J": args.J, "betas": args.betas,
        "ntau": args.ntau, "nz": args.nz,
        "up_stop": args.up_stop, "down_stop": args.down_stop,
    }
    _emit(_artifact("replica scan", seed, inputs, scan.as_dict(), t0, argv), args.out)
    return 0


def _cmd_analytic_transition(args, argv) -> int:
    t0 = time.perf_counter()
    report = analytic.transition_report(args.p, args.q0)
    _emit(_artifact("analytic transition", None, report.inputs,
                    {**report.outputs, "formulas": list(report.formulas)}, t0, argv),
          args.out)
    return 0


def _cmd_analytic_lsi(args, argv) -> int:
    t0 = time.perf_counter()
    report = analytic.lsi_report(args.betaJ, args.q1, p_max=args.pmax)
    _emit(_artifact("analytic lsi", None, report.inputs,
                    {**report.outputs, "formulas": list(report.formulas)}, t0, argv),
          args.out)
    return 0


# --- parser construction --------------------------------------------------------


def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed (default: $GLASSLAB_SEED, else 0)")


def _add_threads(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=1,
                   help="worker-thread cap for parallel sections (default 1)")


def _usage_func(p: argparse.ArgumentParser):
    """Fallback handler for a group command given without an action."""

    def f(args, argv) -> int:
        p.print_usage(sys.stderr)
        return _USAGE_EXIT

    return f


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="glasslab",
                   description="Experiments on random p-local qubit ensembles.")
    sub = root.add_subparsers(dest="command", metavar="command")

    # ensemble
    ens = sub.add_parser("ensemble", help="random Hamiltonian ensemble")
    ens.set_defaults(func=_usage_func(ens))
    ens_sub = ens.add_subparsers(dest="action", metavar="action")
    s = ens_sub.add_parser("sample", help="draw one Hamiltonian and write its JSON")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--J", type=float, default=1.0)
    s.add_argument("--letters", default="XYZ")
    s.add_argument("--out", help="Hamiltonian JSON path (artifact goes to stdout)")
    _add_seed(s)
    s.set_defaults(func=_cmd_ensemble_sample)

    # gibbs
    g = sub.add_parser("gibbs", help="exact Gibbs state of a sampled or loaded Hamiltonian")
    g.add_argument("--ham", help="Hamiltonian JSON (overrides --n/--p/--J)")
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--J", type=float, default=1.0)
    g.add_argument("--beta", type=float, required=True)
    g.add_argument("--out", help="state JSON path (artifact goes to stdout)")
    _add_seed(g)
    g.set_defaults(func=_cmd_gibbs)

    # lindblad
    lin = sub.add_parser("lindblad", help="thermal Lindblad evolution")
    lin.set_defaults(func=_usage_func(lin))
    lin_sub = lin.add_subparsers(dest="action", metavar="action")
    le = lin_sub.add_parser("evolve", help="evolve a seeded random instance")
    le.add_argument("--n", type=int, required=True)
    le.add_argument("--beta", type=float, required=True)
    le.add_argument("--t", type=float, required=True)
    le.add_argument("--backend", choices=["auto", "superop", "ode"], default="auto")
    le.add_argument("--init", choices=["plus", "mixed", "random"], default="plus")
    le.add_argument("--out", help="state JSON path (artifact goes to stdout)")
    _add_seed(le)
    le.set_defaults(func=_cmd_lindblad_evolve)

    # stability
    st = sub.add_parser("stability", help="temperature-stability experiments")
    st.set_defaults(func=_usage_func(st))
    st_sub = st.add_subparsers(dest="action", metavar="action")
    ss = st_sub.add_parser("scan", help="pairwise transport-vs-budget comparison")
    ss.add_argument("--algorithm", choices=["lindblad", "shallow"], required=True)
    ss.add_argument("--n", type=int, required=True)
    ss.add_argument("--betas", type=parse_float_range, required=True,
                    help="temperature grid, e.g. 0.5:2:0.25")
    ss.add_argument("--t", type=float, help="evolution time (lindblad)")
    ss.add_argument("--depth", type=int, default=2, help="layers (shallow)")
    ss.add_argument("--init", choices=["plus", "mixed", "random"], default="plus")
    ss.add_argument("--max-beta-gap", type=float, default=None)
    ss.add_argument("--out", help="report JSON path (default stdout)")
    _add_seed(ss)
    ss.set_defaults(func=_cmd_stability_scan)

    # transport
    tr = sub.add_parser("transport", help="transport distance bounds")
    tr.set_defaults(func=_usage_func(tr))
    tr_sub = tr.add_subparsers(dest="action", metavar="action")
    tw = tr_sub.add_parser("w1", help="W1 bounds between two serialized states")
    tw.add_argument("--state-a", required=True)
    tw.add_argument("--state-b", required=True)
    tw.add_argument("--exact", action="store_true",
                    help="also solve the exact small-n transport program")
    tw.add_argument("--out", help="artifact path (default stdout)")
    tw.set_defaults(func=_cmd_transport_w1)

    # glass
    gl = sub.add_parser("glass", help="cluster decomposition experiments")
    gl.set_defaults(func=_usage_func(gl))
    gl_sub = gl.add_subparsers(dest="action", metavar="action")
    gs = gl_sub.add_parser("scan", help="cluster count across a temperature grid")
    gs.add_argument("--ensemble", required=True, help="ensemble tag, e.g. p3")
    gs.add_argument("--n", type=int, required=True)
    gs.add_argument("--J", type=float, default=1.0)
    gs.add_argument("--betas", type=parse_float_range, required=True)
    gs.add_argument("--seeds", type=parse_int_range, required=True)
    gs.add_argument("--q", type=float, default=1.0)
    gs.add_argument("--weight-floor", type=float, default=glass.DEFAULT_WEIGHT_FLOOR)
    gs.add_argument("--out", required=True, help="CSV path")
    _add_threads(gs)
    gs.set_defaults(func=_cmd_glass_scan)

    # replica
    rep = sub.add_parser("replica", help="imaginary-time saddle-point solvers")
    rep.set_defaults(func=_usage_func(rep))
    rep_sub = rep.add_subparsers(dest="action", metavar="action")

    rs = rep_sub.add_parser("rs-solve", help="solve the RS fixed point at one coupling")
    rs.add_argument("--p", type=int, required=True)
    rs.add_argument("--betaJ", type=float, required=True)
    rs.add_argument("--J", type=float, default=1.0)
    rs.add_argument("--ntau", type=int, default=256)
    rs.add_argument("--nz", type=int, default=512)
    rs.add_argument("--nxi", type=int, default=512)
    rs.add_argument("--nxi-two-point", type=int, default=None)
    rs.add_argument("--tolerance", type=float, default=5e-3)
    rs.add_argument("--max-iters", type=int, default=40)
    rs.add_argument("--q0-init", type=float, default=0.8)
    rs.add_argument("--tilt-steps", type=int, default=0,
                    help="importance-shift ascent steps (strong coupling only)")
    rs.add_argument("--out", help="kernel JSON path (artifact goes to stdout)")
    _add_seed(rs)
    _add_threads(rs)
    rs.set_defaults(func=_cmd_replica_rs_solve)

    rt = rep_sub.add_parser("tap", help="m=1 complexity at an inner overlap")
    rt.add_argument("--q1", type=float, required=True)
    rt.add_argument("--kernel", help="kernel JSON from rs-solve")
    rt.add_argument("--p", type=int)
    rt.add_argument("--betaJ", type=float)
    rt.add_argument("--J", type=float, default=1.0)
    rt.add_argument("--ntau", type=int, default=256)
    rt.add_argument("--nz", type=int, default=512)
    rt.add_argument("--nxi", type=int, default=512)
    rt.add_argument("--tilt-steps", type=int, default=8)
    rt.add_argument("--out", help="artifact path (default stdout)")
    _add_seed(rt)
    _add_threads(rt)
    rt.set_defaults(func=_cmd_replica_tap)

    rc = rep_sub.add_parser("scan", help="two-branch overlap scan across couplings")
    rc.add_argument("--p", type=int, default=3)
    rc.add_argument("--J", type=float, default=1.0)
    rc.add_argument("--betas", type=parse_float_range, default=None,
                    help="coupling grid (default 1:10:0.5)")
    rc.add_argument("--ntau", type=int, default=256)
    rc.add_argument("--nz", type=int, default=512)
    rc.add_argument("--up-stop", type=float, default=5.5)
    rc.add_argument("--down-stop", type=float, default=6.0)
    rc.add_argument("--verbose", action="store_true", help="per-point progress on stderr")
    rc.add_argument("--out", help="artifact path (default stdout)")
    _add_seed(rc)
    _add_threads(rc)
    rc.set_defaults(func=_cmd_replica_scan)

    # analytic
    an = sub.add_parser("analytic", help="closed-form mean-field formulas")
    an.set_defaults(func=_usage_func(an))
    an_sub = an.add_subparsers(dest="action", metavar="action")
    at = an_sub.add_parser("transition", help="marginal-stability crossing estimate")
    at.add_argument("--p", type=int, required=True)
    at.add_argument("--q0", type=float, required=True)
    at.add_argument("--out", help="artifact path (default stdout)")
    at.set_defaults(func=_cmd_analytic_transition)

    al = an_sub.add_parser("lsi", help="state-count lower-bound table")
    al.add_argument("--betaJ", type=float, required=True)
    al.add_argument("--q1", type=float, required=True)
    al.add_argument("--pmax", type=int, default=16)
    al.add_argument("--out", help="artifact path (default stdout)")
    al.set_defaults(func=_cmd_analytic_lsi)

    return root


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return _USAGE_EXIT
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return _USAGE_EXIT
    try:
        return args.func(args, argv)
    except DomainError as exc:
        print(f"glasslab: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"glasslab: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
