"""Command line entry point: ``movns <subcommand> --config run.cfg``.

Subcommands
-----------
simulate     one trajectory; energy, coefficient and field CSVs plus a manifest
verify       geometry / basis / assembly invariant suites on the configured map
convergence  strong_rate and galerkin_cauchy
montecarlo   uniform_bound_mc

Exit status: 0 success, 1 configuration error, 2 numerical error,
3 a diagnostic report failed.
"""
from __future__ import annotations

import argparse
import datetime
import os
import sys

import numpy as np

from . import __version__, _kernels
from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_DIAGNOSTIC = 0, 1, 2, 3
SUBCOMMANDS = ("simulate", "verify", "convergence", "montecarlo")
FMT = "%.17g"


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration code; 2 means numerical failure."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="movns", description=__doc__.split("\n")[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="Brownian seed (overrides solver.seed)")
    p.add_argument("--threads", type=int, help="numba worker threads (overrides run.threads)")
    return p


def set_threads(n):
    if _kernels.HAVE_NUMBA:
        import numba

        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------------------
# outputs

def write_manifest(out_dir, subcommand, config, seed):
    """Only the ``timestamp`` line differs between identical runs."""
    path = os.path.join(out_dir, "manifest.txt")
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    with open(path, "w") as fh:
        fh.write(f"timestamp = {stamp}\n")
        fh.write(f"subcommand = {subcommand}\n")
        fh.write(f"seed = {seed}\n")
        fh.write(f"version = {__version__}\n")
        fh.write(f"backend = {_kernels.get_backend()}\n")
        fh.write("# effective configuration\n")
        fh.write(config.echo())
    return path


def _savetxt(path, cols, header, fmt=FMT):
    np.savetxt(path, np.column_stack(cols), fmt=fmt, delimiter=",", header=header,
               comments="")


def field_indices(N, count):
    if count <= 0:
        return []
    if count == 1:
        return [N]
    return sorted({int(round(k * N / (count - 1))) for k in range(count)})


def physical_grid(dmap, t, res):
    """Regular ``res x res`` grid over the bounding box of ``D(t)``."""
    s = np.linspace(0.0, 1.0, 101)
    edge = np.concatenate([np.stack([s, 0 * s], -1), np.stack([s, 0 * s + 1], -1),
                           np.stack([0 * s, s], -1), np.stack([0 * s + 1, s], -1)])
    x = dmap.inverse(edge, t)
    lo, hi = x.min(axis=0), x.max(axis=0)
    a, b = np.meshgrid(np.linspace(lo[0], hi[0], res), np.linspace(lo[1], hi[1], res),
                       indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=-1)


def run_simulate(config, out_dir):
    from .solver import build_problem, energy_series, grad_energy_series, reconstruct, solve

    problem = build_problem(config)
    traj = solve(problem, config.seed)
    t = problem.grid.nodes
    _savetxt(os.path.join(out_dir, "energy.csv"),
             [t, energy_series(traj), grad_energy_series(traj, problem.tensors), traj.path.W],
             "t,energy,grad_energy,W")
    names = ",".join(f"g_{j + 1}" for j in range(problem.m))
    _savetxt(os.path.join(out_dir, "coeffs.csv"), [t, traj.g], f"t,{names}")
    for n in field_indices(problem.grid.N, config.field_count):
        pts = physical_grid(problem.dmap, float(t[n]), config.field_resolution)
        u, inside = reconstruct(problem, traj.g[n], n, pts, strict=False)
        _savetxt(os.path.join(out_dir, f"field_t{n}.csv"),
                 [pts, u, inside.astype(int)], "x1,x2,u1,u2,inside_flag",
                 fmt=[FMT] * 4 + ["%d"])
    if problem.ic_remainder > 0:
        print(f"initial data outside the span: remainder norm {problem.ic_remainder:.6g}")
    print(f"simulate: {problem.grid.N} steps, m = {problem.m}, "
          f"final energy {energy_series(traj)[-1]:.6g}")
    return []


def run_verify(config, out_dir):
    from .diagnostics import verify

    return verify(config)


def run_convergence(config, out_dir):
    from .diagnostics import galerkin_cauchy, strong_rate

    return [strong_rate(config), galerkin_cauchy(config)]


def run_montecarlo(config, out_dir):
    from .diagnostics import uniform_bound_mc

    return [uniform_bound_mc(config)]


RUNNERS = {"simulate": run_simulate, "verify": run_verify,
           "convergence": run_convergence, "montecarlo": run_montecarlo}


def emit_reports(reports, out_dir):
    with open(os.path.join(out_dir, "reports.txt"), "w") as fh:
        for r in reports:
            text = r.to_text()
            fh.write(text)
            sys.stdout.write(text)
            r.write_csv(out_dir)


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .config import load_config

    try:
        config = load_config(args.config)
        changes = {}
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be a non-negative integer")
            changes["seed"] = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            changes["threads"] = args.threads
        if args.out is not None:
            changes["out_dir"] = args.out
        config = config.replace(**changes)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    set_threads(config.threads)
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(out_dir, args.subcommand, config, config.seed)
    try:
        reports = RUNNERS[args.subcommand](config, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    emit_reports(reports, out_dir)
    failed = [r for r in reports if not r.passed]
    for r in failed:
        for c in r.failed_checks:
            print(f"FAILED {r.name}: {c.name}", file=sys.stderr)
    return EXIT_DIAGNOSTIC if failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
