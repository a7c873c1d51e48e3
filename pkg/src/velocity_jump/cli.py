"""Command-line interface.

Exit codes: 0 success, 1 bad input, 2 invariant failure, 3 I/O failure.
Output goes to ``--out-dir``, else ``$VELOCITY_JUMP_OUT``, else the current
directory.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__, compare, expansion, montecarlo, spectral
from .algebra import OperatorPoly
from .model import ModelConfig, build_L, det_model, perturbation_series, reconcile_published

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT, EXIT_IO = 0, 1, 2, 3

DEFAULTS: Dict[str, str] = {
    "n": "3",
    "v": "1.0",
    "lambda": "1.0",
    "eps": "",
    "L": "16.0",
    "m": "32",
    "init": "gaussian",
    "sigma0": "1.0",
    "subset": "full",
    "t_grid": "0.25,0.5,0.75,1.0",
    "t_eval": "1.0",
    "eps_list": "0.4,0.2,0.1",
    "k_list": "0,1",
    "split": "slow",
    "resolution_tol": "1e-6",
    "N": "100000",
    "seed": "0",
    "initial_state": "uniform",
    "mc_sigma0": "0.0",
    "chunk_size": "8192",
    "workers": "1",
    "histogram_bins": "0",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # exit code 2 is reserved for invariant failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def read_config(path: Optional[str], overrides: Sequence[str] = ()) -> Dict[str, str]:
    """Parse a ``key = value`` file (``#`` comments) and apply ``key=value`` overrides."""
    conf = dict(DEFAULTS)
    lines: List[str] = []
    if path:
        lines.extend(Path(path).read_text().splitlines())
    lines.extend(overrides)
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        conf[key] = value
    return conf


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def model_config(conf) -> ModelConfig:
    eps = float(conf["eps"]) if conf["eps"] else None
    return ModelConfig(int(conf["n"]), float(conf["v"]), float(conf["lambda"]), eps)


def grid_config(conf) -> spectral.SpectralGrid:
    return spectral.SpectralGrid(int(conf["n"]), float(conf["L"]), int(conf["m"]))


def initial_condition(conf) -> spectral.InitialCondition:
    return spectral.InitialCondition(conf["init"], float(conf["sigma0"]))


def run_config(conf, seed: Optional[int] = None) -> montecarlo.RunConfig:
    init_state = conf["initial_state"]
    return montecarlo.RunConfig(
        cfg=model_config(conf),
        N=int(conf["N"]),
        t_grid=_floats(conf["t_grid"]),
        seed=int(conf["seed"]) if seed is None else seed,
        initial_state=init_state if init_state == "uniform" else int(init_state),
        sigma0=float(conf["mc_sigma0"]),
        chunk_size=int(conf["chunk_size"]),
        workers=int(conf["workers"]),
    )


def compare_spec(conf) -> compare.CompareSpec:
    return compare.CompareSpec(
        n=int(conf["n"]),
        eps_list=_floats(conf["eps_list"]),
        k_list=_ints(conf["k_list"]),
        t_eval=float(conf["t_eval"]),
        grid=grid_config(conf),
        init=initial_condition(conf),
        split=conf["split"],
        resolution_tol=float(conf["resolution_tol"]),
    )


# -- output ------------------------------------------------------------------------

def out_dir(args) -> Path:
    d = Path(args.out_dir or os.environ.get("VELOCITY_JUMP_OUT") or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_atomic(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path: Path, rows: Sequence[Sequence]) -> Path:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return write_atomic(path, buf.getvalue())


def write_json(path: Path, obj) -> Path:
    return write_atomic(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def write_manifest(directory: Path, command: str, conf: Dict[str, str], outputs: List[Path], extra=None):
    manifest = {
        "command": command,
        "version": __version__,
        "config": conf,
        "outputs": [p.name for p in outputs],
        "created_unix": int(time.time()),
    }
    if extra:
        manifest.update(extra)
    return write_json(directory / f"{command}_manifest.json", manifest)


def field_csv_rows(field: spectral.SpectralField) -> List[List[str]]:
    n = field.grid.n
    rows = [[f"k_{a + 1}" for a in range(n)] + ["re", "im"]]
    for kv, val in zip(field.k, field.values):
        rows.append([repr(float(x)) for x in kv] + [repr(float(val.real)), repr(float(val.imag))])
    return rows


# -- commands ------------------------------------------------------------------------

def cmd_verify(args) -> int:
    rep = compare.verify(args.n)
    d = out_dir(args)
    outputs = [write_json(d / f"verify_n{args.n}.json", rep.to_json())]
    for what, report in rep.reconciliations.items():
        outputs.append(write_json(d / f"reconcile_{what}_n{args.n}.json", report.to_json()))
        outputs.append(write_csv(d / f"reconcile_{what}_n{args.n}.csv", report.csv_rows()))
    for name, passed, detail in rep.checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f"  ({detail})" if detail else ""))
    for note in rep.notes:
        print(f"  note: {note}")
    return EXIT_OK if rep.ok else EXIT_INVARIANT


def _emit_object(what: str, n: int):
    if what == "L":
        return {"n": n, "matrix": [[p.to_json() for p in row] for row in build_L(n)]}
    if what == "det":
        return {"n": n, "monomials": det_model(n).to_json()}
    if what == "series":
        return perturbation_series(n).to_json()
    if what == "reconcile":
        return reconcile_published(n, "det").to_json()
    raise UsageError(f"unknown object {what!r}")


def cmd_emit(args) -> int:
    obj = _emit_object(args.what, args.n)
    if args.json:
        write_json(Path(args.json), obj)
    else:
        print(json.dumps(obj, indent=2))
    if args.what == "reconcile":
        target = Path(args.csv) if args.csv else out_dir(args) / f"reconcile_det_n{args.n}.csv"
        write_csv(target, reconcile_published(args.n, "det").csv_rows())
    return EXIT_OK


def cmd_series(args) -> int:
    obj = perturbation_series(args.n).to_json()
    if args.json:
        write_json(Path(args.json), obj)
    else:
        print(json.dumps(obj, indent=2))
    return EXIT_OK


def cmd_solve(args) -> int:
    conf = read_config(args.config, args.set)
    cfg, grid, init = model_config(conf), grid_config(conf), initial_condition(conf)
    t_grid = _floats(conf["t_grid"])
    state = spectral.ModeSystemState.initial(grid, init, subset=conf["subset"])
    n = cfg.n
    rows = [["t", "mass"] + [f"mean_{a + 1}" for a in range(n)] + [f"var_{a + 1}" for a in range(n)]]

    def record(st):
        mom = spectral.moments(spectral.density(st))
        rows.append([repr(st.t), repr(float(mom.mass))] + [repr(float(x)) for x in mom.mean]
                    + [repr(float(x)) for x in mom.variance])

    if t_grid and t_grid[0] == 0.0:
        record(state)
    for t in t_grid:
        if t > state.t:
            state = spectral.evolve(state, t - state.t, cfg, workers=int(conf["workers"]))
            record(state)
    d = out_dir(args)
    outputs = [write_csv(d / "solve_moments.csv", rows)]
    if args.dump_field:
        outputs.append(write_csv(d / "solve_field.csv", field_csv_rows(spectral.density(state))))
    write_manifest(d, "solve", conf, outputs)
    return EXIT_OK


def cmd_simulate(args) -> int:
    conf = read_config(args.config, args.set)
    if args.seed is not None:
        conf["seed"] = str(args.seed)
    rc = run_config(conf)
    est = montecarlo.simulate_batch(rc)
    n = rc.cfg.n
    rows = [["t"] + [f"mean_{a + 1}" for a in range(n)] + [f"m2_{a + 1}" for a in range(n)]
            + [f"se_{a + 1}" for a in range(n)]]
    for ti, t in enumerate(rc.t_grid):
        rows.append([repr(t)] + [repr(float(x)) for x in est.mean[ti]] + [repr(float(x)) for x in est.m2[ti]]
                    + [repr(float(x)) for x in est.se_m2[ti]])
    d = out_dir(args)
    outputs = [write_csv(d / "simulate_moments.csv", rows)]
    bins = int(conf["histogram_bins"])
    if bins > 0:
        hist = montecarlo.empirical_density(rc, rc.t_grid[-1], bins=bins,
                                            half_width=rc.cfg.v * rc.t_grid[-1] + 6 * rc.sigma0 + 1e-9)
        mesh = np.meshgrid(*hist.centers, indexing="ij")
        hrows = [[f"bin_center_{a + 1}" for a in range(n)] + ["mass"]]
        mass = hist.density * hist.bin_volume
        for idx in np.ndindex(mass.shape):
            hrows.append([repr(float(m[idx])) for m in mesh] + [repr(float(mass[idx]))])
        outputs.append(write_csv(d / "simulate_histogram.csv", hrows))
    write_manifest(d, "simulate", conf, outputs,
                   {"seed": rc.seed, "N": rc.N, "model": asdict(rc.cfg)})
    return EXIT_OK


def cmd_expand(args) -> int:
    conf = read_config(args.config, args.set)
    spec = compare_spec(conf)
    spec = compare.CompareSpec(**{**spec.__dict__, "k_list": tuple(range(args.k + 1))})
    table = compare.run_compare(spec, workers=int(conf["workers"]))
    d = out_dir(args)
    rows = [table.csv_rows()[0]] + [r for r in table.csv_rows()[1:] if int(r[1]) == args.k]
    outputs = [write_csv(d / f"expand_k{args.k}.csv", rows)]
    if args.dump_field:
        stack = expansion.build_stack(perturbation_series(spec.n), spec.grid, spec.init, args.k,
                                      split=spec.split)
        for eps in spec.eps_list:
            field = expansion.assemble(stack, eps, args.k, spec.t_eval)
            outputs.append(write_csv(d / f"expand_k{args.k}_eps{eps:g}_field.csv", field_csv_rows(field)))
    write_manifest(d, "expand", conf, outputs, {"slopes": {str(k): v for k, v in table.slopes.items()}})
    slope, resid = table.slopes[args.k]
    print(f"k={args.k}: fitted slope {slope:.3f} (rms log residual {resid:.2e})")
    return EXIT_OK


def cmd_compare(args) -> int:
    conf = read_config(args.config, args.set)
    spec = compare_spec(conf)
    table = compare.run_compare(spec, workers=int(conf["workers"]))
    d = out_dir(args)
    outputs = [write_csv(d / "compare_convergence.csv", table.csv_rows())]
    if int(conf["N"]) > 0 and args.with_mc:
        rc = run_config(conf)
        rows = compare.reference_vs_montecarlo(rc, spectral.SpectralGrid(rc.cfg.n, float(conf["L"]), int(conf["m"])))
        head = ["t", "axis", "var_ref", "var_mc", "se_mc", "rel_diff"]
        outputs.append(write_csv(d / "compare_montecarlo.csv", [head] + [[repr(r[h]) for h in head] for r in rows]))
    write_manifest(d, "compare", conf, outputs, {"slopes": {str(k): v for k, v in table.slopes.items()}})
    for k, (slope, resid) in table.slopes.items():
        print(f"k={k}: fitted slope {slope:.3f} (rms log residual {resid:.2e})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="velocity-jump", description=__doc__.splitlines()[0])
    p.add_argument("--out-dir", default=None, help="directory for output files")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="check the symbolic invariants")
    v.add_argument("--n", type=int, required=True)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("series", help="normalized perturbation series as JSON")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--json", default=None, help="output path (stdout if omitted)")
    s.set_defaults(func=cmd_series)

    e = sub.add_parser("emit", help="emit a symbolic object as JSON")
    e.add_argument("--what", choices=["L", "det", "series", "reconcile"], required=True)
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--json", default=None)
    e.add_argument("--csv", default=None, help="reconciliation CSV path")
    e.set_defaults(func=cmd_emit)

    for name, func, helptext in [
        ("solve", cmd_solve, "spectral reference solution, moments over t_grid"),
        ("simulate", cmd_simulate, "Monte Carlo moments over t_grid"),
        ("expand", cmd_expand, "expansion error for one truncation order"),
        ("compare", cmd_compare, "convergence table over eps_list and k_list"),
    ]:
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--config", default=None, help="key=value configuration file")
        c.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration entry")
        c.set_defaults(func=func)
        if name == "simulate":
            c.add_argument("--seed", type=int, default=None)
        if name == "expand":
            c.add_argument("--k", type=int, required=True)
        if name in ("solve", "expand"):
            c.add_argument("--dump-field", action="store_true", help="also write spectral field CSV")
        if name == "compare":
            c.add_argument("--with-mc", action="store_true", help="add the Monte Carlo variance check")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AssertionError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
