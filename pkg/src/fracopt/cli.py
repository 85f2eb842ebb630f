"""Configuration-driven runs writing CSV files and a manifest.

Usage: fracopt <subcommand> --config run.ini [--out DIR] [--threads K] [--seed N]

Subcommands: eig, minimize, maximize, decay, rate, sweep, surround.
Exit status 0 on success, 1 on invalid input, 2 when a required solve
did not converge.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass
from pathlib import Path

SUBCOMMANDS = ("eig", "minimize", "maximize", "decay", "rate", "sweep", "surround")

# every accepted key with its default; empty means "not set"
DEFAULTS = {
    "problem": {"n": "1", "s": "0.5", "p": "2", "alpha": "0.5", "R": "2",
                "domain": "interval 0 1", "h": "0.05"},
    "mask": {"kind": "intervals", "intervals": "1 2", "cells": "", "r": "0.5", "k": "4"},
    "potential": {"kind": "none", "value": "1", "file": ""},
    "solver": {"tol": "", "cap": "10000", "restarts": "0"},
    "run": {"seed": "0", "threads": "1"},
    "minimize": {"tol": "1e-12", "cap": "100"},
    "maximize": {"restarts": "4", "cap": "30"},
    "decay": {"r": "0.5", "k": "4 8 16 32"},
    "rate": {"s": "0.5 0.7 0.9 0.99"},
    "sweep": {"s": "0.5 0.6 0.7 0.8 0.9 0.95", "h_max": "0.1", "allow_high_s": "false",
              "minimize": "true", "h_local": "0.001"},
    "surround": {"eps": "0.3", "samples": "", "source": "mask"},
}


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


@dataclass
class RunConfig:
    subcommand: str
    values: dict  # section -> key -> string, defaults filled in
    out: Path
    seed: int
    threads: int

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def number(self, section: str, key: str, kind=float):
        raw = self.get(section, key)
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None

    def numbers(self, section: str, key: str) -> list[float]:
        raw = self.get(section, key).replace(",", " ")
        try:
            return [float(v) for v in raw.split()]
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {self.get(section, key)!r} "
                              "is not a list of numbers") from None

    def flag(self, section: str, key: str) -> bool:
        raw = self.get(section, key).strip().lower()
        if raw in ("1", "true", "yes", "on"):
            return True
        if raw in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a boolean")


def _line(text: str, lineno: int) -> str:
    lines = text.splitlines()
    return lines[lineno - 1].strip() if 0 < lineno <= len(lines) else ""


def read_config(text: str, source: str = "<config>") -> dict:
    """Parse ``[section]`` / ``key = value`` text and fill in defaults."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   comment_prefixes=("#", ";"), delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: malformed config line {exc.lineno}: "
                          f"{_line(text, exc.lineno)!r} (expected a [section] header first)") from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0]
        raise ConfigError(f"{source}: malformed config line {lineno}: {_line(text, lineno)!r}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        for key, val in cp.items(sec):
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"{source}: unknown key {key!r} in [{sec}]")
            values[sec][key] = val.strip()
    return values


def write_manifest(cfg: RunConfig, files: list[str]) -> Path:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["manifest"] = {"subcommand": cfg.subcommand, "files": " ".join(sorted(files))}
    for sec in DEFAULTS:
        cp[sec] = cfg.values[sec]
    path = cfg.out / "manifest.ini"
    with path.open("w") as fh:
        cp.write(fh)
    return path


# --------------------------------------------------------------------------
# building problem objects from the configuration


def _params(cfg: RunConfig, s: float | None = None):
    from .geometry import Params
    return Params(cfg.number("problem", "n", int), cfg.number("problem", "s") if s is None else s,
                  cfg.number("problem", "p"), cfg.number("problem", "alpha"),
                  cfg.number("problem", "R"))


def _potential(cfg: RunConfig):
    from .kernel import Potential
    from .io import read_csv
    kind = cfg.get("potential", "kind").lower()
    if kind == "none":
        return None
    if kind == "constant":
        return Potential.constant(cfg.number("potential", "value"))
    if kind == "table":
        name = cfg.get("potential", "file")
        path = Path(name)
        if not name or not path.is_file():
            raise ConfigError(f"[potential] file {name!r} does not exist")
        _, rows = read_csv(path)
        try:
            starts = [float(r[0]) for r in rows]
            vals = [float(r[1]) for r in rows]
        except (ValueError, IndexError):
            raise ConfigError(f"{path}: expected rows 'x,value'") from None
        if not vals:
            raise ConfigError(f"{path}: potential table is empty")
        # value i holds from starts[i] up to starts[i+1]
        return Potential.piecewise(starts[1:], vals)
    raise ConfigError(f"[potential] unknown kind {kind!r}")


def _mesh(cfg: RunConfig, params):
    from .geometry import build_mesh
    return build_mesh(cfg.get("problem", "domain"), params, cfg.number("problem", "h"))


def _mask(cfg: RunConfig, mesh, params):
    from .geometry import fattened_annulus, mask_from_cells, mask_from_intervals, translated_ball
    kind = cfg.get("mask", "kind").lower()
    if kind == "intervals":
        vals = cfg.numbers("mask", "intervals")
        if len(vals) % 2:
            raise ConfigError("[mask] intervals needs pairs of endpoints")
        return mask_from_intervals(mesh, list(zip(vals[0::2], vals[1::2])))
    if kind == "cells":
        return mask_from_cells(mesh, [int(v) for v in cfg.numbers("mask", "cells")])
    if kind == "candidate":
        return mesh.candidate
    if kind == "empty":
        return mesh.empty_mask()
    if kind == "annulus":
        return fattened_annulus(mesh, params.alpha)
    if kind == "ball":
        return translated_ball(mesh, cfg.number("mask", "r"), cfg.number("mask", "k"))
    raise ConfigError(f"[mask] unknown kind {kind!r}")


def _solver_kw(cfg: RunConfig) -> dict:
    tol = cfg.get("solver", "tol")
    return {"tol": float(tol) if tol else None, "cap": cfg.number("solver", "cap", int),
            "restarts": cfg.number("solver", "restarts", int), "seed": cfg.seed}


# --------------------------------------------------------------------------
# subcommands; each returns (written file names, all required solves converged)


def _write_eigen(cfg, base, mask, eig, files):
    from .geometry import mask_rows
    from .io import EIGEN_HEADER, eigen_rows, mask_header, nodal_header, nodal_rows, write_csv
    n = base.n
    write_csv(cfg.out / "eigen.csv", EIGEN_HEADER, eigen_rows(eig))
    write_csv(cfg.out / "nodes.csv", nodal_header(n), nodal_rows(base.node_coords, eig.u))
    write_csv(cfg.out / "mask.csv", mask_header(n), mask_rows(mask))
    files += ["eigen.csv", "nodes.csv", "mask.csv"]


def cmd_eig(cfg: RunConfig):
    from .eigensolve import first_eigenpair
    from .kernel import assemble_base
    params = _params(cfg)
    mesh = _mesh(cfg, params)
    mask = _mask(cfg, mesh, params)
    base = assemble_base(mesh, params.s, params.p)
    eig = first_eigenpair(mask, params, base.with_mask(mask), V=_potential(cfg), **_solver_kw(cfg))
    files = []
    _write_eigen(cfg, base, mask, eig, files)
    return files, eig.converged


def _write_history(cfg, res, files):
    from .io import write_csv
    write_csv(cfg.out / "history.csv", ("iter", "lambda", "mask_hash"), res.history)
    files.append("history.csv")


def cmd_minimize(cfg: RunConfig):
    from .kernel import assemble_base
    from .shapeopt import alternating_minimize
    params = _params(cfg)
    mesh = _mesh(cfg, params)
    base = assemble_base(mesh, params.s, params.p)
    init = _mask(cfg, mesh, params)
    res = alternating_minimize(params, base, init, tol=cfg.number("minimize", "tol"),
                               cap=cfg.number("minimize", "cap", int), V=_potential(cfg))
    files = []
    _write_eigen(cfg, base, res.mask, res.eigen, files)
    _write_history(cfg, res, files)
    return files, res.eigen.converged


def cmd_maximize(cfg: RunConfig):
    from .kernel import assemble_base
    from .shapeopt import maximize_heuristic
    params = _params(cfg)
    mesh = _mesh(cfg, params)
    base = assemble_base(mesh, params.s, params.p)
    init = _mask(cfg, mesh, params) if cfg.get("mask", "kind") != "annulus" else None
    res = maximize_heuristic(params, base, init, restarts=cfg.number("maximize", "restarts", int),
                             cap=cfg.number("maximize", "cap", int), seed=cfg.seed,
                             V=_potential(cfg))
    files = []
    _write_eigen(cfg, base, res.mask, res.eigen, files)
    _write_history(cfg, res, files)
    return files, res.eigen.converged


def cmd_decay(cfg: RunConfig):
    from .io import write_csv
    from .shapeopt import decay_experiment
    params = _params(cfg)
    res = decay_experiment(params, cfg.number("decay", "r"), cfg.numbers("decay", "k"),
                           domain=cfg.get("problem", "domain"), h=cfg.number("problem", "h"))
    write_csv(cfg.out / "decay.csv", ("k", "lambda", "measure", "error"),
              [(r.k, r.lam, r.measure, r.error) for r in res.records])
    write_csv(cfg.out / "decay_fit.csv", ("slope", "target"), [(res.slope, res.target)])
    return ["decay.csv", "decay_fit.csv"], True


def cmd_rate(cfg: RunConfig):
    from .io import write_csv
    from .shapeopt import separated_rate_experiment
    params = _params(cfg)
    mesh = _mesh(cfg, params)
    mask = _mask(cfg, mesh, params)
    ladder = [params.with_s(s) for s in cfg.numbers("rate", "s")]
    recs = separated_rate_experiment(ladder, mask, V=_potential(cfg))
    write_csv(cfg.out / "rate.csv", ("s", "lambda", "ratio", "bound", "poincare"),
              [(r.s, r.lam, r.ratio, r.bound, r.poincare) for r in recs])
    return ["rate.csv"], True


SWEEP_HEADER = ("s", "h", "lambda_plus_proxy", "lambda_annulus", "lambda_minus_R",
                "lambda_neumann_nonlocal", "local_dirichlet_ref", "local_neumann_ref")


def cmd_sweep(cfg: RunConfig):
    import warnings
    from .asympt import s_sweep
    from .io import write_csv
    s_list = cfg.numbers("sweep", "s")
    params = _params(cfg, s=s_list[0] if s_list else None)
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        res = s_sweep(params, s_list, domain=cfg.get("problem", "domain"), V=_potential(cfg),
                      h_max=cfg.number("sweep", "h_max"),
                      minimize=cfg.flag("sweep", "minimize"),
                      allow_high_s=cfg.flag("sweep", "allow_high_s"),
                      h_local=cfg.number("sweep", "h_local"))
    rows = [(r.s, r.h, r.lambda_plus_proxy, r.lambda_annulus, r.lambda_minus_R,
             r.lambda_neumann_nonlocal, r.local_dirichlet_ref, r.local_neumann_ref)
            for r in res.records]
    write_csv(cfg.out / "sweep.csv", SWEEP_HEADER, rows)
    write_csv(cfg.out / "sweep_trend.csv",
              ("plus_increasing", "minus_decreasing", "final_dirichlet_gap"),
              [(res.plus_increasing, res.minus_decreasing, res.final_dirichlet_gap)])
    return ["sweep.csv", "sweep_trend.csv"], True


def cmd_surround(cfg: RunConfig):
    import numpy as np
    from .io import write_csv
    from .kernel import assemble_base
    from .shapeopt import maximize_heuristic, surround_diagnostic
    params = _params(cfg)
    mesh = _mesh(cfg, params)
    source = cfg.get("surround", "source").lower()
    if source == "mask":
        mask = _mask(cfg, mesh, params)
    elif source == "maximize":
        base = assemble_base(mesh, params.s, params.p)
        mask = maximize_heuristic(params, base, restarts=cfg.number("maximize", "restarts", int),
                                  cap=cfg.number("maximize", "cap", int), seed=cfg.seed,
                                  V=_potential(cfg)).mask
    else:
        raise ConfigError(f"[surround] unknown source {source!r}")
    raw = cfg.get("surround", "samples")
    samples = None
    if raw:
        try:
            samples = np.array([[float(v) for v in pt.split()] for pt in raw.split(";")])
        except ValueError:
            raise ConfigError(f"[surround] samples = {raw!r}: expected points like '0; 1'") from None
    recs = surround_diagnostic(mask, cfg.number("surround", "eps"), samples)
    n = mesh.n
    write_csv(cfg.out / "surround.csv", (*("x", "y")[:n], "measure", "covered"),
              [(*r.x, r.measure, r.covered) for r in recs])
    return ["surround.csv"], True


COMMANDS = {"eig": cmd_eig, "minimize": cmd_minimize, "maximize": cmd_maximize,
            "decay": cmd_decay, "rate": cmd_rate, "sweep": cmd_sweep, "surround": cmd_surround}


def run(cfg: RunConfig) -> int:
    from .geometry import GeometryError, ParameterError
    from .kernel import ConstraintError, ProblemTooLarge
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        files, converged = COMMANDS[cfg.subcommand](cfg)
    except (ConfigError, ParameterError, GeometryError, ConstraintError, ProblemTooLarge,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_manifest(cfg, files)
    if not converged:
        print("error: a required solve did not converge", file=sys.stderr)
        return 2
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fracopt", description="Regional fractional p-Laplacian eigenvalue "
                 "experiments driven by an INI-style configuration file.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS, metavar="subcommand",
                    help="one of: " + ", ".join(SUBCOMMANDS))
    ap.add_argument("--config", required=True, help="path of the configuration file")
    ap.add_argument("--out", default="out", help="output directory (default: ./out)")
    ap.add_argument("--threads", type=int, default=None, help="thread limit for linear algebra")
    ap.add_argument("--seed", type=int, default=None, help="seed for random restarts")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        values = read_config(text, source=args.config)
        seed = args.seed if args.seed is not None else int(values["run"]["seed"])
        threads = args.threads if args.threads is not None else int(values["run"]["threads"])
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if threads < 1 or seed < 0:
        print("error: threads must be >= 1 and seed >= 0", file=sys.stderr)
        return 1
    # only effective when numpy has not been loaded yet
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))
    values["run"].update(seed=str(seed), threads=str(threads))
    cfg = RunConfig(args.subcommand, values, Path(args.out), seed, threads)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
