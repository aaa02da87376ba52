"""Command-line driver.

``subdiv-iga run --case NAME|CONFIG [options]`` solves a built-in or
configured experiment and writes ``convergence.csv``, ``pointwise_error.csv``
and ``sparsity.csv``.  ``subdiv-iga timing --case NAME`` writes
``timing.csv`` comparing standard and adaptive quadrature.

Config files hold one ``key = value`` pair per line; ``#`` starts a comment.
Keys: case, levels, quadrature, beta, mesh, out, threads, samples.
Command-line flags override values from the file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .mesh import MeshError, load_obj
from .quadrature import parse_quadrature
from .solver import DEFAULT_BETA, SolverError, pointwise_error_field
from .study import get_case, report_timing, run_convergence, with_base_mesh

log = logging.getLogger("subdiv_iga")


class ConfigError(ValueError):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _positive_float(text):
    v = float(text)
    if not np.isfinite(v) or v <= 0:
        raise ValueError("must be a positive number")
    return v


_CONFIG_KEYS = {
    "case": str,
    "levels": _positive_int,
    "quadrature": lambda s: (parse_quadrature(s), s)[1],
    "beta": _positive_float,
    "mesh": str,
    "out": str,
    "threads": _positive_int,
    "samples": _positive_int,
}


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; errors name the offending line."""
    cfg, seen = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} "
                              f"(allowed: {', '.join(sorted(_CONFIG_KEYS))})")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} "
                              f"(first set on line {seen[key]})")
        if not value:
            raise ConfigError(f"{source}:{lineno}: empty value for {key!r}")
        try:
            cfg[key] = _CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: invalid {key} {value!r}: {exc}") from None
        seen[key] = lineno
    if "case" not in cfg:
        raise ConfigError(f"{source}: missing required key 'case'")
    return cfg


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def resolve_settings(args) -> dict:
    """Merge a config file (if ``--case`` names one) with command-line flags."""
    settings = {"levels": None, "quadrature": None, "beta": DEFAULT_BETA, "mesh": None,
                "out": ".", "threads": 1, "samples": 5}
    target = args.case
    path = Path(target)
    if path.suffix or path.exists():
        if not path.is_file():
            raise ConfigError(f"config file not found: {target}")
        settings.update(parse_config(path.read_text(), str(path)))
    else:
        settings["case"] = target
    for key in ("levels", "quadrature", "beta", "mesh", "out", "threads"):
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v
    return settings


def _case_with_mesh(name, mesh):
    spec = get_case(name)
    if mesh:
        mesh_path = Path(mesh)
        if not mesh_path.is_file():
            raise ConfigError(f"mesh file not found: {mesh_path}")
        spec = with_base_mesh(spec, load_obj(mesh_path))
    return spec


def cmd_run(args) -> int:
    s = resolve_settings(args)
    spec = _case_with_mesh(s["case"], s["mesh"])
    n_d = parse_quadrature(s["quadrature"]) if s["quadrature"] else None
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)

    rows, last = run_convergence(spec, s["levels"], n_d, s["beta"], s["threads"])
    write_csv(out / "convergence.csv",
              ["level", "n_elements", "n_dofs", "h_normalized", "e_L2", "e_H1",
               "observed_rate_L2", "observed_rate_H1", "assembly_seconds",
               "solve_seconds"],
              [[r.level, r.n_elements, r.n_dofs, r.h_normalized, r.e_l2, r.e_h1,
                r.rate_l2, r.rate_h1, r.assembly_seconds, r.solve_seconds]
               for r in rows])
    pe = pointwise_error_field(last.u, spec.case, last.mesh, last.patches, s["samples"])
    write_csv(out / "pointwise_error.csv", ["x1", "x2", "x3", "abs_error"],
              np.column_stack([pe.x, pe.error]).tolist())
    nnz = np.diff(last.system.K.indptr)
    write_csv(out / "sparsity.csv", ["row", "nnz"], enumerate(nnz.tolist()))
    for r in rows:
        rate = "" if r.rate_l2 is None else f"  rate {r.rate_l2:.2f}"
        print(f"level {r.level}: {r.n_elements} elements, e_L2 {r.e_l2:.3e}, "
              f"e_H1 {r.e_h1:.3e}{rate}")
    print(f"wrote {out}/convergence.csv, pointwise_error.csv, sparsity.csv")
    return 0


def cmd_timing(args) -> int:
    spec = _case_with_mesh(args.case, args.mesh)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    rows = report_timing(spec, args.levels or 3, threads=args.threads or 1)
    write_csv(out / "timing.csv",
              ["n_elements", "n_d", "assembly_seconds", "overhead_ratio"],
              [[r.n_elements, r.n_d, r.assembly_seconds, r.overhead_ratio] for r in rows])
    for r in rows:
        print(f"{r.n_elements:6d} elements  n_d={r.n_d}  {r.assembly_seconds:.4f} s  "
              f"x{r.overhead_ratio:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subdiv-iga", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve a case and write CSV reports")
    run.add_argument("--case", required=True, help="built-in case name or config file")
    run.add_argument("--levels", type=_positive_int)
    run.add_argument("--quadrature", help="standard or adaptive:N")
    run.add_argument("--beta", type=_positive_float)
    run.add_argument("--mesh", help="OBJ control mesh replacing the built-in one")
    run.add_argument("--out")
    run.add_argument("--threads", type=_positive_int)
    run.set_defaults(func=cmd_run)

    tim = sub.add_parser("timing", help="assembly time for n_d in {0, 3, 7}")
    tim.add_argument("--case", required=True)
    tim.add_argument("--levels", type=_positive_int)
    tim.add_argument("--mesh", help="OBJ control mesh replacing the built-in one")
    tim.add_argument("--out")
    tim.add_argument("--threads", type=_positive_int)
    tim.set_defaults(func=cmd_timing)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError, MeshError, SolverError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"subdiv-iga: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
