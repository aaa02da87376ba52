"""Named experiments, convergence runs and assembly timing."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fitting
from .mesh import ControlMesh, classify_elements
from .solver import (DEFAULT_BETA, PLATE_CASES, TRIG_CASE, ManufacturedCase,
                     assemble, error_norms, group_elements, solve_penalized)
from .subdivision import subdivide_mesh


@dataclass(frozen=True)
class CaseSpec:
    name: str
    case: ManufacturedCase
    build: Callable[[int], ControlMesh]  # level -> control mesh
    default_levels: int
    default_n_d: int = 0


def _refined(base_fn):
    cache: dict = {}

    def build(level):
        if "base" not in cache:
            cache["base"] = base_fn()
        return subdivide_mesh(cache["base"], level)
    return build


def _registry():
    cases = {}
    for t, pcase in PLATE_CASES.items():
        cases[f"plate-test{t}-mesh1"] = CaseSpec(
            f"plate-test{t}-mesh1", pcase, _refined(lambda: fitting.generate_plate(4)), 4)
        cases[f"plate-test{t}-mesh2"] = CaseSpec(
            f"plate-test{t}-mesh2", pcase, _refined(fitting.generate_plate_ev), 4)
    for variant, levels in (("regular", 4), ("4ev", 3), ("7ev", 3)):
        name = f"cylinder-{variant}"
        cases[name] = CaseSpec(name, TRIG_CASE,
                               lambda lv, v=variant: fitting.generate_cylinder(v, lv),
                               levels)
    cases["hemisphere"] = CaseSpec("hemisphere", TRIG_CASE,
                                   lambda lv: fitting.generate_hemisphere(lv), 3)
    return cases


CASES = _registry()


def get_case(name: str) -> CaseSpec:
    try:
        return CASES[name]
    except KeyError:
        raise KeyError(f"unknown case {name!r}; known cases: "
                       f"{', '.join(sorted(CASES))}") from None


def with_base_mesh(spec: CaseSpec, mesh: ControlMesh) -> CaseSpec:
    """Same manufactured solution on a user-supplied mesh, refined by subdivision."""
    return CaseSpec(spec.name, spec.case, _refined(lambda: mesh), spec.default_levels,
                    spec.default_n_d)


@dataclass
class LevelResult:
    level: int
    n_elements: int
    n_dofs: int
    h_normalized: float
    e_l2: float
    e_h1: float
    rate_l2: float | None
    rate_h1: float | None
    assembly_seconds: float
    solve_seconds: float


@dataclass
class Solution:
    mesh: ControlMesh
    patches: list
    u: np.ndarray
    system: object


def observed_rate(coarse: float, fine: float) -> float:
    return float(np.log2(coarse / fine))


def run_convergence(spec: CaseSpec, levels: int | None = None, n_d: int | None = None,
                    beta: float = DEFAULT_BETA, threads: int = 1,
                    solve_method: str = "cg"):
    """Solve on ``levels`` successive meshes; return the table and last solution."""
    levels = spec.default_levels if levels is None else levels
    n_d = spec.default_n_d if n_d is None else n_d
    if levels < 1:
        raise ValueError("levels must be >= 1")
    rows: list[LevelResult] = []
    last = None
    for lv in range(levels):
        mesh = spec.build(lv)
        patches = classify_elements(mesh)
        groups = group_elements(patches)
        system = assemble(mesh, patches, spec.case, n_d=n_d, beta=beta,
                          threads=threads, groups=groups)
        u = solve_penalized(system, method=solve_method)
        e_l2, e_h1 = error_norms(u, spec.case, mesh, patches, n_d=n_d, groups=groups)
        prev = rows[-1] if rows else None
        rows.append(LevelResult(
            lv, mesh.n_faces, mesh.n_vertices, 0.5 ** lv, float(e_l2), float(e_h1),
            observed_rate(prev.e_l2, e_l2) if prev else None,
            observed_rate(prev.e_h1, e_h1) if prev else None,
            system.timings["assembly"], system.timings["solve"]))
        last = Solution(mesh, patches, u, system)
    return rows, last


@dataclass
class TimingRow:
    n_elements: int
    n_d: int
    assembly_seconds: float
    overhead_ratio: float  # relative to n_d = 0 on the same mesh


def report_timing(spec: CaseSpec, levels: int = 3, depths=(0, 3, 7),
                  repeats: int = 3, threads: int = 1) -> list[TimingRow]:
    """Assembly wall-clock time per mesh level and adaptive depth.

    Each entry is the best of ``repeats`` assemblies, which suppresses
    scheduling noise on small meshes.
    """
    out = []
    for lv in range(levels):
        mesh = spec.build(lv)
        patches = classify_elements(mesh)
        groups = group_elements(patches)
        times = {}
        for nd in depths:  # untimed pass fills operator and allocation caches
            assemble(mesh, patches, spec.case, n_d=nd, threads=threads, groups=groups)
        for nd in depths:
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                assemble(mesh, patches, spec.case, n_d=nd, threads=threads, groups=groups)
                best = min(best, time.perf_counter() - t0)
            times[nd] = best
        base = times.get(0, times[depths[0]])
        for nd in depths:
            out.append(TimingRow(mesh.n_faces, nd, times[nd], times[nd] / base))
    return out
