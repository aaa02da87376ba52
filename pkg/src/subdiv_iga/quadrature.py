"""Quadrature rules on the reference square ``[0, 1]^2``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (m, 2)
    weights: np.ndarray  # (m,)
    tag: str = "standard"
    depth: int = 0

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self):
        return len(self.weights)


def gauss_1d(q: int):
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    if q < 1:
        raise ValueError(f"need at least one Gauss point, got {q}")
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_2d(q: int = 2) -> QuadratureRule:
    """Tensor-product ``q x q`` Gauss rule."""
    x, w = gauss_1d(q)
    X, Y = np.meshgrid(x, x, indexing="xy")
    W = np.outer(w, w)
    return QuadratureRule(np.column_stack([X.ravel(), Y.ravel()]), W.ravel(),
                          "standard", 0)


def adaptive_rule(n_d: int, q: int = 2) -> QuadratureRule:
    """Gauss rules on nested L-shaped layers shrinking toward ``(0, 0)``.

    Level ``m`` covers ``[0, 2^(1-m)]^2`` minus ``[0, 2^-m]^2`` with three
    squares of side ``2^-m``.  The last corner square ``[0, 2^-n_d]^2`` is
    left out, so the weights sum to ``1 - 4^-n_d``.
    """
    if n_d < 1:
        raise ValueError(f"adaptive depth must be >= 1, got {n_d}")
    base = gauss_2d(q)
    pts, wts = [], []
    for m in range(1, n_d + 1):
        h = 0.5 ** m
        for ox, oy in ((h, 0.0), (h, h), (0.0, h)):
            pts.append(base.points * h + (ox, oy))
            wts.append(base.weights * h * h)
    return QuadratureRule(np.concatenate(pts), np.concatenate(wts), "adaptive", n_d)


def parse_quadrature(spec: str):
    """``"standard"`` -> 0, ``"adaptive:N"`` -> N (N = 0 means standard)."""
    s = spec.strip().lower()
    if s == "standard":
        return 0
    if s.startswith("adaptive:"):
        try:
            n = int(s.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad adaptive depth in {spec!r}") from None
        if n < 0:
            raise ValueError(f"adaptive depth must be >= 0 in {spec!r}")
        return n
    raise ValueError(f"quadrature must be 'standard' or 'adaptive:N', got {spec!r}")


def irregular_rule(n_d: int, q: int = 2) -> QuadratureRule:
    """Rule used on elements with an extraordinary vertex."""
    return gauss_2d(q) if n_d == 0 else adaptive_rule(n_d, q)
