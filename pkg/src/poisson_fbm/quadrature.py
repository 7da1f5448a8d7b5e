"""Gauss-Legendre panel rules and the quadrature configuration record."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import InvalidArgument


@dataclass(frozen=True)
class QuadratureConfig:
    """Resolution knobs shared by the kernel and path integrators.

    Parameters
    ----------
    panels_per_axis : int
        Tensor panels per unit length along each spatial axis (path
        integrator). Parity is integrated exactly inside panels; only the
        kernel's diagonal kinks are resolved at this scale.
    gauss_order : int
        Gauss-Legendre points per panel and per axis.
    refinement_factor : int
        Multiplier applied to the resolution for refinement checks.
    rel_tol : float
        Relative tolerance for deterministic kernel quadratures.
    method : str
        ``"sweep"`` (exact parity integration of separable weights) or
        ``"nodes"`` (parity sampled at Gauss nodes) or ``"cells"`` (exact
        decomposition into constant-parity cells; small fields only).
    """

    panels_per_axis: int = 16
    gauss_order: int = 24
    refinement_factor: int = 2
    rel_tol: float = 1e-6
    method: str = "sweep"

    def __post_init__(self):
        if self.panels_per_axis < 1 or self.gauss_order < 1:
            raise InvalidArgument("panels_per_axis and gauss_order must be positive")
        if self.refinement_factor < 2:
            raise InvalidArgument("refinement_factor must be >= 2")
        if not self.rel_tol > 0:
            raise InvalidArgument("rel_tol must be positive")
        if self.method not in ("sweep", "nodes", "cells"):
            raise InvalidArgument(f"unknown path quadrature method {self.method!r}")

    def refined(self):
        f = self.refinement_factor
        return QuadratureConfig(
            panels_per_axis=self.panels_per_axis * f,
            gauss_order=self.gauss_order,
            refinement_factor=f,
            rel_tol=self.rel_tol,
            method=self.method,
        )


@lru_cache(maxsize=64)
def _unit_rule(order):
    nodes, weights = leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def gauss_unit(order):
    """Nodes and weights of the ``order``-point rule on [0, 1]."""
    u, w = _unit_rule(int(order))
    return u.copy(), w.copy()


def panel_rule(edges, order):
    """Composite Gauss-Legendre rule over consecutive panels.

    Parameters
    ----------
    edges : array_like
        Sorted panel boundaries; zero-length panels are dropped.
    order : int
        Points per panel.

    Returns
    -------
    nodes, weights : ndarray
    """
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1], edges[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    u, w = _unit_rule(int(order))
    nodes = a[:, None] + (b - a)[:, None] * u[None, :]
    weights = (b - a)[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def power_graded_rule(b, order, power):
    """Rule on [0, b] after the substitution ``x = b * u**power``.

    Removes an algebraic endpoint singularity ``x**(1/power - 1)`` at 0.
    """
    u, w = _unit_rule(int(order))
    x = b * u**power
    return x, w * b * power * u ** (power - 1.0)
