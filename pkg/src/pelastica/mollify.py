"""Friedrichs mollification of closed curves and the unit quasi-tangent."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .geometry import ClosedCurve, norms, periodic_diff

logger = logging.getLogger(__name__)

# max_i |tau_i - t_i| allowed for an accepted quasi-tangent
TANGENT_TOLERANCE = 0.25
MIN_CELLS = 4


class QuasiTangentError(RuntimeError):
    """No admissible smoothing radius at this resolution; refine N."""


def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _bump_mass():
    return quad(lambda x: float(_bump(x)), -1.0, 1.0, epsabs=1e-13, epsrel=1e-13)[0]


class MollifierKernel:
    """The even bump ``exp(-1/(1-x^2))`` on ``(-1, 1)``, normalised to unit mass."""

    def __init__(self):
        self.normalisation = 1.0 / _bump_mass()

    def __call__(self, x):
        return self.normalisation * _bump(x)

    def rescaled(self, x, epsilon):
        return self(np.asarray(x) / epsilon) / epsilon

    def mass(self):
        return quad(lambda x: float(self(x)), -1.0, 1.0, epsabs=1e-13, epsrel=1e-13)[0]

    def weights(self, epsilon, dx):
        """Grid weights ``eta_eps(j dx) dx`` for offsets ``j = -J..J``.

        The weights are renormalised to sum to one, so the discrete kernel
        reproduces constants exactly.
        """
        half_width = int(np.floor(epsilon / dx))
        offsets = np.arange(-half_width, half_width + 1)
        w = self.rescaled(offsets * dx, epsilon) * dx
        total = w.sum()
        if total <= 0.0:
            return np.array([0]), np.array([1.0])
        return offsets, w / total


KERNEL = MollifierKernel()


def mollify_values(values, epsilon, dx, kernel=KERNEL):
    """Periodic convolution of node values with the rescaled kernel."""
    offsets, weights = kernel.weights(epsilon, dx)
    out = np.zeros_like(values, dtype=float)
    # fixed summation order
    for j, w in zip(offsets, weights):
        out += w * np.roll(values, int(j), axis=0)
    return out


def mollify_curve(curve, epsilon, kernel=KERNEL):
    """Mollified copy ``gamma * eta_eps`` on the same grid.

    Raises
    ------
    ValueError
        If ``epsilon`` is not in ``(0, L/2)``.
    """
    if not 0.0 < epsilon < 0.5 * curve.domain_length:
        raise ValueError(
            f"epsilon must lie in (0, L/2) = (0, {0.5 * curve.domain_length:.6g}), got {epsilon!r}"
        )
    return ClosedCurve(mollify_values(curve.nodes, epsilon, curve.dx, kernel), curve.domain_length)


@dataclass(frozen=True)
class QuasiTangent:
    """Unit tangent of a mollified curve together with its smoothing radius.

    ``bounds`` holds grid sup-norms of the first and second derivative of
    ``tau``; ``deviation`` is ``max_i |tau_i - t_i|`` against the source curve.
    """

    tau: np.ndarray
    epsilon: float
    bounds: tuple
    deviation: float
    domain_length: float

    @property
    def n_nodes(self):
        return self.tau.shape[0]

    @property
    def dx(self):
        return self.domain_length / self.n_nodes


def tangent_bounds(qt, domain_length=None):
    """Grid sup-norms ``(sup|tau'|, sup|tau''|)`` of a unit vector field."""
    tau = qt.tau if isinstance(qt, QuasiTangent) else np.asarray(qt, dtype=float)
    if domain_length is None:
        domain_length = qt.domain_length
    dx = domain_length / tau.shape[0]
    first = norms(periodic_diff(tau, dx, 1))
    second = norms(periodic_diff(tau, dx, 2))
    return float(first.max()), float(second.max())


def _unit(v):
    return v / norms(v)[:, None]


def quasi_tangent(curve, kernel=KERNEL, initial_fraction=0.125):
    """Quasi-tangent of an (approximately) arc-length curve.

    Starting from ``epsilon = L/8`` the smoothing radius is halved until the
    mollified unit tangent is within 1/4 of the curve's own unit tangent in the
    grid sup-norm.

    Raises
    ------
    ValueError
        If node speeds leave ``[1/2, 2]``.
    QuasiTangentError
        If ``epsilon`` drops below four grid cells first.
    """
    speed = curve.speed()
    if speed.min() < 0.5 or speed.max() > 2.0:
        raise ValueError(
            f"quasi_tangent expects an arc-length curve; speeds lie in "
            f"[{speed.min():.3g}, {speed.max():.3g}]"
        )
    dx = curve.dx
    t = curve.unit_tangent()
    d1 = periodic_diff(curve.nodes, dx, 1)
    epsilon = initial_fraction * curve.domain_length
    while epsilon >= MIN_CELLS * dx:
        tau = _unit(mollify_values(d1, epsilon, dx, kernel))
        deviation = float(norms(tau - t).max())
        if deviation <= TANGENT_TOLERANCE:
            tau = _unit(tau)
            bounds = tangent_bounds(tau, curve.domain_length)
            logger.debug("quasi-tangent accepted at epsilon=%.4g (deviation %.3g)", epsilon, deviation)
            return QuasiTangent(tau, float(epsilon), bounds, deviation, curve.domain_length)
        epsilon *= 0.5
    raise QuasiTangentError(
        f"no smoothing radius of at least {MIN_CELLS} grid cells gives |tau - t| <= 1/4; "
        f"refine N (currently {curve.n_nodes})"
    )
