"""The energy ``(1/p) int |kappa|^p ds + lambda * length`` and its derivatives.

Everything here is the exact calculus of the *discrete* energy

    E_h = sum_i ((1/p) |kappa_i|^p + lambda) |a_i| dx,

with ``a = D1 gamma``, ``b = D2 gamma`` and ``kappa = P_perp_a(b) / |a|^2``.
The closed-form variation of the curvature vector, evaluated with the same
stencils, is the exact derivative of the discrete curvature, so
:func:`first_variation` and :func:`discrete_gradient` agree to rounding.

The node-array routines avoid ``abs`` and ``linalg.norm`` so that they can be
called with complex input for complex-step differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    curvature_from_derivatives,
    dot,
    norms,
    periodic_diff,
    periodic_diff_adjoint,
)


@dataclass(frozen=True)
class EnergyParams:
    p: float = 3.0
    lam: float = 1.0

    def __post_init__(self):
        if not self.p > 2.0:
            raise ValueError(f"p must exceed 2 (got {self.p})")
        if not self.lam > 0.0:
            raise ValueError(f"lambda must be positive (got {self.lam})")


def _pow(kk, exponent):
    """``kk ** exponent`` for ``kk = |kappa|^2 >= 0``, with ``0 ** e = 0``."""
    safe = np.where(kk.real > 0.0, kk, 1.0)
    return np.where(kk.real > 0.0, safe**exponent, 0.0)


def energy_parts(nodes, dx, params):
    """``(E_p, length)`` of the node array."""
    a = periodic_diff(nodes, dx, 1)
    b = periodic_diff(nodes, dx, 2)
    speed = norms(a)
    kappa = curvature_from_derivatives(a, b)
    kk = dot(kappa, kappa)
    e_p = np.sum(_pow(kk, 0.5 * params.p) * speed) * dx / params.p
    length = np.sum(speed) * dx
    return e_p, length


def energy_of_nodes(nodes, dx, params):
    e_p, length = energy_parts(nodes, dx, params)
    return e_p + params.lam * length


def energy(curve, params):
    """Discrete energy of ``curve``."""
    return float(energy_of_nodes(curve.nodes, curve.dx, params))


def p_energy(curve, params):
    return float(energy_parts(curve.nodes, curve.dx, params)[0])


def energy_gradient_nodes(nodes, dx, params):
    """Gradient of the discrete energy with respect to node positions, shape (N, n)."""
    p, lam = params.p, params.lam
    a = periodic_diff(nodes, dx, 1)
    b = periodic_diff(nodes, dx, 2)
    speed = norms(a)
    speed2 = speed * speed
    kappa = curvature_from_derivatives(a, b)
    kk = dot(kappa, kappa)
    kp = _pow(kk, 0.5 * p)
    kp2 = _pow(kk, 0.5 * (p - 2.0))
    ab = dot(a, b)
    grad_b = (kp2 / speed)[:, None] * kappa
    grad_a = ((kp / p + lam) / speed)[:, None] * a - (kp2 * speed)[:, None] * (
        (2.0 * kk / speed2)[:, None] * a + (ab / speed2**2)[:, None] * kappa
    )
    return dx * (periodic_diff_adjoint(grad_a, dx, 1) + periodic_diff_adjoint(grad_b, dx, 2))


def _arclength_derivatives(curve, psi):
    a = periodic_diff(curve.nodes, curve.dx, 1)
    b = periodic_diff(curve.nodes, curve.dx, 2)
    speed = norms(a)
    t = a / speed[:, None]
    kappa = curvature_from_derivatives(a, b)
    dpsi = periodic_diff(psi, curve.dx, 1)
    ddpsi = periodic_diff(psi, curve.dx, 2)
    ds_psi = dpsi / speed[:, None]
    # d_s^2 psi = |a|^-1 d_x (|a|^-1 d_x psi) with d_x |a| = <a, b> / |a|
    dss_psi = ddpsi / (speed**2)[:, None] - (dot(a, b) / speed**4)[:, None] * dpsi
    return speed, t, kappa, ds_psi, dss_psi


def delta_kappa(curve, psi):
    """Variation of the curvature vector in direction ``psi``.

    ``(d_s^2 psi)^perp - <kappa, d_s psi> T - 2 <T, d_s psi> kappa``, where the
    perpendicular part is taken against the unit tangent ``T`` of the curve.
    """
    psi = np.asarray(psi, dtype=float)
    _, t, kappa, ds_psi, dss_psi = _arclength_derivatives(curve, psi)
    normal_part = dss_psi - dot(dss_psi, t)[:, None] * t
    return normal_part - dot(kappa, ds_psi)[:, None] * t - 2.0 * dot(t, ds_psi)[:, None] * kappa


def first_variation(curve, psi, params):
    """Directional derivative of the energy at ``curve`` in direction ``psi``.

    Quadrature of ``|kappa|^{p-2} <kappa, delta kappa> + ((1/p)|kappa|^p + lambda) <T, d_s psi>``
    against ``ds``, with the same node rule as :func:`energy`.
    """
    psi = np.asarray(psi, dtype=float)
    speed, t, kappa, ds_psi, _ = _arclength_derivatives(curve, psi)
    dk = delta_kappa(curve, psi)
    kk = dot(kappa, kappa)
    integrand = _pow(kk, 0.5 * (params.p - 2.0)) * dot(kappa, dk) + (
        _pow(kk, 0.5 * params.p) / params.p + params.lam
    ) * dot(t, ds_psi)
    return float(np.sum(integrand * speed) * curve.dx)


def discrete_gradient(ng, params):
    """Gradient of ``c -> E(ref + frame @ c)`` in frame coordinates, shape (N, n-1)."""
    nodes = ng.reference.nodes + ng.phi
    grad = energy_gradient_nodes(nodes, ng.reference.dx, params)
    return ng.frame.to_coords(grad)


def el_residual(ng, velocity, params, psi, weight=None, tol=1e-8):
    """Defect ``|int <velocity, psi> ds + delta_psi E(gamma)|`` for one test direction.

    ``weight`` is the node measure ``|gamma'|`` used for ``ds``; by default the
    speed of the current curve. ``psi`` must be orthogonal to the quasi-tangent.
    """
    psi = np.asarray(psi, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    scale = max(1.0, float(norms(psi).max()))
    if np.max(np.abs(dot(psi, ng.qt.tau))) > tol * scale:
        raise ValueError("test direction psi must be orthogonal to the quasi-tangent")
    curve = ng.curve()
    if weight is None:
        weight = curve.speed()
    pairing = float(np.sum(dot(velocity, psi) * weight) * curve.dx)
    return abs(pairing + first_variation(curve, psi, params))
