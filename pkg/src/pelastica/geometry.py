"""Closed curves sampled on a uniform periodic parameter grid.

A curve is stored as ``N`` nodes in ``R^n`` on the grid ``x_i = i L / N`` of
the circle ``R / L Z``. Derivatives are periodic central differences, the
curvature vector is ``P_perp(gamma'') / |gamma'|^2`` and integrals use the
node rule with measure ``|gamma'_i| L / N``.
"""

from __future__ import annotations

import io
import logging
import os
import re

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

MIN_NODES = 8


class CurveError(ValueError):
    """Raised for invalid curve data (too few nodes, degenerate speed)."""


class CurveFormatError(CurveError):
    """Raised when a curve file does not follow ``pelastica-curve v1``."""


class ResampleError(RuntimeError):
    """Raised when arc-length resampling does not reach its speed tolerance."""


def norms(values):
    """Row-wise Euclidean norms of an ``(N, n)`` array.

    Written with ``sqrt(sum(v*v))`` instead of ``np.abs`` so that it stays
    analytic for complex-step differentiation.
    """
    return np.sqrt(np.sum(values * values, axis=-1))


def dot(u, v):
    return np.sum(u * v, axis=-1)


def periodic_diff(values, dx, order=1):
    """Periodic central difference of node values along axis 0.

    ``order=1`` is ``(v[i+1] - v[i-1]) / (2 dx)``, ``order=2`` is the
    three-point stencil ``(v[i+1] - 2 v[i] + v[i-1]) / dx**2``.
    """
    fwd = np.roll(values, -1, axis=0)
    bwd = np.roll(values, 1, axis=0)
    if order == 1:
        return (fwd - bwd) / (2.0 * dx)
    if order == 2:
        return (fwd - 2.0 * values + bwd) / dx**2
    raise ValueError(f"order must be 1 or 2, got {order!r}")


def periodic_diff_adjoint(values, dx, order=1):
    """Transpose of :func:`periodic_diff` (as a linear map on node arrays)."""
    if order == 1:
        return -periodic_diff(values, dx, 1)
    return periodic_diff(values, dx, order)


def curvature_from_derivatives(d1, d2):
    """Curvature vector ``P_perp_{d1}(d2) / |d1|^2`` node-wise."""
    speed2 = dot(d1, d1)[:, None]
    return (d2 - (dot(d1, d2)[:, None] / speed2) * d1) / speed2


class ClosedCurve:
    """Closed curve ``R / L Z -> R^n`` sampled at ``N`` uniform parameters.

    Parameters
    ----------
    nodes : array_like, shape (N, n)
        Node positions. The closing node is not repeated.
    domain_length : float
        Period ``L`` of the parameter domain.
    """

    def __init__(self, nodes, domain_length):
        nodes = np.array(nodes, dtype=float)
        if nodes.ndim != 2:
            raise CurveError("nodes must be a two-dimensional (N, n) array")
        n_nodes, dim = nodes.shape
        if n_nodes < MIN_NODES:
            raise CurveError(f"a closed curve needs at least {MIN_NODES} nodes, got {n_nodes}")
        if dim < 2:
            raise CurveError(f"ambient dimension must be at least 2, got {dim}")
        if not np.all(np.isfinite(nodes)):
            raise CurveError("nodes must be finite")
        domain_length = float(domain_length)
        if not domain_length > 0.0:
            raise CurveError("domain_length must be positive")
        self._nodes = nodes
        self._nodes.setflags(write=False)
        self.domain_length = domain_length
        speed = self.speed()
        scale = max(float(speed.max()), np.finfo(float).tiny)
        if speed.min() <= 1e-12 * scale:
            raise CurveError("curve is not regular: some central difference vanishes")

    @property
    def nodes(self):
        return self._nodes

    @property
    def n_nodes(self):
        return self._nodes.shape[0]

    @property
    def dim(self):
        return self._nodes.shape[1]

    @property
    def dx(self):
        return self.domain_length / self.n_nodes

    @property
    def parameters(self):
        return np.arange(self.n_nodes) * self.dx

    def speed(self):
        return norms(periodic_diff(self._nodes, self.dx, 1))

    def unit_tangent(self):
        d1 = periodic_diff(self._nodes, self.dx, 1)
        return d1 / norms(d1)[:, None]

    def length(self):
        """Length by the node rule, ``sum |gamma'_i| dx``."""
        return float(np.sum(self.speed()) * self.dx)

    def polygonal_length(self):
        return float(np.sum(norms(np.roll(self._nodes, -1, axis=0) - self._nodes)))

    def with_nodes(self, nodes):
        return ClosedCurve(nodes, self.domain_length)

    def scaled(self, factor):
        """Dilated copy; the parameter domain scales with the image."""
        return ClosedCurve(factor * self._nodes, factor * self.domain_length)

    def spline(self):
        return PeriodicSpline(self._nodes, self.domain_length)

    def __repr__(self):
        return f"ClosedCurve(N={self.n_nodes}, L={self.domain_length:.6g}, dim={self.dim})"


class PeriodicSpline:
    """Periodic cubic interpolant through the nodes of a closed curve."""

    def __init__(self, nodes, domain_length):
        nodes = np.asarray(nodes, dtype=float)
        n_nodes = nodes.shape[0]
        knots = np.arange(n_nodes + 1) * (domain_length / n_nodes)
        closed = np.vstack([nodes, nodes[:1]])
        self.period = float(domain_length)
        self._spline = CubicSpline(knots, closed, axis=0, bc_type="periodic")

    def __call__(self, s, nu=0):
        s = np.mod(np.asarray(s, dtype=float), self.period)
        return self._spline(s, nu)


def derivative(curve, order=1):
    """First or second periodic derivative of ``curve`` at its nodes."""
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order!r}")
    return periodic_diff(curve.nodes, curve.dx, order)


def curvature(curve):
    """Curvature vector at the nodes."""
    return curvature_from_derivatives(derivative(curve, 1), derivative(curve, 2))


def total_curvature(curve):
    """Node-rule quadrature of ``int |kappa| ds``."""
    kappa = norms(curvature(curve))
    return float(np.sum(kappa * curve.speed()) * curve.dx)


def _arclength_guess(spline, n_out, n_in):
    """Parameters of ``n_out`` points equally spaced in spline arc length."""
    fine = 32 * max(n_in, n_out)
    u = np.linspace(0.0, spline.period, fine + 1)
    speed = norms(spline(u, 1))
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(u))])
    targets = np.arange(n_out) * (cumulative[-1] / n_out)
    return np.interp(targets, cumulative, u)


def _equal_chord_chain(spline, t, max_iter=50):
    """Move ``t[1:]`` so that consecutive chords of the closed chain all match.

    ``t[0]`` stays put. Returns ``(t, chord)`` or ``None`` when Newton fails.
    """
    period = spline.period
    m = len(t)
    k = np.arange(m)
    t = np.array(t, dtype=float)
    for _ in range(max_iter):
        ext = np.append(t, t[0] + period)
        pts = spline(ext)
        deriv = spline(ext, 1)
        chord = pts[1:] - pts[:-1]
        lengths = norms(chord)
        unit = chord / lengths[:, None]
        d = float(np.mean(lengths))
        resid = lengths - d
        jac = np.zeros((m, m))
        # column 0 is the common chord; columns 1.. are t_1..t_{m-1}
        nxt = (k + 1) % m
        inner = nxt != 0
        jac[k[inner], nxt[inner]] += dot(unit[inner], deriv[1:][inner])
        jac[k[1:], k[1:]] -= dot(unit[1:], deriv[:-1][1:])
        jac[:, 0] = -1.0
        try:
            step = np.linalg.solve(jac, -resid)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        while lam > 1e-6:
            trial = t.copy()
            trial[1:] += lam * step[1:]
            if np.all(np.diff(trial) > 0.0) and trial[-1] < trial[0] + period:
                break
            lam *= 0.5
        else:
            return None
        t = trial
        if np.max(np.abs(step[1:])) <= 1e-14 * period:
            break
    ext = np.append(t, t[0] + period)
    lengths = norms(np.diff(spline(ext), axis=0))
    if np.max(np.abs(lengths - lengths.mean())) > 1e-12 * lengths.mean():
        return None
    return t, float(lengths.mean())


def _shifted_solution(spline, s):
    """Exact equal-central-chord nodes for even ``N``, releasing node 0.

    Even and odd nodes each form an equal-chord polygon, and the chord of the
    polygon started at ``sigma`` is a periodic function ``C(sigma)``. Starting
    the even polygon where ``C(sigma) = C(sigma + spacing / 2)`` lets the odd
    polygon start half a spacing later with the same chord, so the two stay
    interleaved. Node 0 moves by less than one spacing.
    """
    period = spline.period
    even0 = s[0::2] - s[0]
    odd0 = s[1::2] - s[1]

    def chains(sigma):
        even = _equal_chord_chain(spline, sigma + even0)
        if even is None:
            raise ResampleError("even sub-chain did not converge")
        half = 0.5 * (even[0][1] - even[0][0])
        odd = _equal_chord_chain(spline, sigma + half + odd0)
        if odd is None:
            raise ResampleError("odd sub-chain did not converge")
        return even, odd

    def mismatch(sigma):
        even, odd = chains(sigma)
        return odd[1] - even[1]

    spacing = s[2] - s[0]
    sigmas = s[0] + spacing * np.linspace(0.0, 1.0, 33)
    try:
        values = np.array([mismatch(x) for x in sigmas])
    except ResampleError:
        return None
    flips = np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)[0]
    if len(flips) == 0:
        return None
    j = flips[0]
    sigma = brentq(mismatch, sigmas[j], sigmas[j + 1], xtol=1e-15 * period, rtol=4 * np.finfo(float).eps)
    (t_even, _), (t_odd, _) = chains(sigma)
    out = np.empty_like(s)
    out[0::2] = t_even
    out[1::2] = t_odd
    return out


def resample_arclength(curve, n_out=None, tol=1e-6, max_iter=50):
    """Resample ``curve`` to constant discrete speed one.

    The output nodes are placed on the periodic cubic interpolant of the input
    so that every central-difference chord ``|gamma_{i+1} - gamma_{i-1}| / 2``
    is the same value ``c``; the new domain length is ``N_out * c``, which makes
    ``|D^1 gamma_i| = 1`` at every node. Node 0 normally stays at the input's node 0.

    For even ``N_out`` the central chords do not couple even and odd nodes, so
    the two sub-chains could slide against each other at almost no cost. An
    extra equation asking the alternating sum of forward chords to vanish picks
    the interleaved solution. Exact equality of the central chords and exact
    interleaving are incompatible in general; the interleaved least-squares
    solution is kept when its speed error is within ``tol``; otherwise the
    sub-chains are solved separately from a shifted node 0 so that their
    chords agree (see :func:`_shifted_solution`).

    Raises
    ------
    ResampleError
        If the speed misses ``tol`` (relative) or the parameters lose monotonicity.
    """
    n_out = curve.n_nodes if n_out is None else int(n_out)
    if n_out < MIN_NODES:
        raise CurveError(f"n_out must be at least {MIN_NODES}")
    spline = curve.spline()
    period = spline.period
    s = _arclength_guess(spline, n_out, curve.n_nodes)
    idx = np.arange(n_out)
    nxt, prv = (idx + 1) % n_out, (idx - 1) % n_out
    sign = (-1.0) ** idx
    balance = int(n_out % 2 == 0)
    best = None

    def speed_error(s):
        half = 0.5 * norms(spline(s[nxt]) - spline(s[prv]))
        c = float(np.mean(half))
        return float(np.max(np.abs(half - c))) / c, c

    def record(s):
        nonlocal best
        err, c = speed_error(s)
        if best is None or err < best[0]:
            best = (err, s.copy(), c)

    for _ in range(max_iter):
        record(s)
        pts = spline(s)
        deriv = spline(s, 1)
        diff = pts[nxt] - pts[prv]
        half = 0.5 * norms(diff)
        unit = diff / (2.0 * half[:, None])
        # unknowns: c in column 0, then s_1..s_{N-1}; s_0 is pinned
        jac = np.zeros((n_out + balance, n_out))
        jac[idx, nxt] += 0.5 * dot(unit, deriv[nxt])
        jac[idx, prv] -= 0.5 * dot(unit, deriv[prv])
        resid = half - np.mean(half)
        if balance:
            fwd = pts[nxt] - pts
            flen = norms(fwd)
            fu = fwd / flen[:, None]
            row = np.zeros(n_out)
            np.add.at(row, nxt, sign * dot(fu, deriv[nxt]))
            np.add.at(row, idx, -sign * dot(fu, deriv))
            jac[n_out] = row
            resid = np.concatenate([resid, [np.sum(sign * flen)]])
        jac[:n_out, 0] = -1.0
        jac[n_out:, 0] = 0.0
        step = np.linalg.lstsq(jac, -resid, rcond=None)[0]
        if np.max(np.abs(step[1:])) <= 1e-14 * period:
            break
        # halve the step until the parameters stay ordered
        lam = 1.0
        while lam > 1e-6:
            trial = s.copy()
            trial[1:] += lam * step[1:]
            if np.all(np.diff(trial) > 0.0) and trial[-1] < trial[0] + period:
                break
            lam *= 0.5
        else:
            break
        s = trial
    record(s)
    if balance and best[0] > tol:
        shifted = _shifted_solution(spline, best[1])
        if shifted is not None:
            record(shifted)
    err, s, c = best
    if err > tol:
        raise ResampleError(
            f"arc-length resampling did not converge: max relative speed error {err:.3e} "
            f"after {max_iter} iterations"
        )
    if np.any(np.diff(s) <= 0.0) or s[-1] >= s[0] + period:
        raise ResampleError("resampled parameters lost monotonicity")
    out = ClosedCurve(spline(s), n_out * c)
    logger.debug("resampled %r -> %r (relative speed error %.2e)", curve, out, err)
    return out


_HEADER = re.compile(r"^pelastica-curve v1 N=(\d+) L=(\S+) dim=(\d+)\s*$")


def format_curve(curve):
    lines = [f"pelastica-curve v1 N={curve.n_nodes} L={curve.domain_length!r} dim={curve.dim}"]
    for row in curve.nodes:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_curve(text):
    """Parse the ``pelastica-curve v1`` text format."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise CurveFormatError("empty curve file")
    match = _HEADER.match(lines[0].strip())
    if match is None:
        raise CurveFormatError(f"bad header line: {lines[0]!r}")
    n_nodes, dim = int(match.group(1)), int(match.group(3))
    try:
        domain_length = float(match.group(2))
    except ValueError:
        raise CurveFormatError(f"bad domain length in header: {match.group(2)!r}") from None
    body = lines[1:]
    if len(body) != n_nodes:
        raise CurveFormatError(f"header declares N={n_nodes} nodes but file has {len(body)}")
    rows = []
    for lineno, line in enumerate(body, start=2):
        fields = line.split()
        if len(fields) != dim:
            raise CurveFormatError(f"line {lineno}: expected {dim} coordinates, got {len(fields)}")
        try:
            rows.append([float(v) for v in fields])
        except ValueError:
            raise CurveFormatError(f"line {lineno}: malformed coordinate") from None
    return ClosedCurve(np.array(rows), domain_length)


def write_curve(curve, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(format_curve(curve))


def read_curve(path):
    if isinstance(path, io.TextIOBase):
        return parse_curve(path.read())
    with open(os.fspath(path), encoding="ascii") as fh:
        return parse_curve(fh.read())
