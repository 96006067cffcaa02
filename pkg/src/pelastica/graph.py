"""Approximate normal graphs over a smooth reference curve.

A curve is written as ``gamma o sigma = ref + phi`` where ``phi`` is pointwise
orthogonal to the quasi-tangent ``tau`` of the reference. ``phi`` is stored in
coordinates of a parallel-transported orthonormal frame of ``tau``-perp.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, logm

from .geometry import ClosedCurve, dot, norms, parse_curve, format_curve, periodic_diff, resample_arclength
from .mollify import KERNEL, mollify_curve, quasi_tangent

logger = logging.getLogger(__name__)


class RetractError(RuntimeError):
    """Point is outside the tubular chart (Newton failed or left the chart)."""


class DecompositionError(RuntimeError):
    """Curve cannot be written as a normal graph over the given reference."""


class ReferenceCurveError(RuntimeError):
    """No mollification radius brings the reference within the closeness target."""


def project(v, w):
    """Split ``w`` into components along and orthogonal to the line ``R v``.

    Returns
    -------
    tangential, normal : ndarray
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    nv = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    if np.any(nv == 0.0):
        raise ValueError("projection direction must be nonzero")
    u = v / nv
    tangential = np.sum(w * u, axis=-1, keepdims=True) * u
    return tangential, w - tangential


def _transport(a, b, v):
    """Minimal rotation taking unit ``a`` to unit ``b``, applied to ``v`` (columns)."""
    s = a + b
    denom = 1.0 + a @ b
    return v - np.outer(s, s @ v) / denom + 2.0 * np.outer(b, a @ v)


def _orthonormalise(tau, basis):
    basis = basis - np.outer(tau, tau @ basis)
    q, r = np.linalg.qr(basis)
    # keep orientation of the input columns
    return q * np.sign(np.diag(r))


def normal_frame(tau):
    """Parallel-transported orthonormal frame of the planes ``tau_i``-perp.

    The first vector at node 0 comes from projecting the coordinate axis least
    aligned with ``tau_0``; the frame is transported node to node by minimal
    rotations and the holonomy at the seam is undone by a rotation about
    ``tau`` spread evenly over the nodes.

    Returns
    -------
    frame : ndarray, shape (N, n, n-1)
    """
    tau = np.asarray(tau, dtype=float)
    n_nodes, dim = tau.shape
    axes = np.eye(dim)
    order = np.argsort(np.abs(tau[0]))
    start = _orthonormalise(tau[0], axes[:, order[: dim - 1]])
    if dim == 2:
        # fix the orientation so that (tau, nu) is positively oriented
        rot = np.array([-tau[0, 1], tau[0, 0]])
        start = rot[:, None]
    frames = np.empty((n_nodes, dim, dim - 1))
    frames[0] = start
    for i in range(1, n_nodes):
        frames[i] = _transport(tau[i - 1], tau[i], frames[i - 1])
    closing = _transport(tau[-1], tau[0], frames[-1])
    holonomy = start.T @ closing
    gen = np.real(logm(holonomy)) if dim > 2 else np.zeros((1, 1))
    gen = 0.5 * (gen - gen.T)
    for i in range(n_nodes):
        frames[i] = _orthonormalise(tau[i], frames[i] @ expm(-(i / n_nodes) * gen))
    return frames


@dataclass(frozen=True)
class NormalFrame:
    basis: np.ndarray  # (N, n, n-1)

    @classmethod
    def from_tau(cls, tau):
        return cls(normal_frame(tau))

    def to_ambient(self, coords):
        return np.einsum("iak,ik->ia", self.basis, coords)

    def to_coords(self, vectors):
        return np.einsum("iak,ia->ik", self.basis, vectors)


def chart_thickness(reference, qt):
    """Chart size ``min(L/16, 1/(4 (1 + sup|tau'|)))``."""
    return min(reference.domain_length / 16.0, 1.0 / (4.0 * (1.0 + qt.bounds[0])))


class TubularChart:
    """Evaluator for ``H(x, v) = ref(x) + P_perp_{tau(x)} v`` and its inverse."""

    def __init__(self, reference, qt, frame=None):
        if qt.n_nodes != reference.n_nodes:
            raise ValueError("quasi-tangent and reference have different node counts")
        self.reference = reference
        self.qt = qt
        self.frame = frame if frame is not None else NormalFrame.from_tau(qt.tau)
        self.spline = reference.spline()
        self.period = reference.domain_length
        self.dx = reference.dx
        self.delta = chart_thickness(reference, qt)

    def tau_at(self, x):
        """Linearly interpolated and renormalised ``tau`` and its derivative."""
        tau = self.qt.tau
        n_nodes = tau.shape[0]
        u = np.mod(x, self.period) / self.dx
        i = int(np.floor(u)) % n_nodes
        s = u - np.floor(u)
        a, b = tau[i], tau[(i + 1) % n_nodes]
        w = (1.0 - s) * a + s * b
        nw = np.sqrt(w @ w)
        t = w / nw
        dw = (b - a) / self.dx
        dt = (dw - (t @ dw) * t) / nw
        return t, dt

    def normal_basis(self, x0):
        """Orthonormal basis of the approximate normal space at ``x0``."""
        n_nodes = self.qt.n_nodes
        i = int(np.rint(np.mod(x0, self.period) / self.dx)) % n_nodes
        t0, _ = self.tau_at(x0)
        return _orthonormalise(t0, self.frame.basis[i])

    def forward(self, x, v):
        t, _ = self.tau_at(x)
        v = np.asarray(v, dtype=float)
        return self.spline(x) - (t @ v) * t + v

    def _periodic_gap(self, x, x0):
        d = np.mod(x - x0 + 0.5 * self.period, self.period) - 0.5 * self.period
        return abs(d)

    def inverse(self, p, x0, tol=1e-13, max_iter=50):
        p = np.asarray(p, dtype=float)
        basis = self.normal_basis(x0)
        nodes = self.reference.nodes
        params = self.reference.parameters
        window = self._periodic_gap(params, x0) < self.delta
        if not np.any(window):
            window = self._periodic_gap(params, x0) <= self._periodic_gap(params, x0).min()
        cand = np.flatnonzero(window)
        j = cand[np.argmin(norms(nodes[cand] - p))]
        x = x0 + (np.mod(params[j] - x0 + 0.5 * self.period, self.period) - 0.5 * self.period)
        w = np.zeros(basis.shape[1])
        scale = max(1.0, float(np.sqrt(p @ p)))

        def residual(x, w):
            return self.forward(x, basis @ w) - p

        r = residual(x, w)
        rn = float(np.sqrt(r @ r))
        for _ in range(max_iter):
            if rn <= tol * scale:
                break
            t, dt = self.tau_at(x)
            v = basis @ w
            col_x = self.spline(x, 1) - (v @ dt) * t - (v @ t) * dt
            col_w = basis - np.outer(t, t @ basis)
            jac = np.column_stack([col_x, col_w])
            step = np.linalg.solve(jac, -r)
            lam = 1.0
            while True:
                xn, wn = x + lam * step[0], w + lam * step[1:]
                rr = residual(xn, wn)
                rrn = float(np.sqrt(rr @ rr))
                if rrn < rn or lam < 1e-6:
                    break
                lam *= 0.5
            x, w, r, rn = xn, wn, rr, rrn
        else:
            if rn > tol * scale:
                raise RetractError(f"Newton did not converge in {max_iter} iterations (residual {rn:.3e})")
        if rn > 1e-10:
            raise RetractError(f"retraction residual {rn:.3e} above 1e-10")
        v = basis @ w
        if self._periodic_gap(x, x0) >= self.delta or np.sqrt(v @ v) >= self.delta:
            raise RetractError(
                f"point lies outside the chart of size {self.delta:.4g} around x0={x0:.6g}"
            )
        return float(np.mod(x, self.period)), v


def tubular_map(reference, qt, x, v, chart=None):
    """``ref(x) + P_perp_{tau(x)} v``."""
    chart = chart if chart is not None else TubularChart(reference, qt)
    return chart.forward(x, v)


def retract(reference, qt, p, x0, chart=None):
    """Invert the tubular map around the anchor ``x0``.

    Returns ``(x, v)`` with ``v`` in the approximate normal space at ``x0``.

    Raises
    ------
    RetractError
        If Newton does not converge or the preimage leaves the chart.
    """
    chart = chart if chart is not None else TubularChart(reference, qt)
    return chart.inverse(p, x0)


def c1_distance(a, b):
    """Grid ``C^1`` distance ``|a - b|_inf + |a' - b'|_inf`` of two curves on matching nodes."""
    d0 = norms(a.nodes - b.nodes).max()
    d1 = norms(periodic_diff(a.nodes, a.dx, 1) - periodic_diff(b.nodes, b.dx, 1)).max()
    return float(d0 + d1)


def make_reference(curve, eps0, kernel=KERNEL):
    """Smooth arc-length reference within ``eps0`` of ``curve`` in the grid C^1 norm.

    The largest mollification radius ``L/8, L/16, ...`` meeting the target is
    used, so the reference is as smooth as the target allows.
    """
    if not eps0 > 0.0:
        raise ValueError("eps0 must be positive")
    epsilon = curve.domain_length / 8.0
    best = None
    while epsilon >= 2.0 * curve.dx:
        candidate = resample_arclength(mollify_curve(curve, epsilon, kernel), curve.n_nodes)
        distance = c1_distance(candidate, curve)
        if distance <= eps0:
            logger.info("reference from epsilon=%.4g, C1 distance %.3g", epsilon, distance)
            return candidate
        best = distance if best is None else min(best, distance)
        epsilon *= 0.5
    raise ReferenceCurveError(
        f"no mollification radius reaches C1 distance {eps0:g} (best {best}); refine N"
    )


@dataclass(frozen=True)
class NormalGraph:
    """``curve o sigma = reference + phi`` with ``phi`` in frame coordinates."""

    reference: ClosedCurve
    qt: object
    frame: NormalFrame
    coords: np.ndarray  # (N, n-1)
    sigma: np.ndarray  # parameters of the source curve, unwrapped, increasing
    source_period: float

    @property
    def phi(self):
        return self.frame.to_ambient(self.coords)

    def curve(self):
        return ClosedCurve(self.reference.nodes + self.phi, self.reference.domain_length)

    def with_coords(self, coords):
        return NormalGraph(self.reference, self.qt, self.frame, np.asarray(coords, dtype=float),
                           self.sigma, self.source_period)

    def regularity_margin(self):
        d = periodic_diff(self.reference.nodes + self.phi, self.reference.dx, 1)
        return float(dot(d, self.qt.tau).min())


def graph_from_coords(reference, qt, coords, frame=None):
    """Normal graph with prescribed frame coordinates and identity ``sigma``."""
    frame = frame if frame is not None else NormalFrame.from_tau(qt.tau)
    return NormalGraph(reference, qt, frame, np.asarray(coords, dtype=float),
                       reference.parameters.copy(), reference.domain_length)


def decompose(curve, reference, qt, frame=None, tol=1e-13, max_iter=50):
    """Write ``curve`` as an approximate normal graph over ``reference``.

    For each reference node ``x_i`` the parameter ``sigma_i`` solves
    ``<curve(sigma_i) - ref(x_i), tau_i> = 0`` by safeguarded Newton on the
    periodic cubic interpolant of ``curve``; then ``phi_i = curve(sigma_i) - ref(x_i)``.

    Raises
    ------
    DecompositionError
        On non-convergence, loss of monotonicity of ``sigma``, ``|phi|`` beyond the
        chart thickness, or a regularity margin below 1/2.
    """
    if qt.n_nodes != reference.n_nodes:
        raise ValueError("quasi-tangent and reference have different node counts")
    frame = frame if frame is not None else NormalFrame.from_tau(qt.tau)
    spline = curve.spline()
    period = curve.domain_length
    n_nodes = reference.n_nodes
    ref = reference.nodes
    tau = qt.tau
    delta = chart_thickness(reference, qt)

    j0 = int(np.argmin(norms(curve.nodes - ref[0])))
    s = curve.parameters[j0] + np.arange(n_nodes) * (period / n_nodes)
    max_step = period / 8.0
    converged = np.zeros(n_nodes, dtype=bool)
    scale = max(1.0, float(np.abs(ref).max()))
    for _ in range(max_iter):
        f = dot(spline(s) - ref, tau)
        converged = np.abs(f) <= tol * scale
        if converged.all():
            break
        fp = dot(spline(s, 1), tau)
        bad = fp <= 0.0
        step = np.where(bad, -np.sign(f) * max_step, -f / np.where(bad, 1.0, fp))
        s = s + np.clip(step, -max_step, max_step)
    f = dot(spline(s) - ref, tau)
    if np.any(np.abs(f) > 1e-10 * scale):
        raise DecompositionError(
            f"tangential condition not solved at {int(np.sum(np.abs(f) > 1e-10 * scale))} nodes"
        )
    if np.any(dot(spline(s, 1), tau) <= 0.0):
        raise DecompositionError("curve crosses the approximate normal planes non-transversally")
    gaps = np.diff(np.concatenate([s, [s[0] + period]]))
    if np.any(gaps <= 0.0):
        raise DecompositionError("reparametrisation sigma is not strictly increasing")
    phi = spline(s) - ref
    if norms(phi).max() >= delta:
        raise DecompositionError(
            f"|phi| = {norms(phi).max():.4g} exceeds the chart thickness {delta:.4g}"
        )
    coords = frame.to_coords(phi)
    graph = NormalGraph(reference, qt, frame, coords, s, period)
    margin = graph.regularity_margin()
    if margin < 0.5 - 1e-6:
        raise DecompositionError(f"regularity margin {margin:.4g} below 1/2")
    return graph


@dataclass(frozen=True)
class AdmissibilityReport:
    sup_phi: float
    sup_dphi: float
    margin_mu: float
    margin_W: float
    regularity_margin: float

    @property
    def admissible(self):
        return self.margin_mu > 0.0 and self.margin_W > 0.0 and self.regularity_margin >= 0.5 - 1e-6


def admissible_check(ng, mu, W):
    """Sup-norms of ``phi`` and ``phi'`` against the strict bounds ``3 mu`` and ``3 W``."""
    phi = ng.phi
    sup_phi = float(norms(phi).max())
    sup_dphi = float(norms(periodic_diff(phi, ng.reference.dx, 1)).max())
    return AdmissibilityReport(
        sup_phi=sup_phi,
        sup_dphi=sup_dphi,
        margin_mu=3.0 * mu - sup_phi,
        margin_W=3.0 * W - sup_dphi,
        regularity_margin=ng.regularity_margin(),
    )


_GRAPH_HEADER = re.compile(r"^pelastica-graph v1 N=(\d+) codim=(\d+) period=(\S+)\s*$")


def format_graph(ng):
    """Reference curve block followed by a ``pelastica-graph v1`` block."""
    n_nodes, codim = ng.coords.shape
    lines = [f"pelastica-graph v1 N={n_nodes} codim={codim} period={ng.source_period!r}"]
    for s, row in zip(ng.sigma, ng.coords):
        lines.append(" ".join([repr(float(s))] + [repr(float(c)) for c in row]))
    return format_curve(ng.reference) + "\n".join(lines) + "\n"


def parse_graph(text):
    lines = text.splitlines()
    start = next((k for k, line in enumerate(lines) if line.startswith("pelastica-graph")), None)
    if start is None:
        raise ValueError("missing pelastica-graph block")
    reference = parse_curve("\n".join(lines[:start]))
    match = _GRAPH_HEADER.match(lines[start].strip())
    if match is None:
        raise ValueError(f"bad graph header: {lines[start]!r}")
    n_nodes, codim, period = int(match.group(1)), int(match.group(2)), float(match.group(3))
    rows = [line.split() for line in lines[start + 1:] if line.strip()]
    if n_nodes != reference.n_nodes or len(rows) != n_nodes:
        raise ValueError("graph block node count does not match the reference")
    if any(len(r) != codim + 1 for r in rows) or codim != reference.dim - 1:
        raise ValueError("graph block has the wrong number of columns")
    data = np.array(rows, dtype=float)
    qt = quasi_tangent(reference)
    frame = NormalFrame.from_tau(qt.tau)
    return NormalGraph(reference, qt, frame, data[:, 1:], data[:, 0], period)
