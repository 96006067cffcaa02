"""Minimising-movement time stepping for the p-elastic flow of closed curves.

Each step minimises

    F_j(phi) = E(ref + phi) + 1/(2h) int |P_perp_{gamma_j'}(ref + phi - gamma_j)|^2 |gamma_j'| dx

over perturbations ``phi`` orthogonal to the quasi-tangent with
``|phi|_inf < 3 mu`` and ``|phi'|_inf < 3 W``. The previous state is always a
competitor, and the inner solver only accepts non-increasing steps, so
``E_{j+1} + penalty / 2h <= E_j`` holds step by step.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .energy import EnergyParams, energy, energy_gradient_nodes, energy_of_nodes, energy_parts
from .geometry import (
    ClosedCurve,
    ResampleError,
    dot,
    norms,
    periodic_diff,
    resample_arclength,
    total_curvature,
    write_curve,
)
from .graph import (
    DecompositionError,
    NormalFrame,
    NormalGraph,
    ReferenceCurveError,
    admissible_check,
    decompose,
    make_reference,
)
from .mollify import QuasiTangentError, quasi_tangent

logger = logging.getLogger(__name__)

SATURATION = 0.99
COMPLEX_STEP = 1e-30
ROUNDING_SLACK = 64 * np.finfo(float).eps
STENCIL_REACH = 2  # Hessian couples nodes at most this far apart


class FlowError(RuntimeError):
    """Initial data cannot be set up as a normal graph (refine N or eps0)."""


@dataclass(frozen=True)
class FlowConfig:
    params: EnergyParams = field(default_factory=EnergyParams)
    h: float = 1e-3
    T: float = 0.5
    N: int = 256
    mu: float | None = None
    W: float = 2.5
    grad_tol: float | None = None
    max_inner_iters: int = 100
    reanchor: bool = True
    eps0: float = 0.05

    def __post_init__(self):
        if not self.h > 0.0:
            raise ValueError("h must be positive")
        if not self.T >= 0.0:
            raise ValueError("T must be non-negative")
        if int(self.N) < 8:
            raise ValueError("N must be at least 8")
        if self.mu is not None and not self.mu > 0.0:
            raise ValueError("mu must be positive")
        if not self.W > 2.0:
            raise ValueError("W must exceed 2")
        if self.grad_tol is not None and not self.grad_tol > 0.0:
            raise ValueError("grad_tol must be positive")
        if int(self.max_inner_iters) < 1:
            raise ValueError("max_inner_iters must be at least 1")
        if not self.eps0 > 0.0:
            raise ValueError("eps0 must be positive")

    @property
    def n_steps(self):
        return int(math.ceil(self.T / self.h - 1e-9))


@dataclass(frozen=True)
class Anchor:
    """Reference data shared by all steps between two re-anchorings."""

    reference: ClosedCurve
    qt: object
    frame: NormalFrame
    mu: float
    W: float

    def graph(self, coords):
        return NormalGraph(self.reference, self.qt, self.frame, coords,
                           self.reference.parameters.copy(), self.reference.domain_length)

    def nodes(self, coords):
        return self.reference.nodes + self.frame.to_ambient(coords)


@dataclass(frozen=True)
class StepRecord:
    step: int
    t: float
    energy: float
    p_energy: float
    length: float
    dissipation: float
    displacement_l2: float
    inner_iters: int
    margin_mu: float
    margin_W: float
    reanchored: bool
    energy_before: float = float("nan")
    grad_norm: float = 0.0
    converged: bool = True
    projection_factor: float = 1.0
    min_prev_speed: float = 1.0
    reanchor_drift: float = 0.0
    anchor: int = 0


@dataclass(frozen=True)
class Snapshot:
    step: int
    t: float
    anchor: int
    coords: np.ndarray


@dataclass(frozen=True)
class FlowState:
    t: float
    step: int
    anchors: tuple
    anchor: int
    coords: np.ndarray
    grad_tol: float
    ledger: tuple = ()
    snapshots: tuple = ()
    needs_reanchor: bool = False

    @property
    def current(self):
        return self.anchors[self.anchor]

    @property
    def graph(self):
        return self.current.graph(self.coords)

    def curve(self):
        a = self.current
        return ClosedCurve(a.nodes(self.coords), a.reference.domain_length)


@dataclass(frozen=True)
class Trajectory:
    config: FlowConfig
    anchors: tuple
    snapshots: tuple
    ledger: tuple
    reason: str
    grad_tol: float

    @property
    def times(self):
        return np.array([r.t for r in self.ledger])

    @property
    def energies(self):
        return np.array([r.energy for r in self.ledger])

    def snapshot_curve(self, snap):
        a = self.anchors[snap.anchor]
        return ClosedCurve(a.nodes(snap.coords), a.reference.domain_length)

    def step_snapshots(self):
        """First snapshot of every step (the step's own result)."""
        seen = {}
        for snap in self.snapshots:
            seen.setdefault(snap.step, snap)
        return [seen[k] for k in sorted(seen)]

    def step_curves(self):
        return [self.snapshot_curve(s) for s in self.step_snapshots()]

    def final_curve(self):
        return self.snapshot_curve(self.snapshots[-1])


class StepProblem:
    """The step functional ``F_j`` in frame coordinates, with derivatives."""

    def __init__(self, anchor, prev_nodes, params, h):
        self.anchor = anchor
        self.params = params
        self.h = float(h)
        self.dx = anchor.reference.dx
        self.prev = np.asarray(prev_nodes, dtype=float)
        a = periodic_diff(self.prev, self.dx, 1)
        self.prev_speed = norms(a)
        self.prev_tangent = a / self.prev_speed[:, None]
        self.shape = (anchor.reference.n_nodes, anchor.reference.dim - 1)
        self._colors = _colouring(self.shape[0])

    def nodes(self, coords):
        return self.anchor.nodes(coords)

    def _normal_displacement(self, nodes):
        d = nodes - self.prev
        return d - dot(d, self.prev_tangent)[:, None] * self.prev_tangent

    def penalty(self, coords):
        d = self._normal_displacement(self.nodes(coords))
        return float(np.sum(dot(d, d) * self.prev_speed) * self.dx)

    def value(self, coords):
        nodes = self.nodes(coords)
        d = self._normal_displacement(nodes)
        pen = np.sum(dot(d, d) * self.prev_speed) * self.dx
        return float(energy_of_nodes(nodes, self.dx, self.params) + pen / (2.0 * self.h))

    def gradient(self, coords):
        nodes = self.nodes(coords)
        d = self._normal_displacement(nodes)
        g = energy_gradient_nodes(nodes, self.dx, self.params)
        g = g + (self.prev_speed * self.dx / self.h)[:, None] * d
        return self.anchor.frame.to_coords(g)

    def hessian(self, coords):
        """Dense Hessian from complex-step derivatives of the gradient.

        Nodes of one colour are more than ``2 * STENCIL_REACH`` apart, so one
        gradient evaluation per colour and frame component recovers all
        columns of that colour.
        """
        n_nodes, codim = self.shape
        size = n_nodes * codim
        hess = np.zeros((size, size))
        rows = np.arange(n_nodes)
        for members, owner in self._colors:
            for k in range(codim):
                pert = np.zeros(self.shape, dtype=complex)
                pert[members, k] = 1j * COMPLEX_STEP
                col = self.gradient(coords + pert).imag / COMPLEX_STEP
                ok = owner >= 0
                r_nodes = rows[ok]
                c_index = owner[ok] * codim + k
                for m in range(codim):
                    hess[r_nodes * codim + m, c_index] = col[ok, m]
        return 0.5 * (hess + hess.T)


def _colouring(n_nodes):
    """Groups of nodes pairwise more than ``2 * STENCIL_REACH`` apart (periodically).

    Returns a list of ``(members, owner)`` where ``owner[r]`` is the member
    within reach of node ``r`` or -1.
    """
    spacing = 2 * STENCIL_REACH + 1
    full = (n_nodes // spacing) * spacing
    groups = [np.arange(c, full, spacing) for c in range(spacing)]
    groups += [np.array([j]) for j in range(full, n_nodes)]
    out = []
    for members in groups:
        owner = -np.ones(n_nodes, dtype=int)
        for j in members:
            for off in range(-STENCIL_REACH, STENCIL_REACH + 1):
                owner[(j + off) % n_nodes] = j
        out.append((members, owner))
    return out


def mm_functional(coords, prev, anchor, params, h):
    """Value of the step functional at frame coordinates ``coords``.

    ``prev`` is the previous curve (or its node array) on the anchor's grid.
    """
    prev_nodes = prev.nodes if isinstance(prev, ClosedCurve) else prev
    return StepProblem(anchor, prev_nodes, params, h).value(np.asarray(coords, dtype=float))


def _admissibility(anchor, coords):
    return admissible_check(anchor.graph(coords), anchor.mu, anchor.W)


def _descent_direction(problem, coords, grad):
    hess = problem.hessian(coords)
    g = grad.ravel()
    shift = 0.0
    diag_scale = max(float(np.max(np.abs(np.diag(hess)))), 1e-300)
    for _ in range(30):
        try:
            factor = cho_factor(hess + shift * np.eye(hess.shape[0]))
        except LinAlgError:
            shift = max(10.0 * shift, 1e-10 * diag_scale)
            continue
        d = -cho_solve(factor, g)
        if d @ g < 0.0:
            return d.reshape(grad.shape)
        shift = max(10.0 * shift, 1e-10 * diag_scale)
    return -grad


def minimise_step(problem, coords, grad_tol, max_iters, armijo=1e-4):
    """Monotone descent on the step functional from the competitor ``coords``.

    Newton-preconditioned directions with Armijo backtracking; candidates
    outside the admissible class are rejected by halving the step.

    Returns ``(coords, iterations, grad_norm, converged)``.
    """
    anchor = problem.anchor
    c = np.array(coords, dtype=float)
    f = problem.value(c)
    g = problem.gradient(c)
    gnorm = float(np.sqrt(np.sum(g * g)))
    iters = 0
    while gnorm > grad_tol and iters < max_iters:
        iters += 1
        d = _descent_direction(problem, c, g)
        slope = float(np.sum(g * d))
        alpha = 1.0
        accepted = False
        while alpha > 1e-12:
            cand = c + alpha * d
            if _admissibility(anchor, cand).admissible:
                fc = problem.value(cand)
                if fc <= f + armijo * alpha * slope:
                    accepted = True
                elif alpha == 1.0 and fc <= f + ROUNDING_SLACK * max(1.0, abs(f)):
                    # near the minimiser F changes below rounding: accept if the gradient shrinks
                    gc = problem.gradient(cand)
                    accepted = float(np.sqrt(np.sum(gc * gc))) < gnorm
                if accepted:
                    break
            alpha *= 0.5
        if not accepted:
            logger.debug("line search stalled at gradient norm %.3e", gnorm)
            break
        c, f = cand, fc
        g = problem.gradient(c)
        gnorm = float(np.sqrt(np.sum(g * g)))
    return c, iters, gnorm, gnorm <= grad_tol


def mm_step(state, config):
    """One minimising-movement step; returns the new state."""
    anchor = state.current
    prev_nodes = anchor.nodes(state.coords)
    problem = StepProblem(anchor, prev_nodes, config.params, config.h)
    e_before = float(energy_of_nodes(prev_nodes, problem.dx, config.params))
    coords, iters, gnorm, converged = minimise_step(
        problem, state.coords, state.grad_tol, config.max_inner_iters
    )
    new_nodes = anchor.nodes(coords)
    e_p, length = energy_parts(new_nodes, problem.dx, config.params)
    e_new = float(e_p + config.params.lam * length)
    penalty = problem.penalty(coords)
    disp = new_nodes - prev_nodes
    report = _admissibility(anchor, coords)
    step = state.step + 1
    t = step * config.h
    record = StepRecord(
        step=step,
        t=t,
        energy=e_new,
        p_energy=float(e_p),
        length=float(length),
        dissipation=penalty / (2.0 * config.h),
        displacement_l2=float(np.sqrt(np.sum(dot(disp, disp)) * problem.dx)),
        inner_iters=iters,
        margin_mu=report.margin_mu,
        margin_W=report.margin_W,
        reanchored=False,
        energy_before=e_before,
        grad_norm=gnorm,
        converged=converged,
        projection_factor=float(np.abs(dot(problem.prev_tangent, anchor.qt.tau)).min()),
        min_prev_speed=float(problem.prev_speed.min()),
        anchor=state.anchor,
    )
    saturated = (
        report.sup_phi >= SATURATION * 3.0 * anchor.mu
        or report.sup_dphi >= SATURATION * 3.0 * anchor.W
        or report.regularity_margin <= 0.5 + 0.01
    )
    if saturated:
        logger.info("step %d: admissible bounds near saturation", step)
    snap = Snapshot(step, t, state.anchor, coords.copy())
    return dataclasses.replace(
        state,
        t=t,
        step=step,
        coords=coords,
        ledger=state.ledger + (record,),
        snapshots=state.snapshots + (snap,),
        needs_reanchor=saturated,
    )


def make_anchor(curve, config, reference=None):
    """Reference, quasi-tangent, frame and decomposition of an arc-length curve.

    By default the reference is the mollified curve from :func:`make_reference`;
    passing ``reference=curve`` gives the identity decomposition.

    Returns ``(anchor, coords)``.
    """
    if reference is None:
        reference = make_reference(curve, config.eps0)
    qt = quasi_tangent(reference)
    frame = NormalFrame.from_tau(qt.tau)
    graph = decompose(curve, reference, qt, frame)
    phi = graph.phi
    sup_phi = float(norms(phi).max())
    sup_dphi = float(norms(periodic_diff(phi, reference.dx, 1)).max())
    k_const = 1.0 / (4.0 * max(qt.bounds[0], 1e-12))
    seed = config.mu if config.mu is not None else k_const / 3.0
    # seeds are kept when the start is strictly inside the saturation band
    mu = seed if sup_phi < SATURATION * 3.0 * seed else sup_phi
    W = config.W if sup_dphi < SATURATION * 3.0 * config.W else sup_dphi
    logger.info("anchor: L=%.6g epsilon=%.4g mu=%.4g W=%.4g |Phi|=%.3g", reference.domain_length,
                qt.epsilon, mu, W, sup_phi)
    return Anchor(reference, qt, frame, mu, W), graph.coords


def initial_state(initial, config):
    """Resample, build the reference, and decompose the initial curve."""
    try:
        curve = resample_arclength(initial, config.N)
        anchor, coords = make_anchor(curve, config)
    except (ResampleError, DecompositionError, ReferenceCurveError, QuasiTangentError) as exc:
        raise FlowError(f"initial data cannot be written as a normal graph: {exc}") from exc
    nodes = anchor.nodes(coords)
    e_p, length = energy_parts(nodes, anchor.reference.dx, config.params)
    e0 = float(e_p + config.params.lam * length)
    grad_tol = config.grad_tol if config.grad_tol is not None else 1e-8 * max(1.0, e0)
    report = admissible_check(anchor.graph(coords), anchor.mu, anchor.W)
    record = StepRecord(
        step=0, t=0.0, energy=e0, p_energy=float(e_p), length=float(length), dissipation=0.0,
        displacement_l2=0.0, inner_iters=0, margin_mu=report.margin_mu, margin_W=report.margin_W,
        reanchored=False, energy_before=e0,
    )
    return FlowState(
        t=0.0, step=0, anchors=(anchor,), anchor=0, coords=coords, grad_tol=grad_tol,
        ledger=(record,), snapshots=(Snapshot(0, 0.0, 0, coords.copy()),),
    )


def reanchor(state, config):
    """Restart the graph representation at the current curve.

    Raises
    ------
    ResampleError, DecompositionError, ReferenceCurveError, QuasiTangentError
        If the current curve cannot be re-decomposed.
    """
    current = state.curve()
    e_old = energy(current, config.params)
    curve = resample_arclength(current, config.N)
    # the resampled iterate is its own reference, so phi restarts at zero
    anchor, coords = make_anchor(curve, config, reference=curve)
    anchors = state.anchors + (anchor,)
    idx = len(anchors) - 1
    e_new = float(energy_of_nodes(anchor.nodes(coords), anchor.reference.dx, config.params))
    drift = e_new - e_old
    logger.info("re-anchored at t=%.4g; energy drift %.3e", state.t, drift)
    ledger = list(state.ledger)
    ledger[-1] = dataclasses.replace(ledger[-1], reanchored=True, reanchor_drift=drift)
    snap = Snapshot(state.step, state.t, idx, coords.copy())
    return dataclasses.replace(
        state, anchors=anchors, anchor=idx, coords=coords, ledger=tuple(ledger),
        snapshots=state.snapshots + (snap,), needs_reanchor=False,
    )


def run_flow(initial, config):
    """Run the scheme from ``initial`` up to time ``config.T``.

    Returns a :class:`Trajectory`; ``reason`` explains how the run ended.
    """
    state = initial_state(initial, config)
    reason = "completed"
    for _ in range(config.n_steps):
        state = mm_step(state, config)
        if state.needs_reanchor:
            if not config.reanchor:
                reason = f"bound saturation at t={state.t:.6g} with re-anchoring off"
                break
            try:
                state = reanchor(state, config)
            except (ResampleError, DecompositionError, ReferenceCurveError, QuasiTangentError) as exc:
                reason = f"re-anchoring failed at t={state.t:.6g}: {exc}"
                break
    last = state.ledger[-1]
    logger.info("flow finished (%s): t=%.4g E=%.8g", reason, state.t, last.energy)
    return Trajectory(config, state.anchors, state.snapshots, state.ledger, reason, state.grad_tol)


def interpolate(trajectory, t):
    """Piecewise-linear-in-time curve ``ref + phi(t)``.

    Snapshots are interpolated in frame coordinates within one anchor; at a
    re-anchoring time the newer representation is used.
    """
    snaps = trajectory.snapshots
    if not 0.0 <= t <= snaps[-1].t:
        raise ValueError(f"t={t} outside [0, {snaps[-1].t}]")
    for k in range(len(snaps) - 1, -1, -1):
        if snaps[k].t <= t:
            break
    lo = snaps[k]
    if lo.t == t or k == len(snaps) - 1:
        return trajectory.snapshot_curve(lo)
    hi = snaps[k + 1]
    theta = (t - lo.t) / (hi.t - lo.t)
    coords = lo.coords + theta * (hi.coords - lo.coords)
    a = trajectory.anchors[hi.anchor]
    return ClosedCurve(a.nodes(coords), a.reference.domain_length)


def interpolate_coords(trajectory, t):
    """Frame coordinates of the interpolant and the anchor they refer to."""
    snaps = trajectory.snapshots
    if not 0.0 <= t <= snaps[-1].t:
        raise ValueError(f"t={t} outside [0, {snaps[-1].t}]")
    for k in range(len(snaps) - 1, -1, -1):
        if snaps[k].t <= t:
            break
    lo = snaps[k]
    if lo.t == t or k == len(snaps) - 1:
        return lo.coords, lo.anchor
    hi = snaps[k + 1]
    theta = (t - lo.t) / (hi.t - lo.t)
    return lo.coords + theta * (hi.coords - lo.coords), hi.anchor


def dissipation_constant(trajectory):
    """Measured constant ``C`` with ``(1/h) |d gamma|^2_{L2} <= C (E_j - E_{j+1})``.

    Uses ``|v| <= |P_perp v| / m`` for ``v`` orthogonal to ``tau``, where ``m``
    is the least ``|<T_prev, tau>|`` seen, and ``|gamma_j'| >= s_min``:
    ``C = 2 / (m^2 s_min)``.
    """
    steps = trajectory.ledger[1:]
    if not steps:
        return 0.0
    m = min(r.projection_factor for r in steps)
    s = min(r.min_prev_speed for r in steps)
    return 2.0 / (m * m * s)


@dataclass
class DissipationReport:
    cumulative: float
    energy_drop: float
    constant: float
    slack: float
    violations: list

    @property
    def ok(self):
        return not self.violations


def dissipation_report(trajectory):
    """Check the summed dissipation and the ``sqrt(t)`` displacement bounds."""
    ledger = trajectory.ledger
    if len(ledger) < 2:
        raise ValueError("trajectory has no steps")
    h = trajectory.config.h
    tol = trajectory.grad_tol
    steps = ledger[1:]
    const = dissipation_constant(trajectory)
    violations = []
    cumulative = sum(r.displacement_l2**2 / h for r in steps)
    drift = sum(max(r.reanchor_drift, 0.0) for r in steps)
    drop = ledger[0].energy - ledger[-1].energy + drift
    slack = 10.0 * tol * len(steps)
    if cumulative > const * (drop + slack):
        violations.append(
            f"cumulative dissipation {cumulative:.6g} exceeds C*(E0-E_final)={const * (drop + slack):.6g}"
        )
    for r in steps:
        lhs = r.dissipation
        rhs = r.energy_before - r.energy + 10.0 * tol
        if lhs > rhs:
            violations.append(f"step {r.step}: penalty/2h={lhs:.6g} > energy drop + slack {rhs:.6g}")
    # displacement from the initial curve while the first anchor is in use
    snaps = [s for s in trajectory.step_snapshots() if s.anchor == 0]
    if snaps:
        dx = trajectory.anchors[0].reference.dx
        base = snaps[0].coords
        e0 = ledger[0].energy
        bound_c = math.sqrt(const * max(e0, 0.0))
        for s in snaps[1:]:
            diff = s.coords - base
            dist = math.sqrt(float(np.sum(diff * diff)) * dx)
            if dist > bound_c * math.sqrt(s.t) + math.sqrt(slack * const * s.t):
                violations.append(f"step {s.step}: |gamma_0 - gamma_j| = {dist:.6g} above C sqrt(E0 t)")
    return DissipationReport(cumulative, drop, const, slack, violations)


def holder_constant(trajectory):
    """``C`` with ``|phi(t'') - phi(t')|_{L2} <= C sqrt(t'' - t')`` for the interpolant."""
    ledger = trajectory.ledger
    const = dissipation_constant(trajectory)
    drift = sum(max(r.reanchor_drift, 0.0) for r in ledger[1:])
    drop = ledger[0].energy - ledger[-1].energy + drift
    slack = 10.0 * trajectory.grad_tol * max(len(ledger) - 1, 1)
    return math.sqrt(const * (max(drop, 0.0) + slack))


def holder_pairs_check(trajectory, n_pairs=100, seed=0):
    """Sample time pairs within one anchor and return the worst ratio to the bound."""
    rng = np.random.default_rng(seed)
    c_holder = holder_constant(trajectory)
    t_end = trajectory.snapshots[-1].t
    worst = 0.0
    checked = 0
    attempts = 0
    while checked < n_pairs and attempts < 20 * n_pairs:
        attempts += 1
        t1, t2 = np.sort(rng.uniform(0.0, t_end, size=2))
        if t2 <= t1:
            continue
        c1, a1 = interpolate_coords(trajectory, float(t1))
        c2, a2 = interpolate_coords(trajectory, float(t2))
        if a1 != a2:
            continue
        dx = trajectory.anchors[a1].reference.dx
        dist = math.sqrt(float(np.sum((c2 - c1) ** 2)) * dx)
        bound = c_holder * math.sqrt(t2 - t1)
        worst = max(worst, dist / bound if bound > 0 else (0.0 if dist == 0 else math.inf))
        checked += 1
    return worst, c_holder, checked


def fenchel_checks(curve, params):
    """``(total curvature slack, length-bound slack)``; both must be non-negative."""
    n_nodes = curve.n_nodes
    tc = total_curvature(curve)
    e_p, length = energy_parts(curve.nodes, curve.dx, params)
    length = float(length)
    first = tc - (2.0 * math.pi - 10.0 * curve.domain_length / n_nodes)
    second = length ** (params.p - 1.0) - ((2.0 * math.pi) ** params.p / (params.p * float(e_p)) - 10.0 / n_nodes)
    return first, second


def best_fit_circle(curve):
    """Algebraic least-squares circle ``(centre, radius)`` of a planar curve."""
    pts = curve.nodes
    if pts.shape[1] != 2:
        raise ValueError("best-fit circle needs a planar curve")
    A = np.column_stack([2.0 * pts, np.ones(len(pts))])
    rhs = np.sum(pts * pts, axis=1)
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    centre = sol[:2]
    radius = math.sqrt(sol[2] + centre @ centre)
    return centre, radius


def critical_radius(params, n_nodes=None):
    """Radius minimising the energy among round circles.

    With ``n_nodes`` the critical radius of the uniformly sampled ``N``-gon
    energy is returned, ``r* / cos^2(pi / N)``.
    """
    r_star = ((params.p - 1.0) / (params.p * params.lam)) ** (1.0 / params.p)
    if n_nodes is None:
        return r_star
    return r_star / math.cos(math.pi / n_nodes) ** 2


def circle_energy(radius, params):
    return 2.0 * math.pi * radius * (radius ** (-params.p) / params.p + params.lam)


LEDGER_COLUMNS = (
    "step", "t", "energy", "p_energy", "length", "dissipation", "displacement_l2",
    "inner_iters", "margin_mu", "margin_W", "reanchored",
)
TRAJ_HEADER = "pelastica-traj v1"


def _fmt(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def format_ledger(ledger):
    lines = [",".join(LEDGER_COLUMNS)]
    for r in ledger:
        lines.append(",".join(_fmt(getattr(r, col)) for col in LEDGER_COLUMNS))
    return "\n".join(lines) + "\n"


def parse_ledger(text):
    """Rows of a ``ledger.csv`` as dictionaries of floats (ints for counters)."""
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or tuple(lines[0].split(",")) != LEDGER_COLUMNS:
        raise ValueError("ledger.csv header does not match the pelastica-traj v1 columns")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != len(LEDGER_COLUMNS):
            raise ValueError(f"ledger.csv line {lineno}: expected {len(LEDGER_COLUMNS)} fields")
        row = {}
        for col, val in zip(LEDGER_COLUMNS, fields):
            row[col] = int(val) if col in ("step", "inner_iters", "reanchored") else float(val)
        rows.append(row)
    return rows


def format_traj_config(trajectory):
    cfg = trajectory.config
    items = [
        ("format", TRAJ_HEADER),
        ("p", _fmt(cfg.params.p)),
        ("lambda", _fmt(cfg.params.lam)),
        ("h", _fmt(cfg.h)),
        ("T", _fmt(cfg.T)),
        ("N", str(cfg.N)),
        ("mu", _fmt(trajectory.anchors[0].mu)),
        ("W", _fmt(trajectory.anchors[0].W)),
        ("grad_tol", _fmt(trajectory.grad_tol)),
        ("max_inner_iters", str(cfg.max_inner_iters)),
        ("reanchor", "on" if cfg.reanchor else "off"),
        ("eps0", _fmt(cfg.eps0)),
        ("anchors", str(len(trajectory.anchors))),
        ("termination", trajectory.reason),
    ]
    return "".join(f"{k}={v}\n" for k, v in items)


def write_trajectory(trajectory, directory):
    """Write the ``pelastica-traj v1`` layout into ``directory`` (created if needed)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config").write_text(format_traj_config(trajectory), encoding="ascii")
    (out / "ledger.csv").write_text(format_ledger(trajectory.ledger), encoding="ascii")
    for snap in trajectory.step_snapshots():
        write_curve(trajectory.snapshot_curve(snap), out / f"curve_{snap.step}.txt")
    return out
