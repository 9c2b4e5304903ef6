"""Time integration of the negative gradient flow dg/dt = -grad F.

The integrator always steps with the exact gradient of the *discrete*
energy (see discrete_gradient), so energy decrease is structural up to
step-size error, independent of any analytic-formula convention.  The
analytic gradient is a verification target elsewhere, never the
integrator's input.  One fused, jitted kernel per state evaluates the
gradient together with all scalar monitors (F, G, volume, sup|Rm|,
integral |grad F|^2).

A FlowTrace records per-step scalar histories plus a schedule of full
metric snapshots used by the geometry checks.  Curvature-derivative
sup-norms are expensive and are refreshed only at snapshot records;
between records the last value is carried forward in the history.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .metric import MetricField, PositivityError
from .curvature import deriv_sup_norms
from .functionals import EnergyReport
from . import discrete_gradient as dg

#: dt = SAFETY * min(h)^4 / (1 + sup|Rm| * CURV_SCALE): explicit stability
#: guess for a 4th-order parabolic operator, tuned empirically
DT_SAFETY = 0.1
DT_CURV_SCALE = 1.0

#: energy may rise by at most this relative amount before a step is retried
ENERGY_TOL = 1e-12

MAX_RETRIES = 10


class FlowAbort(RuntimeError):
    """Flow stopped before reaching its target time."""

    def __init__(self, message, last_state=None, point=None):
        super().__init__(message)
        self.last_state = last_state
        self.point = point


@dataclass(frozen=True)
class FlowState:
    """One instant of the flow with its fused kernel evaluation."""

    t: float
    metric: MetricField
    grad: np.ndarray = field(repr=False)
    cached_energy: EnergyReport
    sup_rm: float
    grad_l2_sq: float


def make_state(metric: MetricField, t: float = 0.0) -> FlowState:
    ev = dg.flow_eval(metric)
    return FlowState(
        t=t,
        metric=metric,
        grad=ev["grad"],
        cached_energy=EnergyReport(
            F=ev["F"], G=ev["G"],
            gauss_bonnet_residual=ev["F"] - 4.0 * ev["G"],
            volume=ev["vol"],
        ),
        sup_rm=ev["sup_rm"],
        grad_l2_sq=ev["grad_l2_sq"],
    )


@dataclass
class FlowTrace:
    """Scalar histories plus sampled full states of one run.

    ``history`` rows are dicts keyed by HISTORY_COLUMNS; ``states``
    holds the snapshot FlowStates in time order.
    """

    history: list = field(default_factory=list)
    states: list = field(default_factory=list)

    HISTORY_COLUMNS = (
        "step", "t", "dt", "F", "G", "vol",
        "sup_rm", "sup_d1rm", "sup_d2rm", "sup_d3rm", "grad_l2_sq",
    )

    @property
    def times(self) -> np.ndarray:
        return np.asarray([row["t"] for row in self.history])

    def column(self, name: str) -> np.ndarray:
        return np.asarray([row[name] for row in self.history])

    def state_at(self, t: float) -> FlowState:
        """Snapshot closest in time to t."""
        ts = np.asarray([s.t for s in self.states])
        return self.states[int(np.argmin(np.abs(ts - t)))]

    def bounds(self) -> dict:
        """Recorded proxies for the run's controlling constants."""
        out = {"Lambda": float(self.history[0]["F"]) if self.history else 0.0}
        out.update(decay_monitors(self))
        return out


def dt_stable(state: FlowState) -> float:
    h = float(np.min(state.metric.grid.spacing))
    return DT_SAFETY * h**4 / (1.0 + state.sup_rm * DT_CURV_SCALE)


def step(state: FlowState, dt: float, method: str = "euler") -> FlowState:
    """One explicit step; retries with halved dt on energy increase.

    An update that leaves the metric bitwise unchanged (exact fixed
    point, e.g. the flat metric whose discrete gradient is exactly
    zero) reuses the current evaluation instead of recomputing it.
    """
    if method not in ("euler", "midpoint"):
        raise ValueError(f"unknown integrator {method!r}")
    grid = state.metric.grid
    g0 = state.metric.g
    F0 = state.cached_energy.F
    if method == "euler" and np.array_equal(_sym(g0 - dt * state.grad), g0):
        return replace(state, t=state.t + dt)
    for attempt in range(MAX_RETRIES + 1):
        try:
            if method == "euler":
                m1 = MetricField(grid, _sym(g0 - dt * state.grad))
            else:
                half = make_state(
                    MetricField(grid, _sym(g0 - 0.5 * dt * state.grad)),
                    t=state.t,
                )
                m1 = MetricField(grid, _sym(g0 - dt * half.grad))
        except PositivityError as exc:
            raise FlowAbort(
                f"positivity lost at t={state.t + dt:.3e}: {exc}",
                last_state=state, point=exc.index,
            ) from exc
        new = make_state(m1, t=state.t + dt)
        if new.cached_energy.F <= F0 * (1.0 + ENERGY_TOL) + ENERGY_TOL:
            return new
        dt *= 0.5
    raise FlowAbort(
        f"energy increase persisted after {MAX_RETRIES} dt halvings "
        f"at t={state.t:.3e}", last_state=state,
    )


def _sym(g):
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def run(
    initial: MetricField,
    t_final: float,
    dt: float | None = None,
    method: str = "euler",
    snapshot_every: int = 10,
    max_steps: int = 100000,
    deriv_norms: bool = True,
    order3_stride: int = 2,
) -> FlowTrace:
    """Integrate to t_final, recording histories and snapshots.

    With ``dt=None`` the step is refreshed adaptively from dt_stable at
    every step.  ``snapshot_every`` controls both full-state retention
    and the expensive curvature-derivative sup-norms; between refreshes
    the last values are carried forward in the history rows.
    """
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    trace = FlowTrace()
    state = make_state(initial)
    sup_derivs = _deriv_row(initial, deriv_norms, order3_stride)
    trace.states.append(state)
    _record(trace, 0, state, 0.0, sup_derivs)
    nstep = 0
    while state.t < t_final and nstep < max_steps:
        dt_now = dt_stable(state) if dt is None else dt
        dt_now = min(dt_now, t_final - state.t)
        state = step(state, dt_now, method=method)
        nstep += 1
        if nstep % snapshot_every == 0 or state.t >= t_final:
            sup_derivs = _deriv_row(state.metric, deriv_norms, order3_stride)
            trace.states.append(state)
        _record(trace, nstep, state, dt_now, sup_derivs)
    if state.t < t_final:
        raise FlowAbort(
            f"max_steps={max_steps} exhausted at t={state.t:.3e}",
            last_state=state,
        )
    return trace


def _deriv_row(metric: MetricField, enabled: bool, stride: int) -> dict:
    if not enabled:
        return {f"sup_d{m}rm": float("nan") for m in (1, 2, 3)}
    norms = deriv_sup_norms(metric, max_order=3, order3_stride=stride)
    return {f"sup_d{m}rm": norms[m] for m in (1, 2, 3)}


def _record(trace, nstep, state, dt_now, sup_derivs):
    rep = state.cached_energy
    row = {
        "step": nstep,
        "t": state.t,
        "dt": dt_now,
        "F": rep.F,
        "G": rep.G,
        "vol": rep.volume,
        "sup_rm": state.sup_rm,
        "grad_l2_sq": state.grad_l2_sq,
    }
    row.update(sup_derivs)
    trace.history.append(row)


def energy_identity_residual(trace: FlowTrace) -> float:
    """Max relative defect of F(0) - F(t) = time integral of grad norm."""
    if len(trace.history) < 3:
        raise ValueError("trace needs at least 3 records")
    t = trace.times
    F = trace.column("F")
    gsq = trace.column("grad_l2_sq")
    integral = np.concatenate(
        [[0.0], np.cumsum(0.5 * (gsq[1:] + gsq[:-1]) * np.diff(t))]
    )
    drop = F[0] - F
    defect = np.abs(drop - integral)
    denom = np.maximum(drop, 1e-12)
    return float(np.max(defect[1:] / denom[1:]))


def decay_monitors(trace: FlowTrace) -> dict:
    """Fitted decay constants; reported, never asserted."""
    t = trace.times
    mask = t > 0
    out = {}
    if not np.any(mask):
        return out
    out["K_fit"] = float(np.max(trace.column("sup_rm")[mask] * t[mask] ** 0.5))
    for m in (1, 2, 3):
        col = trace.column(f"sup_d{m}rm")[mask]
        good = np.isfinite(col)
        if np.any(good):
            out[f"C{m}_fit"] = float(
                np.max(col[good] * t[mask][good] ** ((2.0 + m) / 4.0))
            )
    return out


def region_volume(metric: MetricField, region: np.ndarray) -> float:
    """Riemannian volume of a boolean grid-point subset."""
    w = metric.sqrt_det * metric.grid.cell_volume
    return float(np.sum(w[region]))


def volopenset_check(trace: FlowTrace, region: np.ndarray) -> float:
    """Smallest C with sqrt(Vol_t(U)) >= sqrt(Vol_0(U)) - C sqrt(t) D(t).

    D(t)^2 is the gradient dissipation restricted to the region,
    integral over [0, t] of integral_U |grad F|^2 dV, evaluated at the
    snapshot states by trapezoid rule.  The returned empirical C is
    reported, not asserted: the square-root volume of an open set can
    shrink at most at the dissipation rate (Cauchy-Schwarz in space and
    time), with a non-constructive constant.
    """
    from .curvature import frame_norm_sq, orthonormal_coframe

    if not np.any(region):
        raise ValueError("region is empty")
    ts = np.asarray([s.t for s in trace.states])
    vols = np.empty(len(trace.states))
    diss = np.empty(len(trace.states))
    for k, s in enumerate(trace.states):
        vols[k] = region_volume(s.metric, region)
        E = orthonormal_coframe(s.metric)
        gsq = frame_norm_sq(s.grad, E, 2)
        w = s.metric.sqrt_det * s.metric.grid.cell_volume
        diss[k] = float(np.sum((gsq * w)[region]))
    cum = np.concatenate(
        [[0.0], np.cumsum(0.5 * (diss[1:] + diss[:-1]) * np.diff(ts))]
    )
    drop = np.sqrt(vols[0]) - np.sqrt(vols)
    denom = np.sqrt(np.maximum(ts, 0.0)) * np.sqrt(np.maximum(cum, 0.0))
    ok = denom > 1e-300
    if not np.any(ok):
        return 0.0
    return float(max(np.max(drop[ok] / denom[ok]), 0.0))


def time_reversed_view(trace: FlowTrace) -> FlowTrace:
    """Same records, re-indexed by t -> t1 + t2 - t (order reversed)."""
    t = trace.times
    t1, t2 = float(t[0]), float(t[-1])
    rev = FlowTrace()
    for row in reversed(trace.history):
        new = dict(row)
        new["t"] = t1 + t2 - row["t"]
        rev.history.append(new)
    for s in reversed(trace.states):
        rev.states.append(replace(s, t=t1 + t2 - s.t))
    return rev
