"""Receding-horizon nonlinear tracking controller.

Minimizes a quadratic tracking cost over the control sequence by single
shooting: roll the bicycle model forward, linearize analytically, and take
Levenberg-Marquardt steps on the stacked residual vector with the inputs
projected into their box after every step. Only decreasing steps are accepted,
so the returned cost never exceeds the warm start's.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlInput, VehicleParams, VehicleState, _step_scalar, wrap_angle
from .geometry import ReferenceWindow


class SolverStatus(enum.Enum):
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class MPCConfig:
    """Horizon, weights, bounds, and solver knobs.

    The tracking weights are the diagonal entries of the corresponding
    weighting matrices: q_perp/q_par for the tangent-frame position error,
    q_theta/q_v for heading and speed, r_* for input effort, rd_* for input
    rate, qf_* for the terminal state.
    """

    horizon: int = 16
    ts: float = 0.1
    q_perp: float = 5.0
    q_par: float = 1.0
    q_theta: float = 1.0
    q_v: float = 2.0
    r_a: float = 0.1
    r_delta: float = 0.5
    rd_a: float = 0.5
    rd_delta: float = 2.0
    qf_perp: float = 10.0
    qf_par: float = 2.0
    qf_theta: float = 2.0
    qf_v: float = 4.0
    a_min: float = -5.0
    a_max: float = 3.0
    delta_min: float = -0.6
    delta_max: float = 0.6
    max_iterations: int = 30
    tolerance: float = 1e-6
    reg_floor: float = 1e-8

    def __post_init__(self) -> None:
        weights = (
            self.q_perp, self.q_par, self.q_theta, self.q_v,
            self.r_a, self.r_delta, self.rd_a, self.rd_delta,
            self.qf_perp, self.qf_par, self.qf_theta, self.qf_v,
        )
        if any(w < 0.0 for w in weights):
            raise ValueError("weights must be non-negative")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")
        if self.a_min >= self.a_max or self.delta_min >= self.delta_max:
            raise ValueError("input bounds must be nonempty intervals")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.a_min, self.delta_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.a_max, self.delta_max])


@dataclass
class MPCSolution:
    inputs: np.ndarray  # (N, 2) columns a, delta
    predicted_states: list[VehicleState]
    cost: float
    status: SolverStatus
    iterations: int

    @property
    def first_input(self) -> ControlInput:
        return ControlInput(float(self.inputs[0, 0]), float(self.inputs[0, 1]))


def decompose_error(
    pos: tuple[float, float], ref_pos: tuple[float, float], tangent: tuple[float, float]
) -> tuple[float, float]:
    """Split pos - ref_pos into (perpendicular, along-path) w.r.t. a unit tangent.

    The perpendicular axis is the tangent rotated +90 degrees, so a positive
    e_perp means the position is to the left of the path.
    """
    tx, ty = tangent
    if abs(math.hypot(tx, ty) - 1.0) > 1e-9:
        raise ValueError("tangent must be unit-norm")
    dx, dy = pos[0] - ref_pos[0], pos[1] - ref_pos[1]
    e_par = dx * tx + dy * ty
    e_perp = dx * -ty + dy * tx
    return e_perp, e_par


def stage_cost(
    state: VehicleState,
    ref_sample: tuple[float, float, float, float, float, float],
    inp: ControlInput,
    prev_inp: ControlInput,
    cfg: MPCConfig,
) -> float:
    """One stage of the tracking objective.

    ref_sample is (x_ref, y_ref, v_ref, theta_ref, tan_x, tan_y).
    """
    xr, yr, vr, thr, tx, ty = ref_sample
    e_perp, e_par = decompose_error((state.x, state.y), (xr, yr), (tx, ty))
    e_th = wrap_angle(state.theta - thr)
    e_v = state.v - vr
    da, dd = inp.a - prev_inp.a, inp.delta - prev_inp.delta
    return (
        cfg.q_perp * e_perp**2
        + cfg.q_par * e_par**2
        + cfg.q_theta * e_th**2
        + cfg.q_v * e_v**2
        + cfg.r_a * inp.a**2
        + cfg.r_delta * inp.delta**2
        + cfg.rd_a * da**2
        + cfg.rd_delta * dd**2
    )


def _rollout_array(x0: np.ndarray, u: np.ndarray, ts: float, params: VehicleParams) -> np.ndarray:
    states = np.empty((len(u) + 1, 4))
    states[0] = x0
    for k in range(len(u)):
        states[k + 1] = _step_scalar(
            states[k, 0], states[k, 1], states[k, 2], states[k, 3],
            u[k, 0], u[k, 1], ts, params.wheelbase, params.rear_axle_to_cg,
        )
    return states


def _total_cost(states: np.ndarray, u: np.ndarray, u_prev: np.ndarray, win_v: np.ndarray,
                win: ReferenceWindow, cfg: MPCConfig) -> float:
    N = cfg.horizon
    dx = states[:, 0] - win.x
    dy = states[:, 1] - win.y
    e_par = dx * win.tan_x + dy * win.tan_y
    e_perp = -dx * win.tan_y + dy * win.tan_x
    e_th = np.array([wrap_angle(t) for t in states[:, 2] - win.theta])
    e_v = states[:, 3] - win_v
    track = (
        cfg.q_perp * e_perp[:N] ** 2 + cfg.q_par * e_par[:N] ** 2
        + cfg.q_theta * e_th[:N] ** 2 + cfg.q_v * e_v[:N] ** 2
    ).sum()
    effort = (cfg.r_a * u[:, 0] ** 2 + cfg.r_delta * u[:, 1] ** 2).sum()
    du = np.diff(np.vstack([u_prev, u]), axis=0)
    rate = (cfg.rd_a * du[:, 0] ** 2 + cfg.rd_delta * du[:, 1] ** 2).sum()
    terminal = (
        cfg.qf_perp * e_perp[N] ** 2 + cfg.qf_par * e_par[N] ** 2
        + cfg.qf_theta * e_th[N] ** 2 + cfg.qf_v * e_v[N] ** 2
    )
    return float(track + effort + rate + terminal)


def _linearize(states: np.ndarray, u: np.ndarray, ts: float, params: VehicleParams):
    """Per-step Jacobians A_k = df/dx, B_k = df/du along a rollout."""
    N = len(u)
    A = np.tile(np.eye(4), (N, 1, 1))
    B = np.zeros((N, 4, 2))
    cr = params.rear_axle_to_cg / params.wheelbase
    for k in range(N):
        x, y, th, v = states[k]
        a, d = u[k]
        tan_d = math.tan(d)
        beta = math.atan(cr * tan_d)
        hdg = th + beta
        ch, sh = math.cos(hdg), math.sin(hdg)
        dbeta_dd = cr * (1.0 + tan_d**2) / (1.0 + (cr * tan_d) ** 2)
        A[k, 0, 2] = -v * sh * ts
        A[k, 0, 3] = ch * ts
        A[k, 1, 2] = v * ch * ts
        A[k, 1, 3] = sh * ts
        A[k, 2, 3] = math.sin(beta) / params.wheelbase * ts
        B[k, 0, 1] = -v * sh * ts * dbeta_dd
        B[k, 1, 1] = v * ch * ts * dbeta_dd
        B[k, 2, 1] = v / params.wheelbase * math.cos(beta) * ts * dbeta_dd
        if states[k + 1, 3] > 0.0 or v + a * ts >= 0.0:
            # At the clamp boundary the right-derivative applies, so a start
            # from rest still sees acceleration as effective.
            B[k, 3, 0] = ts
        else:
            # Speed clamp active: the next speed is pinned at zero.
            A[k, 3, 3] = 0.0
    return A, B


def _residuals_and_jacobian(states, u, u_prev, win_v, win, cfg, params):
    """Stack weighted residuals r and dr/du so the cost (minus the constant
    state-0 tracking term) equals sum(r**2)."""
    N = cfg.horizon
    n_u = 2 * N
    A, B = _linearize(states, u, cfg.ts, params)
    # Sensitivities S_k = d states[k] / d u, built forward.
    S = np.zeros((N + 1, 4, n_u))
    for k in range(N):
        S[k + 1] = A[k] @ S[k]
        S[k + 1][:, 2 * k : 2 * k + 2] += B[k]

    rows: list[np.ndarray] = []
    vals: list[float] = []

    def push_tracking(k: int, wp: float, wpar: float, wth: float, wv: float) -> None:
        tx, ty = win.tan_x[k], win.tan_y[k]
        dx = states[k, 0] - win.x[k]
        dy = states[k, 1] - win.y[k]
        sp = math.sqrt(wp)
        spar = math.sqrt(wpar)
        sth = math.sqrt(wth)
        sv = math.sqrt(wv)
        vals.append(sp * (-dx * ty + dy * tx))
        rows.append(sp * (-ty * S[k, 0] + tx * S[k, 1]))
        vals.append(spar * (dx * tx + dy * ty))
        rows.append(spar * (tx * S[k, 0] + ty * S[k, 1]))
        vals.append(sth * wrap_angle(states[k, 2] - win.theta[k]))
        rows.append(sth * S[k, 2])
        vals.append(sv * (states[k, 3] - win_v[k]))
        rows.append(sv * S[k, 3])

    for k in range(1, N):
        push_tracking(k, cfg.q_perp, cfg.q_par, cfg.q_theta, cfg.q_v)
    push_tracking(N, cfg.qf_perp, cfg.qf_par, cfg.qf_theta, cfg.qf_v)

    sra, srd = math.sqrt(cfg.r_a), math.sqrt(cfg.r_delta)
    sda, sdd = math.sqrt(cfg.rd_a), math.sqrt(cfg.rd_delta)
    for k in range(N):
        for col, (w, val) in enumerate(((sra, u[k, 0]), (srd, u[k, 1]))):
            row = np.zeros(n_u)
            row[2 * k + col] = w
            rows.append(row)
            vals.append(w * val)
        prev = u_prev if k == 0 else u[k - 1]
        for col, w in enumerate((sda, sdd)):
            row = np.zeros(n_u)
            row[2 * k + col] = w
            if k > 0:
                row[2 * (k - 1) + col] = -w
            rows.append(row)
            vals.append(w * (u[k, col] - prev[col]))

    return np.array(vals), np.array(rows)


def solve(
    current: VehicleState,
    window: ReferenceWindow,
    v_ref_override: float | None = None,
    warm_start: MPCSolution | None = None,
    cfg: MPCConfig | None = None,
    params: VehicleParams | None = None,
) -> MPCSolution:
    """Optimize the control sequence tracking the reference window.

    A present v_ref_override replaces every reference speed in the window
    before solving. The warm start is the previous step's solution, shifted by
    one with the last input repeated; its first input also anchors the
    input-rate penalty (it is the input that was just applied).
    """
    cfg = cfg or MPCConfig()
    params = params or VehicleParams()
    N = cfg.horizon
    if len(window) != N + 1:
        raise ValueError(f"reference window must have {N + 1} samples, got {len(window)}")

    win_v = np.full(N + 1, float(v_ref_override)) if v_ref_override is not None else window.v_ref

    lo, hi = cfg.lower, cfg.upper
    if warm_start is not None:
        u_prev = np.clip(warm_start.inputs[0], lo, hi)
        u = np.vstack([warm_start.inputs[1:], warm_start.inputs[-1:]])
        u = np.clip(u, lo, hi)
    else:
        u_prev = np.zeros(2)
        u = np.clip(np.zeros((N, 2)), lo, hi)

    x0 = np.array([current.x, current.y, current.theta, current.v])

    # Accelerations strictly inside the v >= 0 clamp (v + a*ts < 0) sit in a
    # flat region of the cost: the velocity Jacobian there is zero, so a
    # braking warm start can pin the solver at rest even when the reference
    # asks it to move. Lifting such inputs to the clamp boundary leaves the
    # predicted trajectory unchanged but restores the gradient.
    v_sim = x0[3]
    for k in range(N):
        if v_sim + u[k, 0] * cfg.ts < 0.0:
            u[k, 0] = -v_sim / cfg.ts
        v_sim = max(v_sim + u[k, 0] * cfg.ts, 0.0)

    def finish(u_final, states, cost, status, iters):
        predicted = [VehicleState(*row) for row in states]
        return MPCSolution(u_final, predicted, cost, status, iters)

    if not np.all(np.isfinite(x0)):
        states = np.tile(x0, (N + 1, 1))
        return finish(u, states, float("nan"), SolverStatus.DEGENERATE, 0)

    states = _rollout_array(x0, u, cfg.ts, params)
    cost = _total_cost(states, u, u_prev, win_v, window, cfg)
    if not math.isfinite(cost):
        return finish(u, states, cost, SolverStatus.DEGENERATE, 0)

    lam = 1e-3
    status = SolverStatus.MAX_ITER
    iters = 0
    for _ in range(cfg.max_iterations):
        iters += 1
        r, J = _residuals_and_jacobian(states, u, u_prev, win_v, window, cfg, params)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(J))):
            status = SolverStatus.DEGENERATE
            break
        H = J.T @ J
        g = J.T @ r
        improved = False
        for _ in range(10):
            try:
                du = np.linalg.solve(H + lam * np.eye(H.shape[0]), -g)
            except np.linalg.LinAlgError:
                lam = max(lam * 10.0, 1e-4)
                if lam > 1e12:
                    return finish(u, states, cost, SolverStatus.DEGENERATE, iters)
                continue
            u_try = np.clip(u + du.reshape(N, 2), lo, hi)
            states_try = _rollout_array(x0, u_try, cfg.ts, params)
            cost_try = _total_cost(states_try, u_try, u_prev, win_v, window, cfg)
            if math.isfinite(cost_try) and cost_try < cost:
                improved = True
                break
            lam = min(lam * 4.0, 1e12)
        if not improved:
            status = SolverStatus.CONVERGED
            break
        decrease = (cost - cost_try) / max(cost, 1e-12)
        u, states, cost = u_try, states_try, cost_try
        lam = max(lam / 3.0, cfg.reg_floor)
        if decrease < cfg.tolerance:
            status = SolverStatus.CONVERGED
            break

    return finish(u, states, cost, status, iters)
