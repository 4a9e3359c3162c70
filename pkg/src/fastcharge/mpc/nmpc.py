"""Dual-resolution nonlinear MPC for co-actuated charging current and thermal resistance.

The decision vector is ``d = [i_0 .. i_{N-1}, r_0 .. r_{N-1}]``. Interval ``n``
lasts ``dt_n`` seconds (fine steps first, then coarse steps) with both inputs
held constant. The cost

    J = sum_n  -alpha i_n^2 + beta (i_{n-1} - i_n)^2 + gamma (r_{n-1} - r_n)^2

uses the previously applied inputs as ``i_{-1}`` and ``r_{-1}``. Terminal
voltage and anode potential are constrained on the fine segment; the core
temperature on every interval.

Predictions use a second plant instance. Sensitivities are forward finite
differences in scaled decision variables. Two properties keep them cheap and
smooth: causality (a perturbation of input ``n`` restarts the rollout from
the stored state ``x_n``) and frozen integrator step sequences (perturbed
rollouts replay the sub-steps of the nominal one).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import _kernels as K
from ..controllers.classical import ControlAction, OperatingLimits
from ..errors import IntegratorError, ParameterError
from ..params import CellParameters
from ..plant import CellState, ControlInput, IntegratorConfig, Plant, get_plant
from .qp import solve_qp


# -- horizon and weights ---------------------------------------------------

@dataclass(frozen=True)
class HorizonSpec:
    N_fine: int = 4
    N_coarse: int = 4
    dt_fine: float = 1.0  # s
    dt_coarse: float = 15.0  # s

    def __post_init__(self):
        if self.N_fine < 1 or self.N_coarse < 1:
            raise ParameterError("N_fine and N_coarse must be >= 1")
        if not 0 < self.dt_fine < self.dt_coarse:
            raise ParameterError("need 0 < dt_fine < dt_coarse")

    @property
    def N(self):
        return self.N_fine + self.N_coarse

    @property
    def span(self):
        return self.N_fine * self.dt_fine + self.N_coarse * self.dt_coarse


def build_horizon(spec: HorizonSpec):
    """Interval durations: ``N_fine`` fine steps followed by ``N_coarse`` coarse steps."""
    return np.array([spec.dt_fine] * spec.N_fine + [spec.dt_coarse] * spec.N_coarse)


@dataclass(frozen=True)
class MpcWeights:
    alpha: float
    beta: float = 10.0
    gamma: float = 1e-3

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.gamma > 0):
            raise ParameterError("MPC weights must be positive")

    @classmethod
    def normalised(cls, limits: OperatingLimits, spec: HorizonSpec, beta=10.0, gamma=1e-3):
        """``alpha = 1 / (I_max^2 N)``, so holding I_max over the horizon costs exactly -1."""
        return cls(1.0 / (limits.I_max ** 2 * spec.N), beta, gamma)


@dataclass(frozen=True)
class SolverOptions:
    step_tol: float = 1e-5  # on the scaled step, infinity norm
    opt_tol: float = 1e-6  # KKT stationarity, scaled
    feas_tol: float = 1e-6  # scaled constraint violation
    max_iter: int = 50
    fd_step: float = 1e-4  # scaled forward-difference perturbation
    elastic_weight: float = 1e4
    armijo: float = 1e-4
    min_step: float = 1e-4  # smallest line-search fraction
    backoff: float = 0.5  # current factor applied after a solver failure
    scale_U: float = 0.01  # V per unit residual
    scale_phi: float = 0.01  # V per unit residual
    scale_T: float = 1.0  # K per unit residual


# -- cost ------------------------------------------------------------------

def _split(d, N):
    d = np.asarray(d, dtype=float)
    if d.shape != (2 * N,):
        raise ValueError(f"decision vector must have length {2 * N}")
    return d[:N], d[N:]


def evaluate_cost(d, i_prev, r_prev, w: MpcWeights):
    N = len(d) // 2
    i, r = _split(d, N)
    di = np.diff(np.concatenate([[i_prev], i]))
    dr = np.diff(np.concatenate([[r_prev], r]))
    return float(np.sum(-w.alpha * i ** 2 + w.beta * di ** 2 + w.gamma * dr ** 2))


def cost_gradient(d, i_prev, r_prev, w: MpcWeights):
    N = len(d) // 2
    i, r = _split(d, N)
    g = np.empty(2 * N)
    for x, prev, wt, off, lin in ((i, i_prev, w.beta, 0, -2.0 * w.alpha), (r, r_prev, w.gamma, N, 0.0)):
        dx = np.diff(np.concatenate([[prev], x]))  # dx[n] = x_n - x_{n-1}
        gn = lin * x + 2.0 * wt * dx
        gn[:-1] -= 2.0 * wt * dx[1:]
        g[off:off + N] = gn
    return g


def cost_hessian(N, w: MpcWeights):
    D = np.eye(N) - np.eye(N, k=-1)
    DtD = D.T @ D
    H = np.zeros((2 * N, 2 * N))
    H[:N, :N] = -2.0 * w.alpha * np.eye(N) + 2.0 * w.beta * DtD
    H[N:, N:] = 2.0 * w.gamma * DtD
    return H


# -- prediction --------------------------------------------------------------

@dataclass
class Trajectory:
    """Predicted outputs over the horizon.

    ``phi[n]`` and ``U[n]`` are evaluated at (x_n, i_n), i.e. right after the
    input of interval ``n`` is applied; ``T_c[n]`` is the core temperature at
    the end of interval ``n``. ``states`` has N + 1 rows, ``steps[n]`` the
    accepted integrator sub-steps of interval ``n``.
    """

    phi: np.ndarray
    U: np.ndarray
    T_c: np.ndarray
    states: np.ndarray
    steps: list = field(default_factory=list)
    ok: bool = True


def _as_vector(x):
    return x.vector() if isinstance(x, CellState) else np.asarray(x, dtype=float)


def _rollout(plant: Plant, y0, i, r, T_amb, dts, start=0, steps=None, states=None, out=None):
    """Simulate intervals ``start..N-1``; fills ``out`` (phi, U, T) in place.

    With ``steps`` given, sub-steps are replayed; otherwise they are recorded.
    Returns (states, steps, ok).
    """
    N = dts.size
    if states is None:
        states = np.empty((N + 1, y0.size))
    states[start] = y0
    rec = [None] * N if steps is None else steps
    y = y0
    for n in range(start, N):
        o = plant.outputs_vector(y, i[n])
        out[0, n] = o[K.O_PHI_N]
        out[1, n] = o[K.O_UC]
        try:
            if steps is None:
                y, rec[n] = plant.step_vector(y, i[n], r[n], T_amb, dts[n], record=True)
            else:
                y = plant.step_vector(y, i[n], r[n], T_amb, dts[n], fixed_steps=steps[n])
        except IntegratorError:
            out[:, n:] = np.nan
            return states, rec, False
        out[2, n] = y[-2]
        states[n + 1] = y
    return states, rec, True


def predict_trajectory(x_k, d, T_amb, spec: HorizonSpec, params: CellParameters, thermal_form="series",
                       plant: Plant | None = None):
    """Roll the plant over the horizon from ``x_k`` with inputs ``d``."""
    plant = plant or get_plant(params, thermal_form)
    i, r = _split(d, spec.N)
    dts = build_horizon(spec)
    out = np.empty((3, spec.N))
    states, steps, ok = _rollout(plant, _as_vector(x_k), i, r, float(T_amb), dts, out=out)
    return Trajectory(out[0].copy(), out[1].copy(), out[2].copy(), states, steps, ok)


def _nonlinear_residuals(phi, U, T_c, limits: OperatingLimits, spec: HorizonSpec, opt: SolverOptions):
    nf = spec.N_fine
    c = np.concatenate([
        (U[:nf] - limits.U_lim) / opt.scale_U,
        (limits.phi_lim - phi[:nf]) / opt.scale_phi,
        (T_c - limits.T_lim) / opt.scale_T,
    ])
    return np.where(np.isfinite(c), c, 1e3)


def _bounds(limits: OperatingLimits, N):
    lo = np.concatenate([np.full(N, limits.I_min), np.full(N, limits.R_out_min)])
    hi = np.concatenate([np.full(N, limits.I_max), np.full(N, limits.R_out_max)])
    return lo, hi


def evaluate_constraints(traj: Trajectory, d, limits: OperatingLimits, spec: HorizonSpec,
                         options: SolverOptions | None = None):
    """Scaled residual vector, feasible when every entry is <= 0.

    Layout: 2N input-bound residuals ``max(lo - d, d - hi) / (hi - lo)``, then
    ``U_n - U_lim`` and ``phi_lim - phi_n`` on the fine segment, then
    ``T_c,n - T_lim`` on all N intervals.
    """
    opt = options or SolverOptions()
    lo, hi = _bounds(limits, spec.N)
    d = np.asarray(d, dtype=float)
    span = np.where(hi > lo, hi - lo, 1.0)
    bound = np.maximum(lo - d, d - hi) / span
    return np.concatenate([bound, _nonlinear_residuals(traj.phi, traj.U, traj.T_c, limits, spec, opt)])


def constraint_labels(spec: HorizonSpec):
    N, nf = spec.N, spec.N_fine
    return ([f"i_bound[{n}]" for n in range(N)] + [f"r_bound[{n}]" for n in range(N)]
            + [f"U[{n}]" for n in range(nf)] + [f"phi[{n}]" for n in range(nf)]
            + [f"T[{n}]" for n in range(N)])


# -- SQP ---------------------------------------------------------------------

@dataclass
class MpcSolution:
    d: np.ndarray
    cost: float
    residuals: np.ndarray
    iterations: int
    converged: bool
    solve_time: float
    kkt: float = np.nan
    elastic: bool = False
    status: str = ""
    max_violation: float = np.nan

    @property
    def i(self):
        return self.d[: self.d.size // 2]

    @property
    def r(self):
        return self.d[self.d.size // 2:]


class _Problem:
    """Scaled NLP: variables s in [0, 1]^(2N), d = lo + s * (hi - lo)."""

    def __init__(self, plant, x_k, i_prev, r_prev, T_amb, limits, w, spec, opt):
        self.plant = plant
        self.y0 = _as_vector(x_k)
        self.i_prev = float(i_prev)
        self.r_prev = float(r_prev)
        self.T_amb = float(T_amb)
        self.limits = limits
        self.w = w
        self.spec = spec
        self.opt = opt
        self.N = spec.N
        self.dts = build_horizon(spec)
        self.lo, self.hi = _bounds(limits, self.N)
        self.span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        self.n_rollouts = 0

    def to_d(self, s):
        return self.lo + self.span * s

    def to_s(self, d):
        return np.clip((np.asarray(d, dtype=float) - self.lo) / self.span, 0.0, 1.0)

    def cost(self, s):
        return evaluate_cost(self.to_d(s), self.i_prev, self.r_prev, self.w)

    def grad(self, s):
        return cost_gradient(self.to_d(s), self.i_prev, self.r_prev, self.w) * self.span

    def hessian(self):
        return cost_hessian(self.N, self.w) * np.outer(self.span, self.span)

    def rollout(self, s):
        d = self.to_d(s)
        out = np.empty((3, self.N))
        states, steps, ok = _rollout(self.plant, self.y0, d[:self.N], d[self.N:], self.T_amb,
                                     self.dts, out=out)
        self.n_rollouts += 1
        c = _nonlinear_residuals(out[0], out[1], out[2], self.limits, self.spec, self.opt)
        return {"s": s, "d": d, "out": out, "states": states, "steps": steps, "ok": ok, "c": c}

    def jacobian(self, nom):
        """Forward-difference Jacobian of the nonlinear residuals w.r.t. s."""
        N, nf = self.N, self.spec.N_fine
        h = self.opt.fd_step
        d0 = nom["d"]
        c0 = nom["c"]
        jac = np.zeros((c0.size, 2 * N))
        if not nom["ok"]:
            return jac
        out = np.empty((3, N))
        states = np.empty_like(nom["states"])
        for j in range(2 * N):
            n0 = j % N
            d = d0.copy()
            step = h if d0[j] + h * self.span[j] <= self.hi[j] + 1e-12 else -h
            d[j] += step * self.span[j]
            out[:, :n0] = nom["out"][:, :n0]
            _, _, ok = _rollout(self.plant, nom["states"][n0], d[:N], d[N:], self.T_amb, self.dts,
                                start=n0, steps=nom["steps"], states=states, out=out)
            if not ok:
                continue
            c = _nonlinear_residuals(out[0], out[1], out[2], self.limits, self.spec, self.opt)
            col = (c - c0) / step
            # rows unaffected by causality are exactly zero
            mask = np.zeros(c0.size, dtype=bool)
            mask[np.arange(nf)[np.arange(nf) >= n0]] = True
            mask[nf + np.arange(nf)[np.arange(nf) >= n0]] = True
            mask[2 * nf + np.arange(N)[np.arange(N) >= n0]] = True
            jac[mask, j] = col[mask]
        self.n_rollouts += (N + 1)
        return jac


def _qp_step(B, g, c, Jc, s, opt: SolverOptions, elastic):
    """Solve the SQP subproblem; returns (p, lam_nonlinear, elastic_used, ok)."""
    n = s.size
    m = c.size
    A_b = np.vstack([np.eye(n), -np.eye(n)])
    b_b = np.concatenate([1.0 - s, s])
    if not elastic:
        res = solve_qp(B, g, np.vstack([Jc, A_b]), np.concatenate([-c, b_b]))
        if res.ok:
            return res.x, res.multipliers[:m], False, True
    # elastic mode: c + Jc p <= t, t >= 0, penalty rho * sum(t)
    rho = opt.elastic_weight
    mu = 1e-6 * rho
    H = np.zeros((n + m, n + m))
    H[:n, :n] = B
    H[n:, n:] = mu * np.eye(m)
    gg = np.concatenate([g, np.full(m, rho)])
    A = np.zeros((m + 2 * n + m, n + m))
    A[:m, :n] = Jc
    A[:m, n:] = -np.eye(m)
    A[m:m + 2 * n, :n] = A_b
    A[m + 2 * n:, n:] = -np.eye(m)
    b = np.concatenate([-c, b_b, np.zeros(m)])
    res = solve_qp(H, gg, A, b)
    return res.x[:n], res.multipliers[:m], True, res.ok


def solve_sqp(x_k, i_prev, r_prev, warm, limits: OperatingLimits, w: MpcWeights, spec: HorizonSpec,
              params: CellParameters, T_amb, options: SolverOptions | None = None, thermal_form="series",
              shift_warm=False, plant: Plant | None = None, integrator: IntegratorConfig | None = None):
    """Local solution of the NMPC problem by SQP with damped BFGS and an l1 merit line search.

    ``warm`` (a decision vector) initialises the iteration; with
    ``shift_warm=True`` it is first shifted by one interval (first entry
    dropped, last repeated). Without a warm start the previous inputs are
    held over the horizon.
    """
    t_start = time.perf_counter()
    opt = options or SolverOptions()
    plant = plant or get_plant(params, thermal_form, integrator)
    N = spec.N
    prob = _Problem(plant, x_k, i_prev, r_prev, T_amb, limits, w, spec, opt)
    if warm is None:
        d0 = np.concatenate([np.full(N, i_prev), np.full(N, r_prev)])
    else:
        d0 = np.asarray(warm, dtype=float).copy()
        if shift_warm:
            i0, r0 = d0[:N], d0[N:]
            d0 = np.concatenate([i0[1:], i0[-1:], r0[1:], r0[-1:]])
    s = prob.to_s(d0)
    nom = prob.rollout(s)
    f = prob.cost(s)
    g = prob.grad(s)
    Jc = prob.jacobian(nom)
    B = prob.hessian()
    nu = 0.0
    elastic = False
    converged = False
    status = "max_iter"
    kkt = np.inf
    best = None
    it = 0

    def viol(c):
        return float(np.max(np.maximum(c, 0.0))) if c.size else 0.0

    def consider(s_, f_, c_):
        nonlocal best
        if viol(c_) <= opt.feas_tol and (best is None or f_ < best[1]):
            best = (s_.copy(), f_, c_.copy())

    consider(s, f, nom["c"])
    lam = np.zeros(nom["c"].size)
    for it in range(1, opt.max_iter + 1):
        c = nom["c"]
        p, lam, used_elastic, ok = _qp_step(B, g, c, Jc, s, opt, elastic)
        if not ok:
            status = "qp_failure"
            break
        elastic = elastic or used_elastic
        kkt = float(np.max(np.abs(B @ p))) if p.size else 0.0
        if np.max(np.abs(p)) < opt.step_tol:
            converged = True
            status = "step_tol"
            break
        if elastic:
            nu = max(nu, opt.elastic_weight)
        else:
            nu = max(nu, 1.1 * float(np.max(lam, initial=0.0)) + 1e-3)
        m0 = f + nu * np.sum(np.maximum(c, 0.0))
        deriv = g @ p - nu * np.sum(np.maximum(c, 0.0))
        alpha = 1.0
        while True:
            s_new = np.clip(s + alpha * p, 0.0, 1.0)
            trial = prob.rollout(s_new)
            f_new = prob.cost(s_new)
            m1 = f_new + nu * np.sum(np.maximum(trial["c"], 0.0))
            if trial["ok"] and m1 <= m0 + opt.armijo * alpha * min(deriv, 0.0):
                break
            alpha *= 0.5
            if alpha < opt.min_step:
                break
        if alpha < opt.min_step:
            status = "line_search"
            break
        g_new = prob.grad(s_new)
        Jc_new = prob.jacobian(trial)
        step = s_new - s
        y = (g_new + Jc_new.T @ lam) - (g + Jc.T @ lam)
        Bs = B @ step
        sBs = float(step @ Bs)
        sy = float(step @ y)
        if sBs > 1e-16:
            if sy < 0.2 * sBs:
                theta = 0.8 * sBs / (sBs - sy)
                y = theta * y + (1.0 - theta) * Bs
                sy = float(step @ y)
            B = B + np.outer(y, y) / sy - np.outer(Bs, Bs) / sBs
            B = 0.5 * (B + B.T)
        s, f, g, Jc, nom = s_new, f_new, g_new, Jc_new, trial
        consider(s, f, nom["c"])
        if np.max(np.abs(step)) < opt.step_tol:
            converged = True
            status = "step_tol"
            break
    c = nom["c"]
    final_viol = viol(c)
    if converged and final_viol > opt.feas_tol and not elastic:
        converged = False
        status = "infeasible_point"
    if not converged and best is not None:
        s, f, c = best
        final_viol = viol(c)
    d = prob.to_d(s)
    lo, hi = prob.lo, prob.hi
    bound = np.maximum(lo - d, d - hi) / prob.span
    return MpcSolution(
        d=d, cost=f, residuals=np.concatenate([bound, c]), iterations=it, converged=converged,
        solve_time=time.perf_counter() - t_start, kkt=kkt, elastic=elastic, status=status,
        max_violation=final_viol,
    )


# -- receding horizon ----------------------------------------------------------

@dataclass
class MpcMemory:
    """Controller memory between samples.

    The previous input starts at (I_max, R_out_max): the smoothness term
    penalises the first move against it, so seeding with zero current would
    make the optimum stay near zero.
    """

    i_prev: float
    r_prev: float
    warm: np.ndarray | None = None
    last: MpcSolution | None = None

    @classmethod
    def initial(cls, limits: OperatingLimits):
        return cls(limits.I_max, limits.R_out_max)


def mpc_step(x_k, memory: MpcMemory, T_amb, limits: OperatingLimits, w: MpcWeights, spec: HorizonSpec,
             params: CellParameters, options: SolverOptions | None = None, thermal_form="series",
             plant: Plant | None = None):
    """One receding-horizon sample: solve, apply the first action, store the shifted plan.

    Returns ``(ControlInput, new_memory, solution_or_None, flagged)``. When the
    solver fails the previous current is scaled by ``options.backoff`` and the
    resistance is held.
    """
    opt = options or SolverOptions()
    t0 = time.perf_counter()
    try:
        sol = solve_sqp(x_k, memory.i_prev, memory.r_prev, memory.warm, limits, w, spec, params, T_amb,
                        opt, thermal_form, shift_warm=memory.warm is not None, plant=plant)
        failed = (not np.all(np.isfinite(sol.d))) or (not sol.converged and sol.max_violation > 1e-3)
    except (IntegratorError, np.linalg.LinAlgError, ValueError):
        sol = None
        failed = True
    if failed:
        u = ControlInput(limits.clamp_current(opt.backoff * memory.i_prev), memory.r_prev)
        new = MpcMemory(u.i, u.r, None, sol)
        if sol is not None:
            sol.solve_time = time.perf_counter() - t0
        return u, new, sol, True
    u = ControlInput(float(sol.i[0]), float(sol.r[0]))
    new = MpcMemory(u.i, u.r, sol.d.copy(), sol)
    return u, new, sol, bool(sol.elastic)


def binding_constraint(sol: MpcSolution, spec: HorizonSpec, limits: OperatingLimits, tol=1e-3):
    """Name of the constraint closest to activity, or ``I_max`` when the current is saturated."""
    if sol.i[0] >= limits.I_max - tol:
        return "I_max"
    N, nf = spec.N, spec.N_fine
    c = sol.residuals[2 * N:]
    groups = {"U": c[:nf], "phi": c[nf:2 * nf], "T": c[2 * nf:]}
    return max(groups, key=lambda k: float(np.max(groups[k])))


class MpcController:
    kind = "mpc"

    def __init__(self, params: CellParameters, limits: OperatingLimits = OperatingLimits(),
                 spec: HorizonSpec = HorizonSpec(), weights: MpcWeights | None = None,
                 options: SolverOptions | None = None, thermal_form="series", T_amb=293.15):
        self.params = params
        self.limits = limits
        self.spec = spec
        self.weights = weights or MpcWeights.normalised(limits, spec)
        self.options = options or SolverOptions()
        self.thermal_form = thermal_form
        self.T_amb = float(T_amb)
        self.plant = Plant(params, thermal_form)
        self.reset()

    def reset(self):
        self.memory = MpcMemory.initial(self.limits)

    def act(self, meas, x, dt):
        u, self.memory, sol, flagged = mpc_step(x, self.memory, self.T_amb, self.limits, self.weights,
                                                self.spec, self.params, self.options, self.thermal_form,
                                                plant=self.plant)
        info = {"flagged": flagged}
        if sol is not None:
            info.update(iterations=sol.iterations, kkt=sol.kkt, status=sol.status, converged=sol.converged)
            binding = "backoff" if flagged and not sol.elastic else binding_constraint(sol, self.spec, self.limits)
        else:
            info.update(iterations=0, kkt=np.nan, status="error", converged=False)
            binding = "backoff"
        return ControlAction(u.i, u.r, binding, info)
