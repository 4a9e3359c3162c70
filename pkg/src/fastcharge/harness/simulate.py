"""Closed-loop simulation driver, characterisation pulses and state-of-health sweeps."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import _kernels as K
from ..errors import FastChargeError
from ..params import CellParameters
from ..plant import AgeingSpec, Plant, initialize
from .config import ScenarioConfig

log = logging.getLogger(__name__)

# margins below these values count as violations (numerical noise floor)
VIOLATION_TOL = {"phi": 1e-4, "U": 1e-3, "T": 1e-2}  # V, V, K
DERATE_TOL = 0.01  # A below I_max


@dataclass(frozen=True)
class StepTrace:
    """One control step: inputs applied on [t, t + dt) and outputs at their onset."""

    t: float  # s
    i: float  # A
    r: float  # K/W
    phi_neg: float  # V
    U_c: float  # V
    U_ocv: float  # V
    T_c: float  # K
    T_s: float  # K
    soc: float
    P_gen: float  # W
    binding: str
    compute_s: float  # controller wall time
    iterations: int = 0  # SQP iterations (MPC only)
    kkt: float = float("nan")  # SQP stationarity residual (MPC only)


TRACE_COLUMNS = tuple(f.name for f in fields(StepTrace))
TIMING_COLUMNS = ("compute_s",)


@dataclass
class RunSummary:
    name: str
    controller: str
    T_amb: float
    charging_time_s: float | None
    reached_target: bool
    termination: str
    steps: int
    total_compute_s: float
    mean_step_compute_s: float
    worst_margin: dict  # signed; negative means the limit was exceeded
    violation_steps: dict
    binding_counts: dict
    final_soc: float
    soc_at_first_derate: float | None
    first_r_actuation_s: float | None
    mean_solver_iterations: float | None = None
    flagged_steps: int = 0
    ageing: dict = field(default_factory=dict)

    def to_dict(self, timing=True):
        d = asdict(self)
        if not timing:
            d.pop("total_compute_s")
            d.pop("mean_step_compute_s")
        return d

    @property
    def hard_violation(self):
        return any(v > 0 for v in self.violation_steps.values())


def _measure(plant: Plant, y, i_prev):
    o = plant.outputs_vector(y, i_prev)
    return {"U_c": float(o[K.O_UC]), "phi_neg": float(o[K.O_PHI_N]), "T_c": float(o[K.O_TC])}


def summarise(cfg: ScenarioConfig, trace, termination, final_soc, reached, charging_time, flagged=0):
    lim = cfg.limits
    phi = np.array([s.phi_neg for s in trace])
    U = np.array([s.U_c for s in trace])
    T = np.array([s.T_c for s in trace])
    margins = {"phi": phi - lim.phi_lim, "U": lim.U_lim - U, "T": lim.T_lim - T}
    worst = {k: (float(v.min()) if v.size else None) for k, v in margins.items()}
    viol = {k: int(np.sum(v < -VIOLATION_TOL[k])) for k, v in margins.items()}
    comp = [s.compute_s for s in trace]
    total = sum(comp)
    counts = {}
    for s in trace:
        counts[s.binding] = counts.get(s.binding, 0) + 1
    derate = next((s.soc for s in trace if s.i < lim.I_max - DERATE_TOL), None)
    first_r = next((s.t for s in trace if s.r < lim.R_out_max - 1e-9), None)
    iters = [s.iterations for s in trace]
    return RunSummary(
        name=cfg.label, controller=cfg.controller, T_amb=cfg.T_amb,
        charging_time_s=charging_time, reached_target=reached, termination=termination,
        steps=len(trace), total_compute_s=total, mean_step_compute_s=(total / len(comp) if comp else 0.0),
        worst_margin=worst, violation_steps=viol, binding_counts=dict(sorted(counts.items())),
        final_soc=float(final_soc), soc_at_first_derate=derate, first_r_actuation_s=first_r,
        mean_solver_iterations=(float(np.mean(iters)) if cfg.controller == "mpc" and iters else None),
        flagged_steps=flagged, ageing=asdict(cfg.ageing),
    )


def run_scenario(cfg: ScenarioConfig, params: CellParameters | None = None, controller=None,
                 schedule=None):
    """Simulate one charge from ``soc_start`` until ``soc_target`` or ``max_duration``.

    The controller measures the outputs at the current state with the
    previously applied current, then chooses the input for the next
    interval. ``schedule(k, t, soc, action)`` may override the action (used
    by the characterisation experiments); it returns ``(action, T_amb)``.

    Returns ``(trace, summary)``. Plant or controller failures end the run
    early and are reported in ``summary.termination``.
    """
    params = cfg.load_params(params)
    plant = Plant(params, cfg.thermal_form)
    ctrl = controller or cfg.build_controller(params)
    y = initialize(cfg.soc_start, cfg.T_amb, params).vector()
    n_max = int(round(cfg.max_duration / cfg.dt))
    trace = []
    i_prev = 0.0
    flagged = 0
    termination = "max_duration"
    reached = False
    charging_time = None
    soc = cfg.soc_start
    for k in range(n_max + 1):
        t = k * cfg.dt
        soc = float(plant.outputs_vector(y, 0.0)[K.O_SOC])
        if soc >= cfg.soc_target:
            termination, reached, charging_time = "target_reached", True, t
            break
        if k == n_max:
            break
        try:
            meas = _measure(plant, y, i_prev)
            t0 = time.perf_counter()
            action = ctrl.act(meas, y, cfg.dt)
            elapsed = time.perf_counter() - t0
        except (FastChargeError, ValueError, ArithmeticError) as exc:
            termination = f"controller_error: {exc}"
            log.warning("%s: controller failed at t=%g s: %s", cfg.label, t, exc)
            break
        T_amb = cfg.T_amb
        if schedule is not None:
            action, T_amb = schedule(k, t, soc, action)
        flagged += int(bool(action.info.get("flagged", False)))
        o = plant.outputs_vector(y, action.i)
        trace.append(StepTrace(
            t=t, i=float(action.i), r=float(action.r), phi_neg=float(o[K.O_PHI_N]), U_c=float(o[K.O_UC]),
            U_ocv=float(o[K.O_OCV]), T_c=float(o[K.O_TC]), T_s=float(o[K.O_TS]), soc=float(o[K.O_SOC]),
            P_gen=float(o[K.O_PGEN]), binding=action.binding, compute_s=elapsed,
            iterations=int(action.info.get("iterations", 0)), kkt=float(action.info.get("kkt", np.nan)),
        ))
        try:
            y = plant.step_vector(y, action.i, action.r, T_amb, cfg.dt)
        except FastChargeError as exc:
            termination = f"plant_error: {exc}"
            log.warning("%s: plant failed at t=%g s: %s", cfg.label, t, exc)
            break
        i_prev = action.i
        if log.isEnabledFor(logging.DEBUG) and k % 60 == 0:
            log.debug("%s t=%5.0f i=%6.2f r=%5.2f phi=%.4f U=%.4f Tc=%.2f soc=%.3f %s", cfg.label, t,
                      action.i, action.r, o[K.O_PHI_N], o[K.O_UC], o[K.O_TC] - 273.15, o[K.O_SOC],
                      action.binding)
    summary = summarise(cfg, trace, termination, soc, reached, charging_time, flagged)
    log.info("%s: %s after %d steps, charging time %s s", cfg.label, termination, len(trace), charging_time)
    return trace, summary


# -- characterisation ---------------------------------------------------------

@dataclass(frozen=True)
class PulseSchedule:
    """Step experiments superimposed on a constant-current baseline charge.

    Current steps add ``current_steps[j]`` amperes for ``current_duration``
    seconds once the SOC reaches ``current_soc``. Thermal pulses switch the
    ambient temperature to ``thermal_pulses[j]`` (K) with forced convection
    (R_out_min) for ``thermal_duration`` seconds once the SOC reaches
    ``thermal_soc``. Each entry is a separate run.
    """

    baseline_current: float | None = None  # A, default 1C
    current_steps: tuple = (2.5, 5.0, 7.5)  # A
    current_soc: float = 0.30
    current_duration: float = 30.0  # s
    thermal_pulses: tuple = (253.15, 333.15)  # K
    thermal_soc: float = 0.70
    thermal_duration: float = 300.0  # s


@dataclass
class PulseRun:
    kind: str  # "baseline", "current" or "thermal"
    magnitude: float  # A for current steps, K for thermal pulses
    trace: list
    onset_s: float | None


def _fixed_current(cfg: ScenarioConfig, i):
    return cfg.replace(controller="cccv", controller_settings={"i_cc": float(i), "r": cfg.limits.R_out_max})


def characterization_pulses(cfg: ScenarioConfig, pulses: PulseSchedule = PulseSchedule(),
                            params: CellParameters | None = None):
    """Run the baseline charge and one run per current step and thermal pulse.

    The baseline holds a constant current (1C by default) at natural
    convection with no voltage limit, up to ``soc_target``.
    """
    aged = cfg.load_params(params)
    i0 = pulses.baseline_current if pulses.baseline_current is not None else aged.capacity
    base_cfg = _fixed_current(cfg, i0).replace(limits=dataclasses.replace(cfg.limits, U_lim=np.inf))

    def run(kind, magnitude, soc_on, duration, modify):
        onset = []

        def schedule(k, t, soc, action):
            if not onset and soc >= soc_on:
                onset.append(t)
            if onset and t < onset[0] + duration:
                return modify(action)
            return action, cfg.T_amb

        trace, _ = run_scenario(base_cfg, params, schedule=schedule)
        return PulseRun(kind, magnitude, trace, onset[0] if onset else None)

    out = [PulseRun("baseline", 0.0, run_scenario(base_cfg, params)[0], None)]
    for di in pulses.current_steps:
        out.append(run("current", float(di), pulses.current_soc, pulses.current_duration,
                       lambda a, di=di: (type(a)(a.i + di, a.r, "step", a.info), cfg.T_amb)))
    for Tp in pulses.thermal_pulses:
        out.append(run("thermal", float(Tp), pulses.thermal_soc, pulses.thermal_duration,
                       lambda a, Tp=Tp: (type(a)(a.i, cfg.limits.R_out_min, "pulse", a.info), float(Tp))))
    return out


# -- state-of-health sweep -------------------------------------------------------

DEFAULT_SOH_LEVELS = (
    AgeingSpec(1.0, 1.0),
    AgeingSpec(0.95, 1.25),
    AgeingSpec(0.9, 1.5),
    AgeingSpec(0.85, 1.75),
    AgeingSpec(0.8, 2.0),
)


def soh_sweep(base: ScenarioConfig, levels=DEFAULT_SOH_LEVELS, params: CellParameters | None = None):
    """One run per ageing level; returns ``[(level, trace, summary), ...]``."""
    levels = list(levels)
    if not levels:
        raise ValueError("levels must not be empty")
    out = []
    for lv in levels:
        cfg = base.replace(ageing=lv, name=f"{base.label}_soh{lv.capacity_fraction:g}_"
                                             f"sei{lv.sei_resistance_multiplier:g}")
        trace, summary = run_scenario(cfg, params)
        out.append((lv, trace, summary))
    return out
