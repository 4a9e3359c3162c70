"""CCCV and MIMO PID charging controllers.

The MIMO scheme runs three current loops in parallel (terminal voltage,
anode potential, core temperature), each clamped to the current range, and
applies the smallest proposal. A fourth, separate loop moves the external
thermal resistance towards a core-temperature target.

Loop error units: the voltage and anode-potential loops work in millivolts,
the temperature loops in kelvin. With these units the default gains give
full-scale current at margins of a few hundred millivolts or half a kelvin.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError

LOOP_NAMES = ("U", "phi", "T")


@dataclass(frozen=True)
class OperatingLimits:
    phi_lim: float = 0.045  # V, lower bound on the anode potential
    U_lim: float = 4.2  # V
    T_lim: float = 318.15  # K
    I_min: float = 0.0  # A
    I_max: float = 15.0  # A
    R_out_min: float = 4.2  # K/W
    R_out_max: float = 14.0  # K/W

    def __post_init__(self):
        if not self.I_min <= self.I_max:
            raise ParameterError("I_min must not exceed I_max")
        if not self.R_out_min < self.R_out_max:
            raise ParameterError("R_out_min must be below R_out_max")
        if self.phi_lim < 0:
            raise ParameterError("phi_lim must be >= 0")

    def clamp_current(self, i):
        return min(max(i, self.I_min), self.I_max)

    def clamp_resistance(self, r):
        return min(max(r, self.R_out_min), self.R_out_max)


@dataclass(frozen=True)
class PidGains:
    K_P: float
    K_I: float = 0.0
    K_D: float = 0.0
    out_min: float = -np.inf
    out_max: float = np.inf
    anti_windup: bool = True
    derivative_filter: float = 0.0  # s, first-order filter time constant; 0 = raw difference

    def __post_init__(self):
        for name in ("K_P", "K_I", "K_D", "derivative_filter"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"PID gain {name} must be finite")
        if self.derivative_filter < 0:
            raise ParameterError("derivative_filter must be >= 0")
        if not self.out_min <= self.out_max:
            raise ParameterError("PID output bounds out of order")

    def with_bounds(self, lo, hi):
        return dataclasses.replace(self, out_min=lo, out_max=hi)


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None
    prev_output: float = 0.0
    derivative: float = 0.0


def _clamp(v, lo, hi):
    return min(max(v, lo), hi)


def pid_terms(gains: PidGains, state: PidState, error, dt):
    """Candidate (integral, derivative, unsaturated output) before anti-windup."""
    if state.prev_error is None:
        d_raw = 0.0
    else:
        d_raw = (error - state.prev_error) / dt
    tau = gains.derivative_filter
    d = d_raw if tau == 0.0 else (tau * state.derivative + dt * d_raw) / (tau + dt)
    integral = state.integral + error * dt
    u = gains.K_P * error + gains.K_I * integral + gains.K_D * d
    return integral, d, u


def pid_step(gains: PidGains, state: PidState, error, dt):
    """Positional PID with output clamping and conditional-integration anti-windup.

    When the unsaturated output lies beyond a bound and the error pushes it
    further out, the integral only advances as far as needed to reach the
    bound; it is never moved deeper into saturation.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    integral, d, u = pid_terms(gains, state, error, dt)
    if gains.anti_windup and gains.K_I != 0.0:
        push = gains.K_I * error
        pd = gains.K_P * error + gains.K_D * d
        bound = None
        if u > gains.out_max and push > 0:
            bound = gains.out_max
        elif u < gains.out_min and push < 0:
            bound = gains.out_min
        if bound is not None:
            # integrate only up to the value that puts the output on the bound,
            # and never further into saturation than the previous value
            at_bound = (bound - pd) / gains.K_I
            if error * dt > 0:
                integral = max(state.integral, min(integral, at_bound))
            else:
                integral = min(state.integral, max(integral, at_bound))
            u = pd + gains.K_I * integral
    out = _clamp(u, gains.out_min, gains.out_max)
    return out, PidState(integral=integral, prev_error=error, prev_output=out, derivative=d)


def default_current_gains():
    """Per-loop gains (U, phi, T) for errors in mV, mV and K.

    The voltage loop differentiates a filtered error (50 s time constant).
    Unfiltered, its large derivative gain turns the kick from each current
    change into 0/15 A chatter at the sampling rate.
    """
    return (
        PidGains(K_P=0.05, K_I=0.0, K_D=3.0, derivative_filter=50.0),
        PidGains(K_P=0.05, K_I=0.05, K_D=0.001),
        PidGains(K_P=30.0, K_I=0.0, K_D=0.0),
    )


def default_resistance_gains():
    return PidGains(K_P=10.0, K_I=0.0, K_D=1.0)


def mimo_pid_current(errors, states, gains, dt, limits: OperatingLimits):
    """Minimum-current coordination of the three current loops.

    Returns ``(i_k, new_states, binding)`` where ``binding`` is the name of the
    loop that set the current. Every loop is clamped to [I_min, I_max] before
    the minimum. A loop that was not selected keeps its integrator frozen
    whenever its proposal exceeds the applied current and its error would
    raise it further, so idle loops do not wind up.
    """
    proposals = []
    candidates = []
    for e, st, g in zip(errors, states, gains):
        g = g.with_bounds(limits.I_min, limits.I_max)
        out, new = pid_step(g, st, e, dt)
        proposals.append(out)
        candidates.append((g, new))
    k = int(np.argmin(proposals))
    i_k = limits.clamp_current(proposals[k])
    new_states = []
    for j, ((g, new), st, e) in enumerate(zip(candidates, states, errors)):
        if j != k and g.K_I != 0.0 and proposals[j] > i_k and g.K_I * e > 0:
            new = dataclasses.replace(new, integral=st.integral)
        new_states.append(new)
    return i_k, tuple(new_states), LOOP_NAMES[k]


def thermal_pid_resistance(e_T_target, state: PidState, gains: PidGains, dt, limits: OperatingLimits,
                           r_prev):
    """Incremental resistance loop: r_k = clamp(r_{k-1} + PID(T_target - T_c)).

    A core temperature above target gives a negative error and lowers the
    resistance (more cooling); zero error with zero derivative holds ``r_prev``.
    """
    delta, new = pid_step(dataclasses.replace(gains, anti_windup=False), state, e_T_target, dt)
    return limits.clamp_resistance(r_prev + delta), new


@dataclass(frozen=True)
class CccvState:
    phase: str = "cc"  # "cc" or "cv", latched once in "cv"
    current: float = 0.0
    prev_error: float = 0.0


def cccv_step(U_c, state: CccvState, i_cc, U_lim, dt, K_P=10.0, K_I=20.0):
    """Constant current until ``U_c >= U_lim``, then a PI voltage hold.

    The CV phase is a velocity-form PI on ``U_lim - U_c`` (A/V, A/(V s))
    whose output is capped by the previous current, so the current envelope
    never rises after the switch.
    """
    if not 0 < i_cc:
        raise ValueError("i_cc must be positive")
    error = U_lim - U_c
    if state.phase == "cc" and U_c < U_lim:
        return i_cc, CccvState("cc", i_cc, error)
    if state.phase == "cc":
        prev_i, prev_e = i_cc, 0.0
    else:
        prev_i, prev_e = state.current, state.prev_error
    i = prev_i + K_P * (error - prev_e) + K_I * error * dt
    i = _clamp(i, 0.0, min(prev_i, i_cc))
    return i, CccvState("cv", i, error)


# -- controller objects used by the harness ---------------------------------

@dataclass
class ControlAction:
    i: float
    r: float
    binding: str = ""
    info: dict = field(default_factory=dict)


class CccvController:
    """CCCV at fixed external resistance (natural convection by default)."""

    kind = "cccv"

    def __init__(self, i_cc, limits: OperatingLimits = OperatingLimits(), r=None, K_P=10.0, K_I=20.0):
        self.i_cc = float(i_cc)
        self.limits = limits
        self.r = limits.R_out_max if r is None else float(r)
        self.K_P = K_P
        self.K_I = K_I
        self.reset()

    def reset(self):
        self.state = CccvState()

    def act(self, meas, x, dt):
        i, self.state = cccv_step(meas["U_c"], self.state, self.i_cc, self.limits.U_lim, dt,
                                  self.K_P, self.K_I)
        return ControlAction(i, self.r, "cc" if self.state.phase == "cc" else "cv")


class MimoPidController:
    """Three parallel current loops with minimum selection plus the resistance loop."""

    kind = "pid"

    def __init__(self, limits: OperatingLimits = OperatingLimits(), current_gains=None,
                 resistance_gains=None, T_target=313.15, thermal_actuation=True):
        self.limits = limits
        self.gains = tuple(current_gains) if current_gains is not None else default_current_gains()
        self.r_gains = resistance_gains or default_resistance_gains()
        self.T_target = float(T_target)
        self.thermal_actuation = thermal_actuation
        self.reset()

    def reset(self):
        self.states = (PidState(), PidState(), PidState())
        self.r_state = PidState()
        self.r = self.limits.R_out_max

    def errors(self, meas):
        lim = self.limits
        return (
            1e3 * (lim.U_lim - meas["U_c"]),
            1e3 * (meas["phi_neg"] - lim.phi_lim),
            lim.T_lim - meas["T_c"],
        )

    def act(self, meas, x, dt):
        i, self.states, binding = mimo_pid_current(self.errors(meas), self.states, self.gains, dt,
                                                   self.limits)
        if self.thermal_actuation:
            self.r, self.r_state = thermal_pid_resistance(self.T_target - meas["T_c"], self.r_state,
                                                          self.r_gains, dt, self.limits, self.r)
        return ControlAction(i, self.r, binding)
