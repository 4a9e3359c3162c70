"""Coupled electrochemical-thermal plant: x_{k+1} = h(x_k, i_k, r_k) and output maps.

The state vector is integrated with a TR-BDF2 scheme (an implicit
trapezoid stage followed by a BDF2 stage) with adaptive step size inside
each sampling interval; inputs are held constant over the interval.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .errors import IntegratorError, ParameterError, StateBoundsError
from .params import CellParameters
from .spme import ElectrochemicalState, model_data
from .thermal import ThermalState

_STATUS_TEXT = {
    K.STATUS_NEWTON_FAIL: "Newton iteration failed to converge",
    K.STATUS_STEP_FLOOR: "step size fell below the floor",
    K.STATUS_MAX_STEPS: "maximum number of sub-steps exceeded",
    K.STATUS_NONFINITE: "non-finite state",
}


@dataclass(frozen=True)
class CellState:
    electro: ElectrochemicalState
    thermal: ThermalState

    def vector(self):
        return np.concatenate([self.electro.vector(), [self.thermal.T_c, self.thermal.T_s]])

    @classmethod
    def from_vector(cls, y, params: CellParameters):
        nr = params.radial_nodes
        y = np.asarray(y, dtype=float)
        return cls(
            ElectrochemicalState(y[:nr], y[nr:2 * nr], y[2 * nr:-2]),
            ThermalState(float(y[-2]), float(y[-1])),
        )

    def validate(self, params: CellParameters):
        self.electro.validate(params)
        self.thermal.validate()

    def to_dict(self):
        return {
            "c_s_neg": self.electro.c_s_neg.tolist(),
            "c_s_pos": self.electro.c_s_pos.tolist(),
            "c_e": self.electro.c_e.tolist(),
            "T_c": self.thermal.T_c,
            "T_s": self.thermal.T_s,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(ElectrochemicalState(d["c_s_neg"], d["c_s_pos"], d["c_e"]),
                   ThermalState(float(d["T_c"]), float(d["T_s"])))

    def __eq__(self, other):
        return isinstance(other, CellState) and np.array_equal(self.vector(), other.vector())

    __hash__ = None


def save_state(x: CellState, path):
    Path(path).write_text(json.dumps(x.to_dict(), indent=1))


def load_state(path):
    return CellState.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ControlInput:
    i: float  # A, > 0 charges
    r: float  # K/W, external thermal resistance


@dataclass(frozen=True)
class AgeingSpec:
    capacity_fraction: float = 1.0
    sei_resistance_multiplier: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.capacity_fraction <= 1.0:
            raise ParameterError(f"capacity_fraction must be in (0, 1], got {self.capacity_fraction}")
        if not self.sei_resistance_multiplier >= 1.0:
            raise ParameterError(f"sei_resistance_multiplier must be >= 1, got {self.sei_resistance_multiplier}")


@dataclass(frozen=True)
class IntegratorConfig:
    """Local error tolerances of the TR-BDF2 integrator.

    ``rtol`` applies to the concentrations only. Temperatures are controlled
    by ``atol_temperature`` alone, since a relative tolerance on absolute
    kelvin values would allow errors of ~rtol * 300 K per sub-step.
    """

    rtol: float = 1e-7
    atol_solid: float = 1e-3  # mol/m^3
    atol_electrolyte: float = 1e-3  # mol/m^3
    atol_temperature: float = 1e-6  # K
    h_init: float = 0.25  # s, first trial sub-step of each interval
    max_steps: int = 10000


class Outputs(NamedTuple):
    phi_neg: float
    phi_pos: float
    U_c: float
    U_ocv: float
    P_gen: float
    soc: float
    T_c: float
    T_s: float


class Plant:
    """A parameter set bound to compiled kernels and an integrator configuration."""

    def __init__(self, params: CellParameters, thermal_form="series", config: IntegratorConfig | None = None):
        self.params = params
        self.thermal_form = thermal_form
        self.config = config or IntegratorConfig()
        self.data = model_data(params, thermal_form)
        nr = params.radial_nodes
        nx = params.axial_nodes
        self.n_states = 2 * nr + nx + 2
        atol = np.empty(self.n_states)
        atol[:2 * nr] = self.config.atol_solid
        atol[2 * nr:2 * nr + nx] = self.config.atol_electrolyte
        atol[-2:] = self.config.atol_temperature
        self.atol = atol
        self.rtol = np.full(self.n_states, self.config.rtol)
        self.rtol[-2:] = 0.0
        self._hs = np.empty(self.config.max_steps)
        self._no_steps = np.empty(0)

    # -- vector interface (used in hot loops) ---------------------------
    def step_vector(self, y, i, r, T_amb, dt, fixed_steps=None, record=False):
        """Integrate one zero-order-hold interval.

        With ``fixed_steps`` the given sub-step sequence is replayed without
        error control. With ``record=True`` the accepted sub-steps are also
        returned, so a later call can replay them.
        """
        fs = self._no_steps if fixed_steps is None else fixed_steps
        cfg = self.config
        y_new, status, nsteps, _ = K.integrate(
            np.asarray(y, dtype=float), float(i), float(r), float(T_amb), float(dt), self.data,
            self.rtol, self.atol, min(cfg.h_init, dt), fs, self._hs, cfg.max_steps)
        if status != K.STATUS_OK:
            t_reached = float(self._hs[:min(nsteps, self._hs.size)].sum())
            raise IntegratorError(f"integration failed: {_STATUS_TEXT[status]} "
                                  f"(i={i}, r={r}, dt={dt})", last_state=y_new, t_reached=t_reached)
        if record:
            return y_new, self._hs[:nsteps].copy()
        return y_new

    def outputs_vector(self, y, i):
        out = np.empty(K.N_OUT)
        K.cell_outputs(np.asarray(y, dtype=float), float(i), self.data, out)
        return out

    def rhs_vector(self, y, i, r, T_amb):
        out = np.empty(self.n_states)
        K.rhs(np.asarray(y, dtype=float), float(i), float(r), float(T_amb), self.data, out)
        return out

    # -- typed interface ------------------------------------------------
    def step(self, x: CellState, u: ControlInput, T_amb, dt):
        th = self.params.thermal
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if not np.isfinite(u.i):
            raise ValueError(f"current must be finite, got {u.i}")
        if not th.R_out_min <= u.r <= th.R_out_max:
            raise ValueError(f"r = {u.r} outside [{th.R_out_min}, {th.R_out_max}]")
        y = self.step_vector(x.vector(), u.i, u.r, T_amb, dt)
        x_new = CellState.from_vector(y, self.params)
        x_new.validate(self.params)
        return x_new

    def outputs(self, x: CellState, u: ControlInput):
        o = self.outputs_vector(x.vector(), u.i)
        return Outputs(o[K.O_PHI_N], o[K.O_PHI_P], o[K.O_UC], o[K.O_OCV], o[K.O_PGEN],
                       o[K.O_SOC], o[K.O_TC], o[K.O_TS])


@lru_cache(maxsize=16)
def get_plant(params: CellParameters, thermal_form="series", config: IntegratorConfig | None = None):
    return Plant(params, thermal_form, config)


def step(x: CellState, u: ControlInput, T_amb, dt, params: CellParameters, thermal_form="series",
         config: IntegratorConfig | None = None):
    """One sampling interval of the plant with zero-order-hold inputs."""
    return get_plant(params, thermal_form, config).step(x, u, T_amb, dt)


def outputs_f(x: CellState, u: ControlInput, params: CellParameters):
    """Constrained outputs (anode potential in V, core temperature in K)."""
    o = get_plant(params).outputs_vector(x.vector(), u.i)
    return o[K.O_PHI_N], o[K.O_TC]


def outputs_g(x: CellState, u: ControlInput, params: CellParameters):
    """Cell terminal voltage in V."""
    return get_plant(params).outputs_vector(x.vector(), u.i)[K.O_UC]


def apply_ageing(params: CellParameters, spec: AgeingSpec):
    """Scale active material of both electrodes and the anode film resistance."""
    if spec.capacity_fraction == 1.0 and spec.sei_resistance_multiplier == 1.0:
        return params
    neg = dataclasses.replace(
        params.negative,
        active_fraction=params.negative.active_fraction * spec.capacity_fraction,
        film_resistance=params.negative.film_resistance * spec.sei_resistance_multiplier,
    )
    pos = dataclasses.replace(params.positive,
                              active_fraction=params.positive.active_fraction * spec.capacity_fraction)
    suffix = f"aged({spec.capacity_fraction:g},{spec.sei_resistance_multiplier:g})"
    return params.replace(negative=neg, positive=pos, name=f"{params.name}+{suffix}")


def initialize(soc0, T0, params: CellParameters):
    """Rest state with uniform concentrations at ``soc0`` and uniform temperature ``T0``."""
    if not (np.isfinite(soc0) and 0.0 <= soc0 <= 1.0):
        raise ValueError(f"soc0 must lie in [0, 1], got {soc0}")
    if not np.isfinite(T0) or T0 <= 0:
        raise ValueError(f"T0 must be a positive temperature, got {T0}")
    thn, thp = params.stoichiometry_at(soc0)
    nr = params.radial_nodes
    x = CellState(
        ElectrochemicalState(
            np.full(nr, thn * params.negative.max_concentration),
            np.full(nr, thp * params.positive.max_concentration),
            np.full(params.axial_nodes, params.electrolyte.initial_concentration),
        ),
        ThermalState(float(T0), float(T0)),
    )
    x.validate(params)
    return x


__all__ = [
    "AgeingSpec", "CellState", "ControlInput", "IntegratorConfig", "Outputs", "Plant",
    "StateBoundsError", "apply_ageing", "get_plant", "initialize", "load_state", "outputs_f",
    "outputs_g", "save_state", "step",
]
