"""Two-node lumped thermal model (core and surface) with actuated external resistance.

Two forms are available:

``series``
    dT_c/dt = (T_s - T_c) / (R_in C_c) + P / C_c
    dT_s/dt = (T_amb - T_s + P R_in) / (C_s (R_in + r_out))

    Its steady state is T_s - T_amb = P R_in, independent of ``r_out``.

``classical``
    dT_c/dt = (T_s - T_c) / (R_in C_c) + P / C_c
    dT_s/dt = ((T_c - T_s) / R_in - (T_s - T_amb) / r_out) / C_s

    The surface-to-ambient drop is P r_out at steady state, so lowering
    ``r_out`` (forced convection) cools the cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import StateBoundsError
from .params import ThermalParameters

T_GUARD = (200.0, 400.0)


@dataclass(frozen=True)
class ThermalState:
    T_c: float
    T_s: float

    def validate(self):
        for name in ("T_c", "T_s"):
            v = getattr(self, name)
            if not (np.isfinite(v) and T_GUARD[0] <= v <= T_GUARD[1]):
                raise StateBoundsError(f"{name} = {v} K outside sanity range {T_GUARD}")


def _form_code(form):
    if form == "series":
        return 0
    if form == "classical":
        return 1
    raise ValueError(f"unknown thermal form {form!r}")


def thermal_rhs(ts: ThermalState, T_amb, P_gen, r_out, params: ThermalParameters, form="series"):
    """Return (dT_c/dt, dT_s/dt) in K/s."""
    if not params.R_out_min <= r_out <= params.R_out_max:
        raise ValueError(f"r_out = {r_out} outside [{params.R_out_min}, {params.R_out_max}]")
    return K.thermal_derivatives(float(ts.T_c), float(ts.T_s), float(T_amb), float(P_gen),
                                 float(r_out), params.R_in, params.C_c, params.C_s, _form_code(form))


def thermal_matrices(r_out, params: ThermalParameters, form="series"):
    """Linear system dT/dt = A T + B [T_amb, P_gen] for T = [T_c, T_s]."""
    ri, cc, cs = params.R_in, params.C_c, params.C_s
    if form == "series":
        a = np.array([[-1.0 / (ri * cc), 1.0 / (ri * cc)],
                      [0.0, -1.0 / (cs * (ri + r_out))]])
        b = np.array([[0.0, 1.0 / cc],
                      [1.0 / (cs * (ri + r_out)), ri / (cs * (ri + r_out))]])
    else:
        _form_code(form)
        a = np.array([[-1.0 / (ri * cc), 1.0 / (ri * cc)],
                      [1.0 / (ri * cs), -(1.0 / ri + 1.0 / r_out) / cs]])
        b = np.array([[0.0, 1.0 / cc],
                      [1.0 / (r_out * cs), 0.0]])
    return a, b


def thermal_steady_state(T_amb, P_gen, r_out, params: ThermalParameters, form="series"):
    """Equilibrium temperatures for constant ambient temperature and heat input."""
    if form == "series":
        t_s = T_amb + P_gen * params.R_in
    else:
        _form_code(form)
        t_s = T_amb + P_gen * r_out
    return ThermalState(T_c=t_s + P_gen * params.R_in, T_s=t_s)
