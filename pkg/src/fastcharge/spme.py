"""Single particle model with electrolyte (SPMe).

Sign convention: a positive current charges the cell. The pore-wall molar
flux ``j_n`` is positive when lithium leaves the particle, so charging gives
``j_n- < 0`` (anode lithiates) and ``j_n+ > 0``.

The functions here are thin, validated wrappers over the compiled kernels in
:mod:`fastcharge._kernels`; the plant integrator calls the kernels directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .errors import OcpRangeError, SaturationError, StateBoundsError
from .params import CellParameters

THERMAL_FORMS = ("series", "classical")


# -- discretisation --------------------------------------------------------

def axial_split(params: CellParameters):
    """Nodes per region (anode, separator, cathode), proportional to thickness."""
    lengths = np.array([params.negative.thickness, params.separator.thickness,
                        params.positive.thickness])
    n = params.axial_nodes
    raw = n * lengths / lengths.sum()
    counts = np.maximum(np.floor(raw).astype(int), 1)
    while counts.sum() < n:
        counts[np.argmax(raw - counts)] += 1
    while counts.sum() > n:
        counts[np.argmax(counts - raw)] -= 1
    return tuple(int(c) for c in counts)


def radial_geometry(n):
    """Finite-volume coefficients on the unit sphere, shape (4, n).

    Rows: inner-face coupling, outer-face coupling, volume weight (sums to 1),
    and in ``[3, 0]`` the surface-flux factor ``1 / V_last``.
    """
    xi = np.linspace(0.0, 1.0, n + 1)
    dxi = 1.0 / n
    vol = (xi[1:] ** 3 - xi[:-1] ** 3) / 3.0
    g = np.zeros((4, n))
    g[0] = xi[:-1] ** 2 / (dxi * vol)
    g[1, :-1] = xi[1:-1] ** 2 / (dxi * vol[:-1])
    g[2] = 3.0 * vol
    g[3, 0] = 1.0 / vol[-1]
    return g


def electrolyte_geometry(params: CellParameters):
    """Per-node (dx, porosity, porosity**brug, source coefficient, region), shape (5, n_x)."""
    nn, ns, npos = axial_split(params)
    t_plus = params.electrolyte.transference_number
    b = params.electrolyte.bruggeman
    cols = []
    for count, length, eps, a, region in (
        (nn, params.negative.thickness, params.negative.porosity, params.negative.specific_area, 0),
        (ns, params.separator.thickness, params.separator.porosity, 0.0, 1),
        (npos, params.positive.thickness, params.positive.porosity, params.positive.specific_area, 2),
    ):
        for _ in range(count):
            cols.append((length / count, eps, eps ** b, (1.0 - t_plus) * a, region))
    return np.array(cols, dtype=float).T.copy()


@lru_cache(maxsize=64)
def model_data(params: CellParameters, thermal_form: str = "series"):
    """Pack a parameter set into the flat tuple consumed by the kernels."""
    if thermal_form not in THERMAL_FORMS:
        raise ValueError(f"thermal_form must be one of {THERMAL_FORMS}, got {thermal_form!r}")
    n, s, p = params.negative, params.separator, params.positive
    th = params.thermal
    nn, ns, npos = axial_split(params)
    v = np.zeros(K.N_P)
    v[K.P_F] = params.faraday
    v[K.P_RG] = params.gas_constant
    v[K.P_TREF] = params.reference_temperature
    v[K.P_AREA] = params.electrode_area
    v[K.P_LN] = n.thickness
    v[K.P_LS] = s.thickness
    v[K.P_LP] = p.thickness
    v[K.P_AN] = n.specific_area
    v[K.P_AP] = p.specific_area
    v[K.P_CMAXN] = n.max_concentration
    v[K.P_CMAXP] = p.max_concentration
    v[K.P_RSN] = n.particle_radius
    v[K.P_RSP] = p.particle_radius
    v[K.P_DSN] = n.diffusivity
    v[K.P_DSP] = p.diffusivity
    v[K.P_EADN] = n.diffusivity_activation
    v[K.P_EADP] = p.diffusivity_activation
    v[K.P_KN] = n.rate_constant
    v[K.P_KP] = p.rate_constant
    v[K.P_EAKN] = n.rate_activation
    v[K.P_EAKP] = p.rate_activation
    v[K.P_RFN] = n.film_resistance
    v[K.P_RFP] = p.film_resistance
    v[K.P_TPLUS] = params.electrolyte.transference_number
    v[K.P_RCONT] = params.contact_resistance
    v[K.P_RIN] = th.R_in
    v[K.P_CC] = th.C_c
    v[K.P_CS] = th.C_s
    v[K.P_TFORM] = THERMAL_FORMS.index(thermal_form)
    v[K.P_DESCALE] = params.electrolyte.diffusivity_scale
    v[K.P_KAPSCALE] = params.electrolyte.conductivity_scale
    v[K.P_EPSN] = n.porosity
    v[K.P_EPSS] = s.porosity
    v[K.P_EPSP] = p.porosity
    v[K.P_BRUG] = params.electrolyte.bruggeman
    v[K.P_THN0] = n.stoich_0
    v[K.P_THN100] = n.stoich_100
    v[K.P_NR] = params.radial_nodes
    v[K.P_NXN] = nn
    v[K.P_NXS] = ns
    v[K.P_NXP] = npos
    g = radial_geometry(params.radial_nodes)
    return (
        v, g, g.copy(), electrolyte_geometry(params),
        np.ascontiguousarray(n.ocp.breakpoints), np.ascontiguousarray(n.ocp.coefficients),
        np.ascontiguousarray(p.ocp.breakpoints), np.ascontiguousarray(p.ocp.coefficients),
    )


# -- state -----------------------------------------------------------------

@dataclass(frozen=True)
class ElectrochemicalState:
    """Solid concentrations on radial shells (centre to surface) and electrolyte on axial nodes."""

    c_s_neg: np.ndarray
    c_s_pos: np.ndarray
    c_e: np.ndarray

    def __post_init__(self):
        for name in ("c_s_neg", "c_s_pos", "c_e"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def vector(self):
        return np.concatenate([self.c_s_neg, self.c_s_pos, self.c_e])

    def validate(self, params: CellParameters):
        """Raise :class:`StateBoundsError` naming the first violated bound."""
        for arr, cmax, tag in ((self.c_s_neg, params.negative.max_concentration, "c_s-"),
                               (self.c_s_pos, params.positive.max_concentration, "c_s+")):
            if not np.all(np.isfinite(arr)):
                raise StateBoundsError(f"{tag} has non-finite entries")
            if arr.min() < 0.0 or arr.max() > cmax:
                raise StateBoundsError(f"{tag} outside [0, {cmax}]: range [{arr.min()}, {arr.max()}]")
        if not np.all(np.isfinite(self.c_e)) or self.c_e.min() <= 0.0:
            raise StateBoundsError(f"c_e must be positive, min {self.c_e.min()}")


class AnodePotential(NamedTuple):
    """Anode potential and its three additive parts (V)."""

    total: float
    ocp: float
    overpotential: float
    film: float


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError(f"non-finite input: {v}")


def _full_vector(state: ElectrochemicalState, temperature):
    return np.concatenate([state.vector(), [temperature, temperature]])


def _outputs(state, current, temperature, params):
    _check_finite(current, temperature, state.c_s_neg, state.c_s_pos, state.c_e)
    data = model_data(params)
    y = _full_vector(state, temperature)
    out = np.empty(K.N_OUT)
    K.cell_outputs(y, float(current), data, out)
    for theta, table in ((out[K.O_THETA_SS_N], params.negative.ocp),
                         (out[K.O_THETA_SS_P], params.positive.ocp)):
        if not table.lo <= theta <= table.hi:
            raise OcpRangeError(f"{table.name}: surface stoichiometry {theta:.6g} outside "
                                f"[{table.lo}, {table.hi}]")
    return out


# -- operations ------------------------------------------------------------

def charge_flux_density(i, params: CellParameters):
    """Uniform pore-wall flux (j_n-, j_n+) in mol/(m^2 s) for applied current ``i``."""
    return K.fluxes(model_data(params)[0], float(i))


def solid_diffusion_rhs(state: ElectrochemicalState, params: CellParameters, j_n, temperature=None):
    """Time derivatives (dc_s-/dt, dc_s+/dt) for given fluxes ``j_n = (j_n-, j_n+)``.

    Diffusivities are Arrhenius-scaled to ``temperature`` (default: reference).
    """
    jn, jp = (float(v) for v in j_n)
    _check_finite(jn, jp, state.c_s_neg, state.c_s_pos)
    t = params.reference_temperature if temperature is None else float(temperature)
    p = model_data(params)[0]
    g = radial_geometry(params.radial_nodes)
    dn = K.arrhenius(p[K.P_DSN], p[K.P_EADN], p[K.P_RG], p[K.P_TREF], t)
    dp = K.arrhenius(p[K.P_DSP], p[K.P_EADP], p[K.P_RG], p[K.P_TREF], t)
    out_n = np.empty(params.radial_nodes)
    out_p = np.empty(params.radial_nodes)
    K.solid_rhs(np.asarray(state.c_s_neg, float), jn, dn, p[K.P_RSN], g, out_n)
    K.solid_rhs(np.asarray(state.c_s_pos, float), jp, dp, p[K.P_RSP], g, out_p)
    return out_n, out_p


def electrolyte_diffusion_rhs(state: ElectrochemicalState, params: CellParameters, i, temperature=None):
    """Time derivative of the electrolyte concentration profile."""
    _check_finite(i, state.c_e)
    if np.any(state.c_e <= 0):
        raise StateBoundsError("electrolyte concentration must be positive")
    t = params.reference_temperature if temperature is None else float(temperature)
    data = model_data(params)
    jn, jp = K.fluxes(data[0], float(i))
    out = np.empty(state.c_e.size)
    K.electrolyte_rhs(np.asarray(state.c_e, float), jn, jp, t, data[0], data[3], out)
    return out


def electrolyte_volume_weights(params: CellParameters):
    """Pore volume per unit area of each axial node (porosity * dx)."""
    ex = electrolyte_geometry(params)
    return ex[0] * ex[1]


def activation_overpotential(c_ss, c_e_local, j_n, temperature, params: CellParameters,
                             electrode="negative"):
    """Inverse Butler-Volmer overpotential (V) with symmetry factor 0.5."""
    el = params.negative if electrode == "negative" else params.positive
    _check_finite(c_ss, c_e_local, j_n, temperature)
    if c_ss <= 0.0 or c_ss >= el.max_concentration:
        raise SaturationError(f"{electrode} surface concentration {c_ss} at a saturation bound; "
                              "exchange current vanishes")
    if c_e_local <= 0.0 or temperature <= 0.0:
        raise ValueError("electrolyte concentration and temperature must be positive")
    p = model_data(params)[0]
    k = K.arrhenius(el.rate_constant, el.rate_activation, p[K.P_RG], p[K.P_TREF], float(temperature))
    return K.overpotential(float(j_n), float(c_ss), float(c_e_local), el.max_concentration, k,
                           float(temperature), p[K.P_F], p[K.P_RG])


def exchange_current_density(c_ss, c_e_local, temperature, params: CellParameters, electrode="negative"):
    el = params.negative if electrode == "negative" else params.positive
    p = model_data(params)[0]
    k = K.arrhenius(el.rate_constant, el.rate_activation, p[K.P_RG], p[K.P_TREF], float(temperature))
    return params.faraday * k * np.sqrt(c_e_local * c_ss * (el.max_concentration - c_ss))


def surface_stoichiometry(state: ElectrochemicalState, i, temperature, params: CellParameters):
    out = _outputs(state, i, temperature, params)
    return out[K.O_THETA_SS_N], out[K.O_THETA_SS_P]


def anode_potential(state: ElectrochemicalState, i, T_c, params: CellParameters, components=False):
    """Anode solid-electrolyte potential: OCP(c_ss) + overpotential + film drop."""
    out = _outputs(state, i, T_c, params)
    if components:
        return AnodePotential(out[K.O_PHI_N], out[K.O_U_N], out[K.O_ETA_N], out[K.O_FILM_N])
    return out[K.O_PHI_N]


def cathode_potential(state: ElectrochemicalState, i, T_c, params: CellParameters):
    """Cathode potential including the electrolyte potential difference and contact drop."""
    return _outputs(state, i, T_c, params)[K.O_PHI_P]


def cell_voltage(state: ElectrochemicalState, i, T_c, params: CellParameters):
    out = _outputs(state, i, T_c, params)
    return out[K.O_PHI_P] - out[K.O_PHI_N]


def open_circuit_voltage(state: ElectrochemicalState, params: CellParameters):
    """Full-cell OCV at the bulk (volume-averaged) stoichiometries."""
    g = radial_geometry(params.radial_nodes)
    thn = float(g[2] @ state.c_s_neg) / params.negative.max_concentration
    thp = float(g[2] @ state.c_s_pos) / params.positive.max_concentration
    return params.positive.ocp(thp) - params.negative.ocp(thn)


def heat_generation(state: ElectrochemicalState, i, params: CellParameters, T_c=None):
    """Irreversible heat I (U_c - U_OCV) in W; entropic heat is neglected."""
    t = params.reference_temperature if T_c is None else T_c
    return _outputs(state, i, t, params)[K.O_PGEN]


def soc(state: ElectrochemicalState, params: CellParameters):
    """State of charge from the bulk anode stoichiometry, affine through its window."""
    g = radial_geometry(params.radial_nodes)
    thn = float(g[2] @ state.c_s_neg) / params.negative.max_concentration
    n = params.negative
    return (thn - n.stoich_0) / (n.stoich_100 - n.stoich_0)
