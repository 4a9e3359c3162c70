"""Cell parameter set: dataclasses, validation and the YAML parameter file.

The parameter file is plain YAML with a ``schema`` key. Everything is SI:
metres, seconds, mol/m^3, kelvin, ohm, J/mol. OCP curves are stored as
``[stoichiometry, volts]`` row pairs and interpolated with a monotone
piecewise-cubic (PCHIP) interpolant. Evaluating outside the tabulated range
raises :class:`~fastcharge.errors.OcpRangeError`; there is no extrapolation.

Only the negative-electrode stoichiometry window is stored. The positive
window is derived: its 0 % SOC end is placed where the open-circuit voltage
equals ``lower_cutoff_voltage`` and its span follows from lithium balance
between the two electrodes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import OcpRangeError, ParameterError

SCHEMA_ID = "fastcharge.cell/1"

FARADAY = 96485.33212
GAS_CONSTANT = 8.314462618


class OcpTable:
    """Tabulated open-circuit potential U(stoichiometry)."""

    def __init__(self, stoichiometry, potential, name="ocp"):
        x = np.asarray(stoichiometry, dtype=float)
        u = np.asarray(potential, dtype=float)
        if x.ndim != 1 or x.shape != u.shape or x.size < 3:
            raise ParameterError(f"{name}: need matching 1-D columns with >= 3 rows")
        if np.any(np.diff(x) <= 0):
            raise ParameterError(f"{name}: stoichiometry column must be strictly increasing")
        if x[0] < 0.0 or x[-1] > 1.0:
            raise ParameterError(f"{name}: stoichiometry must lie in [0, 1]")
        if np.any(np.diff(u) > 0):
            raise ParameterError(f"{name}: OCP must be non-increasing in lithiation")
        self.name = name
        self.x = x
        self.u = u
        self._interp = PchipInterpolator(x, u, extrapolate=False)

    @property
    def lo(self):
        return float(self.x[0])

    @property
    def hi(self):
        return float(self.x[-1])

    @property
    def breakpoints(self):
        return self._interp.x

    @property
    def coefficients(self):
        """PCHIP polynomial coefficients, shape (4, n-1), highest power first."""
        return self._interp.c

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if np.any(~np.isfinite(theta)) or np.any(theta < self.lo) or np.any(theta > self.hi):
            raise OcpRangeError(
                f"{self.name}: stoichiometry {theta} outside table range [{self.lo}, {self.hi}]"
            )
        out = self._interp(theta)
        return float(out) if out.ndim == 0 else out

    def rows(self):
        return [[float(a), float(b)] for a, b in zip(self.x, self.u)]

    def __eq__(self, other):
        return (
            isinstance(other, OcpTable)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.u, other.u)
        )

    def __hash__(self):
        return hash((self.x.tobytes(), self.u.tobytes()))

    def __repr__(self):
        return f"OcpTable({self.name!r}, {self.x.size} rows, [{self.lo}, {self.hi}])"


@dataclass(frozen=True)
class ElectrodeParameters:
    thickness: float  # m
    particle_radius: float  # m
    active_fraction: float  # solid volume fraction, -
    porosity: float  # electrolyte volume fraction, -
    max_concentration: float  # mol/m^3
    diffusivity: float  # m^2/s at reference temperature
    diffusivity_activation: float  # J/mol
    rate_constant: float  # m^2.5 mol^-0.5 s^-1 at reference temperature
    rate_activation: float  # J/mol
    film_resistance: float  # ohm m^2
    ocp: OcpTable
    stoich_0: float | None = None  # 0 % SOC stoichiometry (negative electrode only)
    stoich_100: float | None = None  # 100 % SOC stoichiometry (negative electrode only)

    @property
    def specific_area(self):
        """Active surface area per electrode volume, 3 eps_s / R_p (1/m)."""
        return 3.0 * self.active_fraction / self.particle_radius


@dataclass(frozen=True)
class SeparatorParameters:
    thickness: float
    porosity: float


@dataclass(frozen=True)
class ElectrolyteParameters:
    initial_concentration: float  # mol/m^3
    transference_number: float
    bruggeman: float
    diffusivity_scale: float = 1.0  # multiplies the Valoen-Reimers correlation
    conductivity_scale: float = 1.0


@dataclass(frozen=True)
class ThermalParameters:
    R_in: float  # K/W, core to surface
    C_c: float  # J/K
    C_s: float  # J/K
    R_out_min: float  # K/W, forced convection
    R_out_max: float  # K/W, natural convection

    def __post_init__(self):
        for name in ("R_in", "C_c", "C_s", "R_out_min", "R_out_max"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"thermal.{name} must be finite and > 0, got {v}")
        if not self.R_out_min < self.R_out_max:
            raise ParameterError("thermal.R_out_min must be below R_out_max")


@dataclass(frozen=True)
class CellParameters:
    negative: ElectrodeParameters
    separator: SeparatorParameters
    positive: ElectrodeParameters
    electrolyte: ElectrolyteParameters
    thermal: ThermalParameters
    electrode_area: float  # m^2
    nominal_capacity: float  # Ah, as labelled
    lower_cutoff_voltage: float  # V, full-cell OCV at 0 % SOC
    contact_resistance: float = 0.0  # ohm
    reference_temperature: float = 298.15  # K
    faraday: float = FARADAY
    gas_constant: float = GAS_CONSTANT
    radial_nodes: int = 20
    axial_nodes: int = 20
    name: str = "unnamed"

    def __post_init__(self):
        self._validate()

    # -- validation -----------------------------------------------------
    def _validate(self):
        def positive(label, v):
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{label} must be finite and > 0, got {v}")

        for tag, el in (("negative", self.negative), ("positive", self.positive)):
            for f in ("thickness", "particle_radius", "active_fraction", "porosity",
                      "max_concentration", "diffusivity", "rate_constant"):
                positive(f"{tag}.{f}", getattr(el, f))
            if el.active_fraction + el.porosity > 1.0:
                raise ParameterError(f"{tag}: active_fraction + porosity exceeds 1")
            if el.film_resistance < 0:
                raise ParameterError(f"{tag}.film_resistance must be >= 0")
        positive("separator.thickness", self.separator.thickness)
        positive("separator.porosity", self.separator.porosity)
        positive("electrolyte.initial_concentration", self.electrolyte.initial_concentration)
        positive("electrode_area", self.electrode_area)
        positive("nominal_capacity", self.nominal_capacity)
        if not 0.0 <= self.electrolyte.transference_number < 1.0:
            raise ParameterError("transference number must be in [0, 1)")
        if self.contact_resistance < 0:
            raise ParameterError("contact_resistance must be >= 0")
        th0, th100 = self.negative.stoich_0, self.negative.stoich_100
        if th0 is None or th100 is None or not (0.0 < th0 < th100 < 1.0):
            raise ParameterError("negative stoichiometry window must satisfy 0 < s0 < s100 < 1")
        if th0 < self.negative.ocp.lo or th100 > self.negative.ocp.hi:
            raise ParameterError("negative stoichiometry window exceeds its OCP table")
        if self.radial_nodes < 3 or self.axial_nodes < 3:
            raise ParameterError("need at least 3 radial and 3 axial nodes")

    # -- derived quantities --------------------------------------------
    @property
    def capacity(self):
        """Usable capacity between the 0 % and 100 % windows (Ah)."""
        n = self.negative
        dtheta = n.stoich_100 - n.stoich_0
        return (self.faraday * n.active_fraction * n.thickness * self.electrode_area
                * n.max_concentration * dtheta / 3600.0)

    @cached_property
    def positive_window(self):
        """(y_0, y_100): positive-electrode stoichiometry at 0 % and 100 % SOC."""
        n, p = self.negative, self.positive
        u_n0 = n.ocp(n.stoich_0)
        f = lambda y: p.ocp(y) - u_n0 - self.lower_cutoff_voltage  # noqa: E731
        lo, hi = p.ocp.lo, p.ocp.hi
        if f(lo) * f(hi) > 0:
            raise ParameterError("lower_cutoff_voltage is not reachable inside the positive OCP table")
        y0 = brentq(f, lo, hi, xtol=1e-14, rtol=1e-14)
        span = ((n.stoich_100 - n.stoich_0) * n.active_fraction * n.thickness * n.max_concentration
                / (p.active_fraction * p.thickness * p.max_concentration))
        y100 = y0 - span
        if y100 < lo:
            raise ParameterError("positive electrode runs out of its OCP table before 100 % SOC")
        return y0, y100

    def stoichiometry_at(self, soc):
        """Bulk (theta_neg, y_pos) consistent with ``soc`` by lithium balance."""
        n = self.negative
        y0, y100 = self.positive_window
        return (n.stoich_0 + soc * (n.stoich_100 - n.stoich_0),
                y0 + soc * (y100 - y0))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# -- file I/O -------------------------------------------------------------

def _electrode_from_dict(d, name):
    d = dict(d)
    rows = np.asarray(d.pop("ocp"), dtype=float)
    ocp = OcpTable(rows[:, 0], rows[:, 1], name=f"{name} OCP")
    try:
        return ElectrodeParameters(ocp=ocp, **d)
    except TypeError as exc:
        raise ParameterError(f"{name}: {exc}") from None


def _electrode_to_dict(el):
    d = {f.name: getattr(el, f.name) for f in dataclasses.fields(el) if f.name != "ocp"}
    d = {k: v for k, v in d.items() if v is not None}
    d["ocp"] = el.ocp.rows()
    return d


def parameters_from_dict(doc):
    if doc.get("schema") != SCHEMA_ID:
        raise ParameterError(f"unsupported parameter schema {doc.get('schema')!r}, expected {SCHEMA_ID!r}")
    try:
        cell = dict(doc["cell"])
        return CellParameters(
            negative=_electrode_from_dict(doc["negative"], "negative"),
            separator=SeparatorParameters(**doc["separator"]),
            positive=_electrode_from_dict(doc["positive"], "positive"),
            electrolyte=ElectrolyteParameters(**doc["electrolyte"]),
            thermal=ThermalParameters(**doc["thermal"]),
            name=doc.get("name", "unnamed"),
            **cell,
        )
    except KeyError as exc:
        raise ParameterError(f"parameter file missing section {exc}") from None
    except TypeError as exc:
        raise ParameterError(str(exc)) from None


def parameters_to_dict(params):
    cell_keys = ("electrode_area", "nominal_capacity", "lower_cutoff_voltage", "contact_resistance",
                 "reference_temperature", "faraday", "gas_constant", "radial_nodes", "axial_nodes")
    return {
        "schema": SCHEMA_ID,
        "name": params.name,
        "cell": {k: getattr(params, k) for k in cell_keys},
        "negative": _electrode_to_dict(params.negative),
        "separator": dataclasses.asdict(params.separator),
        "positive": _electrode_to_dict(params.positive),
        "electrolyte": dataclasses.asdict(params.electrolyte),
        "thermal": dataclasses.asdict(params.thermal),
    }


def load_parameters(path=None):
    """Load a parameter file; ``None`` loads the bundled default cell."""
    if path is None:
        text = resources.files("fastcharge.data").joinpath("default_cell.yaml").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ParameterError(f"cannot read parameter file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParameterError(f"parameter file {path} is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParameterError(f"parameter file {path} does not hold a mapping")
    return parameters_from_dict(doc)


def save_parameters(params, path):
    Path(path).write_text(yaml.safe_dump(parameters_to_dict(params), sort_keys=False))


def default_parameters():
    return load_parameters(None)
