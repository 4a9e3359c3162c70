"""Scenario configuration: a declarative, versioned YAML document per run."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..controllers.classical import (CccvController, MimoPidController, OperatingLimits, PidGains,
                                     default_current_gains, default_resistance_gains)
from ..errors import ParameterError
from ..mpc.nmpc import HorizonSpec, MpcController, MpcWeights, SolverOptions
from ..params import CellParameters, load_parameters
from ..plant import AgeingSpec, apply_ageing
from ..thermal import _form_code

SCENARIO_SCHEMA_ID = "fastcharge.scenario/1"
CONTROLLER_KINDS = ("cccv", "pid", "mpc")


def celsius(t):
    return t + 273.15


@dataclass(frozen=True)
class ScenarioConfig:
    """One closed-loop charging experiment.

    ``controller_settings`` holds kind-specific options:

    cccv
        ``i_cc`` (A), ``r`` (K/W, default R_out_max), ``K_P``, ``K_I``.
    pid
        ``gains`` (mapping of loop name U/phi/T to PidGains fields),
        ``resistance_gains``, ``T_target`` (K), ``thermal_actuation``.
    mpc
        ``horizon`` (HorizonSpec fields), ``weights`` (alpha, beta, gamma;
        alpha defaults to 1/(I_max^2 N)), ``solver`` (SolverOptions fields).
    """

    controller: str = "pid"
    controller_settings: dict = field(default_factory=dict)
    T_amb: float = 293.15  # K
    soc_start: float = 0.10
    soc_target: float = 0.80
    ageing: AgeingSpec = AgeingSpec()
    limits: OperatingLimits = OperatingLimits()
    dt: float = 1.0  # s
    max_duration: float = 3600.0  # s
    params_path: str | None = None
    thermal_form: str = "classical"
    seed: int = 0  # reserved; no component draws random numbers
    name: str = ""

    def __post_init__(self):
        if self.controller not in CONTROLLER_KINDS:
            raise ParameterError(f"controller must be one of {CONTROLLER_KINDS}, got {self.controller!r}")
        if not 0.0 <= self.soc_start < self.soc_target <= 1.0:
            raise ParameterError("need 0 <= soc_start < soc_target <= 1")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if not self.max_duration > 0:
            raise ParameterError("max_duration must be positive")
        if not self.T_amb > 0:
            raise ParameterError("T_amb must be a positive temperature in K")
        _form_code(self.thermal_form)

    @property
    def label(self):
        return self.name or f"{self.controller}_{self.T_amb - 273.15:g}C"

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # -- resolved objects -------------------------------------------------
    def load_params(self, base: CellParameters | None = None):
        """Parameter set with the ageing applied (``base`` overrides the file path)."""
        params = base if base is not None else load_parameters(self.params_path)
        return apply_ageing(params, self.ageing)

    def build_controller(self, params: CellParameters):
        s = dict(self.controller_settings)
        lim = self.limits
        if self.controller == "cccv":
            if "i_cc" not in s:
                raise ParameterError("cccv scenario needs controller.settings.i_cc")
            return CccvController(s["i_cc"], lim, r=s.get("r"), K_P=s.get("K_P", 10.0), K_I=s.get("K_I", 20.0))
        if self.controller == "pid":
            gains = list(default_current_gains())
            for k, name in enumerate(("U", "phi", "T")):
                if name in s.get("gains", {}):
                    gains[k] = dataclasses.replace(gains[k], **s["gains"][name])
            r_gains = default_resistance_gains()
            if "resistance_gains" in s:
                r_gains = dataclasses.replace(r_gains, **s["resistance_gains"])
            return MimoPidController(lim, tuple(gains), r_gains, T_target=s.get("T_target", 313.15),
                                     thermal_actuation=s.get("thermal_actuation", True))
        spec = HorizonSpec(**s.get("horizon", {}))
        wd = dict(s.get("weights", {}))
        base_w = MpcWeights.normalised(lim, spec)
        weights = MpcWeights(wd.get("alpha", base_w.alpha), wd.get("beta", base_w.beta),
                             wd.get("gamma", base_w.gamma))
        options = SolverOptions(**s.get("solver", {}))
        return MpcController(params, lim, spec, weights, options, self.thermal_form, self.T_amb)

    # -- serialisation ------------------------------------------------------
    def to_dict(self):
        return {
            "schema": SCENARIO_SCHEMA_ID,
            "name": self.name,
            "controller": {"kind": self.controller, "settings": _plain(self.controller_settings)},
            "T_amb": self.T_amb,
            "soc_start": self.soc_start,
            "soc_target": self.soc_target,
            "ageing": dataclasses.asdict(self.ageing),
            "limits": dataclasses.asdict(self.limits),
            "dt": self.dt,
            "max_duration": self.max_duration,
            "params": self.params_path,
            "thermal_form": self.thermal_form,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        if doc.get("schema") != SCENARIO_SCHEMA_ID:
            raise ParameterError(f"unsupported scenario schema {doc.get('schema')!r}, "
                                 f"expected {SCENARIO_SCHEMA_ID!r}")
        known = {"schema", "name", "controller", "T_amb", "T_amb_C", "soc_start", "soc_target", "ageing",
                 "limits", "dt", "max_duration", "params", "thermal_form", "seed"}
        unknown = set(doc) - known
        if unknown:
            raise ParameterError(f"unknown scenario keys: {sorted(unknown)}")
        ctrl = doc.get("controller", {"kind": "pid"})
        if isinstance(ctrl, str):
            ctrl = {"kind": ctrl}
        kw = {}
        if "T_amb_C" in doc:
            if "T_amb" in doc:
                raise ParameterError("give either T_amb (K) or T_amb_C, not both")
            kw["T_amb"] = celsius(float(doc["T_amb_C"]))
        elif "T_amb" in doc:
            kw["T_amb"] = float(doc["T_amb"])
        for key in ("soc_start", "soc_target", "dt", "max_duration"):
            if key in doc:
                kw[key] = float(doc[key])
        params_path = doc.get("params")
        if params_path is not None and base_dir is not None and not Path(params_path).is_absolute():
            params_path = str(Path(base_dir) / params_path)
        return cls(
            controller=ctrl.get("kind", "pid"),
            controller_settings=dict(ctrl.get("settings") or {}),
            ageing=AgeingSpec(**(doc.get("ageing") or {})),
            limits=OperatingLimits(**(doc.get("limits") or {})),
            params_path=params_path,
            thermal_form=doc.get("thermal_form", "classical"),
            seed=int(doc.get("seed", 0)),
            name=str(doc.get("name") or ""),
            **kw,
        )


def _plain(obj):
    if isinstance(obj, PidGains):
        return dataclasses.asdict(obj)
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def load_scenario(path):
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ParameterError(f"cannot read scenario file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParameterError(f"scenario file {path} does not hold a mapping")
    return ScenarioConfig.from_dict(doc, base_dir=path.parent)


def save_scenario(cfg: ScenarioConfig, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
