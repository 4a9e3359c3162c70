"""The bundled reproduction preset: CCCV, PID and MPC in three ambients plus an ageing sweep."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..params import CellParameters
from ..plant import AgeingSpec
from .config import ScenarioConfig, celsius
from .export import _json_safe, export, write_table_csv
from .simulate import DEFAULT_SOH_LEVELS, run_scenario

log = logging.getLogger(__name__)

AMBIENTS_C = (0.0, 20.0, 35.0)
CCCV_CURRENTS = {"cccv2.4C": 6.0, "cccv6C": 15.0}
SOH_AMBIENT_C = 20.0

COMPARISON_COLUMNS = ("name", "controller", "T_amb_C", "charging_time_s", "reached_target", "termination",
                      "worst_phi_margin_V", "worst_U_margin_V", "worst_T_margin_K", "phi_violation_steps",
                      "U_violation_steps", "T_violation_steps", "first_r_actuation_s",
                      "soc_at_first_derate")
SOH_COLUMNS = ("capacity_fraction", "sei_resistance_multiplier", "soc_at_first_derate", "charging_time_s",
               "termination")


def preset_scenarios(params_path=None, thermal_form="classical", ambients_c=AMBIENTS_C):
    """Scenario matrix of the preset, in run order."""
    out = []
    for T in ambients_c:
        for tag, i_cc in CCCV_CURRENTS.items():
            out.append(ScenarioConfig(controller="cccv", controller_settings={"i_cc": i_cc},
                                      T_amb=celsius(T), params_path=params_path, thermal_form=thermal_form,
                                      name=f"{tag}_{T:g}C"))
        for kind in ("pid", "mpc"):
            out.append(ScenarioConfig(controller=kind, T_amb=celsius(T), params_path=params_path,
                                      thermal_form=thermal_form, name=f"{kind}_{T:g}C"))
    return out


def soh_base(params_path=None, thermal_form="classical"):
    return ScenarioConfig(controller="mpc", T_amb=celsius(SOH_AMBIENT_C), params_path=params_path,
                          thermal_form=thermal_form, name="mpc_soh")


@dataclass
class SuiteResult:
    runs: dict = field(default_factory=dict)  # name -> (cfg, trace, summary)
    soh: list = field(default_factory=list)  # [(AgeingSpec, trace, summary)]
    files: list = field(default_factory=list)

    def summary(self, name):
        return self.runs[name][2]

    def trace(self, name):
        return self.runs[name][1]


def _soh_name(lv: AgeingSpec):
    return f"mpc_soh_{lv.capacity_fraction:g}_{lv.sei_resistance_multiplier:g}"


def run_preset_suite(out_dir=None, params: CellParameters | None = None, params_path=None,
                    thermal_form="classical", soh_levels=DEFAULT_SOH_LEVELS, ambients_c=AMBIENTS_C):
    """Run the full preset and, with ``out_dir``, write traces and figure tables.

    The fresh-cell level of the ageing sweep reuses the 20 degC MPC run when
    that run is part of the matrix.
    """
    res = SuiteResult()
    for cfg in preset_scenarios(params_path, thermal_form, ambients_c):
        log.info("running %s", cfg.label)
        trace, summary = run_scenario(cfg, params)
        res.runs[cfg.label] = (cfg, trace, summary)
    base = soh_base(params_path, thermal_form)
    fresh_key = f"mpc_{SOH_AMBIENT_C:g}C"
    for lv in soh_levels:
        if lv == AgeingSpec() and fresh_key in res.runs:
            _, trace, summary = res.runs[fresh_key]
        else:
            log.info("running %s", _soh_name(lv))
            trace, summary = run_scenario(base.replace(ageing=lv, name=_soh_name(lv)), params)
        res.soh.append((lv, trace, summary))
    if out_dir is not None:
        res.files = write_suite(res, out_dir)
    return res


def write_suite(res: SuiteResult, out_dir):
    """Deterministic CSVs plus JSON files that carry the wall-clock timings."""
    out = Path(out_dir)
    traces = out / "traces"
    files = []
    rows = []
    timing = {}
    for name, (cfg, trace, s) in res.runs.items():
        files += export(trace, s, traces, name, timing=False)
        rows.append(_comparison_row(cfg, s))
        timing[name] = {"controller": s.controller, "T_amb_C": cfg.T_amb - 273.15,
                        "total_compute_s": s.total_compute_s, "mean_step_compute_s": s.mean_step_compute_s,
                        "steps": s.steps}
    files.append(write_table_csv(rows, COMPARISON_COLUMNS, out / "charging_comparison.csv"))
    soh_rows = []
    for lv, trace, s in res.soh:
        files += export(trace, s, traces, _soh_name(lv), timing=False)
        soh_rows.append({"capacity_fraction": lv.capacity_fraction,
                         "sei_resistance_multiplier": lv.sei_resistance_multiplier,
                         "soc_at_first_derate": s.soc_at_first_derate, "charging_time_s": s.charging_time_s,
                         "termination": s.termination})
    files.append(write_table_csv(soh_rows, SOH_COLUMNS, out / "soh_sweep.csv"))
    tpath = out / "compute_times.json"
    tpath.write_text(json.dumps(_json_safe(timing), indent=2, sort_keys=True) + "\n")
    files.append(tpath)
    return files


def _comparison_row(cfg: ScenarioConfig, s):
    return {
        "name": s.name, "controller": s.controller, "T_amb_C": round(cfg.T_amb - 273.15, 6),
        "charging_time_s": s.charging_time_s, "reached_target": s.reached_target, "termination": s.termination,
        "worst_phi_margin_V": s.worst_margin["phi"], "worst_U_margin_V": s.worst_margin["U"],
        "worst_T_margin_K": s.worst_margin["T"], "phi_violation_steps": s.violation_steps["phi"],
        "U_violation_steps": s.violation_steps["U"], "T_violation_steps": s.violation_steps["T"],
        "first_r_actuation_s": s.first_r_actuation_s, "soc_at_first_derate": s.soc_at_first_derate,
    }
