import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from fastcharge.errors import StateBoundsError
from fastcharge.plant import CellState, IntegratorConfig, Plant, initialize
from fastcharge.thermal import ThermalState, thermal_matrices, thermal_rhs, thermal_steady_state

FORMS = ("series", "classical")
r_out = st.floats(4.2, 14.0)


def linear_solve_steady(T_amb, P, r, th, form):
    """Independent oracle: zero the right-hand side as a 2x2 linear system."""
    ri, cc, cs = th.R_in, th.C_c, th.C_s
    if form == "series":
        M = np.array([[-1 / (ri * cc), 1 / (ri * cc)], [0.0, -1 / (cs * (ri + r))]])
        b = -np.array([P / cc, (T_amb + P * ri) / (cs * (ri + r))])
    else:
        M = np.array([[-1 / (ri * cc), 1 / (ri * cc)], [1 / (ri * cs), -(1 / ri + 1 / r) / cs]])
        b = -np.array([P / cc, T_amb / (r * cs)])
    return np.linalg.solve(M, b)


def expm_solution(T0, T_amb, P, r, th, form, t):
    A, B = thermal_matrices(r, th, form)
    u = np.array([T_amb, P])
    x_ss = -np.linalg.solve(A, B @ u)
    return x_ss + expm(A * t) @ (np.asarray(T0) - x_ss)


class TestThermalRhs:
    @pytest.mark.parametrize("form", FORMS)
    def test_equilibrium(self, params, form):
        assert thermal_rhs(ThermalState(300.0, 300.0), 300.0, 0.0, 8.0, params.thermal, form) == (0.0, 0.0)

    def test_series_form_steady_state_example(self, params):
        th = params.thermal
        assert th.R_in == 2.0
        for r in (4.2, 9.0, 14.0):
            s = thermal_steady_state(293.15, 1.0, r, th, "series")
            assert s.T_s == pytest.approx(295.15, abs=1e-9)
            assert s.T_c == pytest.approx(297.15, abs=1e-9)

    @pytest.mark.parametrize("form", FORMS)
    @given(T_amb=st.floats(250, 320), P=st.floats(0, 20), r=r_out)
    def test_steady_state_oracle(self, params, form, T_amb, P, r):
        s = thermal_steady_state(T_amb, P, r, params.thermal, form)
        ref = linear_solve_steady(T_amb, P, r, params.thermal, form)
        assert abs(s.T_c - ref[0]) < 1e-9 and abs(s.T_s - ref[1]) < 1e-9
        dc, ds = thermal_rhs(s, T_amb, P, r, params.thermal, form)
        assert abs(dc) < 1e-12 and abs(ds) < 1e-12

    @pytest.mark.parametrize("form", FORMS)
    def test_steady_state_linear_in_power(self, params, form):
        a = thermal_steady_state(293.15, 1.0, 6.0, params.thermal, form)
        b = thermal_steady_state(293.15, 3.0, 6.0, params.thermal, form)
        assert b.T_c - 293.15 == pytest.approx(3 * (a.T_c - 293.15), rel=1e-12)
        assert b.T_s - 293.15 == pytest.approx(3 * (a.T_s - 293.15), rel=1e-12)

    def test_classical_surface_drop(self, params):
        s = thermal_steady_state(293.15, 2.0, 10.0, params.thermal, "classical")
        assert s.T_s - 293.15 == pytest.approx(20.0, rel=1e-12)

    @given(r1=r_out, r2=r_out)
    def test_larger_resistance_slower_exchange(self, params, r1, r2):
        lo, hi = sorted((r1, r2))
        ts = ThermalState(310.0, 305.0)
        d_lo = thermal_rhs(ts, 293.15, 2.0, lo, params.thermal, "series")[1]
        d_hi = thermal_rhs(ts, 293.15, 2.0, hi, params.thermal, "series")[1]
        assert abs(d_hi) <= abs(d_lo)

    @pytest.mark.parametrize("r", [4.0, 14.5])
    def test_resistance_bounds(self, params, r):
        with pytest.raises(ValueError):
            thermal_rhs(ThermalState(300, 300), 300, 0, r, params.thermal)

    def test_unknown_form(self, params):
        with pytest.raises(ValueError):
            thermal_rhs(ThermalState(300, 300), 300, 0, 5.0, params.thermal, "lumped")

    def test_guard(self):
        with pytest.raises(StateBoundsError):
            ThermalState(450.0, 300.0).validate()


class TestStability:
    @pytest.mark.parametrize("form", FORMS)
    @given(r=r_out)
    def test_eigenvalues_negative(self, params, form, r):
        A, _ = thermal_matrices(r, params.thermal, form)
        assert np.all(np.linalg.eigvals(A).real < 0)

    @pytest.mark.parametrize("form", FORMS)
    @given(r=r_out, tc=st.floats(250, 350), ts=st.floats(250, 350))
    def test_free_response_contracts(self, params, form, r, tc, ts):
        T_amb = 293.15
        times = np.linspace(0, 5000, 60)
        dev = [np.max(np.abs(expm_solution((tc, ts), T_amb, 0.0, r, params.thermal, form, t) - T_amb))
               for t in times]
        assert np.all(np.diff(dev) <= 1e-9)
        assert dev[-1] < 0.05 * max(dev[0], 1e-9) + 1e-6


class TestStepResponse:
    @pytest.mark.parametrize("form", FORMS)
    def test_rhs_matches_matrix_exponential(self, params, form):
        th = params.thermal
        T0, T_amb, P, r = (300.0, 296.0), 293.15, 2.5, 5.0
        sol = solve_ivp(lambda t, x: thermal_rhs(ThermalState(*x), T_amb, P, r, th, form), (0, 400), T0,
                        method="DOP853", rtol=1e-12, atol=1e-12, dense_output=True)
        for t in (1.0, 50.0, 400.0):
            ref = expm_solution(T0, T_amb, P, r, th, form, t)
            assert np.max(np.abs(sol.sol(t) - ref)) < 1e-6

    @pytest.mark.parametrize("form", FORMS)
    def test_plant_at_rest_matches_matrix_exponential(self, params, form):
        # tolerances bound the local error per sub-step; 1e-6 K over 120 s needs a tight setting
        pl = Plant(params, form, IntegratorConfig(atol_temperature=1e-10))
        x0 = initialize(0.5, 293.15, params)
        y = CellState(x0.electro, ThermalState(310.0, 303.0)).vector()
        t = 0.0
        for _ in range(120):
            y = pl.step_vector(y, 0.0, 6.0, 293.15, 1.0)
            t += 1.0
            ref = expm_solution((310.0, 303.0), 293.15, 0.0, 6.0, params.thermal, form, t)
            assert np.max(np.abs(y[-2:] - ref)) < 1e-6
