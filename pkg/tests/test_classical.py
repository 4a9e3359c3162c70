import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fastcharge import _kernels as K
from fastcharge.controllers.classical import (CccvController, CccvState, MimoPidController, OperatingLimits,
                                              PidGains, PidState, cccv_step, default_current_gains,
                                              default_resistance_gains, mimo_pid_current, pid_step,
                                              thermal_pid_resistance)
from fastcharge.errors import ParameterError
from fastcharge.plant import Plant, initialize

LIM = OperatingLimits()
errors_st = st.floats(-500, 500)


class TestPidStep:
    def test_zero_error_zero_output(self):
        out, _ = pid_step(PidGains(0.05, 0.05, 3.0), PidState(), 0.0, 1.0)
        assert out == 0.0

    def test_pure_proportional(self):
        out, _ = pid_step(PidGains(K_P=0.05), PidState(), 2.0, 1.0)
        assert out == pytest.approx(0.1, abs=1e-15)

    def test_textbook_terms(self):
        g = PidGains(1.0, 0.5, 2.0)
        _, s = pid_step(g, PidState(), 1.0, 1.0)
        out, s = pid_step(g, s, 3.0, 1.0)
        assert out == pytest.approx(1.0 * 3 + 0.5 * 4 + 2.0 * 2, rel=1e-15)
        assert s.integral == 4.0 and s.prev_error == 3.0

    def test_first_step_has_no_derivative_kick(self):
        out, _ = pid_step(PidGains(0.0, 0.0, 5.0), PidState(), 10.0, 1.0)
        assert out == 0.0

    def test_clamped(self):
        out, _ = pid_step(PidGains(1.0, out_min=0.0, out_max=15.0), PidState(), 100.0, 1.0)
        assert out == 15.0

    def test_integral_plateaus_under_saturation(self):
        g = PidGains(0.05, 0.05, 0.001, out_min=0.0, out_max=15.0)
        s, integrals = PidState(), []
        for _ in range(100):
            out, s = pid_step(g, s, 200.0, 1.0)
            integrals.append(s.integral)
            assert out == 15.0
        entry = integrals[int(np.argmax(np.isclose(integrals, integrals[-1])))]
        assert np.all(np.diff(integrals) >= 0)
        assert max(integrals) == entry
        assert 0.05 * 200.0 + 0.05 * max(integrals) == pytest.approx(15.0, abs=1e-9)

    def test_without_anti_windup_integral_grows(self):
        g = PidGains(0.05, 0.05, out_min=0.0, out_max=15.0, anti_windup=False)
        s = PidState()
        for _ in range(100):
            _, s = pid_step(g, s, 200.0, 1.0)
        assert s.integral == pytest.approx(20000.0)

    @given(st.lists(errors_st, min_size=2, max_size=60))
    def test_saturation_never_deepens_integral(self, errs):
        g = PidGains(0.05, 0.05, 0.001, out_min=0.0, out_max=15.0)
        s = PidState()
        for e in errs:
            out, new = pid_step(g, s, e, 1.0)
            if out == g.out_max and e > 0:
                assert new.integral <= max(s.integral, (g.out_max - g.K_P * e - g.K_D * new.derivative) / g.K_I) + 1e-9
            if out == g.out_min and e < 0:
                assert new.integral >= min(s.integral, (g.out_min - g.K_P * e - g.K_D * new.derivative) / g.K_I) - 1e-9
            s = new

    def test_recovers_immediately_after_saturation(self):
        g = PidGains(0.05, 0.05, out_min=0.0, out_max=15.0)
        s = PidState()
        for _ in range(50):
            _, s = pid_step(g, s, 300.0, 1.0)
        out, _ = pid_step(g, s, -10.0, 1.0)
        assert out < 15.0

    def test_derivative_filter(self):
        g = PidGains(0.0, 0.0, 1.0, derivative_filter=9.0)
        _, s = pid_step(g, PidState(), 0.0, 1.0)
        out, s = pid_step(g, s, 10.0, 1.0)
        assert out == pytest.approx(1.0, rel=1e-15)
        out, _ = pid_step(g, s, 10.0, 1.0)
        assert out == pytest.approx(0.9, rel=1e-15)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            pid_step(PidGains(1.0), PidState(), 1.0, 0.0)

    @pytest.mark.parametrize("kw", [dict(K_P=np.nan), dict(K_P=1.0, K_D=np.inf), dict(K_P=1.0, out_min=2, out_max=1),
                                    dict(K_P=1.0, derivative_filter=-1.0)])
    def test_gain_validation(self, kw):
        with pytest.raises(ParameterError):
            PidGains(**kw)


class TestLimits:
    def test_defaults(self):
        assert (LIM.phi_lim, LIM.U_lim, LIM.T_lim, LIM.I_max) == (0.045, 4.2, 318.15, 15.0)
        assert (LIM.R_out_min, LIM.R_out_max) == (4.2, 14.0)

    @pytest.mark.parametrize("kw", [dict(I_min=5, I_max=1), dict(R_out_min=14, R_out_max=4.2), dict(phi_lim=-0.01)])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            OperatingLimits(**kw)


class TestMimoCurrent:
    def test_min_selection(self):
        gains = tuple(PidGains(K_P=1.0) for _ in range(3))
        i, _, binding = mimo_pid_current((5.0, 3.0, 10.0), (PidState(),) * 3, gains, 1.0, LIM)
        assert i == 3.0 and binding == "phi"

    def test_large_errors_give_max_current(self):
        i, _, _ = mimo_pid_current((1e3, 1e3, 1e3), (PidState(),) * 3, default_current_gains(), 1.0, LIM)
        assert i == LIM.I_max

    def test_table_gains(self):
        U, phi, T = default_current_gains()
        assert (U.K_P, U.K_I, U.K_D) == (0.05, 0.0, 3.0)
        assert (phi.K_P, phi.K_I, phi.K_D) == (0.05, 0.05, 0.001)
        assert (T.K_P, T.K_I, T.K_D) == (30.0, 0.0, 0.0)

    @given(st.tuples(errors_st, errors_st, errors_st), st.tuples(errors_st, errors_st, errors_st))
    def test_never_exceeds_any_loop(self, e0, e1):
        gains = default_current_gains()
        states = (PidState(),) * 3
        for e in (e0, e1):
            i, new, _ = mimo_pid_current(e, states, gains, 1.0, LIM)
            proposals = [pid_step(g.with_bounds(LIM.I_min, LIM.I_max), s, x, 1.0)[0]
                         for g, s, x in zip(gains, states, e)]
            assert i == min(proposals)
            assert LIM.I_min <= i <= LIM.I_max
            states = new

    def test_idle_loop_integral_frozen(self):
        gains = default_current_gains()
        states = (PidState(), PidState(integral=100.0), PidState())
        _, new, binding = mimo_pid_current((1e3, 500.0, 0.01), states, gains, 1.0, LIM)
        assert binding == "T"
        assert new[1].integral == 100.0

    def test_negative_phi_margin_lowers_current(self, params):
        # a loop that has been sitting at full current meets an anode potential below the limit
        plant = Plant(params, "classical")
        y = initialize(0.5, 293.15, params).vector()
        ctrl = MimoPidController(thermal_actuation=False)
        ctrl.states = (PidState(), PidState(integral=300.0), PidState())
        i_prev = LIM.I_max
        for _ in range(2):
            o = plant.outputs_vector(y, i_prev)
            meas = {"U_c": o[K.O_UC], "phi_neg": o[K.O_PHI_N], "T_c": o[K.O_TC]}
            assert ctrl.errors(meas)[1] < 0
            integral = ctrl.states[1].integral
            hold = min(LIM.I_max, 0.05 * integral)
            act = ctrl.act(meas, y, 1.0)
            assert act.binding == "phi"
            assert act.i < hold
            assert ctrl.states[1].integral < integral
            y = plant.step_vector(y, act.i, act.r, 293.15, 1.0)
            i_prev = act.i


class TestResistanceLoop:
    def test_hold_at_target(self):
        r, _ = thermal_pid_resistance(0.0, PidState(prev_error=0.0), default_resistance_gains(), 1.0, LIM, 9.3)
        assert r == 9.3

    def test_hot_goes_to_forced_convection(self):
        r, _ = thermal_pid_resistance(-20.0, PidState(), default_resistance_gains(), 1.0, LIM, 14.0)
        assert r == 4.2

    def test_cold_goes_to_natural_convection(self):
        r, _ = thermal_pid_resistance(20.0, PidState(), default_resistance_gains(), 1.0, LIM, 4.2)
        assert r == 14.0

    @given(st.floats(-50, 50), st.floats(4.2, 14.0))
    def test_sign_and_bounds(self, e, r_prev):
        r, _ = thermal_pid_resistance(e, PidState(), default_resistance_gains(), 1.0, LIM, r_prev)
        assert LIM.R_out_min <= r <= LIM.R_out_max
        if e < 0:
            assert r <= r_prev
        elif e > 0:
            assert r >= r_prev


class TestCccv:
    def test_constant_current_phase(self):
        i, s = cccv_step(3.9, CccvState(), 6.0, 4.2, 1.0)
        assert i == 6.0 and s.phase == "cc"

    def test_switch_and_decrease(self):
        i, s = cccv_step(4.2, CccvState("cc", 6.0), 6.0, 4.2, 1.0)
        assert s.phase == "cv" and i <= 6.0
        i2, s = cccv_step(4.205, s, 6.0, 4.2, 1.0)
        assert i2 < i

    def test_latched(self):
        _, s = cccv_step(4.21, CccvState(), 6.0, 4.2, 1.0)
        i, s = cccv_step(3.0, s, 6.0, 4.2, 1.0)
        assert s.phase == "cv"

    @given(st.lists(st.floats(3.5, 4.5), min_size=1, max_size=50))
    def test_cv_envelope_non_increasing(self, volts):
        s = CccvState("cv", 6.0, 0.0)
        prev = 6.0
        for u in volts:
            i, s = cccv_step(u, s, 6.0, 4.2, 1.0)
            assert 0.0 <= i <= prev
            prev = i

    def test_rejects_non_positive_current(self):
        with pytest.raises(ValueError):
            cccv_step(3.9, CccvState(), 0.0, 4.2, 1.0)

    def test_controller_on_plant(self, params):
        plant = Plant(params, "classical")
        y = initialize(0.7, 293.15, params).vector()
        ctrl = CccvController(6.0)
        i_prev, currents, volts = 6.0, [], []
        for _ in range(400):
            o = plant.outputs_vector(y, i_prev)
            act = ctrl.act({"U_c": o[K.O_UC], "phi_neg": o[K.O_PHI_N], "T_c": o[K.O_TC]}, y, 1.0)
            assert act.r == 14.0
            y = plant.step_vector(y, act.i, act.r, 293.15, 1.0)
            currents.append(act.i)
            volts.append(plant.outputs_vector(y, act.i)[K.O_UC])
            i_prev = act.i
        assert ctrl.state.phase == "cv"
        cv = np.array(currents)[np.array(currents) < 6.0]
        assert cv.size > 10 and np.all(np.diff(cv) <= 1e-12)
        assert max(volts) < 4.2 + 0.01
