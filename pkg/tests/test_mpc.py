import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastcharge.controllers.classical import OperatingLimits
from fastcharge.errors import IntegratorError, ParameterError
from fastcharge.mpc import nmpc
from fastcharge.mpc.nmpc import (HorizonSpec, MpcController, MpcMemory, MpcWeights, SolverOptions, Trajectory,
                                 _Problem, binding_constraint, build_horizon, constraint_labels, cost_gradient,
                                 cost_hessian, evaluate_constraints, evaluate_cost, mpc_step, predict_trajectory,
                                 solve_sqp)
from fastcharge.plant import CellState, Plant, initialize
from fastcharge.thermal import ThermalState

LIM = OperatingLimits()
SPEC = HorizonSpec()
W = MpcWeights.normalised(LIM, SPEC)
N = SPEC.N


def const_d(i, r, n=N):
    return np.concatenate([np.full(n, float(i)), np.full(n, float(r))])


@pytest.fixture(scope="module")
def cplant(params):
    return Plant(params, "classical")


@pytest.fixture(scope="module")
def hot_state(params):
    """35 degC cell with the core 1.15 K below its limit."""
    return CellState(initialize(0.3, 308.15, params).electro, ThermalState(317.0, 314.0))


class TestHorizon:
    def test_default(self):
        assert list(build_horizon(SPEC)) == [1, 1, 1, 1, 15, 15, 15, 15]
        assert SPEC.span == 64.0 and SPEC.N == 8

    @given(st.integers(1, 6), st.integers(1, 6), st.floats(0.1, 5), st.floats(5.5, 60))
    def test_layout(self, nf, nc, df, dc):
        spec = HorizonSpec(nf, nc, df, dc)
        h = build_horizon(spec)
        assert np.all(h[:nf] == df) and np.all(h[nf:] == dc)
        assert h.sum() == pytest.approx(spec.span, rel=1e-12)

    @pytest.mark.parametrize("args", [(1, 0, 1.0, 15.0), (0, 4, 1.0, 15.0), (2, 2, 1.0, 1.0), (2, 2, 5.0, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ParameterError):
            HorizonSpec(*args)


class TestCost:
    def test_alpha_value(self):
        assert W.alpha == 1.0 / (15.0 ** 2 * 8)
        assert abs(W.alpha - 0.55e-3) < 0.01e-3
        assert (W.beta, W.gamma) == (10.0, 1e-3)

    def test_zero(self):
        assert evaluate_cost(np.zeros(2 * N), 0.0, 0.0, W) == 0.0

    def test_normalised_to_minus_one(self):
        assert evaluate_cost(const_d(15.0, 9.0), 15.0, 9.0, W) == pytest.approx(-1.0, abs=1e-15)

    def test_unit_current_step(self):
        d = const_d(0.0, 0.0)
        d[3:N] = 1.0
        base = evaluate_cost(const_d(0.0, 0.0), 0.0, 0.0, W)
        assert evaluate_cost(d, 0.0, 0.0, W) - base == pytest.approx(10.0 - W.alpha * (N - 3), rel=1e-14)

    def test_resistance_step(self):
        d = const_d(0.0, 5.0)
        assert evaluate_cost(d, 0.0, 4.0, W) == pytest.approx(W.gamma, rel=1e-14)

    @given(st.lists(st.floats(0, 15), min_size=N, max_size=N), st.lists(st.floats(4.2, 14), min_size=N, max_size=N),
           st.floats(0, 15), st.floats(4.2, 14))
    def test_gradient_central_differences(self, i, r, i_prev, r_prev):
        d = np.array(i + r)
        g = cost_gradient(d, i_prev, r_prev, W)
        h = 1e-4
        fd = np.array([(evaluate_cost(d + h * e, i_prev, r_prev, W) - evaluate_cost(d - h * e, i_prev, r_prev, W))
                       / (2 * h) for e in np.eye(2 * N)])
        assert np.max(np.abs(g - fd)) <= 1e-6 * max(np.max(np.abs(fd)), 1e-3)

    def test_hessian_is_exact(self):
        rng = np.random.default_rng(3)
        d0, d1 = rng.uniform(0, 10, 2 * N), rng.uniform(0, 10, 2 * N)
        H = cost_hessian(N, W)
        lhs = cost_gradient(d1, 2.0, 5.0, W) - cost_gradient(d0, 2.0, 5.0, W)
        assert np.allclose(lhs, H @ (d1 - d0), rtol=0, atol=1e-12)

    def test_length_checked(self):
        with pytest.raises(ValueError):
            evaluate_cost(np.zeros(5), 0.0, 0.0, W)


class TestPrediction:
    def test_rest_is_constant(self, params):
        x = initialize(0.4, 293.15, params)
        tr = predict_trajectory(x, const_d(0.0, 14.0), 293.15, SPEC, params)
        assert np.ptp(tr.phi) < 1e-12 and np.ptp(tr.U) < 1e-12
        assert np.all(np.abs(tr.T_c - 293.15) < 1e-9)

    def test_single_interval_delegates_to_plant(self, params, cplant):
        spec = HorizonSpec(1, 1, 1.0, 15.0)
        x = initialize(0.4, 293.15, params)
        tr = predict_trajectory(x, [6.0, 6.0, 10.0, 10.0], 293.15, spec, params, "classical", plant=cplant)
        y1 = cplant.step_vector(x.vector(), 6.0, 10.0, 293.15, 1.0)
        assert np.array_equal(tr.states[1], y1)
        assert tr.T_c[0] == y1[-2]

    def test_phi_falls_over_fine_segment(self, params):
        tr = predict_trajectory(initialize(0.1, 293.15, params), const_d(6.0, 14.0), 293.15, SPEC, params)
        assert np.all(np.diff(tr.phi[:SPEC.N_fine]) < 0)


class TestConstraints:
    def test_rest_far_from_limits(self, params):
        tr = predict_trajectory(initialize(0.3, 293.15, params), const_d(0.0, 14.0), 293.15, SPEC, params)
        assert np.all(evaluate_constraints(tr, const_d(0.0, 14.0), LIM, SPEC)[2 * N:] < 0)

    def test_count_and_labels(self, params):
        tr = predict_trajectory(initialize(0.3, 293.15, params), const_d(1.0, 14.0), 293.15, SPEC, params)
        c = evaluate_constraints(tr, const_d(1.0, 14.0), LIM, SPEC)
        labels = constraint_labels(SPEC)
        assert c.size == len(labels) == 2 * N + 2 * SPEC.N_fine + N
        assert labels[2 * N] == "U[0]" and labels[-1] == f"T[{N - 1}]"

    def test_coarse_temperature_flagged(self):
        T = np.full(N, 310.0)
        T[6] = 273.15 + 46.0
        tr = Trajectory(np.full(N, 0.1), np.full(N, 3.9), T, np.zeros((N + 1, 2)))
        c = evaluate_constraints(tr, const_d(5.0, 10.0), LIM, SPEC)
        labels = constraint_labels(SPEC)
        assert [lbl for lbl, v in zip(labels, c) if v > 0] == ["T[6]"]

    def test_fine_only_voltage(self):
        U = np.full(N, 3.9)
        U[SPEC.N_fine:] = 4.5
        tr = Trajectory(np.full(N, 0.1), U, np.full(N, 300.0), np.zeros((N + 1, 2)))
        assert np.all(evaluate_constraints(tr, const_d(5.0, 10.0), LIM, SPEC) <= 0)

    def test_bound_residuals(self):
        tr = Trajectory(np.full(N, 0.1), np.full(N, 3.9), np.full(N, 300.0), np.zeros((N + 1, 2)))
        d = const_d(5.0, 10.0)
        d[0] = 16.5
        c = evaluate_constraints(tr, d, LIM, SPEC)
        assert c[0] == pytest.approx(0.1) and np.all(c[1:2 * N] < 0)

    def test_jacobian_against_central_differences(self, params, cplant):
        x = initialize(0.3, 303.15, params)
        prob = _Problem(cplant, x, 10.0, 10.0, 303.15, LIM, W, SPEC, SolverOptions())
        rng = np.random.default_rng(11)
        for _ in range(2):
            s = rng.uniform(0.05, 0.95, 2 * N)
            J = prob.jacobian(prob.rollout(s))
            h = 1e-5
            ref = np.column_stack([(prob.rollout(s + h * e)["c"] - prob.rollout(s - h * e)["c"]) / (2 * h)
                                   for e in np.eye(2 * N)])
            assert np.max(np.abs(J - ref)) <= 1e-4 * np.max(np.abs(ref))


class TestSolver:
    def test_far_from_limits_gives_max_current(self, params):
        sol = solve_sqp(initialize(0.1, 293.15, params), 15.0, 14.0, None, LIM, W, SPEC, params, 293.15,
                        thermal_form="classical")
        assert sol.converged
        assert np.allclose(sol.i, LIM.I_max) and np.allclose(sol.r, LIM.R_out_max)

    def test_hot_state_selects_forced_convection(self, params, hot_state):
        sol = solve_sqp(hot_state, 15.0, 14.0, None, LIM, W, SPEC, params, 308.15, thermal_form="classical")
        assert sol.converged and sol.max_violation <= 1e-6
        assert np.all(sol.r <= LIM.R_out_min + 0.05 * (LIM.R_out_max - LIM.R_out_min))

    def test_warm_resolve_is_idempotent(self, params, hot_state):
        first = solve_sqp(hot_state, 15.0, 14.0, None, LIM, W, SPEC, params, 308.15, thermal_form="classical")
        again = solve_sqp(hot_state, 15.0, 14.0, first.d, LIM, W, SPEC, params, 308.15, thermal_form="classical")
        assert again.iterations <= 2
        assert abs(again.cost - first.cost) < 1e-6

    @settings(max_examples=6)
    @given(soc=st.floats(0.1, 0.75), T=st.floats(273.15, 313.15), i_prev=st.floats(0, 15))
    def test_converged_solutions_feasible(self, params, cplant, soc, T, i_prev):
        sol = solve_sqp(initialize(soc, T, params), i_prev, 14.0, None, LIM, W, SPEC, params, T, plant=cplant)
        if sol.converged and not sol.elastic:
            assert np.max(sol.residuals) <= 1e-6
        assert np.all(sol.d >= np.r_[np.zeros(N), np.full(N, 4.2)] - 1e-12)
        assert np.all(sol.d <= np.r_[np.full(N, 15.0), np.full(N, 14.0)] + 1e-12)

    def test_shift_warm_start(self, params, cplant, monkeypatch):
        seen = {}
        real = nmpc._Problem.to_s

        def spy(self, d):
            seen.setdefault("d0", np.array(d))
            return real(self, d)

        monkeypatch.setattr(nmpc._Problem, "to_s", spy)
        warm = np.r_[np.arange(1.0, N + 1), np.linspace(5, 12, N)]
        solve_sqp(initialize(0.2, 293.15, params), 1.0, 5.0, warm, LIM, W, SPEC, params, 293.15,
                  shift_warm=True, plant=cplant, options=SolverOptions(max_iter=1))
        i0, r0 = warm[:N], warm[N:]
        assert np.array_equal(seen["d0"], np.r_[i0[1:], i0[-1], r0[1:], r0[-1]])


class TestReceding:
    def test_first_action_and_memory(self, params, cplant):
        mem = MpcMemory.initial(LIM)
        u, mem2, sol, flagged = mpc_step(initialize(0.1, 293.15, params), mem, 293.15, LIM, W, SPEC, params,
                                         plant=cplant)
        assert (u.i, u.r) == (sol.i[0], sol.r[0]) == (15.0, 14.0)
        assert not flagged and np.array_equal(mem2.warm, sol.d)
        assert (mem2.i_prev, mem2.r_prev) == (u.i, u.r)

    def test_deterministic(self, params, hot_state):
        a = MpcController(params, thermal_form="classical", T_amb=308.15)
        b = MpcController(params, thermal_form="classical", T_amb=308.15)
        ra = a.act({}, hot_state.vector(), 1.0)
        rb = b.act({}, hot_state.vector(), 1.0)
        assert (ra.i, ra.r, ra.binding) == (rb.i, rb.r, rb.binding)

    def test_backoff_on_failure(self, params, monkeypatch):
        def boom(*args, **kwargs):
            raise IntegratorError("synthetic")

        monkeypatch.setattr(nmpc, "solve_sqp", boom)
        mem = MpcMemory(10.0, 6.0)
        u, mem2, sol, flagged = mpc_step(initialize(0.3, 293.15, params), mem, 293.15, LIM, W, SPEC, params)
        assert flagged and sol is None
        assert (u.i, u.r) == (5.0, 6.0)
        assert mem2.warm is None

    def test_binding_labels(self, params, hot_state):
        sol = solve_sqp(initialize(0.1, 293.15, params), 15.0, 14.0, None, LIM, W, SPEC, params, 293.15,
                        thermal_form="classical")
        assert binding_constraint(sol, SPEC, LIM) == "I_max"
        hot = solve_sqp(hot_state, 15.0, 14.0, None, LIM, W, SPEC, params, 308.15, thermal_form="classical")
        assert binding_constraint(hot, SPEC, LIM) == "T"
