import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opsgd.hilbert import SpectralDiagonal
from opsgd.problem import ProblemSpec, TargetSpec, build_spectrum, make_rng, sample
from opsgd.sgd import (
    SgdState,
    StepSchedule,
    c5_constant,
    expected_errors,
    feasibility_check,
    martingale_residual,
    power_of_two_checkpoints,
    recursion_identity_gap,
    run_trajectory,
    sgd_step,
    spec_fingerprint,
)


def make_spec(regularity="weak", dim_in=30, dim_out=4, r=0.5, s=0.5, sigma2=0.01, seed=0):
    C = build_spectrum(dim_in, s, 1e-6, 10.0)
    return ProblemSpec(C, TargetSpec.random(regularity, r, 1.0, (dim_out, dim_in), seed), sigma2)


class TestSchedule:
    def test_decaying_values(self):
        sch = StepSchedule.decaying(0.5, 0.5)
        np.testing.assert_allclose(sch.eta([1, 4, 16]), [0.5, 0.25, 0.125], rtol=1e-15)
        assert sch.eta(9) == pytest.approx(0.5 / 3)

    def test_constant_values(self):
        sch = StepSchedule.constant(0.5, 0.5, horizon=15)
        np.testing.assert_allclose(sch.eta(np.arange(1, 16)), 0.125, rtol=1e-15)
        assert sch.with_horizon(3).max_step == pytest.approx(0.25)

    @pytest.mark.parametrize("kw", [
        dict(kind="decaying", eta1=0.5, theta=1.0),
        dict(kind="decaying", eta1=0.5, theta=0.0),
        dict(kind="decaying", eta1=-1.0, theta=0.5),
        dict(kind="constant", eta_star=0.5, exponent=1.0, horizon=10),
        dict(kind="constant", eta_star=0.5, exponent=0.5, horizon=None),
        dict(kind="bogus"),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            StepSchedule(**kw)

    def test_norm_condition(self):
        with pytest.raises(ValueError, match="lambda_max"):
            StepSchedule.decaying(2.0, 0.5, lambda_max=0.5)
        StepSchedule.decaying(1.9, 0.5, lambda_max=0.5)


class TestSgdStep:
    def test_hand_step(self):
        sch = StepSchedule.decaying(0.5, 0.5)
        st0 = SgdState.initial(1, 2, sch)
        st1 = sgd_step(st0, [1.0, 2.0], [3.0])
        # residual -3, step 0.5: S = 1.5 * x^T
        np.testing.assert_allclose(st1.S, [[1.5, 3.0]], rtol=1e-15)
        assert st1.t == 2
        st2 = sgd_step(st1, [0.0, 1.0], [0.0])
        np.testing.assert_allclose(st2.S, [[1.5, 3.0 - 0.5 / np.sqrt(2) * 3.0]], rtol=1e-14)

    def test_zero_input_is_noop(self):
        sch = StepSchedule.decaying(0.5, 0.5)
        st0 = SgdState(np.ones((2, 3)), 3, sch)
        np.testing.assert_array_equal(sgd_step(st0, np.zeros(3), np.ones(2)).S, st0.S)

    def test_exact_fit_fixed_point(self):
        sch = StepSchedule.decaying(0.5, 0.5)
        S = np.arange(6.0).reshape(2, 3)
        x = np.array([0.3, -1.0, 2.0])
        st1 = sgd_step(SgdState(S, 1, sch), x, S @ x)
        np.testing.assert_array_equal(st1.S, S)

    def test_shape_mismatch(self):
        st0 = SgdState.initial(2, 3, StepSchedule.decaying(0.5, 0.5))
        with pytest.raises(ValueError):
            sgd_step(st0, np.zeros(4), np.zeros(2))

    def test_immutable_iterate(self):
        st0 = SgdState.initial(2, 3, StepSchedule.decaying(0.5, 0.5))
        with pytest.raises(ValueError):
            st0.S[0, 0] = 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 0.9))
    def test_recursion_identity(self, seed, eta1):
        spec = make_spec(dim_in=8, dim_out=3)
        rng = make_rng(seed)
        sch = StepSchedule.decaying(eta1, 0.5)
        state = SgdState(rng.standard_normal((3, 8)), int(rng.integers(1, 100)), sch)
        X, Y = sample(spec, rng, 1)
        gap = recursion_identity_gap(state, spec.s_dagger, spec.spectrum, X[0], Y[0])
        assert gap <= 1e-12 * max(1.0, np.abs(state.S).max())

    def test_martingale_mean_zero(self):
        spec = make_spec(dim_in=6, dim_out=2, sigma2=0.04)
        rng = make_rng(1)
        state = SgdState(rng.standard_normal((2, 6)), 5, StepSchedule.decaying(0.5, 0.5))
        n = 200_000
        X, Y = sample(spec, rng, n)
        acc = np.zeros((2, 6))
        sq = np.zeros((2, 6))
        for x, y in zip(X, Y):
            B = martingale_residual(state, spec.s_dagger, spec.spectrum, x, y)
            acc += B
            sq += B ** 2
        mean = acc / n
        se = np.sqrt(sq / n - mean ** 2) / np.sqrt(n)
        assert np.all(np.abs(mean) <= 5 * se + 1e-15)


class TestCheckpoints:
    def test_powers(self):
        assert power_of_two_checkpoints(8) == [1, 2, 4, 8]
        assert power_of_two_checkpoints(10) == [1, 2, 4, 8, 10]
        assert power_of_two_checkpoints(0) == []

    def test_zero_horizon(self):
        spec = make_spec()
        log = run_trajectory(spec, StepSchedule.decaying(0.5, 0.5), 0)
        np.testing.assert_array_equal(log.t, [0])
        lam = spec.spectrum.eigenvalues
        np.testing.assert_allclose(log.prediction[0], np.sum(spec.s_dagger ** 2 * lam), rtol=1e-14)


class TestRunTrajectory:
    def test_matches_manual_loop(self):
        spec = make_spec(dim_in=10, dim_out=3)
        sch = StepSchedule.decaying(0.5, 0.5)
        T = 37
        log = run_trajectory(spec, sch, T, checkpoints=[5, 37], seed=4, chunk=8)
        X2, Y2 = [], []
        rng = make_rng(4)
        for n in (8, 8, 8, 8, 5):
            a, b = sample(spec, rng, n)
            X2.append(a)
            Y2.append(b)
        X2, Y2 = np.vstack(X2), np.vstack(Y2)
        state = SgdState.initial(3, 10, sch)
        for i in range(T):
            state = sgd_step(state, X2[i], Y2[i])
            if i + 1 == 5:
                D5 = state.S - spec.s_dagger
        D = state.S - spec.s_dagger
        lam = spec.spectrum.eigenvalues
        np.testing.assert_allclose(log.prediction[1], np.sum(D5 ** 2 * lam), rtol=1e-12)
        np.testing.assert_allclose(log.prediction[2], np.sum(D ** 2 * lam), rtol=1e-12)
        np.testing.assert_allclose(log.estimation[2], np.sum(D ** 2), rtol=1e-12)

    def test_deterministic(self):
        spec = make_spec()
        sch = StepSchedule.decaying(0.5, 0.5)
        a = run_trajectory(spec, sch, 500, seed=12)
        b = run_trajectory(spec, sch, 500, seed=12)
        assert a.equals(b)
        assert a.prediction.tobytes() == b.prediction.tobytes()
        c = run_trajectory(spec, sch, 500, seed=13)
        assert not a.equals(c)

    def test_chunk_invariance(self):
        spec = make_spec()
        sch = StepSchedule.decaying(0.5, 0.5)
        a = run_trajectory(spec, sch, 300, seed=2, chunk=300)
        b = run_trajectory(spec, sch, 300, seed=2, chunk=4096)
        assert a.equals(b)

    def test_estimation_recorded(self):
        sch = StepSchedule.decaying(0.5, 0.5)
        assert run_trajectory(make_spec(r=0.25), sch, 4).estimation is None
        assert run_trajectory(make_spec(r=0.5), sch, 4).estimation is not None
        assert run_trajectory(make_spec("strong", r=0.1), sch, 4).estimation is not None

    def test_horizon_mismatch(self):
        with pytest.raises(ValueError, match="horizon"):
            run_trajectory(make_spec(), StepSchedule.constant(0.5, 0.5, 10), 20)

    def test_noiseless_decreases(self):
        spec = make_spec(sigma2=0.0)
        log = run_trajectory(spec, StepSchedule.decaying(0.5, 0.5), 2048, seed=0)
        assert log.prediction[-1] < 0.2 * log.prediction[0]

    def test_fingerprint(self):
        spec = make_spec()
        f1 = spec_fingerprint(spec, StepSchedule.decaying(0.5, 0.5))
        f2 = spec_fingerprint(spec, StepSchedule.decaying(0.5, 0.6))
        assert f1 != f2 and len(f1) == 16
        assert f1 == spec_fingerprint(make_spec(), StepSchedule.decaying(0.5, 0.5))


class TestExpectedErrors:
    def test_scalar_oracle(self):
        # one dimension: m <- m(1 - eta lam)^2 + eta^2 lam (2 lam m + sig2) in closed form
        C = SpectralDiagonal([0.5])
        spec = ProblemSpec(C, TargetSpec("strong", 0.5, 1.0, np.array([[1.0]])), 0.1)
        sch = StepSchedule.decaying(0.4, 0.5)
        t, pred, est = expected_errors(spec, sch, 3, [1, 2, 3])
        m = spec.s_dagger[0, 0] ** 2
        hand = [m]
        for k in (1, 2, 3):
            eta = 0.4 / math.sqrt(k)
            x4 = 3 * 0.25
            m = m - 2 * eta * 0.5 * m + eta ** 2 * x4 * m + eta ** 2 * 0.5 * 0.1
            hand.append(m)
        np.testing.assert_allclose(est, hand, rtol=1e-13)
        np.testing.assert_allclose(pred, 0.5 * np.array(hand), rtol=1e-13)

    def test_matches_monte_carlo(self):
        spec = make_spec(dim_in=12, dim_out=2, sigma2=0.05)
        sch = StepSchedule.decaying(0.8, 0.5)
        T = 64
        _, pred, est = expected_errors(spec, sch, T)
        runs = np.array([run_trajectory(spec, sch, T, seed=i).prediction for i in range(400)])
        mean = runs.mean(0)
        se = runs.std(0, ddof=1) / np.sqrt(len(runs))
        assert np.all(np.abs(mean - pred) <= 4 * se + 1e-12)

    def test_rejects_nonlinear(self):
        from opsgd.problem import NonlinearSpec
        base = make_spec()
        nl = NonlinearSpec(np.eye(base.dim_out)[0], 0, 0.1)
        spec = ProblemSpec(base.spectrum, base.target, 0.0, nonlinearity=nl)
        with pytest.raises(ValueError):
            expected_errors(spec, StepSchedule.decaying(0.5, 0.5), 4)


class TestFeasibility:
    @staticmethod
    def oracle(eta1, theta):
        a = 1 - 2 ** (theta - 1)
        c1 = 1 / a if theta == 0.5 else 1 / (a * abs(2 * theta - 1))
        c2 = 2 ** theta * (2 - theta + math.log(a)) / (1 - theta)
        c4 = c1 + (c2 / (math.e * (2 * theta - 1)) if theta > 0.5 else c2)
        return eta1 ** 2 * 9 ** theta / min(1, eta1 / (1 - theta)) * max(c1 + c2, c4)

    @pytest.mark.parametrize("eta1,theta", [(0.01, 0.5), (0.1, 0.25), (0.05, 0.75), (2.0, 0.6)])
    def test_c5_matches_oracle(self, eta1, theta):
        np.testing.assert_allclose(c5_constant(eta1, theta), self.oracle(eta1, theta), rtol=1e-14)

    def test_half_value(self):
        a = 1 - 2 ** -0.5
        c1 = 1 / a
        c2 = 2 ** 0.5 * (1.5 + math.log(a)) / 0.5
        assert c5_constant(0.01, 0.5) == pytest.approx(1e-4 * 3 / 0.02 * (c1 + c2), rel=1e-14)

    def test_c5_grows_with_eta(self):
        etas = np.linspace(0.001, 0.5, 40)
        vals = [c5_constant(e, 0.5) for e in etas]
        assert np.all(np.diff(vals) > 0)

    def test_decaying_small_step_feasible(self):
        C = build_spectrum(200, 0.5, 1e-6, 10)
        rep = feasibility_check(StepSchedule.decaying(0.005, 0.5), C, 3.0)
        assert rep.feasible
        rep = feasibility_check(StepSchedule.decaying(0.5, 0.5), C, 3.0)
        assert rep.norm_ok and not rep.moment_ok and not rep.feasible

    def test_constant_cap(self):
        C = build_spectrum(200, 0.5, 1e-6, 10)
        from opsgd.metrics import constant_step_cap
        cap = constant_step_cap("weak", "prediction", 0.5, 0.5, 3.0)
        ok = feasibility_check(StepSchedule.constant(cap, 0.5, 100), C, 3.0, ("weak", "prediction", 0.5))
        bad = feasibility_check(StepSchedule.constant(1.01 * cap, 0.5, 100), C, 3.0, ("weak", "prediction", 0.5))
        assert ok.feasible and not bad.feasible
        with pytest.raises(ValueError):
            feasibility_check(StepSchedule.constant(cap, 0.5, 100), C, 3.0)
