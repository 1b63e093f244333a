import numpy as np
import pytest

from opsgd.hilbert import SpectralDiagonal, operator_norm
from opsgd.problem import (
    InfeasibleSpectrumError,
    NonlinearSpec,
    ProblemSpec,
    TargetSpec,
    build_spectrum,
    build_target,
    draw_inputs,
    kurtosis_certificate,
    make_rng,
    respond,
    sample,
)


def weak_problem(dim_in=20, dim_out=5, r=0.5, s=0.5, sigma2=0.01, seed=0, **kw):
    C = build_spectrum(dim_in, s, 1e-6, 10.0)
    return ProblemSpec(C, TargetSpec.random("weak", r, 1.0, (dim_out, dim_in), seed), sigma2, **kw)


class TestBuildSpectrum:
    def test_hand_sum(self):
        C = build_spectrum(4, 0.5, 0.5, 0.5)
        np.testing.assert_allclose(C.eigenvalues, [0.5, 0.125, 0.5 / 9, 0.03125], rtol=1e-15)
        np.testing.assert_allclose(C.trace, 0.5 * (1 + 1 / 4 + 1 / 9 + 1 / 16), rtol=1e-15)

    def test_single_atom(self):
        np.testing.assert_array_equal(build_spectrum(1, 1.0, 1.0, 1.0).eigenvalues, [1.0])

    def test_harmonic_infeasible(self):
        with pytest.raises(InfeasibleSpectrumError, match="largest feasible d1"):
            build_spectrum(3, 1.0, 1.0, 1.0)

    def test_largest_feasible_scale(self):
        C = build_spectrum(200, 1.0, 1e-3, 1.0)
        harmonic = np.sum(1.0 / np.arange(1, 201))
        np.testing.assert_allclose(C.eigenvalues[0], 1 / harmonic, rtol=1e-14)
        assert C.trace <= 1.0

    def test_envelope_holds(self):
        C = build_spectrum(50, 0.5, 0.01, 0.2)
        k = np.arange(1, 51)
        assert np.all(C.eigenvalues >= 0.01 * k ** -2.0)
        assert np.all(C.eigenvalues <= 0.2 * k ** -2.0 * (1 + 1e-14))


class TestBuildTarget:
    def test_diagonal_case(self):
        C = SpectralDiagonal([0.25, 0.04])
        S = build_target(TargetSpec("weak", 0.5, 1.0, np.eye(2)), C)
        np.testing.assert_allclose(S, np.diag([0.5, 0.2]), rtol=1e-15)

    def test_nonpositive_r_rejected(self):
        with pytest.raises(ValueError):
            TargetSpec("weak", 0.0, 1.0, np.eye(2))

    def test_inverse_diagonal_oracle(self):
        C = build_spectrum(4, 0.5, 0.1, 1.0)
        tg = TargetSpec.random("weak", 1.0, 1.0, (4, 4), seed=7)
        S = build_target(tg, C)
        np.testing.assert_allclose(S / C.eigenvalues, tg.j_operator, atol=1e-10)

    @pytest.mark.parametrize("kind", ["weak", "strong"])
    def test_norm_hits_R(self, kind):
        tg = TargetSpec.random(kind, 0.5, 2.5, (6, 9), seed=3)
        assert abs(tg.j_norm - 2.5) <= 1e-12
        if kind == "weak":
            np.testing.assert_allclose(operator_norm(tg.j_operator), 2.5, rtol=1e-8)

    def test_pure(self):
        a = TargetSpec.random("strong", 0.5, 1.0, (5, 7), seed=11)
        b = TargetSpec.random("strong", 0.5, 1.0, (5, 7), seed=11)
        assert a.j_operator.tobytes() == b.j_operator.tobytes()

    def test_norm_bound_enforced(self):
        with pytest.raises(ValueError):
            TargetSpec("weak", 0.5, 1.0, 2 * np.eye(2))


class TestSample:
    def test_noiseless_forced_input(self):
        spec = weak_problem(sigma2=0.0)
        x = np.zeros(spec.dim_in)
        x[0] = 1.0
        np.testing.assert_array_equal(respond(spec, x, None)[0], spec.s_dagger[:, 0])

    def test_noise_mean(self):
        spec = weak_problem(sigma2=0.04)
        n = 100_000
        X, Y = sample(spec, make_rng(1), n)
        eps = Y - X @ spec.s_dagger.T
        assert np.linalg.norm(eps.mean(0)) <= 4 * 0.2 / np.sqrt(n)
        np.testing.assert_allclose(np.mean(np.sum(eps ** 2, 1)), 0.04, rtol=0.02)

    def test_noise_channels(self):
        spec = weak_problem(sigma2=0.09, noise_channels=2)
        X, Y = sample(spec, make_rng(2), 50_000)
        eps = Y - X @ spec.s_dagger.T
        np.testing.assert_array_equal(eps[:, 2:], 0.0)
        np.testing.assert_allclose(eps[:, :2].var(0), [0.045, 0.045], rtol=0.03)

    def test_second_moment(self):
        spec = weak_problem(dim_in=6)
        n = 200_000
        X = draw_inputs(spec, make_rng(3), n)
        emp = X.T @ X / n
        lam = spec.spectrum.eigenvalues
        tol = 5 * np.sqrt(np.outer(lam, lam) / n) * np.sqrt(2)
        assert np.all(np.abs(emp - np.diag(lam)) <= tol)

    def test_deterministic(self):
        spec = weak_problem()
        a = sample(spec, make_rng(9), 10)
        b = sample(spec, make_rng(9), 10)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_bias_exact(self):
        base = weak_problem(sigma2=0.0)
        y0 = np.arange(base.dim_out, dtype=float)
        spec = ProblemSpec(base.spectrum, base.target, 0.0, bias=y0)
        X, Y = sample(spec, make_rng(4), 100)
        np.testing.assert_allclose(Y - X @ spec.s_dagger.T, np.broadcast_to(y0, Y.shape), atol=1e-14)


class TestNonlinearity:
    def spec(self):
        base = weak_problem(sigma2=0.0, dim_in=10, dim_out=3)
        direction = np.array([1.0, 0.0, 0.0])
        nl = NonlinearSpec(direction, 0, 2.0)
        return ProblemSpec(base.spectrum, base.target, 0.0, nonlinearity=nl)

    def test_mu2(self):
        spec = self.spec()
        lam0 = spec.spectrum.eigenvalues[0]
        assert spec.nonlinearity.mu2(spec.spectrum) == pytest.approx(2 * 4.0 * lam0 ** 2)

    def test_orthogonality(self):
        spec = self.spec()
        n = 100_000
        X, Y = sample(spec, make_rng(5), n)
        D = Y - X @ spec.s_dagger.T
        cross = D.T @ X / n
        mu2 = spec.nonlinearity.mu2(spec.spectrum)
        assert np.linalg.norm(cross) <= 5 * np.sqrt(mu2 * spec.spectrum.trace / n)
        np.testing.assert_allclose(np.mean(np.sum(D ** 2, 1)), mu2, rtol=0.05)


class TestKurtosis:
    def test_first_axis(self):
        spec = weak_problem()
        e1 = np.zeros(spec.dim_in)
        e1[0] = 1.0
        rep = kurtosis_certificate(spec, [e1], 200_000, make_rng(6))
        assert abs(rep.ratios[0] - 3) <= 5 * rep.standard_errors[0]

    def test_single_atom(self):
        C = build_spectrum(1, 1.0, 1.0, 1.0)
        spec = ProblemSpec(C, TargetSpec("weak", 0.5, 1.0, np.ones((1, 1))), 0.0)
        rep = kurtosis_certificate(spec, 1, 100_000, make_rng(7))
        assert abs(rep.ratios[0] - 3) <= 5 * rep.standard_errors[0]

    def test_twenty_directions(self):
        spec = weak_problem()
        rep = kurtosis_certificate(spec, 20, 100_000, make_rng(8))
        assert rep.ratios.size == 20
        assert rep.max_ratio <= 3 + 6 * rep.max_se

    def test_degenerate_direction_skipped(self):
        spec = weak_problem()
        rep = kurtosis_certificate(spec, [np.ones(spec.dim_in)], 10_000, make_rng(0))
        assert rep.skipped == 0
        with pytest.raises(ValueError):
            kurtosis_certificate(spec, 2, 1000, make_rng(0))

    def test_moment_constant(self):
        assert weak_problem().moment_constant == 3.0
