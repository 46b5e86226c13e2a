import math

import numpy as np
import pytest

from fragstop import expfun, levy, stopsolve
from fragstop.levy import AssumptionError, BinaryUniform, DomainError
from fragstop.streams import substream


def make_degen(q=1.0, c=0.25, gamma=1.0, theta=1.0):
    model = BinaryUniform(0.0)
    params = levy.make_params(model, gamma=gamma, theta=theta, q=q, c=c)
    return model, params, expfun.degenerate_sample(params)


class TestSolveDegenerate:
    @pytest.mark.parametrize("q", [0.5, 1.0, 2.0])
    def test_threshold_is_inverse_discount(self, q):
        model, params, sample = make_degen(q=q)
        res = stopsolve.solve_b_star(model, params, sample, rel_tol_b=1e-10, diagnostics=False)
        assert res.b_star == pytest.approx(1.0 / q, rel=1e-9)

    def test_other_scales(self):
        # gamma*theta != 1 leaves b* = 1/q; the threshold ignores the start c.
        model, params, sample = make_degen(q=2.0, c=0.1, gamma=2.0, theta=0.5)
        res = stopsolve.solve_b_star(model, params, sample, rel_tol_b=1e-10, diagnostics=False)
        assert res.b_star == pytest.approx(0.5, rel=1e-9)

    def test_value_closed_forms(self):
        model, params, sample = make_degen()
        b = 1.0
        for c in (0.1, 0.5, 0.9):
            expected = b * ((c + 1.0) / (b + 1.0)) ** 2
            assert stopsolve.value_tilde(params, sample, b, c) == pytest.approx(expected, rel=1e-12)
        assert stopsolve.value_star(params, sample, b, 2.0 * b) == 2.0 * b
        assert stopsolve.value_star(params, sample, b, b) == pytest.approx(b, rel=1e-14)

    def test_kappa_le_gamma_rejected(self):
        model = BinaryUniform(0.0)
        params = levy.make_params(model, gamma=1.0, theta=1.0, q=0.0, c=1.0, allow_q_zero=True)
        with pytest.raises(AssumptionError):
            stopsolve.solve_b_star(model, params, expfun.degenerate_sample(params))


class TestSolveReference:
    def test_threshold_equation_holds(self, ref_params, ref_solved):
        target = ref_params.kappa / ref_params.gamma
        assert ref_solved.f_at_b_star == pytest.approx(target, rel=1e-5)
        assert ref_solved.b_star > 0.0
        assert ref_solved.value_at_c >= ref_params.c

    def test_same_root_from_any_bracket_start(self, ref_model, ref_params, ref_sample, ref_solved):
        # The bracket search starts from c; a different start must converge to
        # the same root because f is samplewise monotone.
        far = levy.make_params(ref_model, gamma=1.0, theta=1.0, q=1.0, c=3.0)
        res = stopsolve.solve_b_star(ref_model, far, ref_sample, diagnostics=False)
        assert res.b_star == pytest.approx(ref_solved.b_star, rel=1e-5)

    def test_large_discount_shrinks_threshold(self, ref_model):
        # The no-splitting bound b* = 1/q dominates nontrivial families.
        params = levy.make_params(ref_model, gamma=1.0, theta=1.0, q=100.0, c=0.005)
        sample = expfun.draw_shared_sample(ref_model, params, 5000, seed=8)
        res = stopsolve.solve_b_star(ref_model, params, sample, diagnostics=False)
        assert res.b_star <= 1.0 / 100.0 * 1.02

    def test_value_dominates_payoff_below_threshold(self, ref_params, ref_sample, ref_solved):
        grid = np.linspace(0.05, ref_solved.b_star, 20)
        tilde = stopsolve.value_tilde(ref_params, ref_sample, ref_solved.b_star, grid)
        assert np.all(tilde >= grid - 1e-9)

    def test_value_convex(self, ref_params, ref_sample, ref_solved):
        grid = np.linspace(0.05, 2.0 * ref_solved.b_star, 60)
        tilde = stopsolve.value_tilde(ref_params, ref_sample, ref_solved.b_star, grid)
        second = np.diff(tilde, 2)
        assert np.all(second >= -1e-10)

    def test_curve_matches_exact_values(self, ref_params, ref_sample, ref_solved):
        curve = stopsolve.TildeCurve(ref_params, ref_sample, ref_solved.b_star, 0.05, 5.0)
        pts = np.array([0.07, 0.3, 1.0, 2.5, 4.9])
        exact = stopsolve.value_tilde(ref_params, ref_sample, ref_solved.b_star, pts)
        assert np.allclose(curve.tilde(pts), exact, rtol=1e-7)


class TestPasting:
    def test_degenerate_gaps_vanish(self):
        model, params, sample = make_degen()
        gaps = stopsolve.pasting_check(params, sample, 1.0)
        assert abs(gaps.value_gap) <= 1e-10
        assert abs(gaps.slope_gap) <= 1e-8

    def test_reference_gaps_small(self, ref_params, ref_sample, ref_solved):
        gaps = stopsolve.pasting_check(ref_params, ref_sample, ref_solved.b_star)
        assert abs(gaps.value_gap) <= 1e-6 * ref_solved.b_star
        assert abs(gaps.slope_gap) <= 1e-4  # bisection-tolerance level on the solve sample

    def test_corrupted_threshold_breaks_smoothness(self, ref_params, ref_sample, ref_solved):
        gaps = stopsolve.pasting_check(ref_params, ref_sample, 1.5 * ref_solved.b_star)
        assert abs(gaps.slope_gap) > 0.02


class TestGenerator:
    def test_identity_function_residual(self):
        model, params, _ = make_degen(q=1.0)
        for x in (0.5, 1.0, 3.0):
            res = stopsolve.generator_residual(model, params, lambda z: z, x)
            assert res == pytest.approx(1.0 - params.q * x, abs=1e-9)

    def test_degenerate_candidate_residual_zero(self):
        model, params, sample = make_degen()
        fn = lambda z: stopsolve.value_tilde(params, sample, 1.0, z)
        for x in (0.2, 0.5, 0.9):
            assert stopsolve.generator_residual(model, params, fn, x) == pytest.approx(0.0, abs=1e-9)

    def test_reference_candidate_residual_within_noise(
        self, ref_model, ref_params, ref_sample, ref_solved
    ):
        b = ref_solved.b_star
        for x in (0.2 * b, 0.5 * b, 0.9 * b):
            est = stopsolve.generator_residual_estimate(
                ref_model, ref_params, ref_sample, b, x, kind="tilde"
            )
            assert abs(est.value) <= 3.0 * est.std_error + 1e-6

    def test_reference_stopping_region_nonpositive(
        self, ref_model, ref_params, ref_sample, ref_solved
    ):
        b = ref_solved.b_star
        est = stopsolve.generator_residual_estimate(
            ref_model, ref_params, ref_sample, b, 2.0 * b, kind="star"
        )
        assert est.value <= 3.0 * est.std_error
        assert est.value < -0.1  # strictly inside the stopping region

    def test_rejects_nonpositive_x(self, ref_model, ref_params):
        with pytest.raises(DomainError):
            stopsolve.generator_residual(ref_model, ref_params, lambda z: z, 0.0)


class TestLaplaceIdentity:
    def test_degenerate_exact(self, rng):
        model, params, sample = make_degen(c=1.0)
        for mult in (1.5, 2.0):
            b = mult * params.c
            chk = stopsolve.first_passage_laplace_check(model, params, b, 50, rng, sample)
            expected = ((params.c + 1.0) / (b + 1.0)) ** 2
            assert chk.mc.value == pytest.approx(expected, rel=1e-12)
            assert chk.analytic == pytest.approx(expected, rel=1e-12)
            assert chk.mc.std_error == pytest.approx(0.0, abs=1e-12)

    def test_boundary_threshold(self, ref_model, ref_params, ref_sample, rng):
        chk = stopsolve.first_passage_laplace_check(
            ref_model, ref_params, ref_params.c, 20, rng, ref_sample
        )
        assert chk.mc.value == 1.0
        assert chk.analytic == 1.0

    def test_threshold_below_start_rejected(self, ref_model, ref_params, ref_sample, rng):
        with pytest.raises(DomainError):
            stopsolve.first_passage_laplace_check(
                ref_model, ref_params, 0.5 * ref_params.c, 10, rng, ref_sample
            )

    def test_reference_agreement(self, ref_model, ref_params, ref_sample):
        rng = substream(21, "laplace")
        chk = stopsolve.first_passage_laplace_check(
            ref_model, ref_params, 2.0 * ref_params.c, 20_000, rng, ref_sample
        )
        assert abs(chk.mc.value - chk.analytic) <= 3.0 * chk.combined_se

    def test_general_discount(self, ref_model, ref_params):
        # The identity holds for any discount once the sample carries the
        # matching tilt.
        lam = 1.0
        kap = levy.kappa_root(ref_model, ref_params.theta, lam)
        sample = expfun.draw_shared_sample(
            ref_model, ref_params, 20_000, seed=5, kappa=kap
        )
        chk = stopsolve.first_passage_laplace_check(
            ref_model, ref_params, 2.0 * ref_params.c, 10_000,
            substream(22, "laplace-gen"), sample, lam=lam,
        )
        assert abs(chk.mc.value - chk.analytic) <= 3.0 * chk.combined_se

    def test_tilt_mismatch_rejected(self, ref_model, ref_params, ref_sample, rng):
        with pytest.raises(DomainError):
            stopsolve.first_passage_laplace_check(
                ref_model, ref_params, 2.0 * ref_params.c, 10, rng, ref_sample, lam=1.0
            )


class TestPathAverages:
    def test_degenerate_martingale_exact(self, rng):
        model, params, sample = make_degen(c=1.0)
        chk = stopsolve.martingale_check(model, params, sample, 1.0, (0.0, 0.5, 1.0), 5, rng)
        for est in chk.estimates:
            assert est.value == pytest.approx(chk.reference, rel=1e-9)
            assert est.std_error == pytest.approx(0.0, abs=1e-12)

    def test_time_zero_is_reference(self, ref_model, ref_params, ref_sample, ref_solved, rng):
        chk = stopsolve.martingale_check(
            ref_model, ref_params, ref_sample, ref_solved.b_star, (0.0,), 50, rng
        )
        assert chk.estimates[0].value == pytest.approx(chk.reference, rel=1e-7)

    def test_reference_constancy(self, ref_model, ref_params, ref_sample, ref_solved):
        chk = stopsolve.martingale_check(
            ref_model, ref_params, ref_sample, ref_solved.b_star, (0.5, 1.0, 2.0),
            20_000, substream(23, "mart"),
        )
        for est in chk.estimates:
            tol = 3.0 * math.hypot(est.std_error, chk.reference_se)
            assert abs(est.value - chk.reference) <= tol

    def test_supermartingale_decreasing(self, ref_model, ref_params, ref_sample, ref_solved):
        chk = stopsolve.supermartingale_check(
            ref_model, ref_params, ref_sample, ref_solved.b_star, (0.0, 0.5, 1.0, 2.0),
            10_000, substream(24, "sup"),
        )
        assert chk.estimates[0].value == pytest.approx(chk.reference, rel=1e-7)
        for est in chk.estimates:
            assert est.value <= chk.reference + 3.0 * math.hypot(est.std_error, chk.reference_se)
        for dec in chk.decrements:
            assert dec.value >= -3.0 * dec.std_error

    def test_stopping_region_start_strictly_decreases(
        self, ref_model, ref_params, ref_sample, ref_solved
    ):
        # Starting above the threshold, the generator is strictly negative, so
        # the discounted optimal value drops below its start almost at once.
        model = ref_model
        params = levy.make_params(model, gamma=1.0, theta=1.0, q=1.0, c=2.0 * ref_solved.b_star)
        chk = stopsolve.supermartingale_check(
            model, params, ref_sample, ref_solved.b_star, (0.25,),
            4_000, substream(25, "sup-stop"),
        )
        est = chk.estimates[0]
        assert est.value < chk.reference - 3.0 * est.std_error

    def test_degenerate_supermartingale_profile(self):
        # Constant until the deterministic passage at ln(2/1.25) ~ 0.47, then
        # strictly decreasing.
        model, params, sample = make_degen(c=0.25)
        chk = stopsolve.supermartingale_check(
            model, params, sample, 1.0, (0.1, 0.3, 1.0, 2.0), 3,
            np.random.default_rng(0),
        )
        vals = [e.value for e in chk.estimates]
        assert vals[0] == pytest.approx(chk.reference, rel=1e-9)
        assert vals[1] == pytest.approx(chk.reference, rel=1e-9)
        assert vals[2] < vals[1]
        assert vals[3] < vals[2]


class TestThresholdSweep:
    def test_degenerate_matches_closed_form(self, rng):
        model, params, sample = make_degen(c=0.25)
        grid = np.linspace(0.5, 2.0, 7)
        sweep = stopsolve.threshold_payoff_sweep(model, params, grid, 10, rng)
        expected = grid * ((params.c + 1.0) / (grid + 1.0)) ** 2
        assert np.allclose(sweep.mean_payoffs, expected, rtol=1e-12)
        # running-sum variance leaves cancellation dust at the 1e-9 level
        assert np.allclose(sweep.std_errors, 0.0, atol=1e-8)

    def test_reference_peak_near_threshold(self, ref_model, ref_params, ref_solved):
        b = ref_solved.b_star
        grid = np.linspace(0.5 * b, 2.0 * b, 25)
        sweep = stopsolve.threshold_payoff_sweep(
            ref_model, ref_params, grid, 30_000, substream(26, "sweep")
        )
        step = grid[1] - grid[0]
        assert abs(sweep.argmax - b) <= step + 1e-12
