"""Threshold solver for the premium process and its verification checks.

The optimal strategy stops the premium process Z at first passage over a
threshold b*.  b* solves f(b) = kappa/gamma, where f is the moment ratio
computed on a shared sample of lifetime integrals; because the sample is
shared, f is strictly decreasing samplewise and bisection is exact up to
its own tolerance.  The module also carries the statistical verification
operations: the first-passage Laplace identity, constancy of the discounted
value along paths, the supermartingale inequality, continuous and smooth
pasting at b*, the integro-differential generator equation, and a
brute-force threshold sweep.

Every check reports an estimate with a standard error; acceptance is at
three standard errors plus a tiny floating-point floor, never a bare
boolean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate, special

from . import expfun, levy, pathsim
from .expfun import MomentEstimate, SharedSample
from .levy import AssumptionError, DislocationModel, DomainError, ModelParams


class DivergenceError(RuntimeError):
    """Bracketing for the threshold equation failed to straddle the target."""


@dataclass(frozen=True)
class SolverResult:
    """Solved threshold with the diagnostics needed to audit it."""

    b_star: float
    kappa: float
    value_at_c: float
    f_at_b_star: float
    sample_meta: dict
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "b_star": self.b_star,
            "kappa": self.kappa,
            "value_at_c": self.value_at_c,
            "f_at_b_star": self.f_at_b_star,
            "sample_meta": self.sample_meta,
            "diagnostics": self.diagnostics,
        }


# --- value functions ----------------------------------------------------------

def value_tilde(params: ModelParams, sample: SharedSample, b_star: float, c_query):
    """Candidate value b* E[(c+I)^p] / E[(b*+I)^p] on the shared sample.

    Convex and continuously differentiable in c_query; accepts scalars or
    arrays.  Defined for every c_query > 0, also above b*.
    """
    p = params.kappa / params.gamma
    denom = float(np.mean((b_star + sample.draws) ** p))
    out = b_star * _power_mean_many(sample.draws, c_query, p) / denom
    return float(out[0]) if np.ndim(c_query) == 0 else out


def value_star(params: ModelParams, sample: SharedSample, b_star: float, c_query):
    """Optimal value: the candidate below b*, the stopped payoff c above."""
    z = np.atleast_1d(np.asarray(c_query, dtype=float))
    tilde = value_tilde(params, sample, b_star, z)
    out = np.where(z > b_star, z, tilde)
    return float(out[0]) if np.ndim(c_query) == 0 else out


def _power_mean_many(draws: np.ndarray, z, p: float, budget: int = 8_000_000) -> np.ndarray:
    """mean((z_i + I)^p) for each z_i, chunked to bound peak memory."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty(z.shape)
    step = max(1, budget // max(draws.size, 1))
    for start in range(0, z.size, step):
        block = z[start : start + step]
        out[start : start + step] = np.mean(
            (block[:, None] + draws[None, :]) ** p, axis=1
        )
    return out


class TildeCurve:
    """Fast evaluator of the candidate value on a z-interval.

    Precomputes the exact shared-sample values on a log-spaced grid and
    interpolates monotonically (PCHIP); interpolation error is far below
    the Monte Carlo errors it feeds into.  Used by the path-average checks,
    where evaluating the full sample at every path point would be wasteful.
    """

    def __init__(
        self,
        params: ModelParams,
        sample: SharedSample,
        b_star: float,
        z_min: float,
        z_max: float,
        n_grid: int = 800,
    ):
        lo = max(z_min, 1e-12) * 0.9
        hi = max(z_max, b_star, params.c) * 1.1
        grid = np.geomspace(lo, hi, n_grid)
        vals = value_tilde(params, sample, b_star, grid)
        self.b_star = b_star
        self._lo, self._hi = lo, hi
        self._interp = interpolate.PchipInterpolator(np.log(grid), vals)

    def tilde(self, z):
        return self._interp(np.log(np.clip(z, self._lo, self._hi)))

    def star(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(z > self.b_star, z, self.tilde(z))


# --- solving ------------------------------------------------------------------

def solve_b_star(
    model: DislocationModel,
    params: ModelParams,
    sample: SharedSample,
    *,
    rel_tol_b: float = 1e-6,
    max_doublings: int = 60,
    diagnostics: bool = True,
) -> SolverResult:
    """Solve f(b) = kappa/gamma by bisection on the samplewise-monotone f.

    The bracket is found by doubling/halving from c.  Requires
    kappa/gamma > 1, which holds whenever q > 0.
    """
    p = params.kappa / params.gamma
    if not p > 1.0:
        raise AssumptionError(
            f"kappa/gamma = {p} <= 1: the threshold equation has no root "
            "(q = 0 with a trivial family is outside the solvable regime)"
        )

    def g(b: float) -> float:
        return expfun.f_of_b(sample, params, b) - p

    lo = hi = params.c
    g0 = g(params.c)
    if g0 > 0.0:
        hi = 2.0 * params.c
        for _ in range(max_doublings):
            if g(hi) <= 0.0:
                break
            lo, hi = hi, 2.0 * hi
        else:
            raise DivergenceError(f"no upper bracket for f(b) = {p} within {max_doublings} doublings")
    elif g0 < 0.0:
        lo = 0.5 * params.c
        for _ in range(max_doublings):
            if g(lo) >= 0.0:
                break
            lo, hi = 0.5 * lo, lo
        else:
            raise DivergenceError(f"no lower bracket for f(b) = {p} within {max_doublings} halvings")
    while hi - lo > rel_tol_b * hi:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    b_star = 0.5 * (lo + hi)

    diag: dict = {}
    if diagnostics:
        gaps = pasting_check(params, sample, b_star)
        diag["pasting"] = {"value_gap": gaps.value_gap, "slope_gap": gaps.slope_gap}
        grid = [0.2 * b_star, 0.5 * b_star, 0.9 * b_star]
        tilde_fn = lambda x: value_tilde(params, sample, b_star, x)
        star_fn = lambda x: value_star(params, sample, b_star, x)
        diag["generator_residual"] = {
            "continuation": {f"{x:.6g}": generator_residual(model, params, tilde_fn, x) for x in grid},
            "stopping": {f"{2 * b_star:.6g}": generator_residual(model, params, star_fn, 2.0 * b_star)},
        }
    return SolverResult(
        b_star=b_star,
        kappa=params.kappa,
        value_at_c=value_star(params, sample, b_star, params.c),
        f_at_b_star=expfun.f_of_b(sample, params, b_star),
        sample_meta=sample.meta(),
        diagnostics=diag,
    )


# --- pasting ------------------------------------------------------------------

@dataclass(frozen=True)
class PastingGaps:
    value_gap: float   # tilde(b*) - b*
    slope_gap: float   # central-difference tilde'(b*) - 1


def pasting_check(
    params: ModelParams, sample: SharedSample, b_star: float, fd_step_rel: float = 1e-4
) -> PastingGaps:
    """Continuous and smooth pasting gaps of the candidate value at b*."""
    h = fd_step_rel * b_star
    v = value_tilde(params, sample, b_star, np.array([b_star - h, b_star, b_star + h]))
    return PastingGaps(
        value_gap=float(v[1] - b_star),
        slope_gap=float((v[2] - v[0]) / (2.0 * h) - 1.0),
    )


# --- generator ----------------------------------------------------------------

def _jump_term(model: DislocationModel, params: ModelParams, value_fn, x: float, fx: float,
               quad_tol: float = 1e-9) -> float:
    """integral of (f(e^{-gamma y} x) - f(x)) against the lineage jump measure.

    The jump measure is the push-forward of the split law through the two
    branches y = -log(s) and y = -log(1-s) with size-biased weights, so the
    integral reduces to a one-dimensional integral over s in [1/2, 1)
    (a two-term sum for point families).
    """
    gamma = params.gamma
    if levy.is_degenerate(model):
        return 0.0
    if isinstance(model, levy.BinaryPoint):
        s, t = model.s0, 1.0 - model.s0
        val = s * (value_fn(s**gamma * x) - fx)
        if t > 0.0:
            val += t * (value_fn(t**gamma * x) - fx)
        return model.rate * val

    def branches(s: float) -> float:
        t = 1.0 - s
        return s * (value_fn(s**gamma * x) - fx) + t * (value_fn(t**gamma * x) - fx)

    if isinstance(model, levy.BinaryUniform):
        val, _ = integrate.quad(lambda s: 2.0 * branches(s), 0.5, 1.0,
                                epsabs=quad_tol, epsrel=1e-8, limit=100)
        return model.rate * val
    # Beta family: pull the (1-s)^(shape-1) endpoint singularity into the
    # quadrature weight so adaptive refinement sees a smooth integrand.
    a = model.shape
    log_norm = math.log(2.0) - float(special.betaln(a, a))
    val, _ = integrate.quad(
        lambda s: math.exp(log_norm + (a - 1.0) * math.log(s)) * branches(s),
        0.5, 1.0, weight="alg", wvar=(0.0, a - 1.0),
        epsabs=quad_tol, epsrel=1e-8, limit=100,
    )
    return model.rate * val


def generator_residual(
    model: DislocationModel,
    params: ModelParams,
    value_fn,
    x: float,
    *,
    fd_step_rel: float = 1e-4,
    quad_tol: float = 1e-9,
) -> float:
    """(L - lam) value_fn at x, with L the integro-differential generator.

    L f(x) = (1 + gamma*theta*x) f'(x) + jump term; the derivative uses a
    central difference with step 1e-4 * x.  For the candidate value the
    residual is zero in expectation at every x > 0; for the optimal value it
    is nonpositive above b*.
    """
    if x <= 0.0:
        raise DomainError(f"x must be > 0, got {x}")
    h = fd_step_rel * x
    fx = float(value_fn(x))
    deriv = (float(value_fn(x + h)) - float(value_fn(x - h))) / (2.0 * h)
    jump = _jump_term(model, params, value_fn, x, fx, quad_tol=quad_tol)
    return (1.0 + params.gt * x) * deriv + jump - params.lam * fx


def generator_residual_estimate(
    model: DislocationModel,
    params: ModelParams,
    sample: SharedSample,
    b_star: float,
    x: float,
    *,
    kind: str = "tilde",
    n_batches: int = 20,
) -> MomentEstimate:
    """Generator residual with a batch-means standard error.

    The shared sample is split into interleaved batches; the residual is
    recomputed on each batch's sub-sample (b* held fixed) and the spread of
    the batch values propagates every Monte Carlo source through the
    derivative, the quadrature and the normalization at once.
    """
    vals = []
    for k in range(n_batches):
        sub = SharedSample(
            draws=sample.draws[k::n_batches], gamma=sample.gamma, theta=sample.theta,
            kappa=sample.kappa, lam=sample.lam, rel_tol=sample.rel_tol, seed=sample.seed,
        )
        if kind == "tilde":
            fn = lambda z: value_tilde(params, sub, b_star, z)
        elif kind == "star":
            fn = lambda z: value_star(params, sub, b_star, z)
        else:
            raise ValueError(f"unknown kind {kind!r}")
        vals.append(generator_residual(model, params, fn, x))
    arr = np.asarray(vals)
    return MomentEstimate(
        value=float(arr.mean()),
        std_error=float(arr.std(ddof=1) / math.sqrt(n_batches)),
        n_samples=n_batches,
    )


# --- first-passage Laplace identity --------------------------------------------

@dataclass(frozen=True)
class LaplaceCheck:
    """Two independent estimates of E[exp(-lam * tau_b)]."""

    b: float
    lam: float
    mc: MomentEstimate
    analytic: float
    analytic_se: float
    horizon_misses: int

    @property
    def combined_se(self) -> float:
        return math.sqrt(self.mc.std_error**2 + self.analytic_se**2)


def first_passage_laplace_check(
    model: DislocationModel,
    params: ModelParams,
    b: float,
    n_paths: int,
    rng: np.random.Generator,
    sample: SharedSample,
    lam: float | None = None,
    horizon: float = 1e4,
) -> LaplaceCheck:
    """Compare path-simulated E[e^{-lam tau_b}] with the tilted moment ratio.

    Any lam > 0 is accepted provided the sample was drawn under the matching
    tilt kappa(lam) and kappa(lam) > gamma.
    """
    if b < params.c:
        raise DomainError(f"b = {b} must be >= c = {params.c}")
    lam_eff = params.lam if lam is None else lam
    kap = params.kappa if lam is None else levy.kappa_root(model, params.theta, lam_eff)
    if abs(sample.kappa - kap) > 1e-9 * max(1.0, kap):
        raise DomainError(
            f"sample tilt kappa = {sample.kappa} does not match kappa(lam) = {kap}"
        )
    if not kap > params.gamma:
        raise AssumptionError(f"identity requires kappa(lam) = {kap} > gamma = {params.gamma}")

    vals = np.empty(n_paths)
    misses = 0
    for i in range(n_paths):
        tau, hit = pathsim.simulate_Z_first_passage(model, params, b, rng, horizon=horizon)
        vals[i] = math.exp(-lam_eff * tau)
        misses += not hit
    mc = MomentEstimate(
        value=float(vals.mean()),
        std_error=float(vals.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0,
        n_samples=n_paths,
    )
    p = kap / params.gamma
    analytic, analytic_se = expfun.ratio_of_power_means(sample, params.c, b, p)
    return LaplaceCheck(b=b, lam=lam_eff, mc=mc, analytic=analytic,
                        analytic_se=analytic_se, horizon_misses=misses)


# --- path-average checks --------------------------------------------------------

@dataclass(frozen=True)
class DiscountedValueCheck:
    """Means of e^{-lam t} V(Z_t) on a time grid, with paired decrements."""

    times: tuple
    estimates: tuple          # MomentEstimate per time
    reference: float          # the t = 0 value the means are compared against
    reference_se: float       # shared-sample error of the reference itself
    decrements: tuple         # MomentEstimate of X_{t_k} - X_{t_{k+1}}, paired


def _discounted_value_matrix(
    model: DislocationModel,
    params: ModelParams,
    times: np.ndarray,
    n_paths: int,
    rng: np.random.Generator,
) -> np.ndarray:
    z = np.empty((n_paths, times.size))
    for i in range(n_paths):
        z[i] = pathsim.simulate_Z_at_times(model, params, times, rng)
    return z


def _check_from_matrix(times, vals) -> tuple:
    ests = []
    n = vals.shape[0]
    for k in range(times.size):
        col = vals[:, k]
        ests.append(MomentEstimate(float(col.mean()),
                                   float(col.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                                   n))
    decs = []
    for k in range(times.size - 1):
        d = vals[:, k] - vals[:, k + 1]
        decs.append(MomentEstimate(float(d.mean()),
                                   float(d.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
                                   n))
    return tuple(ests), tuple(decs)


def martingale_check(
    model: DislocationModel,
    params: ModelParams,
    sample: SharedSample,
    b_star: float,
    times,
    n_paths: int,
    rng: np.random.Generator,
) -> DiscountedValueCheck:
    """Means of e^{-lam t} tilde(Z_t); each should equal tilde(c)."""
    times = np.asarray(sorted(times), dtype=float)
    z = _discounted_value_matrix(model, params, times, n_paths, rng)
    curve = TildeCurve(params, sample, b_star, float(z.min()), float(z.max()))
    vals = np.exp(-params.lam * times)[None, :] * curve.tilde(z)
    ests, decs = _check_from_matrix(times, vals)
    p = params.kappa / params.gamma
    _, ref_se = expfun.ratio_of_power_means(sample, params.c, b_star, p)
    return DiscountedValueCheck(tuple(times), ests,
                                reference=value_tilde(params, sample, b_star, params.c),
                                reference_se=b_star * ref_se,
                                decrements=decs)


def supermartingale_check(
    model: DislocationModel,
    params: ModelParams,
    sample: SharedSample,
    b_star: float,
    times,
    n_paths: int,
    rng: np.random.Generator,
) -> DiscountedValueCheck:
    """Means of e^{-lam t} V*(Z_t); nonincreasing in t, each <= V*(c)."""
    times = np.asarray(sorted(times), dtype=float)
    z = _discounted_value_matrix(model, params, times, n_paths, rng)
    curve = TildeCurve(params, sample, b_star, float(z.min()), float(z.max()))
    vals = np.exp(-params.lam * times)[None, :] * curve.star(z)
    ests, decs = _check_from_matrix(times, vals)
    if params.c > b_star:
        ref, ref_se = params.c, 0.0
    else:
        p = params.kappa / params.gamma
        _, se = expfun.ratio_of_power_means(sample, params.c, b_star, p)
        ref, ref_se = value_star(params, sample, b_star, params.c), b_star * se
    return DiscountedValueCheck(tuple(times), ests,
                                reference=ref, reference_se=ref_se,
                                decrements=decs)


# --- brute-force threshold sweep -------------------------------------------------

@dataclass(frozen=True)
class ThresholdSweep:
    thresholds: np.ndarray
    mean_payoffs: np.ndarray
    std_errors: np.ndarray
    discounts: np.ndarray | None  # per-path discount matrix when retained

    @property
    def argmax(self) -> float:
        return float(self.thresholds[int(np.argmax(self.mean_payoffs))])


def threshold_payoff_sweep(
    model: DislocationModel,
    params: ModelParams,
    thresholds,
    n_paths: int,
    rng: np.random.Generator,
    *,
    horizon: float = 1e4,
    keep_matrix: bool = False,
) -> ThresholdSweep:
    """Monte Carlo value b * E[e^{-lam tau_b}] of every threshold strategy.

    One path realization serves every threshold (common random numbers), so
    neighboring grid points are directly comparable; the mean payoff curve
    peaks within sampling error at the optimal threshold.
    """
    bs = np.asarray(sorted(thresholds), dtype=float)
    if keep_matrix:
        disc = np.empty((n_paths, bs.size))
        for i in range(n_paths):
            disc[i] = pathsim.first_passage_payoff_sums(model, params, bs, params.lam, rng, horizon)
        mean_d = disc.mean(axis=0)
        se_d = disc.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.zeros(bs.size)
        return ThresholdSweep(bs, bs * mean_d, bs * se_d, disc)
    acc = np.zeros(bs.size)
    acc2 = np.zeros(bs.size)
    for _ in range(n_paths):
        d = pathsim.first_passage_payoff_sums(model, params, bs, params.lam, rng, horizon)
        acc += d
        acc2 += d * d
    mean_d = acc / n_paths
    var_d = np.maximum(acc2 / n_paths - mean_d**2, 0.0) * n_paths / max(n_paths - 1, 1)
    se_d = np.sqrt(var_d / n_paths)
    return ThresholdSweep(bs, bs * mean_d, bs * se_d, None)
