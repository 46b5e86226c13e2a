"""Configuration, command implementations, and result export.

The config file is a flat ``key = value`` text format ('#' starts a
comment).  Unknown keys, missing required keys, and family-inapplicable
keys are hard errors: silent typos in stochastic experiments are costly.

Every output carries a schema string.  Outputs contain no timestamps or
environment echoes, so a rerun with the same config and seed is
byte-identical regardless of worker count.

Exit-code taxonomy (used by the CLI): 0 ok, 2 config error, 3 assumption
violation, 4 verification failure, 5 resource cap hit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

from . import expfun, fragsim, levy, pathsim, stopsolve
from .levy import DislocationModel, ModelParams
from .streams import RngStreamPlan

SCHEMA = "fragstop.v1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_VERIFY = 4
EXIT_RESOURCE = 5


class ConfigError(ValueError):
    """Malformed, unknown, or inconsistent configuration input."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# key -> (parser, default); REQUIRED means no default.
_REQUIRED = object()
_CONFIG_KEYS = {
    "family": (str, _REQUIRED),
    "rate": (float, None),
    "s0": (float, None),
    "shape": (float, None),
    "gamma": (float, _REQUIRED),
    "theta": (float, _REQUIRED),
    "q": (float, _REQUIRED),
    "c": (float, _REQUIRED),
    "allow_q_zero": (_parse_bool, False),
    "samples": (int, 100_000),
    "runs": (int, 10_000),
    "seed": (int, 0),
    "workers": (int, 1),
    "rel_tol": (float, 1e-6),
    "bisect_rel_tol": (float, 1e-6),
    "block_cap": (int, 1_000_000),
    "dust_floor": (float, 1e-12),
    "horizon": (float, 1000.0),
    "fp_horizon": (float, 1e4),
}

_FAMILIES = ("uniform", "point", "beta", "none")


@dataclass(frozen=True)
class RunConfig:
    family: str
    rate: float | None
    s0: float | None
    shape: float | None
    gamma: float
    theta: float
    q: float
    c: float
    allow_q_zero: bool
    samples: int
    runs: int
    seed: int
    workers: int
    rel_tol: float
    bisect_rel_tol: float
    block_cap: int
    dust_floor: float
    horizon: float
    fp_horizon: float

    def model(self) -> DislocationModel:
        if self.family == "none":
            return levy.BinaryUniform(0.0)
        if self.family == "uniform":
            return levy.BinaryUniform(self.rate)
        if self.family == "point":
            return levy.BinaryPoint(self.rate, self.s0)
        return levy.BinaryBeta(self.rate, self.shape)

    def params(self) -> ModelParams:
        return levy.make_params(
            self.model(), gamma=self.gamma, theta=self.theta, q=self.q, c=self.c,
            allow_q_zero=self.allow_q_zero,
        )

    def echo(self) -> dict:
        out = {
            "family": self.family, "gamma": self.gamma, "theta": self.theta,
            "q": self.q, "c": self.c, "samples": self.samples, "runs": self.runs,
            "seed": self.seed, "rel_tol": self.rel_tol,
        }
        if self.family != "none":
            out["rate"] = self.rate
        if self.family == "point":
            out["s0"] = self.s0
        if self.family == "beta":
            out["shape"] = self.shape
        return out


def parse_config_text(text: str) -> RunConfig:
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        parser, _ = _CONFIG_KEYS[key]
        try:
            raw[key] = parser(value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc

    missing = [k for k, (_, d) in _CONFIG_KEYS.items() if d is _REQUIRED and k not in raw]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    for key, (_, default) in _CONFIG_KEYS.items():
        raw.setdefault(key, default)

    family = raw["family"]
    if family not in _FAMILIES:
        raise ConfigError(f"family must be one of {_FAMILIES}, got {family!r}")
    if family == "none":
        if raw["rate"] not in (None, 0.0):
            raise ConfigError("family = none admits no rate (or rate = 0)")
        raw["rate"] = 0.0
    elif raw["rate"] is None:
        raise ConfigError(f"family = {family} requires a rate")
    if family == "point" and raw["s0"] is None:
        raise ConfigError("family = point requires s0")
    if family == "beta" and raw["shape"] is None:
        raise ConfigError("family = beta requires shape")
    if family != "point" and raw["s0"] is not None:
        raise ConfigError("s0 is only valid for family = point")
    if family != "beta" and raw["shape"] is not None:
        raise ConfigError("shape is only valid for family = beta")
    return RunConfig(**raw)


def parse_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    fields = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **fields) if fields else cfg


# --- serialization ----------------------------------------------------------------

def dumps_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def format_csv(kind: str, header: list[str], rows: list[tuple]) -> str:
    lines = [f"# schema: {SCHEMA}.{kind}", ",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(x)) if isinstance(x, float) else str(x) for x in row))
    return "\n".join(lines) + "\n"


def write_path_csv(states: list[pathsim.ZState]) -> str:
    """CSV of one premium-process path at its event boundaries."""
    rows = [(s.t, s.y, s.z, s.accrued) for s in states]
    return format_csv("path", ["t", "Y", "Z", "accrued"], rows)


# --- commands ----------------------------------------------------------------------

def _shared_sample(cfg: RunConfig, model, params) -> expfun.SharedSample:
    return expfun.draw_shared_sample(
        model, params, cfg.samples, seed=cfg.seed, rel_tol=cfg.rel_tol
    )


def cmd_solve(cfg: RunConfig) -> dict:
    model = cfg.model()
    params = cfg.params()
    sample = _shared_sample(cfg, model, params)
    result = stopsolve.solve_b_star(
        model, params, sample, rel_tol_b=cfg.bisect_rel_tol
    )
    return {"schema": SCHEMA, "command": "solve", "config": cfg.echo(), **result.to_dict()}


def _check(name: str, value: float, tolerance: float, *, target: float = 0.0,
           one_sided: bool = False, **details) -> dict:
    gap = value - target
    ok = gap <= tolerance if one_sided else abs(gap) <= tolerance
    return {
        "name": name, "estimate": value, "target": target,
        "tolerance": tolerance, "pass": bool(ok), **details,
    }


def cmd_verify(cfg: RunConfig, corrupt_bstar: float = 1.0) -> tuple[dict, bool]:
    """Run every statistical identity check; pass/fail at three standard errors.

    corrupt_bstar is a test hook that scales the solved threshold before the
    threshold-dependent checks run (a negative control: a wrong threshold
    must fail pasting and dominance).
    """
    model = cfg.model()
    params = cfg.params()
    plan = RngStreamPlan(cfg.seed)
    sample = _shared_sample(cfg, model, params)
    solved = stopsolve.solve_b_star(model, params, sample,
                                    rel_tol_b=cfg.bisect_rel_tol, diagnostics=False)
    b_star = solved.b_star * corrupt_bstar
    floor = 1e-9
    checks = []

    for i, b_mult in enumerate((1.5, 2.0)):
        b = b_mult * params.c
        lap = stopsolve.first_passage_laplace_check(
            model, params, b, cfg.runs, plan.stream("verify-laplace", i), sample,
            horizon=cfg.fp_horizon,
        )
        checks.append(_check(
            f"laplace_transform_b={b_mult}c", lap.mc.value,
            3.0 * lap.combined_se + floor, target=lap.analytic,
            std_error=lap.combined_se,
        ))

    times = (0.5, 1.0, 2.0)
    mart = stopsolve.martingale_check(model, params, sample, b_star, times,
                                      cfg.runs, plan.stream("verify-mart"))
    for t, est in zip(mart.times, mart.estimates):
        se = math.hypot(est.std_error, mart.reference_se)
        checks.append(_check(
            f"martingale_t={t}", est.value, 3.0 * se + floor,
            target=mart.reference, std_error=se,
        ))
    sup = stopsolve.supermartingale_check(model, params, sample, b_star, times,
                                          cfg.runs, plan.stream("verify-supermart"))
    for t, est in zip(sup.times, sup.estimates):
        se = math.hypot(est.std_error, sup.reference_se)
        checks.append(_check(
            f"supermartingale_level_t={t}", est.value,
            3.0 * se + floor, target=sup.reference, one_sided=True,
            std_error=se,
        ))
    for k, dec in enumerate(sup.decrements):
        checks.append(_check(
            f"supermartingale_decrement_{k}", -dec.value,
            3.0 * dec.std_error + floor, one_sided=True, std_error=dec.std_error,
        ))

    gaps = stopsolve.pasting_check(params, sample, b_star)
    checks.append(_check("pasting_value_gap", gaps.value_gap, 1e-6 * b_star + floor))
    checks.append(_check("pasting_slope_gap", gaps.slope_gap, 0.02))

    for x, kind, one_sided in ((0.5 * b_star, "tilde", False), (2.0 * b_star, "star", True)):
        res = stopsolve.generator_residual_estimate(model, params, sample, b_star, x, kind=kind)
        checks.append(_check(
            f"generator_residual_{kind}_x={x:.6g}", res.value,
            3.0 * res.std_error + 1e-6 * (1.0 + x), one_sided=one_sided,
            std_error=res.std_error,
        ))

    n_mom = 1 if params.kappa / params.gamma < 2.0 else 2
    for n in range(1, n_mom + 1):
        mc = expfun.estimate_moment(sample, 0.0, float(n))
        checks.append(_check(
            f"moment_oracle_n={n}", mc.value, 3.0 * mc.std_error + floor,
            target=expfun.moment_recursion(model, params, n),
            std_error=mc.std_error,
        ))

    sweep = stopsolve.threshold_payoff_sweep(
        model, params, [0.8 * b_star, b_star, 1.25 * b_star], cfg.runs,
        plan.stream("verify-sweep"), horizon=cfg.fp_horizon, keep_matrix=True,
    )
    center = sweep.discounts[:, 1] * sweep.thresholds[1]
    for j, tag in ((0, "low"), (2, "high")):
        diff = center - sweep.discounts[:, j] * sweep.thresholds[j]
        se = float(diff.std(ddof=1) / math.sqrt(diff.size))
        # pass requires the paired payoff margin to clear 3 standard errors
        checks.append(_check(
            f"threshold_dominance_{tag}", -float(diff.mean()), -3.0 * se,
            one_sided=True, std_error=se, margin=float(diff.mean()),
        ))

    if not levy.is_degenerate(model):
        for f_id in ("identity", "square"):
            res = fragsim.many_to_one_fixed_time(
                model, params, f_id, 1.0, cfg.runs, plan.stream(f"verify-m21-{f_id}")
            )
            checks.append(_check(
                f"many_to_one_fixed_{f_id}", res.lhs.value,
                3.0 * res.combined_se + floor, target=res.rhs.value,
                std_error=res.combined_se,
            ))
        res = fragsim.many_to_one_stopping_line(model, params, 0.1, cfg.runs, cfg.seed)
        checks.append(_check(
            "many_to_one_line_mass=0.1", res.lhs.value,
            3.0 * res.combined_se + floor, target=res.rhs.value,
            std_error=res.combined_se,
        ))

    ok = all(c["pass"] for c in checks)
    payload = {
        "schema": SCHEMA, "command": "verify", "config": cfg.echo(),
        "b_star": b_star, "corrupt_bstar": corrupt_bstar,
        "checks": checks, "all_pass": ok,
    }
    return payload, ok


_SWEEP_AXES = ("q", "c", "gamma", "theta", "rate")


def cmd_sweep(cfg: RunConfig, axis: str, grid: list[float]) -> tuple[str, dict]:
    """Solve across a parameter grid; returns (csv_text, summary)."""
    if axis not in _SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {_SWEEP_AXES}, got {axis!r}")
    rows = []
    shared = None
    for value in grid:
        point = with_overrides(cfg, **{axis: value})
        model = point.model()
        params = point.params()
        # Along a c-sweep the tilt is unchanged, so one sample serves every
        # grid point; other axes change the tilt and need fresh draws.
        if axis == "c" and shared is not None:
            sample = shared
        else:
            sample = _shared_sample(point, model, params)
            shared = sample
        res = stopsolve.solve_b_star(model, params, sample,
                                     rel_tol_b=point.bisect_rel_tol, diagnostics=False)
        rows.append((value, res.b_star, res.value_at_c))
    csv_text = format_csv("sweep", ["grid_point", "b_star", "value_at_c"], rows)
    bs = [r[1] for r in rows]
    tol = cfg.bisect_rel_tol * (max(bs) if bs else 1.0)
    summary = {
        "schema": SCHEMA, "command": "sweep", "axis": axis, "grid": list(grid),
        "b_star": bs,
        "b_star_nonincreasing": all(b1 >= b2 - tol for b1, b2 in zip(bs, bs[1:])),
        "b_star_nondecreasing": all(b1 <= b2 + tol for b1, b2 in zip(bs, bs[1:])),
    }
    return csv_text, summary


def parse_line_spec(spec: str, literal: bool = False):
    """Parse 'fixed:T' | 'mass:A' | 'optimal[:B]' into a stopping line.

    'optimal' without an explicit threshold returns None for the threshold;
    the caller solves for it first.
    """
    kind, _, arg = spec.partition(":")
    try:
        if kind == "fixed":
            return fragsim.FixedTime(float(arg))
        if kind == "mass":
            return fragsim.MassBelow(float(arg))
        if kind == "optimal":
            return fragsim.OptimalStatistic(float(arg), literal=literal) if arg else None
    except ValueError as exc:
        raise ConfigError(f"bad line spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown line spec {spec!r} (use fixed:T, mass:A, optimal[:B])")


def cmd_simulate(cfg: RunConfig, line_spec: str, literal: bool = False) -> tuple[str, dict]:
    """Run a stopping-line ensemble; returns (blocks_csv, summary_json)."""
    model = cfg.model()
    params = cfg.params()
    line = parse_line_spec(line_spec, literal)
    solved_b = None
    if line is None:
        sample = _shared_sample(cfg, model, params)
        solved_b = stopsolve.solve_b_star(
            model, params, sample, rel_tol_b=cfg.bisect_rel_tol, diagnostics=False
        ).b_star
        line = fragsim.OptimalStatistic(solved_b, literal=literal)
    result = fragsim.ensemble_payoffs(
        model, params, line, cfg.runs, cfg.seed,
        dust_floor=cfg.dust_floor, horizon=cfg.horizon, block_cap=cfg.block_cap,
        collect_blocks=True, workers=cfg.workers,
    )
    est = result.estimate
    csv_text = format_csv(
        "blocks",
        ["run", "mass", "accrued", "freeze_time", "payoff_contribution"],
        result.block_rows,
    )
    line_desc = {"kind": type(line).__name__}
    if isinstance(line, fragsim.FixedTime):
        line_desc["t"] = line.t
    elif isinstance(line, fragsim.MassBelow):
        line_desc["a"] = line.a
    else:
        line_desc.update({"b": line.b, "literal": line.literal})
    summary = {
        "schema": SCHEMA, "command": "simulate", "config": cfg.echo(),
        "line": line_desc, "n_runs": cfg.runs,
        "mean_payoff": est.value, "std_error": est.std_error,
        "dust_frozen": result.dust_frozen, "partial": result.partial,
    }
    if solved_b is not None:
        summary["b_star"] = solved_b
    return csv_text, summary
