"""Config-driven experiments: resolution, validation, the experiment registry and artifact IO.

A config is a flat JSON object.  Missing keys are filled from the per-experiment
block of ``defaults.json``; every pass/fail threshold comes from its
``tolerances`` block (overridable per config).  Each N of a sweep draws its
replica seeds from ``ReplicaPlan(master_seed, replicas).child(N)``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .combinatorics import (
    atypical_tail_ratio,
    cw_lower_bound_constant,
    de_moivre_laplace_ratio,
    nu_count,
    nu_triple,
    z_cw_lower_bound_margin,
)
from .glauber import (
    occupation_law,
    run_chain,
    run_replicas,
    single_site_kernels,
    transition_matrix,
    write_samples_csv,
    ChainConfig,
)
from .graphs import GraphSample, ReplicaPlan, sample_graph
from .limits import clt_covariance, clt_limit, lln_limit
from .metrics import (
    GaussianCDF,
    StepCDF,
    bl_distance_2d,
    default_family,
    empirical_covariance,
    levy_distance_1d,
)
from .model import (
    CapExceeded,
    ModelParams,
    SpinConfig,
    TwoGroupPartition,
    constant_obs,
    cw_exact_magnetization_law,
    cw_exact_two_group_law,
    enumerate_log_weights,
    enumerate_pushforward,
    magnetization,
    magnetization_indicator_obs,
    magnetization_obs,
    overlap,
    two_group_obs,
)
from .quenched import (
    concentration_experiment,
    exact_first_moment_log,
    exact_second_moment_log,
    exhaustive_moment_logs,
    expected_r,
    r_variance,
    residual_c1,
    rt_values,
)

EXPERIMENTS = (
    "verify-lemma32",
    "verify-counts",
    "tails",
    "rn-concentration",
    "sweep-lln",
    "sweep-clt",
    "levy-sweep",
    "exact-small",
    "bounded-integral",
)
MANIFEST_SCHEMA = 1
SUMMARY_SCHEMA = 1
STANDING_ASSUMPTIONS = "standing assumptions: beta < 1 and N p -> infinity (power schedule exponent gamma < 1)"

_KNOWN_KEYS = {
    "experiment", "n_list", "beta", "p_schedule", "m", "theorem_mode", "alpha1", "alpha2",
    "replicas", "master_seed", "sweeps", "burn_in", "thinning", "delta", "observable",
    "test_function", "tolerances", "options", "out", "threads",
}


class ConfigError(ValueError):
    """Invalid or out-of-regime experiment configuration (CLI exit status 2)."""


# --- defaults ----------------------------------------------------------------------

def git_blob_hash(data: bytes) -> str:
    """SHA-1 of ``blob <len>\\0<data>``, the content hash git assigns to a file."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def defaults_bytes() -> bytes:
    return resources.files("dilute_cw").joinpath("defaults.json").read_bytes()


def load_defaults() -> tuple[dict, str]:
    raw = defaults_bytes()
    return json.loads(raw), git_blob_hash(raw)


# --- p schedules ---------------------------------------------------------------------

@dataclass(frozen=True)
class PSchedule:
    """p(N) = c (kind 'constant') or c * N^-gamma (kind 'power')."""

    kind: str
    c: float
    gamma: float = 0.0

    @classmethod
    def from_spec(cls, spec) -> "PSchedule":
        if not isinstance(spec, dict):
            raise ConfigError("p_schedule must be an object like {\"kind\": \"power\", \"c\": 1, \"gamma\": 0.5}")
        kind = spec.get("kind")
        extra = set(spec) - {"kind", "c", "gamma"}
        if extra:
            raise ConfigError(f"p_schedule: unknown keys {sorted(extra)}")
        if kind == "constant":
            if "gamma" in spec:
                raise ConfigError("p_schedule: a constant schedule takes no gamma")
            return cls("constant", _number(spec.get("c"), "p_schedule.c"))
        if kind == "power":
            gamma = _number(spec.get("gamma"), "p_schedule.gamma")
            if gamma < 0:
                raise ConfigError("p_schedule.gamma must be non-negative")
            return cls("power", _number(spec.get("c", 1.0), "p_schedule.c"), gamma)
        raise ConfigError(f"p_schedule.kind must be 'constant' or 'power', got {kind!r}")

    def __call__(self, n: int) -> float:
        return self.c if self.kind == "constant" else self.c * float(n) ** (-self.gamma)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "c": self.c}
        if self.kind == "power":
            d["gamma"] = self.gamma
        return d


def _number(v, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name} must be a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite")
    return float(v)


def _integer(v, name, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{name} must be >= {lo}, got {v}")
    return v


# --- resolved configuration ----------------------------------------------------------

@dataclass
class ExperimentConfig:
    experiment: str
    n_list: list[int]
    beta: float
    p_schedule: PSchedule
    m: float = 0.2
    theorem_mode: bool = True
    alpha1: float = 0.5
    alpha2: float = 0.5
    replicas: int = 1
    master_seed: int = 0
    sweeps: int = 1000
    burn_in: int | None = None
    thinning: int = 1
    delta: float = 0.25
    observable: str = "one"
    test_function: str = "one"
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    out: str | None = None
    threads: int = 1

    def params(self, n: int, p: float | None = None, beta: float | None = None) -> ModelParams:
        return ModelParams(n, self.beta if beta is None else beta, self.p_schedule(n) if p is None else p,
                           self.m, theorem_mode=self.theorem_mode)

    def plan(self, tag: int) -> ReplicaPlan:
        return ReplicaPlan(self.master_seed, self.replicas).child(tag)

    def tol(self, name: str) -> float:
        if name not in self.tolerances:
            raise ConfigError(f"tolerance {name!r} missing from config and defaults")
        return self.tolerances[name]

    def option(self, name: str):
        if name not in self.options:
            raise ConfigError(f"option {name!r} missing for experiment {self.experiment}")
        return self.options[name]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p_schedule"] = self.p_schedule.to_dict()
        return d


def resolve_config(raw: dict, seed: int | None = None, threads: int | None = None,
                   out: str | None = None) -> ExperimentConfig:
    """Merge ``raw`` over the experiment defaults, validate and apply CLI overrides."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {list(EXPERIMENTS)}, got {exp!r}")
    defaults, _ = load_defaults()
    merged = json.loads(json.dumps(defaults["experiments"].get(exp, {})))
    options = merged.pop("options", {})
    options.update(raw.get("options", {}) or {})
    merged.update({k: v for k, v in raw.items() if k not in ("options", "tolerances")})
    tolerances = dict(defaults["tolerances"])
    extra_tol = raw.get("tolerances", {}) or {}
    if not isinstance(extra_tol, dict):
        raise ConfigError("tolerances must be an object")
    for k, v in extra_tol.items():
        if k not in tolerances:
            raise ConfigError(f"unknown tolerance {k!r}")
        tolerances[k] = _number(v, f"tolerances.{k}")

    n_list = merged.get("n_list")
    if not isinstance(n_list, list) or not n_list:
        raise ConfigError("n_list must be a non-empty list of positive integers")
    n_list = [_integer(n, "n_list entry", 1) for n in n_list]
    beta = _number(merged.get("beta"), "beta")
    if beta < 0:
        raise ConfigError("beta must be non-negative")
    sched = PSchedule.from_spec(merged.get("p_schedule"))
    theorem_mode = merged.get("theorem_mode", True)
    if not isinstance(theorem_mode, bool):
        raise ConfigError("theorem_mode must be true or false")
    if theorem_mode and beta >= 1:
        raise ConfigError(f"theorem mode rejects beta={beta}: {STANDING_ASSUMPTIONS}")
    if theorem_mode and sched.kind == "power" and sched.gamma >= 1:
        raise ConfigError(f"theorem mode rejects gamma={sched.gamma}: {STANDING_ASSUMPTIONS}")
    for n in n_list:
        p = sched(n)
        if not 0 < p <= 1:
            raise ConfigError(f"p_schedule gives p={p} at N={n}; p must lie in (0, 1]")

    master = seed if seed is not None else merged.get("master_seed", 0)
    master = _integer(master, "master_seed", 0)
    if master >= 2**64:
        raise ConfigError("master_seed must fit in 64 bits")
    cfg = ExperimentConfig(
        experiment=exp,
        n_list=n_list,
        beta=beta,
        p_schedule=sched,
        m=_number(merged.get("m", 0.2), "m"),
        theorem_mode=theorem_mode,
        alpha1=_number(merged.get("alpha1", 0.5), "alpha1"),
        alpha2=_number(merged.get("alpha2", 0.5), "alpha2"),
        replicas=_integer(merged.get("replicas", 1), "replicas", 1),
        master_seed=master,
        sweeps=_integer(merged.get("sweeps", 1000), "sweeps", 1),
        burn_in=None if merged.get("burn_in") is None else _integer(merged["burn_in"], "burn_in", 0),
        thinning=_integer(merged.get("thinning", 1), "thinning", 1),
        delta=_number(merged.get("delta", 0.25), "delta"),
        observable=str(merged.get("observable", "one")),
        test_function=str(merged.get("test_function", "one")),
        tolerances=tolerances,
        options=options,
        out=out if out is not None else merged.get("out"),
        threads=_integer(threads if threads is not None else merged.get("threads", 1), "threads", 1),
    )
    if not 0 < cfg.m < 1:
        raise ConfigError("m must lie in (0, 1)")
    if cfg.alpha1 < 0 or cfg.alpha2 < 0 or cfg.alpha1 + cfg.alpha2 > 1 + 1e-12:
        raise ConfigError("need alpha1, alpha2 >= 0 with alpha1 + alpha2 <= 1")
    if cfg.delta <= 0:
        raise ConfigError("delta must be positive")
    return cfg


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return resolve_config(raw, **overrides)


# --- results -------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    threshold: float
    relation: str  # '<', '<=', '>', '>=', '==' or 'holds'
    passed: bool

    @classmethod
    def compare(cls, name, value, relation, threshold) -> "Check":
        value = float(value)
        ok = {"<": value < threshold, "<=": value <= threshold, ">": value > threshold,
              ">=": value >= threshold, "==": value == threshold}[relation]
        return cls(name, value, float(threshold), relation, bool(ok))

    @classmethod
    def holds(cls, name, flag: bool) -> "Check":
        return cls(name, float(bool(flag)), 1.0, "holds", bool(flag))


@dataclass
class ExperimentOutput:
    tables: dict = field(default_factory=dict)  # name -> list of row dicts
    checks: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    writers: list = field(default_factory=list)  # (filename, callable(path))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def strictly_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def non_increasing(values) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


# --- observables and bounded test functions -----------------------------------------

def observable_by_id(name: str):
    """Observables for the R / T functionals: one, zero, magnetization-indicator:<s>."""
    if name == "one":
        return constant_obs(1.0)
    if name == "zero":
        return constant_obs(0.0)
    if name.startswith("magnetization-indicator:"):
        return magnetization_indicator_obs(int(name.split(":", 1)[1]))
    raise ConfigError(f"unknown observable {name!r}")


@dataclass(frozen=True)
class TestFunction:
    """Bounded h applied to Y = s / sqrt(N) (dim 1) or the two-group vector (dim 2)."""

    name: str
    dim: int
    h: object
    gaussian_limit: object  # (mean, cov) -> E h(xi)


def _cos_limit(w):
    return lambda mean, cov: math.cos(w * float(mean[0])) * math.exp(-0.5 * w * w * float(cov[0][0]))


def test_function_by_id(name: str) -> TestFunction:
    """Library: one, cos, cos-half, bump, bl-v1:<k> (two-group member k of the BL family)."""
    if name == "one":
        return TestFunction(name, 1, lambda y: np.ones_like(np.asarray(y, dtype=float)),
                            lambda mean, cov: 1.0)
    if name == "cos":
        return TestFunction(name, 1, np.cos, _cos_limit(1.0))
    if name == "cos-half":
        return TestFunction(name, 1, lambda y: np.cos(0.5 * np.asarray(y)), _cos_limit(0.5))
    if name == "bump":
        return TestFunction(name, 1, lambda y: np.exp(-0.5 * np.asarray(y) ** 2),
                            lambda mean, cov: 1.0 / math.sqrt(1.0 + float(cov[0][0])))
    if name.startswith("bl-v1:"):
        fam = default_family()
        try:
            member = fam.members[int(name.split(":", 1)[1])]
        except (ValueError, IndexError):
            raise ConfigError(f"unknown test function {name!r}") from None
        return TestFunction(name, 2, member, lambda mean, cov: member.gaussian_expectation(mean, cov))
    raise ConfigError(f"unknown test function {name!r}")


# --- experiments -----------------------------------------------------------------------

def exp_verify_lemma32(cfg: ExperimentConfig) -> ExperimentOutput:
    out = ExperimentOutput()
    n0 = int(cfg.option("exact_n"))
    params = ModelParams(n0, cfg.beta, float(cfg.option("exact_p")), cfg.m)
    configs = [SpinConfig(n0, c) for c in range(1 << n0)]
    rows, worst = [], 0.0
    seen = set()
    for c in configs:
        s = magnetization(c)
        if s in seen:
            continue
        seen.add(s)
        closed = exact_first_moment_log(params, s).log_value
        brute = exhaustive_moment_logs(params, [c])
        worst = max(worst, abs(closed - brute))
        rows.append({"moment": "first", "s1": s, "s2": "", "r": "", "closed_form": closed, "exhaustive": brute})
    seen = set()
    for c1, c2 in itertools.product(configs, repeat=2):
        key = (magnetization(c1), magnetization(c2), overlap(c1, c2))
        if key in seen:
            continue
        seen.add(key)
        closed = exact_second_moment_log(params, *key).log_value
        brute = exhaustive_moment_logs(params, [c1, c2])
        worst = max(worst, abs(closed - brute))
        rows.append({"moment": "second", "s1": key[0], "s2": key[1], "r": key[2],
                     "closed_form": closed, "exhaustive": brute})
    out.tables["lemma32_exact"] = rows
    out.checks.append(Check.compare("exact_max_abs_log_error", worst, "<", cfg.tol("quenched_moment_abs_log_error")))

    res_rows = []
    for n in cfg.n_list:
        p = cfg.params(n)
        res_rows.append({"n": n, "p": p.p, "residual_c1": residual_c1(p, 0)})
    out.tables["residual_c1"] = res_rows
    mags = [abs(r["residual_c1"]) for r in res_rows]
    out.checks.append(Check.holds("residual_c1_strictly_decreasing", strictly_decreasing(mags)))
    out.checks.append(Check.compare("residual_c1_final", mags[-1], "<", cfg.tol("residual_c1_final")))
    out.results = {"exact_max_abs_log_error": worst, "residual_c1": res_rows}
    return out


def brute_triple_counts(n: int) -> dict:
    """Count (s, t, u) over all 4^N configuration pairs, one row of pairs at a time."""
    codes = np.arange(1 << n, dtype=np.uint64)
    mags = 2 * np.bitwise_count(codes).astype(np.int64) - n
    width = 2 * n + 1
    out: dict = {}
    for c1 in range(1 << n):
        ov = n - 2 * np.bitwise_count(codes ^ np.uint64(c1)).astype(np.int64)
        keys, cnt = np.unique((mags + n) * width + (ov + n), return_counts=True)
        s = int(mags[c1])
        for key, k in zip(keys.tolist(), cnt.tolist()):
            t, u = divmod(key, width)
            triple = (s, t - n, u - n)
            out[triple] = out.get(triple, 0) + k
    return out


def exp_verify_counts(cfg: ExperimentConfig) -> ExperimentOutput:
    out = ExperimentOutput()
    brute_max = int(cfg.option("brute_max"))
    mismatches = 0
    for n in range(1, brute_max + 1):
        brute = brute_triple_counts(n)
        for s in range(-n, n + 1, 2):
            for t in range(-n, n + 1, 2):
                for u in range(-n, n + 1, 2):
                    if nu_triple(n, s, t, u) != brute.get((s, t, u), 0):
                        mismatches += 1
    out.checks.append(Check.compare("nu_triple_brute_mismatches", mismatches, "==", cfg.tol("count_identity_exact")))

    marg_bad = total_bad = 0
    for n in range(1, int(cfg.option("identity_max")) + 1):
        grand = 0
        for s in range(-n, n + 1, 2):
            for t in range(-n, n + 1, 2):
                row = sum(nu_triple(n, s, t, u) for u in range(-n, n + 1, 2))
                marg_bad += row != nu_count(n, s) * nu_count(n, t)
                grand += row
        total_bad += grand != 4**n
    out.checks.append(Check.compare("overlap_marginal_mismatches", marg_bad, "==", cfg.tol("count_identity_exact")))
    out.checks.append(Check.compare("total_count_mismatches", total_bad, "==", cfg.tol("count_identity_exact")))

    dm_n = int(cfg.option("de_moivre_n"))
    dm = de_moivre_laplace_ratio(dm_n, 0)
    out.checks.append(Check.compare("de_moivre_ratio_deviation", abs(dm - 1), "<", cfg.tol("de_moivre_abs")))

    rows = []
    for beta in cfg.option("margin_betas"):
        for n in cfg.n_list:
            margin = z_cw_lower_bound_margin(ModelParams(n, float(beta)))
            rows.append({"beta": beta, "n": n, "constant": cw_lower_bound_constant(float(beta)), "margin": margin})
            out.checks.append(Check.compare(f"z_cw_margin_beta{beta}_n{n}", margin, ">", cfg.tol("z_cw_margin_min")))
    out.tables["z_cw_margin"] = rows
    out.results = {"de_moivre_ratio": dm, "z_cw_margin": rows}
    return out


def exp_tails(cfg: ExperimentConfig) -> ExperimentOutput:
    out = ExperimentOutput()
    rows = []
    for n in cfg.n_list:
        p = cfg.params(n)
        rows.append({"n": n, "p": p.p, "threshold": p.typical_threshold,
                     "tail_ratio": atypical_tail_ratio(p, cfg.delta)})
    out.tables["tails"] = rows
    vals = [r["tail_ratio"] for r in rows]
    out.checks.append(Check.holds("tail_ratio_strictly_decreasing", strictly_decreasing(vals)))
    ref = int(cfg.option("reference_n"))
    ref_rows = [r for r in rows if r["n"] == ref]
    if not ref_rows:
        raise ConfigError(f"reference_n={ref} is not in n_list")
    out.checks.append(Check.compare(f"tail_ratio_at_n{ref}", ref_rows[0]["tail_ratio"], "<",
                                    cfg.tol("tail_ratio_reference")))
    out.results = {"tails": rows}
    return out


def exp_rn_concentration(cfg: ExperimentConfig) -> ExperimentOutput:
    out = ExperimentOutput()
    f = observable_by_id(cfg.observable)
    points = [(n, cfg.params(n)) for n in cfg.n_list]
    final = cfg.options.get("final_point")
    if final is not None:
        points.append((int(final["n"]), cfg.params(int(final["n"]), p=float(final["p"]))))
    rows = []
    for k, (n, params) in enumerate(points):
        res = concentration_experiment(params, f, cfg.plan(1000 * n + k), cfg.delta, threads=cfg.threads)
        row = res.summary()
        if cfg.observable == "one":
            row["exact_mean_R"] = expected_r(params)
            row["exact_sd_R"] = math.sqrt(max(r_variance(params), 0.0))
        rows.append(row)
        name = f"concentration_n{n}_p{params.p:g}.csv"
        out.writers.append((name, res.to_csv))
    out.tables["concentration"] = [{k: (v if not isinstance(v, list) else json.dumps(v)) for k, v in r.items()}
                                   for r in rows]
    sweep = [r["fraction"] for r in rows[: len(cfg.n_list)]]
    out.checks.append(Check.holds("fraction_non_increasing", non_increasing(sweep)))
    overlap_note = any(rows[i + 1]["wilson95"][0] <= rows[i]["wilson95"][1] for i in range(len(sweep) - 1))
    if final is not None:
        out.checks.append(Check.compare("fraction_at_final_point", rows[-1]["fraction"], "<",
                                        cfg.tol("concentration_final")))
    out.results = {"points": rows, "adjacent_intervals_overlap": overlap_note}
    return out


def _partition(cfg: ExperimentConfig, n: int) -> TwoGroupPartition:
    return TwoGroupPartition.from_fractions(n, cfg.alpha1, cfg.alpha2)


def mcmc_sweep(cfg: ExperimentConfig) -> ExperimentOutput:
    """Two-group MCMC along n_list: pooled means, covariance, ESS and the exact CW covariance."""
    out = ExperimentOutput()
    rows, diag, dists = [], {}, []
    target = clt_covariance(cfg.alpha1, cfg.alpha2, cfg.beta) if cfg.beta < 1 else None
    lln = lln_limit(cfg.beta) if cfg.beta > 0 else None
    for n in cfg.n_list:
        params = cfg.params(n)
        part = _partition(cfg, n)
        runs = run_replicas(params, part, cfg.plan(n), cfg.sweeps, cfg.burn_in, cfg.thinning,
                            threads=cfg.threads)
        samples = np.concatenate([r.result.samples for r in runs])
        ids = np.concatenate([np.full(len(r.result.samples), r.index) for r in runs])
        cov = empirical_covariance(samples, ids)
        means = np.concatenate([r.result.sums for r in runs]) / np.array([part.n1, part.n2])
        ess = np.array([r.result.ess() for r in runs])
        row = {"n": n, "p": params.p, "replicas": len(runs),
               "mean1": float(means[:, 0].mean()), "mean2": float(means[:, 1].mean()),
               "cov11": cov.matrix[0, 0], "cov12": cov.matrix[0, 1], "cov22": cov.matrix[1, 1],
               "min_ess": float(ess.min())}
        if cov.stderr is not None:
            row.update(se11=cov.stderr[0, 0], se12=cov.stderr[0, 1], se22=cov.stderr[1, 1])
        if target is not None:
            row["max_rel_error"] = float(np.max(np.abs(cov.matrix - target) / np.abs(target)))
            dists.append({"N": n, "p": params.p, "beta": cfg.beta, "metric": "bl-v1",
                          "value": bl_distance_2d(samples, clt_limit(cfg.alpha1, cfg.alpha2, cfg.beta)),
                          "stderr": None})
            if part.covers(n) and n <= 4000:
                cw = cw_exact_two_group_law(params, part).pushforward(
                    lambda y: y / np.array([math.sqrt(part.n1), math.sqrt(part.n2)])).covariance()
                row["cw_max_rel_error"] = float(np.max(np.abs(cw - target) / np.abs(target)))
        rows.append(row)
        diag[str(n)] = [{"replica": r.index, "graph_seed": r.graph_seed, "chain_seed": r.chain_seed,
                         "edge_count": r.edge_count, **r.result.diagnostics()} for r in runs]
        if cfg.options.get("write_samples", False):
            out.writers.append((f"samples_n{n}.csv", lambda path, runs=runs: write_samples_csv(runs, path)))
    out.tables["mcmc_sweep"] = rows
    if dists:
        out.tables["distances"] = dists
    out.writers.append(("diagnostics.json", lambda path: _write_json(path, diag)))
    out.results = {"rows": rows, "target_covariance": None if target is None else target.tolist(),
                   "lln_atoms": None if lln is None else lln.atoms.tolist()}
    return out


def exp_sweep_lln(cfg: ExperimentConfig) -> ExperimentOutput:
    out = mcmc_sweep(cfg)
    rows = out.tables["mcmc_sweep"]
    last = rows[-1]
    tol = cfg.tol("lln_abs_mean")
    out.checks.append(Check.compare("final_abs_mean1", abs(last["mean1"]), "<", tol))
    out.checks.append(Check.compare("final_abs_mean2", abs(last["mean2"]), "<", tol))
    return out


def exp_sweep_clt(cfg: ExperimentConfig) -> ExperimentOutput:
    out = mcmc_sweep(cfg)
    rows = out.tables["mcmc_sweep"]
    if "max_rel_error" not in rows[-1]:
        raise ConfigError("sweep-clt needs beta < 1")
    out.checks.append(Check.compare("final_max_rel_error", rows[-1]["max_rel_error"], "<",
                                    cfg.tol("bg_covariance_rel")))
    out.checks.append(Check.compare("min_ess_all", min(r["min_ess"] for r in rows), ">=", cfg.tol("min_ess")))
    if "cw_max_rel_error" in rows[-1]:
        out.checks.append(Check.compare("cw_final_max_rel_error", rows[-1]["cw_max_rel_error"], "<",
                                        cfg.tol("cw_covariance_rel")))
    return out


def levy_point(params: ModelParams, plan: ReplicaPlan, sweeps: int, burn_in=None, threads: int = 1) -> dict:
    """d_L of the pooled, flip-symmetrized BG occupation law of s/sqrt(N) and of the exact CW law."""
    n = params.n
    variance = 1.0 / (1.0 - params.beta)
    ref = GaussianCDF(0.0, variance)
    part = TwoGroupPartition.blocks(n, n // 2)
    runs = run_replicas(params, part, plan, sweeps, burn_in, thinning=sweeps, occupation=True, threads=threads)
    occ = np.sum([r.result.occupation for r in runs], axis=0)
    bg = occupation_law(occ, n)
    cw = cw_exact_magnetization_law(params).pushforward(lambda s: s / math.sqrt(n))
    return {"n": n, "p": params.p, "levy_bg": levy_distance_1d(StepCDF.from_law(bg), ref),
            "levy_cw": levy_distance_1d(StepCDF.from_law(cw), ref),
            "flip_rate": float(np.mean([r.result.flip_rate for r in runs])),
            "updates": int(sum(r.result.updates for r in runs))}


def exp_levy_sweep(cfg: ExperimentConfig) -> ExperimentOutput:
    out = ExperimentOutput()
    rows = [levy_point(cfg.params(n), cfg.plan(n), cfg.sweeps, cfg.burn_in, cfg.threads) for n in cfg.n_list]
    out.tables["levy"] = rows
    out.tables["distances"] = [
        {"N": r["n"], "p": r["p"], "beta": cfg.beta, "metric": m, "value": r[key], "stderr": None}
        for r in rows for m, key in (("levy_bg", "levy_bg"), ("levy_cw", "levy_cw"))
    ]
    out.checks.append(Check.holds("levy_bg_strictly_decreasing", strictly_decreasing([r["levy_bg"] for r in rows])))
    out.checks.append(Check.compare("levy_bg_final", rows[-1]["levy_bg"], "<", cfg.tol("levy_bg_final")))
    out.checks.append(Check.compare("levy_cw_final", rows[-1]["levy_cw"], "<", cfg.tol("levy_cw_final")))
    out.results = {"rows": rows}
    return out


def _law_abs_diff(a, b) -> float:
    """Max |P(y) - Q(y)| over the union of outcomes of two laws."""
    pa = dict(zip(map(tuple, np.atleast_2d(a.outcomes.T).T.tolist()), a.probabilities))
    pb = dict(zip(map(tuple, np.atleast_2d(b.outcomes.T).T.tolist()), b.probabilities))
    return max(abs(pa.get(k, 0.0) - pb.get(k, 0.0)) for k in set(pa) | set(pb))


def exp_exact_small(cfg: ExperimentConfig) -> ExperimentOutput:
    out = ExperimentOutput()
    rows = []
    for n in cfg.n_list:
        params = cfg.params(n)
        if params.p != 1.0:
            continue
        full = GraphSample.complete(n)
        obs = (("magnetization", magnetization_obs),
               ("two-group", two_group_obs(TwoGroupPartition.blocks(n, n // 2), "none")))
        for name, ob in obs:
            diff = _law_abs_diff(enumerate_pushforward(params, ob, full), enumerate_pushforward(params, ob))
            rows.append({"n": n, "observable": name, "max_abs_prob_diff": diff})
    out.tables["pushforward_identity"] = rows
    if rows:
        out.checks.append(Check.compare("pushforward_identity", max(r["max_abs_prob_diff"] for r in rows), "<",
                                        cfg.tol("pushforward_abs")))

    rt_n, rt_p = int(cfg.option("rt_n")), float(cfg.option("rt_p"))
    rt_params = cfg.params(rt_n, p=rt_p)
    rt_rows = []
    cw_law = cw_exact_magnetization_law(rt_params)
    for name in ("one", f"magnetization-indicator:{rt_n}", "magnetization-indicator:0"):
        f = observable_by_id(name)
        target = int(name.split(":")[1]) if ":" in name else None
        pcw = 1.0 if target is None else float(cw_law.probabilities[cw_law.outcomes == target].sum())
        for k, seed in enumerate(cfg.plan(rt_n).derived_seeds):
            v = rt_values(rt_params, sample_graph(rt_params, seed), f)
            rel = abs(v.T - v.R * pcw) / max(abs(v.T), 1e-300)
            rt_rows.append({"observable": name, "replica": k, "R": v.R, "T": v.T, "cw_probability": pcw,
                            "rel_error": rel})
    out.tables["rt_identity"] = rt_rows
    out.checks.append(Check.compare("rt_identity", max(r["rel_error"] for r in rt_rows), "<",
                                    cfg.tol("rt_identity_rel")))

    sn = int(cfg.option("sampler_n"))
    sp = cfg.params(sn, p=0.5)
    graph = sample_graph(sp, cfg.plan(sn).derived_seeds[0])
    lw = enumerate_log_weights(sp, graph)
    pi = np.exp(lw - lw.max())
    pi /= pi.sum()
    tm = transition_matrix(sp, graph)
    stat = float(np.abs(pi @ tm - pi).max())
    db = max(float(np.abs(pi[:, None] * k - (pi[:, None] * k).T).max()) for k in single_site_kernels(sp, graph))
    out.checks.append(Check.compare("stationarity_residual", stat, "<", cfg.tol("stationarity_abs")))
    out.checks.append(Check.compare("detailed_balance_residual", db, "<", cfg.tol("detailed_balance_abs")))

    ln = int(cfg.option("long_run_n"))
    lp = cfg.params(ln, p=0.5)
    lseed = cfg.plan(ln).derived_seeds[0]
    lgraph = sample_graph(lp, lseed)
    sweeps = int(cfg.option("long_run_sweeps"))
    res = run_chain(lp, lgraph, TwoGroupPartition.blocks(ln, ln // 2),
                    ChainConfig(sweeps=sweeps + 100, burn_in_sweeps=100, thinning=sweeps, seed=lseed),
                    config_histogram=True)
    lw = enumerate_log_weights(lp, lgraph)
    pi = np.exp(lw - lw.max())
    pi /= pi.sum()
    emp = res.config_histogram / res.config_histogram.sum()
    tv = 0.5 * float(np.abs(emp - pi).sum())
    out.checks.append(Check.compare("long_run_total_variation", tv, "<", cfg.tol("long_run_tv")))
    out.results = {"stationarity_residual": stat, "detailed_balance_residual": db, "long_run_tv": tv,
                   "long_run_edges": lgraph.edge_count}
    return out


def bounded_integral_sweep(cfg: ExperimentConfig, test_function: str | None = None) -> ExperimentOutput:
    """Per-N BG estimates of E h(Y) with replicate errors beside the exact CW and Gaussian-limit values."""
    tf = test_function_by_id(test_function or cfg.test_function)
    out = ExperimentOutput()
    rows = []
    for n in cfg.n_list:
        params = cfg.params(n)
        if tf.dim == 1:
            part = TwoGroupPartition.blocks(n, n // 2)
            runs = run_replicas(params, part, cfg.plan(n), cfg.sweeps, cfg.burn_in, thinning=cfg.sweeps,
                                occupation=True, threads=cfg.threads)
            ests = []
            for r in runs:
                law = occupation_law(r.result.occupation, n)
                ests.append(float(np.dot(law.probabilities, tf.h(law.outcomes))))
            cw = cw_exact_magnetization_law(params).pushforward(lambda s: s / math.sqrt(n))
            cw_val = float(np.dot(cw.probabilities, tf.h(cw.outcomes)))
            limit = tf.gaussian_limit(np.zeros(1), np.array([[1.0 / (1.0 - cfg.beta)]])) if cfg.beta < 1 else None
        else:
            part = _partition(cfg, n)
            runs = run_replicas(params, part, cfg.plan(n), cfg.sweeps, cfg.burn_in, cfg.thinning,
                                threads=cfg.threads)
            ests = [float(np.mean(tf.h(r.result.samples))) for r in runs]
            scale = np.array([math.sqrt(part.n1), math.sqrt(part.n2)])
            cw = cw_exact_two_group_law(params, part).pushforward(lambda y: y / scale)
            cw_val = float(np.dot(cw.probabilities, tf.h(cw.outcomes)))
            limit = (tf.gaussian_limit(np.zeros(2), clt_covariance(cfg.alpha1, cfg.alpha2, cfg.beta))
                     if cfg.beta < 1 else None)
        ests = np.array(ests)
        se = float(ests.std(ddof=1) / math.sqrt(len(ests))) if len(ests) > 1 else float("nan")
        rows.append({"n": n, "p": params.p, "bg_estimate": float(ests.mean()), "bg_se": se,
                     "cw_exact": cw_val, "gaussian_limit": limit})
    out.tables["bounded_integral"] = rows
    k = cfg.tol("bounded_integral_se_multiple")
    for r in rows:
        gap = abs(r["bg_estimate"] - r["cw_exact"])
        allowed = k * r["bg_se"] if r["bg_se"] > 0 else 1e-12
        out.checks.append(Check.compare(f"bg_within_se_n{r['n']}", gap, "<=", allowed))
    out.results = {"test_function": tf.name, "rows": rows}
    return out


REGISTRY = {
    "verify-lemma32": exp_verify_lemma32,
    "verify-counts": exp_verify_counts,
    "tails": exp_tails,
    "rn-concentration": exp_rn_concentration,
    "sweep-lln": exp_sweep_lln,
    "sweep-clt": exp_sweep_clt,
    "levy-sweep": exp_levy_sweep,
    "exact-small": exp_exact_small,
    "bounded-integral": bounded_integral_sweep,
}


# --- artifacts -------------------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_table(path, rows: list[dict]) -> None:
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else ("" if v is None else v) for v in
                        (r.get(c) for c in cols)])


def run(cfg: ExperimentConfig, out_dir=None) -> tuple[int, ExperimentOutput]:
    """Run an experiment, write its artifacts and return (exit status, output)."""
    try:
        result = REGISTRY[cfg.experiment](cfg)
    except CapExceeded as exc:
        raise ConfigError(f"cap violation: {exc}") from exc
    _, defaults_hash = load_defaults()
    target = Path(out_dir or cfg.out or Path("runs") / cfg.experiment)
    target.mkdir(parents=True, exist_ok=True)
    files = []
    for name, rows in result.tables.items():
        write_table(target / f"{name}.csv", rows)
        files.append(f"{name}.csv")
    for name, writer in result.writers:
        writer(target / name)
        files.append(name)
    summary = {
        "schema_version": SUMMARY_SCHEMA,
        "experiment": cfg.experiment,
        "passed": result.passed,
        "checks": [asdict(c) for c in result.checks],
        "results": result.results,
        "defaults_hash": defaults_hash,
    }
    _write_json(target / "summary.json", summary)
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "defaults_hash": defaults_hash,
        "outputs": sorted(files + ["summary.json"]),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    _write_json(target / "manifest.json", manifest)
    return (0 if result.passed else 1), result
