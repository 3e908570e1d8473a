"""Baseline mitigations, experiment orchestration, and report emission.

TRNG(p) and ZBP rewrite operands with one's complement to balance duty
cycles, as the prior techniques they model do on stored values; they are
evaluated for stress and lifetime only. DVFS is modeled as voltage
compensation: when any transistor's ON current falls to the failure fraction,
supply voltage steps up (accelerating subsequent aging through a documented
kv-voltage coupling) until even the maximum voltage cannot hold the current,
which defines the compensated lifetime.

Experiments are named scenarios sharing one global seed, so Monte Carlo draws
are paired across mitigation arms. The comparison table is recomputed from
the emitted per-iteration CSVs, never from in-memory state.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .aging import AgingParams, PvSample, circuit_lifetime, delta_vth, sample_pv, site_lifetimes
from .logicsim import (NonePolicy, DeciderPolicy, TransformPolicy, TrngPolicy,
                       WorkloadSpec, ZbpPolicy, profile_alpha)
from .netlist import Netlist, build_multiplier, build_ripple_adder
from .oracle import build_oracle
from .rng import derive_seed
from .selector import build_ensemble, synthesize
from .systolic import (LifetimeStats, Mitigation, SAConfig, histogram_to_csv,
                       monte_carlo, stats_to_csv, stats_to_json)

__all__ = ["DvfsParams", "ExperimentConfig", "ScenarioSpec", "ConfigError",
           "trng_policy", "zbp_policy", "dvfs_lifetime", "run", "report",
           "worker_count"]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_T_CAP = 1e30
_TIME_GROWTH = 1.02   # geometric grid factor for the DVFS simulation


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Baseline policies
# ---------------------------------------------------------------------------

def trng_policy(p: float, seed: int, width: int) -> TransformPolicy:
    """Random one's-complement policy with per-vector probability p."""
    return TrngPolicy(p, seed, width)


def zbp_policy(width: int) -> TransformPolicy:
    """Zero-bias policy: every source vector applied plain then complemented."""
    return ZbpPolicy(width)


@dataclass
class DvfsParams:
    """Voltage-compensation baseline.

    ``kv_voltage_scaling`` is the exponent of the kv-voltage coupling,
    kv(v) = kv * (v / vdd_nominal) ** kv_voltage_scaling. NBTI acceleration is
    strongly superlinear in overdrive; a large exponent keeps compensation
    from being a free lunch and is calibrated so the compensated lifetime
    lands in the band prior work reports.
    """

    v_step: float = 0.01
    v_max: float = 0.9
    kv_voltage_scaling: float = 12.0

    def validate(self, params: AgingParams) -> None:
        if self.v_step <= 0:
            raise ConfigError("v_step must be positive")
        if self.v_max < params.vdd:
            raise ConfigError("v_max must be at least the nominal vdd")


def _kv_at(v: float, params: AgingParams, d: DvfsParams) -> float:
    return params.kv * (v / params.vdd) ** d.kv_voltage_scaling


def _stress_time_for_shift(shift: np.ndarray, alphas: np.ndarray,
                           params_v: AgingParams) -> np.ndarray:
    """Equivalent stress time producing the given shift under params_v."""
    out = np.zeros_like(shift)
    live = (alphas > 0) & (shift > 0)
    if not np.any(live):
        return out
    if params_v.beta_model == "power_law":
        out[live] = (shift[live] / params_v.kv) ** (1.0 / params_v.lam) / alphas[live]
        return out
    a, sh = alphas[live], shift[live]
    lo = np.zeros_like(a)
    hi = np.ones_like(a)
    for _ in range(120):
        need = (delta_vth(a, hi, params_v) < sh) & (hi <= _T_CAP)
        if not np.any(need):
            break
        hi[need] *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f = delta_vth(a, mid, params_v) >= sh
        hi = np.where(f, mid, hi)
        lo = np.where(f, lo, mid)
    out[live] = 0.5 * (lo + hi)
    return out


def dvfs_lifetime_arrays(alphas: np.ndarray, pv_delta: np.ndarray,
                         params: AgingParams, d: DvfsParams) -> float:
    """Compensated lifetime over flat per-site alpha / PV arrays."""
    d.validate(params)
    alphas = np.asarray(alphas, dtype=np.float64).reshape(-1)
    pv_delta = np.asarray(pv_delta, dtype=np.float64).reshape(-1)
    vth0 = params.vth_nominal + pv_delta
    ref_over = params.vdd - vth0
    if np.any(ref_over <= 0):
        raise ConfigError("degenerate device: unaged threshold at or above vdd")
    keep = params.failure_fraction ** (1.0 / params.current_exponent)

    base = site_lifetimes(alphas, pv_delta, params)
    t = float(np.min(base))
    if math.isinf(t):
        return math.inf

    # Shift budget at voltage v: failure when the accumulated shift reaches
    # (v - vth0) - ref_over * keep; each v_step buys exactly v_step of budget.
    def margin(v: float, shift: np.ndarray) -> float:
        return float(np.min((v - vth0) - ref_over * keep - shift))

    v = params.vdd
    shift = delta_vth(alphas, t, params)
    eps = 1e-12
    while True:
        while margin(v, shift) <= eps:
            if v >= d.v_max - eps:
                return t
            v = min(v + d.v_step, d.v_max)
        params_v = dataclasses.replace(params, kv=_kv_at(v, params, d))
        t_next = t * _TIME_GROWTH
        tau = _stress_time_for_shift(shift, alphas, params_v)
        shift = np.asarray(delta_vth(alphas, tau + (t_next - t), params_v))
        t = t_next
        if t > _T_CAP:
            log.warning("DVFS simulation exceeded the time cap; returning +inf")
            return math.inf


def dvfs_lifetime(profile, pv: PvSample, params: AgingParams, d: DvfsParams) -> float:
    """Compensated lifetime for a circuit stress profile (spec interface)."""
    return dvfs_lifetime_arrays(profile.alpha, pv.delta, params, d)


def dvfs_lifetime_fn(d: DvfsParams):
    """Array-lifetime hook for the systolic Monte Carlo harness."""

    def fn(alphas: np.ndarray, pv2d: np.ndarray, params: AgingParams):
        life = dvfs_lifetime_arrays(alphas.reshape(-1), pv2d.reshape(-1), params, d)
        # Argmin PE taken from the uncompensated solution (compensation is
        # array-wide, so "first to fail" is the same PE).
        per_pe = site_lifetimes(alphas.reshape(-1), pv2d.reshape(-1), params)
        per_pe = per_pe.reshape(alphas.shape).min(axis=1)
        return life, int(np.argmin(per_pe))

    return fn


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

_SA_KEYS = {"name", "kind", "mitigation", "width", "arch", "d", "iterations",
            "matrices_per_iteration", "histogram_bins", "aging"}
_MIT_KINDS = {"none", "oracle", "sm", "ensemble", "trng", "zbp", "dvfs"}


@dataclass
class ScenarioSpec:
    name: str
    kind: str = "sa"                 # "sa" (Monte Carlo) | "circuit" (single multiplier)
    mitigation: dict = field(default_factory=lambda: {"kind": "none"})
    width: int | None = None
    arch: str | None = None
    d: int | None = None
    iterations: int | None = None
    matrices_per_iteration: int | None = None
    histogram_bins: int | None = None
    aging: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    seed: int
    baseline: str
    scenarios: list[ScenarioSpec]
    defaults: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a mapping")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
        raw = doc.get("scenarios")
        if not raw:
            raise ConfigError("scenarios: no scenarios")
        scenarios = []
        for i, s in enumerate(raw):
            where = f"scenarios[{i}]"
            if not isinstance(s, dict) or "name" not in s:
                raise ConfigError(f"{where}: each scenario needs a name")
            unknown = set(s) - _SA_KEYS
            if unknown:
                raise ConfigError(f"{where} ({s['name']}): unknown fields {sorted(unknown)}")
            mit = s.get("mitigation", {"kind": "none"})
            if mit.get("kind") not in _MIT_KINDS:
                raise ConfigError(f"{where}.mitigation.kind: unknown kind {mit.get('kind')!r}")
            scenarios.append(ScenarioSpec(
                name=str(s["name"]), kind=s.get("kind", "sa"), mitigation=mit,
                width=s.get("width"), arch=s.get("arch"), d=s.get("d"),
                iterations=s.get("iterations"),
                matrices_per_iteration=s.get("matrices_per_iteration"),
                histogram_bins=s.get("histogram_bins"),
                aging=s.get("aging", {})))
        names = [s.name for s in scenarios]
        if len(set(names)) != len(names):
            raise ConfigError("scenario names must be unique")
        baseline = doc.get("baseline")
        if baseline not in names:
            raise ConfigError(f"baseline: {baseline!r} is not a scenario name")
        return cls(seed=int(doc.get("seed", 0)), baseline=baseline,
                   scenarios=scenarios, defaults=doc.get("defaults", {}))

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)


def worker_count() -> int:
    env = os.environ.get("MULIFE_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"MULIFE_THREADS must be an integer, got {env!r}") from exc
        return max(1, n)
    return max(1, min(4, os.cpu_count() or 1))


# ---------------------------------------------------------------------------
# Scenario execution
# ---------------------------------------------------------------------------

def _resolved(cfg: ExperimentConfig, s: ScenarioSpec) -> dict:
    out = {
        "width": 8, "arch": "array_signed_bw", "d": 8, "iterations": 200,
        "matrices_per_iteration": 16, "histogram_bins": 20,
        "profile_count": 4096,
        "ensemble": {"pv_scenarios": 120, "k": 4},
        "aging": {},
    }
    for key, val in cfg.defaults.items():
        if key in ("aging", "ensemble") and isinstance(val, dict):
            out[key] = {**out[key], **val}
        else:
            out[key] = val
    for key in ("width", "arch", "d", "iterations", "matrices_per_iteration",
                "histogram_bins"):
        val = getattr(s, key)
        if val is not None:
            out[key] = val
    out["aging"] = {**out["aging"], **s.aging}
    return out


class _ArtifactCache:
    """Oracle tables and ensembles shared between scenarios with identical
    build parameters (arms differing only in member count reuse the build)."""

    def __init__(self):
        self._store: dict = {}

    def get(self, key, builder):
        if key not in self._store:
            self._store[key] = builder()
        return self._store[key]


def _aging_params(res: dict) -> AgingParams:
    allowed = {f.name for f in dataclasses.fields(AgingParams)}
    unknown = set(res["aging"]) - allowed
    if unknown:
        raise ConfigError(f"aging: unknown fields {sorted(unknown)}")
    kwargs = dict(res["aging"])
    if "beta_params" in kwargs:
        kwargs["beta_params"] = tuple(kwargs["beta_params"])
    return AgingParams(**kwargs)


def _build_mitigation(cfg: ExperimentConfig, res: dict, mit: dict,
                      cache: _ArtifactCache):
    """Returns (Mitigation, lifetime_fn or None) for an SA scenario."""
    kind = mit["kind"]
    if kind == "none":
        return Mitigation.none(), None
    if kind == "trng":
        return Mitigation.trng(float(mit.get("p", 0.5))), None
    if kind == "zbp":
        return Mitigation.zbp(), None
    if kind == "dvfs":
        d = DvfsParams(v_step=float(mit.get("v_step", 0.01)),
                       v_max=float(mit.get("v_max", 0.9)),
                       kv_voltage_scaling=float(mit.get("kv_voltage_scaling", 12.0)))
        return Mitigation.none(), dvfs_lifetime_fn(d)

    width, arch = res["width"], res["arch"]
    params = _aging_params(res)
    count = int(mit.get("profile_count", res["profile_count"]))
    workload = WorkloadSpec.uniform(width, count, derive_seed(cfg.seed, 0x11))
    netlist_key = ("netlist", arch, width)
    netlist = cache.get(netlist_key, lambda: build_multiplier(width, arch))

    if kind in ("oracle", "sm"):
        # Built at nominal threshold (no process variation), the single-table flow.
        def build_table():
            pv0 = PvSample(delta=np.zeros(len(netlist.site_input_nets())),
                           seed=0, sigma=0.0)
            return build_oracle(netlist, params, pv0, workload)
        table = cache.get(("oracle", arch, width, count, _params_key(params)), build_table)
        if kind == "oracle":
            return Mitigation.oracle(table), None
        k = int(mit.get("k", res["ensemble"]["k"]))
        fn = cache.get(("sm", arch, width, count, k, _params_key(params)),
                       lambda: synthesize(table, k))
        return Mitigation.sm(fn), None

    # kind == "ensemble"
    members = int(mit.get("members", 3))
    k = int(mit.get("k", res["ensemble"]["k"]))
    n_scen = int(mit.get("pv_scenarios", res["ensemble"]["pv_scenarios"]))

    def build_ens():
        n_sites = len(netlist.site_input_nets())
        pvs = [sample_pv(params, n_sites, derive_seed(cfg.seed, 0xE5, i))
               for i in range(n_scen)]
        return build_ensemble(netlist, params, pvs, members, k=k, workload=workload)
    ens = cache.get(("ensemble", arch, width, count, k, members, n_scen,
                     _params_key(params)), build_ens)
    return Mitigation.from_ensemble(ens), None


def _params_key(p: AgingParams) -> tuple:
    return tuple(getattr(p, f.name) for f in dataclasses.fields(AgingParams))


def _run_sa_scenario(cfg: ExperimentConfig, s: ScenarioSpec, res: dict,
                     mitigation: Mitigation, lifetime_fn, out_dir: Path) -> dict:
    params = _aging_params(res)
    sa = SAConfig(d=res["d"], width=res["width"], arch=res["arch"], params=params,
                  mitigation=mitigation,
                  matrices_per_iteration=res["matrices_per_iteration"],
                  histogram_bins=res["histogram_bins"])
    stats = monte_carlo(sa, res["iterations"], cfg.seed, lifetime_fn=lifetime_fn)
    stats.normalization_ref = cfg.baseline
    stats_to_csv(stats, out_dir / f"{s.name}_lifetimes.csv")
    stats_to_json(stats, out_dir / f"{s.name}_stats.json")
    histogram_to_csv(stats, out_dir / f"{s.name}_hist.csv")
    return {"name": s.name, "kind": "sa", "mean": stats.mean,
            "iterations": stats.iterations}


def _run_circuit_scenario(cfg: ExperimentConfig, s: ScenarioSpec, res: dict,
                          cache: _ArtifactCache) -> dict:
    params = _aging_params(res)
    width, arch = res["width"], res["arch"]
    if arch == "ripple_adder":
        netlist = cache.get(("netlist", arch, width), lambda: build_ripple_adder(width))
    else:
        netlist = cache.get(("netlist", arch, width), lambda: build_multiplier(width, arch))
    n_sites = len(netlist.site_input_nets())
    pv = sample_pv(params, n_sites, derive_seed(cfg.seed, 0xC1))
    workload = WorkloadSpec.uniform(width, res["profile_count"], derive_seed(cfg.seed, 0x11))

    mit = s.mitigation
    kind = mit["kind"]
    if kind in ("none", "dvfs"):
        policy: TransformPolicy = NonePolicy()
    elif kind == "trng":
        policy = trng_policy(float(mit.get("p", 0.5)), derive_seed(cfg.seed, 0x7A), width)
    elif kind == "zbp":
        policy = zbp_policy(width)
    elif kind in ("oracle", "sm"):
        mitigation, _ = _build_mitigation(cfg, res, mit, cache)
        policy = DeciderPolicy(mitigation.decider, kind=kind)
    else:
        raise ConfigError(f"circuit scenario does not support mitigation {kind!r}")
    profile = profile_alpha(netlist, workload, policy, t_data=params.t_data)
    if kind == "dvfs":
        d = DvfsParams(v_step=float(mit.get("v_step", 0.01)),
                       v_max=float(mit.get("v_max", 0.9)),
                       kv_voltage_scaling=float(mit.get("kv_voltage_scaling", 12.0)))
        life = dvfs_lifetime(profile, pv, params, d)
        f2f_sites: list[int] = []
    else:
        life, f2f = circuit_lifetime(profile, pv, params)
        f2f_sites = sorted(f2f.sites)
    return {"name": s.name, "kind": "circuit", "lifetime": life,
            "f2f_sites": f2f_sites, "seed": cfg.seed}


def run(cfg: ExperimentConfig, out_dir) -> dict:
    """Execute every scenario; emit per-scenario files, a circuit lifetime
    report, and the comparison table. Raises on the first scenario failure
    after recording partial results."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = _ArtifactCache()

    # Artifacts (oracle tables, ensembles) build sequentially so the shared
    # cache stays deterministic; Monte Carlo scenarios then run on the pool.
    tasks = []
    errors: list[tuple[str, Exception]] = []
    for s in cfg.scenarios:
        res = _resolved(cfg, s)
        try:
            if s.kind == "sa":
                mitigation, lifetime_fn = _build_mitigation(cfg, res, s.mitigation, cache)
                tasks.append(("sa", s, res, mitigation, lifetime_fn))
            elif s.kind == "circuit":
                tasks.append(("circuit", s, res, None, None))
            else:
                raise ConfigError(f"scenario {s.name}: unknown kind {s.kind!r}")
        except Exception as exc:  # noqa: BLE001 - reported per scenario
            errors.append((s.name, exc))
            log.error("scenario %s failed during setup: %s", s.name, exc)

    results = []
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        futures = []
        for kind, s, res, mitigation, lifetime_fn in tasks:
            if kind == "sa":
                futures.append(pool.submit(_run_sa_scenario, cfg, s, res,
                                           mitigation, lifetime_fn, out))
            else:
                futures.append(pool.submit(_run_circuit_scenario, cfg, s, res, cache))
        for (kind, s, *_), fut in zip(tasks, futures):
            try:
                results.append(fut.result())
            except Exception as exc:  # noqa: BLE001 - reported per scenario
                errors.append((s.name, exc))
                log.error("scenario %s failed: %s", s.name, exc)

    circuit_rows = [r for r in results if r["kind"] == "circuit"]
    if circuit_rows:
        with open(out / "lifetime_report.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "seed", "lifetime_seconds", "f2f_sites"])
            for r in circuit_rows:
                w.writerow([r["name"], r["seed"], repr(float(r["lifetime"])),
                            ";".join(str(i) for i in r["f2f_sites"])])

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "seed": cfg.seed,
        "baseline": cfg.baseline,
        "sa_scenarios": [r["name"] for r in results if r["kind"] == "sa"],
        "circuit_scenarios": [r["name"] for r in circuit_rows],
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")

    if manifest["sa_scenarios"]:
        _write_comparison(out, cfg.baseline, manifest["sa_scenarios"])

    if errors:
        raise ConfigError("; ".join(f"scenario {n} failed: {e}" for n, e in errors))
    return manifest


def _read_lifetimes(out: Path, name: str) -> np.ndarray:
    with open(out / f"{name}_lifetimes.csv", newline="") as fh:
        return np.array([float(row["lifetime_seconds"]) for row in csv.DictReader(fh)])


def _write_comparison(out: Path, baseline: str, names: list[str]) -> None:
    means = {name: float(np.mean(_read_lifetimes(out, name))) for name in names}
    base = means[baseline]
    rows = []
    for name in names:
        rows.append({
            "scenario": name,
            "mean_lifetime_seconds": means[name],
            "normalized_mean": means[name] / base,
            "improvement_pct_vs_baseline": (means[name] / base - 1.0) * 100.0,
        })
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "mean_lifetime_seconds", "normalized_mean",
                    "improvement_pct_vs_baseline"])
        for r in rows:
            w.writerow([r["scenario"], repr(r["mean_lifetime_seconds"]),
                        repr(r["normalized_mean"]),
                        repr(r["improvement_pct_vs_baseline"])])
    with open(out / "comparison.json", "w") as fh:
        json.dump({"baseline": baseline, "scenarios": rows}, fh, indent=1, sort_keys=True)
        fh.write("\n")


def report(in_dir, fmt: str = "csv") -> Path:
    """Rebuild the comparison table from emitted per-iteration CSVs."""
    out = Path(in_dir)
    with open(out / "manifest.json") as fh:
        manifest = json.load(fh)
    _write_comparison(out, manifest["baseline"], manifest["sa_scenarios"])
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r}")
    return out / f"comparison.{fmt}"
