"""Systolic-array harness: functional matrix products with per-PE aging state.

A D x D grid of processing elements multiplies streamed operand pairs:
PE (i, j) sees the pairs (X[m, i, k], W[m, k, j]) over matrices m and inner
index k. Negated operand versions are computed once at the array boundary and
both versions routed in, so each PE's selector picks (I) or (-I)
independently; only the multiset of pairs a PE multiplies matters for stress,
so streaming reduces to per-PE pair streams.

Monte Carlo iterations are independent: each draws a fresh process-variation
sample and workload from iteration-derived seeds, dispatches mitigation per
PE, and records the array lifetime (the earliest PE failure).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .aging import AgingParams, PvSample, circuit_lifetime, sample_pv, site_lifetimes
from .logicsim import (StressProfile, TrngPolicy, group_zero_counts, negate,
                       to_signed, SimulationError)
from .netlist import Netlist, build_multiplier
from .rng import raw_words

__all__ = ["Mitigation", "SAConfig", "PEStates", "LifetimeStats",
           "matmul", "sa_lifetime", "monte_carlo",
           "stats_to_csv", "stats_to_json", "histogram_to_csv"]

TRANSPARENT_KINDS = ("none", "oracle", "sm", "ensemble")


@dataclass
class Mitigation:
    """Mitigation template applied inside every PE.

    kinds: none | oracle (shared ideal table) | sm (shared selector module) |
    ensemble (per-PE dispatch from the measured first-to-fail set) |
    trng (random complement, probability p) | zbp (alternating complement).
    """

    kind: str
    decider: object | None = None      # OracleTable or SelectorFn
    ensemble: object | None = None     # selector.Ensemble
    p: float = 0.0

    @classmethod
    def none(cls):
        return cls(kind="none")

    @classmethod
    def oracle(cls, table):
        return cls(kind="oracle", decider=table)

    @classmethod
    def sm(cls, fn):
        return cls(kind="sm", decider=fn)

    @classmethod
    def from_ensemble(cls, ens):
        return cls(kind="ensemble", ensemble=ens)

    @classmethod
    def trng(cls, p: float):
        return cls(kind="trng", p=p)

    @classmethod
    def zbp(cls):
        return cls(kind="zbp")


@dataclass
class SAConfig:
    d: int
    width: int
    arch: str
    params: AgingParams
    mitigation: Mitigation
    matrices_per_iteration: int = 16
    histogram_bins: int = 20
    _caches: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.d < 1:
            raise SimulationError("array dimension must be >= 1")
        if 2 * self.width + max(self.d - 1, 1).bit_length() > 63:
            raise SimulationError("accumulator would overflow 64-bit products")

    def netlist(self) -> Netlist:
        n = self._caches.get("netlist")
        if n is None:
            n = build_multiplier(self.width, self.arch)
            self._caches["netlist"] = n
        return n


class PEStates:
    """Per-PE stress accumulators, PV slices, and dispatched selectors."""

    def __init__(self, cfg: SAConfig, pv: np.ndarray | None = None):
        self.cfg = cfg
        n_sites = len(cfg.netlist().site_input_nets())
        self.zero_count = np.zeros((cfg.d * cfg.d, n_sites), dtype=np.int64)
        self.vectors = np.zeros(cfg.d * cfg.d, dtype=np.int64)
        self.pv = pv                      # (d*d, n_sites) or None
        self.selectors: list | None = None

    def profile(self, pe_row: int, pe_col: int) -> StressProfile:
        pe = pe_row * self.cfg.d + pe_col
        return StressProfile(zero_count=self.zero_count[pe].copy(),
                             vectors=int(self.vectors[pe]),
                             t_data=self.cfg.params.t_data)


def _encode_matrices(cfg: SAConfig, X: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = -(1 << (cfg.width - 1)), (1 << (cfg.width - 1)) - 1
    for name, m in (("X", X), ("W", W)):
        if m.shape[-2:] != (cfg.d, cfg.d):
            raise SimulationError(f"{name} must be {cfg.d}x{cfg.d}")
        if m.min() < lo or m.max() > hi:
            raise SimulationError(f"{name} entries do not fit {cfg.width}-bit two's complement")
    mask = np.uint64((1 << cfg.width) - 1)
    return (X.astype(np.int64).astype(np.uint64) & mask,
            W.astype(np.int64).astype(np.uint64) & mask)


def _pe_streams(xe: np.ndarray, we: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-PE operand streams, shape (d*d, M*d); PE index is row*d + col."""
    m, d, _ = xe.shape
    a_rows = xe.transpose(1, 0, 2).reshape(d, m * d)
    b_cols = we.transpose(2, 0, 1).reshape(d, m * d)
    return np.repeat(a_rows, d, axis=0), np.tile(b_cols, (d, 1))


def _transform_streams(cfg: SAConfig, states: PEStates, a2d: np.ndarray,
                       b2d: np.ndarray, policy_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    mit = cfg.mitigation
    if mit.kind == "none":
        return a2d, b2d
    w = cfg.width
    if mit.kind in ("oracle", "sm"):
        take = mit.decider.decide_batch(a2d.reshape(-1), b2d.reshape(-1)).reshape(a2d.shape)
        return (np.where(take, negate(a2d, w), a2d),
                np.where(take, negate(b2d, w), b2d))
    if mit.kind == "ensemble":
        if states.selectors is None:
            raise SimulationError("ensemble mitigation requires dispatched selectors")
        a_out, b_out = a2d.copy(), b2d.copy()
        by_fn: dict[int, list[int]] = {}
        for pe, fn in enumerate(states.selectors):
            by_fn.setdefault(id(fn), []).append(pe)
        fn_of = {id(fn): fn for fn in states.selectors}
        for fid, pes in by_fn.items():
            fn = fn_of[fid]
            rows = np.array(pes)
            take = fn.decide_batch(a2d[rows].reshape(-1), b2d[rows].reshape(-1))
            take = take.reshape(len(rows), -1)
            a_out[rows] = np.where(take, negate(a2d[rows], w), a2d[rows])
            b_out[rows] = np.where(take, negate(b2d[rows], w), b2d[rows])
        return a_out, b_out
    if mit.kind == "trng":
        pol = TrngPolicy(mit.p, policy_seed, w)
        a_fl, b_fl = pol.transform(a2d.reshape(-1), b2d.reshape(-1), 0)
        return a_fl.reshape(a2d.shape), b_fl.reshape(b2d.shape)
    if mit.kind == "zbp":
        mask = np.uint64((1 << w) - 1)
        n_pe, nv = a2d.shape
        a_out = np.empty((n_pe, 2 * nv), dtype=np.uint64)
        b_out = np.empty((n_pe, 2 * nv), dtype=np.uint64)
        a_out[:, 0::2], a_out[:, 1::2] = a2d, a2d ^ mask
        b_out[:, 0::2], b_out[:, 1::2] = b2d, b2d ^ mask
        return a_out, b_out
    raise SimulationError(f"unknown mitigation kind {mit.kind!r}")


def matmul(cfg: SAConfig, X, W, states: PEStates | None = None):
    """One matrix product through the array, updating per-PE stress state.

    Returns (product, states). The product is always the exact integer matrix
    product. For transparent mitigations (none/oracle/sm/ensemble) the
    netlist-evaluated per-pair products are asserted against host integer
    multiplication; TRNG/ZBP rewrite operands for stress accounting only and
    make no output-correctness claim.
    """
    X = np.asarray(X, dtype=np.int64)
    W = np.asarray(W, dtype=np.int64)
    if states is None:
        states = PEStates(cfg)
    xe, we = _encode_matrices(cfg, X[None, :, :], W[None, :, :])
    a2d, b2d = _pe_streams(xe, we)
    a2, b2 = _transform_streams(cfg, states, a2d, b2d)
    zeros, outputs = group_zero_counts(cfg.netlist(), a2, b2)
    states.zero_count += zeros
    states.vectors += a2.shape[1]

    if cfg.mitigation.kind in TRANSPARENT_KINDS:
        av = to_signed(a2d.reshape(-1), cfg.width)
        bv = to_signed(b2d.reshape(-1), cfg.width)
        expect = (av * bv).reshape(a2d.shape)
        if not np.array_equal(outputs, expect):
            raise SimulationError("netlist product differs from integer product")
    product = X @ W
    return product, states


def _draw_matrices(cfg: SAConfig, seed: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    words = raw_words(seed, 0, 2 * m * cfg.d * cfg.d)
    mask = np.uint64((1 << cfg.width) - 1)
    pats = (words & mask).reshape(2, m, cfg.d, cfg.d)
    return pats[0], pats[1]


def _pe_lifetimes(alphas: np.ndarray, pv: np.ndarray, params: AgingParams) -> np.ndarray:
    lives = site_lifetimes(alphas.reshape(-1), pv.reshape(-1), params)
    return lives.reshape(alphas.shape).min(axis=1)


def _dispatch_selectors(cfg: SAConfig, alphas: np.ndarray, pv: np.ndarray) -> list:
    """Per-PE selector choice from the PE's no-mitigation first-to-fail set,
    standing in for a built-in self-test measurement at deployment."""
    from .selector import dispatch
    lives = site_lifetimes(alphas.reshape(-1), pv.reshape(-1), cfg.params)
    lives = lives.reshape(alphas.shape)
    tol = cfg.params.f2f_tolerance
    selectors = []
    for pe in range(alphas.shape[0]):
        t_min = lives[pe].min()
        if math.isinf(t_min):
            members = frozenset(np.flatnonzero(np.isinf(lives[pe])).tolist())
        else:
            members = frozenset(np.flatnonzero(lives[pe] <= (1 + tol) * t_min).tolist())
        selectors.append(dispatch(cfg.mitigation.ensemble, members))
    return selectors


def _iteration_alphas(cfg: SAConfig, netlist: Netlist, states: PEStates,
                      xe, we, policy_seed: int) -> np.ndarray:
    a2d, b2d = _pe_streams(xe, we)
    if cfg.mitigation.kind == "ensemble" and states.selectors is None:
        # First pass (no mitigation) locates each PE's first-to-fail set.
        zeros0, _ = group_zero_counts(netlist, a2d, b2d)
        alphas0 = zeros0 / a2d.shape[1]
        states.selectors = _dispatch_selectors(cfg, alphas0, states.pv)
    a2, b2 = _transform_streams(cfg, states, a2d, b2d, policy_seed)
    zeros, _ = group_zero_counts(netlist, a2, b2)
    states.zero_count += zeros
    states.vectors += a2.shape[1]
    return states.zero_count / states.vectors[:, None]


def sa_lifetime(cfg: SAConfig, pv: PvSample, *, matrices=None, seed: int = 0,
                lifetime_fn=None) -> tuple[float, tuple[int, int]]:
    """Array lifetime for one process-variation sample: the time of the first
    PE (multiplier) failure, plus that PE's coordinates."""
    netlist = cfg.netlist()
    n_sites = len(netlist.site_input_nets())
    pv2d = pv.delta.reshape(cfg.d * cfg.d, n_sites)
    states = PEStates(cfg, pv=pv2d)
    if matrices is None:
        xe, we = _draw_matrices(cfg, seed, cfg.matrices_per_iteration)
    else:
        xe, we = _encode_matrices(cfg, np.asarray(matrices[0], dtype=np.int64),
                                  np.asarray(matrices[1], dtype=np.int64))
    alphas = _iteration_alphas(cfg, netlist, states, xe, we, policy_seed=seed)
    if lifetime_fn is not None:
        life, pe = lifetime_fn(alphas, pv2d, cfg.params)
    else:
        per_pe = _pe_lifetimes(alphas, pv2d, cfg.params)
        pe = int(np.argmin(per_pe))
        life = float(per_pe[pe])
    return life, (pe // cfg.d, pe % cfg.d)


@dataclass
class LifetimeStats:
    """Per-iteration array lifetimes from a Monte Carlo run."""

    lifetimes: np.ndarray
    argmin_pe: np.ndarray           # (iterations, 2) row/col
    bins: int = 20
    normalization_ref: str | None = None

    @property
    def iterations(self) -> int:
        return len(self.lifetimes)

    @property
    def mean(self) -> float:
        return float(np.mean(self.lifetimes))

    @property
    def std(self) -> float:
        return float(np.std(self.lifetimes))

    @property
    def min(self) -> float:
        return float(np.min(self.lifetimes))

    @property
    def max(self) -> float:
        return float(np.max(self.lifetimes))

    def histogram(self) -> tuple[np.ndarray, np.ndarray]:
        return np.histogram(self.lifetimes, bins=self.bins)


def monte_carlo(cfg: SAConfig, iterations: int, seed: int,
                lifetime_fn=None) -> LifetimeStats:
    """Monte Carlo over process variation and workload draws.

    Each iteration samples fresh per-PE threshold shifts and a fresh matrix
    stream from seeds derived as (seed, iteration), so runs with a shared seed
    are paired across mitigation arms. Deterministic given the seed.
    """
    if iterations < 1:
        raise SimulationError("need at least one iteration")
    netlist = cfg.netlist()
    n_sites = len(netlist.site_input_nets())
    children = np.random.SeedSequence(seed).spawn(iterations)
    lifetimes = np.empty(iterations)
    argmins = np.empty((iterations, 2), dtype=np.int64)
    for i in range(iterations):
        pv_seed, wl_seed, pol_seed = (int(s.generate_state(1, dtype=np.uint64)[0])
                                      for s in children[i].spawn(3))
        pv = sample_pv(cfg.params, cfg.d * cfg.d * n_sites, pv_seed)
        pv2d = pv.delta.reshape(cfg.d * cfg.d, n_sites)
        states = PEStates(cfg, pv=pv2d)
        xe, we = _draw_matrices(cfg, wl_seed, cfg.matrices_per_iteration)
        alphas = _iteration_alphas(cfg, netlist, states, xe, we, pol_seed)
        if lifetime_fn is not None:
            life, pe = lifetime_fn(alphas, pv2d, cfg.params)
        else:
            per_pe = _pe_lifetimes(alphas, pv2d, cfg.params)
            pe = int(np.argmin(per_pe))
            life = float(per_pe[pe])
        lifetimes[i] = life
        argmins[i] = (pe // cfg.d, pe % cfg.d)
    return LifetimeStats(lifetimes=lifetimes, argmin_pe=argmins,
                         bins=cfg.histogram_bins)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def stats_to_csv(stats: LifetimeStats, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "lifetime_seconds", "argmin_pe_row", "argmin_pe_col"])
        for i, (life, (r, c)) in enumerate(zip(stats.lifetimes, stats.argmin_pe)):
            w.writerow([i, repr(float(life)), int(r), int(c)])


def stats_to_json(stats: LifetimeStats, path) -> None:
    doc = {
        "iterations": stats.iterations,
        "mean_lifetime_seconds": stats.mean,
        "std_lifetime_seconds": stats.std,
        "min_lifetime_seconds": stats.min,
        "max_lifetime_seconds": stats.max,
        "histogram_bins": stats.bins,
        "normalization_ref": stats.normalization_ref,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def histogram_to_csv(stats: LifetimeStats, path) -> None:
    counts, edges = stats.histogram()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo_seconds", "bin_hi_seconds", "count"])
        for i, c in enumerate(counts):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])
