"""Ideal selector construction: when does joint negation reduce stress?

The selector table holds one boolean per input pair (A, B), indexed by the
2*width-bit concatenation (A << width) | B: True means "multiply (-A, -B)
instead". It is built by an iterative search: identify the first-to-fail
sites under no mitigation, mark every input whose negated form puts strictly
less static stress on those sites, re-profile under the candidate table, and
widen the protected set with any newly exposed first-to-fail sites until the
set stabilizes. The protected set grows monotonically and is bounded by the
site count, so the search terminates.

Inputs where either operand is the minimum two's-complement value are forced
False: that pattern is its own negation modulo 2^width, so the transform
would change the signed product.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .aging import AgingParams, PvSample, F2FSet, circuit_lifetime
from .logicsim import (DeciderPolicy, NonePolicy, SimulationError, WorkloadSpec,
                       evaluate_pairs, negate, profile_alpha, stressed_sites)
from .netlist import Netlist
from .rng import derive_seed, raw_words

__all__ = ["OracleTable", "OracleError", "static_stress", "build_oracle",
           "apply_transform", "save_oracle", "load_oracle"]

DENSE_WIDTH_LIMIT = 12          # dense table up to 2^(2*12) entries
EXHAUSTIVE_WIDTH_LIMIT = 8      # enumerate every pair up to this width
DEFAULT_SAMPLE_SIZE = 1 << 20


class OracleError(ValueError):
    pass


@dataclass
class OracleTable:
    """Per-input transform decisions plus the provenance of their search."""

    width: int
    dense: bool
    labels: np.ndarray | None = None          # bool, 2^(2w), dense form
    sample_index: np.ndarray | None = None    # sorted uint64, sampled form
    sample_labels: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dense:
            expect = 1 << (2 * self.width)
            if self.labels is None or len(self.labels) != expect:
                raise OracleError(f"dense table must have {expect} entries")
        else:
            if self.sample_index is None or self.sample_labels is None:
                raise OracleError("sampled table needs index and label arrays")

    @property
    def n_entries(self) -> int:
        return len(self.labels) if self.dense else len(self.sample_index)

    def domain_indices(self) -> np.ndarray:
        if self.dense:
            return np.arange(1 << (2 * self.width), dtype=np.uint64)
        return self.sample_index

    def lookup(self, idx: np.ndarray) -> np.ndarray:
        """Decisions for concatenated-pair indices; off-domain samples are False."""
        idx = np.asarray(idx, dtype=np.uint64)
        if self.dense:
            return self.labels[idx]
        pos = np.searchsorted(self.sample_index, idx)
        pos = np.clip(pos, 0, len(self.sample_index) - 1)
        hit = self.sample_index[pos] == idx
        return np.where(hit, self.sample_labels[pos], False)

    def decide_batch(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        idx = (np.asarray(a, dtype=np.uint64) << np.uint64(self.width)) | np.asarray(b, dtype=np.uint64)
        return self.lookup(idx)

    def decide(self, a: int, b: int) -> bool:
        return bool(self.decide_batch(np.array([a], dtype=np.uint64),
                                      np.array([b], dtype=np.uint64))[0])

    def true_fraction(self) -> float:
        lab = self.labels if self.dense else self.sample_labels
        return float(np.mean(lab))


def static_stress(netlist: Netlist, sites, pair) -> int:
    """Number of the given sites stressed (gate input 0) by one input pair."""
    members = sites.sites if isinstance(sites, F2FSet) else frozenset(sites)
    return len(stressed_sites(netlist, pair) & members)


def apply_transform(decider, pair):
    """Route one input pair through a decider: either both operands are
    negated or neither is; the signed product is unchanged."""
    a, b = pair
    if decider.decide(a, b):
        w = decider.width
        return negate(a, w), negate(b, w)
    return a, b


def _stress_per_input(batch, site_nets: np.ndarray, members: frozenset[int]) -> np.ndarray:
    """Stressed-member count for every vector of an evaluated batch."""
    counts = np.zeros(batch.n, dtype=np.int64)
    nets, mult = np.unique(site_nets[sorted(members)], return_counts=True)
    for net, m in zip(nets, mult):
        counts += int(m) * (1 - batch.net_bits(int(net)).astype(np.int64))
    return counts


def build_oracle(netlist: Netlist, params: AgingParams, pv: PvSample,
                 workload: WorkloadSpec, sample_size: int = DEFAULT_SAMPLE_SIZE,
                 dense_width_limit: int = DENSE_WIDTH_LIMIT) -> OracleTable:
    """Run the iterative selector search against a netlist.

    ``workload`` drives the stress profiling used to locate first-to-fail
    sites (initially and after each candidate table). Pairs are enumerated
    exhaustively up to width 8 and sampled (seeded, ``sample_size`` pairs)
    above that. Only signed architectures are accepted: the transform changes
    unsigned products.
    """
    if not netlist.signed:
        raise OracleError(f"arch {netlist.arch!r} is not signed; joint negation "
                          "would corrupt outputs")
    if workload.count < 1:
        raise OracleError("empty profiling workload")
    w = netlist.width
    minval = 1 << (w - 1)

    if w <= EXHAUSTIVE_WIDTH_LIMIT:
        idx = np.arange(1 << (2 * w), dtype=np.uint64)
        sample_seed = None
    else:
        sample_seed = derive_seed(workload.seed, 0xD0)
        words = raw_words(sample_seed, 0, sample_size)
        idx = np.unique(words & np.uint64((1 << (2 * w)) - 1))
    a_dom = idx >> np.uint64(w)
    b_dom = idx & np.uint64((1 << w) - 1)
    guard = (a_dom == minval) | (b_dom == minval)

    # Net values over the candidate domain do not depend on the protected set,
    # so both encodings are evaluated once and reused across iterations.
    batch_plain = evaluate_pairs(netlist, a_dom, b_dom)
    batch_neg = evaluate_pairs(netlist, negate(a_dom, w), negate(b_dom, w))
    site_nets = netlist.site_input_nets()

    prof0 = profile_alpha(netlist, workload, NonePolicy(), t_data=params.t_data)
    _, f2f = circuit_lifetime(prof0, pv, params)
    protected = set(f2f.sites)
    history = [frozenset(protected)]

    labels = np.zeros(len(idx), dtype=bool)
    n_sites = len(site_nets)
    iterations = 0
    while True:
        iterations += 1
        stress_plain = _stress_per_input(batch_plain, site_nets, frozenset(protected))
        stress_neg = _stress_per_input(batch_neg, site_nets, frozenset(protected))
        labels = (stress_neg < stress_plain) & ~guard

        table = _make_table(netlist.width, idx, labels, dense_width_limit)
        prof = profile_alpha(netlist, workload, DeciderPolicy(table), t_data=params.t_data)
        _, f2f_new = circuit_lifetime(prof, pv, params)
        if f2f_new.sites <= protected:
            break
        protected |= f2f_new.sites
        history.append(frozenset(protected))
        if iterations > n_sites:
            raise OracleError("selector search failed to terminate")  # unreachable

    table.provenance = {
        "iterations": iterations,
        "f2f_history": [sorted(h) for h in history],
        "workload": {"source": workload.source, "seed": workload.seed,
                     "count": workload.count},
        "pv_seed": pv.seed,
        "sample_seed": sample_seed,
        # Candidate decisions are scored by re-profiling the operating stress
        # under the candidate table before re-running failure identification.
        "update_rule": "reprofile-under-candidate-table",
    }
    return table


def _make_table(width: int, idx: np.ndarray, labels: np.ndarray,
                dense_width_limit: int) -> OracleTable:
    if width <= dense_width_limit:
        dense = np.zeros(1 << (2 * width), dtype=bool)
        dense[idx] = labels
        return OracleTable(width=width, dense=True, labels=dense)
    return OracleTable(width=width, dense=False, sample_index=idx,
                       sample_labels=labels.copy())


# ---------------------------------------------------------------------------
# Binary wire format
# ---------------------------------------------------------------------------

_MAGIC = b"MULO"
_HEADER = struct.Struct("<4sHHHHQQQ")  # magic, version, width, flags, iterations,
_VERSION = 1                           # profile seed, profile count, n_entries


def save_oracle(table: OracleTable, path) -> None:
    prov = table.provenance or {}
    wl = prov.get("workload", {})
    flags = 1 if table.dense else 0
    header = _HEADER.pack(_MAGIC, _VERSION, table.width, flags,
                          int(prov.get("iterations", 0)),
                          int(wl.get("seed", 0)) & 0xFFFFFFFFFFFFFFFF,
                          int(wl.get("count", 0)), table.n_entries)
    with open(path, "wb") as fh:
        fh.write(header)
        if table.dense:
            fh.write(np.packbits(table.labels, bitorder="little").tobytes())
        else:
            fh.write(table.sample_index.astype("<u8").tobytes())
            fh.write(np.packbits(table.sample_labels, bitorder="little").tobytes())


def load_oracle(path) -> OracleTable:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise OracleError(f"truncated selector-table file: {path}")
        magic, version, width, flags, iterations, seed, count, n_entries = _HEADER.unpack(head)
        if magic != _MAGIC or version != _VERSION:
            raise OracleError(f"not a selector-table file: {path}")
        prov = {"iterations": iterations,
                "workload": {"source": "uniform", "seed": seed, "count": count}}
        if flags & 1:
            raw = fh.read((n_entries + 7) // 8)
            labels = np.unpackbits(np.frombuffer(raw, dtype=np.uint8),
                                   bitorder="little")[:n_entries].astype(bool)
            return OracleTable(width=width, dense=True, labels=labels, provenance=prov)
        raw_idx = fh.read(8 * n_entries)
        index = np.frombuffer(raw_idx, dtype="<u8").astype(np.uint64)
        raw_lab = fh.read((n_entries + 7) // 8)
        labels = np.unpackbits(np.frombuffer(raw_lab, dtype=np.uint8),
                               bitorder="little")[:n_entries].astype(bool)
        return OracleTable(width=width, dense=False, sample_index=index,
                           sample_labels=labels, provenance=prov)
