"""Hardware-friendly selector modules approximating the ideal table.

A selector module reads k chosen bits of the concatenated operand pair and
outputs whether to apply the joint negation. Bits are ranked by the phi
coefficient (binary-binary association) between bit value and table label;
the k-bit truth table takes the majority label over matching table entries;
the minimized two-level cover comes from exact Quine-McCluskey and is mapped
to {INV, NAND2, NOR2} for overhead estimates. A guard forcing False whenever
either operand is the minimum two's-complement value wraps the Boolean core,
keeping the transform product-preserving.

Ensembles hold one selector per first-to-fail signature; at deployment the
member with the highest Jaccard similarity to the measured signature is
dispatched.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import qm
from .aging import AgingParams, F2FSet, PvSample, circuit_lifetime
from .logicsim import (NonePolicy, WorkloadSpec, evaluate_pairs, profile_alpha,
                       run_packed, _pack_bits)
from .netlist import Netlist, _Builder
from .oracle import OracleTable, build_oracle

__all__ = [
    "SelectorFn", "Ensemble", "OverheadReport", "SelectorError",
    "bit_scores", "synthesize", "f1", "build_ensemble", "dispatch", "overhead",
    "selector_to_json", "selector_from_json", "save_selector", "load_selector",
]

log = logging.getLogger(__name__)

MIN_SAMPLED_ENTRIES = 10_000
MAX_ENSEMBLE = 8


class SelectorError(ValueError):
    pass


@dataclass
class SelectorFn:
    """k-bit Boolean approximation of a selector table.

    ``bits`` are positions within the 2*width-bit concatenation
    (A << width) | B, so position 0 is B's LSB and position 2*width-1 is A's
    MSB, listed best-scoring first. ``table`` is indexed by the k-bit pattern
    whose bit j is the value at position bits[j].
    """

    width: int
    bits: tuple[int, ...]
    table: np.ndarray
    cover: tuple[qm.Term, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= len(self.bits) <= 2 * self.width:
            raise SelectorError("need 1 <= k <= 2*width chosen bits")
        if len(self.table) != 1 << len(self.bits):
            raise SelectorError("truth table size must be 2^k")
        for pattern in range(1 << len(self.bits)):
            if bool(self.table[pattern]) != qm.eval_cover(self.cover, pattern):
                raise SelectorError("minimized cover does not match truth table")

    @property
    def k(self) -> int:
        return len(self.bits)

    def patterns(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.uint64)
        pat = np.zeros(idx.shape, dtype=np.int64)
        for j, pos in enumerate(self.bits):
            pat |= ((idx >> np.uint64(pos)) & np.uint64(1)).astype(np.int64) << j
        return pat

    def decide_batch(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=np.uint64)
        b = np.asarray(b, dtype=np.uint64)
        idx = (a << np.uint64(self.width)) | b
        raw = self.table[self.patterns(idx)]
        minval = np.uint64(1 << (self.width - 1))
        return raw & (a != minval) & (b != minval)

    def decide(self, a: int, b: int) -> bool:
        return bool(self.decide_batch(np.array([a], dtype=np.uint64),
                                      np.array([b], dtype=np.uint64))[0])

    def is_constant_false(self) -> bool:
        return not bool(np.any(self.table))


@dataclass
class Ensemble:
    """Selector modules keyed by the first-to-fail signature they protect,
    ordered by how often that signature occurred among the build scenarios."""

    members: tuple[tuple[frozenset[int], SelectorFn], ...]

    def __post_init__(self):
        if not 1 <= len(self.members) <= MAX_ENSEMBLE:
            raise SelectorError(f"ensemble size must be in [1, {MAX_ENSEMBLE}]")
        sigs = [sig for sig, _ in self.members]
        if len(set(sigs)) != len(sigs):
            raise SelectorError("ensemble signatures must be distinct")

    @property
    def size(self) -> int:
        return len(self.members)


def _domain(o: OracleTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = o.domain_indices()
    labels = o.labels if o.dense else o.sample_labels
    return idx, labels.astype(bool), idx


def bit_scores(o: OracleTable) -> np.ndarray:
    """|phi| association between each concatenation bit and the table label."""
    if not o.dense and o.n_entries < MIN_SAMPLED_ENTRIES:
        raise SelectorError(f"sampled table too small for bit scoring "
                            f"({o.n_entries} < {MIN_SAMPLED_ENTRIES})")
    idx, labels, _ = _domain(o)
    n = float(len(idx))
    n_pos = float(np.count_nonzero(labels))
    if n_pos == 0 or n_pos == n:
        log.warning("degenerate selector table (all-%s); bit scores are 0",
                    "True" if n_pos else "False")
        return np.zeros(2 * o.width)
    scores = np.zeros(2 * o.width)
    for pos in range(2 * o.width):
        x = ((idx >> np.uint64(pos)) & np.uint64(1)).astype(bool)
        n1 = float(np.count_nonzero(x))
        n11 = float(np.count_nonzero(x & labels))
        n10 = n1 - n11
        n01 = n_pos - n11
        n00 = n - n1 - n01
        denom = n1 * (n - n1) * n_pos * (n - n_pos)
        scores[pos] = abs(n11 * n00 - n10 * n01) / np.sqrt(denom) if denom > 0 else 0.0
    return scores


def synthesize(o: OracleTable, k: int) -> SelectorFn:
    """Compress a selector table to its top-k bits.

    Bit choice: highest |phi| first, ties to the lower position. Truth table:
    strict-majority label over all table entries matching each k-bit pattern
    (ties and unseen patterns go False). The cover is exact-minimized and
    verified equivalent to the truth table over all 2^k patterns.
    """
    if not 1 <= k <= 2 * o.width:
        raise SelectorError(f"k must be in [1, {2 * o.width}], got {k}")
    scores = bit_scores(o)
    order = sorted(range(2 * o.width), key=lambda j: (-scores[j], j))
    bits = tuple(order[:k])

    idx, labels, _ = _domain(o)
    pat = np.zeros(idx.shape, dtype=np.int64)
    for j, pos in enumerate(bits):
        pat |= ((idx >> np.uint64(pos)) & np.uint64(1)).astype(np.int64) << j
    totals = np.bincount(pat, minlength=1 << k)
    trues = np.bincount(pat, weights=labels.astype(np.float64), minlength=1 << k)
    table = (2 * trues) > totals

    cover = qm.minimize(k, np.flatnonzero(table).tolist())
    return SelectorFn(width=o.width, bits=bits, table=table, cover=cover,
                      provenance={"bit_scores": [float(s) for s in scores],
                                  "k": k,
                                  "table_iterations": o.provenance.get("iterations")})


def f1(s: SelectorFn, o: OracleTable) -> float:
    """F1 of the selector's True decisions against the table, over its domain."""
    if s.width != o.width:
        raise SelectorError("selector and table widths differ")
    idx, labels, _ = _domain(o)
    a = idx >> np.uint64(o.width)
    b = idx & np.uint64((1 << o.width) - 1)
    pred = s.decide_batch(a, b)
    tp = float(np.count_nonzero(pred & labels))
    fp = float(np.count_nonzero(pred & ~labels))
    fn = float(np.count_nonzero(~pred & labels))
    if tp == 0.0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def build_ensemble(netlist: Netlist, params: AgingParams,
                   pv_scenarios: list[PvSample], p_members: int, *,
                   k: int, workload: WorkloadSpec) -> Ensemble:
    """Cluster scenarios by first-to-fail signature and synthesize one
    selector per signature, most frequent first.

    Returns fewer members (with a warning) when the scenarios exhibit fewer
    distinct signatures than requested.
    """
    if p_members < 1:
        raise SelectorError("ensemble needs at least one member")
    if not pv_scenarios:
        raise SelectorError("no process-variation scenarios given")
    prof0 = profile_alpha(netlist, workload, NonePolicy(), t_data=params.t_data)
    signatures: list[frozenset[int]] = []
    for pv in pv_scenarios:
        _, f2f = circuit_lifetime(prof0, pv, params)
        signatures.append(f2f.sites)

    counts = Counter(signatures)
    first_seen = {}
    for i, sig in enumerate(signatures):
        first_seen.setdefault(sig, i)
    ranked = sorted(counts, key=lambda sig: (-counts[sig], first_seen[sig]))
    if len(ranked) < p_members:
        log.warning("only %d distinct first-to-fail signatures for %d requested members",
                    len(ranked), p_members)
    take = ranked[:min(p_members, len(ranked), MAX_ENSEMBLE)]

    members = []
    for sig in take:
        rep = pv_scenarios[first_seen[sig]]
        table = build_oracle(netlist, params, rep, workload)
        members.append((sig, synthesize(table, k)))
    return Ensemble(members=tuple(members))


def _jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 1.0
    union = a | b
    return len(a & b) / len(union)


def dispatch(e: Ensemble, measured) -> SelectorFn:
    """Member whose signature is most similar (Jaccard) to the measured
    first-to-fail set; ties break toward the earlier (more frequent) member."""
    sites = measured.sites if isinstance(measured, F2FSet) else frozenset(measured)
    best_i = 0
    best_sim = -1.0
    for i, (sig, _) in enumerate(e.members):
        sim = _jaccard(sig, sites)
        if sim > best_sim:
            best_sim, best_i = sim, i
    return e.members[best_i][1]


# ---------------------------------------------------------------------------
# Overhead estimation: map the cover to {INV, NAND2, NOR2}
# ---------------------------------------------------------------------------

@dataclass
class OverheadReport:
    sm_gate_count: int
    sm_depth: int
    ref_gate_count: int
    ref_depth: int
    area_ratio: float
    delay_ratio: float
    power_ratio: float
    sm_activity: float
    ref_activity: float


def cover_to_netlist(cover, k: int) -> Netlist | None:
    """Realize a sum-of-products cover in the cell basis.

    Product terms and the output OR are built as polarity-alternating
    NAND/NOR trees (De Morgan pairing), with input inverters shared across
    terms. Constant covers return None: a tied-off output needs no gates.
    """
    if not cover or any(len(t) == 0 for t in cover):
        return None
    b = _Builder()
    pis = [b.pi(f"x{j}") for j in range(k)]

    def and_reduce(sigs: list[tuple[int, bool]]) -> tuple[int, bool]:
        # Signal (net, neg): logical value is net's value, complemented if neg.
        level = sigs
        while len(level) > 1:
            nxt = []
            for i in range(0, len(level) - 1, 2):
                n1, neg1 = level[i]
                n2, neg2 = level[i + 1]
                if neg1 and neg2:
                    nxt.append((b.nor(n1, n2), False))
                else:
                    if neg1:
                        n1 = b.inv(n1)
                    if neg2:
                        n2 = b.inv(n2)
                    nxt.append((b.nand(n1, n2), True))
            if len(level) % 2:
                nxt.append(level[-1])
            level = nxt
        return level[0]

    inv_terms = []
    for term in cover:
        sigs = [(pis[var], val == 0) for var, val in term]
        net, neg = and_reduce(sigs)
        inv_terms.append((net, not neg))          # ¬term
    out_net, out_neg = and_reduce(inv_terms)       # AND of ¬terms = ¬OR(terms)
    f_net = out_net if out_neg else b.inv(out_net)
    return b.finish("selector_cover", k, [f_net])


def _activity(netlist: Netlist, pi_values: dict[int, int], n: int) -> float:
    """Switching-activity proxy: sum over gates of 2*p0*p1 of the output net,
    with bit probabilities taken from the supplied input distribution."""
    batch = run_packed(netlist, pi_values, n)
    total = 0.0
    for g in netlist.gates:
        ones = batch.values[g.out].bit_count()
        p1 = ones / n
        total += 2.0 * p1 * (1.0 - p1)
    return total


def overhead(s: SelectorFn, reference: Netlist,
             activity_samples: int = 1 << 16, seed: int = 0xAC) -> OverheadReport:
    """Gate-count / unit-depth / switching-activity ratios against a
    reference multiplier, under uniform random inputs. The min-value guard is
    shared datapath logic, not part of the Boolean core, and is excluded."""
    sm_net = cover_to_netlist(s.cover, s.k)
    ref_gates = len(reference.gates)
    ref_depth = reference.depth()

    wl_count = min(activity_samples, 1 << (2 * reference.width))
    wl = WorkloadSpec.uniform(reference.width, wl_count, seed)
    if reference.width <= 8:
        a = np.arange(1 << reference.width, dtype=np.uint64)
        grid = np.stack(np.meshgrid(a, a, indexing="ij"), axis=-1).reshape(-1, 2)
        wl = WorkloadSpec.explicit(reference.width, grid)
    av, bv = wl.vectors(0, wl.count)
    ref_batch = evaluate_pairs(reference, av, bv)
    ref_act = 0.0
    for g in reference.gates:
        p1 = ref_batch.values[g.out].bit_count() / wl.count
        ref_act += 2.0 * p1 * (1.0 - p1)

    if sm_net is None:
        return OverheadReport(sm_gate_count=0, sm_depth=0,
                              ref_gate_count=ref_gates, ref_depth=ref_depth,
                              area_ratio=0.0, delay_ratio=0.0, power_ratio=0.0,
                              sm_activity=0.0, ref_activity=ref_act)

    n = 1 << s.k
    patterns = np.arange(n, dtype=np.uint64)
    roles = sm_net.input_net_by_role()
    pi_values = {roles[f"x{j}"]: _pack_bits(((patterns >> np.uint64(j)) & np.uint64(1)).astype(np.uint8))
                 for j in range(s.k)}
    sm_act = _activity(sm_net, pi_values, n)
    sm_gates = len(sm_net.gates)
    sm_depth = sm_net.depth()
    return OverheadReport(
        sm_gate_count=sm_gates, sm_depth=sm_depth,
        ref_gate_count=ref_gates, ref_depth=ref_depth,
        area_ratio=sm_gates / ref_gates, delay_ratio=sm_depth / ref_depth,
        power_ratio=sm_act / ref_act if ref_act > 0 else 0.0,
        sm_activity=sm_act, ref_activity=ref_act)


# ---------------------------------------------------------------------------
# JSON wire format
# ---------------------------------------------------------------------------

def selector_to_json(s: SelectorFn) -> str:
    doc = {
        "width": s.width,
        "bits": list(s.bits),
        "tt": np.packbits(s.table, bitorder="little").tobytes().hex(),
        # Literal encoding: +(j+1) for pattern bit j, -(j+1) for its complement.
        "cover": [[(v + 1) if val else -(v + 1) for v, val in term] for term in s.cover],
        "guard": True,
    }
    return json.dumps(doc, sort_keys=True)


def selector_from_json(text: str) -> SelectorFn:
    doc = json.loads(text)
    k = len(doc["bits"])
    raw = bytes.fromhex(doc["tt"])
    table = np.unpackbits(np.frombuffer(raw, dtype=np.uint8),
                          bitorder="little")[:1 << k].astype(bool)
    cover = tuple(tuple((abs(lit) - 1, 1 if lit > 0 else 0) for lit in term)
                  for term in doc["cover"])
    return SelectorFn(width=int(doc["width"]), bits=tuple(doc["bits"]),
                      table=table, cover=cover)


def save_selector(s: SelectorFn, path) -> None:
    with open(path, "w") as fh:
        fh.write(selector_to_json(s))
        fh.write("\n")


def load_selector(path) -> SelectorFn:
    with open(path) as fh:
        return selector_from_json(fh.read())
