"""Netlist evaluation and per-PMOS stress (alpha) accounting.

The evaluator is bit-parallel: the values a net takes across a batch of input
vectors are packed into one arbitrary-precision integer (bit v = value under
vector v), so a whole workload chunk propagates through a gate with a single
bitwise operation. A PMOS site's zero-count is then the number of clear bits
in its driving net's packed value.

Stress is accounted per applied vector (static zero-probability); the aging
law consumes only alpha * time products, so transition/glitch effects are out
of model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .netlist import GateKind, Netlist, NetlistError

__all__ = [
    "InputPair", "WorkloadSpec", "StressProfile", "SimulationError",
    "negate", "to_signed", "evaluate", "evaluate_pairs", "stressed_sites",
    "TransformPolicy", "NonePolicy", "DeciderPolicy", "TrngPolicy", "ZbpPolicy",
    "profile_alpha", "group_zero_counts", "profile_to_csv", "profile_from_csv",
]

# An input pair is the two operand bit patterns (a, b), each fitting the
# netlist width; interpretation (unsigned or two's-complement) follows the
# architecture tag.
InputPair = tuple[int, int]

DEFAULT_T_DATA = 1e-8  # seconds per applied vector (100 MHz-class operation)

_OP_INV, _OP_NAND, _OP_NOR = 0, 1, 2
_OPCODE = {GateKind.INV: _OP_INV, GateKind.NAND2: _OP_NAND, GateKind.NOR2: _OP_NOR}

_POP8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


class SimulationError(ValueError):
    """Raised for width mismatches and malformed workloads."""


def negate(x, width: int):
    """Two's-complement negation modulo 2**width (scalar int or uint64 array)."""
    if isinstance(x, np.ndarray):
        mask = np.uint64((1 << width) - 1)
        return (~x + np.uint64(1)) & mask
    return ((1 << width) - x) & ((1 << width) - 1)


def to_signed(x, bits: int):
    """Decode an unsigned pattern (scalar or array) as two's complement."""
    if isinstance(x, np.ndarray):
        if bits == 64:
            return x.astype(np.uint64).view(np.int64)
        v = x.astype(np.int64)
        return v - ((v >> (bits - 1)) << bits)
    return x - (1 << bits) if x >= (1 << (bits - 1)) else x


# ---------------------------------------------------------------------------
# Bit-parallel core
# ---------------------------------------------------------------------------

def _program(netlist: Netlist) -> list[tuple[int, int, int, int]]:
    prog = netlist._caches.get("program")
    if prog is None:
        from .netlist import _topo_order
        prog = [(_OPCODE[g.kind], g.ins[0], g.ins[-1], g.out) for g in _topo_order(netlist)]
        netlist._caches["program"] = prog
    return prog


def _pack_bits(bits: np.ndarray) -> int:
    return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")


def _unpack_bits(value: int, n: int) -> np.ndarray:
    raw = value.to_bytes((n + 7) // 8, "little")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:n]


class NetBatch:
    """Per-net packed values for one evaluated batch of input vectors."""

    def __init__(self, netlist: Netlist, values: list, n_vectors: int):
        self.netlist = netlist
        self.values = values
        self.n = n_vectors

    def net_bits(self, net: int) -> np.ndarray:
        return _unpack_bits(self.values[net], self.n)

    def zeros_per_net(self) -> np.ndarray:
        n = self.n
        return np.array([n - v.bit_count() if v is not None else 0 for v in self.values],
                        dtype=np.int64)

    def site_zero_counts(self) -> np.ndarray:
        zeros = self.zeros_per_net()
        return zeros[self.netlist.site_input_nets()]

    def group_ones_per_net(self, net: int, group_bytes: int) -> np.ndarray:
        """Popcount of each consecutive ``group_bytes`` slice of a net's bits."""
        total = self.values[net].to_bytes((self.n + 7) // 8, "little")
        arr = np.frombuffer(total, dtype=np.uint8)
        return _POP8[arr].reshape(-1, group_bytes).sum(axis=1, dtype=np.int64)

    def outputs(self) -> np.ndarray:
        """Primary-output words (uint64), bit i from output net i."""
        out = np.zeros(self.n, dtype=np.uint64)
        for i, po in enumerate(self.netlist.primary_outputs):
            out |= _unpack_bits(self.values[po], self.n).astype(np.uint64) << np.uint64(i)
        return out

    def decoded_outputs(self) -> np.ndarray:
        words = self.outputs()
        nbits = len(self.netlist.primary_outputs)
        if self.netlist.signed:
            return to_signed(words, nbits)
        return words


def run_packed(netlist: Netlist, pi_values: dict[int, int], n_vectors: int) -> NetBatch:
    """Propagate packed primary-input values through the netlist."""
    mask = (1 << n_vectors) - 1
    values: list = [None] * netlist.n_nets
    for net, val in pi_values.items():
        values[net] = val & mask
    for op, i0, i1, out in _program(netlist):
        if op == _OP_INV:
            values[out] = ~values[i0] & mask
        elif op == _OP_NAND:
            values[out] = ~(values[i0] & values[i1]) & mask
        else:
            values[out] = ~(values[i0] | values[i1]) & mask
    return NetBatch(netlist, values, n_vectors)


def _pack_operands(netlist: Netlist, a: np.ndarray, b: np.ndarray,
                   cin: np.ndarray | None = None) -> dict[int, int]:
    roles = netlist.input_net_by_role()
    w = netlist.width
    pi_values: dict[int, int] = {}
    for i in range(w):
        pi_values[roles[f"a{i}"]] = _pack_bits(((a >> np.uint64(i)) & np.uint64(1)).astype(np.uint8))
        pi_values[roles[f"b{i}"]] = _pack_bits(((b >> np.uint64(i)) & np.uint64(1)).astype(np.uint8))
    if "cin" in roles:
        if cin is None:
            cin = np.zeros(len(a), dtype=np.uint64)
        pi_values[roles["cin"]] = _pack_bits((cin & np.uint64(1)).astype(np.uint8))
    return pi_values


def _check_pair_width(netlist: Netlist, a, b) -> None:
    lim = 1 << netlist.width
    amax = int(np.max(a)) if isinstance(a, np.ndarray) else a
    bmax = int(np.max(b)) if isinstance(b, np.ndarray) else b
    if not (0 <= amax < lim and 0 <= bmax < lim):
        raise SimulationError(f"input does not fit width {netlist.width}")


def evaluate_pairs(netlist: Netlist, a: np.ndarray, b: np.ndarray,
                   cin: np.ndarray | None = None) -> NetBatch:
    """Evaluate a batch of (a, b) operand pairs."""
    if len(a) != len(b) or len(a) == 0:
        raise SimulationError("operand arrays must be equal-length and nonempty")
    _check_pair_width(netlist, a, b)
    return run_packed(netlist, _pack_operands(netlist, a, b, cin), len(a))


def evaluate(netlist: Netlist, pair: InputPair, cin: int = 0):
    """Evaluate one input pair; returns (per-net values, decoded output).

    The decoded output follows the architecture: unsigned for
    ``array_unsigned``/``ripple_adder``, two's complement for signed forms.
    """
    a, b = pair
    batch = evaluate_pairs(netlist,
                           np.array([a], dtype=np.uint64),
                           np.array([b], dtype=np.uint64),
                           np.array([cin], dtype=np.uint64))
    values = np.array([(v & 1) if v is not None else 0 for v in batch.values], dtype=np.uint8)
    return values, int(batch.decoded_outputs()[0])


def stressed_sites(netlist: Netlist, pair: InputPair, cin: int = 0) -> frozenset[int]:
    """Site indices whose gate input is logic '0' (PMOS under stress) for one vector."""
    values, _ = evaluate(netlist, pair, cin)
    nets = netlist.site_input_nets()
    return frozenset(np.flatnonzero(values[nets] == 0).tolist())


# ---------------------------------------------------------------------------
# Workloads
# ---------------------------------------------------------------------------

@dataclass
class WorkloadSpec:
    """Operand-pair stream: uniform-random (seeded, counter-addressed) or an
    explicit vector list."""

    width: int
    count: int
    source: str = "uniform"          # "uniform" | "explicit"
    seed: int = 0
    pairs: np.ndarray | None = None  # (count, 2) uint64, for source="explicit"

    def __post_init__(self):
        if self.count < 1:
            raise SimulationError("workload count must be >= 1")
        if self.source == "explicit":
            arr = np.asarray(self.pairs, dtype=np.uint64)
            if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] != self.count:
                raise SimulationError("explicit workload needs a (count, 2) pair array")
            self.pairs = arr
        elif self.source != "uniform":
            raise SimulationError(f"unknown workload source {self.source!r}")

    @classmethod
    def uniform(cls, width: int, count: int, seed: int) -> "WorkloadSpec":
        return cls(width=width, count=count, source="uniform", seed=seed)

    @classmethod
    def explicit(cls, width: int, pairs) -> "WorkloadSpec":
        arr = np.asarray(pairs, dtype=np.uint64)
        return cls(width=width, count=len(arr), source="explicit", pairs=arr)

    def vectors(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        """Operand arrays for stream positions [start, stop)."""
        stop = min(stop, self.count)
        if self.source == "explicit":
            chunk = self.pairs[start:stop]
            return chunk[:, 0].copy(), chunk[:, 1].copy()
        # One raw 64-bit word per operand keeps the stream position exact and,
        # since width <= 32 divides the word, masking is bias-free.
        words = rng.raw_words(self.seed, 2 * start, 2 * (stop - start))
        mask = np.uint64((1 << self.width) - 1)
        return words[0::2] & mask, words[1::2] & mask


# ---------------------------------------------------------------------------
# Transform policies
# ---------------------------------------------------------------------------

class TransformPolicy:
    """Rewrites operand pairs before they reach the multiplier.

    ``transform`` is positional: the same (vectors, start) always produce the
    same rewrite, so chunked profiling merges bit-identically.
    ``expansion`` > 1 means the policy applies more vectors than the workload
    supplies (ZBP applies each source vector twice).
    """

    name = "none"
    expansion = 1

    def transform(self, a: np.ndarray, b: np.ndarray, start: int = 0):
        return a, b

    def compatible_width(self, width: int) -> bool:
        return True


class NonePolicy(TransformPolicy):
    """Identity: the workload reaches the multiplier unchanged."""


class DeciderPolicy(TransformPolicy):
    """Joint two's-complement negation steered by a decider (an ideal selector
    table or a synthesized selector module exposing decide_batch)."""

    def __init__(self, decider, kind: str = "oracle"):
        self.decider = decider
        self.name = kind
        self.width = decider.width

    def transform(self, a, b, start: int = 0):
        take = self.decider.decide_batch(a, b)
        na, nb = negate(a, self.width), negate(b, self.width)
        return np.where(take, na, a), np.where(take, nb, b)

    def compatible_width(self, width: int) -> bool:
        return width == self.width


class TrngPolicy(TransformPolicy):
    """Random one's complement of both operands with probability p.

    Models TRNG-style duty-cycle balancing from prior work; functional
    correctness is assumed restored downstream, so this policy is only ever
    used for stress accounting, never for output checking.
    """

    name = "trng"

    def __init__(self, p: float, seed: int, width: int):
        if not 0.0 <= p <= 1.0:
            raise SimulationError(f"trng probability must be in [0,1], got {p}")
        self.p = p
        self.seed = seed
        self.width = width
        self._threshold = int(round(p * float(1 << 64)))

    def transform(self, a, b, start: int = 0):
        words = rng.raw_words(self.seed, start, len(a))
        if self._threshold <= 0:
            flip = np.zeros(len(a), dtype=bool)
        elif self._threshold >= (1 << 64):
            flip = np.ones(len(a), dtype=bool)
        else:
            flip = words < np.uint64(self._threshold)
        mask = np.uint64((1 << self.width) - 1)
        return np.where(flip, a ^ mask, a), np.where(flip, b ^ mask, b)

    def compatible_width(self, width: int) -> bool:
        return width == self.width


class ZbpPolicy(TransformPolicy):
    """Zero-bias duty cycling: each source vector is applied twice, plain then
    one's-complemented, so every primary-input pin sees alpha exactly 0.5 on
    any workload. Same downstream-restoration caveat as TrngPolicy."""

    name = "zbp"
    expansion = 2

    def __init__(self, width: int):
        self.width = width

    def transform(self, a, b, start: int = 0):
        mask = np.uint64((1 << self.width) - 1)
        a2 = np.empty(2 * len(a), dtype=np.uint64)
        b2 = np.empty(2 * len(b), dtype=np.uint64)
        a2[0::2], a2[1::2] = a, a ^ mask
        b2[0::2], b2[1::2] = b, b ^ mask
        return a2, b2

    def compatible_width(self, width: int) -> bool:
        return width == self.width


# ---------------------------------------------------------------------------
# Stress profiles
# ---------------------------------------------------------------------------

@dataclass
class StressProfile:
    """Per-site zero counts accumulated over an applied workload."""

    zero_count: np.ndarray          # int64, one entry per PMOS site
    vectors: int                    # vectors applied (after policy expansion)
    t_data: float = DEFAULT_T_DATA  # seconds each vector is applied

    @property
    def alpha(self) -> np.ndarray:
        if self.vectors <= 0:
            raise SimulationError("no vectors applied; alpha undefined")
        return self.zero_count / self.vectors

    @property
    def n_sites(self) -> int:
        return len(self.zero_count)

    @classmethod
    def merge(cls, parts: list["StressProfile"]) -> "StressProfile":
        if not parts:
            raise SimulationError("nothing to merge")
        t = parts[0].t_data
        if any(p.t_data != t for p in parts):
            raise SimulationError("cannot merge profiles with different t_data")
        zero = np.sum([p.zero_count for p in parts], axis=0).astype(np.int64)
        return cls(zero_count=zero, vectors=sum(p.vectors for p in parts), t_data=t)


def profile_alpha(netlist: Netlist, workload: WorkloadSpec,
                  policy: TransformPolicy | None = None,
                  t_data: float = DEFAULT_T_DATA,
                  chunk: int = 1 << 16) -> StressProfile:
    """Apply a workload under a transform policy and count per-site zeros."""
    if policy is None:
        policy = NonePolicy()
    if workload.width != netlist.width:
        raise SimulationError("workload width does not match netlist")
    if not policy.compatible_width(netlist.width):
        raise SimulationError(f"policy {policy.name!r} incompatible with width {netlist.width}")
    zero = np.zeros(len(netlist.site_input_nets()), dtype=np.int64)
    applied = 0
    for lo in range(0, workload.count, chunk):
        a, b = workload.vectors(lo, lo + chunk)
        a2, b2 = policy.transform(a, b, lo)
        batch = evaluate_pairs(netlist, a2, b2)
        zero += batch.site_zero_counts()
        applied += len(a2)
    return StressProfile(zero_count=zero, vectors=applied, t_data=t_data)


def group_zero_counts(netlist: Netlist, a2d: np.ndarray, b2d: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate per-group operand streams in one pass.

    a2d/b2d have shape (groups, vectors). Returns (zero counts with shape
    (groups, sites), decoded outputs with shape (groups, vectors)). Groups are
    padded to byte boundaries with the (0, 0) vector internally; pad columns
    are removed from both results.
    """
    groups, nv = a2d.shape
    nv_pad = ((nv + 7) // 8) * 8
    pad = nv_pad - nv
    if pad:
        az = np.zeros((groups, nv_pad), dtype=np.uint64)
        bz = np.zeros((groups, nv_pad), dtype=np.uint64)
        az[:, :nv], bz[:, :nv] = a2d, b2d
    else:
        az, bz = np.ascontiguousarray(a2d, dtype=np.uint64), np.ascontiguousarray(b2d, dtype=np.uint64)
    batch = evaluate_pairs(netlist, az.reshape(-1), bz.reshape(-1))

    group_bytes = nv_pad // 8
    nets = netlist.site_input_nets()
    uniq = np.unique(nets)
    zero_by_net = {}
    if pad:
        pad_values, _ = evaluate(netlist, (0, 0))
    for net in uniq:
        ones = batch.group_ones_per_net(int(net), group_bytes)
        zeros = nv_pad - ones
        if pad:
            zeros = zeros - pad * (1 - int(pad_values[net]))
        zero_by_net[int(net)] = zeros
    zero_counts = np.stack([zero_by_net[int(net)] for net in nets], axis=1)

    outputs = batch.decoded_outputs().reshape(groups, nv_pad)[:, :nv]
    return zero_counts, outputs


# ---------------------------------------------------------------------------
# CSV wire format: site_index,gate_id,pin,alpha,zero_count,vectors
# ---------------------------------------------------------------------------

def profile_to_csv(profile: StressProfile, netlist: Netlist, path) -> None:
    sites = netlist.sites()
    if len(sites) != profile.n_sites:
        raise SimulationError("profile does not cover this netlist's sites")
    alpha = profile.alpha
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_index", "gate_id", "pin", "alpha", "zero_count", "vectors"])
        for s in sites:
            w.writerow([s.index, s.gate_id, s.pin, repr(float(alpha[s.index])),
                        int(profile.zero_count[s.index]), profile.vectors])


def profile_from_csv(path, t_data: float = DEFAULT_T_DATA) -> StressProfile:
    zero = []
    vectors = None
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            zero.append(int(row["zero_count"]))
            vectors = int(row["vectors"])
    if vectors is None:
        raise SimulationError(f"empty profile CSV: {path}")
    return StressProfile(zero_count=np.array(zero, dtype=np.int64),
                         vectors=vectors, t_data=t_data)
