"""Gate-level netlists over a minimal static-CMOS cell basis.

Circuits are expressed exclusively in {INV, NAND2, NOR2}; richer cells (XOR,
AND, OR, full adders) are macro-expanded at generation time. In this basis
every gate input pin drives the gate of exactly one PMOS transistor, so the
pin list doubles as the addressable set of NBTI stress sites.

Gates are stored in topological order (construction order). Netlists are
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "GateKind", "Gate", "PrimaryInput", "PmosSite", "Netlist",
    "NetlistError", "build_ripple_adder", "build_multiplier",
    "pmos_sites", "validate", "to_json", "from_json", "save_json", "load_json",
]

MAX_WIDTH = 32

ARCHS = ("array_unsigned", "array_signed_bw", "wallace_signed")
SIGNED_ARCHS = ("array_signed_bw", "wallace_signed")


class NetlistError(ValueError):
    """Raised for unsupported configurations and malformed netlists."""


class GateKind(Enum):
    INV = "INV"
    NAND2 = "NAND2"
    NOR2 = "NOR2"

    @property
    def n_inputs(self) -> int:
        return 1 if self is GateKind.INV else 2


@dataclass(frozen=True)
class Gate:
    gid: int
    kind: GateKind
    ins: tuple[int, ...]
    out: int


@dataclass(frozen=True)
class PrimaryInput:
    net: int
    role: str


@dataclass(frozen=True)
class PmosSite:
    """One PMOS transistor, addressed as (gate, input pin).

    ``index`` is the stable global ordering used by stress profiles and
    process-variation samples: sites are enumerated in gate order, pins in
    ascending order within a gate.
    """

    index: int
    gate_id: int
    pin: int


@dataclass
class Netlist:
    arch: str
    width: int
    gates: list[Gate]
    primary_inputs: list[PrimaryInput]
    primary_outputs: list[int]
    # Number of full-adder macro instances the generator placed (None when the
    # netlist was loaded from JSON, which does not carry construction metadata).
    fa_instances: int | None = None
    _caches: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_nets(self) -> int:
        hi = max((pi.net for pi in self.primary_inputs), default=-1)
        for g in self.gates:
            hi = max(hi, g.out, *g.ins)
        return hi + 1

    @property
    def signed(self) -> bool:
        return self.arch in SIGNED_ARCHS

    def sites(self) -> list[PmosSite]:
        return pmos_sites(self)

    def site_input_nets(self) -> np.ndarray:
        """Driving net id per site index (cached)."""
        nets = self._caches.get("site_nets")
        if nets is None:
            nets = np.array([g.ins[pin] for g in self.gates for pin in range(len(g.ins))],
                            dtype=np.int64)
            self._caches["site_nets"] = nets
        return nets

    def input_net_by_role(self) -> dict[str, int]:
        table = self._caches.get("roles")
        if table is None:
            table = {pi.role: pi.net for pi in self.primary_inputs}
            self._caches["roles"] = table
        return table

    def depth(self) -> int:
        """Unit-delay depth: longest gate path from any primary input."""
        d = np.zeros(self.n_nets, dtype=np.int64)
        for g in self.gates:
            d[g.out] = 1 + max(d[i] for i in g.ins)
        return int(max((d[po] for po in self.primary_outputs), default=0))


def pmos_sites(n: Netlist) -> list[PmosSite]:
    """Enumerate PMOS stress sites: one per gate input pin, generation order."""
    sites = []
    idx = 0
    for g in n.gates:
        for pin in range(len(g.ins)):
            sites.append(PmosSite(index=idx, gate_id=g.gid, pin=pin))
            idx += 1
    return sites


def n_sites(n: Netlist) -> int:
    return sum(len(g.ins) for g in n.gates)


def validate(n: Netlist) -> list[str]:
    """Check structural invariants; return a list of violations (empty = ok).

    Reported violations: duplicate gate ids, bad pin counts, multi-driver
    nets, undriven (floating) gate inputs or primary outputs, combinational
    cycles, and nets not reachable from the primary inputs.
    """
    violations: list[str] = []

    seen_gids = set()
    for g in n.gates:
        if g.gid in seen_gids:
            violations.append(f"duplicate gate id {g.gid}")
        seen_gids.add(g.gid)
        if len(g.ins) != g.kind.n_inputs:
            violations.append(f"gate {g.gid} ({g.kind.value}) has {len(g.ins)} inputs")

    driver: dict[int, str] = {}
    for pi in n.primary_inputs:
        if pi.net in driver:
            violations.append(f"net {pi.net} driven by multiple primary inputs")
        driver[pi.net] = f"pi:{pi.role}"
    for g in n.gates:
        if g.out in driver:
            violations.append(f"net {g.out} has multiple drivers ({driver[g.out]} and gate {g.gid})")
        driver[g.out] = f"gate:{g.gid}"

    for g in n.gates:
        for net in g.ins:
            if net not in driver:
                violations.append(f"gate {g.gid} input net {net} is floating")
    for po in n.primary_outputs:
        if po not in driver:
            violations.append(f"primary output net {po} is not driven")

    # Cycle check: Kahn's algorithm over the gate graph. The processing order
    # doubles as a topological order for the reachability pass below.
    out_of = {g.out: g for g in n.gates}
    indeg = {g.gid: sum(1 for net in g.ins if net in out_of) for g in n.gates}
    ready = [g for g in n.gates if indeg[g.gid] == 0]
    consumers: dict[int, list[Gate]] = {}
    for g in n.gates:
        for net in g.ins:
            if net in out_of:
                consumers.setdefault(net, []).append(g)
    kahn: list[Gate] = []
    while ready:
        g = ready.pop()
        kahn.append(g)
        for h in consumers.get(g.out, ()):
            indeg[h.gid] -= 1
            if indeg[h.gid] == 0:
                ready.append(h)
    if len(kahn) != len(n.gates):
        violations.append("combinational cycle detected")
        return violations

    # Reachability from primary inputs.
    reachable = {pi.net for pi in n.primary_inputs}
    for g in kahn:
        if all(net in reachable for net in g.ins):
            reachable.add(g.out)
    for g in n.gates:
        for net in (*g.ins, g.out):
            if net not in reachable and net in driver:
                violations.append(f"net {net} not reachable from primary inputs")
    return violations


def _topo_order(n: Netlist) -> list[Gate]:
    """Gates in topological order. Generators emit gates already ordered; this
    recomputes defensively for netlists built by hand or loaded from JSON."""
    cached = n._caches.get("topo")
    if cached is not None:
        return cached
    placed = {pi.net for pi in n.primary_inputs}
    order: list[Gate] = []
    pending = list(n.gates)
    # Fast path: already topological (true for generated netlists).
    seen = set(placed)
    ordered = True
    for g in n.gates:
        if not all(i in seen for i in g.ins):
            ordered = False
            break
        seen.add(g.out)
    if ordered:
        n._caches["topo"] = list(n.gates)
        return n._caches["topo"]
    while pending:
        rest = []
        progressed = False
        for g in pending:
            if all(i in placed for i in g.ins):
                order.append(g)
                placed.add(g.out)
                progressed = True
            else:
                rest.append(g)
        if not progressed:
            raise NetlistError("cannot order gates (cycle or floating input)")
        pending = rest
    n._caches["topo"] = order
    return order


# ---------------------------------------------------------------------------
# Generation: macro expansion over {INV, NAND2, NOR2}
# ---------------------------------------------------------------------------

_CONST0 = -2
_CONST1 = -3


class _Builder:
    """Emits gates with inline constant folding and inverter sharing.

    Constants produced by macro expansion (carry-ins, sign-correction bits)
    never survive into the finished netlist: a gate with a constant input is
    folded to a simpler gate or a constant, exactly as logic synthesis would.
    Back-to-back inverters are cancelled and identical inverters shared, so
    the stress-site inventory matches what would actually be fabricated.
    """

    def __init__(self) -> None:
        self.gates: list[Gate] = []
        self.pis: list[PrimaryInput] = []
        self._next_net = 0
        self._inv_cache: dict[int, int] = {}   # input net -> inverter output net
        self._inv_src: dict[int, int] = {}     # inverter output net -> input net
        self.fa_instances = 0

    def new_net(self) -> int:
        net = self._next_net
        self._next_net += 1
        return net

    def pi(self, role: str) -> int:
        net = self.new_net()
        self.pis.append(PrimaryInput(net=net, role=role))
        return net

    def _emit(self, kind: GateKind, ins: tuple[int, ...]) -> int:
        out = self.new_net()
        self.gates.append(Gate(gid=len(self.gates), kind=kind, ins=ins, out=out))
        return out

    def inv(self, a: int) -> int:
        if a == _CONST0:
            return _CONST1
        if a == _CONST1:
            return _CONST0
        if a in self._inv_src:          # INV(INV(x)) -> x
            return self._inv_src[a]
        if a in self._inv_cache:        # share existing inverter
            return self._inv_cache[a]
        out = self._emit(GateKind.INV, (a,))
        self._inv_cache[a] = out
        self._inv_src[out] = a
        return out

    def nand(self, a: int, b: int) -> int:
        if _CONST0 in (a, b):
            return _CONST1
        if a == _CONST1:
            return self.inv(b)
        if b == _CONST1:
            return self.inv(a)
        return self._emit(GateKind.NAND2, (a, b))

    def nor(self, a: int, b: int) -> int:
        if _CONST1 in (a, b):
            return _CONST0
        if a == _CONST0:
            return self.inv(b)
        if b == _CONST0:
            return self.inv(a)
        return self._emit(GateKind.NOR2, (a, b))

    def and2(self, a: int, b: int) -> int:
        return self.inv(self.nand(a, b))

    def or2(self, a: int, b: int) -> int:
        return self.inv(self.nor(a, b))

    def xor(self, a: int, b: int) -> int:
        """XOR as four NAND2 (the fixed expansion used by every macro)."""
        if a in (_CONST0, _CONST1) or b in (_CONST0, _CONST1):
            if a in (_CONST0, _CONST1):
                a, b = b, a
            return a if b == _CONST0 else self.inv(a)
        n1 = self.nand(a, b)
        n2 = self.nand(a, n1)
        n3 = self.nand(b, n1)
        return self.nand(n2, n3)

    def xnor(self, a: int, b: int) -> int:
        """XNOR as four NOR2 (dual of the NAND XOR), sharing NOR(a,b)."""
        if a in (_CONST0, _CONST1) or b in (_CONST0, _CONST1):
            return self.inv(self.xor(a, b))
        n1 = self.nor(a, b)
        n2 = self.nor(a, n1)
        n3 = self.nor(b, n1)
        return self.nor(n2, n3)

    def fa(self, a: int, b: int, cin: int) -> tuple[int, int]:
        """Full-adder macro -> (sum, carry).

        Non-constant case is the standard 9-NAND2 full adder (two shared-gate
        XORs plus a three-NAND carry). Constant operands fold the macro down:
        cin=0 gives the 5-gate half adder, cin=1 the XNOR/OR form.
        """
        self.fa_instances += 1
        ops = [a, b, cin]
        # Commutative: move constants to the back so cin carries them.
        ops.sort(key=lambda x: 1 if x in (_CONST0, _CONST1) else 0)
        a, b, cin = ops
        n_const = sum(1 for x in (a, b, cin) if x in (_CONST0, _CONST1))

        if n_const == 0:
            x1 = self.nand(a, b)
            x2 = self.nand(a, x1)
            x3 = self.nand(b, x1)
            axb = self.nand(x2, x3)
            y1 = self.nand(axb, cin)
            y2 = self.nand(axb, y1)
            y3 = self.nand(cin, y1)
            s = self.nand(y2, y3)
            cout = self.nand(x1, y1)
            return s, cout
        if n_const == 1:
            if cin == _CONST0:  # half adder: share NAND(a,b) between sum and carry
                x1 = self.nand(a, b)
                x2 = self.nand(a, x1)
                x3 = self.nand(b, x1)
                s = self.nand(x2, x3)
                return s, self.inv(x1)
            # cin = 1: sum = XNOR(a,b) over four NOR2, carry = OR(a,b) sharing NOR(a,b)
            n1 = self.nor(a, b)
            n2 = self.nor(a, n1)
            n3 = self.nor(b, n1)
            s = self.nor(n2, n3)
            return s, self.inv(n1)
        if n_const == 2:
            v = (1 if b == _CONST1 else 0) + (1 if cin == _CONST1 else 0)
            if v == 0:
                return a, _CONST0
            if v == 1:
                return self.inv(a), a
            return a, _CONST1
        total = sum(1 for x in (a, b, cin) if x == _CONST1)
        return (_CONST1 if total % 2 else _CONST0), (_CONST1 if total >= 2 else _CONST0)

    def finish(self, arch: str, width: int, outputs: list[int]) -> Netlist:
        if any(o in (_CONST0, _CONST1) for o in outputs):
            raise NetlistError("constant primary output after folding")
        self._prune(outputs)
        n = Netlist(arch=arch, width=width, gates=self.gates,
                    primary_inputs=self.pis, primary_outputs=outputs,
                    fa_instances=self.fa_instances)
        return n

    def _prune(self, outputs: list[int]) -> None:
        """Drop gates whose outputs drive nothing (folding leftovers)."""
        used = set(outputs)
        for g in reversed(self.gates):
            if g.out in used:
                used.update(g.ins)
        kept = [g for g in self.gates if g.out in used]
        if len(kept) == len(self.gates):
            return
        # Renumber gate ids; net ids stay as allocated (gaps are harmless).
        self.gates = [Gate(gid=i, kind=g.kind, ins=g.ins, out=g.out)
                      for i, g in enumerate(kept)]


def build_ripple_adder(width: int) -> Netlist:
    """Ripple-carry adder of ``width`` full adders.

    Inputs: a0..a{w-1}, b0..b{w-1}, cin. Outputs: sum bits then carry-out.
    Every full adder uses the identical 9-NAND2 expansion; nothing folds
    because the carry-in is a real primary input.
    """
    if width < 1:
        raise NetlistError(f"adder width must be >= 1, got {width}")
    b = _Builder()
    a_nets = [b.pi(f"a{i}") for i in range(width)]
    b_nets = [b.pi(f"b{i}") for i in range(width)]
    carry = b.pi("cin")
    outs = []
    for i in range(width):
        s, carry = b.fa(a_nets[i], b_nets[i], carry)
        outs.append(s)
    outs.append(carry)
    return b.finish("ripple_adder", width, outs)


def _partial_products(b: _Builder, a_nets, b_nets, width: int, signed: bool):
    """Partial-product matrix. For the signed (Baugh-Wooley) form the sign
    row and sign column carry complemented products, which in this basis is a
    single NAND2 instead of NAND2+INV."""
    n = width
    pp = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            flip = signed and ((i == n - 1) != (j == n - 1))
            if flip:
                pp[i][j] = b.nand(a_nets[i], b_nets[j])
            else:
                pp[i][j] = b.and2(a_nets[i], b_nets[j])
    return pp


def _build_array(width: int, signed: bool) -> Netlist:
    """Carry-save array multiplier: width*(width-1) full-adder macros.

    Rows 1..n-1 each hold n-1 adders absorbing one partial-product row with
    carries passed down-column; a final (n-1)-cell ripple row combines the
    leftover sums and carries. The Baugh-Wooley +2^n correction enters as the
    ripple row's carry-in and the +2^(2n-1) correction as an inversion of the
    top output bit (the 2^(2n) carry falls outside the product width).
    """
    n = width
    b = _Builder()
    a_nets = [b.pi(f"a{i}") for i in range(n)]
    b_nets = [b.pi(f"b{i}") for i in range(n)]
    pp = _partial_products(b, a_nets, b_nets, n, signed)

    sums = list(pp[0])                       # sums[j] has weight j after row 0
    carries = [_CONST0] * (n - 1)
    outs = [sums[0]]
    for r in range(1, n):
        new_sums = [None] * n
        new_carries = [None] * (n - 1)
        for j in range(n - 1):
            s, c = b.fa(sums[j + 1], pp[r][j], carries[j])
            new_sums[j] = s
            new_carries[j] = c
        new_sums[n - 1] = pp[r][n - 1]
        sums, carries = new_sums, new_carries
        outs.append(sums[0])

    carry = _CONST1 if signed else _CONST0   # Baugh-Wooley +1 at weight n
    for j in range(n - 1):
        s, carry = b.fa(sums[j + 1], carries[j], carry)
        outs.append(s)
    outs.append(b.inv(carry) if signed else carry)  # BW +1 at weight 2n-1
    arch = "array_signed_bw" if signed else "array_unsigned"
    return b.finish(arch, n, outs)


def _build_wallace(width: int) -> Netlist:
    """Wallace-tree reduction of the Baugh-Wooley partial products.

    Column stacks are reduced with 3:2 (full-adder) and 2:2 (half-adder)
    compressors until every column holds at most two bits, then a ripple-carry
    stage produces the final sum. The Baugh-Wooley correction constants enter
    the stacks directly and fold into the consuming compressors.
    """
    n = width
    b = _Builder()
    a_nets = [b.pi(f"a{i}") for i in range(n)]
    b_nets = [b.pi(f"b{i}") for i in range(n)]
    pp = _partial_products(b, a_nets, b_nets, n, signed=True)

    cols: list[list[int]] = [[] for _ in range(2 * n)]
    for i in range(n):
        for j in range(n):
            cols[i + j].append(pp[i][j])
    cols[n].append(_CONST1)
    cols[2 * n - 1].append(_CONST1)

    while max(len(c) for c in cols) > 2:
        nxt: list[list[int]] = [[] for _ in range(2 * n)]
        for w, col in enumerate(cols):
            k = 0
            while len(col) - k >= 3:
                s, c = b.fa(col[k], col[k + 1], col[k + 2])
                k += 3
                _push(nxt, w, s)
                _push(nxt, w + 1, c)
            if len(col) - k == 2:
                s, c = b.fa(col[k], col[k + 1], _CONST0)
                k += 2
                _push(nxt, w, s)
                _push(nxt, w + 1, c)
            while k < len(col):
                _push(nxt, w, col[k])
                k += 1
        cols = nxt

    outs = []
    carry = _CONST0
    for w in range(2 * n):
        col = cols[w]
        if len(col) == 2:
            s, carry = b.fa(col[0], col[1], carry)
        elif len(col) == 1:
            s, carry = b.fa(col[0], carry, _CONST0)
        else:
            s, carry = carry, _CONST0
        outs.append(s)
    if any(o in (_CONST0, _CONST1) for o in outs):
        raise NetlistError("wallace reduction left a constant output column")
    return b.finish("wallace_signed", n, outs)


def _push(cols: list[list[int]], w: int, net: int) -> None:
    if net in (_CONST0, _CONST1):
        if net == _CONST1:
            # Constants re-entering a stack are rare (folded compressor carry);
            # keep them in the stack so a later compressor absorbs them.
            cols[w].append(net)
        return
    cols[w].append(net)


def build_multiplier(width: int, arch: str) -> Netlist:
    """Build a ``width`` x ``width`` multiplier netlist.

    arch: ``array_unsigned`` (plain carry-save array), ``array_signed_bw``
    (Baugh-Wooley two's-complement array), or ``wallace_signed``
    (Baugh-Wooley partial products, Wallace reduction, ripple final stage).
    Output is 2*width bits, unsigned or two's-complement per arch.
    """
    if not 2 <= width <= MAX_WIDTH:
        raise NetlistError(f"multiplier width must be in [2, {MAX_WIDTH}], got {width}")
    if arch == "array_unsigned":
        return _build_array(width, signed=False)
    if arch == "array_signed_bw":
        return _build_array(width, signed=True)
    if arch == "wallace_signed":
        return _build_wallace(width)
    raise NetlistError(f"unknown multiplier arch {arch!r} (choose from {ARCHS})")


# ---------------------------------------------------------------------------
# JSON wire format
# ---------------------------------------------------------------------------

def to_json(n: Netlist) -> str:
    doc = {
        "arch": n.arch,
        "width": n.width,
        "gates": [{"id": g.gid, "kind": g.kind.value, "in": list(g.ins), "out": g.out}
                  for g in n.gates],
        "pi": [{"net": pi.net, "role": pi.role} for pi in n.primary_inputs],
        "po": list(n.primary_outputs),
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def from_json(text: str) -> Netlist:
    doc = json.loads(text)
    try:
        gates = [Gate(gid=g["id"], kind=GateKind(g["kind"]), ins=tuple(g["in"]), out=g["out"])
                 for g in doc["gates"]]
        pis = [PrimaryInput(net=p["net"], role=p["role"]) for p in doc["pi"]]
        n = Netlist(arch=doc["arch"], width=int(doc["width"]), gates=gates,
                    primary_inputs=pis, primary_outputs=list(doc["po"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise NetlistError(f"malformed netlist JSON: {exc}") from exc
    problems = validate(n)
    if problems:
        raise NetlistError("invalid netlist: " + "; ".join(problems[:5]))
    return n


def save_json(n: Netlist, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_json(n))
        fh.write("\n")


def load_json(path) -> Netlist:
    with open(path) as fh:
        return from_json(fh.read())
