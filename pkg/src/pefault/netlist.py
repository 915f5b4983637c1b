"""Gate-level combinational netlists: data model, text/JSON formats,
structural generators, and bit-accurate packed evaluation.

Netlists are built from eight primitive gate kinds. Buses are LSB-first:
bit position i of a bus named ``p`` is the net ``p[i]``.
"""

from __future__ import annotations

import heapq
import json
import re
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

GATE_KINDS = ("AND", "OR", "NAND", "NOR", "XOR", "XNOR", "NOT", "BUF")
KIND_CODE = {k: i for i, k in enumerate(GATE_KINDS)}

OUTPUT_PIN = -1

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\[\]$-]*$")


class NetlistError(Exception):
    """Base class for netlist construction and parsing errors."""


class NetlistSyntaxError(NetlistError):
    def __init__(self, msg, line=None, col=None):
        if line is not None:
            msg = f"line {line}, col {col}: {msg}"
        super().__init__(msg)
        self.line = line
        self.col = col


class MultiplyDrivenNetError(NetlistError):
    def __init__(self, net):
        super().__init__(f"net '{net}' is driven more than once")
        self.net = net


class CombinationalCycleError(NetlistError):
    def __init__(self, gates):
        super().__init__(f"combinational cycle through gates {sorted(gates)[:8]}")
        self.gates = gates


class DanglingNetError(NetlistError):
    def __init__(self, net, why):
        super().__init__(f"net '{net}' {why}")
        self.net = net


@dataclass(frozen=True)
class BitVec:
    """Fixed-width unsigned bit vector; values outside the width are masked."""

    width: int
    value: int

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("BitVec width must be positive")
        object.__setattr__(self, "value", self.value & ((1 << self.width) - 1))

    @property
    def signed(self) -> int:
        if self.value >= 1 << (self.width - 1):
            return self.value - (1 << self.width)
        return self.value

    def bit(self, i: int) -> int:
        return (self.value >> i) & 1

    def __int__(self):
        return self.value


@dataclass(frozen=True)
class Gate:
    id: int
    kind: str
    inputs: tuple[str, ...]
    output: str

    def __post_init__(self):
        if self.kind not in KIND_CODE:
            raise NetlistSyntaxError(f"unknown gate kind '{self.kind}'")
        arity = len(self.inputs)
        if self.kind in ("NOT", "BUF"):
            if arity != 1:
                raise NetlistSyntaxError(f"gate {self.id}: {self.kind} takes exactly 1 input")
        elif arity < 2:
            raise NetlistSyntaxError(f"gate {self.id}: {self.kind} needs at least 2 inputs")


@dataclass(frozen=True)
class Netlist:
    """Immutable combinational netlist. Validated on construction."""

    input_buses: tuple[tuple[str, int], ...]
    output_buses: tuple[tuple[str, int], ...]
    nets: tuple[str, ...]
    gates: tuple[Gate, ...]
    annotations: dict = field(default_factory=dict)  # (tag, index) -> net name

    def __post_init__(self):
        _validate(self)

    def bus_nets(self, name: str) -> list[str]:
        for bus, width in self.input_buses + self.output_buses:
            if bus == name:
                return [f"{name}[{i}]" for i in range(width)]
        raise KeyError(f"no bus named '{name}'")

    @property
    def primary_inputs(self) -> list[str]:
        return [n for bus, w in self.input_buses for n in self.bus_nets(bus)]

    @property
    def primary_outputs(self) -> list[str]:
        return [n for bus, w in self.output_buses for n in self.bus_nets(bus)]

    def annotation(self, tag: str, index: int):
        return self.annotations.get((tag, index))

    def compiled(self) -> "CompiledNetlist":
        c = getattr(self, "_compiled_cache", None)
        if c is None:
            c = CompiledNetlist(self)
            object.__setattr__(self, "_compiled_cache", c)
        return c


def _bus_bit_nets(buses):
    out = []
    for name, width in buses:
        out.extend(f"{name}[{i}]" for i in range(width))
    return out


def _validate(nl: Netlist):
    declared = set(nl.nets)
    pi = set(_bus_bit_nets(nl.input_buses))
    po = set(_bus_bit_nets(nl.output_buses))
    for n in list(pi) + list(po):
        if n not in declared:
            raise DanglingNetError(n, "is a bus bit but not in the net list")
    seen_ids = set()
    driver = {}
    for g in nl.gates:
        if g.id in seen_ids:
            raise NetlistSyntaxError(f"duplicate gate id {g.id}")
        seen_ids.add(g.id)
        for n in g.inputs + (g.output,):
            if n not in declared:
                raise DanglingNetError(n, f"referenced by gate {g.id} but never declared")
        if g.output in pi:
            raise MultiplyDrivenNetError(g.output)
        if g.output in driver:
            raise MultiplyDrivenNetError(g.output)
        driver[g.output] = g
    for g in nl.gates:
        for n in g.inputs:
            if n not in driver and n not in pi:
                raise DanglingNetError(n, f"read by gate {g.id} but has no driver")
    for n in po:
        if n not in driver:
            raise DanglingNetError(n, "is a primary output but has no driver")
    for (tag, idx), n in nl.annotations.items():
        if n not in declared:
            raise DanglingNetError(n, f"named by annotation {tag}[{idx}] but never declared")
    # acyclicity: Kahn over gates, deterministic by gate id
    gate_of_net = {g.output: g for g in nl.gates}
    indeg = {}
    consumers = {}
    for g in nl.gates:
        indeg[g.id] = 0
        for n in g.inputs:
            d = gate_of_net.get(n)
            if d is not None:
                indeg[g.id] += 1
                consumers.setdefault(d.id, []).append(g.id)
    ready = [gid for gid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        gid = heapq.heappop(ready)
        order.append(gid)
        for c in consumers.get(gid, ()):
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != len(nl.gates):
        stuck = [gid for gid, d in indeg.items() if d > 0]
        raise CombinationalCycleError(stuck)
    object.__setattr__(nl, "_topo_ids", order)


class CompiledNetlist:
    """Flat-array form of a netlist for the packed kernels.

    Gates are in topological order; nets are indexed densely. Global input
    bit order is bus declaration order, LSB first within each bus.
    """

    def __init__(self, nl: Netlist):
        self.netlist = nl
        self.net_index = {n: i for i, n in enumerate(nl.nets)}
        self.n_nets = len(nl.nets)
        by_id = {g.id: g for g in nl.gates}
        topo_ids = getattr(nl, "_topo_ids")
        n_gates = len(topo_ids)
        self.kind = np.empty(n_gates, dtype=np.int8)
        self.out_net = np.empty(n_gates, dtype=np.int32)
        self.in_ptr = np.zeros(n_gates + 1, dtype=np.int32)
        in_net = []
        self.topo_ids = np.array(topo_ids, dtype=np.int64)
        self.pos_of_id = {}
        for pos, gid in enumerate(topo_ids):
            g = by_id[gid]
            self.pos_of_id[gid] = pos
            self.kind[pos] = KIND_CODE[g.kind]
            self.out_net[pos] = self.net_index[g.output]
            in_net.extend(self.net_index[n] for n in g.inputs)
            self.in_ptr[pos + 1] = len(in_net)
        self.in_net = np.array(in_net, dtype=np.int32)
        self.pi_bits = np.array(
            [self.net_index[n] for n in nl.primary_inputs], dtype=np.int32
        )
        self.out_bits = {
            bus: np.array([self.net_index[n] for n in nl.bus_nets(bus)], dtype=np.int32)
            for bus, _ in nl.output_buses
        }
        self.driver_pos = np.full(self.n_nets, -1, dtype=np.int32)
        for pos in range(n_gates):
            self.driver_pos[self.out_net[pos]] = pos

    def input_bit_spans(self):
        """[(bus, first_global_bit, width)] in global input-bit order."""
        spans = []
        at = 0
        for bus, w in self.netlist.input_buses:
            spans.append((bus, at, w))
            at += w
        return spans

    def n_input_bits(self) -> int:
        return int(self.pi_bits.shape[0])

    def force_arrays(self, faults):
        """Build out_force/in_force from (gate_id, pin, polarity) triples."""
        out_force = np.full(self.kind.shape[0], -1, dtype=np.int8)
        in_force = np.full(self.in_net.shape[0], -1, dtype=np.int8)
        for gid, pin, pol in faults:
            pos = self.pos_of_id[gid]
            if pin == OUTPUT_PIN:
                out_force[pos] = pol
            else:
                lo, hi = self.in_ptr[pos], self.in_ptr[pos + 1]
                if not 0 <= pin < hi - lo:
                    raise ValueError(f"gate {gid} has no input pin {pin}")
                in_force[lo + pin] = pol
        return out_force, in_force

    def eval_packed(self, pi_rows: np.ndarray, faults=()) -> np.ndarray:
        """Evaluate packed patterns; returns the full net-value matrix."""
        n_words = pi_rows.shape[1]
        vals = np.zeros((self.n_nets, n_words), dtype=np.uint64)
        vals[self.pi_bits, :] = pi_rows
        out_force, in_force = self.force_arrays(faults)
        _kernels.eval_words(
            self.kind, self.out_net, self.in_ptr, self.in_net, vals, out_force, in_force
        )
        return vals

    def pi_rows_from_values(self, values: dict[str, np.ndarray]):
        """Pack per-bus integer arrays into PI rows. Returns (rows, n_patterns)."""
        lengths = {len(np.atleast_1d(v)) for v in values.values()}
        if len(lengths) != 1:
            raise ValueError("all input buses must have the same number of patterns")
        n = lengths.pop()
        rows = []
        for bus, width in self.netlist.input_buses:
            if bus not in values:
                raise ValueError(f"missing input bus '{bus}'")
            rows.append(_kernels.pack_value_bits(np.atleast_1d(values[bus]), width))
        if set(values) - {b for b, _ in self.netlist.input_buses}:
            extra = set(values) - {b for b, _ in self.netlist.input_buses}
            raise ValueError(f"unknown input buses {sorted(extra)}")
        return np.vstack(rows), n


def evaluate(nl: Netlist, inputs: dict) -> dict[str, BitVec]:
    """Single-pattern evaluation. Inputs are ints (two's complement masked)
    or BitVecs of the exact bus width; outputs are BitVecs per bus."""
    vals = {}
    for bus, width in nl.input_buses:
        if bus not in inputs:
            raise ValueError(f"missing input bus '{bus}'")
        v = inputs[bus]
        if isinstance(v, BitVec):
            if v.width != width:
                raise ValueError(f"bus '{bus}' expects width {width}, got {v.width}")
            v = v.value
        vals[bus] = np.array([int(v)], dtype=np.int64)
    unknown = set(inputs) - {b for b, _ in nl.input_buses}
    if unknown:
        raise ValueError(f"unknown input buses {sorted(unknown)}")
    out = eval_batch(nl, vals)
    return {
        bus: BitVec(width, int(out[bus][0])) for bus, width in nl.output_buses
    }


def eval_batch(nl: Netlist, inputs: dict[str, np.ndarray], faults=()) -> dict:
    """Evaluate many patterns at once; returns int64 arrays per output bus."""
    c = nl.compiled()
    rows, n = c.pi_rows_from_values(inputs)
    vals = c.eval_packed(rows, faults)
    out = {}
    for bus, _ in nl.output_buses:
        out[bus] = _kernels.unpack_words_to_ints(vals[c.out_bits[bus]])[:n]
    return out


def fanin_gates(nl: Netlist, net_names) -> set[int]:
    """All gate ids from which any of the named nets is reachable
    (reflexive-transitive: a net's driver is in its own fan-in)."""
    driver = {g.output: g for g in nl.gates}
    seen = set()
    stack = list(net_names)
    out = set()
    while stack:
        n = stack.pop()
        if n in seen:
            continue
        seen.add(n)
        g = driver.get(n)
        if g is None:
            continue
        out.add(g.id)
        stack.extend(g.inputs)
    return out


# ---------------------------------------------------------------------------
# builder and generators
# ---------------------------------------------------------------------------


class _Builder:
    def __init__(self):
        self.input_buses = []
        self.output_buses = []
        self.nets = []
        self._netset = set()
        self.gates = []
        self.annotations = {}
        self._next_id = 0

    def _declare(self, name):
        if name in self._netset:
            raise NetlistError(f"net '{name}' declared twice")
        self._netset.add(name)
        self.nets.append(name)

    def input_bus(self, name, width):
        self.input_buses.append((name, width))
        nets = [f"{name}[{i}]" for i in range(width)]
        for n in nets:
            self._declare(n)
        return nets

    def output_bus(self, name, width):
        self.output_buses.append((name, width))
        nets = [f"{name}[{i}]" for i in range(width)]
        for n in nets:
            self._declare(n)
        return nets

    def gate(self, kind, out, ins):
        if out not in self._netset:
            self._declare(out)
        self.gates.append(Gate(self._next_id, kind, tuple(ins), out))
        self._next_id += 1
        return out

    def drive(self, target, src):
        """Make `target` (a declared, undriven net) carry the value of `src`.

        Renames src's driver output when src has no other readers, else
        inserts a BUF.
        """
        read = any(src in g.inputs for g in self.gates)
        if read or src not in self._netset or not any(g.output == src for g in self.gates):
            self.gate("BUF", target, [src])
            return
        self._rename(src, target)

    def _rename(self, old, new):
        self.nets.remove(old)
        self._netset.discard(old)
        for i, g in enumerate(self.gates):
            ins = tuple(new if n == old else n for n in g.inputs)
            out = new if g.output == old else g.output
            if ins != g.inputs or out != g.output:
                self.gates[i] = Gate(g.id, g.kind, ins, out)
        for key, n in list(self.annotations.items()):
            if n == old:
                self.annotations[key] = new

    def annotate(self, tag, index, net):
        self.annotations[(tag, index)] = net

    def build(self) -> Netlist:
        return Netlist(
            tuple(self.input_buses),
            tuple(self.output_buses),
            tuple(self.nets),
            tuple(self.gates),
            dict(self.annotations),
        )


def gen_baugh_wooley(width: int = 8) -> Netlist:
    """Signed two's-complement multiplier, 2*width output bits.

    AND/NAND partial products with the two correction constants folded in,
    carry-save 3:2 compression per column, then a final ripple row whose
    carry nets are annotated as carry_in_of_bit[k].
    """
    if width < 2:
        raise ValueError("multiplier width must be >= 2")
    b = _Builder()
    a = b.input_bus("a", width)
    bi = b.input_bus("b", width)
    p = b.output_bus("p", 2 * width)
    cols = [[] for _ in range(2 * width)]
    for i in range(width):
        for j in range(width):
            kind = "NAND" if (i == width - 1) != (j == width - 1) else "AND"
            cols[i + j].append(b.gate(kind, f"pp{i}_{j}", [a[i], bi[j]]))
    # constant-one bits at weights 2^width and 2^(2*width-1)
    inv = b.gate("NOT", "cst_n", [a[0]])
    one = b.gate("OR", "cst_one", [a[0], inv])
    cols[width].append(one)
    cols[2 * width - 1].append(one)
    nfa = 0
    for w in range(2 * width):
        last = w == 2 * width - 1
        while len(cols[w]) >= 3:
            x, y, z = cols[w][:3]
            del cols[w][:3]
            t = b.gate("XOR", f"fa{nfa}_t", [x, y])
            cols[w].append(b.gate("XOR", f"fa{nfa}_s", [t, z]))
            if not last:
                c1 = b.gate("AND", f"fa{nfa}_c1", [x, y])
                c2 = b.gate("AND", f"fa{nfa}_c2", [t, z])
                cols[w + 1].append(b.gate("OR", f"fa{nfa}_c", [c1, c2]))
            nfa += 1
    carry = None
    for w in range(2 * width):
        last = w == 2 * width - 1
        items = list(cols[w])
        if carry is not None:
            b.annotate("carry_in_of_bit", w, carry)
            items.append(carry)
        carry = None
        if len(items) == 1:
            b.drive(p[w], items[0])
        elif len(items) == 2:
            x, y = items
            b.gate("XOR", p[w], [x, y])
            if not last:
                carry = b.gate("AND", f"rc{w}", [x, y])
        else:
            x, y, z = items
            t = b.gate("XOR", f"rs{w}", [x, y])
            b.gate("XOR", p[w], [t, z])
            if not last:
                c1 = b.gate("AND", f"rc{w}a", [x, y])
                c2 = b.gate("AND", f"rc{w}b", [t, z])
                carry = b.gate("OR", f"rc{w}", [c1, c2])
    return b.build()


def _and_chain(b, nets, stem):
    if len(nets) == 1:
        return nets[0]
    acc = nets[0]
    for i, n in enumerate(nets[1:]):
        acc = b.gate("AND", f"{stem}a{i}", [acc, n])
    return acc


def _or_chain(b, nets, stem, out=None):
    if len(nets) == 1:
        if out is not None:
            b.drive(out, nets[0])
            return out
        return nets[0]
    acc = nets[0]
    for i, n in enumerate(nets[1:]):
        name = out if (out is not None and i == len(nets) - 2) else f"{stem}o{i}"
        acc = b.gate("OR", name, [acc, n])
    return acc


def _carry_sop(b, gs, ps, cin, stem, out=None):
    """Sum-of-products lookahead carry-out of a generate/propagate run."""
    terms = []
    for k in range(len(gs) - 1, -1, -1):
        terms.append(_and_chain(b, ps[k + 1 :] + [gs[k]], f"{stem}t{k}"))
    if cin is not None:
        terms.append(_and_chain(b, ps + [cin], f"{stem}tc"))
    return _or_chain(b, terms, stem, out=out)


def gen_cla_adder(width: int = 16) -> Netlist:
    """Carry-lookahead adder: 4-bit lookahead groups, a second lookahead
    level across groups (blocks of 16), and lookahead chaining between
    blocks. Carry-in nets are annotated for bits 1..width, where the
    annotation at `width` names the carry-out."""
    if width < 2:
        raise ValueError("adder width must be >= 2")
    b = _Builder()
    a = b.input_bus("a", width)
    bi = b.input_bus("b", width)
    s = b.output_bus("sum", width)
    co = b.output_bus("cout", 1)
    p = []
    g = []
    for i in range(width):
        pname = s[0] if i == 0 else f"p{i}"
        p.append(b.gate("XOR", pname, [a[i], bi[i]]))
        g.append(b.gate("AND", f"g{i}", [a[i], bi[i]]))
    carry = [None] * (width + 1)  # carry[i] = carry into bit i
    block_cin = None
    for blk_lo in range(0, width, 16):
        blk_hi = min(blk_lo + 16, width)
        grp_g = []
        grp_p = []
        grp_bounds = list(range(blk_lo, blk_hi, 4))
        # group carry-ins from the block-level lookahead
        for qi, lo in enumerate(grp_bounds):
            if qi == 0:
                carry[lo] = block_cin
            else:
                carry[lo] = _carry_sop(
                    b, grp_g[:qi], grp_p[:qi], block_cin, f"bc{lo}", out=None
                )
            hi = min(lo + 4, blk_hi)
            gs = g[lo:hi]
            ps = p[lo:hi]
            for t in range(1, hi - lo):
                carry[lo + t] = _carry_sop(
                    b, gs[:t], ps[:t], carry[lo], f"c{lo + t}"
                )
            grp_g.append(_carry_sop(b, gs, ps, None, f"gg{qi}_{blk_lo}"))
            grp_p.append(_and_chain(b, ps, f"gp{qi}_{blk_lo}"))
        block_cin = _carry_sop(b, grp_g, grp_p, block_cin, f"bco{blk_lo}")
    carry[width] = block_cin
    b.drive(co[0], carry[width])
    b.annotate("carry_in_of_bit", width, co[0])
    for i in range(1, width):
        b.gate("XOR", s[i], [p[i], carry[i]])
        b.annotate("carry_in_of_bit", i, carry[i])
    return b.build()


def gen_mac_int8() -> Netlist:
    """Signed 8-bit multiply-accumulate: Baugh-Wooley 8x8 multiplier feeding
    a 16-bit carry-lookahead accumulator adder. Inputs a(8), b(8), acc(16);
    output out(16), wrap-around two's complement.

    Annotations: carry_in_of_bit[1..15] from the accumulator adder, and
    mul_out_of_bit[0..15] naming the internal product nets (the block
    boundary used by error-sweep tooling)."""
    bw = gen_baugh_wooley(8)
    cla = gen_cla_adder(16)
    b = _Builder()
    b.input_bus("a", 8)
    b.input_bus("b", 8)
    b.input_bus("acc", 16)
    out = b.output_bus("out", 16)

    def bw_net(n):
        m = re.fullmatch(r"p\[(\d+)\]", n)
        if m:
            return f"prod{m.group(1)}"
        if n.startswith("a[") or n.startswith("b["):
            return n
        return f"m_{n}"

    next_id = 0
    for gate in bw.gates:
        o = bw_net(gate.output)
        if o not in b._netset:
            b._declare(o)
        b.gates.append(Gate(next_id, gate.kind, tuple(bw_net(n) for n in gate.inputs), o))
        next_id += 1
    b._next_id = next_id
    for i in range(16):
        b.annotate("mul_out_of_bit", i, f"prod{i}")

    keep = fanin_gates(cla, cla.bus_nets("sum"))

    def cla_net(n):
        m = re.fullmatch(r"([ab])\[(\d+)\]", n)
        if m:
            return (f"prod{m.group(2)}" if m.group(1) == "a" else f"acc[{m.group(2)}]")
        m = re.fullmatch(r"sum\[(\d+)\]", n)
        if m:
            return f"out[{m.group(1)}]"
        return f"c_{n}"

    for gate in cla.gates:
        if gate.id not in keep:
            continue
        o = cla_net(gate.output)
        if o not in b._netset:
            b._declare(o)
        b.gates.append(
            Gate(b._next_id, gate.kind, tuple(cla_net(n) for n in gate.inputs), o)
        )
        b._next_id += 1
    for k in range(1, 16):
        b.annotate("carry_in_of_bit", k, cla_net(cla.annotation("carry_in_of_bit", k)))
    return b.build()


def extract_subcircuit(nl: Netlist, inputs, outputs) -> Netlist:
    """Carve out the cone between new input nets and the given output nets.

    ``inputs``/``outputs`` are [(bus_name, [existing net names])] with nets
    LSB-first; gate ids are preserved so fault sites stay valid."""
    b = _Builder()
    rename = {}
    for bus, nets in inputs:
        fresh = b.input_bus(bus, len(nets))
        rename.update(zip(nets, fresh))
    for bus, nets in outputs:
        fresh = b.output_bus(bus, len(nets))
        rename.update(zip(nets, fresh))
    cut = {n for _, nets in inputs for n in nets}
    driver = {g.output: g for g in nl.gates}
    keep = set()
    stack = [n for _, nets in outputs for n in nets]
    seen = set()
    while stack:
        n = stack.pop()
        if n in seen or n in cut:
            continue
        seen.add(n)
        g = driver.get(n)
        if g is None:
            continue
        keep.add(g.id)
        stack.extend(g.inputs)
    for gate in sorted((g for g in nl.gates if g.id in keep), key=lambda g: g.id):
        o = rename.get(gate.output, gate.output)
        if o not in b._netset:
            b._declare(o)
        ins = []
        for n in gate.inputs:
            nn = rename.get(n, n)
            if nn not in b._netset:
                b._declare(nn)
            ins.append(nn)
        b.gates.append(Gate(gate.id, gate.kind, tuple(ins), o))
    return b.build()


# ---------------------------------------------------------------------------
# text and JSON formats
# ---------------------------------------------------------------------------


def _check_name(name, line, col):
    if not _NAME_RE.match(name):
        raise NetlistSyntaxError(f"bad name '{name}'", line, col)


def parse_netlist(text: str) -> Netlist:
    """Parse the structural text format (see emit_netlist). Statements are
    order-insensitive; gate ids must be unique."""
    input_buses = []
    output_buses = []
    internal = []
    gates = []
    annotations = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        toks = line.split()
        col = raw.index(toks[0]) + 1
        kw = toks[0]
        if kw in ("input", "output"):
            if len(toks) != 3:
                raise NetlistSyntaxError(f"'{kw}' needs a name and a width", lineno, col)
            _check_name(toks[1], lineno, col)
            try:
                width = int(toks[2])
            except ValueError:
                raise NetlistSyntaxError(f"bad width '{toks[2]}'", lineno, col)
            if width <= 0:
                raise NetlistSyntaxError("bus width must be positive", lineno, col)
            (input_buses if kw == "input" else output_buses).append((toks[1], width))
        elif kw == "net":
            if len(toks) != 2:
                raise NetlistSyntaxError("'net' needs exactly one name", lineno, col)
            _check_name(toks[1], lineno, col)
            internal.append(toks[1])
        elif kw == "gate":
            if len(toks) < 5:
                raise NetlistSyntaxError(
                    "'gate' needs id, kind, output and at least one input", lineno, col
                )
            try:
                gid = int(toks[1])
            except ValueError:
                raise NetlistSyntaxError(f"bad gate id '{toks[1]}'", lineno, col)
            kind = toks[2]
            if kind not in KIND_CODE:
                raise NetlistSyntaxError(f"unknown gate kind '{kind}'", lineno, col)
            for t in toks[3:]:
                _check_name(t, lineno, col)
            try:
                gates.append(Gate(gid, kind, tuple(toks[4:]), toks[3]))
            except NetlistSyntaxError as e:
                raise NetlistSyntaxError(str(e), lineno, col)
        elif kw == "annot":
            if len(toks) != 4:
                raise NetlistSyntaxError("'annot' needs tag, index and net", lineno, col)
            try:
                idx = int(toks[2])
            except ValueError:
                raise NetlistSyntaxError(f"bad annotation index '{toks[2]}'", lineno, col)
            _check_name(toks[3], lineno, col)
            annotations[(toks[1], idx)] = toks[3]
        else:
            raise NetlistSyntaxError(f"unknown statement '{kw}'", lineno, col)
    seen = set()
    for name, _ in input_buses + output_buses:
        if name in seen:
            raise NetlistSyntaxError(f"duplicate bus '{name}'")
        seen.add(name)
    for n in internal:
        if n in seen:
            raise NetlistSyntaxError(f"duplicate net '{n}'")
        seen.add(n)
    nets = _bus_bit_nets(input_buses) + _bus_bit_nets(output_buses) + internal
    return Netlist(
        tuple(input_buses), tuple(output_buses), tuple(nets), tuple(gates), annotations
    )


def emit_netlist(nl: Netlist) -> str:
    """Canonical text form: buses in declaration order, internal nets sorted,
    gates by id, annotations by (tag, index)."""
    bus_bits = set(_bus_bit_nets(nl.input_buses) + _bus_bit_nets(nl.output_buses))
    lines = []
    for name, width in nl.input_buses:
        lines.append(f"input {name} {width}")
    for name, width in nl.output_buses:
        lines.append(f"output {name} {width}")
    for n in sorted(n for n in nl.nets if n not in bus_bits):
        lines.append(f"net {n}")
    for g in sorted(nl.gates, key=lambda g: g.id):
        lines.append(f"gate {g.id} {g.kind} {g.output} {' '.join(g.inputs)}")
    for (tag, idx), n in sorted(nl.annotations.items()):
        lines.append(f"annot {tag} {idx} {n}")
    return "\n".join(lines) + "\n"


def emit_netlist_json(nl: Netlist) -> str:
    bus_bits = set(_bus_bit_nets(nl.input_buses) + _bus_bit_nets(nl.output_buses))
    obj = {
        "inputs": [{"name": n, "width": w} for n, w in nl.input_buses],
        "outputs": [{"name": n, "width": w} for n, w in nl.output_buses],
        "nets": sorted(n for n in nl.nets if n not in bus_bits),
        "gates": [
            {"id": g.id, "kind": g.kind, "out": g.output, "in": list(g.inputs)}
            for g in sorted(nl.gates, key=lambda g: g.id)
        ],
        "annotations": [
            {"tag": t, "index": i, "net": n} for (t, i), n in sorted(nl.annotations.items())
        ],
    }
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def parse_netlist_json(text: str) -> Netlist:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetlistSyntaxError(f"bad JSON: {e}", e.lineno, e.colno)
    try:
        input_buses = [(d["name"], int(d["width"])) for d in obj["inputs"]]
        output_buses = [(d["name"], int(d["width"])) for d in obj["outputs"]]
        internal = list(obj["nets"])
        gates = [
            Gate(int(d["id"]), d["kind"], tuple(d["in"]), d["out"]) for d in obj["gates"]
        ]
        annotations = {
            (d["tag"], int(d["index"])): d["net"] for d in obj.get("annotations", [])
        }
    except (KeyError, TypeError) as e:
        raise NetlistSyntaxError(f"missing or malformed field: {e}")
    nets = _bus_bit_nets(input_buses) + _bus_bit_nets(output_buses) + internal
    return Netlist(
        tuple(input_buses), tuple(output_buses), tuple(nets), tuple(gates), annotations
    )
