"""Stuck-at fault enumeration and collapsing, parallel-pattern fault
simulation, and deterministic test generation (random phase + PODEM +
reverse-order compaction)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .netlist import GATE_KINDS, KIND_CODE, Netlist, OUTPUT_PIN

SA0, SA1 = 0, 1


@dataclass(frozen=True, order=True)
class FaultSite:
    gate: int
    pin: int  # OUTPUT_PIN (-1) or input index
    polarity: int  # SA0 / SA1

    def label(self) -> str:
        where = "out" if self.pin == OUTPUT_PIN else f"in{self.pin}"
        return f"g{self.gate}.{where}.sa{self.polarity}"


@dataclass(frozen=True)
class FaultList:
    """Fault sites, optionally collapsed to equivalence-class representatives."""

    sites: tuple[FaultSite, ...]
    collapsed: bool
    uncollapsed_count: int
    equivalence_classes: tuple[tuple[FaultSite, ...], ...] | None = None

    def __len__(self):
        return len(self.sites)

    def to_obj(self):
        return {
            "collapsed": self.collapsed,
            "uncollapsed_count": self.uncollapsed_count,
            "sites": [[s.gate, s.pin, s.polarity] for s in self.sites],
            "classes": None
            if self.equivalence_classes is None
            else [[[s.gate, s.pin, s.polarity] for s in c] for c in self.equivalence_classes],
        }

    @classmethod
    def from_obj(cls, obj):
        classes = obj.get("classes")
        return cls(
            tuple(FaultSite(*s) for s in obj["sites"]),
            obj["collapsed"],
            obj["uncollapsed_count"],
            None if classes is None else tuple(tuple(FaultSite(*s) for s in c) for c in classes),
        )


_CONTROLLING = {"AND": 0, "NAND": 0, "OR": 1, "NOR": 1}
_INVERTING = {"NAND", "NOR", "NOT", "XNOR"}


def enumerate_faults(nl: Netlist, gates=None, collapse: bool = True) -> FaultList:
    """SA0/SA1 on every input and output pin of the selected gates.

    Collapsing merges (a) controlling-value input faults with the matching
    output fault of the same gate and (b) stem/branch faults across
    fanout-free internal nets, when both endpoint gates are selected.
    """
    by_id = {g.id: g for g in nl.gates}
    if gates is None:
        chosen = sorted(by_id)
    else:
        chosen = sorted(set(gates))
        missing = [g for g in chosen if g not in by_id]
        if missing:
            raise ValueError(f"unknown gate ids {missing[:5]}")
    sites = []
    for gid in chosen:
        g = by_id[gid]
        for pol in (SA0, SA1):
            sites.append(FaultSite(gid, OUTPUT_PIN, pol))
        for j in range(len(g.inputs)):
            for pol in (SA0, SA1):
                sites.append(FaultSite(gid, j, pol))
    total = len(sites)
    if not collapse:
        return FaultList(tuple(sites), False, total)

    parent = {s: s for s in sites}

    def find(s):
        while parent[s] != s:
            parent[s] = parent[parent[s]]
            s = parent[s]
        return s

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[max(rx, ry)] = min(rx, ry)

    chosen_set = set(chosen)
    for gid in chosen:
        g = by_id[gid]
        kind = g.kind
        if kind in ("NOT", "BUF"):
            inv = kind == "NOT"
            for pol in (SA0, SA1):
                union(FaultSite(gid, 0, pol), FaultSite(gid, OUTPUT_PIN, pol ^ inv))
        elif kind in _CONTROLLING:
            c = _CONTROLLING[kind]
            out_pol = c ^ (kind in _INVERTING)
            for j in range(len(g.inputs)):
                union(FaultSite(gid, j, c), FaultSite(gid, OUTPUT_PIN, out_pol))
        # XOR/XNOR: no structural equivalences
    readers = {}
    for g in nl.gates:
        for j, n in enumerate(g.inputs):
            readers.setdefault(n, []).append((g.id, j))
    po = set(nl.primary_outputs)
    for gid in chosen:
        g = by_id[gid]
        n = g.output
        r = readers.get(n, [])
        if len(r) == 1 and n not in po:
            rid, rpin = r[0]
            if rid in chosen_set:
                for pol in (SA0, SA1):
                    union(FaultSite(gid, OUTPUT_PIN, pol), FaultSite(rid, rpin, pol))
    groups = {}
    for s in sites:
        groups.setdefault(find(s), []).append(s)
    reps = sorted(groups)
    classes = tuple(tuple(sorted(groups[r])) for r in reps)
    return FaultList(tuple(reps), True, total, classes)


@dataclass
class TestSet:
    """Ordered input patterns with expected outputs and detection bookkeeping.

    Patterns are stored as per-bus integer arrays (``values``), aligned with
    the netlist's input-bus order. Detection data is a packed bit matrix:
    bit p of ``det_words[f, p // 64]`` says pattern p detects fault f.
    """

    buses: tuple[tuple[str, int], ...]
    values: dict[str, np.ndarray]
    expected: dict[str, np.ndarray] | None = None
    faults: FaultList | None = None
    det_words: np.ndarray | None = None
    undetectable: tuple[FaultSite, ...] = ()
    aborted: tuple[FaultSite, ...] = ()
    seed: int | None = None

    @property
    def n_patterns(self) -> int:
        if not self.values:
            return 0
        return len(next(iter(self.values.values())))

    def detects(self, p: int) -> frozenset[FaultSite]:
        """Faults detected by pattern p."""
        if self.det_words is None:
            raise ValueError("run fault_simulate first")
        w, b = divmod(p, 64)
        mask = (self.det_words[:, w] >> np.uint64(b)) & np.uint64(1)
        return frozenset(s for s, m in zip(self.faults.sites, mask) if m)

    def detected_faults(self) -> frozenset[FaultSite]:
        if self.det_words is None:
            return frozenset()
        hit = self.det_words.any(axis=1)
        return frozenset(s for s, m in zip(self.faults.sites, hit) if m)

    def first_detection(self) -> dict[FaultSite, int]:
        """fault -> index of the first pattern that detects it."""
        out = {}
        if self.det_words is None:
            return out
        for i, s in enumerate(self.faults.sites):
            row = self.det_words[i]
            nz = np.nonzero(row)[0]
            if nz.size:
                w = int(nz[0])
                word = int(row[w])
                first = (word & -word).bit_length() - 1
                out[s] = w * 64 + first
        return out

    @property
    def coverage(self) -> float:
        if self.faults is None or len(self.faults) == 0:
            return 1.0
        return len(self.detected_faults()) / len(self.faults)

    @property
    def coverage_detectable(self) -> float:
        if self.faults is None:
            return 1.0
        detectable = len(self.faults) - len(self.undetectable)
        if detectable <= 0:
            return 1.0
        return len(self.detected_faults()) / detectable

    def write_hex(self) -> str:
        lines = ["buses " + " ".join(f"{b} {w}" for b, w in self.buses)]
        digits = {b: (w + 3) // 4 for b, w in self.buses}
        arrays = [(b, self.values[b], digits[b], (1 << w) - 1) for b, w in self.buses]
        for p in range(self.n_patterns):
            lines.append(
                " ".join(f"{int(v[p]) & m:0{d}x}" for _, v, d, m in arrays)
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def read_hex(cls, text: str) -> "TestSet":
        lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
        head = lines[0].split()
        if head[0] != "buses" or len(head) % 2 != 1:
            raise ValueError("pattern file must start with a 'buses' header")
        buses = tuple((head[i], int(head[i + 1])) for i in range(1, len(head), 2))
        cols = {b: [] for b, _ in buses}
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != len(buses):
                raise ValueError(f"pattern row has {len(parts)} fields, want {len(buses)}")
            for (b, _), tok in zip(buses, parts):
                cols[b].append(int(tok, 16))
        values = {b: np.array(cols[b], dtype=np.int64) for b, _ in buses}
        return cls(buses, values)


def _fault_arrays(c, faults):
    fg = np.empty(len(faults), dtype=np.int64)
    fp = np.empty(len(faults), dtype=np.int64)
    fl = np.empty(len(faults), dtype=np.int8)
    for i, s in enumerate(faults):
        fg[i] = c.pos_of_id[s.gate]
        fp[i] = s.pin
        fl[i] = s.polarity
    return fg, fp, fl


def _all_out_bits(c):
    return np.concatenate([c.out_bits[b] for b, _ in c.netlist.output_buses])


def fault_simulate(nl: Netlist, patterns: TestSet, faults: FaultList) -> TestSet:
    """Bit-parallel (64 patterns per word) single-fault simulation.

    Returns a copy of `patterns` with expected outputs, the fault universe,
    and the packed detection matrix filled in.
    """
    c = nl.compiled()
    rows, n = c.pi_rows_from_values(patterns.values)
    good_vals = c.eval_packed(rows)
    out_bits = _all_out_bits(c)
    good = good_vals[out_bits]
    template = np.zeros_like(good_vals)
    template[c.pi_bits, :] = rows
    if len(faults.sites) == 0:
        det = np.zeros((0, rows.shape[1]), dtype=np.uint64)
    else:
        fg, fp, fl = _fault_arrays(c, faults.sites)
        det = _kernels.detect_matrix(
            c.kind, c.out_net, c.in_ptr, c.in_net, template, out_bits, good, fg, fp, fl
        )
        # mask padding bits beyond the last real pattern
        if n % 64:
            det[:, -1] &= np.uint64((1 << (n % 64)) - 1)
    expected = {
        b: _kernels.unpack_words_to_ints(good_vals[c.out_bits[b]])[:n]
        for b, _ in nl.output_buses
    }
    return replace(
        patterns, expected=expected, faults=faults, det_words=det
    )


# ---------------------------------------------------------------------------
# PODEM
# ---------------------------------------------------------------------------

_X = 2


class _Podem:
    """Path-oriented decision making over the compiled netlist.

    Values are tracked as two planes (good, faulty) in {0,1,X}. The faulty
    plane pins the fault site; a test exists when some primary output
    differs across planes with both planes binary.
    """

    def __init__(self, c, fault: FaultSite):
        self.c = c
        self.n_gates = int(c.kind.shape[0])
        self.n_nets = c.n_nets
        # plain-python topology: the search loop is scalar-heavy
        self.gkind = c.kind.tolist()
        self.gout = c.out_net.tolist()
        in_ptr = c.in_ptr.tolist()
        in_net = c.in_net.tolist()
        self.gin = [in_net[in_ptr[p] : in_ptr[p + 1]] for p in range(self.n_gates)]
        self.driver = c.driver_pos.tolist()
        self.fault = fault
        self.fpos = c.pos_of_id[fault.gate]
        self.pol = fault.polarity
        self.good = [_X] * self.n_nets
        self.faulty = [_X] * self.n_nets
        self.pi_set = {}
        self.po_nets = [int(x) for x in _all_out_bits(c)]
        self.inverting = tuple(GATE_KINDS[k] in _INVERTING for k in range(len(GATE_KINDS)))
        self.noncontrol = tuple(
            1 - _CONTROLLING.get(GATE_KINDS[k], 1) for k in range(len(GATE_KINDS))
        )
        # site net whose good value must be the opposite of the stuck value
        if fault.pin == OUTPUT_PIN:
            self.site_net = self.gout[self.fpos]
        else:
            self.site_net = self.gin[self.fpos][fault.pin]

    @staticmethod
    def _combine(kd, vals):
        if kd == 6:  # NOT
            v = vals[0]
            return _X if v == _X else 1 - v
        if kd == 7:  # BUF
            return vals[0]
        if kd == 0 or kd == 2:  # AND / NAND
            if 0 in vals:
                r = 0
            elif _X in vals:
                return _X
            else:
                r = 1
            return 1 - r if kd == 2 else r
        if kd == 1 or kd == 3:  # OR / NOR
            if 1 in vals:
                r = 1
            elif _X in vals:
                return _X
            else:
                r = 0
            return 1 - r if kd == 3 else r
        if _X in vals:
            return _X
        r = 0
        for v in vals:
            r ^= v
        return 1 - r if kd == 5 else r

    def imply(self):
        good = self.good
        faulty = self.faulty
        for i in range(self.n_nets):
            good[i] = _X
            faulty[i] = _X
        for net, v in self.pi_set.items():
            good[net] = v
            faulty[net] = v
        fpos = self.fpos
        fpin = self.fault.pin
        for pos in range(self.n_gates):
            kd = self.gkind[pos]
            ins = self.gin[pos]
            on = self.gout[pos]
            good[on] = self._combine(kd, [good[n] for n in ins])
            if pos == fpos:
                if fpin == OUTPUT_PIN:
                    faulty[on] = self.pol
                    continue
                fvals = [faulty[n] for n in ins]
                fvals[fpin] = self.pol
                faulty[on] = self._combine(kd, fvals)
            else:
                faulty[on] = self._combine(kd, [faulty[n] for n in ins])

    def error_at_po(self):
        good = self.good
        faulty = self.faulty
        for n in self.po_nets:
            g, f = good[n], faulty[n]
            if g != _X and f != _X and g != f:
                return True
        return False

    def possible(self):
        # excitation must still be achievable
        gv = self.good[self.site_net]
        if gv == self.pol:
            return False
        if gv == _X:
            return True
        # excited: need an X-path from some difference point to a PO
        good = self.good
        faulty = self.faulty
        potential = [False] * self.n_nets
        if self.fault.pin != OUTPUT_PIN:
            # a pin fault's difference lives inside the gate: it can still
            # propagate while the gate output is unresolved in either plane
            on = self.gout[self.fpos]
            if good[on] == _X or faulty[on] == _X:
                potential[on] = True
        for pos in range(self.n_gates):
            on = self.gout[pos]
            g, f = good[on], faulty[on]
            if g != _X and f != _X:
                if g != f:
                    potential[on] = True
                continue
            if potential[on]:
                continue
            for n in self.gin[pos]:
                if potential[n]:
                    potential[on] = True
                    break
        return any(potential[n] for n in self.po_nets)

    def objective(self):
        gv = self.good[self.site_net]
        if gv == _X:
            return self.site_net, 1 - self.pol
        # D-frontier: a gate with a difference on some input and X output
        good = self.good
        faulty = self.faulty
        fpos = self.fpos
        fpin = self.fault.pin
        for pos in range(self.n_gates):
            on = self.gout[pos]
            if good[on] != _X and faulty[on] != _X:
                continue
            has_diff = False
            x_in = None
            ins = self.gin[pos]
            for j, n in enumerate(ins):
                g, f = good[n], faulty[n]
                if pos == fpos and fpin == j:
                    f = self.pol
                if g != _X and f != _X and g != f:
                    has_diff = True
                elif g == _X or f == _X:
                    x_in = n
            if has_diff and x_in is not None:
                return x_in, self.noncontrol[self.gkind[pos]]
        return None

    def backtrace(self, net, val):
        good = self.good
        faulty = self.faulty
        while True:
            pos = self.driver[net]
            if pos < 0:
                return net, val
            nxt = None
            for n in self.gin[pos]:
                if good[n] == _X or faulty[n] == _X:
                    nxt = n
                    break
            if nxt is None:
                return None
            if self.inverting[self.gkind[pos]]:
                val = 1 - val
            net = nxt

    def run(self, backtrack_limit):
        """Returns ('test', {pi_net: val}) | ('untestable', None) | ('aborted', None)."""
        self.imply()
        stack = []
        backtracks = 0
        while True:
            if self.error_at_po():
                return "test", dict(self.pi_set)
            if self.possible():
                obj = self.objective()
                bt = None if obj is None else self.backtrace(*obj)
            else:
                bt = None
            if bt is not None:
                net, val = bt
                stack.append([net, val, False])
                self.pi_set[net] = val
                self.imply()
                continue
            # backtrack
            while stack and stack[-1][2]:
                net = stack.pop()[0]
                del self.pi_set[net]
            if not stack:
                return "untestable", None
            backtracks += 1
            if backtracks > backtrack_limit:
                return "aborted", None
            top = stack[-1]
            top[1] = 1 - top[1]
            top[2] = True
            self.pi_set[top[0]] = top[1]
            self.imply()


def podem(nl: Netlist, fault: FaultSite, backtrack_limit: int = 10000):
    """Deterministic search for a single test. Returns (status, assignment)
    where assignment maps PI net names to 0/1 for status 'test'."""
    c = nl.compiled()
    status, assign = _Podem(c, fault).run(backtrack_limit)
    if status != "test":
        return status, None
    names = {int(c.net_index[n]): n for n in nl.primary_inputs}
    return status, {names[net]: val for net, val in assign.items()}


# ---------------------------------------------------------------------------
# test generation
# ---------------------------------------------------------------------------


def _values_from_rows(nl, rows):
    """Per-bus integer values from a list of {pi_bit_index: 0/1} rows."""
    c = nl.compiled()
    spans = c.input_bit_spans()
    out = {bus: np.zeros(len(rows), dtype=np.int64) for bus, _, _ in spans}
    for p, row in enumerate(rows):
        for bit, v in row.items():
            if not v:
                continue
            for bus, first, width in spans:
                if first <= bit < first + width:
                    out[bus][p] |= 1 << (bit - first)
                    break
    return out


def generate_patterns(
    nl: Netlist,
    faults: FaultList,
    seed: int,
    backtrack_limit: int = 10000,
    random_batches: int = 200,
    stall_batches: int = 3,
    fault_dropping: bool = True,
    compact: bool = True,
) -> TestSet:
    """Three-phase ATPG: seeded random patterns with fault dropping, PODEM
    for the leftovers, reverse-order greedy compaction. The returned TestSet
    carries coverage against `faults` confirmed by re-simulation."""
    c = nl.compiled()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA79]))
    buses = tuple(nl.input_buses)
    n_faults = len(faults.sites)
    kept: dict[str, list] = {b: [] for b, _ in buses}

    def add_pattern(vals):
        for b, _ in buses:
            kept[b].append(int(vals[b]))

    def random_bus(width, n):
        out = np.zeros(n, dtype=np.int64)
        for lo in range(0, width, 32):
            bits = min(32, width - lo)
            out |= rng.integers(0, 1 << bits, n, dtype=np.int64) << lo
        return out

    covered = np.zeros(n_faults, dtype=bool)
    if n_faults and random_batches:
        stall = 0
        for _ in range(random_batches):
            if covered.all() or stall >= stall_batches:
                break
            batch = {b: random_bus(w, 64) for b, w in buses}
            # with dropping, only still-uncovered faults are simulated
            target = np.nonzero(~covered)[0] if fault_dropping else np.arange(n_faults)
            sub = FaultList(
                tuple(faults.sites[i] for i in target), faults.collapsed, 0
            )
            ts = fault_simulate(nl, TestSet(buses, batch), sub)
            det = ts.det_words
            any_new = False
            for p in range(64):
                bit = (det[:, 0] >> np.uint64(p)) & np.uint64(1)
                hits = target[bit.astype(bool)]
                new = hits[~covered[hits]]
                if new.size:
                    any_new = True
                    covered[new] = True
                    add_pattern({b: batch[b][p] for b, _ in buses})
                elif not fault_dropping:
                    add_pattern({b: batch[b][p] for b, _ in buses})
            stall = 0 if any_new else stall + 1
    remaining = [int(i) for i in np.nonzero(~covered)[0]]

    undetectable = []
    aborted = []
    pi_names = list(nl.primary_inputs)
    name_to_bit = {n: i for i, n in enumerate(pi_names)}
    for idx in list(remaining):
        site = faults.sites[idx]
        status, assign = podem(nl, site, backtrack_limit)
        if status == "untestable":
            undetectable.append(site)
            remaining.remove(idx)
            continue
        if status == "aborted":
            aborted.append(site)
            remaining.remove(idx)
            continue
        row = {name_to_bit[n]: v for n, v in assign.items()}
        fill = rng.integers(0, 2, len(pi_names))
        full = {i: int(fill[i]) for i in range(len(pi_names))}
        full.update(row)
        vals = _values_from_rows(nl, [full])
        add_pattern({b: vals[b][0] for b, _ in buses})
        # drop everything the new pattern detects
        sub = FaultList(tuple(faults.sites[i] for i in remaining), faults.collapsed, 0)
        one = TestSet(buses, {b: np.array([vals[b][0]]) for b, _ in buses})
        ts = fault_simulate(nl, one, sub)
        hit = ts.det_words[:, 0].astype(bool)
        remaining = [i for i, h in zip(remaining, hit) if not h]

    values = {b: np.array(kept[b], dtype=np.int64) for b, _ in buses}
    result = TestSet(buses, values, seed=seed)
    if result.n_patterns:
        result = fault_simulate(nl, result, faults)
        if compact:
            keep_idx = _reverse_greedy(result)
            values = {b: values[b][keep_idx] for b, _ in buses}
            result = fault_simulate(nl, TestSet(buses, values, seed=seed), faults)
    else:
        result = fault_simulate(nl, result, faults)
    result.undetectable = tuple(undetectable)
    result.aborted = tuple(aborted)
    return result


def _reverse_greedy(ts: TestSet) -> list[int]:
    """Reverse-order compaction: walk patterns newest-first, keep one only
    if it detects a fault no kept pattern detects. Never reduces coverage."""
    det = ts.det_words
    n = ts.n_patterns
    covered = np.zeros(det.shape[0], dtype=bool)
    keep = []
    for p in range(n - 1, -1, -1):
        w, b = divmod(p, 64)
        hits = ((det[:, w] >> np.uint64(b)) & np.uint64(1)).astype(bool)
        if (hits & ~covered).any():
            covered |= hits
            keep.append(p)
    keep.reverse()
    return keep


def split_pattern_generation(nl: Netlist, part, seed: int, **kw):
    """Independent pattern sets for the critical and non-critical fault
    lists of a ConePartition."""
    t_crit = generate_patterns(nl, part.f_crit, seed, **kw)
    t_noncrit = generate_patterns(nl, part.f_noncrit, seed + 1, **kw)
    return t_crit, t_noncrit


def fault_csv(
    faults: FaultList, class_of: dict[FaultSite, str], first_det: dict[FaultSite, int]
) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["gate", "pin", "polarity", "class", "detected_by"])
    for s in faults.sites:
        pin = "out" if s.pin == OUTPUT_PIN else f"in{s.pin}"
        det = first_det.get(s)
        w.writerow(
            [s.gate, pin, f"sa{s.polarity}", class_of.get(s, ""), "" if det is None else det]
        )
    return buf.getvalue()
