"""Faulty-MAC evaluation, worst-case error sweeps, and the behavioral error
models consumed by the PE-array and learning layers.

Error magnitudes follow the worst case for faults confined to output bits
0..k plus one corrupted carry into bit k+1: sum(2^i for i in 0..k+1)
= 2^(k+2) - 1. All integer errors are centered modular differences on the
16-bit wrap-around output.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .atpg import FaultSite
from .netlist import BitVec, Netlist, eval_batch, extract_subcircuit, fanin_gates


def error_bound(k: int) -> int:
    """Worst-case MAC error magnitude when bits 0..k are tolerated."""
    return (1 << (k + 2)) - 1


@dataclass(frozen=True)
class ErrorModel:
    """Behavioral per-PE MAC error.

    ``worst_case_signed`` perturbs every MAC by the full bound with a fixed
    per-PE sign; ``per_fault_netlist`` evaluates the gate-level netlist with
    a concrete fault injected (desk-scale arrays only).
    """

    format: str = "int8_mac"  # or "bfloat16_mac_behavioral"
    k: int = 1
    mode: str = "worst_case_signed"  # or "per_fault_netlist"
    fault: FaultSite | None = None

    def __post_init__(self):
        if self.format not in ("int8_mac", "bfloat16_mac_behavioral"):
            raise ValueError(f"unknown format '{self.format}'")
        if self.mode not in ("worst_case_signed", "per_fault_netlist"):
            raise ValueError(f"unknown mode '{self.mode}'")
        if self.k < 0:
            raise ValueError("k must be >= 0")

    @property
    def magnitude(self) -> int:
        return error_bound(self.k)


def behavioral_error(model: ErrorModel, exact, polarity: int = 1):
    """Perturb an exact MAC value by the model's worst case.

    int8: exact +/- (2^(k+2)-1). bfloat16 behavioral: the k+1 low mantissa
    bits of the product flip, worth at most (2^(k+1)-1) units of the last
    place at the product's exponent (7 explicit mantissa bits).
    """
    if model.format == "int8_mac":
        return exact + polarity * model.magnitude
    x = float(exact)
    if x == 0.0:
        return 0.0
    e = int(np.floor(np.log2(abs(x))))
    ulp = 2.0 ** (e - 7)
    return x + polarity * ((1 << (model.k + 1)) - 1) * ulp


def inject_eval(nl: Netlist, faults, inputs: dict) -> dict[str, BitVec]:
    """Evaluate with the given stuck-at faults active (possibly several).

    Each faulted point is forced after its driver: an output fault pins the
    net for all fanout, an input fault pins only that gate pin."""
    sites = [(f.gate, f.pin, f.polarity) for f in faults]
    c = nl.compiled()
    for gid, pin, pol in sites:
        if gid not in c.pos_of_id:
            raise ValueError(f"no gate {gid} in netlist")
    vals = {}
    for bus, width in nl.input_buses:
        if bus not in inputs:
            raise ValueError(f"missing input bus '{bus}'")
        v = inputs[bus]
        if isinstance(v, BitVec):
            if v.width != width:
                raise ValueError(f"bus '{bus}' expects width {width}")
            v = v.value
        vals[bus] = np.array([int(v)], dtype=np.int64)
    out = eval_batch(nl, vals, faults=sites)
    return {bus: BitVec(w, int(out[bus][0])) for bus, w in nl.output_buses}


@dataclass(frozen=True)
class MaxErrorResult:
    fault: FaultSite
    max_error: int
    exhaustive: bool
    domain: str
    n_patterns: int


def _is_mac_netlist(nl: Netlist) -> bool:
    return any(tag == "mul_out_of_bit" for tag, _ in nl.annotations)


def _sweep(nl, fault_sites, row_builder, n_patterns, block_words=16384):
    """Max centered-modular error per fault over packed pattern blocks."""
    c = nl.compiled()
    out_bus, out_width = nl.output_buses[0]
    out_bits = c.out_bits[out_bus]
    fg = np.array([c.pos_of_id[s.gate] for s in fault_sites], dtype=np.int64)
    fp = np.array([s.pin for s in fault_sites], dtype=np.int64)
    fl = np.array([s.polarity for s in fault_sites], dtype=np.int8)
    cur = np.zeros(len(fault_sites), dtype=np.int64)
    total_words = (n_patterns + 63) // 64
    for w0 in range(0, total_words, block_words):
        nw = min(block_words, total_words - w0)
        rows = row_builder(w0, nw)
        vals = c.eval_packed(rows)
        good_bits = np.ascontiguousarray(vals[out_bits])
        template = np.zeros_like(vals)
        template[c.pi_bits, :] = rows
        n_valid = min(nw * 64, n_patterns - w0 * 64)
        _kernels.max_err_update(
            c.kind, c.out_net, c.in_ptr, c.in_net, template, out_bits,
            good_bits, out_width, n_valid, fg, fp, fl, cur,
        )
    return cur


def _achievable_products() -> np.ndarray:
    a = np.arange(-128, 128, dtype=np.int64)
    return np.unique(np.multiply.outer(a, a).ravel() & 0xFFFF)


_mac_cache = {}


def _mac_parts(nl: Netlist):
    key = id(nl)
    if key not in _mac_cache:
        prods = [nl.annotation("mul_out_of_bit", i) for i in range(16)]
        accs = [f"acc[{i}]" for i in range(16)]
        outs = [f"out[{i}]" for i in range(16)]
        mul_gates = fanin_gates(nl, prods)
        adder = extract_subcircuit(nl, [("x", prods), ("acc", accs)], [("out", outs)])
        _mac_cache[key] = (mul_gates, adder, _achievable_products())
    return _mac_cache[key]


def _operand_rows(c, w0, nw):
    """a,b exhaustive (16 counter bits), every other input bus zero."""
    rows = np.zeros((c.n_input_bits(), nw), dtype=np.uint64)
    rows[:16] = _kernels.exhaustive_pi_rows(16, w0, nw)
    return rows


def _product_acc_rows(products):
    words_per_product = 1024  # 65536 accumulator patterns

    def build(w0, nw):
        rows = np.empty((32, nw), dtype=np.uint64)
        # x bits (global 0..15) select one product per 1024-word run
        pidx = (np.arange(w0, w0 + nw) // words_per_product).astype(np.int64)
        pvals = products[np.minimum(pidx, len(products) - 1)].astype(np.uint64)
        full = np.uint64(0xFFFFFFFFFFFFFFFF)
        for b in range(16):
            bit = (pvals >> np.uint64(b)) & np.uint64(1)
            rows[b] = np.where(bit.astype(bool), full, np.uint64(0))
        # accumulator bits (global 16..31) count exhaustively within the run
        acc = _kernels.exhaustive_pi_rows(16, 0, 1024)
        reps = np.empty((16, nw), dtype=np.uint64)
        off = np.arange(w0, w0 + nw) % words_per_product
        reps[:, :] = acc[:, off]
        rows[16:] = reps
        return rows

    return build


def max_error_many(nl: Netlist, fault_sites, max_exhaustive_bits: int = 24,
                   samples: int = 1 << 20, seed: int = 0) -> dict:
    """Exhaustive (or flagged-sampled) max |faulty - exact| per fault.

    For the int8 MAC the sweep is exact over the full operand/accumulator
    space: a multiplier-side fault's error is accumulator-independent (the
    healthy adder cancels), so all 2^16 operand pairs suffice; an adder-side
    fault is swept over every achievable product times every accumulator
    value on the extracted adder subcircuit.
    """
    c = nl.compiled()
    results = {}
    if _is_mac_netlist(nl):
        mul_gates, adder, products = _mac_parts(nl)
        mul_side = [s for s in fault_sites if s.gate in mul_gates]
        add_side = [s for s in fault_sites if s.gate not in mul_gates]
        if mul_side:
            cur = _sweep(nl, mul_side, lambda w0, nw: _operand_rows(c, w0, nw), 1 << 16)
            for s, m in zip(mul_side, cur):
                results[s] = MaxErrorResult(
                    s, int(m), True, "operands (accumulator-independent)", 1 << 16
                )
        if add_side:
            n_pat = len(products) * 65536
            cur = _sweep(adder, add_side, _product_acc_rows(products), n_pat)
            for s, m in zip(add_side, cur):
                results[s] = MaxErrorResult(
                    s, int(m), True, "achievable products x accumulator", n_pat
                )
        return results
    n_bits = c.n_input_bits()
    if n_bits <= max_exhaustive_bits:
        n_pat = 1 << n_bits

        def build(w0, nw):
            return _kernels.exhaustive_pi_rows(n_bits, w0, nw)

        cur = _sweep(nl, list(fault_sites), build, n_pat)
        for s, m in zip(fault_sites, cur):
            results[s] = MaxErrorResult(s, int(m), True, "exhaustive", n_pat)
        return results
    rng = np.random.default_rng(seed)
    n_pat = samples
    n_words = (n_pat + 63) // 64
    sampled = rng.integers(0, 1 << 32, (n_bits, n_words), dtype=np.int64).astype(
        np.uint64
    ) | (
        rng.integers(0, 1 << 32, (n_bits, n_words), dtype=np.int64).astype(np.uint64)
        << np.uint64(32)
    )

    def build(w0, nw):
        return sampled[:, w0 : w0 + nw]

    cur = _sweep(nl, list(fault_sites), build, n_pat)
    for s, m in zip(fault_sites, cur):
        results[s] = MaxErrorResult(s, int(m), False, "sampled", n_pat)
    return results


def max_error(nl: Netlist, fault: FaultSite, **kw) -> MaxErrorResult:
    return max_error_many(nl, [fault], **kw)[fault]


def sweep_csv(results, bound: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["gate", "pin", "polarity", "max_error", "bound", "compliant"])
    for s in sorted(results):
        r = results[s]
        pin = "out" if s.pin < 0 else f"in{s.pin}"
        w.writerow(
            [s.gate, pin, f"sa{s.polarity}", r.max_error, bound, r.max_error <= bound]
        )
    return buf.getvalue()
