"""Packed-word evaluation kernels.

All hot inner loops live here. The default implementations are numba-jitted;
setting ``PEFAULT_PURE_NUMPY=1`` selects pure-numpy versions of the same
functions (no JIT warmup, slower per call). ``benchmarks/bench_kernels.py``
compares the two paths.

Data layout: a netlist is compiled to flat arrays in topological order (see
``netlist.CompiledNetlist``). Logic values are bit-packed 64 patterns per
uint64 word, so ``net_vals`` has shape (n_nets, n_words) and pattern
``w*64 + p`` lives in bit ``p`` of word ``w``.

Gate kind codes: AND=0 OR=1 NAND=2 NOR=3 XOR=4 XNOR=5 NOT=6 BUF=7.

Stuck-at forcing: ``out_force[g]`` / ``in_force[edge]`` take values -1 (free),
0 or 1. An output force pins the driven net after its driver; an input force
pins only the value seen by that gate pin, leaving other fanout branches
untouched.
"""

from __future__ import annotations

import os

import numpy as np

PURE_NUMPY = os.environ.get("PEFAULT_PURE_NUMPY", "") not in ("", "0")

_FULL = np.uint64(0xFFFFFFFFFFFFFFFF)

# bit q of an exhaustive pattern counter, for q < 6, packed along one word
_COUNTER_MASKS = np.array(
    [
        0xAAAAAAAAAAAAAAAA,
        0xCCCCCCCCCCCCCCCC,
        0xF0F0F0F0F0F0F0F0,
        0xFF00FF00FF00FF00,
        0xFFFF0000FFFF0000,
        0xFFFFFFFF00000000,
    ],
    dtype=np.uint64,
)


def exhaustive_pi_rows(n_bits: int, w0: int, n_words: int) -> np.ndarray:
    """Packed rows for an exhaustive input counter.

    Row q holds bit q of the pattern index for patterns w0*64 .. (w0+n_words)*64.
    """
    rows = np.empty((n_bits, n_words), dtype=np.uint64)
    words = np.arange(w0, w0 + n_words, dtype=np.uint64)
    for q in range(n_bits):
        if q < 6:
            rows[q, :] = _COUNTER_MASKS[q]
        else:
            hi = (words >> np.uint64(q - 6)) & np.uint64(1)
            rows[q, :] = np.where(hi.astype(bool), _FULL, np.uint64(0))
    return rows


def pack_value_bits(values: np.ndarray, width: int) -> np.ndarray:
    """Pack bit b of each value into row b, 64 patterns per word.

    ``values`` is a 1-D integer array; trailing pad patterns are zero.
    """
    v = np.asarray(values, dtype=np.int64).astype(np.uint64)
    n = v.shape[0]
    n_words = (n + 63) // 64
    padded = np.zeros(n_words * 64, dtype=np.uint64)
    padded[:n] = v
    padded = padded.reshape(n_words, 64)
    weights = np.uint64(1) << np.arange(64, dtype=np.uint64)
    rows = np.empty((width, n_words), dtype=np.uint64)
    for b in range(width):
        bits = (padded >> np.uint64(b)) & np.uint64(1)
        rows[b, :] = (bits * weights).sum(axis=1, dtype=np.uint64)
    return rows


def unpack_words_to_ints(bit_rows: np.ndarray) -> np.ndarray:
    """Inverse of pack_value_bits: (width, n_words) packed rows -> int64 values."""
    width, n_words = bit_rows.shape
    out = np.zeros(n_words * 64, dtype=np.int64)
    shifts = np.arange(64, dtype=np.uint64)
    for b in range(width):
        bits = ((bit_rows[b][:, None] >> shifts) & np.uint64(1)).astype(np.int64)
        out += bits.reshape(-1) << b
    return out


# ---------------------------------------------------------------------------
# pure-numpy implementations (reference semantics, fallback path)
# ---------------------------------------------------------------------------


def eval_words_numpy(kind, out_net, in_ptr, in_net, net_vals, out_force, in_force):
    n_gates = kind.shape[0]
    for g in range(n_gates):
        lo = in_ptr[g]
        hi = in_ptr[g + 1]
        kd = kind[g]
        f = in_force[lo]
        if f == 0:
            acc = np.zeros(net_vals.shape[1], dtype=np.uint64)
        elif f == 1:
            acc = np.full(net_vals.shape[1], _FULL, dtype=np.uint64)
        else:
            acc = net_vals[in_net[lo]].copy()
        if kd == 6:  # NOT
            acc = ~acc
        elif kd != 7:  # anything but BUF
            for e in range(lo + 1, hi):
                f = in_force[e]
                if f == 0:
                    x = np.uint64(0)
                elif f == 1:
                    x = _FULL
                else:
                    x = net_vals[in_net[e]]
                if kd == 0 or kd == 2:
                    acc &= x
                elif kd == 1 or kd == 3:
                    acc |= x
                else:
                    acc ^= x
            if kd == 2 or kd == 3 or kd == 5:
                acc = ~acc
        of = out_force[g]
        if of == 0:
            net_vals[out_net[g]] = np.uint64(0)
        elif of == 1:
            net_vals[out_net[g]] = _FULL
        else:
            net_vals[out_net[g]] = acc


def detect_matrix_numpy(
    kind, out_net, in_ptr, in_net, template, out_nets, good, f_gate, f_pin, f_pol
):
    n_faults = f_gate.shape[0]
    n_words = template.shape[1]
    det = np.zeros((n_faults, n_words), dtype=np.uint64)
    out_force = np.full(kind.shape[0], -1, dtype=np.int8)
    in_force = np.full(in_net.shape[0], -1, dtype=np.int8)
    for f in range(n_faults):
        vals = template.copy()
        g = f_gate[f]
        pin = f_pin[f]
        if pin < 0:
            out_force[g] = f_pol[f]
        else:
            in_force[in_ptr[g] + pin] = f_pol[f]
        eval_words_numpy(kind, out_net, in_ptr, in_net, vals, out_force, in_force)
        diff = np.zeros(n_words, dtype=np.uint64)
        for b in range(out_nets.shape[0]):
            diff |= vals[out_nets[b]] ^ good[b]
        det[f] = diff
        if pin < 0:
            out_force[g] = -1
        else:
            in_force[in_ptr[g] + pin] = -1
    return det


def max_err_update_numpy(
    kind,
    out_net,
    in_ptr,
    in_net,
    template,
    out_nets,
    good_bits,
    width,
    n_valid,
    f_gate,
    f_pin,
    f_pol,
    cur,
):
    n_faults = f_gate.shape[0]
    out_force = np.full(kind.shape[0], -1, dtype=np.int8)
    in_force = np.full(in_net.shape[0], -1, dtype=np.int8)
    modulus = 1 << width
    half = 1 << (width - 1)
    gv_all = unpack_words_to_ints(good_bits)
    for f in range(n_faults):
        vals = template.copy()
        g = f_gate[f]
        pin = f_pin[f]
        if pin < 0:
            out_force[g] = f_pol[f]
        else:
            in_force[in_ptr[g] + pin] = f_pol[f]
        eval_words_numpy(kind, out_net, in_ptr, in_net, vals, out_force, in_force)
        faulty_bits = vals[out_nets]
        # highest flipped plane bounds the word's best achievable error
        best = int(cur[f])
        plane_xor = faulty_bits ^ good_bits
        hb = np.full(template.shape[1], -1, dtype=np.int64)
        for b in range(out_nets.shape[0]):
            hb = np.where(plane_xor[b] != 0, b, hb)
        candidates = np.nonzero((1 << (hb + 1)) - 1 > best)[0]
        if candidates.size:
            fv = unpack_words_to_ints(faulty_bits)[:n_valid]
            d = (fv - gv_all[:n_valid]) & (modulus - 1)
            d = np.where(d >= half, d - modulus, d)
            m = int(np.abs(d).max())
            if m > best:
                cur[f] = m
        if pin < 0:
            out_force[g] = -1
        else:
            in_force[in_ptr[g] + pin] = -1


def exec_assign_numpy(
    weights, acts, assign, slice_start, status, pol, err_mag, out
):
    n_slices, n_cols, n_slots = assign.shape
    rows = status.shape[0]
    n_out = weights.shape[1]
    n_col_tiles = (n_out + n_cols - 1) // n_cols
    for s in range(n_slices):
        base = slice_start[s]
        for t in range(n_col_tiles):
            for cc in range(n_cols):
                j = t * n_cols + cc
                if j >= n_out:
                    continue
                for slot in range(n_slots):
                    kl = assign[s, cc, slot]
                    if kl < 0:
                        continue
                    kg = base + kl
                    r = slot % rows
                    e = 0
                    if status[r, cc] == 1:
                        e = int(pol[r, cc]) * err_mag
                    out[:, j] += weights[kg, j] * acts[:, kg] + e


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if not PURE_NUMPY:
    import numba
    from numba import njit, prange

    # TBB in this image is too old for numba; workqueue is always present
    numba.config.THREADING_LAYER = "workqueue"

    @njit(cache=True)
    def eval_words_numba(kind, out_net, in_ptr, in_net, net_vals, out_force, in_force):
        n_gates = kind.shape[0]
        n_words = net_vals.shape[1]
        for g in range(n_gates):
            lo = in_ptr[g]
            hi = in_ptr[g + 1]
            kd = kind[g]
            of = out_force[g]
            on = out_net[g]
            for w in range(n_words):
                if of == 0:
                    net_vals[on, w] = np.uint64(0)
                    continue
                if of == 1:
                    net_vals[on, w] = _FULL
                    continue
                f = in_force[lo]
                if f == 0:
                    acc = np.uint64(0)
                elif f == 1:
                    acc = _FULL
                else:
                    acc = net_vals[in_net[lo], w]
                if kd == 6:
                    acc = ~acc
                elif kd != 7:
                    for e in range(lo + 1, hi):
                        f = in_force[e]
                        if f == 0:
                            x = np.uint64(0)
                        elif f == 1:
                            x = _FULL
                        else:
                            x = net_vals[in_net[e], w]
                        if kd == 0 or kd == 2:
                            acc = acc & x
                        elif kd == 1 or kd == 3:
                            acc = acc | x
                        else:
                            acc = acc ^ x
                    if kd == 2 or kd == 3 or kd == 5:
                        acc = ~acc
                net_vals[on, w] = acc

    @njit(cache=True, parallel=True)
    def detect_matrix_numba(
        kind, out_net, in_ptr, in_net, template, out_nets, good, f_gate, f_pin, f_pol
    ):
        n_faults = f_gate.shape[0]
        n_words = template.shape[1]
        n_edges = in_net.shape[0]
        n_gates = kind.shape[0]
        det = np.zeros((n_faults, n_words), dtype=np.uint64)
        for f in prange(n_faults):
            out_force = np.full(n_gates, -1, dtype=np.int8)
            in_force = np.full(n_edges, -1, dtype=np.int8)
            g = f_gate[f]
            pin = f_pin[f]
            if pin < 0:
                out_force[g] = f_pol[f]
            else:
                in_force[in_ptr[g] + pin] = f_pol[f]
            vals = template.copy()
            eval_words_numba(kind, out_net, in_ptr, in_net, vals, out_force, in_force)
            for w in range(n_words):
                diff = np.uint64(0)
                for b in range(out_nets.shape[0]):
                    diff |= vals[out_nets[b], w] ^ good[b, w]
                det[f, w] = diff
        return det

    @njit(cache=True, parallel=True)
    def max_err_update_numba(
        kind,
        out_net,
        in_ptr,
        in_net,
        template,
        out_nets,
        good_bits,
        width,
        n_valid,
        f_gate,
        f_pin,
        f_pol,
        cur,
    ):
        n_faults = f_gate.shape[0]
        n_words = template.shape[1]
        n_bits = out_nets.shape[0]
        n_edges = in_net.shape[0]
        n_gates = kind.shape[0]
        modulus = np.int64(1) << width
        half = np.int64(1) << (width - 1)
        for f in prange(n_faults):
            out_force = np.full(n_gates, -1, dtype=np.int8)
            in_force = np.full(n_edges, -1, dtype=np.int8)
            g = f_gate[f]
            pin = f_pin[f]
            if pin < 0:
                out_force[g] = f_pol[f]
            else:
                in_force[in_ptr[g] + pin] = f_pol[f]
            vals = template.copy()
            eval_words_numba(kind, out_net, in_ptr, in_net, vals, out_force, in_force)
            best = cur[f]
            for w in range(n_words):
                # a word whose flips stay below bit B cannot beat a best
                # of 2^(B+1)-1 or more, so most words are skipped outright
                hb = -1
                for b in range(n_bits):
                    if vals[out_nets[b], w] != good_bits[b, w]:
                        hb = b
                if hb < 0 or ((np.int64(1) << (hb + 1)) - 1) <= best:
                    continue
                diff = np.uint64(0)
                for b in range(n_bits):
                    diff |= vals[out_nets[b], w] ^ good_bits[b, w]
                p_hi = min(64, n_valid - w * 64)
                for p in range(p_hi):
                    if (diff >> np.uint64(p)) & np.uint64(1) == np.uint64(0):
                        continue
                    fv = np.int64(0)
                    gv = np.int64(0)
                    for b in range(n_bits):
                        fbit = (vals[out_nets[b], w] >> np.uint64(p)) & np.uint64(1)
                        gbit = (good_bits[b, w] >> np.uint64(p)) & np.uint64(1)
                        fv |= np.int64(fbit) << b
                        gv |= np.int64(gbit) << b
                    d = (fv - gv) & (modulus - 1)
                    if d >= half:
                        d -= modulus
                    if d < 0:
                        d = -d
                    if d > best:
                        best = d
            cur[f] = best

    @njit(cache=True)
    def exec_assign_numba(weights, acts, assign, slice_start, status, pol, err_mag, out):
        n_slices, n_cols, n_slots = assign.shape
        rows = status.shape[0]
        n_out = weights.shape[1]
        batch = acts.shape[0]
        n_col_tiles = (n_out + n_cols - 1) // n_cols
        for s in range(n_slices):
            base = slice_start[s]
            for t in range(n_col_tiles):
                for cc in range(n_cols):
                    j = t * n_cols + cc
                    if j >= n_out:
                        continue
                    for slot in range(n_slots):
                        kl = assign[s, cc, slot]
                        if kl < 0:
                            continue
                        kg = base + kl
                        r = slot % rows
                        e = np.int64(0)
                        if status[r, cc] == 1:
                            e = np.int64(pol[r, cc]) * err_mag
                        w = weights[kg, j]
                        for i in range(batch):
                            out[i, j] += w * acts[i, kg] + e

    eval_words = eval_words_numba
    detect_matrix = detect_matrix_numba
    max_err_update = max_err_update_numba
    exec_assign = exec_assign_numba
else:
    eval_words = eval_words_numpy
    detect_matrix = detect_matrix_numpy
    max_err_update = max_err_update_numpy
    exec_assign = exec_assign_numpy
