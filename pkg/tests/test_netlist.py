import numpy as np
import pytest

from pefault import netlist as nl
from pefault import _kernels


@pytest.fixture(scope="module")
def bw8():
    return nl.gen_baugh_wooley(8)


@pytest.fixture(scope="module")
def cla16():
    return nl.gen_cla_adder(16)


@pytest.fixture(scope="module")
def mac(bw8, cla16):
    return nl.gen_mac_int8()


def signed(v, width):
    v = np.asarray(v) & ((1 << width) - 1)
    return np.where(v >= 1 << (width - 1), v - (1 << width), v)


def test_bw_small_products(bw8):
    assert nl.evaluate(bw8, {"a": 3, "b": 5})["p"].signed == 15
    assert nl.evaluate(bw8, {"a": -128, "b": -128})["p"].signed == 16384
    assert nl.evaluate(bw8, {"a": -1, "b": 1})["p"].signed == -1
    assert nl.evaluate(bw8, {"a": 0, "b": -77})["p"].signed == 0


def test_bw_exhaustive_all_pairs(bw8):
    c = bw8.compiled()
    rows = _kernels.exhaustive_pi_rows(16, 0, 1024)
    vals = c.eval_packed(rows)
    got = _kernels.unpack_words_to_ints(vals[c.out_bits["p"]])
    idx = np.arange(65536, dtype=np.int64)
    a = signed(idx & 0xFF, 8)
    b = signed(idx >> 8, 8)
    assert np.array_equal(got, (a * b) & 0xFFFF)


def test_bw_width_parameter():
    with pytest.raises(ValueError):
        nl.gen_baugh_wooley(1)
    bw4 = nl.gen_baugh_wooley(4)
    av, bv = np.meshgrid(np.arange(-8, 8), np.arange(-8, 8))
    out = nl.eval_batch(bw4, {"a": av.ravel(), "b": bv.ravel()})["p"]
    assert np.array_equal(signed(out, 8), av.ravel() * bv.ravel())


def test_cla_identity_and_wraparound(cla16):
    r = nl.evaluate(cla16, {"a": 0, "b": 0})
    assert r["sum"].value == 0 and r["cout"].value == 0
    r = nl.evaluate(cla16, {"a": 0xFFFF, "b": 1})
    assert r["sum"].value == 0 and r["cout"].value == 1


def test_cla_random_pairs(cla16):
    rng = np.random.default_rng(2024)
    a = rng.integers(0, 1 << 16, 1_000_000)
    b = rng.integers(0, 1 << 16, 1_000_000)
    out = nl.eval_batch(cla16, {"a": a, "b": b})
    assert np.array_equal(out["sum"], (a + b) & 0xFFFF)
    assert np.array_equal(out["cout"], (a + b) >> 16)


def test_cla_carry_annotations(cla16):
    # one annotation per bit 1..16; the one at 16 is the carry-out
    ks = sorted(k for (tag, k) in cla16.annotations if tag == "carry_in_of_bit")
    assert ks == list(range(1, 17))
    assert cla16.annotation("carry_in_of_bit", 16) == "cout[0]"


def test_cla_width_parameter():
    with pytest.raises(ValueError):
        nl.gen_cla_adder(1)
    for w in (2, 5, 8, 20, 33):
        c = nl.gen_cla_adder(w)
        rng = np.random.default_rng(w)
        a = rng.integers(0, 1 << w, 2000)
        b = rng.integers(0, 1 << w, 2000)
        out = nl.eval_batch(c, {"a": a, "b": b})
        assert np.array_equal(out["sum"], (a + b) & ((1 << w) - 1))
        assert np.array_equal(out["cout"], (a + b) >> w)


def test_mac_trivial(mac):
    assert nl.evaluate(mac, {"a": 3, "b": 5, "acc": 10})["out"].signed == 25
    rng = np.random.default_rng(5)
    x = rng.integers(-128, 128, 64)
    c = rng.integers(-32768, 32768, 64)
    out = nl.eval_batch(mac, {"a": np.zeros(64, np.int64), "b": x, "acc": c})["out"]
    assert np.array_equal(signed(out, 16), c)


def test_mac_random_triples(mac):
    rng = np.random.default_rng(7)
    n = 1_000_000
    a = rng.integers(-128, 128, n)
    b = rng.integers(-128, 128, n)
    acc = rng.integers(-32768, 32768, n)
    out = nl.eval_batch(mac, {"a": a, "b": b, "acc": acc})["out"]
    assert np.array_equal(out, (a * b + acc) & 0xFFFF)


def test_mac_annotations(mac):
    ks = sorted(k for (tag, k) in mac.annotations if tag == "carry_in_of_bit")
    assert ks == list(range(1, 16))
    for i in range(16):
        assert mac.annotation("mul_out_of_bit", i) == f"prod{i}"


def test_generated_netlists_use_primitive_kinds(bw8, cla16, mac):
    for n in (bw8, cla16, mac):
        assert all(g.kind in nl.GATE_KINDS for g in n.gates)


def test_gate_and_net_counts_pinned(bw8, cla16, mac):
    # regression values for this generator, not external targets
    assert (len(bw8.gates), len(bw8.nets)) == (326, 342)
    assert (len(cla16.gates), len(cla16.nets)) == (166, 198)
    assert (len(mac.gates), len(mac.nets)) == (467, 499)


def test_buf_passthrough():
    text = """\
input a 2
output y 2
gate 0 BUF y[0] a[0]
gate 1 BUF y[1] a[1]
"""
    n = nl.parse_netlist(text)
    for v in (0, 1, 2, 3):
        assert nl.evaluate(n, {"a": v})["y"].value == v


def test_half_adder_truth_table():
    text = """\
input a 1
input b 1
output s 1
output c 1
gate 0 XOR s[0] a[0] b[0]
gate 1 AND c[0] a[0] b[0]
"""
    n = nl.parse_netlist(text)
    assert len(n.gates) == 2
    for a in (0, 1):
        for b in (0, 1):
            r = nl.evaluate(n, {"a": a, "b": b})
            assert r["s"].value == (a + b) % 2
            assert r["c"].value == (a + b) // 2


def test_emit_parse_roundtrip(bw8, cla16, mac):
    for n in (bw8, cla16, mac):
        text = nl.emit_netlist(n)
        again = nl.emit_netlist(nl.parse_netlist(text))
        assert again == text


def test_emit_is_canonical(mac):
    # net/gate/annot statement order is free; bus order is operand order
    text = nl.emit_netlist(mac)
    lines = text.strip().splitlines()
    buses = [l for l in lines if l.startswith(("input ", "output "))]
    rest = [l for l in lines if not l.startswith(("input ", "output "))]
    rng = np.random.default_rng(0)
    shuffled = "\n".join(buses + [rest[i] for i in rng.permutation(len(rest))]) + "\n"
    assert nl.emit_netlist(nl.parse_netlist(shuffled)) == text


def test_json_roundtrip(mac):
    text = nl.emit_netlist_json(mac)
    n2 = nl.parse_netlist_json(text)
    assert nl.emit_netlist(n2) == nl.emit_netlist(mac)
    assert nl.emit_netlist_json(n2) == text


def test_parse_error_multiply_driven():
    text = """\
input a 1
output y 1
net t
gate 0 NOT t a[0]
gate 1 BUF y[0] t
gate 2 NOT t y[0]
"""
    with pytest.raises(nl.MultiplyDrivenNetError) as e:
        nl.parse_netlist(text)
    assert e.value.net == "t"


def test_parse_error_cycle():
    text = """\
input a 1
output y 1
net t
net u
gate 0 AND t a[0] u
gate 1 NOT u t
gate 2 BUF y[0] t
"""
    with pytest.raises(nl.CombinationalCycleError):
        nl.parse_netlist(text)


def test_parse_error_dangling():
    with pytest.raises(nl.DanglingNetError):
        nl.parse_netlist("input a 1\noutput y 1\ngate 0 NOT y[0] ghost\n")
    with pytest.raises(nl.DanglingNetError):
        # declared but driverless net feeding a gate
        nl.parse_netlist("input a 1\noutput y 1\nnet t\ngate 0 AND y[0] a[0] t\n")
    with pytest.raises(nl.DanglingNetError):
        # undriven primary output
        nl.parse_netlist("input a 1\noutput y 2\ngate 0 NOT y[0] a[0]\n")


def test_parse_error_syntax_position():
    with pytest.raises(nl.NetlistSyntaxError) as e:
        nl.parse_netlist("input a 1\nfrobnicate x\n")
    assert e.value.line == 2
    with pytest.raises(nl.NetlistSyntaxError):
        nl.parse_netlist("input a nope\n")
    with pytest.raises(nl.NetlistSyntaxError):
        nl.parse_netlist("input a 1\noutput y 1\ngate 0 FROB y[0] a[0]\n")
    with pytest.raises(nl.NetlistSyntaxError):
        # NOT arity
        nl.parse_netlist("input a 2\noutput y 1\ngate 0 NOT y[0] a[0] a[1]\n")
    with pytest.raises(nl.NetlistSyntaxError):
        # duplicate gate id
        nl.parse_netlist(
            "input a 2\noutput y 2\ngate 0 BUF y[0] a[0]\ngate 0 BUF y[1] a[1]\n"
        )


def test_evaluate_input_errors(mac):
    with pytest.raises(ValueError):
        nl.evaluate(mac, {"a": 1, "b": 2})
    with pytest.raises(ValueError):
        nl.evaluate(mac, {"a": 1, "b": 2, "acc": nl.BitVec(8, 3)})
    with pytest.raises(ValueError):
        nl.evaluate(mac, {"a": 1, "b": 2, "acc": 3, "zz": 4})


def test_bitvec():
    v = nl.BitVec(8, -1)
    assert v.value == 255 and v.signed == -1
    assert nl.BitVec(4, 16).value == 0
    assert nl.BitVec(8, 130).signed == 130 - 256
    with pytest.raises(ValueError):
        nl.BitVec(0, 1)


def test_fanin_gates_msb_sees_every_input(mac):
    # forward-BFS oracle: each primary input reaches out[15], so the MSB
    # cone must read every primary input net
    consumers = {}
    for g in mac.gates:
        for n in g.inputs:
            consumers.setdefault(n, []).append(g)
    for pi_net in mac.primary_inputs:
        reached = set()
        stack = [pi_net]
        while stack:
            n = stack.pop()
            if n in reached:
                continue
            reached.add(n)
            stack.extend(g.output for g in consumers.get(n, ()))
        assert "out[15]" in reached, pi_net
    cone = nl.fanin_gates(mac, ["out[15]"])
    cone_reads = {n for g in mac.gates if g.id in cone for n in g.inputs}
    assert set(mac.primary_inputs) <= cone_reads


def test_extract_subcircuit_adder_side(mac):
    prods = [f"prod{i}" for i in range(16)]
    accs = [f"acc[{i}]" for i in range(16)]
    sub = nl.extract_subcircuit(
        mac, [("x", prods), ("acc", accs)], [("out", [f"out[{i}]" for i in range(16)])]
    )
    rng = np.random.default_rng(3)
    x = rng.integers(0, 1 << 16, 10000)
    acc = rng.integers(0, 1 << 16, 10000)
    out = nl.eval_batch(sub, {"x": x, "acc": acc})["out"]
    assert np.array_equal(out, (x + acc) & 0xFFFF)
    # gate ids survive extraction
    mac_ids = {g.id for g in mac.gates}
    assert all(g.id in mac_ids for g in sub.gates)


def test_eval_batch_matches_evaluate(mac):
    rng = np.random.default_rng(11)
    a = rng.integers(-128, 128, 20)
    b = rng.integers(-128, 128, 20)
    acc = rng.integers(-32768, 32768, 20)
    batch = nl.eval_batch(mac, {"a": a, "b": b, "acc": acc})["out"]
    for i in range(20):
        one = nl.evaluate(mac, {"a": int(a[i]), "b": int(b[i]), "acc": int(acc[i])})
        assert one["out"].value == batch[i]
