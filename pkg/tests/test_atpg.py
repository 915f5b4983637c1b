import numpy as np
import pytest
from serial_sim import serial_outputs

from pefault import _kernels, atpg
from pefault import netlist as nl

AND1 = "input a 2\noutput y 1\ngate 0 AND y[0] a[0] a[1]\n"

HA = """\
input a 1
input b 1
output s 1
output c 1
gate 0 XOR s[0] a[0] b[0]
gate 1 AND c[0] a[0] b[0]
"""


@pytest.fixture(scope="module")
def bw8():
    return nl.gen_baugh_wooley(8)


def test_single_and_collapse_counts():
    g1 = nl.parse_netlist(AND1)
    fl = atpg.enumerate_faults(g1)
    assert fl.uncollapsed_count == 6
    assert len(fl.sites) == 4
    sa0_class = next(c for c in fl.equivalence_classes if len(c) == 3)
    assert {(s.pin, s.polarity) for s in sa0_class} == {(-1, 0), (0, 0), (1, 0)}


def test_collapse_classes_are_true_equivalences():
    # every fault in a class must behave identically on every input
    for text in (AND1, HA):
        n = nl.parse_netlist(text)
        fl = atpg.enumerate_faults(n)
        n_bits = sum(w for _, w in n.input_buses)
        for cls in fl.equivalence_classes:
            behaviours = []
            for site in cls:
                rows = []
                for v in range(1 << n_bits):
                    pat = {}
                    at = 0
                    for bus, w in n.input_buses:
                        pat[bus] = (v >> at) & ((1 << w) - 1)
                        at += w
                    rows.append(
                        tuple(
                            serial_outputs(n, pat, (site.gate, site.pin, site.polarity)).items()
                        )
                    )
                behaviours.append(tuple(rows))
            assert len(set(behaviours)) == 1, cls


def test_stem_branch_collapse():
    text = "input a 1\noutput y 1\nnet t\ngate 0 NOT t a[0]\ngate 1 NOT y[0] t\n"
    n = nl.parse_netlist(text)
    fl = atpg.enumerate_faults(n)
    # NOT chain: 8 uncollapsed pins collapse to the 2 observable behaviours
    assert fl.uncollapsed_count == 8
    assert len(fl.sites) == 2


def test_enumerate_empty_and_subset(bw8):
    fl = atpg.enumerate_faults(bw8, gates=set())
    assert len(fl.sites) == 0 and fl.uncollapsed_count == 0
    with pytest.raises(ValueError):
        atpg.enumerate_faults(bw8, gates={99999})


def test_uncollapsed_count_identity(bw8):
    fl = atpg.enumerate_faults(bw8, collapse=False)
    expect = sum(2 * (len(g.inputs) + 1) for g in bw8.gates)
    assert fl.uncollapsed_count == expect == len(fl.sites)


def test_detection_by_definition():
    ha = nl.parse_netlist(HA)
    patterns = atpg.TestSet(tuple(ha.input_buses), {"a": np.array([0]), "b": np.array([0])})
    # SA1 on the XOR output, which is 0 under the all-zeros pattern
    fl = atpg.FaultList((atpg.FaultSite(0, atpg.OUTPUT_PIN, 1),), False, 1)
    ts = atpg.fault_simulate(ha, patterns, fl)
    assert ts.detects(0) == frozenset(fl.sites)
    assert ts.coverage == 1.0


def test_packed_agrees_with_serial_simulator():
    cla4 = nl.gen_cla_adder(4)
    faults = atpg.enumerate_faults(cla4, collapse=False)
    rng = np.random.default_rng(9)
    vals = {
        "a": rng.integers(0, 16, 40).astype(np.int64),
        "b": rng.integers(0, 16, 40).astype(np.int64),
    }
    ts = atpg.fault_simulate(cla4, atpg.TestSet(tuple(cla4.input_buses), vals), faults)
    for p in range(40):
        pat = {"a": int(vals["a"][p]), "b": int(vals["b"][p])}
        good = serial_outputs(cla4, pat)
        expect = set()
        for s in faults.sites:
            bad = serial_outputs(cla4, pat, (s.gate, s.pin, s.polarity))
            if bad != good:
                expect.add(s)
        assert ts.detects(p) == expect


def test_exhaustive_universe_matches_podem_proofs(bw8):
    """The exhaustive 2^16 sweep defines detectability; PODEM's untestable
    proofs and the generated set's coverage must agree with it exactly."""
    faults = atpg.enumerate_faults(bw8)
    c = bw8.compiled()
    rows = _kernels.exhaustive_pi_rows(16, 0, 1024)
    vals = {}
    idx = np.arange(65536, dtype=np.int64)
    exhaustive = atpg.TestSet(
        tuple(bw8.input_buses), {"a": idx & 0xFF, "b": idx >> 8}
    )
    ts = atpg.fault_simulate(bw8, exhaustive, faults)
    detectable = ts.detected_faults()
    undetectable_truth = set(faults.sites) - detectable

    gen = atpg.generate_patterns(bw8, faults, seed=11)
    assert not gen.aborted
    assert set(gen.undetectable) == undetectable_truth
    assert gen.detected_faults() == detectable
    assert gen.coverage_detectable == 1.0


def test_generated_detections_reconfirmed_by_resimulation(bw8):
    faults = atpg.enumerate_faults(bw8)
    gen = atpg.generate_patterns(bw8, faults, seed=3)
    re = atpg.fault_simulate(
        bw8, atpg.TestSet(gen.buses, gen.values), faults
    )
    assert re.detected_faults() == gen.detected_faults()
    assert np.array_equal(re.det_words, gen.det_words)


def test_single_gate_atpg():
    g1 = nl.parse_netlist(AND1)
    faults = atpg.enumerate_faults(g1)
    ts = atpg.generate_patterns(g1, faults, seed=0)
    assert ts.n_patterns <= 4
    assert ts.coverage == 1.0


def test_determinism_and_seed_invariant_coverage(bw8):
    faults = atpg.enumerate_faults(bw8)
    a = atpg.generate_patterns(bw8, faults, seed=5)
    b = atpg.generate_patterns(bw8, faults, seed=5)
    for bus, _ in a.buses:
        assert np.array_equal(a.values[bus], b.values[bus])
    c = atpg.generate_patterns(bw8, faults, seed=6)
    assert c.coverage == a.coverage
    assert set(c.undetectable) == set(a.undetectable)


def test_compaction_never_reduces_coverage():
    bw4 = nl.gen_baugh_wooley(4)
    faults = atpg.enumerate_faults(bw4)
    loose = atpg.generate_patterns(bw4, faults, seed=1, compact=False)
    tight = atpg.generate_patterns(bw4, faults, seed=1, compact=True)
    assert tight.coverage >= loose.coverage
    assert tight.n_patterns <= loose.n_patterns


def test_hex_roundtrip(bw8):
    rng = np.random.default_rng(4)
    vals = {
        "a": rng.integers(0, 256, 17).astype(np.int64),
        "b": rng.integers(0, 256, 17).astype(np.int64),
    }
    ts = atpg.TestSet(tuple(bw8.input_buses), vals)
    text = ts.write_hex()
    back = atpg.TestSet.read_hex(text)
    assert back.buses == ts.buses
    for bus, _ in ts.buses:
        assert np.array_equal(back.values[bus], ts.values[bus])


def test_fault_csv():
    g1 = nl.parse_netlist(AND1)
    faults = atpg.enumerate_faults(g1)
    ts = atpg.generate_patterns(g1, faults, seed=0)
    first = ts.first_detection()
    text = atpg.fault_csv(faults, {s: "crit" for s in faults.sites}, first)
    lines = text.strip().splitlines()
    assert lines[0] == "gate,pin,polarity,class,detected_by"
    assert len(lines) == 1 + len(faults.sites)
    assert all("crit" in ln for ln in lines[1:])
