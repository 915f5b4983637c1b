"""Logic-cone partitioning of a MAC netlist into AI-accuracy-critical and
non-critical gate and fault sets.

The partition for a cut position k splits output bits into a tolerated low
group (bits 0..k) and a protected high group (bits k+1..N, N = MSB). Gates
exclusively in low-bit cones are non-critical; gates in high-bit cones are
critical except those feeding the carry-in of bit k+1, whose worst-case
contribution is the single extra 2^(k+1) term of the error bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import atpg
from .netlist import Netlist, NetlistError, fanin_gates


class MissingAnnotationError(NetlistError):
    def __init__(self, k):
        super().__init__(
            f"no carry_in_of_bit[{k}] annotation: name the carry-in net of "
            f"output bit {k} explicitly (CLI: --carry-net) for imported netlists"
        )
        self.k = k


def _primary_out_bus(nl: Netlist):
    bus, width = nl.output_buses[0]
    return bus, width


def fanin_cone(nl: Netlist, output_bit: int, bus: str | None = None) -> frozenset[int]:
    """Gate ids from which output bit `output_bit` (of the first output bus
    by default) is reachable."""
    if bus is None:
        bus, width = _primary_out_bus(nl)
    else:
        width = dict(nl.output_buses)[bus]
    if not 0 <= output_bit < width:
        raise ValueError(f"output bit {output_bit} out of range for bus '{bus}'")
    return frozenset(fanin_gates(nl, [f"{bus}[{output_bit}]"]))


def carryin_cone(nl: Netlist, k_plus_1: int, carry_net: str | None = None) -> frozenset[int]:
    """Fan-in cone of the carry-in net of output bit k_plus_1.

    The net comes from the carry_in_of_bit annotation or from `carry_net`.
    A netlist that carries the annotation family but no entry for this bit
    has no such carry (e.g. bit 1 of a multiplier whose column 0 is a single
    partial product); its cone is empty.
    """
    if carry_net is not None:
        return frozenset(fanin_gates(nl, [carry_net]))
    net = nl.annotation("carry_in_of_bit", k_plus_1)
    if net is not None:
        return frozenset(fanin_gates(nl, [net]))
    if any(tag == "carry_in_of_bit" for (tag, _) in nl.annotations):
        return frozenset()
    raise MissingAnnotationError(k_plus_1)


@dataclass(frozen=True)
class ConePartition:
    k: int
    g1: frozenset[int]
    g2: frozenset[int]
    g_carryin: frozenset[int]
    g_noncrit: frozenset[int]
    g_crit: frozenset[int]
    f_crit: atpg.FaultList
    f_noncrit: atpg.FaultList

    def to_json(self) -> str:
        obj = {
            "k": self.k,
            "g1": sorted(self.g1),
            "g2": sorted(self.g2),
            "g_carryin": sorted(self.g_carryin),
            "g_noncrit": sorted(self.g_noncrit),
            "g_crit": sorted(self.g_crit),
            "f_crit": self.f_crit.to_obj(),
            "f_noncrit": self.f_noncrit.to_obj(),
        }
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ConePartition":
        obj = json.loads(text)
        return cls(
            obj["k"],
            frozenset(obj["g1"]),
            frozenset(obj["g2"]),
            frozenset(obj["g_carryin"]),
            frozenset(obj["g_noncrit"]),
            frozenset(obj["g_crit"]),
            atpg.FaultList.from_obj(obj["f_crit"]),
            atpg.FaultList.from_obj(obj["f_noncrit"]),
        )


def partition(
    nl: Netlist, k: int, carry_net: str | None = None, collapse: bool = True
) -> ConePartition:
    """Split gates and stuck-at faults around cut position k.

    Fault lists cover every gate in the served cones: non-critical faults
    are exactly those on exclusively-low gates; everything else (including
    the carry-in cone, whose gates the set algebra leaves in neither gate
    set) is enumerated as critical, the conservative direction.
    """
    bus, width = _primary_out_bus(nl)
    n_msb = width - 1
    if not 0 <= k < n_msb:
        raise ValueError(f"k must satisfy 0 <= k < {n_msb} (MSB position)")
    g1 = frozenset().union(*(fanin_cone(nl, i, bus) for i in range(0, k + 1)))
    g2 = frozenset().union(*(fanin_cone(nl, i, bus) for i in range(k + 1, n_msb + 1)))
    g_carryin = carryin_cone(nl, k + 1, carry_net)
    g_noncrit = g1 - g2
    g_crit = g2 - g_carryin
    universe = g1 | g2 | g_carryin
    f_noncrit = atpg.enumerate_faults(nl, g_noncrit, collapse=collapse)
    f_crit = atpg.enumerate_faults(nl, universe - g_noncrit, collapse=collapse)
    return ConePartition(k, g1, g2, g_carryin, g_noncrit, g_crit, f_crit, f_noncrit)
