"""Naive one-pattern-at-a-time netlist simulator, used as an independent
oracle against the packed kernels. Deliberately shares no code with them."""


def _gate_fn(kind, vals):
    if kind == "AND":
        return int(all(vals))
    if kind == "OR":
        return int(any(vals))
    if kind == "NAND":
        return int(not all(vals))
    if kind == "NOR":
        return int(not any(vals))
    if kind == "XOR":
        return sum(vals) % 2
    if kind == "XNOR":
        return 1 - sum(vals) % 2
    if kind == "NOT":
        return 1 - vals[0]
    return vals[0]  # BUF


def serial_outputs(netlist, pattern, fault=None):
    """pattern: {bus: int}; fault: (gate_id, pin, polarity) or None.
    Returns {output_bus: int}."""
    values = {}
    for bus, width in netlist.input_buses:
        for i in range(width):
            values[f"{bus}[{i}]"] = (pattern[bus] >> i) & 1
    pending = sorted(netlist.gates, key=lambda g: g.id)
    done = False
    while pending:
        progressed = False
        rest = []
        for g in pending:
            if not all(n in values for n in g.inputs):
                rest.append(g)
                continue
            vals = [values[n] for n in g.inputs]
            if fault is not None and fault[0] == g.id and fault[1] >= 0:
                vals[fault[1]] = fault[2]
            out = _gate_fn(g.kind, vals)
            if fault is not None and fault[0] == g.id and fault[1] < 0:
                out = fault[2]
            values[g.output] = out
            progressed = True
        if not progressed:
            raise RuntimeError("not combinational")
        pending = rest
    result = {}
    for bus, width in netlist.output_buses:
        result[bus] = sum(values[f"{bus}[{i}]"] << i for i in range(width))
    return result
