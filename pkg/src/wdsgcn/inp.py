"""Reader/writer for the subset of the EPANET INP format used here.

Supported sections: TITLE, JUNCTIONS, RESERVOIRS, PIPES, DEMANDS, PATTERNS,
COORDINATES, OPTIONS. Anything else is kept verbatim in
:attr:`InpDocument.unknown` and reported in :attr:`InpDocument.warnings`.
Only Hazen-Williams headloss is accepted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import NetworkError, PipeAttr, WaterNetwork

SUPPORTED = ("TITLE", "JUNCTIONS", "RESERVOIRS", "PIPES", "DEMANDS", "PATTERNS", "COORDINATES", "OPTIONS")
MANDATORY = ("JUNCTIONS", "PIPES")

# flow unit -> m^3/s
FLOW_UNITS = {
    "CFS": 0.028316846592,
    "GPM": 6.30901964e-5,
    "MGD": 0.0438126364,
    "IMGD": 0.0526167882,
    "AFD": 0.0142764101,
    "LPS": 1e-3,
    "LPM": 1.0 / 60000.0,
    "MLD": 1.0 / 86.4,
    "CMH": 1.0 / 3600.0,
    "CMD": 1.0 / 86400.0,
    "CMS": 1.0,
}
US_UNITS = {"CFS", "GPM", "MGD", "IMGD", "AFD"}
FOOT = 0.3048
INCH = 0.0254


class InpError(ValueError):
    """Malformed INP input; carries a 1-based line and column."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


@dataclass
class Record:
    tokens: tuple
    line: int = 0
    columns: tuple = ()

    def __eq__(self, other):
        return isinstance(other, Record) and self.tokens == other.tokens


@dataclass
class InpDocument:
    sections: dict = field(default_factory=dict)  # name -> list[Record]
    unknown: dict = field(default_factory=dict)  # name -> raw lines
    warnings: list = field(default_factory=list)

    def records(self, name):
        return self.sections.get(name, [])

    def option(self, key, default=None):
        key = key.upper()
        for rec in self.records("OPTIONS"):
            if rec.tokens and rec.tokens[0].upper() == key:
                return " ".join(rec.tokens[1:]) if len(rec.tokens) > 1 else default
        return default

    def supported_view(self):
        """Section -> list of token tuples, for comparisons."""
        return {name: [r.tokens for r in recs] for name, recs in self.sections.items()}


def _tokenize(line):
    body = line.split(";", 1)[0]
    tokens, cols = [], []
    i = 0
    while i < len(body):
        if body[i].isspace():
            i += 1
            continue
        j = i
        while j < len(body) and not body[j].isspace():
            j += 1
        tokens.append(body[i:j])
        cols.append(i + 1)
        i = j
    return tuple(tokens), tuple(cols)


def parse_document(text) -> InpDocument:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InpError(f"input is not UTF-8 text: {exc}") from None
    doc = InpDocument()
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("[") :
            end = stripped.find("]")
            if end < 0:
                raise InpError("unterminated section header", lineno, raw.find("[") + 1)
            name = stripped[1:end].strip().upper()
            if name == "END":
                break
            current = name
            if name in SUPPORTED:
                if name in doc.sections:
                    raise InpError(f"section [{name}] appears twice", lineno, 1)
                doc.sections[name] = []
            else:
                doc.unknown.setdefault(name, [])
                doc.warnings.append(f"line {lineno}: unsupported section [{name}] kept verbatim")
            continue
        if current is None:
            if stripped and not stripped.startswith(";"):
                raise InpError("data before first section header", lineno, 1)
            continue
        if current not in SUPPORTED:
            doc.unknown[current].append(raw)
            continue
        if current == "TITLE":
            if stripped:
                doc.sections["TITLE"].append(Record((stripped,), lineno, (1,)))
            continue
        tokens, cols = _tokenize(raw)
        if tokens:
            doc.sections[current].append(Record(tokens, lineno, cols))
    for lines in doc.unknown.values():
        while lines and not lines[-1].strip():
            lines.pop()
    for name in MANDATORY:
        if name not in doc.sections:
            raise InpError(f"missing mandatory section [{name}]")
    return doc


def _number(rec, k, what):
    if k >= len(rec.tokens):
        raise InpError(f"missing field {what}", rec.line, (rec.columns[-1] if rec.columns else 1))
    try:
        return float(rec.tokens[k])
    except ValueError:
        raise InpError(f"non-numeric {what} {rec.tokens[k]!r}", rec.line, rec.columns[k]) from None


def network_from_document(doc: InpDocument, demand_multiplier: float = 1.0) -> WaterNetwork:
    units = (doc.option("UNITS", "GPM") or "GPM").upper()
    if units not in FLOW_UNITS:
        raise InpError(f"unknown flow units {units!r}")
    headloss = (doc.option("HEADLOSS", "H-W") or "H-W").upper()
    if headloss != "H-W":
        raise InpError(f"only H-W headloss is supported, got {headloss!r}")
    q_scale = FLOW_UNITS[units] * demand_multiplier
    us = units in US_UNITS
    len_scale = FOOT if us else 1.0
    diam_scale = INCH if us else 1e-3
    default_pattern = doc.option("PATTERN")

    node_ids, elevation, demand, pattern = [], [], [], []
    seen = {}
    res_heads = {}

    def add_node(rec, kind):
        nid = rec.tokens[0]
        if nid in seen:
            raise InpError(f"duplicate node id {nid!r} ({kind})", rec.line, rec.columns[0])
        seen[nid] = len(node_ids)
        node_ids.append(nid)

    for rec in doc.records("JUNCTIONS"):
        add_node(rec, "junction")
        elevation.append(_number(rec, 1, "elevation") * len_scale)
        demand.append(_number(rec, 2, "demand") * q_scale if len(rec.tokens) > 2 else 0.0)
        pattern.append(rec.tokens[3] if len(rec.tokens) > 3 else default_pattern)
    for rec in doc.records("RESERVOIRS"):
        add_node(rec, "reservoir")
        head = _number(rec, 1, "head") * len_scale
        elevation.append(head)
        demand.append(0.0)
        pattern.append(None)
        res_heads[rec.tokens[0]] = head

    overrides = {}
    for rec in doc.records("DEMANDS"):
        nid = rec.tokens[0]
        if nid not in seen:
            raise InpError(f"demand for unknown node {nid!r}", rec.line, rec.columns[0])
        if nid in res_heads:
            raise InpError(f"demand assigned to reservoir {nid!r}", rec.line, rec.columns[0])
        d = _number(rec, 1, "demand") * q_scale
        pat = rec.tokens[2] if len(rec.tokens) > 2 else default_pattern
        prev = overrides.get(nid)
        if prev is None:
            overrides[nid] = [d, pat]
        else:
            if prev[1] != pat:
                doc.warnings.append(f"line {rec.line}: node {nid} mixes demand patterns; using {prev[1]!r}")
            prev[0] += d
    for nid, (d, pat) in overrides.items():
        demand[seen[nid]] = d
        pattern[seen[nid]] = pat

    patterns = {}
    for rec in doc.records("PATTERNS"):
        values = [_number(rec, k, "pattern multiplier") for k in range(1, len(rec.tokens))]
        patterns.setdefault(rec.tokens[0], []).extend(values)
    for i, pat in enumerate(pattern):
        if pat is not None and pat not in patterns:
            if pat == default_pattern or (pat == "1" and default_pattern is None):
                pattern[i] = None  # EPANET falls back to a constant pattern
            else:
                raise InpError(f"node {node_ids[i]!r} uses undefined pattern {pat!r}")

    pipes, pipe_seen = [], set()
    for rec in doc.records("PIPES"):
        if len(rec.tokens) < 6:
            raise InpError("pipe record needs ID Node1 Node2 Length Diameter Roughness", rec.line, 1)
        pid, a, b = rec.tokens[:3]
        if pid in pipe_seen:
            raise InpError(f"duplicate pipe id {pid!r}", rec.line, rec.columns[0])
        pipe_seen.add(pid)
        for k, end in ((1, a), (2, b)):
            if end not in seen:
                raise InpError(f"pipe {pid!r} references unknown node {end!r}", rec.line, rec.columns[k])
        if a == b:
            raise InpError(f"pipe {pid!r} connects node {a!r} to itself", rec.line, rec.columns[2])
        status = rec.tokens[7].upper() if len(rec.tokens) > 7 else "OPEN"
        if status == "CLOSED":
            doc.warnings.append(f"line {rec.line}: closed pipe {pid} dropped")
            continue
        values = []
        for k, what, scale in ((3, "length", len_scale), (4, "diameter", diam_scale), (5, "roughness", 1.0)):
            x = _number(rec, k, what)
            if x <= 0:
                raise InpError(f"pipe {what} must be positive, got {x:g}", rec.line, rec.columns[k])
            values.append(x * scale)
        pipes.append((pid, a, b, PipeAttr(*values)))

    if not res_heads:
        raise InpError("network has no [RESERVOIRS] entry")
    try:
        return WaterNetwork.from_pipes(
            node_ids,
            pipes,
            res_heads,
            elevation=elevation,
            base_demand=demand,
            demand_pattern=pattern,
            patterns={k: tuple(v) for k, v in patterns.items()},
        )
    except NetworkError as exc:
        raise InpError(str(exc)) from None


def parse_inp(text, demand_multiplier: float = 1.0):
    """Parse INP text (str or bytes) into ``(InpDocument, WaterNetwork)``."""
    doc = parse_document(text)
    return doc, network_from_document(doc, demand_multiplier=demand_multiplier)


def read_inp(path, demand_multiplier: float = 1.0):
    with open(path, "rb") as fh:
        return parse_inp(fh.read(), demand_multiplier=demand_multiplier)


def render_inp(doc: InpDocument) -> str:
    """Serialise a document; supported sections first, then unknown ones."""
    out = []
    for name, recs in doc.sections.items():
        out.append(f"[{name}]")
        for rec in recs:
            out.append(" " + "\t".join(rec.tokens) if name != "TITLE" else rec.tokens[0])
        out.append("")
    for name, lines in doc.unknown.items():
        out.append(f"[{name}]")
        out.extend(lines)
        out.append("")
    out.append("[END]")
    return "\n".join(out) + "\n"


def document_from_network(net: WaterNetwork, title: str = "", units: str = "CMH") -> InpDocument:
    """Describe ``net`` as an INP document (SI units, H-W headloss)."""
    if units not in FLOW_UNITS or units in US_UNITS:
        raise ValueError(f"document_from_network writes SI flow units only, got {units!r}")
    q_scale = 1.0 / FLOW_UNITS[units]
    fmt = "{:.17g}".format
    doc = InpDocument()
    if title:
        doc.sections["TITLE"] = [Record((title,))]
    junctions, reservoirs = [], []
    for i, nid in enumerate(net.node_ids):
        if net.reservoir_mask[i]:
            reservoirs.append(Record((str(nid), fmt(net.reservoir_head[i]))))
        else:
            toks = [str(nid), fmt(net.elevation[i]), fmt(net.base_demand[i] * q_scale)]
            if net.demand_pattern[i] is not None:
                toks.append(str(net.demand_pattern[i]))
            junctions.append(Record(tuple(toks)))
    doc.sections["JUNCTIONS"] = junctions
    doc.sections["RESERVOIRS"] = reservoirs
    pipes = []
    for p, (pid, attr) in enumerate(zip(net.pipe_ids, net.pipe_attrs)):
        a, b = net.node_ids[net.src[2 * p]], net.node_ids[net.dst[2 * p]]
        pipes.append(
            Record((str(pid), str(a), str(b), fmt(attr.length), fmt(attr.diameter * 1e3), fmt(attr.roughness), "0", "Open"))
        )
    doc.sections["PIPES"] = pipes
    if net.patterns:
        doc.sections["PATTERNS"] = [Record((str(k),) + tuple(fmt(x) for x in v)) for k, v in net.patterns.items()]
    doc.sections["OPTIONS"] = [Record(("Units", units)), Record(("Headloss", "H-W"))]
    return doc


def network_summary(doc: InpDocument, net: WaterNetwork) -> dict:
    from .network import graph_diameter

    deg = 2 * net.degree()
    return {
        "nodes": net.n_nodes,
        "junctions": int((~net.reservoir_mask).sum()),
        "reservoirs": int(net.reservoir_mask.sum()),
        "pipes": net.n_pipes,
        "directed_edges": net.n_edges,
        "diameter": graph_diameter(net),
        "degree_min": int(deg.min()),
        "degree_mean": float(deg.mean()),
        "degree_max": int(deg.max()),
        "total_base_demand_m3s": float(np.sum(net.base_demand)),
        "units": (doc.option("UNITS", "GPM") or "GPM").upper(),
        "unknown_sections": sorted(doc.unknown),
        "warnings": list(doc.warnings),
    }
