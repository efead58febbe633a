import numpy as np
import pytest

from wdsgcn.inp import (
    InpError,
    document_from_network,
    network_summary,
    parse_document,
    parse_inp,
    read_inp,
    render_inp,
)

from conftest import GOLDEN

GOLDEN_FILES = ["minimal.inp", "looped.inp"]


def test_minimal_counts():
    doc, net = read_inp(GOLDEN / "minimal.inp")
    assert net.n_nodes == 3
    assert net.n_pipes == 2
    assert net.n_edges == 4
    # LPS -> m^3/s, mm -> m
    np.testing.assert_allclose(net.base_demand, [5e-3, 3e-3, 0.0])
    assert net.pipe_attrs[0].diameter == pytest.approx(0.3)


def test_hanoi_counts(hanoi_path):
    doc, net = read_inp(hanoi_path)
    s = network_summary(doc, net)
    assert s["nodes"] == 32
    assert s["directed_edges"] == 68
    assert s["reservoirs"] == 1
    assert s["diameter"] == 13


def test_unknown_node_reports_line_and_id():
    with pytest.raises(InpError) as err:
        read_inp(GOLDEN / "unknown_node.inp")
    assert "X9" in str(err.value)
    assert err.value.line == 9
    assert err.value.column == 10


@pytest.mark.parametrize("name", GOLDEN_FILES)
def test_render_matches_golden(name):
    doc, _ = read_inp(GOLDEN / name)
    expected = (GOLDEN / name.replace(".inp", ".rendered.inp")).read_text()
    assert render_inp(doc) == expected


@pytest.mark.parametrize("name", GOLDEN_FILES)
def test_parse_render_round_trip(name):
    doc, net = read_inp(GOLDEN / name)
    doc2, net2 = parse_inp(render_inp(doc))
    assert doc2.supported_view() == doc.supported_view()
    assert doc2.unknown == doc.unknown
    assert net2.fingerprint() == net.fingerprint()
    np.testing.assert_array_equal(net2.base_demand, net.base_demand)


def test_looped_patterns_and_demand_overrides():
    doc, net = read_inp(GOLDEN / "looped.inp")
    c = net.node_index("C")
    assert net.base_demand[c] == pytest.approx(10.0 / 3600.0)
    assert net.demand_pattern[net.node_index("B")] == "day"  # default pattern applies
    assert net.patterns["day"] == (0.5, 0.7, 1.0, 1.3, 1.2, 0.9)
    assert "CURVES" in doc.unknown
    assert any("CURVES" in w for w in doc.warnings)


def test_document_from_network_round_trip(hanoi):
    doc = document_from_network(hanoi, title="copy")
    _, net = parse_inp(render_inp(doc))
    assert net.fingerprint() == hanoi.fingerprint()
    np.testing.assert_allclose(net.base_demand, hanoi.base_demand, rtol=1e-15)


BAD = {
    "missing pipes": ("[JUNCTIONS]\n J1 0 1\n", "PIPES"),
    "duplicate node": ("[JUNCTIONS]\n J1 0 1\n J1 0 2\n[RESERVOIRS]\n R 5\n[PIPES]\n P R J1 1 100 100\n", "duplicate node"),
    "duplicate pipe": (
        "[JUNCTIONS]\n J1 0 1\n[RESERVOIRS]\n R 5\n[PIPES]\n P R J1 1 100 100\n P J1 R 1 100 100\n",
        "duplicate pipe",
    ),
    "non-numeric": ("[JUNCTIONS]\n J1 zero 1\n[RESERVOIRS]\n R 5\n[PIPES]\n P R J1 1 100 100\n", "non-numeric elevation"),
    "negative length": ("[JUNCTIONS]\n J1 0 1\n[RESERVOIRS]\n R 5\n[PIPES]\n P R J1 -1 100 100\n", "length"),
    "no reservoir": ("[JUNCTIONS]\n J1 0 1\n J2 0 1\n[PIPES]\n P J1 J2 1 100 100\n", "RESERVOIRS"),
    "darcy": ("[JUNCTIONS]\n J1 0 1\n[RESERVOIRS]\n R 5\n[PIPES]\n P R J1 1 100 100\n[OPTIONS]\n Headloss D-W\n", "H-W"),
}


@pytest.mark.parametrize("case", sorted(BAD))
def test_malformed_inputs(case):
    text, needle = BAD[case]
    with pytest.raises(InpError, match=needle):
        parse_inp(text)


def test_non_numeric_field_location():
    with pytest.raises(InpError) as err:
        parse_inp("[JUNCTIONS]\n J1 zero 1\n[RESERVOIRS]\n R 5\n[PIPES]\n P R J1 1 100 100\n")
    assert (err.value.line, err.value.column) == (2, 5)


def test_closed_pipe_dropped_with_warning():
    text = (
        "[JUNCTIONS]\n J1 0 1\n J2 0 1\n[RESERVOIRS]\n R 5\n"
        "[PIPES]\n P1 R J1 1 100 100\n P2 J1 J2 1 100 100\n P3 R J2 1 100 100 0 Closed\n"
    )
    doc, net = parse_inp(text)
    assert net.n_pipes == 2
    assert any("closed" in w for w in doc.warnings)


def test_bytes_input_and_demand_multiplier():
    text = (GOLDEN / "minimal.inp").read_bytes()
    _, net = parse_inp(text, demand_multiplier=5.0)
    np.testing.assert_allclose(net.base_demand, [25e-3, 15e-3, 0.0])


def test_comments_and_case_insensitive_sections():
    doc = parse_document("[junctions] ; c\n J1 0 1 ; trailing\n[pipes]\n")
    assert doc.sections["JUNCTIONS"][0].tokens == ("J1", "0", "1")
