import io

import pytest
from hypothesis import given, settings, strategies as st

from motnet.hybrid import (MESH_UNIT_PDR, REFERENCE_HYBRID_LATENCY, REFERENCE_HYBRID_PDR, HybridConfig,
                           hybrid_latency, hybrid_pdr, latency_table, mesh_pdr, pdr_table, scalability_ratio,
                           scale_units, write_latency_csv, write_pdr_csv)


def test_mesh_pdr():
    assert mesh_pdr({2: 0.9}, {2: 1.0}) == 0.9
    assert mesh_pdr({2: 0.995, 3: 0.919}, {2: 0.5, 3: 0.5}) == pytest.approx(0.957)
    assert mesh_pdr({1: 1, 2: 1, 3: 1}, {1: 0.2, 2: 0.3, 3: 0.5}) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mesh_pdr({2: 0.9}, {2: 0.9})
    with pytest.raises(ValueError):
        mesh_pdr({2: 0.9}, {3: 1.0})


def test_hybrid_pdr():
    assert hybrid_pdr(0.9738, 0.938, 1, 1) == pytest.approx(0.913, abs=1e-3)
    assert hybrid_pdr(0.932, 0.938, 1, 1) == pytest.approx(0.874, abs=1e-3)
    assert hybrid_pdr(0.3, 0.4, 0, 0) == 1.0
    with pytest.raises(ValueError):
        hybrid_pdr(1.1, 0.9, 1, 1)


def test_hybrid_latency():
    assert hybrid_latency(8.4, 0, 1.78, 0, 1, 2) == pytest.approx(11.96)
    assert hybrid_latency(0, 0, 0, 0, 3, 3) == 0
    assert hybrid_latency(8.4, 0, 5.66, 0, 1, 1) == pytest.approx(14.07, abs=0.02)
    with pytest.raises(ValueError):
        hybrid_latency(-1, 0, 0, 0, 1, 1)


def test_scale_units():
    assert scale_units(4.32, 4.32, 2) == (1, 1)
    assert scale_units(12.96, 4.32, 4) == (3, 3)
    assert scale_units(43.2, 4.32, 2) == (10, 1)
    with pytest.raises(ValueError, match="1.5"):
        scale_units(6.48, 4.32, 2)
    with pytest.raises(ValueError):
        scale_units(4.32, 4.32, 1)
    assert HybridConfig(mesh_area=12.96, plc_nodes=4).units == (3, 3)


@settings(max_examples=100, deadline=None)
@given(p=st.floats(0, 0.999), q=st.floats(0, 0.999), a=st.integers(0, 10), b=st.integers(0, 10))
def test_pdr_monotone_in_units(p, q, a, b):
    assert hybrid_pdr(p, q, a + 1, b) <= hybrid_pdr(p, q, a, b)
    assert hybrid_pdr(p, q, a, b + 1) <= hybrid_pdr(p, q, a, b)
    assert hybrid_pdr(p, q, 1, 0) == pytest.approx(p)


@settings(max_examples=50, deadline=None)
@given(l=st.floats(0, 50), gw=st.floats(0, 5), tau=st.floats(0, 20), r=st.floats(0, 5),
       a=st.integers(0, 10), b=st.integers(0, 10))
def test_latency_affine(l, gw, tau, r, a, b):
    base = hybrid_latency(l, gw, tau, r, a, b)
    assert hybrid_latency(l, gw, tau, r, a + 1, b) - base == pytest.approx(l, abs=1e-9)
    assert hybrid_latency(l, gw, tau, r, a, b + 1) - base == pytest.approx(tau + r, abs=1e-9)


def test_tables_reproduce_reference_cells():
    rows = pdr_table()
    for r in rows:
        if r.pdr_hybrid is not None:
            assert r.pdr_hybrid * 100 == pytest.approx(REFERENCE_HYBRID_PDR[r.scenario][r.beta] * 100, abs=0.2)
    assert len([r for r in rows if r.pdr_hybrid is not None]) == 9
    for r in latency_table():
        if r.alpha != 10:
            assert r.l_hybrid == pytest.approx(REFERENCE_HYBRID_LATENCY[(r.density, r.load)][r.beta], abs=0.3)
    assert scalability_ratio() >= 8.0


def test_csv_shapes():
    buf = io.StringIO()
    write_pdr_csv(pdr_table(), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("scenario,alpha") and len(lines) == 13
    buf = io.StringIO()
    write_latency_csv(latency_table(), buf)
    assert len(buf.getvalue().splitlines()) == 17
    assert set(MESH_UNIT_PDR) == set(REFERENCE_HYBRID_PDR)
