"""End-to-end PDR and latency of mesh units joined by a power-line backbone."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, TextIO

GRID_SIZE_M2 = 2.4 * 1.8
UNIT_LENGTH_M = 2.4
ALPHA_TOLERANCE = 0.01


def _check_fractions(k_fractions: Mapping[int, float]) -> None:
    if any(k < 0 for k in k_fractions.values()):
        raise ValueError("hop fractions must be non-negative")
    total = sum(k_fractions.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"hop fractions sum to {total}, expected 1")


@dataclass
class HybridConfig:
    mesh_area: float = GRID_SIZE_M2
    grid_size: float = GRID_SIZE_M2
    plc_nodes: int = 2
    l_gw: float = 0.0
    l_relay: float = 0.0
    tau_rms: float = 1.78
    k_fractions: dict = field(default_factory=lambda: {1: 1.0})

    def __post_init__(self):
        _check_fractions(self.k_fractions)
        self.units  # validates the geometry

    @property
    def units(self) -> tuple[int, int]:
        return scale_units(self.mesh_area, self.grid_size, self.plc_nodes)


def scale_units(mesh_area: float, grid_size: float = GRID_SIZE_M2, plc_nodes: int = 2) -> tuple[int, int]:
    """(alpha, beta): mesh units tiling the area and PLC hops in the backbone."""
    if mesh_area <= 0 or grid_size <= 0:
        raise ValueError("areas must be positive")
    if plc_nodes < 2:
        raise ValueError("a backbone needs at least two PLC nodes")
    ratio = mesh_area / grid_size
    alpha = round(ratio)
    if alpha < 1 or abs(ratio - alpha) > ALPHA_TOLERANCE * max(alpha, 1):
        raise ValueError(f"mesh area is {ratio:.4f} grid units, not a whole number")
    return alpha, plc_nodes - 1


def mesh_pdr(pdr_by_hop: Mapping[int, float], k_fractions: Mapping[int, float]) -> float:
    """Mixture of i-hop group PDRs weighted by the fraction of i-hop sources."""
    _check_fractions(k_fractions)
    total = 0.0
    for i, k in k_fractions.items():
        if k == 0:
            continue
        if i not in pdr_by_hop:
            raise ValueError(f"no PDR for {i}-hop group")
        total += k * pdr_by_hop[i]
    return total


def hybrid_pdr(pdr_ble: float, pdr_plc: float, alpha: int, beta: int) -> float:
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    for p in (pdr_ble, pdr_plc):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"PDR {p} outside [0, 1]")
    return pdr_ble ** alpha * pdr_plc ** beta


def hybrid_latency(l_ble: float, l_gw: float, tau_rms: float, l_relay: float, alpha: int, beta: int) -> float:
    """alpha mesh units, one gateway, beta PLC hops of (tau_rms + l_relay) each."""
    if min(l_ble, l_gw, tau_rms, l_relay) < 0:
        raise ValueError("latencies must be non-negative")
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    return alpha * l_ble + l_gw + beta * (tau_rms + l_relay)


# --------------------------------------------------------------------------
# presets reproducing the published hybrid tables

PLC_LINK_PDR = 0.938

# PDR_ble of one mesh unit per scenario, and the reference scaled values
MESH_UNIT_PDR = {"S1_4dBm": 0.9738, "S2_0dBm": 0.9695, "S3_neg4dBm": 0.932}
MESH_SCALED_PDR = {
    "S1_4dBm": {1: 0.9738, 2: 0.948, 3: 0.923, 10: 0.767},
    "S2_0dBm": {1: 0.9695, 2: 0.94, 3: 0.911, 10: 0.729},
    "S3_neg4dBm": {1: 0.932, 2: 0.868, 3: 0.809, 10: 0.4944},
}
REFERENCE_HYBRID_PDR = {
    "S1_4dBm": {1: 0.913, 2: 0.857, 3: 0.804},
    "S2_0dBm": {1: 0.91, 2: 0.852, 3: 0.80},
    "S3_neg4dBm": {1: 0.874, 2: 0.82, 3: 0.769},
}

# per-unit mesh latency (ms) and total PLC latency for beta hops (ms)
MESH_UNIT_LATENCY = {"dense": 8.4, "sparse": 13.5}
PLC_LATENCY = {
    "dense": {
        "resistive": {1: 1.78, 2: 3.77, 3: 5.34},
        "switching": {1: 5.66, 2: 11.57, 3: 16.98},
    },
    "sparse": {
        "resistive": {1: 1.78, 2: 3.77, 3: 5.34},
        "switching": {1: 5.66, 2: 11.57, 3: 17.25},
    },
}
REFERENCE_HYBRID_LATENCY = {
    ("dense", "resistive"): {1: 10.15, 2: 12.17, 3: 13.74},
    ("dense", "switching"): {1: 14.07, 2: 19.97, 3: 25.38},
    ("sparse", "resistive"): {1: 15.28, 2: 17.27, 3: 18.84},
    ("sparse", "switching"): {1: 19.32, 2: 25.07, 3: 30.76},
}


@dataclass(frozen=True)
class PdrRow:
    scenario: str
    alpha: int
    mesh_length_m: float
    pdr_ble: float
    beta: int | None
    pdr_plc: float | None
    pdr_hybrid: float | None


@dataclass(frozen=True)
class LatencyRow:
    density: str
    load: str
    alpha: int
    l_ble: float
    beta: int
    l_plc: float
    l_hybrid: float


def pdr_table(unit_pdr: Mapping[str, float] | None = None, pdr_plc: float = PLC_LINK_PDR,
              alphas: Sequence[int] = (1, 2, 3, 10), betas: Sequence[int] = (1, 2, 3)) -> list[PdrRow]:
    """Hybrid PDR rows: PDR_ble scaled as unit^alpha, hybrid cells at alpha = 1."""
    unit_pdr = MESH_UNIT_PDR if unit_pdr is None else unit_pdr
    rows = []
    for name, p in unit_pdr.items():
        for j, a in enumerate(alphas):
            beta = betas[j] if j < len(betas) else None
            hyb = hybrid_pdr(p, pdr_plc, 1, beta) if beta is not None else None
            rows.append(PdrRow(name, a, a * UNIT_LENGTH_M, hybrid_pdr(p, 1.0, a, 0),
                               beta, pdr_plc if beta is not None else None, hyb))
    return rows


def latency_table(unit_latency: Mapping[str, float] | None = None,
                  plc_latency: Mapping[str, Mapping[str, Mapping[int, float]]] | None = None,
                  l_gw: float = 0.0) -> list[LatencyRow]:
    """Hybrid latency rows for alpha = 1 and each tabulated beta, plus the 10-unit mesh row."""
    unit_latency = MESH_UNIT_LATENCY if unit_latency is None else unit_latency
    plc_latency = PLC_LATENCY if plc_latency is None else plc_latency
    rows = []
    for density, l_ble in unit_latency.items():
        for load, by_beta in plc_latency[density].items():
            for beta, l_plc in sorted(by_beta.items()):
                total = hybrid_latency(l_ble, l_gw, l_plc / beta, 0.0, 1, beta)
                rows.append(LatencyRow(density, load, beta, beta * l_ble, beta, l_plc, total))
            l_plc = by_beta[1]
            rows.append(LatencyRow(density, load, 10, 10 * l_ble, 1, l_plc,
                                   hybrid_latency(l_ble, l_gw, l_plc, 0.0, 1, 1)))
    return rows


def scalability_ratio(unit_latency: float = MESH_UNIT_LATENCY["dense"], units: int = 10,
                      per_hop_plc: float = PLC_LATENCY["dense"]["resistive"][1], l_gw: float = 0.0) -> float:
    """Latency of a pure mesh of ``units`` units over one unit plus one PLC hop."""
    mesh_only = hybrid_latency(unit_latency, 0.0, 0.0, 0.0, units, 0)
    return mesh_only / hybrid_latency(unit_latency, l_gw, per_hop_plc, 0.0, 1, 1)


def _cell(x: float | None, scale: float = 1.0) -> str:
    if x is None:
        return ""
    if math.isinf(x):
        return "inf"
    return f"{x * scale:.4f}"


def write_pdr_csv(rows: Sequence[PdrRow], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["scenario", "alpha", "mesh_length_m", "pdr_ble_pct", "beta", "pdr_plc_pct", "pdr_hybrid_pct"])
    for r in rows:
        w.writerow([r.scenario, r.alpha, f"{r.mesh_length_m:.1f}", _cell(r.pdr_ble, 100),
                    "" if r.beta is None else r.beta, _cell(r.pdr_plc, 100), _cell(r.pdr_hybrid, 100)])


def write_latency_csv(rows: Sequence[LatencyRow], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["mesh_state", "plc_load", "alpha", "l_ble_ms", "beta", "l_plc_ms", "l_hybrid_ms"])
    for r in rows:
        w.writerow([r.density, r.load, r.alpha, _cell(r.l_ble), r.beta, _cell(r.l_plc), _cell(r.l_hybrid)])
