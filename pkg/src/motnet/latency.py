"""Minimum source-to-client latency per trial (Dijkstra) and its aggregates."""

from __future__ import annotations

import csv
import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .topology import LinkSample, MeshTopology, NodeId, SampleSet

INF = math.inf


@dataclass(frozen=True)
class LatencyStats:
    src: NodeId
    dst: NodeId
    mean: float
    std: float
    unreachable_fraction: float
    trials: int

    @property
    def reachable(self) -> bool:
        return self.unreachable_fraction < 1.0


def _dijkstra(adj: dict, start: str, weight) -> dict[str, float]:
    dist = {start: 0.0}
    done = set()
    heap = [(0.0, start)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, key in adj[u]:
            w = weight(key)
            if w is None:
                continue
            nd = d + w
            if nd < dist.get(v, INF):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def shortest_path_latency(topology: MeshTopology, sample: LinkSample, src: NodeId, dst: NodeId) -> float:
    """Minimum total directed weight from src to dst; ``inf`` when cut off."""
    if src == dst:
        raise ValueError("source and destination must differ")
    if src not in topology or dst not in topology:
        return INF
    adj = {v: [] for v in topology.labels}
    for u, v in topology.links:
        adj[u].append((v, (u, v)))
    dist = _dijkstra(adj, src, sample.latency_weight.get)
    return dist.get(dst, INF)


def trial_latencies(topology: MeshTopology, samples: Sequence[LinkSample], sources: Iterable[NodeId],
                    dst: NodeId, threads: int = 1) -> dict[NodeId, np.ndarray]:
    """Per-trial latency from each source to ``dst``.

    One reverse Dijkstra from ``dst`` per trial serves every source at once.
    Sources missing from the topology get ``inf`` everywhere.
    """
    samples = SampleSet.from_samples(samples)
    sources = list(sources)
    radj: dict[str, list] = {v: [] for v in topology.labels}
    for u, v in topology.links:
        k = samples.link_index.get((u, v))
        if k is not None:
            radj[v].append((u, k))
    lat, present = samples.latency, samples.present

    def run(rows: range) -> np.ndarray:
        out = np.full((len(rows), len(sources)), INF)
        for j, t in enumerate(rows):
            w, ok = lat[t].tolist(), present[t].tolist()
            dist = _dijkstra(radj, dst, lambda k: w[k] if ok[k] else None) if dst in radj else {}
            for i, s in enumerate(sources):
                out[j, i] = dist.get(s, INF)
        return out

    n = len(samples)
    if threads > 1 and n > 1:
        step = math.ceil(n / threads)
        chunks = [range(a, min(n, a + step)) for a in range(0, n, step)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            res = np.concatenate(list(pool.map(run, chunks)), axis=0)
    else:
        res = run(range(n))
    return {s: res[:, i] for i, s in enumerate(sources)}


def summarize(values: np.ndarray, src: NodeId, dst: NodeId) -> LatencyStats:
    finite = values[np.isfinite(values)]
    n = len(values)
    if len(finite) == 0:
        return LatencyStats(src, dst, INF, 0.0, 1.0, n)
    std = float(np.std(finite, ddof=1)) if len(finite) > 1 else 0.0
    return LatencyStats(src, dst, float(np.mean(finite)), std, 1.0 - len(finite) / n, n)


def average_latency(topology: MeshTopology, samples: Sequence[LinkSample], src: NodeId,
                    dst: NodeId, threads: int = 1) -> LatencyStats:
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    if src == dst:
        raise ValueError("source and destination must differ")
    values = trial_latencies(topology, samples, [src], dst, threads)[src]
    return summarize(values, src, dst)


def latency_table(topology: MeshTopology, samples: Sequence[LinkSample], sources: Sequence[NodeId],
                  dst: NodeId, threads: int = 1) -> list[LatencyStats]:
    """One row per source, in the order given."""
    if not sources:
        raise ValueError("need at least one source")
    per = trial_latencies(topology, samples, sources, dst, threads)
    return [summarize(per[s], s, dst) for s in sources]


def write_latency_csv(rows: Sequence[LatencyStats], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["source", "mean_ms", "std_ms", "unreachable_fraction"])
    for r in rows:
        w.writerow([r.src, _fmt(r.mean), _fmt(r.std), _fmt(r.unreachable_fraction)])


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6f}"
