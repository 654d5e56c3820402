"""Grid mesh construction, de-tangling, link-uncertainty sampling and path tools.

Nodes are addressed by label ("C", "S1" ... "S11").  The client always has
index 0 and server ``Sk`` has index ``k``.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

SPACING_M = 0.6
DIAGONAL_M = 0.86
# Orthogonal neighbours sit exactly at the -4 dBm range; keep them inside.
_RANGE_EPS = 1e-9

NodeId = str
Link = tuple[str, str]


class Role(enum.Enum):
    CLIENT = "client"
    SERVER = "server"


class DiagonalMode(enum.Enum):
    CONNECTED = "connected"
    INTERMITTENT = "intermittent"
    DISCONNECTED = "disconnected"


@dataclass(frozen=True)
class Scenario:
    name: str
    tx_power_dbm: float
    vicinity_range: tuple[float, float]
    diagonal_mode: DiagonalMode
    hop_latency_ms: float
    intermittent_p: float = 0.5

    def link_kind(self, distance: float) -> DiagonalMode:
        lo, hi = self.vicinity_range
        if distance <= lo + _RANGE_EPS:
            return DiagonalMode.CONNECTED
        if distance <= hi + _RANGE_EPS:
            return DiagonalMode.INTERMITTENT
        return DiagonalMode.DISCONNECTED

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "tx_power_dbm": self.tx_power_dbm,
            "vicinity_range": list(self.vicinity_range),
            "diagonal_mode": self.diagonal_mode.value,
            "hop_latency_ms": self.hop_latency_ms,
            "intermittent_p": self.intermittent_p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        lo, hi = d["vicinity_range"]
        return cls(
            name=d["name"],
            tx_power_dbm=float(d["tx_power_dbm"]),
            vicinity_range=(float(lo), float(hi)),
            diagonal_mode=DiagonalMode(d["diagonal_mode"]),
            hop_latency_ms=float(d["hop_latency_ms"]),
            intermittent_p=float(d.get("intermittent_p", 0.5)),
        )


# Per-hop means are calibrated so the S1->C baseline mean lands on the
# reference per-scenario averages (6.25 / 6.96 / 8.07 ms) on the default grid.
SCENARIOS: dict[str, Scenario] = {
    "S1_4dBm": Scenario("S1_4dBm", 4.0, (0.86, 0.86), DiagonalMode.CONNECTED, 2.193),
    "S2_0dBm": Scenario("S2_0dBm", 0.0, (0.6, 0.86), DiagonalMode.INTERMITTENT, 2.0475),
    "S3_neg4dBm": Scenario("S3_neg4dBm", -4.0, (0.6, 0.6), DiagonalMode.DISCONNECTED, 1.7239),
}
SCENARIO_BY_NUMBER = {1: "S1_4dBm", 2: "S2_0dBm", 3: "S3_neg4dBm"}


def get_scenario(key: str | int) -> Scenario:
    """Look up a preset by number (1-3) or name."""
    if isinstance(key, int) or str(key).isdigit():
        num = int(key)
        if num not in SCENARIO_BY_NUMBER:
            raise ValueError(f"unknown scenario number {num}; expected 1, 2 or 3")
        return SCENARIOS[SCENARIO_BY_NUMBER[num]]
    try:
        return SCENARIOS[key]
    except KeyError:
        raise ValueError(f"unknown scenario {key!r}; presets: {sorted(SCENARIOS)}") from None


@dataclass(frozen=True)
class MeshNode:
    label: NodeId
    index: int
    position: tuple[float, float]
    role: Role
    tx_power_dbm: float
    vicinity_range: float

    def __post_init__(self):
        if self.vicinity_range <= 0:
            raise ValueError(f"{self.label}: vicinity_range must be positive")


@dataclass(frozen=True)
class MeshTopology:
    nodes: tuple[MeshNode, ...]
    links: frozenset[Link]
    intermittent: frozenset[Link] = frozenset()
    scenario: Scenario | None = None
    _by_label: dict = field(init=False, repr=False, compare=False)
    _succ: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_label = {}
        for n in self.nodes:
            if n.label in by_label:
                raise ValueError(f"duplicate node label {n.label}")
            by_label[n.label] = n
        clients = [n for n in self.nodes if n.role is Role.CLIENT]
        if len(clients) != 1:
            raise ValueError(f"expected exactly one client node, found {len(clients)}")
        succ: dict[str, list[str]] = {n.label: [] for n in self.nodes}
        for u, v in sorted(self.links, key=lambda l: (by_label[l[0]].index, by_label[l[1]].index)):
            if u not in by_label or v not in by_label:
                raise ValueError(f"link {u}->{v} references an unknown node")
            succ[u].append(v)
        object.__setattr__(self, "_by_label", by_label)
        object.__setattr__(self, "_succ", {k: tuple(v) for k, v in succ.items()})

    @property
    def client(self) -> NodeId:
        return next(n.label for n in self.nodes if n.role is Role.CLIENT)

    @property
    def labels(self) -> list[NodeId]:
        return [n.label for n in self.nodes]

    @property
    def servers(self) -> list[NodeId]:
        return [n.label for n in self.nodes if n.role is Role.SERVER]

    def __contains__(self, label: object) -> bool:
        return label in self._by_label

    def node(self, label: NodeId) -> MeshNode:
        try:
            return self._by_label[label]
        except KeyError:
            raise KeyError(f"node {label!r} not in topology") from None

    def index(self, label: NodeId) -> int:
        return self.node(label).index

    def successors(self, label: NodeId) -> tuple[NodeId, ...]:
        return self._succ[label]

    def neighbors(self, label: NodeId) -> set[NodeId]:
        """Undirected adjacency (either link direction)."""
        out = set(self._succ[label])
        out.update(u for u, v in self.links if v == label)
        return out

    def sorted_links(self) -> list[Link]:
        return sorted(self.links, key=lambda l: (self.index(l[0]), self.index(l[1])))

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "label": n.label,
                    "index": n.index,
                    "position": list(n.position),
                    "role": n.role.value,
                    "tx_power_dbm": n.tx_power_dbm,
                    "vicinity_range": n.vicinity_range,
                }
                for n in self.nodes
            ],
            "links": [list(l) for l in self.sorted_links()],
            "intermittent": [list(l) for l in sorted(self.intermittent)],
            "scenario": self.scenario.to_dict() if self.scenario else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeshTopology":
        nodes = tuple(
            MeshNode(
                label=n["label"],
                index=int(n["index"]),
                position=(float(n["position"][0]), float(n["position"][1])),
                role=Role(n["role"]),
                tx_power_dbm=float(n["tx_power_dbm"]),
                vicinity_range=float(n["vicinity_range"]),
            )
            for n in d["nodes"]
        )
        scen = Scenario.from_dict(d["scenario"]) if d.get("scenario") else None
        return cls(
            nodes=nodes,
            links=frozenset(tuple(l) for l in d["links"]),
            intermittent=frozenset(tuple(l) for l in d.get("intermittent", [])),
            scenario=scen,
        )


def _grid_labels(rows: int, cols: int) -> dict[tuple[int, int], str]:
    """Place C in the bottom-right corner and S1 in the opposite corner.

    Servers are numbered column by column, alternating direction, so that
    S1/S2 are walled off from C by S3-S6 and S8-S11 crowd around C.
    """
    client_cell = (rows - 1, cols - 1)
    order = []
    for c in range(cols):
        rs = range(rows) if c % 2 == 0 else range(rows - 1, -1, -1)
        order.extend((r, c) for r in rs)
    labels = {client_cell: "C"}
    k = 1
    for cell in order:
        if cell == client_cell:
            continue
        labels[cell] = f"S{k}"
        k += 1
    return labels


def build_grid_mesh(rows: int = 3, cols: int = 4, scenario: Scenario | str | int = 1) -> MeshTopology:
    if rows <= 0 or cols <= 0:
        raise ValueError(f"grid dimensions must be positive, got {rows}x{cols}")
    if rows * cols < 2:
        raise ValueError("a mesh needs at least two nodes")
    if not isinstance(scenario, Scenario):
        scenario = get_scenario(scenario)

    labels = _grid_labels(rows, cols)
    nodes = []
    for (r, c), label in labels.items():
        idx = 0 if label == "C" else int(label[1:])
        nodes.append(
            MeshNode(
                label=label,
                index=idx,
                position=(round(c * SPACING_M, 9), round((rows - 1 - r) * SPACING_M, 9)),
                role=Role.CLIENT if label == "C" else Role.SERVER,
                tx_power_dbm=scenario.tx_power_dbm,
                vicinity_range=scenario.vicinity_range[1],
            )
        )
    nodes.sort(key=lambda n: n.index)

    links, intermittent = set(), set()
    for a in nodes:
        for b in nodes:
            if a is b:
                continue
            kind = scenario.link_kind(math.dist(a.position, b.position))
            if kind is DiagonalMode.DISCONNECTED:
                continue
            links.add((a.label, b.label))
            if kind is DiagonalMode.INTERMITTENT:
                intermittent.add((a.label, b.label))
    return MeshTopology(tuple(nodes), frozenset(links), frozenset(intermittent), scenario)


def detangle(topology: MeshTopology, removed: Iterable[NodeId]) -> MeshTopology:
    """Return a copy of ``topology`` with ``removed`` nodes and their links cut away."""
    removed = set(removed)
    for label in removed:
        if label not in topology:
            raise KeyError(f"cannot remove unknown node {label!r}")
        if topology.node(label).role is Role.CLIENT:
            raise ValueError("the client node cannot be removed")
    if not removed:
        return topology
    keep = lambda l: l[0] not in removed and l[1] not in removed  # noqa: E731
    return MeshTopology(
        nodes=tuple(n for n in topology.nodes if n.label not in removed),
        links=frozenset(filter(keep, topology.links)),
        intermittent=frozenset(filter(keep, topology.intermittent)),
        scenario=topology.scenario,
    )


def parity_groups(topology: MeshTopology) -> tuple[list[NodeId], list[NodeId]]:
    """Split servers into (odd, even) groups by index."""
    servers = sorted(topology.servers, key=topology.index)
    odd = [s for s in servers if topology.index(s) % 2 == 1]
    even = [s for s in servers if topology.index(s) % 2 == 0]
    return odd, even


# --------------------------------------------------------------------------
# link uncertainty


@dataclass(frozen=True)
class LinkSample:
    """One Monte-Carlo state: only links present in this trial appear."""

    failure_prob: dict[Link, float]
    latency_weight: dict[Link, float]
    trial_index: int


class SampleSet(Sequence[LinkSample]):
    """Array-backed batch of :class:`LinkSample` draws over a fixed link order."""

    def __init__(self, links: Sequence[Link], failure: np.ndarray, latency: np.ndarray,
                 present: np.ndarray, seed: int | None = None, offset: int = 0):
        self.links = list(links)
        self.failure = failure
        self.latency = latency
        self.present = present
        self.seed = seed
        self.offset = offset
        self.link_index = {l: i for i, l in enumerate(self.links)}

    def __len__(self) -> int:
        return self.failure.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return SampleSet(self.links, self.failure[i], self.latency[i], self.present[i],
                             self.seed, self.offset + (i.start or 0))
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        mask = self.present[i]
        return LinkSample(
            failure_prob={l: float(self.failure[i, k]) for k, l in enumerate(self.links) if mask[k]},
            latency_weight={l: float(self.latency[i, k]) for k, l in enumerate(self.links) if mask[k]},
            trial_index=self.offset + i,
        )

    def __iter__(self) -> Iterator[LinkSample]:
        return (self[i] for i in range(len(self)))

    def failure_column(self, link: Link) -> np.ndarray:
        """Failure probability of ``link`` per trial; absent links fail surely."""
        k = self.link_index.get(link)
        if k is None:
            return np.ones(len(self))
        return np.where(self.present[:, k], self.failure[:, k], 1.0)

    @classmethod
    def from_samples(cls, samples: Sequence[LinkSample]) -> "SampleSet":
        if isinstance(samples, SampleSet):
            return samples
        links = sorted({l for s in samples for l in s.latency_weight})
        t, n = len(samples), len(links)
        failure, latency = np.ones((t, n)), np.ones((t, n))
        present = np.zeros((t, n), dtype=bool)
        for i, s in enumerate(samples):
            for k, l in enumerate(links):
                if l in s.latency_weight:
                    failure[i, k] = s.failure_prob[l]
                    latency[i, k] = s.latency_weight[l]
                    present[i, k] = True
        return cls(links, failure, latency, present)


def sample_link_uncertainty(topology: MeshTopology, trials: int, seed: int,
                            hop_latency_ms: float | None = None, spread: float = 0.2) -> SampleSet:
    """Draw ``trials`` independent link states.

    Failure probabilities are U(0,1) per directed link; latency weights are
    U[(1-spread)mu, (1+spread)mu] per direction; intermittent adjacencies are
    present with the scenario's probability (both directions together).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if hop_latency_ms is None:
        if topology.scenario is None:
            raise ValueError("hop_latency_ms required for a topology without scenario")
        hop_latency_ms = topology.scenario.hop_latency_ms
    if hop_latency_ms <= 0 or not 0 <= spread < 1:
        raise ValueError("hop latency must be positive and spread in [0, 1)")

    links = topology.sorted_links()
    rng = np.random.default_rng(seed)
    failure = rng.random((trials, len(links)))
    latency = rng.uniform((1 - spread) * hop_latency_ms, (1 + spread) * hop_latency_ms,
                          (trials, len(links)))
    present = np.ones((trials, len(links)), dtype=bool)
    if topology.intermittent:
        p = topology.scenario.intermittent_p if topology.scenario else 0.5
        pairs = sorted({tuple(sorted(l, key=topology.index)) for l in topology.intermittent},
                       key=lambda l: (topology.index(l[0]), topology.index(l[1])))
        draws = rng.random((trials, len(pairs))) < p
        col = {l: k for k, l in enumerate(links)}
        for j, (a, b) in enumerate(pairs):
            for l in ((a, b), (b, a)):
                if l in col:
                    present[:, col[l]] = draws[:, j]
    return SampleSet(links, failure, latency, present, seed=seed)


# --------------------------------------------------------------------------
# paths and DAG orientation


@dataclass(frozen=True)
class PathGroup:
    hop_count: int
    paths: tuple[tuple[NodeId, ...], ...]

    def __len__(self) -> int:
        return len(self.paths)

    @property
    def nodes(self) -> set[NodeId]:
        return {v for p in self.paths for v in p}


def enumerate_ihop_paths(topology: MeshTopology, src: NodeId, dst: NodeId, i: int) -> PathGroup:
    """All simple paths from ``src`` to ``dst`` with exactly ``i`` links."""
    if src == dst:
        raise ValueError("source and destination must differ")
    if i < 1:
        raise ValueError("hop count must be >= 1")
    if src not in topology or dst not in topology:
        return PathGroup(i, ())
    found = []
    path = [src]
    on_path = {src}

    def walk(u: str):
        if len(path) - 1 == i:
            if u == dst:
                found.append(tuple(path))
            return
        for v in topology.successors(u):
            if v in on_path or (v == dst and len(path) < i):
                continue
            path.append(v)
            on_path.add(v)
            walk(v)
            path.pop()
            on_path.discard(v)

    walk(src)
    return PathGroup(i, tuple(found))


def hop_distances(topology: MeshTopology, dst: NodeId) -> dict[NodeId, int]:
    """BFS hop distance of every node that can reach ``dst``."""
    pred: dict[str, list[str]] = {n: [] for n in topology.labels}
    for u, v in topology.links:
        pred[v].append(u)
    dist = {dst: 0}
    queue = deque([dst])
    while queue:
        v = queue.popleft()
        for u in pred[v]:
            if u not in dist:
                dist[u] = dist[v] + 1
                queue.append(u)
    return dist


@dataclass(frozen=True)
class Dag:
    """Source-to-destination orientation of a mesh (nodes in topological order)."""

    src: NodeId
    dst: NodeId
    nodes: tuple[NodeId, ...]
    edges: tuple[Link, ...]
    path_count: int

    def parents(self, v: NodeId) -> list[NodeId]:
        return [u for u, w in self.edges if w == v]

    def children(self, u: NodeId) -> list[NodeId]:
        return [w for x, w in self.edges if x == u]

    @property
    def empty(self) -> bool:
        return self.path_count == 0


def build_dag(topology: MeshTopology, src: NodeId, dst: NodeId) -> Dag:
    """Orient the mesh towards ``dst``.

    Each adjacency points from the endpoint farther (in hops) from ``dst`` to
    the nearer one; equal distances point to the larger node index.  Only
    nodes lying on some src->dst path of the oriented graph are kept.
    """
    if src == dst:
        raise ValueError("source and destination must differ")
    if src not in topology or dst not in topology:
        return Dag(src, dst, (), (), 0)
    dist = hop_distances(topology, dst)
    if src not in dist:
        return Dag(src, dst, (), (), 0)

    def rank(v):
        return (-dist[v], topology.index(v))

    edges = set()
    for u, v in topology.links:
        if u not in dist or v not in dist:
            continue
        a, b = (u, v) if rank(u) < rank(v) else (v, u)
        if (a, b) in topology.links:
            edges.add((a, b))

    order = sorted(dist, key=rank)
    succ: dict[str, list[str]] = {v: [] for v in order}
    for a, b in edges:
        succ[a].append(b)
    reach_fwd = {src}
    for v in order:
        if v in reach_fwd:
            reach_fwd.update(succ[v])
    reach_back = {dst}
    for v in reversed(order):
        if any(w in reach_back for w in succ[v]):
            reach_back.add(v)
    keep = reach_fwd & reach_back
    if dst not in keep:
        return Dag(src, dst, (), (), 0)
    nodes = tuple(v for v in order if v in keep)
    kept_edges = tuple(sorted(((a, b) for a, b in edges if a in keep and b in keep),
                              key=lambda e: (nodes.index(e[1]), nodes.index(e[0]))))
    count = {v: 0 for v in nodes}
    count[src] = 1
    for v in nodes:
        for a, b in kept_edges:
            if a == v:
                count[b] += count[v]
    return Dag(src, dst, nodes, kept_edges, count[dst])


# --------------------------------------------------------------------------
# config file


def load_topology_config(path: str | Path) -> MeshTopology:
    """Build a topology from JSON.

    Either ``{"rows": 3, "cols": 4, "scenario": 1 | "S1_4dBm" | {...}}`` or a
    full ``MeshTopology.to_dict()`` dump with explicit nodes and links.
    """
    with open(path) as fh:
        data = json.load(fh)
    if "nodes" in data:
        return MeshTopology.from_dict(data)
    scen = data.get("scenario", 1)
    if isinstance(scen, dict):
        scen = Scenario.from_dict(scen)
    return build_grid_mesh(int(data.get("rows", 3)), int(data.get("cols", 4)), scen)
