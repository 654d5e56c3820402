"""A priori Bayesian equivalents of a mesh and exact inference over them.

Two causal-independence gates are supported.  Noisy-OR nodes are binary and
become active when at least one active parent gets through its link.
Noisy-integer-addition nodes count how many parent paths get through, so the
state of the destination is the number of working redundant paths.

Inference is variable elimination.  Gates are never tabulated against all
parents at once; each gate is unrolled into a chain of partial-sum variables
(one three-way factor per parent) so factor sizes stay polynomial even for a
destination with a couple of hundred states.

Inhibition values may be floats or equal-length 1-D arrays.  With arrays the
whole net is evaluated for every Monte-Carlo trial in one elimination pass.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .topology import Dag, LinkSample, PathGroup, SampleSet

Prob = Union[float, np.ndarray]


class InconsistentEvidenceError(ValueError):
    """Evidence has zero probability under the net."""


class EmptyPathGroupError(ValueError):
    """A delivery net was requested for a group without paths."""


# --------------------------------------------------------------------------
# CPD kinds


@dataclass(frozen=True)
class RootPrior:
    p_active: Prob = 0.5


@dataclass(frozen=True)
class NoisyOr:
    inhibitions: tuple


@dataclass(frozen=True)
class NoisyIntAdd:
    inhibitions: tuple


Cpd = Union[RootPrior, NoisyOr, NoisyIntAdd]


def noisy_or_cpd(active_parents: Iterable, inhibitions: Mapping | Sequence[float]) -> float:
    """P(child active) given which parents are active; no leak term."""
    if isinstance(inhibitions, Mapping):
        qs = [inhibitions[p] for p in active_parents]
    else:
        qs = [inhibitions[i] for i in active_parents]
    blocked = 1.0
    for q in qs:
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"inhibition {q} outside [0, 1]")
        blocked *= q
    return 1.0 - blocked if qs else 0.0


def noisy_int_add_cpd(parent_states: Sequence[int], inhibitions: Sequence[float]) -> np.ndarray:
    """Distribution of ``sum_i b_i * s_i`` with ``b_i ~ Bernoulli(1 - q_i)``."""
    if len(parent_states) != len(inhibitions):
        raise ValueError("one inhibition per parent required")
    dist = np.ones(1)
    for s, q in zip(parent_states, inhibitions):
        if s < 0:
            raise ValueError("parent states must be non-negative")
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"inhibition {q} outside [0, 1]")
        out = np.zeros(len(dist) + s)
        out[: len(dist)] += q * dist
        out[s: s + len(dist)] += (1.0 - q) * dist
        dist = out
    return dist


# --------------------------------------------------------------------------
# the net


@dataclass(frozen=True)
class BayesNode:
    id: str
    integer: bool
    parents: tuple[str, ...]
    cpd: Cpd


@dataclass(frozen=True)
class Belief:
    node: str
    probs: np.ndarray  # (states,) or (trials, states)

    @property
    def distribution(self) -> dict[int, float]:
        if self.probs.ndim != 1:
            raise ValueError("batched belief; index probs per trial instead")
        return {s: float(p) for s, p in enumerate(self.probs)}

    def __getitem__(self, state: int):
        if state >= self.probs.shape[-1]:
            return 0.0 if self.probs.ndim == 1 else np.zeros(self.probs.shape[0])
        return self.probs[..., state]


@dataclass
class BayesNet:
    nodes: dict[str, BayesNode]
    batch: int = field(init=False, default=1)
    s_max: dict[str, int] = field(init=False, default_factory=dict)

    def __init__(self, nodes: Iterable[BayesNode]):
        self.nodes = {}
        for n in nodes:
            if n.id in self.nodes:
                raise ValueError(f"duplicate node {n.id}")
            self.nodes[n.id] = n
        self.s_max = {}
        batch = 1
        for n in self._topo_order():
            if isinstance(n.cpd, RootPrior):
                if n.parents:
                    raise ValueError(f"{n.id}: root prior on a node with parents")
                self.s_max[n.id] = 1
                vals = [n.cpd.p_active]
            else:
                if len(n.cpd.inhibitions) != len(n.parents):
                    raise ValueError(f"{n.id}: {len(n.parents)} parents but "
                                     f"{len(n.cpd.inhibitions)} inhibitions")
                if isinstance(n.cpd, NoisyIntAdd):
                    if not n.integer:
                        raise ValueError(f"{n.id}: integer addition needs an integer node")
                    self.s_max[n.id] = sum(self.s_max[p] for p in n.parents)
                else:
                    if n.integer:
                        raise ValueError(f"{n.id}: noisy-or needs a binary node")
                    self.s_max[n.id] = 1 if n.parents else 0
                vals = n.cpd.inhibitions
            for v in vals:
                a = np.asarray(v, dtype=float)
                if a.ndim > 1 or np.any(a < 0) or np.any(a > 1):
                    raise ValueError(f"{n.id}: probabilities must be scalars/1-D in [0, 1]")
                if a.ndim == 1:
                    if batch not in (1, a.shape[0]):
                        raise ValueError("inconsistent batch sizes in net")
                    batch = a.shape[0]
        self.batch = batch
        # keep insertion order topological
        self.nodes = {n.id: n for n in self._topo_order()}

    def _topo_order(self) -> list[BayesNode]:
        indeg = {k: 0 for k in self.nodes}
        children: dict[str, list[str]] = {k: [] for k in self.nodes}
        for n in self.nodes.values():
            for p in n.parents:
                if p not in self.nodes:
                    raise ValueError(f"{n.id}: unknown parent {p}")
                indeg[n.id] += 1
                children[p].append(n.id)
        ready = [k for k in self.nodes if indeg[k] == 0]
        order = []
        while ready:
            k = ready.pop(0)
            order.append(self.nodes[k])
            for c in children[k]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.nodes):
            raise ValueError("parent graph has a cycle")
        return order

    def card(self, node: str) -> int:
        return self.s_max[node] + 1

    def __contains__(self, node: object) -> bool:
        return node in self.nodes

    def ancestors(self, targets: Iterable[str]) -> set[str]:
        out, stack = set(), list(targets)
        while stack:
            k = stack.pop()
            if k in out:
                continue
            out.add(k)
            stack.extend(self.nodes[k].parents)
        return out

    def to_dict(self) -> dict:
        def enc(v):
            a = np.asarray(v, dtype=float)
            return a.tolist() if a.ndim else float(a)

        out = []
        for n in self.nodes.values():
            d = {"id": n.id, "state_space": "integer" if n.integer else "binary",
                 "s_max": self.s_max[n.id], "parents": list(n.parents)}
            if isinstance(n.cpd, RootPrior):
                d["cpd"] = {"kind": "root_prior", "p_active": enc(n.cpd.p_active)}
            else:
                kind = "noisy_int_add" if isinstance(n.cpd, NoisyIntAdd) else "noisy_or"
                d["cpd"] = {"kind": kind, "inhibitions": [enc(q) for q in n.cpd.inhibitions]}
            out.append(d)
        return {"nodes": out}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


# --------------------------------------------------------------------------
# net builders


def _inhibition(sample: LinkSample | SampleSet, link) -> Prob:
    if isinstance(sample, SampleSet):
        return sample.failure_column(link)
    return sample.failure_prob.get(link, 1.0)


def _src_dst(group: PathGroup) -> tuple[str, str]:
    return group.paths[0][0], group.paths[0][-1]


def build_delivery_bn(group: PathGroup, sample: LinkSample | SampleSet) -> BayesNet:
    """Binary Noisy-OR net over the union of a group's paths.

    Where paths visit two relays in opposite orders, the union would contain
    a cycle; edges are kept only from the earlier to the later node, ranked
    by (earliest hop position on any path, node label order).  Every node
    keeps the edge from its predecessor on its earliest path.
    """
    if not group.paths:
        raise EmptyPathGroupError("no paths in group; delivery belief is 0")
    src, _ = _src_dst(group)
    first: dict[str, int] = {}
    for p in group.paths:
        for pos, v in enumerate(p):
            first[v] = min(first.get(v, pos), pos)

    def rank(v):
        return (first[v], _label_key(v))

    edges = set()
    for p in group.paths:
        for u, v in zip(p, p[1:]):
            if rank(u) < rank(v):
                edges.add((u, v))
    order = sorted(first, key=rank)
    nodes = [BayesNode(src, False, (), RootPrior(0.5))]
    for v in order[1:]:
        parents = tuple(u for u in order if (u, v) in edges)
        qs = tuple(_inhibition(sample, (u, v)) for u in parents)
        nodes.append(BayesNode(v, False, parents, NoisyOr(qs)))
    return BayesNet(nodes)


def _label_key(v: str):
    return (0, 0) if v == "C" else (1, int(v[1:])) if v[1:].isdigit() else (2, v)


def build_pathcount_bn(dag: Dag, sample: LinkSample | SampleSet, binary: bool = False) -> BayesNet:
    """Integer-state (or, with ``binary``, Noisy-OR) net on a src->dst DAG.

    An empty DAG yields a net where the destination is stuck at state 0.
    """
    gate = NoisyOr if binary else NoisyIntAdd
    nodes = [BayesNode(dag.src, not binary, (), RootPrior(0.5))]
    if dag.empty:
        nodes.append(BayesNode(dag.dst, not binary, (), gate(())))
        return BayesNet(nodes)
    for v in dag.nodes:
        if v == dag.src:
            continue
        parents = tuple(dag.parents(v))
        qs = tuple(_inhibition(sample, (u, v)) for u in parents)
        nodes.append(BayesNode(v, not binary, parents, gate(qs)))
    return BayesNet(nodes)


# --------------------------------------------------------------------------
# factors


@dataclass
class _Factor:
    vars: tuple
    table: np.ndarray  # leading batch axis (1 or B) then one axis per var


def _pass_matrix(q: Prob, card_in: int, integer: bool) -> np.ndarray:
    """M[b, s, z] = P(contribution z | parent state s) for one link."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    card_out = card_in if integer else 2
    m = np.zeros((q.shape[0], card_in, card_out))
    m[:, 0, 0] = 1.0
    for s in range(1, card_in):
        z = s if integer else 1
        m[:, s, 0] = q
        m[:, s, z] += 1.0 - q
    return m


def _combine_tensor(c_prev: int, c_z: int, c_out: int, integer: bool) -> np.ndarray:
    t = np.zeros((c_prev, c_z, c_out))
    for y in range(c_prev):
        for z in range(c_z):
            t[y, z, (y + z) if integer else min(1, y + z)] = 1.0
    return t


def _node_factors(net: BayesNet, node: BayesNode) -> list[_Factor]:
    nid = node.id
    if isinstance(node.cpd, RootPrior):
        p = np.atleast_1d(np.asarray(node.cpd.p_active, dtype=float))
        return [_Factor((nid,), np.stack([1.0 - p, p], axis=-1))]
    integer = isinstance(node.cpd, NoisyIntAdd)
    parents = node.parents
    if not parents:
        return [_Factor((nid,), np.ones((1, 1)))]
    factors = []
    prev, c_prev = None, None
    acc_smax = 0
    for j, (par, q) in enumerate(zip(parents, node.cpd.inhibitions)):
        c_par = net.card(par)
        m = _pass_matrix(q, c_par, integer)
        last = j == len(parents) - 1
        out = nid if last else ("#", nid, j)
        if prev is None:
            factors.append(_Factor((par, out), m))
            acc_smax = m.shape[2] - 1
        else:
            acc_smax = acc_smax + (m.shape[2] - 1) if integer else 1
            c_out = acc_smax + 1
            t = _combine_tensor(c_prev, m.shape[2], c_out, integer)
            g = np.einsum("bsz,yzo->byso", m, t)
            factors.append(_Factor((prev, par, out), g))
        prev, c_prev = out, acc_smax + 1
    return factors


def _reduce(f: _Factor, evidence: Mapping[str, int]) -> _Factor:
    idx = [slice(None)]
    keep = []
    for v in f.vars:
        if v in evidence:
            idx.append(evidence[v])
        else:
            idx.append(slice(None))
            keep.append(v)
    return _Factor(tuple(keep), f.table[tuple(idx)])


_LETTERS = string.ascii_letters


def _einsum(factors: Sequence[_Factor], out_vars: Sequence) -> _Factor:
    names: dict = {}
    for f in factors:
        for v in f.vars:
            if v not in names:
                names[v] = _LETTERS[len(names)]
    operands = []
    for f in factors:
        operands += [f.table, [Ellipsis] + [_LETTERS.index(names[v]) for v in f.vars]]
    operands.append([Ellipsis] + [_LETTERS.index(names[v]) for v in out_vars])
    return _Factor(tuple(out_vars), np.einsum(*operands, optimize=len(factors) > 2))


def _plan(factors: list[_Factor], cards: dict, keep: set) -> tuple[list, int]:
    """Greedy elimination order and its largest intermediate factor size.

    Both min-weight and weighted min-fill orders are tried; the narrower wins.
    """
    best = None
    for heuristic in ("weight", "fill"):
        order, width = _greedy_order(factors, cards, keep, heuristic)
        if best is None or width < best[1]:
            best = (order, width)
    return best


def _greedy_order(factors, cards, keep, heuristic):
    adj: dict = {}
    for f in factors:
        for v in f.vars:
            adj.setdefault(v, set()).update(w for w in f.vars if w != v)
    order, width = [], 1
    remaining = {v for v in adj if v not in keep}

    def weight(v):
        w = cards[v]
        for u in adj[v]:
            w *= cards[u]
        return w

    def fill(v):
        nb = sorted(adj[v], key=str)
        return sum(cards[a] * cards[b] for i, a in enumerate(nb) for b in nb[i + 1:]
                   if b not in adj[a])

    score = weight if heuristic == "weight" else (lambda v: (fill(v), weight(v)))
    while remaining:
        v = min(remaining, key=lambda x: (score(x), str(x)))
        width = max(width, weight(v))
        nbrs = adj.pop(v)
        for u in nbrs:
            adj[u].discard(v)
            adj[u].update(w for w in nbrs if w != u)
        remaining.discard(v)
        order.append(v)
    return order, width


def _eliminate(factors: list[_Factor], order: list) -> list[_Factor]:
    for v in order:
        touching = [f for f in factors if v in f.vars]
        if not touching:
            continue
        rest = [f for f in factors if v not in f.vars]
        out_vars = []
        for f in touching:
            for w in f.vars:
                if w != v and w not in out_vars:
                    out_vars.append(w)
        rest.append(_einsum(touching, out_vars))
        factors = rest
    return factors


MAX_FACTOR_SIZE = 20_000_000
# entries x trials held at once during batched elimination
_BATCH_BUDGET = 40_000_000


def posterior(net: BayesNet, evidence: Mapping[str, int], query: str,
              max_factor_size: int = MAX_FACTOR_SIZE, lw_samples: int = 100_000,
              seed: int = 0) -> np.ndarray:
    """Posterior P(query | evidence) as an array of shape (batch, states)."""
    if query not in net:
        raise KeyError(f"query node {query!r} not in net")
    for k, s in evidence.items():
        if k not in net:
            raise KeyError(f"evidence node {k!r} not in net")
        if not 0 <= s < net.card(k):
            raise ValueError(f"evidence {k}={s} outside state space 0..{net.s_max[k]}")
    if query in evidence:
        out = np.zeros((net.batch, net.card(query)))
        out[:, evidence[query]] = 1.0
        # still verify evidence is possible
        posterior(net, {k: v for k, v in evidence.items() if k != query}, query,
                  max_factor_size, lw_samples, seed)
        return out

    relevant = net.ancestors([query, *evidence])
    factors = []
    cards = {}
    for nid in net.nodes:
        if nid not in relevant:
            continue
        for f in _node_factors(net, net.nodes[nid]):
            for v, c in zip(f.vars, f.table.shape[1:]):
                cards[v] = c
            factors.append(_reduce(f, evidence))
    order, width = _plan(factors, cards, {query})
    if width > max_factor_size:
        return likelihood_weighting(net, evidence, query, lw_samples, seed)
    chunk = max(1, _BATCH_BUDGET // max(width, 1))
    parts = []
    for start in range(0, net.batch, chunk):
        sl = slice(start, start + chunk)
        part = [_Factor(f.vars, f.table[sl] if f.table.shape[0] > 1 else f.table) for f in factors]
        joint = _einsum(_eliminate(part, order), [query]).table
        n = min(chunk, net.batch - start)
        parts.append(np.broadcast_to(joint, (n, cards[query])))
    joint = np.concatenate(parts, axis=0)
    z = joint.sum(axis=1)
    if np.any(z <= 1e-300):
        raise InconsistentEvidenceError(f"evidence {dict(evidence)} has zero probability")
    return joint / z[:, None]


def infer(net: BayesNet, evidence: Mapping[str, int], query: str, **kw) -> Belief:
    """Exact posterior belief of ``query`` given ``evidence``."""
    probs = posterior(net, evidence, query, **kw)
    return Belief(query, probs[0] if net.batch == 1 else probs)


def delivery_belief(net: BayesNet, src: str, dst: str) -> Prob:
    """P(dst receives | src transmits)."""
    if src not in net:
        raise KeyError(f"source {src!r} not in net")
    if net.nodes[src].parents:
        raise ValueError(f"source {src!r} is not a root of the net")
    if dst not in net:
        return 0.0 if net.batch == 1 else np.zeros(net.batch)
    probs = posterior(net, {src: 1}, dst)
    p = 1.0 - probs[:, 0]
    return float(p[0]) if net.batch == 1 else p


# --------------------------------------------------------------------------
# Monte-Carlo fallback


def _sample_gate(rng, states: list[np.ndarray], qs, integer: bool, batch_idx: int) -> np.ndarray:
    n = states[0].shape[0] if states else 0
    total = np.zeros(n, dtype=np.int64)
    for s, q in zip(states, qs):
        qv = np.asarray(q, dtype=float)
        qv = qv if qv.ndim == 0 else qv[batch_idx]
        passed = rng.random(n) >= qv
        total += np.where(passed, s if integer else (s > 0), 0)
    return total if integer else np.minimum(total, 1)


def _gate_prob(states: list[np.ndarray], qs, integer: bool, batch_idx: int, target: int) -> np.ndarray:
    n = states[0].shape[0]
    dist = np.zeros((n, target + 2))
    dist[:, 0] = 1.0
    for s, q in zip(states, qs):
        qv = np.asarray(q, dtype=float)
        qv = float(qv if qv.ndim == 0 else qv[batch_idx])
        contrib = s if integer else (s > 0).astype(np.int64)
        new = qv * dist
        for k in range(dist.shape[1]):
            dest = k + contrib if integer else np.minimum(k + contrib, 1)
            dest = np.minimum(dest, dist.shape[1] - 1)
            np.add.at(new, (np.arange(n), dest), (1 - qv) * dist[:, k])
        dist = new
    return dist[:, target]


def likelihood_weighting(net: BayesNet, evidence: Mapping[str, int], query: str,
                         n_samples: int = 100_000, seed: int = 0) -> np.ndarray:
    """Approximate posterior by likelihood-weighted forward sampling."""
    rng = np.random.default_rng(seed)
    out = np.zeros((net.batch, net.card(query)))
    for b in range(net.batch):
        vals: dict[str, np.ndarray] = {}
        w = np.ones(n_samples)
        for node in net.nodes.values():
            par = [vals[p] for p in node.parents]
            integer = isinstance(node.cpd, NoisyIntAdd)
            if isinstance(node.cpd, RootPrior):
                pv = np.asarray(node.cpd.p_active, dtype=float)
                pv = float(pv if pv.ndim == 0 else pv[b])
                if node.id in evidence:
                    e = evidence[node.id]
                    vals[node.id] = np.full(n_samples, e)
                    w *= pv if e == 1 else 1 - pv
                else:
                    vals[node.id] = (rng.random(n_samples) < pv).astype(np.int64)
                continue
            if not par:
                vals[node.id] = np.zeros(n_samples, dtype=np.int64)
                if evidence.get(node.id, 0) != 0:
                    w *= 0.0
                continue
            if node.id in evidence:
                e = evidence[node.id]
                w *= _gate_prob(par, node.cpd.inhibitions, integer, b, e)
                vals[node.id] = np.full(n_samples, e)
            else:
                vals[node.id] = _sample_gate(rng, par, node.cpd.inhibitions, integer, b)
        if w.sum() <= 0:
            raise InconsistentEvidenceError(f"evidence {dict(evidence)} has zero probability")
        out[b] = np.bincount(vals[query], weights=w, minlength=net.card(query))[: net.card(query)]
        out[b] /= out[b].sum()
    return out
