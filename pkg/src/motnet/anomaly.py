"""Baseline characterization, threshold detection and localization of de-tangled meshes."""

from __future__ import annotations

import csv
import enum
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .bayes import build_delivery_bn, build_pathcount_bn, delivery_belief
from .latency import trial_latencies
from .topology import (MeshTopology, NodeId, SampleSet, Scenario, build_dag, detangle,
                       enumerate_ihop_paths, parity_groups, sample_link_uncertainty)

DEFAULT_K_FRACTIONS = {2: 1 / 3, 3: 1 / 3, 4: 1 / 3}
DEFAULT_EPOCH_TRIALS = 200
DEFAULT_SENSITIVITY_MS = 0.15
DEFAULT_PDR_SENSITIVITY = 0.05


class IncompleteObservationError(KeyError):
    pass


class BaselineError(ValueError):
    """Baseline mesh is not fit for characterization (e.g. a source is cut off)."""


class Trigger(enum.Enum):
    NONE = "none"
    LATENCY = "latency"
    PDR = "pdr"
    BOTH = "both"


class Severity(enum.IntEnum):
    NONE = 0
    MILD = 1
    SEVERE = 2
    DISCONNECTED = 3


# --------------------------------------------------------------------------
# PDR over hop groups


@dataclass(frozen=True)
class PdrResult:
    pdr: float
    per_hop: dict[int, float]
    path_counts: dict[int, int]


def compute_pdr(topology: MeshTopology, src: NodeId, dst: NodeId, samples: SampleSet,
                max_hops: int = 4, k_fractions: Mapping[int, float] | None = None) -> PdrResult:
    """Mean delivery belief of each i-hop path group, mixed by ``k_fractions``.

    Groups without any path get PDR 0.
    """
    k_fractions = DEFAULT_K_FRACTIONS if k_fractions is None else dict(k_fractions)
    total = sum(k_fractions.values())
    if abs(total - 1.0) > 1e-9 or any(k < 0 for k in k_fractions.values()):
        raise ValueError(f"hop fractions must be non-negative and sum to 1 (got {total})")
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    if any(i > max_hops or i < 1 for i, k in k_fractions.items() if k > 0):
        raise ValueError(f"hop fractions reference groups outside 1..{max_hops}")
    samples = SampleSet.from_samples(samples)
    per_hop, counts = {}, {}
    for i in range(1, max_hops + 1):
        group = enumerate_ihop_paths(topology, src, dst, i)
        counts[i] = len(group)
        if not group.paths:
            per_hop[i] = 0.0
            continue
        net = build_delivery_bn(group, samples)
        per_hop[i] = float(np.mean(delivery_belief(net, src, dst)))
    pdr = sum(k * per_hop.get(i, 0.0) for i, k in k_fractions.items())
    return PdrResult(pdr, per_hop, counts)


def trial_pdr(topology: MeshTopology, samples: SampleSet, sources: Iterable[NodeId],
              dst: NodeId) -> dict[NodeId, np.ndarray]:
    """Per-trial delivery belief of each source over its DAG towards ``dst``."""
    samples = SampleSet.from_samples(samples)
    out = {}
    for s in sources:
        dag = build_dag(topology, s, dst)
        if dag.empty:
            out[s] = np.zeros(len(samples))
            continue
        net = build_pathcount_bn(dag, samples, binary=True)
        out[s] = np.broadcast_to(np.asarray(delivery_belief(net, s, dst), dtype=float),
                                 (len(samples),)).copy()
    return out


def parity_group_pdr(topology: MeshTopology, samples: SampleSet, dst: NodeId | None = None) -> float:
    """Average of the odd- and even-indexed source groups' mean PDR."""
    dst = topology.client if dst is None else dst
    means = []
    for group in parity_groups(topology):
        if group:
            per = trial_pdr(topology, samples, group, dst)
            means.append(float(np.mean([v.mean() for v in per.values()])))
    if not means:
        raise ValueError("topology has no sources")
    return float(np.mean(means))


# --------------------------------------------------------------------------
# baseline


@dataclass(frozen=True)
class SourceStats:
    latency_mean: float
    latency_std: float
    pdr_mean: float
    pdr_std: float
    b_thl: float
    b_thp: float


@dataclass
class BaselineProfile:
    """Per-source baseline statistics and thresholds.

    Stds are per trial.  An observation averages ``epoch_trials`` trials, so
    thresholds sit ``k_sigma`` standard errors of that average from the mean.
    """

    sources: dict[NodeId, SourceStats]
    trials: int
    k_sigma: float
    epoch_trials: int
    scenario: Scenario | None
    seed: int
    topology: MeshTopology | None = None
    critical: "CriticalNodeMap | None" = None

    def epoch_std(self, src: NodeId) -> tuple[float, float]:
        s = self.sources[src]
        r = math.sqrt(self.epoch_trials)
        return s.latency_std / r, s.pdr_std / r

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "k_sigma": self.k_sigma,
            "epoch_trials": self.epoch_trials,
            "seed": self.seed,
            "scenario": self.scenario.to_dict() if self.scenario else None,
            "sources": {k: asdict(v) for k, v in self.sources.items()},
            "topology": self.topology.to_dict() if self.topology else None,
            "critical": self.critical.to_dict() if self.critical else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineProfile":
        try:
            sources = {k: SourceStats(**v) for k, v in d["sources"].items()}
            return cls(
                sources=sources,
                trials=int(d["trials"]),
                k_sigma=float(d["k_sigma"]),
                epoch_trials=int(d["epoch_trials"]),
                scenario=Scenario.from_dict(d["scenario"]) if d.get("scenario") else None,
                seed=int(d["seed"]),
                topology=MeshTopology.from_dict(d["topology"]) if d.get("topology") else None,
                critical=CriticalNodeMap.from_dict(d["critical"]) if d.get("critical") else None,
            )
        except KeyError as exc:
            raise ValueError(f"baseline profile missing field {exc.args[0]!r}") from None
        except TypeError as exc:
            raise ValueError(f"baseline profile has malformed source entry: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def characterize_baseline(topology: MeshTopology, scenario: Scenario | None = None, trials: int = 1000,
                          k_sigma: float = 3.0, seed: int = 0, epoch_trials: int = DEFAULT_EPOCH_TRIALS,
                          sources: Sequence[NodeId] | None = None, samples: SampleSet | None = None,
                          threads: int = 1) -> BaselineProfile:
    """Per-source latency and PDR statistics over ``trials`` link draws."""
    if k_sigma < 0:
        raise ValueError("k_sigma must be non-negative")
    if epoch_trials < 1:
        raise ValueError("epoch_trials must be >= 1")
    scenario = scenario or topology.scenario
    dst = topology.client
    sources = list(topology.servers if sources is None else sources)
    if samples is None:
        hop = scenario.hop_latency_ms if scenario else None
        samples = sample_link_uncertainty(topology, trials, seed, hop)
    trials = len(samples)
    lat = trial_latencies(topology, samples, sources, dst, threads)
    pdr = trial_pdr(topology, samples, sources, dst)
    stats = {}
    r = math.sqrt(epoch_trials)
    for s in sources:
        x = lat[s]
        if not np.all(np.isfinite(x)):
            frac = float(np.mean(~np.isfinite(x)))
            raise BaselineError(f"source {s} cannot reach {dst} in {frac:.1%} of baseline trials")
        lm, ls = float(x.mean()), _std(x)
        pm, ps = float(pdr[s].mean()), _std(pdr[s])
        stats[s] = SourceStats(lm, ls, pm, ps, lm + k_sigma * ls / r,
                               min(1.0, max(0.0, pm - k_sigma * ps / r)))
    return BaselineProfile(stats, trials, k_sigma, epoch_trials, scenario, seed, topology)


# --------------------------------------------------------------------------
# observations and detection


@dataclass(frozen=True)
class Observation:
    latency: dict[NodeId, float]
    pdr: dict[NodeId, float]
    epoch: int = 0

    def __post_init__(self):
        for s, p in self.pdr.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"pdr of {s} is {p}, outside [0, 1]")


def observe(topology: MeshTopology, samples: SampleSet, sources: Sequence[NodeId],
            epoch_trials: int = DEFAULT_EPOCH_TRIALS, dst: NodeId | None = None,
            first_epoch: int = 0, threads: int = 1) -> list[Observation]:
    """Average consecutive blocks of ``epoch_trials`` trials into observations.

    Sources absent from ``topology`` (separated nodes) deliver nothing:
    latency infinite, PDR 0.  Latency of an epoch is the mean over trials
    where the source reached ``dst``, or infinite if it never did.
    """
    dst = topology.client if dst is None else dst
    samples = SampleSet.from_samples(samples)
    n_epochs = len(samples) // epoch_trials
    if n_epochs < 1:
        raise ValueError(f"need at least {epoch_trials} samples for one epoch")
    used = n_epochs * epoch_trials
    lat = trial_latencies(topology, samples[:used], sources, dst, threads)
    pdr = trial_pdr(topology, samples[:used], sources, dst)
    lat_epochs = {}
    for s in sources:
        x = lat[s].reshape(n_epochs, epoch_trials)
        finite = np.isfinite(x)
        cnt = finite.sum(axis=1)
        total = np.where(finite, x, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            lat_epochs[s] = np.where(cnt > 0, total / np.maximum(cnt, 1), math.inf)
    pdr_epochs = {s: pdr[s].reshape(n_epochs, epoch_trials).mean(axis=1) for s in sources}
    return [
        Observation({s: float(lat_epochs[s][e]) for s in sources},
                    {s: float(min(1.0, max(0.0, pdr_epochs[s][e]))) for s in sources},
                    first_epoch + e)
        for e in range(n_epochs)
    ]


@dataclass(frozen=True)
class SourceVerdict:
    anom: int
    triggered_by: Trigger
    severity: Severity
    latency: float
    pdr: float


@dataclass
class AnomalyReport:
    verdicts: dict[NodeId, SourceVerdict]
    epoch: int = 0
    suspects: set = field(default_factory=set)

    @property
    def anomalous(self) -> list[NodeId]:
        return [s for s, v in self.verdicts.items() if v.anom]

    @property
    def any(self) -> bool:
        return any(v.anom for v in self.verdicts.values())

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "anomaly": int(self.any),
            "sources": {
                s: {"anom": v.anom, "triggered_by": v.triggered_by.value, "severity": v.severity.name.lower(),
                    "latency_ms": None if math.isinf(v.latency) else v.latency, "pdr": v.pdr}
                for s, v in self.verdicts.items()
            },
            "suspects": sorted(self.suspects, key=_node_key),
        }


def _node_key(v: str):
    return (0, 0) if v == "C" else (1, int(v[1:])) if v[1:].isdigit() else (2, v)


def severity_grade(latency: float, pdr: float, stats: SourceStats, latency_epoch_std: float,
                   pdr_epoch_std: float) -> Severity:
    """Grade how far an observation strays from its baseline thresholds.

    Severe once the latency excess is twice the threshold margin, or the PDR
    sits two standard errors under its threshold.
    """
    if math.isinf(latency):
        return Severity.DISCONNECTED
    margin = stats.b_thl - stats.latency_mean
    dev = latency - stats.latency_mean
    if (dev > 0 and dev >= 2 * margin) or (pdr < stats.pdr_mean and pdr <= stats.b_thp - 2 * pdr_epoch_std):
        return Severity.SEVERE
    if _past_latency(latency, stats) or _past_pdr(pdr, stats):
        return Severity.MILD
    return Severity.NONE


# With a zero baseline spread the threshold equals the mean; requiring a strict
# deviation keeps a replay of the exact baseline from alarming.
def _past_latency(latency: float, s: SourceStats) -> bool:
    return latency >= s.b_thl and latency > s.latency_mean


def _past_pdr(pdr: float, s: SourceStats) -> bool:
    return pdr <= s.b_thp and pdr < s.pdr_mean


def detect(profile: BaselineProfile, obs: Observation, evaluate_both: bool = False) -> AnomalyReport:
    """Per-source threshold check: latency first, PDR only if latency passed.

    ``evaluate_both`` evaluates both checks and reports ``Trigger.BOTH`` when
    both fire.
    """
    verdicts = {}
    for s, stats in profile.sources.items():
        if s not in obs.latency or s not in obs.pdr:
            raise IncompleteObservationError(f"observation has no entry for source {s}")
        lat, pdr = obs.latency[s], obs.pdr[s]
        hit_lat = _past_latency(lat, stats)
        if hit_lat and not evaluate_both:
            trig = Trigger.LATENCY
        else:
            hit_pdr = _past_pdr(pdr, stats)
            if hit_lat and hit_pdr:
                trig = Trigger.BOTH
            elif hit_lat:
                trig = Trigger.LATENCY
            elif hit_pdr:
                trig = Trigger.PDR
            else:
                trig = Trigger.NONE
        anom = int(trig is not Trigger.NONE)
        sev = severity_grade(lat, pdr, stats, *profile.epoch_std(s)) if anom else Severity.NONE
        verdicts[s] = SourceVerdict(anom, trig, sev, lat, pdr)
    return AnomalyReport(verdicts, obs.epoch)


# --------------------------------------------------------------------------
# critical nodes and localization


@dataclass
class CriticalNodeMap:
    dst: NodeId
    critical: dict[NodeId, set]
    sensitivity: float
    pdr_sensitivity: float = DEFAULT_PDR_SENSITIVITY

    def __getitem__(self, pair: tuple[NodeId, NodeId]) -> set:
        src, dst = pair
        if dst != self.dst:
            raise KeyError(pair)
        return self.critical.get(src, set())

    def relays(self) -> set:
        return set().union(*self.critical.values()) if self.critical else set()

    def to_dict(self) -> dict:
        return {
            "dst": self.dst,
            "sensitivity_ms": self.sensitivity,
            "pdr_sensitivity": self.pdr_sensitivity,
            "critical": {s: sorted(v, key=_node_key) for s, v in self.critical.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CriticalNodeMap":
        return cls(d["dst"], {s: set(v) for s, v in d["critical"].items()}, float(d["sensitivity_ms"]),
                   float(d.get("pdr_sensitivity", DEFAULT_PDR_SENSITIVITY)))


def build_critical_node_map(topology: MeshTopology, sources: Sequence[NodeId], dst: NodeId,
                            samples: SampleSet, sensitivity_delta: float = DEFAULT_SENSITIVITY_MS,
                            pdr_sensitivity: float = DEFAULT_PDR_SENSITIVITY,
                            profile: BaselineProfile | None = None, threads: int = 1) -> CriticalNodeMap:
    """Relays whose removal shifts a pair's mean latency or PDR past a sensitivity.

    Removal reuses the same link draws, so the comparison is paired.  Given a
    baseline ``profile``, each pair's sensitivities are raised to at least
    twice its detection margins, so every critical relay is one whose removal
    the detector can see.
    """
    if sensitivity_delta <= 0 or pdr_sensitivity <= 0:
        raise ValueError("sensitivities must be positive")
    samples = SampleSet.from_samples(samples)
    sources = list(sources)
    base = trial_latencies(topology, samples, sources, dst, threads)
    base_pdr = trial_pdr(topology, samples, sources, dst)
    base_mean, floor = {}, {}
    for s in sources:
        x = base[s]
        if not np.all(np.isfinite(x)):
            raise BaselineError(f"source {s} is not connected to {dst} in the baseline")
        base_mean[s] = (float(x.mean()), float(base_pdr[s].mean()))
        d_lat, d_pdr = sensitivity_delta, pdr_sensitivity
        if profile is not None and s in profile.sources:
            st = profile.sources[s]
            d_lat = max(d_lat, 2 * (st.b_thl - st.latency_mean))
            d_pdr = max(d_pdr, 2 * (st.pdr_mean - st.b_thp))
        floor[s] = (d_lat, d_pdr)
    crit: dict[NodeId, set] = {s: set() for s in sources}
    for r in topology.labels:
        if r == dst:
            continue
        rest = [s for s in sources if s != r]
        if not rest:
            continue
        cut_topo = detangle(topology, {r})
        cut = trial_latencies(cut_topo, samples, rest, dst, threads)
        cut_pdr = trial_pdr(cut_topo, samples, rest, dst)
        for s in rest:
            x = cut[s]
            finite = np.isfinite(x)
            lat0, pdr0 = base_mean[s]
            d_lat, d_pdr = floor[s]
            if not finite.any():
                crit[s].add(r)
            elif abs(float(x[finite].mean()) - lat0) >= d_lat:
                crit[s].add(r)
            elif abs(float(cut_pdr[s].mean()) - pdr0) >= d_pdr:
                crit[s].add(r)
    return CriticalNodeMap(dst, crit, sensitivity_delta, pdr_sensitivity)


def localize(report: AnomalyReport, cmap: CriticalNodeMap) -> set:
    """Relays critical to some anomalous pair and to no normal pair."""
    bad = [s for s, v in report.verdicts.items() if v.anom]
    good = [s for s, v in report.verdicts.items() if not v.anom]
    if not bad:
        return set()
    suspects = set().union(*(cmap.critical.get(s, set()) for s in bad))
    for s in good:
        suspects -= cmap.critical.get(s, set())
    suspects -= set(good)
    suspects.discard(cmap.dst)
    return suspects


def simulate_detangle(profile: BaselineProfile, removed: Iterable[NodeId], seed: int,
                      epochs: int = 1, threads: int = 1) -> list[Observation]:
    """Observations of the profiled mesh after separating ``removed`` nodes."""
    if profile.topology is None:
        raise ValueError("profile carries no topology to simulate on")
    base = profile.topology
    topo = detangle(base, set(removed))
    hop = profile.scenario.hop_latency_ms if profile.scenario else None
    samples = sample_link_uncertainty(base, epochs * profile.epoch_trials, seed, hop)
    return observe(topo, samples, list(profile.sources), profile.epoch_trials, base.client,
                   threads=threads)


def run_detection(profile: BaselineProfile, observations: Sequence[Observation],
                  cmap: CriticalNodeMap | None = None) -> list[AnomalyReport]:
    cmap = cmap or profile.critical
    reports = []
    for obs in observations:
        rep = detect(profile, obs)
        if cmap is not None:
            rep.suspects = localize(rep, cmap)
        reports.append(rep)
    return reports


# --------------------------------------------------------------------------
# files


def read_observations_csv(fh: TextIO) -> list[Observation]:
    """Rows of ``epoch,source,latency_ms,pdr``; '#' lines are comments."""
    rows = csv.reader(line for line in fh if not line.startswith("#"))
    header = next(rows, None)
    expected = ["epoch", "source", "latency_ms", "pdr"]
    if header is None or [h.strip() for h in header] != expected:
        raise ValueError(f"observation CSV header must be {','.join(expected)}, got {header}")
    lat: dict[int, dict] = defaultdict(dict)
    pdr: dict[int, dict] = defaultdict(dict)
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ValueError(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            e = int(row[0])
            lat[e][row[1].strip()] = float(row[2])
            pdr[e][row[1].strip()] = float(row[3])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return [Observation(lat[e], pdr[e], e) for e in sorted(lat)]


def write_observations_csv(observations: Sequence[Observation], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["epoch", "source", "latency_ms", "pdr"])
    for o in observations:
        for s in sorted(o.latency, key=_node_key):
            lat = o.latency[s]
            w.writerow([o.epoch, s, "inf" if math.isinf(lat) else f"{lat:.6f}", f"{o.pdr[s]:.6f}"])


def write_profile_csv(profile: BaselineProfile, fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["source", "latency_mean_ms", "latency_std_ms", "pdr_mean", "pdr_std", "b_thl_ms", "b_thp"])
    for s in sorted(profile.sources, key=_node_key):
        v = profile.sources[s]
        w.writerow([s] + [f"{x:.6f}" for x in (v.latency_mean, v.latency_std, v.pdr_mean, v.pdr_std,
                                                v.b_thl, v.b_thp)])
