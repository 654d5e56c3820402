"""Command-line experiments: baseline characterization, detection, PLC and hybrid tables.

Exit codes: 0 clean run, 2 anomaly found (detect), 1 error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from . import anomaly, hybrid, plc
from .latency import latency_table, write_latency_csv
from .topology import (SCENARIO_BY_NUMBER, build_grid_mesh, detangle, get_scenario,
                       sample_link_uncertainty)

EXIT_OK, EXIT_ERROR, EXIT_ANOMALY = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: list = field(default_factory=lambda: [1])
    rows: int = 3
    cols: int = 4
    detangle: list = field(default_factory=list)
    trials: int = 1000
    seed: int | None = None
    threads: int = 1
    k_sigma: float = 3.0
    epoch_trials: int = anomaly.DEFAULT_EPOCH_TRIALS
    epochs: int = 1
    sensitivity_ms: float = anomaly.DEFAULT_SENSITIVITY_MS
    pdr_sensitivity: float = anomaly.DEFAULT_PDR_SENSITIVITY
    max_hops: int = 4
    k_fractions: dict = field(default_factory=lambda: dict(anomaly.DEFAULT_K_FRACTIONS))
    pdr_mode: str = "per-bit"
    q_mode: str = "gaussian"
    interference: float = 0.0
    plc_fixtures: list = field(default_factory=list)
    l_gw: float = 0.0
    pdr_plc: float = hybrid.PLC_LINK_PDR
    out: str = "out"

    def validate(self) -> "ExperimentConfig":
        if self.seed is None:
            raise ConfigError("a seed is required (--seed or \"seed\" in the config file)")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        for s in self.scenario:
            try:
                get_scenario(s)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols < 2:
            raise ConfigError(f"grid {self.rows}x{self.cols} is too small")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.epoch_trials < 1 or self.epochs < 1:
            raise ConfigError("epoch_trials and epochs must be >= 1")
        if self.k_sigma < 0:
            raise ConfigError("k_sigma must be non-negative")
        if self.pdr_mode not in ("packet", "per-bit"):
            raise ConfigError(f"pdr_mode must be 'packet' or 'per-bit', got {self.pdr_mode!r}")
        if self.q_mode not in ("gaussian", "erfc"):
            raise ConfigError(f"q_mode must be 'gaussian' or 'erfc', got {self.q_mode!r}")
        self.k_fractions = {int(k): float(v) for k, v in self.k_fractions.items()}
        if abs(sum(self.k_fractions.values()) - 1) > 1e-9:
            raise ConfigError(f"k_fractions must sum to 1, got {sum(self.k_fractions.values())}")
        topo = build_grid_mesh(self.rows, self.cols, self.scenario[0])
        for group in self.detangle:
            for node in group:
                if node not in topo:
                    raise ConfigError(f"--detangle names unknown node {node!r}")
                if node == topo.client:
                    raise ConfigError("the client node cannot be de-tangled")
        return self

    def canonical(self) -> str:
        d = asdict(self)
        d.pop("out")
        d.pop("threads")  # results do not depend on the thread count
        return json.dumps(d, sort_keys=True, default=str)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _parse_scenarios(text) -> list:
    if isinstance(text, list):
        return [str(x) for x in text]
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if parts == ["all"]:
        return [str(k) for k in SCENARIO_BY_NUMBER]
    return parts


def _parse_detangle(values) -> list:
    groups = []
    for v in values or []:
        if isinstance(v, list):
            groups.append(sorted(v))
        else:
            groups.append([p.strip() for p in v.split(",") if p.strip()])
    return groups


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from None
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    overrides = {
        "scenario": args.scenario, "detangle": args.detangle or None, "trials": args.trials,
        "seed": args.seed, "threads": args.threads, "out": args.out, "pdr_mode": args.pdr_mode,
    }
    for key, val in overrides.items():
        if val is not None:
            data[key] = val
    for key in ("k_sigma", "epoch_trials", "epochs", "q_mode", "interference"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if "scenario" in data:
        data["scenario"] = _parse_scenarios(data["scenario"])
    if "detangle" in data:
        data["detangle"] = _parse_detangle(data["detangle"])
    try:
        cfg = ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


# --------------------------------------------------------------------------
# output helpers


def _provenance(cfg: ExperimentConfig) -> str:
    return f"# motnet {__version__} config_sha256={cfg.digest()} seed={cfg.seed}\n"


def _write_csv(path: Path, cfg: ExperimentConfig, writer) -> None:
    buf = io.StringIO()
    buf.write(_provenance(cfg))
    writer(buf)
    path.write_text(buf.getvalue())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _finite(x: float):
    return None if math.isinf(x) or math.isnan(x) else x


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands


def cmd_characterize(cfg: ExperimentConfig) -> int:
    """Baseline profile per scenario, latency table per de-tangle case, scenario summary."""
    out = _outdir(cfg)
    summary = []
    for key in cfg.scenario:
        scen = get_scenario(key)
        topo = build_grid_mesh(cfg.rows, cfg.cols, scen)
        samples = sample_link_uncertainty(topo, cfg.trials, cfg.seed)
        profile = anomaly.characterize_baseline(topo, scen, k_sigma=cfg.k_sigma, seed=cfg.seed,
                                                epoch_trials=cfg.epoch_trials, samples=samples,
                                                threads=cfg.threads)
        profile.critical = anomaly.build_critical_node_map(
            topo, topo.servers, topo.client, samples, cfg.sensitivity_ms, cfg.pdr_sensitivity,
            profile=profile, threads=cfg.threads)
        _write_json(out / f"profile_{scen.name}.json", profile.to_dict())
        _write_csv(out / f"baseline_{scen.name}.csv", cfg, lambda fh: anomaly.write_profile_csv(profile, fh))

        # latency per source for the baseline and each de-tangled case, on paired draws
        columns = {"baseline": latency_table(topo, samples, topo.servers, topo.client, cfg.threads)}
        for group in cfg.detangle:
            cut = detangle(topo, group)
            rows = latency_table(cut, samples, [s for s in topo.servers if s not in group],
                                 topo.client, cfg.threads)
            columns["-".join(group)] = rows

        def write_cases(fh, columns=columns, topo=topo):
            w = csv.writer(fh, lineterminator="\n")
            names = list(columns)
            w.writerow(["source"] + [f"{n}_mean_ms" for n in names])
            for s in topo.servers:
                row = [s]
                for n in names:
                    hit = [r for r in columns[n] if r.src == s]
                    row.append("" if not hit else ("inf" if math.isinf(hit[0].mean) else f"{hit[0].mean:.6f}"))
                w.writerow(row)

        _write_csv(out / f"latency_cases_{scen.name}.csv", cfg, write_cases)
        base = profile.sources.get("S1")
        detangled = None
        if cfg.detangle:
            hit = [r for r in columns["-".join(cfg.detangle[0])] if r.src == "S1"]
            detangled = hit[0].mean if hit else None
        summary.append((scen.name, base.latency_mean if base else math.nan, detangled))

    def write_summary(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "baseline_mean_ms", "detangled_mean_ms"])
        for name, b, d in summary:
            w.writerow([name, f"{b:.6f}", "" if d is None else ("inf" if math.isinf(d) else f"{d:.6f}")])

    _write_csv(out / "scenario_latency.csv", cfg, write_summary)
    return EXIT_OK


def cmd_detect(cfg: ExperimentConfig, profile_path: str, observations: str | None,
               simulate: list | None) -> int:
    try:
        profile = anomaly.BaselineProfile.from_dict(json.loads(Path(profile_path).read_text()))
    except FileNotFoundError:
        raise ConfigError(f"profile {profile_path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"profile {profile_path} is not valid JSON: {exc}") from None
    if observations and simulate:
        raise ConfigError("give either --observations or --simulate-detangle, not both")
    if observations:
        with open(observations) as fh:
            obs = anomaly.read_observations_csv(fh)
    elif simulate is not None:
        if profile.topology is None:
            raise ConfigError("profile has no topology; cannot simulate")
        for node in simulate:
            if node not in profile.topology:
                raise ConfigError(f"--simulate-detangle names unknown node {node!r}")
        obs = anomaly.simulate_detangle(profile, simulate, cfg.seed, cfg.epochs, cfg.threads)
    else:
        raise ConfigError("detect needs --observations or --simulate-detangle")
    reports = anomaly.run_detection(profile, obs)
    out = _outdir(cfg)
    _write_json(out / "report.json", {
        "profile": Path(profile_path).name,
        "simulated_detangle": sorted(simulate) if simulate else None,
        "epochs": [r.to_dict() for r in reports],
        "anomaly": int(any(r.any for r in reports)),
    })
    _write_csv(out / "observations.csv", cfg, lambda fh: anomaly.write_observations_csv(obs, fh))
    return EXIT_ANOMALY if any(r.any for r in reports) else EXIT_OK


def cmd_plc(cfg: ExperimentConfig, files: list) -> int:
    paths = [Path(plc.FIXTURES.get(f, f)) for f in (files or cfg.plc_fixtures)]
    if not paths:
        raise ConfigError("plc needs at least one CFR file or fixture name "
                          f"({', '.join(sorted(plc.FIXTURES))})")
    results = {}
    for p in paths:
        if not p.exists():
            raise ConfigError(f"CFR file {p} not found")
        cfr = plc.read_cfr_csv(p)
        link = plc.analyze_link(cfr, interference=cfg.interference, q_mode=cfg.q_mode, pdr_mode=cfg.pdr_mode)
        results[p.stem] = {k: _finite(v) if isinstance(v, float) else v for k, v in link.to_dict().items()}
        results[p.stem]["points"] = cfr.n
        results[p.stem]["delta_f_hz"] = cfr.delta_f
        results[p.stem]["tap_spacing_s"] = 1.0 / (cfr.n * cfr.delta_f)
    _write_json(_outdir(cfg) / "plc_metrics.json", {"version": __version__, "pdr_mode": cfg.pdr_mode,
                                                    "q_mode": cfg.q_mode, "links": results})
    return EXIT_OK


def cmd_hybrid(cfg: ExperimentConfig) -> int:
    out = _outdir(cfg)
    pdr_rows = hybrid.pdr_table(pdr_plc=cfg.pdr_plc)
    lat_rows = hybrid.latency_table(l_gw=cfg.l_gw)
    _write_csv(out / "hybrid_pdr.csv", cfg, lambda fh: hybrid.write_pdr_csv(pdr_rows, fh))
    _write_csv(out / "hybrid_latency.csv", cfg, lambda fh: hybrid.write_latency_csv(lat_rows, fh))
    ratio = hybrid.scalability_ratio(l_gw=cfg.l_gw)
    _write_json(out / "hybrid_summary.json", {
        "scalability_ratio": ratio,
        "mesh_only_latency_ms": 10 * hybrid.MESH_UNIT_LATENCY["dense"],
        "one_unit_plus_plc_hop_ms": hybrid.hybrid_latency(hybrid.MESH_UNIT_LATENCY["dense"], cfg.l_gw,
                                                          hybrid.PLC_LATENCY["dense"]["resistive"][1], 0, 1, 1),
    })
    return EXIT_OK


def cmd_pdr(cfg: ExperimentConfig, src: str) -> int:
    rows = {}
    for key in cfg.scenario:
        scen = get_scenario(key)
        topo = build_grid_mesh(cfg.rows, cfg.cols, scen)
        if src not in topo:
            raise ConfigError(f"unknown source {src!r}")
        samples = sample_link_uncertainty(topo, cfg.trials, cfg.seed)
        res = anomaly.compute_pdr(topo, src, topo.client, samples, cfg.max_hops, cfg.k_fractions)
        rows[scen.name] = {"pdr": res.pdr, "per_hop": {str(k): v for k, v in res.per_hop.items()},
                           "path_counts": {str(k): v for k, v in res.path_counts.items()}}
    _write_json(_outdir(cfg) / f"pdr_{src}.json", {"source": src, "trials": cfg.trials, "scenarios": rows})
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="RNG seed (required here or in the config)")
    common.add_argument("--scenario", help="1, 2, 3, a comma list, or 'all'")
    common.add_argument("--detangle", action="append", metavar="NODES",
                        help="comma-separated nodes to separate; repeat for more cases")
    common.add_argument("--trials", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--pdr-mode", choices=["packet", "per-bit"])

    p = argparse.ArgumentParser(prog="motnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"motnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("characterize", parents=[common], help="baseline profile and latency tables")
    c.add_argument("--k-sigma", dest="k_sigma", type=float)
    c.add_argument("--epoch-trials", dest="epoch_trials", type=int)

    d = sub.add_parser("detect", parents=[common], help="run threshold detection against a profile")
    d.add_argument("--profile", required=True)
    d.add_argument("--observations", help="CSV with epoch,source,latency_ms,pdr")
    d.add_argument("--simulate-detangle", dest="simulate", metavar="NODES",
                   help="simulate separating these nodes ('' for a plain baseline replay)")
    d.add_argument("--epochs", type=int)

    pl = sub.add_parser("plc", parents=[common], help="PLC link metrics from CFR files")
    pl.add_argument("files", nargs="*", help="CFR CSV paths or fixture names")
    pl.add_argument("--q-mode", dest="q_mode", choices=["gaussian", "erfc"])
    pl.add_argument("--interference", type=float, help="interference PSD in W/Hz")

    sub.add_parser("hybrid", parents=[common], help="hybrid PDR and latency tables")

    pd = sub.add_parser("pdr", parents=[common], help="hop-group PDR for one source")
    pd.add_argument("--source", default="S1")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "characterize":
            return cmd_characterize(cfg)
        if args.command == "detect":
            simulate = None
            if args.simulate is not None:
                simulate = [n.strip() for n in args.simulate.split(",") if n.strip()]
            return cmd_detect(cfg, args.profile, args.observations, simulate)
        if args.command == "plc":
            return cmd_plc(cfg, args.files)
        if args.command == "hybrid":
            return cmd_hybrid(cfg)
        if args.command == "pdr":
            return cmd_pdr(cfg, args.source)
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"motnet {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
