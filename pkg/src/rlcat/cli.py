"""Command-line entry point: ``rlcat {generate,train,evaluate,sweep,blackspots}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy
import yaml

import rlcat
from rlcat.config import ConfigError, ExperimentConfig, load_config, override_seed
from rlcat.harness import (
    EpisodeResult, baseline_curve, build_connectivity_map, comparison_row, detect_blackspots,
    evaluate, sweep_w, train,
)
from rlcat.predictor import TreeFileError
from rlcat.qlearn import QTable, QTableFormatError, load_qtable
from rlcat.schemes import ML_CAT, PERIODIC, RL_PCAT, RL_SCHEMES
from rlcat.trace import TraceError, write_trace

log = logging.getLogger("rlcat")

TX_HEADER = ("mno", "direction", "scheme", "t_start", "x", "y", "payload", "measured_rate", "aoi", "duration")


def _num(x: float) -> str:
    return np.format_float_positional(x, unique=True, trim="-")


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


class Run:
    """One subcommand invocation: resolves paths and records written files for the manifest."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.written: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, *parts: str) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_text(self, rel: str, text: str) -> Path:
        p = self.path(rel)
        p.write_text(text)
        self.written.append(rel)
        return p

    def write_json(self, rel: str, obj) -> Path:
        return self.write_text(rel, json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")

    def write_transmissions(self, rel: str, rows: list[tuple[str, str, EpisodeResult]]) -> Path:
        lines = [",".join(TX_HEADER)]
        for mno, direction, res in rows:
            for r in res.transmissions:
                lines.append(",".join((mno, direction, res.scheme, _num(r.t_start), _num(r.pos.x), _num(r.pos.y),
                                       _num(r.payload), _num(r.measured_rate), _num(r.aoi), _num(r.duration))))
        return self.write_text(rel, "\n".join(lines) + "\n")

    def finish(self, extra_seeds: list[int] | None = None) -> None:
        manifest = {
            "command": self.command,
            "config_sha256": self.cfg.digest(),
            "config": self.cfg.raw,
            "seed": self.cfg.seed,
            "seeds": extra_seeds or [self.cfg.seed],
            "versions": {"rlcat": rlcat.__version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__},
            "outputs": sorted(self.written),
        }
        p = self.path(f"manifest_{self.command}.json")
        p.write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n")


def _tag(mno: str, direction: str) -> str:
    return f"{mno}_{direction}"


def cmd_generate(run: Run, args) -> None:
    cfg = run.cfg
    for mno, direction in cfg.run_keys():
        train_traces, eval_traces = cfg.trace_set().build(cfg.profile(mno, direction), cfg.seed)
        for kind, traces in (("train", train_traces), ("eval", eval_traces)):
            for i, tr in enumerate(traces):
                run.write_text(f"traces/{_tag(mno, direction)}/{kind}_{i:03d}.csv", write_trace(tr))
    run.finish()


def _train_all(cfg: ExperimentConfig, mno: str, direction: str):
    settings = cfg.settings(mno, direction)
    train_traces, eval_traces = cfg.trace_set().build(settings.profile, cfg.seed)
    cmap = build_connectivity_map(train_traces, settings.map_cell_width)
    tables, curves = {}, {}
    for scheme in cfg.schemes:
        if scheme in RL_SCHEMES:
            q, curve = train(scheme, train_traces, cfg.epochs, cfg.seed, settings, cmap=cmap)
            q.meta.update({"scheme": scheme, "profile": f"{mno} {direction}"})
            tables[scheme], curves[scheme] = q, curve
    return settings, train_traces, eval_traces, cmap, tables, curves


def cmd_train(run: Run, args) -> None:
    cfg = run.cfg
    report = {}
    for mno, direction in cfg.run_keys():
        settings, train_traces, _, _, tables, curves = _train_all(cfg, mno, direction)
        entry = {}
        for scheme, q in tables.items():
            rel = f"qtables/{_tag(mno, direction)}_{scheme}.qtable"
            run.write_text(rel, _dump(q, settings))
            entry[scheme] = {"rates": curves[scheme].rates, "aois": curves[scheme].aois,
                             "violations": curves[scheme].violations, "qtable": rel, "entries": len(q)}
            log.info("%s %s: trailing-50 mean rate %.2f Mbit/s", _tag(mno, direction), scheme,
                     curves[scheme].window_mean(-50))
        for scheme in (PERIODIC, ML_CAT):
            c = baseline_curve(scheme, train_traces, cfg.epochs, cfg.seed, settings)
            entry[f"baseline:{scheme}"] = {"rates": c.rates, "aois": c.aois, "violations": c.violations}
        report[_tag(mno, direction)] = entry
    run.write_json("convergence.json", report)
    run.finish()


def _dump(q: QTable, settings) -> str:
    from rlcat.qlearn import dump_qtable
    return dump_qtable(q, settings.rl)


def _load_tables(paths: list[str], cfg: ExperimentConfig) -> dict[tuple[str, str, str], QTable]:
    tables = {}
    for path in paths:
        q = load_qtable(path)
        scheme, profile = q.meta.get("scheme"), q.meta.get("profile", "").split()
        if scheme not in RL_SCHEMES or len(profile) != 2:
            raise QTableFormatError(f"{path}: header lacks scheme/profile lines")
        # re-parse against the params of the matching run to enforce the hash check
        q = load_qtable(path, cfg.settings(*profile).rl)
        tables[(profile[0], profile[1], scheme)] = q
    return tables


def cmd_evaluate(run: Run, args) -> None:
    cfg = run.cfg
    given = _load_tables(args.qtable or [], cfg)
    rows, tx_rows = [], []
    for mno, direction in cfg.run_keys():
        settings = cfg.settings(mno, direction)
        train_traces, eval_traces = cfg.trace_set().build(settings.profile, cfg.seed)
        cmap = build_connectivity_map(train_traces, settings.map_cell_width)
        for scheme in cfg.schemes:
            q = None
            if scheme in RL_SCHEMES:
                q = given.get((mno, direction, scheme))
                saved = run.out / f"qtables/{_tag(mno, direction)}_{scheme}.qtable"
                if q is None and saved.exists():
                    q = load_qtable(saved, settings.rl)
                if q is None:
                    log.info("no Q-table for %s %s; training one", _tag(mno, direction), scheme)
                    q, _ = train(scheme, train_traces, cfg.epochs, cfg.seed, settings, cmap=cmap)
            res = evaluate(scheme, eval_traces, cfg.seed, settings, q=q,
                           cmap=cmap if scheme == RL_PCAT else None)
            rows.append(comparison_row(settings, res))
            tx_rows.append((mno, direction, res))
    run.write_transmissions("transmissions.csv", tx_rows)
    run.write_json("summary.json", {"comparison": rows})
    run.finish()


def cmd_sweep(run: Run, args) -> None:
    cfg = run.cfg
    sw = cfg.raw["sweep"]
    workers = args.workers or sw["workers"]
    report = {}
    for mno, direction in cfg.run_keys():
        table = sweep_w(sw["w_values"], cfg.settings(mno, direction), cfg.trace_set(), cfg.epochs,
                        sw["seeds"], scheme=sw["scheme"], workers=workers)
        report[_tag(mno, direction)] = table
    run.write_json("sweep.json", report)
    run.finish(list(sw["seeds"]))


def cmd_blackspots(run: Run, args) -> None:
    cfg = run.cfg
    bs = cfg.raw["blackspots"]
    report, tx_rows = {}, []
    for mno, direction in cfg.run_keys():
        settings, train_traces, eval_traces, cmap, tables, _ = (
            _train_all(cfg, mno, direction) if bs["scheme"] in RL_SCHEMES
            else (cfg.settings(mno, direction), None, None, None, {}, {}))
        if eval_traces is None:
            _, eval_traces = cfg.trace_set().build(settings.profile, cfg.seed)
        res = evaluate(bs["scheme"], eval_traces, cfg.seed, settings, q=tables.get(bs["scheme"]), cmap=cmap)
        tx_rows.append((mno, direction, res))
        report[_tag(mno, direction)] = detect_blackspots(res.transmissions, bs["cell_width"], bs["min_count"]).to_dict()
    run.write_transmissions("blackspot_transmissions.csv", tx_rows)
    run.write_json("blackspots.json", report)
    run.finish()


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "blackspots": cmd_blackspots}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlcat", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config layered over the preset")
        p.add_argument("--preset", default="reference")
        p.add_argument("--out", help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "evaluate":
            p.add_argument("--qtable", action="append", help="saved Q-table (repeatable)")
        if name == "sweep":
            p.add_argument("--workers", type=int, help="parallel worker processes")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.preset)
        if args.seed is not None:
            cfg = override_seed(cfg, args.seed)
        out = Path(args.out) if args.out else cfg.output_dir
        COMMANDS[args.command](Run(args.command, cfg, out), args)
    except (ConfigError, TraceError, QTableFormatError, TreeFileError, OSError, ValueError) as e:
        print(f"rlcat {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
