"""Command-line entry point: ``qgeo <command> [--config run.json] [flags]``.

Commands: features, score, evaluate, walkforward, validate, overlay.
Exit codes: 0 success, 1 input error, 2 numerical failure, 3 a validation
check failed.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import BASELINES, BaselineConfig
from .crises import crisis_ranges, load_crises
from .errors import InputError, NumericalError
from .evaluation import (
    HPO_GRID,
    WalkForwardReport,
    align_scores,
    crisis_separability,
    null_models,
    overlay_backtest,
    walk_forward,
)
from .features import load_ohlcv
from .observables import CHANNELS, DEFAULT_CONFIGS, ChannelConfig
from .pipeline import PanelData, detector_name, score_detector
from .plots import write_svg
from .scoring import ScoreSeries
from .synthetic import planted_panel
from .validation import validate_all

log = logging.getLogger("qgeo_regime")

OUTPUT_ENV = "QGEO_OUTPUT_DIR"

DEFAULTS = {
    "data": None,  # {"SPY": "spy.csv", "DIA": "dia.csv"}
    "synthetic": None,  # planted_panel keyword arguments, used when data is null
    "min_dates": 300,
    "channels": list(CHANNELS),
    "baselines": list(BASELINES),
    "crises": None,  # JSON path; null = bundled table
    "include_pre2000": False,
    "external_scores": {},
    "fit_rows": 504,
    "seed": 42,
    "evaluation": {
        "B": 10000,
        "n_perm": 5000,
        "workers": 1,
        "null_draws": 0,
        "strategy": ["fixed", "far", "adaptive"],
        "start_year": 2005,
        "end_year": None,
        "hpo": False,
        "refit": "monthly",
        "far_alpha": 2.0,
        "tau": 2.0,
    },
    "overlay": {"method": "rolling_vol_z", "tau": 2.0, "cooldown": 60},
    "validate": {"qfi_points": 500, "bound_points": 1500, "gap_steps": 5000},
    "plots": True,
    "output_dir": "qgeo_out",
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("data", "external_scores"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    """Resolved run settings; see README for the JSON schema."""

    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        doc = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise InputError(f"{path}: config file not found")
            try:
                doc = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}: invalid JSON ({exc})") from None
            base = path.parent
            if isinstance(doc.get("data"), dict):
                doc["data"] = {k: str(base / v) for k, v in doc["data"].items()}
            if doc.get("crises"):
                doc["crises"] = str(base / doc["crises"])
            if isinstance(doc.get("external_scores"), dict):
                doc["external_scores"] = {k: str(base / v) for k, v in doc["external_scores"].items()}
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        raw = _merge(DEFAULTS, doc)
        if os.environ.get(OUTPUT_ENV):
            raw["output_dir"] = os.environ[OUTPUT_ENV]
        raw = _merge(raw, overrides or {})
        cfg = cls(raw)
        cfg.check()
        return cfg

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])

    def check(self) -> None:
        data = self.raw["data"]
        if data is not None:
            if not isinstance(data, dict) or len(data) < 2:
                raise InputError("'data' must map at least two asset names to CSV paths")
            for name, p in data.items():
                if not Path(p).exists():
                    raise InputError(f"{p}: data file for {name} not found")
        for name, p in self.raw["external_scores"].items():
            if not Path(p).exists():
                raise InputError(f"{p}: external score file for {name} not found")
        self.channel_configs()
        self.baseline_configs()

    def channel_configs(self) -> list[ChannelConfig]:
        out = []
        for item in self.raw["channels"]:
            if isinstance(item, str):
                item = {"channel": item}
            item = dict(item)
            ch = item.pop("channel", None)
            if ch not in DEFAULT_CONFIGS:
                raise InputError(f"unknown channel {ch!r}")
            for k in ("pair", "bipartition"):
                if item.get(k) is not None:
                    item[k] = tuple(item[k])
            item.setdefault("seed", self.raw["seed"])
            try:
                out.append(DEFAULT_CONFIGS[ch].with_(**item))
            except TypeError as exc:
                raise InputError(f"channel {ch}: {exc}") from None
        return out

    def baseline_configs(self) -> list[BaselineConfig]:
        out = []
        for item in self.raw["baselines"]:
            if isinstance(item, str):
                item = {"method": item}
            try:
                out.append(BaselineConfig(**item))
            except TypeError as exc:
                raise InputError(f"baseline {item}: {exc}") from None
        return out

    def crises(self):
        since = None if self.raw["include_pre2000"] else "2000-01-01"
        if self.raw["crises"] is None and self.raw["data"] is None:
            return None  # synthetic run: planted windows
        return load_crises(self.raw["crises"], since=since)


@dataclass
class Context:
    cfg: RunConfig
    data: PanelData
    panel: object
    crises: list

    @classmethod
    def build(cls, cfg: RunConfig) -> "Context":
        if cfg["data"] is not None:
            panel = load_ohlcv(cfg["data"], min_dates=cfg["min_dates"])
            crises = cfg.crises()
        else:
            planted = planted_panel(**(cfg["synthetic"] or {}))
            panel = planted.panel
            crises = cfg.crises() or planted.crises
        return cls(cfg, PanelData.from_panel(panel), panel, crises)

    def fit_cutoff(self) -> int:
        return min(self.data.features.valid_from + self.cfg["fit_rows"], len(self.data)) - 1


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _all_scores(ctx: Context) -> dict[str, ScoreSeries]:
    cut = ctx.fit_cutoff()
    out = {}
    for det in ctx.cfg.channel_configs() + ctx.cfg.baseline_configs():
        out[detector_name(det)] = score_detector(ctx.data, det, cut)
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_features(ctx: Context) -> dict:
    out = ctx.cfg.output_dir / "features"
    ctx.data.raw.to_csv(out / "raw_features.csv")
    ctx.data.features.to_csv(out / "features.csv")
    meta = {
        "assets": ctx.panel.assets,
        "rows": len(ctx.data),
        "first_date": str(ctx.data.dates[0]),
        "last_date": str(ctx.data.dates[-1]),
        "raw_columns": ctx.data.raw.columns,
        "raw_valid_from": ctx.data.raw.valid_from,
        "columns": ctx.data.features.columns,
        "valid_from": ctx.data.features.valid_from,
    }
    _write_json(out / "features.json", meta)
    return meta


def cmd_score(ctx: Context) -> dict:
    out = ctx.cfg.output_dir / "scores"
    scores = _all_scores(ctx)
    ranges = crisis_ranges(ctx.data.dates, ctx.crises)
    manifest = {"fit_through": str(ctx.data.dates[ctx.fit_cutoff()]), "series": {}}
    for name, sc in scores.items():
        sc.to_csv(out / f"{name}.csv", ctx.data.dates)
        if ctx.cfg["plots"]:
            write_svg(out / "plots" / f"{name}.svg", sc.z, ranges, title=f"{name} z-score")
        manifest["series"][name] = {"w": sc.w, "m": sc.m, "defined": int(np.sum(np.isfinite(sc.z)))}
    _write_json(out / "scores.json", manifest)
    return manifest


def _external(ctx: Context) -> dict:
    ext = {}
    for name, p in ctx.cfg["external_scores"].items():
        sc, dates = ScoreSeries.from_csv(p, name)
        ext[name] = (dates, sc.z)
    return ext


def cmd_evaluate(ctx: Context) -> dict:
    ev = ctx.cfg["evaluation"]
    out = ctx.cfg.output_dir / "evaluation"
    report = crisis_separability(
        ctx.data,
        ctx.cfg.channel_configs(),
        ctx.cfg.baseline_configs(),
        ctx.crises,
        external=_external(ctx),
        B=ev["B"],
        n_perm=ev["n_perm"],
        seed=ctx.cfg["seed"],
        workers=ev["workers"],
    )
    if ev["null_draws"]:
        ranges = crisis_ranges(ctx.data.dates, ctx.crises)
        scores = _all_scores(ctx)
        for name, (dates, z) in _external(ctx).items():
            scores[name] = ScoreSeries(name, z, z, align_scores(ctx.data.dates, dates, z), 1, 0)
        for name, sc in scores.items():
            report.null[name] = null_models(sc.z, ranges, ev["null_draws"], ctx.cfg["seed"]).to_dict()
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    return report.to_dict()["summary"]


def cmd_walkforward(ctx: Context) -> dict:
    ev = ctx.cfg["evaluation"]
    strategies = ev["strategy"] if isinstance(ev["strategy"], list) else [ev["strategy"]]
    dets = ctx.cfg.channel_configs() + ctx.cfg.baseline_configs()
    results = []
    for strat in strategies:
        rep = walk_forward(
            ctx.data,
            dets,
            ctx.crises,
            strategy=strat,
            start_year=ev["start_year"],
            end_year=ev["end_year"],
            hpo=HPO_GRID if ev["hpo"] else None,
            tau=ev["tau"],
            far_alpha=ev["far_alpha"],
            refit=ev["refit"],
        )
        results += rep.results
    full = WalkForwardReport(results)
    _write_json(ctx.cfg.output_dir / "walkforward" / "walkforward.json", full.to_dict())
    return full.summary()


def cmd_validate(cfg: RunConfig) -> dict:
    v = cfg["validate"]
    res = validate_all(cfg["seed"], v["qfi_points"], v["bound_points"], v["gap_steps"])
    _write_json(cfg.output_dir / "validate" / "validation.json", res)
    return res


def cmd_overlay(ctx: Context) -> dict:
    ov = ctx.cfg["overlay"]
    scores = _all_scores(ctx)
    for name, (dates, z) in _external(ctx).items():
        scores[name] = ScoreSeries(name, z, z, align_scores(ctx.data.dates, dates, z), 1, 0)
    if ov["method"] not in scores:
        raise InputError(f"overlay method {ov['method']!r} is not an enabled channel, baseline or import")
    prices = ctx.panel.adj_close(ctx.panel.assets[0])
    z = scores[ov["method"]].z
    res = overlay_backtest(prices, z, ov["tau"], ov["cooldown"])
    bh = overlay_backtest(prices, np.full(len(prices), -np.inf), ov["tau"], ov["cooldown"])
    doc = {"asset": ctx.panel.assets[0], "method": ov["method"], "tau": ov["tau"], "cooldown": ov["cooldown"],
           "overlay": res.to_dict(), "buy_and_hold": bh.to_dict()}  # fmt: skip
    _write_json(ctx.cfg.output_dir / "overlay" / "overlay.json", doc)
    return doc


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qgeo", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("features", "score", "evaluate", "walkforward", "validate", "overlay"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--output-dir", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
        p.add_argument("--data", nargs="+", metavar="NAME=PATH", help="per-asset OHLCV CSVs")
        p.add_argument("--crises", help="crisis windows JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--channels", help="comma-separated channel list ('' for none)")
        p.add_argument("--baselines", help="comma-separated baseline list ('' for none)")
        p.add_argument("--min-dates", type=int)
        p.add_argument("--no-plots", action="store_true")
        if name in ("evaluate", "walkforward"):
            p.add_argument("--bootstrap", type=int, dest="B")
            p.add_argument("--n-perm", type=int)
            p.add_argument("--workers", type=int)
            p.add_argument("--null-draws", type=int)
            p.add_argument("--strategy", choices=("fixed", "far", "adaptive"), action="append")
            p.add_argument("--start-year", type=int)
            p.add_argument("--end-year", type=int)
            p.add_argument("--hpo", action="store_true", default=None)
            p.add_argument("--import-scores", nargs="+", metavar="NAME=PATH")
        if name == "overlay":
            p.add_argument("--method")
            p.add_argument("--tau", type=float)
            p.add_argument("--cooldown", type=int)
            p.add_argument("--import-scores", nargs="+", metavar="NAME=PATH")
    return ap


def _pairs(items) -> dict:
    out = {}
    for it in items:
        if "=" not in it:
            raise InputError(f"expected NAME=PATH, got {it!r}")
        k, v = it.split("=", 1)
        out[k] = v
    return out


def _overrides(args) -> dict:
    o: dict = {}
    if args.output_dir:
        o["output_dir"] = args.output_dir
    if args.data:
        o["data"] = _pairs(args.data)
    if args.crises:
        o["crises"] = args.crises
    if args.seed is not None:
        o["seed"] = args.seed
    if args.channels is not None:
        o["channels"] = [c for c in args.channels.split(",") if c]
    if args.baselines is not None:
        o["baselines"] = [c for c in args.baselines.split(",") if c]
    if args.min_dates is not None:
        o["min_dates"] = args.min_dates
    if args.no_plots:
        o["plots"] = False
    ev = {}
    for key in ("B", "n_perm", "workers", "null_draws", "strategy", "start_year", "end_year", "hpo"):
        val = getattr(args, key, None)
        if val is not None:
            ev[key] = val
    if ev:
        o["evaluation"] = ev
    if getattr(args, "import_scores", None):
        o["external_scores"] = _pairs(args.import_scores)
    ov = {k: getattr(args, k) for k in ("method", "tau", "cooldown") if getattr(args, k, None) is not None}
    if ov:
        o["overlay"] = ov
    return o


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config, _overrides(args))
        if args.command == "validate":
            res = cmd_validate(cfg)
            print(json.dumps({k: v["passed"] if isinstance(v, dict) else v for k, v in res.items()}, sort_keys=True))
            return 0 if res["passed"] else 3
        ctx = Context.build(cfg)
        cmd = {
            "features": cmd_features,
            "score": cmd_score,
            "evaluate": cmd_evaluate,
            "walkforward": cmd_walkforward,
            "overlay": cmd_overlay,
        }[args.command]
        res = cmd(ctx)
        log.info("%s", json.dumps(res, sort_keys=True, default=str)[:2000])
        print(f"{args.command}: wrote {cfg.output_dir}")
        return 0
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
