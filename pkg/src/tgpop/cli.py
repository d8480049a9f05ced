"""Command-line entry point: ``tgpop <command> [options]``.

Every command reads its inputs, validates all parameters, computes, and only
then writes its outputs under ``--out`` (each file via write-then-rename).
A ``.config.json`` with the fully resolved parameters is written next to
the outputs (``<command>.config.json``, or named after the output file for
``gen-negatives`` and ``eval``).  Flags override values from ``--config``.

Exit codes: 0 success, 1 validation error, 2 runtime or I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .dynamics import GROUND_METRICS, MeasureConfig, w_long, w_short, window_pmfs
from .evaluation import (
    TIE_MODES,
    EdgeBankScorer,
    EvalReport,
    SaturationConfig,
    evaluate,
    evaluate_all,
    evaluate_dump,
    load_score_dump,
    saturation_report,
)
from .graphstore import (
    FormatConfig,
    SplitSpec,
    chronological_split,
    dataset_stats,
    load_edge_list,
    remap_ids,
    split_fingerprint,
    write_edge_list,
    write_id_map,
)
from .negatives import (
    gen_eval_negatives_blend,
    gen_eval_negatives_naive,
    gen_eval_negatives_topn,
    load_negatives,
    save_negatives,
)
from .poptrack import DEFAULT_LAMBDA_GRID, PopTrackScorer, grid_search_lambda, run_and_score, save_snapshot

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    """Bad flag or config value, detected before any compute."""


# --- output helpers ------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_atomic(path: str, writer: Callable[[str], None]) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_text(path: str, text: str) -> None:
    def w(tmp):
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    _write_atomic(path, w)


def _fmt(x: float) -> str:
    return repr(float(x))


def _vector_text(v: np.ndarray) -> str:
    return "".join(_fmt(x) + "\n" for x in v.tolist())


def _matrix_text(m: np.ndarray) -> str:
    return "".join(" ".join(_fmt(x) for x in row) + "\n" for row in m.tolist())


def _file_sha(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()[:16]


class Outputs:
    """Collects output files and writes them together once compute is done."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.pending: list[tuple[str, Callable[[str], None]]] = []

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def text(self, name: str, text: str) -> None:
        self.pending.append((name, lambda p, text=text: _write_text(p, text)))

    def custom(self, name: str, writer: Callable[[str], None]) -> None:
        self.pending.append((name, lambda p: _write_atomic(p, writer)))

    def flush(self) -> list[str]:
        os.makedirs(self.out_dir, exist_ok=True)
        for name, fn in self.pending:
            fn(self.path(name))
        return [n for n, _ in self.pending]


# --- argument parsing ------------------------------------------------------------

COMMON_DEFAULTS = {
    "out": "out",
    "threads": 1,
    "delimiter": ",",
    "header": "auto",
    "columns": "src,dst,t",
    "time_decimals": 0,
    "num_nodes": None,
    "name": None,
    "split_mode": "ratio",
    "train_frac": 0.70,
    "val_frac": 0.15,
    "train_end_t": None,
    "val_end_t": None,
}

COMMAND_DEFAULTS = {
    "ingest": {"remap": True},
    "stats": {},
    "measure": {"n_windows": 100, "ground": "both", "on": "full"},
    "poptrack": {"lam": None, "grid": None, "batch_size": 200, "split": "test", "negatives": None,
                 "val_negatives": None, "all": False, "per_edge": False, "snapshot": False},
    "gen-negatives": {"scheme": "naive", "split": "test", "q": 20, "hist_fraction": 0.5, "n": 20,
                      "lam": 0.96, "batch_size": 200, "backfill": False, "pool": 1000, "n_top": 20,
                      "n_hist": 5, "n_rand": 5, "seed": 0, "binary": False},
    "eval": {"model": "poptrack", "split": "test", "negatives": None, "all": False, "scores": None,
             "lam": 0.96, "batch_size": 200, "window": None, "ties": "mid", "per_edge": False},
    "saturation": {"scores": None, "negatives": None, "k_list": "50,100,1000",
                   "n_list": "5000,20000,100000", "threshold": 1.0, "epsilon": 0.0},
}

CONFIG_ALIASES = {"lambda": "lam", "config": None}


def _flag(p: argparse.ArgumentParser, *names: str, **kw) -> None:
    # every option defaults to None so that config values can show through
    if kw.get("action") == "store_true":
        kw["default"] = None
    else:
        kw.setdefault("default", None)
    p.add_argument(*names, **kw)


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    _flag(p, "--out", help="output directory (default: out)")
    _flag(p, "--config", help="JSON file of parameters; flags take precedence")
    _flag(p, "--threads", type=int, help="worker cap for parallel sections (default: 1)")
    if not data:
        return
    g = p.add_argument_group("dataset")
    _flag(g, "--data", help="edge-list file")
    _flag(g, "--name", help="dataset name (default: file stem)")
    _flag(g, "--delimiter")
    _flag(g, "--header", choices=["auto", "yes", "no"])
    _flag(g, "--columns", help="column order, e.g. t,src,dst")
    _flag(g, "--time-decimals", type=int, help="fixed-point digits in timestamps")
    _flag(g, "--num-nodes", type=int, help="override node count (>= max id + 1)")
    s = p.add_argument_group("split")
    _flag(s, "--split-mode", choices=["ratio", "boundary"])
    _flag(s, "--train-frac", type=float)
    _flag(s, "--val-frac", type=float)
    _flag(s, "--train-end-t", type=int)
    _flag(s, "--val-end-t", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tgpop", description="Popularity baselines and evaluation for temporal graphs.")
    ap.add_argument("--version", action="version", version=f"tgpop {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate an edge list and write its canonical form")
    _common(p)
    _flag(p, "--no-remap", dest="remap", action="store_const", const=False, help="keep original node ids")

    p = sub.add_parser("stats", help="dataset and split statistics")
    _common(p)

    p = sub.add_parser("measure", help="W_short / W_long dynamics measures")
    _common(p)
    _flag(p, "--n-windows", type=int, help="number of windows N (default: 100)")
    _flag(p, "--ground", choices=list(GROUND_METRICS) + ["both"], help="ground metric (default: both)")
    _flag(p, "--on", choices=["full", "train", "val", "test"], help="which part of the stream (default: full)")

    p = sub.add_parser("poptrack", help="run PopTrack, optionally grid-searching lambda on val")
    _common(p)
    _flag(p, "--lambda", dest="lam", type=float)
    _flag(p, "--grid", help="comma-separated lambdas, or 'default'")
    _flag(p, "--batch-size", type=int)
    _flag(p, "--split", choices=["val", "test"])
    _flag(p, "--negatives", help="negative set for the evaluated split")
    _flag(p, "--val-negatives", help="negative set for the validation split (grid search)")
    _flag(p, "--all", action="store_true", help="rank against all nodes (MRR_all)")
    _flag(p, "--per-edge", action="store_true", help="also write per-edge reciprocal ranks")
    _flag(p, "--snapshot", action="store_true", help="also write the final counter state")

    p = sub.add_parser("gen-negatives", help="generate a fixed negative sample set")
    _common(p)
    _flag(p, "--scheme", choices=["naive", "topn", "blend"])
    _flag(p, "--split", choices=["val", "test"])
    _flag(p, "--q", type=int, help="naive: negatives per edge (default: 20)")
    _flag(p, "--hist-fraction", type=float, help="naive: historical share (default: 0.5)")
    _flag(p, "--n", type=int, help="topn: list size (default: 20)")
    _flag(p, "--backfill", action="store_true", help="topn: take node n+1 when the positive is in the top n")
    _flag(p, "--lambda", dest="lam", type=float, help="topn/blend: decay factor (default: 0.96)")
    _flag(p, "--batch-size", type=int)
    _flag(p, "--pool", type=int, help="blend: popular pool size (default: 1000)")
    _flag(p, "--n-top", type=int)
    _flag(p, "--n-hist", type=int)
    _flag(p, "--n-rand", type=int)
    _flag(p, "--seed", type=int)
    _flag(p, "--binary", action="store_true", help="write the compact binary format")

    p = sub.add_parser("eval", help="evaluate a scorer against negatives or all nodes")
    _common(p)
    _flag(p, "--model", choices=["poptrack", "edgebank-inf", "edgebank-tw", "scores-file"])
    _flag(p, "--split", choices=["val", "test"])
    _flag(p, "--negatives")
    _flag(p, "--all", action="store_true")
    _flag(p, "--scores", help="score dump for --model scores-file")
    _flag(p, "--lambda", dest="lam", type=float)
    _flag(p, "--batch-size", type=int)
    _flag(p, "--window", type=int, help="edgebank-tw window (default: duration of the split)")
    _flag(p, "--ties", choices=list(TIE_MODES))
    _flag(p, "--per-edge", action="store_true")

    p = sub.add_parser("saturation", help="share of saturated scores among recently popular candidates")
    _common(p)
    _flag(p, "--scores")
    _flag(p, "--negatives", help="negative set matching a pos/neg score dump")
    _flag(p, "--k-list")
    _flag(p, "--n-list")
    _flag(p, "--threshold", type=float)
    _flag(p, "--epsilon", type=float)
    return ap


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit flags."""
    cmd = args.command
    cfg = dict(COMMON_DEFAULTS, data=None, **COMMAND_DEFAULTS[cmd])
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        if not isinstance(from_file, dict):
            raise UsageError("config file must hold a JSON object")
        for k, v in from_file.items():
            key = k.replace("-", "_")
            key = CONFIG_ALIASES.get(key, key)
            if key is None:
                continue
            if key not in cfg:
                raise UsageError(f"unknown config key {k!r} for {cmd}")
            cfg[key] = v
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        cfg[k] = v
    cfg["command"] = cmd
    return cfg


def _int_list(text, what: str) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        vals = [int(x) for x in text]
    else:
        try:
            vals = [int(x) for x in str(text).split(",") if x.strip()]
        except ValueError as e:
            raise UsageError(f"{what}: expected comma-separated integers") from e
    if not vals or min(vals) < 1:
        raise UsageError(f"{what}: need positive integers")
    return tuple(vals)


def _fmt_cfg(cfg: dict) -> FormatConfig:
    header = {"auto": "auto", "yes": True, "no": False, True: True, False: False}.get(cfg["header"])
    if header is None:
        raise UsageError("header must be auto, yes or no")
    cols = cfg["columns"]
    cols = tuple(cols) if isinstance(cols, (list, tuple)) else tuple(c.strip() for c in cols.split(","))
    return FormatConfig(cfg["delimiter"], header, cols, int(cfg["time_decimals"]), cfg["num_nodes"])


def _split_spec(cfg: dict) -> SplitSpec:
    if cfg["split_mode"] == "boundary":
        return SplitSpec.boundary(cfg["train_end_t"], cfg["val_end_t"])
    return SplitSpec("ratio", float(cfg["train_frac"]), float(cfg["val_frac"]))


def _check_positive(cfg: dict, *keys: str) -> None:
    for k in keys:
        if cfg[k] is not None and cfg[k] < 1:
            raise UsageError(f"{k.replace('_', '-')} must be >= 1")


def _need(cfg: dict, key: str) -> None:
    if not cfg.get(key):
        raise UsageError(f"--{key.replace('_', '-')} is required")


def _load(cfg: dict):
    _need(cfg, "data")
    fmt = _fmt_cfg(cfg)
    spec = _split_spec(cfg)
    ds = load_edge_list(cfg["data"], fmt, cfg["name"])
    cfg["inputs"] = {"data": {"path": cfg["data"], "sha256": _file_sha(cfg["data"])}}
    return ds, spec


# --- commands ------------------------------------------------------------------------

def cmd_ingest(cfg: dict, out: Outputs) -> dict:
    _need(cfg, "data")
    fmt = _fmt_cfg(cfg)
    ds = load_edge_list(cfg["data"], fmt, cfg["name"])
    cfg["inputs"] = {"data": {"path": cfg["data"], "sha256": _file_sha(cfg["data"])}}
    if cfg["remap"]:
        ds, id_map = remap_ids(ds)
    else:
        id_map = np.arange(ds.num_nodes)
    stats = dataset_stats(ds).as_dict()
    stats["fingerprint"] = split_fingerprint(ds, "full")
    out.custom("edges.csv", lambda p: write_edge_list(ds, p))
    out.custom("id_map.csv", lambda p: write_id_map(id_map, p))
    out.text("stats.json", _dumps(stats))
    return stats


def cmd_stats(cfg: dict, out: Outputs) -> dict:
    ds, spec = _load(cfg)
    sp = chronological_split(ds, spec)
    res = {name: dict(dataset_stats(sp[name]).as_dict(), fingerprint=split_fingerprint(sp[name], name))
           for name in ("full", "train", "val", "test")}
    out.text("stats.json", _dumps(res))
    return res


def cmd_measure(cfg: dict, out: Outputs) -> dict:
    grounds = list(GROUND_METRICS) if cfg["ground"] == "both" else [cfg["ground"]]
    if cfg["ground"] not in list(GROUND_METRICS) + ["both"]:
        raise UsageError(f"ground must be one of {GROUND_METRICS} or both")
    mcfgs = {g: MeasureConfig(int(cfg["n_windows"]), g) for g in grounds}
    ds, spec = _load(cfg)
    part = ds if cfg["on"] == "full" else chronological_split(ds, spec)[cfg["on"]]
    any_cfg = next(iter(mcfgs.values()))
    pmfs = window_pmfs(part, any_cfg)
    res = {"n_windows": any_cfg.n_windows, "samples_per_window": any_cfg.samples_per_window(len(part)),
           "num_edges": len(part), "on": cfg["on"], "ground": {}}
    for g, mc in mcfgs.items():
        ws, series = w_short(part, mc, pmfs)
        wl, matrix = w_long(part, mc, pmfs)
        res["ground"][g] = {"w_short": ws, "w_long": wl,
                            "series_file": f"w_short.{g}.txt", "matrix_file": f"w_long.{g}.txt"}
        out.text(f"w_short.{g}.txt", _vector_text(series))
        out.text(f"w_long.{g}.txt", _matrix_text(matrix))
    out.text("measure.json", _dumps(res))
    return res


def _report_files(out: Outputs, prefix: str, rep: EvalReport, per_edge: bool, extra: Optional[dict] = None) -> None:
    d = rep.to_dict()
    if extra:
        d.update(extra)
    out.text(f"{prefix}.report.json", _dumps(d))
    out.text(f"{prefix}.report.txt", rep.table() + "\n")
    if per_edge:
        rr = rep.per_edge_rr
        out.text(f"{prefix}.rr.txt", "".join(f"{i} {_fmt(v)}\n" for i, v in enumerate(rr.tolist())))


def _grid(cfg: dict) -> Optional[list[float]]:
    g = cfg["grid"]
    if g is None:
        return None
    if g == "default":
        return list(DEFAULT_LAMBDA_GRID)
    vals = g if isinstance(g, list) else g.split(",")
    try:
        return [float(x) for x in vals]
    except ValueError as e:
        raise UsageError("grid: expected comma-separated numbers or 'default'") from e


def cmd_poptrack(cfg: dict, out: Outputs) -> dict:
    grid = _grid(cfg)
    if (cfg["lam"] is None) == (grid is None):
        raise UsageError("give exactly one of --lambda or --grid")
    if cfg["lam"] is not None and not 0 < cfg["lam"] <= 1:
        raise UsageError("lambda must lie in (0, 1]")
    if grid is not None and any(not 0 < g <= 1 for g in grid):
        raise UsageError("grid values must lie in (0, 1]")
    _check_positive(cfg, "batch_size")
    if not cfg["all"]:
        _need(cfg, "negatives")
        if grid is not None:
            _need(cfg, "val_negatives")
    ds, spec = _load(cfg)
    sp = chronological_split(ds, spec)
    bs = int(cfg["batch_size"])
    neg = None if cfg["all"] else load_negatives(cfg["negatives"], sp[cfg["split"]], cfg["split"])
    extra = {}
    if grid is not None:
        val_neg = None if cfg["all"] else load_negatives(cfg["val_negatives"], sp.val, "val")
        gs = grid_search_lambda(sp, grid, bs, val_neg)
        lam = gs.best_lambda
        grid_rows = [{"lambda": g, "val_mrr": v} for g, v in sorted(gs.table.items())]
        out.text("poptrack.grid.json", _dumps({"best_lambda": lam, "table": grid_rows}))
        extra["grid_best_lambda"] = lam
    else:
        lam = float(cfg["lam"])
    rep = run_and_score(sp, lam, bs, neg, cfg["split"], keep_per_edge=cfg["per_edge"])
    extra.update({"lambda": lam, "batch_size": bs})
    _report_files(out, "poptrack", rep, cfg["per_edge"], extra)
    if cfg["snapshot"]:
        scorer = PopTrackScorer(ds.num_nodes, lam, bs)
        for _, batch in sp.stream(cfg["split"], bs):
            scorer.observe(batch)
        out.custom("poptrack.snapshot.txt", lambda p: save_snapshot(scorer.state, p))
    cfg["resolved_lambda"] = lam
    return dict(rep.to_dict(), **extra)


def negatives_file_name(cfg: dict) -> str:
    return f"negatives.{cfg['scheme']}.{cfg['split']}.{'bin' if cfg['binary'] else 'jsonl'}"


def cmd_gen_negatives(cfg: dict, out: Outputs) -> dict:
    scheme = cfg["scheme"]
    if scheme not in ("naive", "topn", "blend"):
        raise UsageError("scheme must be naive, topn or blend")
    _check_positive(cfg, "threads", "batch_size", "q", "n", "pool")
    if not 0 < cfg["lam"] <= 1:
        raise UsageError("lambda must lie in (0, 1]")
    ds, spec = _load(cfg)
    sp = chronological_split(ds, spec)
    split, threads = cfg["split"], int(cfg["threads"])
    if scheme == "naive":
        neg = gen_eval_negatives_naive(sp, split, q=int(cfg["q"]), hist_fraction=float(cfg["hist_fraction"]),
                                       seed=int(cfg["seed"]), threads=threads)
    elif scheme == "topn":
        neg = gen_eval_negatives_topn(sp, split, n=int(cfg["n"]), lam=float(cfg["lam"]),
                                      batch_size=int(cfg["batch_size"]), backfill=bool(cfg["backfill"]),
                                      threads=threads)
    else:
        neg = gen_eval_negatives_blend(sp, split, pool=int(cfg["pool"]), n_top=int(cfg["n_top"]),
                                       n_hist=int(cfg["n_hist"]), n_rand=int(cfg["n_rand"]), lam=float(cfg["lam"]),
                                       batch_size=int(cfg["batch_size"]), seed=int(cfg["seed"]), threads=threads)
    name = negatives_file_name(cfg)
    cfg["_config_name"] = name.rsplit(".", 1)[0] + ".config.json"
    binary = bool(cfg["binary"])
    out.pending.append((name, lambda p: save_negatives(neg, p, binary=binary)))
    return {"file": name, "scheme": scheme, "split": split, "num_edges": len(neg),
            "num_negatives_total": int(len(neg.ids)), "metric": neg.metric_name}


def cmd_eval(cfg: dict, out: Outputs) -> dict:
    model = cfg["model"]
    _check_positive(cfg, "batch_size", "window")
    if cfg["ties"] not in TIE_MODES:
        raise UsageError(f"ties must be one of {TIE_MODES}")
    if model == "scores-file":
        _need(cfg, "scores")
    elif cfg["all"] == bool(cfg["negatives"]):
        raise UsageError("give exactly one of --negatives or --all")
    if model == "poptrack" and not 0 < cfg["lam"] <= 1:
        raise UsageError("lambda must lie in (0, 1]")
    ds, spec = _load(cfg)
    sp = chronological_split(ds, spec)
    split, bs, ties = cfg["split"], int(cfg["batch_size"]), cfg["ties"]
    split_ds = sp[split]
    neg = load_negatives(cfg["negatives"], split_ds, split) if cfg["negatives"] else None
    extra: dict = {"model": model}
    cfg["_config_name"] = f"eval.{model}.config.json"
    if model == "scores-file":
        dump = load_score_dump(cfg["scores"], split_ds)
        cfg["inputs"]["scores"] = {"path": cfg["scores"], "sha256": _file_sha(cfg["scores"])}
        rep = evaluate_dump(dump, split_ds, neg, ties, cfg["per_edge"])
    else:
        if model == "poptrack":
            scorer = PopTrackScorer(ds.num_nodes, float(cfg["lam"]), bs)
            extra["lambda"] = float(cfg["lam"])
        elif model == "edgebank-inf":
            scorer = EdgeBankScorer("infinite", num_nodes=ds.num_nodes)
        else:
            window = cfg["window"]
            if window is None:
                window = max(1, int(split_ds.t[-1] - split_ds.t[0]))
            cfg["window"] = int(window)
            scorer = EdgeBankScorer("window", int(window), ds.num_nodes)
            extra["window"] = int(window)
        if neg is None:
            rep = evaluate_all(scorer, sp, split, bs, ties, cfg["per_edge"])
        else:
            rep = evaluate(scorer, sp, split, neg, bs, ties, cfg["per_edge"])
    _report_files(out, f"eval.{model}", rep, cfg["per_edge"], extra)
    return dict(rep.to_dict(), **extra)


def saturation_table(rep: dict, cfg: SaturationConfig) -> str:
    rows = [("K", "N", "saturated")]
    for n in cfg.n_list:
        for k in cfg.k_list:
            if (k, n) in rep:
                v = rep[(k, n)]
                rows.append((str(k), str(n), "N/A" if v is None else f"{v:.2f}%"))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    return "".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in rows)


def cmd_saturation(cfg: dict, out: Outputs) -> dict:
    _need(cfg, "scores")
    scfg = SaturationConfig(_int_list(cfg["k_list"], "k-list"), _int_list(cfg["n_list"], "n-list"),
                            float(cfg["threshold"]), float(cfg["epsilon"]))
    if cfg["epsilon"] < 0:
        raise UsageError("epsilon must be >= 0")
    if not scfg.pairs():
        raise UsageError("no (K, N) pair with K <= N")
    ds, spec = _load(cfg)
    sp = chronological_split(ds, spec)
    with open(cfg["scores"], "r", encoding="utf-8") as fh:
        split = json.loads(fh.readline()).get("split")
    if split not in ("train", "val", "test"):
        raise UsageError("score dump header must name its split")
    dump = load_score_dump(cfg["scores"], sp[split])
    cfg["inputs"]["scores"] = {"path": cfg["scores"], "sha256": _file_sha(cfg["scores"])}
    neg = load_negatives(cfg["negatives"], sp[split], split) if cfg["negatives"] else None
    rep = saturation_report(dump, sp, scfg, neg)
    rows = [{"K": k, "N": n, "percent": v} for (k, n), v in rep.items()]
    out.text("saturation.json", _dumps({"split": split, "threshold": scfg.threshold,
                                        "epsilon": scfg.epsilon, "rows": rows}))
    table = saturation_table(rep, scfg)
    out.text("saturation.txt", table)
    return {"rows": rows, "table": table}


COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "measure": cmd_measure,
    "poptrack": cmd_poptrack,
    "gen-negatives": cmd_gen_negatives,
    "eval": cmd_eval,
    "saturation": cmd_saturation,
}


def _summary(cmd: str, res: dict) -> str:
    if cmd == "saturation":
        return res["table"].rstrip("\n")
    if cmd in ("poptrack", "eval"):
        return f"{res['metric']} = {res['value']:.6f} ({res['split']}, {res['scorer']})"
    if cmd == "measure":
        return "\n".join(f"{g}: W_short={v['w_short']:.6g} W_long={v['w_long']:.6g}" for g, v in res["ground"].items())
    return json.dumps(res, sort_keys=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID
    try:
        cfg = resolve(args)
        _check_positive(cfg, "threads")
        out = Outputs(cfg["out"])
        res = COMMANDS[cfg["command"]](cfg, out)
        config_name = cfg.pop("_config_name", f"{cfg['command']}.config.json")
        provenance = {k: v for k, v in cfg.items() if k != "out"}
        provenance["version"] = __version__
        out.text(config_name, _dumps(provenance))
        out.flush()
    except ValueError as e:
        # bad flags, malformed data, misaligned artifacts, violated preconditions
        print(f"tgpop {args.command}: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError, MemoryError) as e:
        print(f"tgpop {args.command}: runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(_summary(cfg["command"], res))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
