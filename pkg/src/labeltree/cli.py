"""Command-line entry point: ``labeltree {synth,tree,classify,evaluate,sublabels}``.

Every run directory gets a ``metadata.json`` with the resolved configuration;
all other files depend only on the inputs and the configuration.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classify import DEFAULT_K, TreeDescender, embed_new_label
from .dataset import (
    DataError,
    Dataset,
    MissingColumnError,
    MissingFileError,
    NonNumericError,
    SyntheticSpec,
    apply_scaling,
    column_scaling,
    generate_synthetic,
    load_csv,
    parse_topology,
    standardize,
    write_csv,
)
from .evalgraph import (
    build_graph,
    confusion_to_csv,
    cross_validate_sweep,
    eflow_to_csv,
    error_flow,
    export_dot,
    summary,
)
from .hierarchy import LINKAGES, agglomerate, export_newick
from .ordering import (
    build_dominance_full,
    build_dominance_sparse,
    default_T,
    densify_transitive,
    dissim_to_csv,
    dissimilarity_from_dominance,
    dominance_to_csv,
    dominance_to_json,
)
from .sublabel import FineConfig, fine_pipeline

log = logging.getLogger("labeltree")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


# --- config file -------------------------------------------------------------

def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys may use - or _.
    Values are parsed as JSON when possible, else kept as bare strings."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            try:
                out[key] = json.loads(val)
            except json.JSONDecodeError:
                out[key] = val.strip("'\"")
    return out


# --- argument parsing --------------------------------------------------------

def _data_args(p):
    p.add_argument("--input", "-i", help="CSV with a header row")
    p.add_argument("--label-col")
    p.add_argument("--features", help="comma-separated feature columns (default: all others)")
    p.add_argument("--no-standardize", action="store_true", default=None,
                   help="use raw feature values in distance comparisons")
    p.add_argument("--seed", type=int)
    p.add_argument("--T", "-T", type=int, dest="T", help="samples per label triplet")
    p.add_argument("--linkage", choices=LINKAGES)
    p.add_argument("--triplet-fraction", type=float)
    p.add_argument("--densify", action="store_true", default=None,
                   help="apply the one-intermediate transitive fill-in")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", "-o", help="output directory")


def _descent_args(p):
    p.add_argument("--theta", action="append",
                   help="early-stop threshold in (0.5, 1]; repeat or comma-separate for a sweep")
    p.add_argument("--knn-k", type=int)


DEFAULTS = {
    "label_col": "label", "no_standardize": False, "seed": 0, "T": None, "linkage": "average",
    "triplet_fraction": 1.0, "densify": False, "threads": 1, "out": "out",
    "theta": [0.8], "knn_k": DEFAULT_K, "folds": 5, "min_edge": 0.0, "k_max": 12,
    "min_cluster_size": 25, "entry_budget": 1e8, "sparse_fraction": 0.1,
    "embed": False,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="labeltree", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"labeltree {__version__}")
    ap.add_argument("--config", help="key = value file; command-line flags take precedence")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic hierarchical Gaussian data set")
    p.add_argument("--topology", default="((0,1),(2,3))")
    p.add_argument("--separation", type=float, default=100.0)
    p.add_argument("--node-sep", action="append", default=[],
                   help="explicit separation for a subtree, e.g. '(0,1)=1.0'")
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", required=True)

    p = sub.add_parser("tree", help="dominance matrix, dissimilarity and label embedding tree")
    _data_args(p)
    p.add_argument("--h-json", action="store_true", help="also write H.json")

    p = sub.add_parser("classify", help="tree-descent (and optionally embedding) predictions")
    _data_args(p)
    _descent_args(p)
    p.add_argument("--batch", required=True, help="CSV of rows to classify")
    p.add_argument("--embed", action="store_true", default=None,
                   help="also embed the whole batch as a new label")

    p = sub.add_parser("evaluate", help="cross-validated error flow and predictive graph")
    _data_args(p)
    _descent_args(p)
    p.add_argument("--folds", type=int)
    p.add_argument("--min-edge", type=float)

    p = sub.add_parser("sublabels", help="fine-scale sublabel tree and error flow")
    _data_args(p)
    _descent_args(p)
    p.add_argument("--folds", type=int)
    p.add_argument("--min-edge", type=float)
    p.add_argument("--k-max", type=int)
    p.add_argument("--min-cluster-size", type=int)
    p.add_argument("--entry-budget", type=float)
    p.add_argument("--sparse-fraction", type=float)
    return ap


def resolve(args: argparse.Namespace) -> dict:
    """Defaults < config file < flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for k, v in vars(args).items():
        if v is not None:
            cfg[k] = v
    th = cfg.get("theta")
    if th is not None:
        vals = th if isinstance(th, list) else [th]
        flat = []
        for v in vals:
            flat.extend(float(x) for x in str(v).split(",") if x.strip())
        cfg["theta"] = flat
    _validate(cfg)
    return cfg


def _validate(c: dict) -> None:
    def need(ok, msg):
        if not ok:
            raise UsageError(msg)

    for th in c.get("theta", []):
        need(0.5 < th <= 1.0, f"--theta must lie in (0.5, 1], got {th}")
    need(c["knn_k"] >= 1, "--knn-k must be >= 1")
    need(c["folds"] >= 2, "--folds must be >= 2")
    need(c["T"] is None or c["T"] >= 1, "--T must be >= 1")
    need(0 < c["triplet_fraction"] <= 1, "--triplet-fraction must lie in (0, 1]")
    need(0 < c["sparse_fraction"] <= 1, "--sparse-fraction must lie in (0, 1]")
    need(c["k_max"] >= 2, "--k-max must be >= 2")
    need(c["min_cluster_size"] >= 1, "--min-cluster-size must be >= 1")
    need(c["min_edge"] >= 0, "--min-edge must be >= 0")
    need(c["threads"] >= 1, "--threads must be >= 1")
    need(c["linkage"] in LINKAGES, f"--linkage must be one of {LINKAGES}")


# --- helpers -----------------------------------------------------------------

def _load(cfg) -> tuple[Dataset, Dataset]:
    """(raw, working) datasets; working is standardized unless disabled."""
    if not cfg.get("input"):
        raise UsageError("--input is required")
    feats = cfg.get("features")
    if isinstance(feats, str):
        feats = [f.strip() for f in feats.split(",") if f.strip()]
    raw = load_csv(cfg["input"], cfg["label_col"], feats)
    work = raw if cfg["no_standardize"] else standardize(raw)
    return raw, work


def _outdir(cfg) -> Path:
    p = Path(cfg["out"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _dominance(d: Dataset, cfg):
    T = cfg["T"] if cfg["T"] is not None else default_T(d)
    if cfg["triplet_fraction"] < 1 or cfg["densify"]:
        H = build_dominance_sparse(d, T, cfg["triplet_fraction"], cfg["seed"], cfg["threads"])
        if cfg["densify"]:
            H = densify_transitive(H)
    else:
        H = build_dominance_full(d, T, cfg["seed"], cfg["threads"])
    return H


def _metadata(out: Path, command: str, cfg: dict, started: float, extra: dict | None = None):
    meta = {
        "tool": "labeltree",
        "version": __version__,
        "command": command,
        "config": {k: v for k, v in sorted(cfg.items()) if k not in ("verbose",)},
        "seed": cfg.get("seed"),
        "standardized": not cfg.get("no_standardize", False),
        "wall_clock_seconds": round(time.time() - started, 3),
        "finished_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        meta.update(extra)
    _write(out / "metadata.json", json.dumps(meta, indent=1, default=str) + "\n")


def _theta_tag(th: float) -> str:
    return f"theta{th:g}"


# --- commands ----------------------------------------------------------------

def cmd_synth(cfg) -> int:
    seps = {}
    for item in cfg.get("node_sep") or []:
        node, _, val = item.partition("=")
        seps[parse_topology(node)] = float(val)
    spec = SyntheticSpec(parse_topology(cfg["topology"]), cfg["separation"], cfg["std"],
                         cfg["points"], cfg["dim"], cfg["seed"], seps or None)
    d = generate_synthetic(spec)
    write_csv(d, cfg["output"])
    log.info("wrote %d rows to %s", d.n, cfg["output"])
    return EXIT_OK


def cmd_tree(cfg) -> int:
    started = time.time()
    _, d = _load(cfg)
    out = _outdir(cfg)
    H = _dominance(d, cfg)
    D = dissimilarity_from_dominance(H)
    t = agglomerate(D, cfg["linkage"])
    _write(out / "H.csv", dominance_to_csv(H))
    _write(out / "Dbar.csv", dissim_to_csv(D))
    _write(out / "tree.newick", export_newick(t) + "\n")
    _write(out / "tree.json", t.to_json() + "\n")
    if cfg.get("h_json"):
        _write(out / "H.json", dominance_to_json(H) + "\n")
    _metadata(out, "tree", cfg, started, {"T": H.T, "L": H.L})
    return EXIT_OK


def _read_batch(cfg, raw: Dataset) -> np.ndarray:
    path = cfg["batch"]
    if not os.path.isfile(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return np.zeros((0, raw.k))
    header = [h.strip() for h in rows[0]]
    missing = [f for f in raw.feature_names if f not in header]
    if missing:
        raise MissingColumnError(f"batch lacks feature column(s): {', '.join(missing)}")
    cols = [header.index(f) for f in raw.feature_names]
    X = []
    for r, row in enumerate(rows[1:], 1):
        if not any(c.strip() for c in row):
            continue
        vals = []
        for c in cols:
            try:
                vals.append(float(row[c]))
            except (ValueError, IndexError):
                raise NonNumericError(r, header[c], row[c] if c < len(row) else "") from None
        X.append(vals)
    return np.array(X, dtype=float).reshape(len(X), raw.k)


def cmd_classify(cfg) -> int:
    started = time.time()
    raw, d = _load(cfg)
    X = _read_batch(cfg, raw)
    if not cfg["no_standardize"]:
        X = apply_scaling(X, *column_scaling(raw))
    out = _outdir(cfg)
    H = _dominance(d, cfg)
    t = agglomerate(dissimilarity_from_dominance(H), cfg["linkage"])
    desc = TreeDescender(d, t, cfg["knn_k"])
    thetas = cfg["theta"]
    for th in thetas:
        preds = [ls.to_dict(d.label_names) for ls in desc.descend_batch(X, th)]
        name = "predictions.json" if len(thetas) == 1 else f"predictions_{_theta_tag(th)}.json"
        _write(out / name, json.dumps(preds, indent=1) + "\n")
    _write(out / "tree.newick", export_newick(t) + "\n")
    if cfg["embed"]:
        if len(X) == 0:
            raise DataError("--embed needs a non-empty batch")
        res = embed_new_label(H, d, X, H.T, cfg["seed"], cfg["linkage"], t)
        _write(out / "embedded.newick", export_newick(res.tree_new) + "\n")
        _write(out / "embedding.json", json.dumps({
            "predicted": res.predicted,
            "predicted_name": d.label_names[res.predicted],
            "branch_node": res.branch,
            "branch_labels": [d.label_names[i] for i in res.branch_labels],
            "scores": {d.label_names[a]: float(s) for a, s in enumerate(res.scores)},
        }, indent=1) + "\n")
    _metadata(out, "classify", cfg, started, {"n_rows": int(len(X))})
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    started = time.time()
    _, d = _load(cfg)
    out = _outdir(cfg)
    thetas = cfg["theta"]
    cms = cross_validate_sweep(d, cfg["folds"], thetas, cfg["knn_k"], cfg["T"], cfg["seed"],
                               linkage=cfg["linkage"], threads=cfg["threads"],
                               triplet_fraction=cfg["triplet_fraction"], densify=cfg["densify"])
    summaries = []
    for th, cm in zip(thetas, cms):
        ef = error_flow(cm)
        g = build_graph(ef, cfg["min_edge"])
        sfx = "" if len(thetas) == 1 else "_" + _theta_tag(th)
        _write(out / f"confusion{sfx}.csv", confusion_to_csv(cm))
        _write(out / f"eflow{sfx}.csv", eflow_to_csv(ef))
        _write(out / f"graph{sfx}.dot", export_dot(g))
        summaries.append(summary(cm))
    doc = summaries[0] if len(thetas) == 1 else {"sweep": summaries}
    if isinstance(doc, dict):
        doc["protocol"] = f"stratified {cfg['folds']}-fold cross-validation, seed {cfg['seed']}"
    _write(out / "summary.json", json.dumps(doc, indent=1) + "\n")
    _metadata(out, "evaluate", cfg, started)
    return EXIT_OK


def cmd_sublabels(cfg) -> int:
    started = time.time()
    _, d = _load(cfg)
    out = _outdir(cfg)
    fc = FineConfig(k_max=cfg["k_max"], min_cluster_size=cfg["min_cluster_size"],
                    seed=cfg["seed"], T=cfg["T"], theta=cfg["theta"][0], knn_k=cfg["knn_k"],
                    folds=cfg["folds"], linkage=cfg["linkage"], min_edge=cfg["min_edge"],
                    entry_budget=cfg["entry_budget"], sparse_fraction=cfg["sparse_fraction"],
                    threads=cfg["threads"])
    res = fine_pipeline(d, fc)
    _write(out / "sublabel_map.json", json.dumps(res.map.to_dict(d), indent=1) + "\n")
    rows = ["label,n_sublabels"] + [f"{d.label_names[a]},{k}"
                                    for a, k in enumerate(res.map.k_per_label)]
    _write(out / "sublabel_counts.csv", "\n".join(rows) + "\n")
    _write(out / "Dbar.csv", dissim_to_csv(dissimilarity_from_dominance(res.H)))
    _write(out / "tree.newick", export_newick(res.tree) + "\n")
    _write(out / "tree.json", res.tree.to_json() + "\n")
    _write(out / "confusion.csv", confusion_to_csv(res.confusion))
    _write(out / "eflow.csv", eflow_to_csv(res.eflow))
    _write(out / "graph.dot", export_dot(res.graph))
    _write(out / "summary.json", json.dumps(res.summary(), indent=1) + "\n")
    _metadata(out, "sublabels", cfg, started)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "tree": cmd_tree, "classify": cmd_classify,
            "evaluate": cmd_evaluate, "sublabels": cmd_sublabels}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            cfg = vars(args)
        else:
            cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as e:
        print(f"labeltree: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"labeltree: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"labeltree: invalid argument: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"labeltree: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
