"""Command line front end.

Subcommands:

  ingest      validate a dataset, optionally re-split and re-serialize it
  index       build the graph index over the historical pool and save it
  route       run one routing episode and write the decision log
  oracle      compute offline references for one budget configuration
  experiment  run a full grid and write report JSON + CSVs
  report      regenerate CSVs from an existing report JSON

Every flag can also come from a flat JSON config file (--config);
explicit flags win over the file.  Commands that write outputs also
write a small run manifest (config hash, seeds, package version) next
to them.  Errors print one structured JSON line on stderr; malformed
configuration exits with code 2 and names the offending field.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .ann_index import IndexConfig, build_index, load_index, save_index
from .core import BudgetVector, EpisodeLog, compute_metrics
from .harness import (ALGORITHMS, ExperimentPlan, OrderSpec, SplitSpec,
                      base_budget, historical_stats, order_stream, run_plan,
                      split_budget)
from .ingest import ManifestError, load_manifest, split_dataset, write_manifest
from .oracle import offline_optima
from .router import ADMISSION_POLICIES, RouterConfig, run_episode

__all__ = ["main", "build_parser"]


class _CliError(Exception):
    """Configuration problem: message names the field, exit code 2."""

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


def _fail(command: str, error: Exception, code: int) -> int:
    payload = {
        "error": type(error).__name__,
        "command": command,
        "message": str(error),
    }
    if isinstance(error, _CliError):
        payload["field"] = error.field
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def _config_hash(args: dict) -> str:
    canon = json.dumps(args, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_run_manifest(out_path: str, command: str, args: dict,
                        seeds: list[int]) -> str:
    manifest = {
        "command": command,
        "config": args,
        "config_sha256": _config_hash(args),
        "seeds": seeds,
        "version": __version__,
    }
    path = out_path + ".run.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _cleanup(paths: list[str]) -> None:
    for p in paths:
        try:
            os.remove(p)
        except OSError:
            pass


def _parse_floats(raw: str, field: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(tok) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise _CliError(field, f"{field}: {exc}") from None
    if not vals:
        raise _CliError(field, f"{field}: empty list")
    return vals


def _parse_ints(raw: str, field: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(tok) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise _CliError(field, f"{field}: {exc}") from None
    if not vals:
        raise _CliError(field, f"{field}: empty list")
    return vals


_CONFIG_FIELDS = {
    "dataset": str, "format": str, "embeddings": str, "alpha": float,
    "epsilon": float, "k": int, "budget_factor": float, "budget_factors": str,
    "split": str, "split_h": int, "order": str, "n_shuffles": int,
    "seed": int, "seeds": str, "admission": str, "algorithms": str,
    "out": str, "test_size": int, "graph_degree": int, "search_beam": int,
    "build_beam": int, "distance": str, "index": str, "volumes": str,
}


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _CliError("config", f"config: {exc}") from None
    if not isinstance(raw, dict):
        raise _CliError("config", "config: expected a flat JSON object")
    out = {}
    for key, value in raw.items():
        if key not in _CONFIG_FIELDS:
            raise _CliError(key, f"config field {key!r} is not recognized")
        want = _CONFIG_FIELDS[key]
        if want in (int, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise _CliError(key, f"config field {key!r} must be a number")
            value = want(value)
        elif not isinstance(value, str):
            raise _CliError(key, f"config field {key!r} must be a string")
        out[key] = value
    return out


def _merged(args: argparse.Namespace) -> dict:
    """Config file values overlaid by explicitly passed flags."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(_load_config(args.config))
    for key, value in vars(args).items():
        if key in ("command", "config", "func"):
            continue
        if value is not None:
            merged[key] = value
    return merged


def _require(cfg: dict, field: str):
    if field not in cfg or cfg[field] is None:
        raise _CliError(field, f"missing required option --{field.replace('_', '-')}")
    return cfg[field]


def _get_manifest(cfg: dict):
    path = _require(cfg, "dataset")
    fmt = cfg.get("format", "jsonl")
    if fmt not in ("jsonl", "csv"):
        raise _CliError("format", f"format must be jsonl or csv, got {fmt!r}")
    return load_manifest(path, fmt=fmt, embeddings_path=cfg.get("embeddings"))


def _index_config(cfg: dict) -> IndexConfig:
    kwargs = {}
    if "k" in cfg:
        kwargs["k_neighbors"] = cfg["k"]
    for src, dst in (("graph_degree", "graph_degree"),
                     ("search_beam", "search_beam"),
                     ("build_beam", "build_beam"),
                     ("distance", "distance")):
        if src in cfg:
            kwargs[dst] = cfg[src]
    if "seed" in cfg:
        kwargs["seed"] = cfg["seed"]
    return IndexConfig(**kwargs)


def _budgets_for(cfg: dict, manifest) -> BudgetVector:
    factor = cfg.get("budget_factor", 1.0)
    if factor <= 0:
        raise _CliError("budget_factor", "budget_factor must be positive")
    split = SplitSpec(kind=cfg.get("split", "cost_efficiency_sqrt"),
                      h=cfg.get("split_h", 1))
    stats = historical_stats(manifest.historical)
    stream = [r.as_query() if hasattr(r, "as_query") else r
              for r in manifest.test_queries]
    total = base_budget(stream) * factor
    rng = np.random.default_rng(cfg.get("seed", 0)) if split.kind == "random" else None
    return split_budget(total, split, stats, rng)


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _merged(args)
    manifest = _get_manifest(cfg)
    manifest.validate()
    if cfg.get("test_size") is not None:
        historical, test = split_dataset(manifest, cfg["test_size"],
                                         seed=cfg.get("seed", 0))
        manifest = type(manifest)(catalog=manifest.catalog,
                                  embedding_dimension=manifest.embedding_dimension,
                                  historical=historical, test_queries=test,
                                  provenance=dict(manifest.provenance))
        manifest.validate()
    out = cfg.get("out")
    written = []
    if out:
        fmt = cfg.get("format", "jsonl")
        write_manifest(manifest, out, fmt=fmt)
        written.append(out)
        _write_run_manifest(out, "ingest", cfg, [cfg.get("seed", 0)])
    print(json.dumps({
        "models": manifest.n_models,
        "embedding_dimension": manifest.embedding_dimension,
        "historical": len(manifest.historical),
        "test_queries": len(manifest.test_queries),
        "written": written,
    }, sort_keys=True))
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    cfg = _merged(args)
    manifest = _get_manifest(cfg)
    manifest.validate()
    out = _require(cfg, "out")
    index = build_index(manifest.historical, _index_config(cfg))
    try:
        save_index(index, out)
        _write_run_manifest(out, "index", cfg, [index.config.seed])
    except Exception:
        _cleanup([out])
        raise
    print(json.dumps({
        "indexed": len(index),
        "graph_degree": index.config.graph_degree,
        "max_level": index.max_level,
        "out": out,
    }, sort_keys=True))
    return 0


def cmd_route(args: argparse.Namespace) -> int:
    cfg = _merged(args)
    manifest = _get_manifest(cfg)
    manifest.validate()
    admission = cfg.get("admission", "actual_cost")
    if admission not in ADMISSION_POLICIES:
        raise _CliError("admission",
                        f"admission must be one of {ADMISSION_POLICIES}, got {admission!r}")
    searcher = load_index(cfg["index"]) if cfg.get("index") \
        else build_index(manifest.historical, _index_config(cfg))
    budgets = _budgets_for(cfg, manifest)
    stream = order_stream(manifest.test_queries, cfg.get("order", "random"),
                          cfg.get("seed", 0))
    rcfg = RouterConfig(alpha=cfg.get("alpha", 1e-4),
                        epsilon=cfg.get("epsilon", 0.025),
                        k=cfg.get("k", 5), seed=cfg.get("seed", 0),
                        admission_policy=admission)
    log = run_episode(stream, searcher, budgets, rcfg)
    optima = offline_optima(stream, searcher, budgets, k=rcfg.k)
    metrics = compute_metrics(log, optima.estimated_optimum)
    out = cfg.get("out")
    if out:
        try:
            log.save(out)
            _write_run_manifest(out, "route", cfg, [rcfg.seed])
        except Exception:
            _cleanup([out, out + ".run.json"])
            raise
    print(json.dumps({"metrics": metrics.as_dict(),
                      "estimated_optimum": optima.estimated_optimum,
                      "out": out}, sort_keys=True))
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    cfg = _merged(args)
    manifest = _get_manifest(cfg)
    manifest.validate()
    searcher = load_index(cfg["index"]) if cfg.get("index") \
        else build_index(manifest.historical, _index_config(cfg))
    budgets = _budgets_for(cfg, manifest)
    optima = offline_optima(manifest.test_queries, searcher, budgets,
                            k=cfg.get("k", 5))
    payload = {
        "true_optimum": optima.true_optimum,
        "estimated_optimum": optima.estimated_optimum,
        "method": optima.method,
        "lp_integral_gap": optima.gap,
        "binding_true": list(optima.binding_true),
        "binding_estimated": list(optima.binding_estimated),
        "budgets": [float(b) for b in budgets.per_model],
    }
    out = cfg.get("out")
    if out:
        try:
            with open(out, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True, indent=2)
                fh.write("\n")
            _write_run_manifest(out, "oracle", cfg, [cfg.get("seed", 0)])
        except Exception:
            _cleanup([out, out + ".run.json"])
            raise
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _merged(args)
    manifest = _get_manifest(cfg)
    manifest.validate()
    out = _require(cfg, "out")

    algorithms = tuple(tok.strip() for tok in cfg.get("algorithms", "ours").split(",")
                       if tok.strip())
    for alg in algorithms:
        if alg not in ALGORITHMS:
            raise _CliError("algorithms",
                            f"unknown algorithm {alg!r}; choose from {ALGORITHMS}")
    if "budget_factors" in cfg:
        factors = _parse_floats(cfg["budget_factors"], "budget_factors")
    else:
        factors = (cfg.get("budget_factor", 1.0),)
    seeds = _parse_ints(cfg["seeds"], "seeds") if "seeds" in cfg \
        else (cfg.get("seed", 0),)
    volumes: tuple[int | None, ...] = (None,)
    if "volumes" in cfg:
        volumes = tuple(None if tok.strip() == "all" else int(tok)
                        for tok in cfg["volumes"].split(",") if tok.strip())
    admission = cfg.get("admission", "actual_cost")
    if admission not in ADMISSION_POLICIES:
        raise _CliError("admission",
                        f"admission must be one of {ADMISSION_POLICIES}, got {admission!r}")

    try:
        plan = ExperimentPlan(
            algorithms=algorithms,
            budget_factors=factors,
            split=SplitSpec(kind=cfg.get("split", "cost_efficiency_sqrt"),
                            h=cfg.get("split_h", 1)),
            order=OrderSpec(kind=cfg.get("order", "random"),
                            n_shuffles=cfg.get("n_shuffles", 1)),
            seeds=seeds,
            volumes=volumes,
            alpha=cfg.get("alpha", 1e-4),
            epsilon=cfg.get("epsilon", 0.025),
            k=cfg.get("k", 5),
            admission_policy=admission,
        )
    except ValueError as exc:
        raise _CliError("plan", str(exc)) from None

    report = run_plan(plan, manifest, index_config=_index_config(cfg))
    base, _ = os.path.splitext(out)
    paths = [out, base + ".summary.csv", base + ".long.csv"]
    try:
        report.save_json(out)
        report.save_csv(paths[1])
        report.save_long_csv(paths[2])
        _write_run_manifest(out, "experiment", cfg, list(seeds))
    except Exception:
        _cleanup(paths + [out + ".run.json"])
        raise
    n_failed = sum(1 for r in report.rows if r["status"] != "ok")
    print(json.dumps({"cells": len(report.rows), "failed": n_failed,
                      "out": paths}, sort_keys=True))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _merged(args)
    src = _require(cfg, "dataset")  # the report JSON to re-render
    try:
        with open(src, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _CliError("dataset", f"report file: {exc}") from None
    from .harness import ExperimentReport
    report = ExperimentReport(rows=raw.get("rows", []),
                              summary=raw.get("summary", []),
                              oracle_rows=raw.get("oracle_rows", []),
                              meta=raw.get("meta", {}))
    out = cfg.get("out") or os.path.splitext(src)[0]
    base, ext = os.path.splitext(out)
    if ext:
        base = out if ext != ".json" else base
    paths = [base + ".summary.csv", base + ".long.csv"]
    try:
        report.save_csv(paths[0])
        report.save_long_csv(paths[1])
    except Exception:
        _cleanup(paths)
        raise
    print(json.dumps({"out": paths}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="budget-router",
        description="Budget-constrained model routing: ingest data, build "
                    "indexes, run episodes, and sweep experiment grids.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat JSON config file; flags override it")
        p.add_argument("--dataset", help="dataset path (jsonl file or csv directory)")
        p.add_argument("--format", choices=("jsonl", "csv"))
        p.add_argument("--embeddings", help="optional embeddings sidecar CSV")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output path")

    def routing(p):
        p.add_argument("--alpha", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--k", type=int)
        p.add_argument("--budget-factor", dest="budget_factor", type=float)
        p.add_argument("--split")
        p.add_argument("--split-h", dest="split_h", type=int)
        p.add_argument("--order")
        p.add_argument("--admission")
        p.add_argument("--index", help="prebuilt index file")
        p.add_argument("--graph-degree", dest="graph_degree", type=int)
        p.add_argument("--search-beam", dest="search_beam", type=int)
        p.add_argument("--build-beam", dest="build_beam", type=int)
        p.add_argument("--distance")

    p = sub.add_parser("ingest", help="validate / re-split / re-serialize a dataset")
    common(p)
    p.add_argument("--test-size", dest="test_size", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", help="build and save the graph index")
    common(p)
    p.add_argument("--k", type=int)
    p.add_argument("--graph-degree", dest="graph_degree", type=int)
    p.add_argument("--search-beam", dest="search_beam", type=int)
    p.add_argument("--build-beam", dest="build_beam", type=int)
    p.add_argument("--distance")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("route", help="run one routing episode")
    common(p)
    routing(p)
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("oracle", help="offline references for one budget setup")
    common(p)
    routing(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("experiment", help="run a full grid and write reports")
    common(p)
    routing(p)
    p.add_argument("--algorithms", help="comma list, e.g. ours,random,greedy_perf")
    p.add_argument("--budget-factors", dest="budget_factors",
                   help="comma list of floats")
    p.add_argument("--seeds", help="comma list of ints")
    p.add_argument("--n-shuffles", dest="n_shuffles", type=int)
    p.add_argument("--volumes", help="comma list of ints, or 'all'")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="regenerate CSVs from a report JSON")
    common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        return _fail(args.command, exc, 2)
    except ManifestError as exc:
        return _fail(args.command, exc, 2)
    except (ValueError, OSError) as exc:
        return _fail(args.command, exc, 1)


if __name__ == "__main__":
    sys.exit(main())
