"""Command-line entry point: data generation, training, evaluation, sweeps.

Exit codes: 0 success, 2 usage/config error, 3 data or format error,
4 training divergence, 5 incompatible checkpoint.

Heavy imports happen inside the command handlers so MCRFM_THREADS can cap
the BLAS thread pools before numpy is loaded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_CHECKPOINT = 5

CONSOLIDATED_SCHEMA_VERSION = 1


def _apply_thread_cap() -> None:
    cap = os.environ.get("MCRFM_THREADS")
    if cap:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcrfm",
        description="Mixed-curvature flow-matching few-shot adapter over cached features",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic hierarchical feature cache")
    p.add_argument("--spec", help="JSON file with generator fields (depth, branching, ...)")
    p.add_argument("--out", required=True, help="output cache path (FVEC1 + .json sidecar)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-per-class", type=int, default=200)

    p = sub.add_parser("train", help="train one adapter on a few-shot episode")
    p.add_argument("--features", required=True, help="FVEC1 feature cache")
    p.add_argument("--shots", type=int, default=4)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--variant", default="full")
    p.add_argument("--config", help="JSON file overriding TrainConfig fields")
    p.add_argument("--episode", help="reuse a persisted episode file instead of sampling")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on an episode's query set")
    p.add_argument("--features", required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint path prefix (no suffix)")
    p.add_argument("--out", help="where to write metrics + per-query logits JSON")
    p.add_argument("--nfe", type=int, help="override solver steps at inference")

    p = sub.add_parser("ablate", help="run the component-ablation matrix")
    p.add_argument("--features", required=True)
    p.add_argument("--shots", type=int, default=4)
    p.add_argument("--seeds", default=None, help="comma-separated, default 42,43,44")
    p.add_argument("--config", help="JSON file overriding TrainConfig fields")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("sweep", help="run the sensitivity grid (curvature x split x nfe)")
    p.add_argument("--features", required=True)
    p.add_argument("--shots", type=int, default=4)
    p.add_argument("--seeds", default=None)
    p.add_argument("--grid", help="JSON file with lists: curvature, dim_split, nfe")
    p.add_argument("--config", help="JSON file overriding TrainConfig fields")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")

    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)

    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .datahub import DataFormatError, EpisodeError
    from .geometry import InvalidArgumentError
    from .optim import DivergenceError
    from .transport import SolverDivergenceError

    handlers = {
        "gen-data": cmd_gen_data,
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
        "sweep": cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, InvalidArgumentError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, EpisodeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, SolverDivergenceError) as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT


def _load_json(path) -> dict:
    from .datahub import DataFormatError

    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"unreadable JSON file {path}: {e}") from e


def _build_config(args, seed: int, variant: str = "full", extra: dict | None = None):
    from .config import TrainConfig, apply_variant, config_from_dict

    overrides = dict(extra or {})
    if getattr(args, "config", None):
        data = _load_json(args.config)
        data.update(overrides)
        overrides = data
    overrides["seed"] = seed
    cfg = config_from_dict(overrides) if overrides else TrainConfig(seed=seed)
    return apply_variant(cfg, variant)


def _hierarchy_spec(data: dict):
    from .datahub import EpisodeError, HierarchySpec

    n_per_class = data.pop("n_per_class", None)
    known = set(HierarchySpec.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise EpisodeError(f"unknown generator spec keys: {sorted(unknown)}")
    if "level_scales" in data:
        data["level_scales"] = tuple(data["level_scales"])
    return HierarchySpec(**data), n_per_class


def cmd_gen_data(args) -> int:
    from .datahub import generate_hierarchy, write_cache

    spec_data = _load_json(args.spec) if args.spec else {}
    spec, n_from_spec = _hierarchy_spec(spec_data)
    n_per_class = n_from_spec or args.n_per_class
    cache = generate_hierarchy(spec, n_per_class=n_per_class, seed=args.seed)
    path = write_cache(args.out, cache)
    print(f"wrote {cache.features.shape[0]} x {cache.dim} features, "
          f"{cache.num_classes} classes -> {path}")
    return EXIT_OK


def _episode_for(args, cache, out_dir: Path, shots: int, seed: int):
    """Load or sample+persist the episode; the returned label is relative to
    the out dir when the file lives inside it, so reports stay byte-stable
    across differently named output directories."""
    from .datahub import load_episode, sample_episode, save_episode

    if getattr(args, "episode", None):
        episode = load_episode(args.episode)
        path = Path(args.episode)
    else:
        episode = sample_episode(cache, args.features, k_shot=shots, seed=seed)
        path = out_dir / "episodes" / f"k{shots}-seed{seed}.json"
        save_episode(path, episode)
    try:
        label = path.resolve().relative_to(out_dir.resolve())
    except ValueError:
        label = path
    return episode, label


def cmd_train(args) -> int:
    from .datahub import read_cache
    from .trainer import train_episode

    cache = read_cache(args.features)
    out_dir = Path(args.out)
    episode, episode_path = _episode_for(args, cache, out_dir, args.shots, args.seed)
    _check_episode_matches(episode, args.features)
    cfg = _build_config(args, seed=args.seed, variant=args.variant)
    run_name = f"{args.variant}-k{episode.k_shot}-seed{args.seed}"

    progress = None
    if not args.quiet:
        def progress(epoch, rec):
            if (epoch + 1) % 10 == 0 or epoch == 0:
                print(f"  epoch {epoch + 1:3d}/{cfg.epochs}  loss {rec['total']:.4f}")

    report = train_episode(
        cache, episode, cfg, out_dir, run_name,
        variant=args.variant, episode_file=str(episode_path), progress=progress,
    )
    if report["diverged"]:
        print(f"error: run diverged: {report['divergence']}", file=sys.stderr)
        print(f"last-good checkpoint: {out_dir / report['checkpoint']}", file=sys.stderr)
        return EXIT_DIVERGENCE
    m = report["metrics"]
    print(f"{run_name}: query top-1 {m['query_top1']:.4f}, support top-1 {m['support_top1']:.4f}, "
          f"loss {m['initial_train_loss']:.4f} -> {m['final_train_loss']:.4f}")
    print(f"report: {out_dir / 'reports' / (run_name + '.json')}")
    return EXIT_OK


def _check_episode_matches(episode, features_path) -> None:
    from .datahub import EpisodeError, cache_hash

    actual = cache_hash(features_path)
    if episode.cache_hash != actual:
        raise EpisodeError(
            f"episode was sampled from cache {episode.cache_hash}, "
            f"but {features_path} hashes to {actual}"
        )


def cmd_eval(args) -> int:
    import numpy as np

    from .checkpoint import CheckpointError, load_checkpoint
    from .config import config_from_dict
    from .datahub import episode_views, load_episode, read_cache
    from .trainer import canonical_json, infer

    cache = read_cache(args.features)
    episode = load_episode(args.episode)
    _check_episode_matches(episode, args.features)
    params, manifest = load_checkpoint(args.checkpoint)
    hyper = manifest.get("hyperparameters", {})
    if "config" not in hyper:
        raise CheckpointError(f"checkpoint {args.checkpoint} carries no config")
    if hyper.get("feature_dim") != cache.dim:
        raise CheckpointError(
            f"checkpoint expects feature dim {hyper.get('feature_dim')}, cache has {cache.dim}"
        )
    if hyper.get("num_classes") != cache.num_classes:
        raise CheckpointError(
            f"checkpoint expects {hyper.get('num_classes')} classes, cache has {cache.num_classes}"
        )
    cfg = config_from_dict(hyper["config"])

    support_x, support_y, query_x, query_y = episode_views(cache, episode)
    preds, logits = infer(
        params, cfg, support_x, support_y, query_x, cache.num_classes, nfe=args.nfe
    )
    top1 = float(np.mean(preds == query_y))
    metrics = {
        "kind": "eval_report",
        "schema_version": 1,
        "checkpoint": str(args.checkpoint),
        "episode": str(args.episode),
        "query_top1": top1,
        "num_queries": int(len(query_y)),
        "predictions": [int(p) for p in preds],
        "logits": [[float(x) for x in row] for row in logits],
    }
    print(f"query top-1: {top1:.4f} over {len(query_y)} queries")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(canonical_json(metrics) + "\n", encoding="utf-8")
        print(f"metrics: {out}")
    return EXIT_OK


def _parse_seeds(arg) -> list[int]:
    from .config import SEED_PRESETS

    if not arg:
        return list(SEED_PRESETS)
    return [int(s) for s in str(arg).split(",") if s.strip()]


def _consolidated_cell(values: list[float], ratios: list, reference: float | None):
    import numpy as np

    mean = float(np.mean(values))
    cell = {
        "mean": mean,
        "std": float(np.std(values)),
        "values": [float(v) for v in values],
        "median_ratio": (float(np.median([r for r in ratios if r is not None]))
                         if any(r is not None for r in ratios) else None),
    }
    if reference is not None:
        cell["delta_pp"] = (mean - reference) * 100.0
    return cell


def _run_variant_seeds(cache, args, out_dir, variants, seeds, overrides_per_variant=None,
                       quiet=False):
    """Train (variant x seed); returns {variant: {"values": [...], "ratios": [...]}}."""
    from .trainer import train_episode

    results = {}
    for variant, cfg_overrides in variants:
        accs, ratios = [], []
        for seed in seeds:
            episode, episode_path = _episode_for(args, cache, out_dir, args.shots, seed)
            cfg = _build_config(args, seed=seed, variant=variant if isinstance(variant, str) else "full",
                                extra=cfg_overrides)
            run_name = f"{_slug(variant, cfg_overrides)}-k{args.shots}-seed{seed}"
            report = train_episode(cache, episode, cfg, out_dir, run_name,
                                   variant=_slug(variant, cfg_overrides),
                                   episode_file=str(episode_path))
            if report["diverged"]:
                raise_divergence(report)
            accs.append(report["metrics"]["query_top1"])
            stability = report["stability"]
            ratios.append(stability["median_ratio"] if stability else None)
            if not quiet:
                print(f"  {run_name}: {accs[-1]:.4f}")
        results[_slug(variant, cfg_overrides)] = {"values": accs, "ratios": ratios}
    return results


def raise_divergence(report):
    from .optim import DivergenceError

    raise DivergenceError(report.get("divergence") or "unknown divergence")


def _slug(variant, overrides) -> str:
    if overrides is None:
        return variant
    parts = []
    if "curvature" in overrides:
        parts.append(f"c{overrides['curvature']:g}")
    if "hyp_dim" in overrides:
        parts.append(f"split{overrides['hyp_dim']}-{overrides['euc_dim']}")
    if "nfe" in overrides:
        parts.append(f"nfe{overrides['nfe']}")
    return "sens-" + "-".join(parts) if parts else variant


def cmd_ablate(args) -> int:
    from .config import ABLATION_VARIANTS, VARIANT_LABELS
    from .datahub import cache_hash, read_cache
    from .trainer import canonical_json

    cache = read_cache(args.features)
    seeds = _parse_seeds(args.seeds)
    out_dir = Path(args.out)
    variants = [("full", None)] + [(v, None) for v in ABLATION_VARIANTS]
    results = _run_variant_seeds(cache, args, out_dir, variants, seeds, quiet=args.quiet)

    reference_mean = float(sum(results["full"]["values"]) / len(results["full"]["values"]))
    column = f"{args.shots}-shot"
    table = {
        "schema_version": CONSOLIDATED_SCHEMA_VERSION,
        "kind": "consolidated",
        "table": "ablation",
        "metric": "query_top1",
        "metadata": {
            "features": str(args.features),
            "cache_hash": cache_hash(args.features),
            "k_shot": args.shots,
            "seeds": seeds,
        },
        "columns": [column],
        "reference": {
            "key": "full",
            "label": VARIANT_LABELS["full"],
            "cells": {column: _consolidated_cell(
                results["full"]["values"], results["full"]["ratios"], reference_mean)},
        },
        "rows": [
            {
                "key": v,
                "label": VARIANT_LABELS[v],
                "cells": {column: _consolidated_cell(
                    results[v]["values"], results[v]["ratios"], reference_mean)},
            }
            for v in ABLATION_VARIANTS
        ],
    }
    out = out_dir / "reports" / "ablation.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(canonical_json(table) + "\n", encoding="utf-8")
    print(f"consolidated ablation table: {out}")
    return EXIT_OK


DEFAULT_SENSITIVITY_GRID = {
    "curvature": [0.5, 1.0, 2.0],
    "dim_split": [[64, 192], [128, 128], [192, 64]],
    "nfe": [1, 3, 8],
}


def cmd_sweep(args) -> int:
    from .datahub import cache_hash, read_cache
    from .trainer import canonical_json

    cache = read_cache(args.features)
    seeds = _parse_seeds(args.seeds)
    out_dir = Path(args.out)
    grid = dict(DEFAULT_SENSITIVITY_GRID)
    if args.grid:
        grid.update(_load_json(args.grid))

    variants = []
    for c in grid["curvature"]:
        for split in grid["dim_split"]:
            for nfe in grid["nfe"]:
                variants.append(("full", {
                    "curvature": float(c),
                    "hyp_dim": int(split[0]),
                    "euc_dim": int(split[1]),
                    "nfe": int(nfe),
                }))
    results = _run_variant_seeds(cache, args, out_dir, variants, seeds, quiet=args.quiet)

    default_key = _slug("full", {"curvature": 1.0, "hyp_dim": 128, "euc_dim": 128, "nfe": 3})
    reference_mean = None
    if default_key in results:
        vals = results[default_key]["values"]
        reference_mean = float(sum(vals) / len(vals))

    column = f"{args.shots}-shot"
    rows = []
    for (variant, overrides) in variants:
        key = _slug(variant, overrides)
        rows.append({
            "key": key,
            "label": key.removeprefix("sens-"),
            "settings": overrides,
            "cells": {column: _consolidated_cell(
                results[key]["values"], results[key]["ratios"], reference_mean)},
        })
    table = {
        "schema_version": CONSOLIDATED_SCHEMA_VERSION,
        "kind": "consolidated",
        "table": "sensitivity",
        "metric": "query_top1",
        "metadata": {
            "features": str(args.features),
            "cache_hash": cache_hash(args.features),
            "k_shot": args.shots,
            "seeds": seeds,
            "grid": grid,
        },
        "columns": [column],
        "reference_key": default_key,
        "rows": rows,
    }
    out = out_dir / "reports" / "sensitivity.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(canonical_json(table) + "\n", encoding="utf-8")
    print(f"consolidated sensitivity table: {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
