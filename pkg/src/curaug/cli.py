"""Command-line entry point.

One executable, one subcommand per pipeline stage:

    curate          merge source manifests into a balanced training pool
    ood fit         fit per-class Gaussians on labeled embeddings
    ood score       likelihood-ratio score an embedding table
    ood quantile    look up a train-distribution quantile
    augment plan    derive per-cell ratios and draw transform parameters
    augment apply   render planned mutations to image files
    augment filter  drop mutations outside the train-quantile band
    augment sample  draw a balanced, budget-sized subset of survivors
    evaluate        accuracy and per-age fairness of a prediction file
    report          SVG views of pool and score distributions

Exit codes: 0 success, 2 bad configuration or flags, 3 bad input data,
4 numerical failure. Failures print one JSON object to stderr. Every
command writes an audit JSON embedding the resolved configuration and
toolkit version next to its outputs, and all randomness derives from the
single --seed value, so reruns with identical inputs produce identical
bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Any, Sequence

from . import __version__
from .augmentation import (
    FilterRange,
    PlanEntry,
    filter_by_llr,
    generate_specs,
    plan_ratios,
    read_filter_report,
    read_plan,
    sample_balanced,
    write_filter_report,
    write_plan,
)
from .config import PipelineConfig, load_config, override, override_section
from .curation import CurationConfig, curate
from .errors import ConfigError, DataError, NumericError
from .manifest import (
    Record,
    group_counts,
    load_embeddings,
    load_manifest,
    save_manifest,
)
from .metrics import (
    fairness_score,
    mae,
    mean_distance,
    read_predictions,
    write_fairness_csv,
)
from .ood import (
    fit,
    load_model,
    read_scores,
    save_model,
    score_batch,
    train_quantile,
    write_scores,
)
from .report import age_histogram_svg, llr_histogram_svg
from .transforms import apply_transform, load_png, save_png


def _write_audit(path: str, command: str, cfg: PipelineConfig, **extra: Any) -> None:
    doc: dict[str, Any] = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
    }
    doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _audit_path(args: argparse.Namespace, out_path: str) -> str:
    return args.audit if getattr(args, "audit", None) else out_path + ".audit.json"


def _load_pool(paths: Sequence[str], label_range: tuple[int, int]) -> list[Record]:
    pool: list[Record] = []
    seen: dict[str, str] = {}
    schema: frozenset[str] | None = None
    for path in paths:
        records = load_manifest(path, label_range=label_range)
        for rec in records:
            if rec.id in seen:
                raise DataError(
                    f"duplicate id '{rec.id}' across manifests "
                    f"{seen[rec.id]} and {path}"
                )
            seen[rec.id] = path
        if records:
            names = frozenset(records[0].features)
            if schema is None:
                schema = names
            elif names != schema:
                raise DataError(
                    f"manifest {path} has feature names {sorted(names)}, "
                    f"expected {sorted(schema)}"
                )
        pool.extend(records)
    if not pool:
        raise DataError("no records in the given manifests")
    return pool


def _parse_range_pair(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError as exc:
        raise ConfigError(f"cannot parse range {text!r}, expected LO:HI") from exc


def _csv_list(text: str) -> tuple[str, ...]:
    items = tuple(part.strip() for part in text.split(",") if part.strip())
    if not items:
        raise ConfigError(f"empty list value {text!r}")
    return items


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    cfg = override(cfg, seed=getattr(args, "seed", None))
    if getattr(args, "label_range", None):
        cfg = override(cfg, label_range=_parse_range_pair(args.label_range))
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_curate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    cfg = override_section(
        cfg,
        "curation",
        q_low=args.q_low,
        q_high=args.q_high,
        feature_priority=_csv_list(args.feature_priority)
        if args.feature_priority
        else None,
    )
    if not cfg.curation.feature_priority:
        raise ConfigError("no feature priority given (flag --feature-priority)")
    pool = _load_pool(args.pool, cfg.label_range)
    plan = curate(
        pool,
        CurationConfig(
            feature_priority=cfg.curation.feature_priority,
            q_low=cfg.curation.q_low,
            q_high=cfg.curation.q_high,
            seed=cfg.seed,
        ),
    )
    chosen = set(plan.selected_ids)
    save_manifest([rec for rec in pool if rec.id in chosen], args.out)
    _write_audit(
        _audit_path(args, args.out),
        "curate",
        cfg,
        inputs={"pool": list(args.pool)},
        outputs={"manifest": args.out},
        selected=len(plan.selected_ids),
        pool_size=len(pool),
        thresholds={str(age): t for age, t in plan.thresholds.items()},
        min_sample=plan.min_sample,
        max_sample=plan.max_sample,
        dropped_ages=list(plan.dropped_ages),
        deficits=[
            {"age": age, "state": state, "missing": miss}
            for (age, state), miss in sorted(plan.deficits.items())
        ],
    )
    return 0


def cmd_ood_fit(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    cfg = override_section(cfg, "ood", k=args.k, shrinkage=args.shrinkage)
    table = load_embeddings(args.embeddings, args.ids)
    records = load_manifest(args.labels_from, label_range=cfg.label_range)
    labels = {rec.id: rec.age for rec in records}
    model = fit(table, labels, k=cfg.ood.k, shrinkage=cfg.ood.shrinkage)
    save_model(
        model,
        args.out,
        meta={"command": "ood fit", "config": cfg.to_dict()},
    )
    _write_audit(
        _audit_path(args, args.out),
        "ood fit",
        cfg,
        inputs={
            "embeddings": args.embeddings,
            "ids": args.ids,
            "labels_from": args.labels_from,
        },
        outputs={"model": args.out},
        classes=len(model.classes),
        dim=model.dim,
        k=model.k,
        train_rows=int(model.train_llr.size),
    )
    return 0


def cmd_ood_score(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    model = load_model(args.model)
    table = load_embeddings(args.embeddings, args.ids)
    scores = score_batch(model, table)
    write_scores(scores, args.out)
    _write_audit(
        _audit_path(args, args.out),
        "ood score",
        cfg,
        inputs={"model": args.model, "embeddings": args.embeddings, "ids": args.ids},
        outputs={"scores": args.out},
        rows=len(scores),
    )
    return 0


def cmd_ood_quantile(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    print(repr(train_quantile(model, args.q)))
    return 0


def cmd_augment_plan(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    cfg = override_section(
        cfg,
        "augment",
        feature=args.feature,
        rotation_deg=(-args.rotation_max, args.rotation_max)
        if args.rotation_max is not None
        else None,
        translate_frac=(-args.translate_max, args.translate_max)
        if args.translate_max is not None
        else None,
        shear=(-args.shear_max, args.shear_max)
        if args.shear_max is not None
        else None,
        brightness_delta=(-args.brightness_max, args.brightness_max)
        if args.brightness_max is not None
        else None,
        scale=(args.scale_min, args.scale_max)
        if args.scale_min is not None or args.scale_max is not None
        else None,
        contrast_factor=(args.contrast_min, args.contrast_max)
        if args.contrast_min is not None or args.contrast_max is not None
        else None,
    )
    if not cfg.augment.feature:
        raise ConfigError("no feature given (flag --feature)")
    records = load_manifest(args.pool, label_range=cfg.label_range)
    if not records:
        raise DataError("pool manifest is empty")
    feature = cfg.augment.feature
    if feature not in records[0].features:
        raise DataError(f"feature '{feature}' missing from pool records")
    ages = sorted({rec.age for rec in records})
    states = sorted({rec.features[feature] for rec in records})
    counts = {(age, state): 0 for age in ages for state in states}
    for rec in records:
        counts[(rec.age, rec.features[feature])] += 1
    table = plan_ratios(counts, feature=feature)
    entries = generate_specs(records, table, cfg.augment.bounds(), cfg.seed)
    write_plan(entries, args.out)
    ratio_doc = {
        "feature": feature,
        "median_num": table.median_num,
        "mean_num": table.mean_num,
        "max_num": table.max_num,
        "max_ratio": table.max_ratio,
        "exact_median": table.exact_median,
        "exact_mean": table.exact_mean,
        "ratios": [
            {"age": age, "state": state, "count": counts[(age, state)], "ratio": r}
            for (age, state), r in table.ratios.items()
        ],
        "zero_cells": [list(c) for c in table.zero_cells],
    }
    if args.ratios_out:
        with open(args.ratios_out, "w", encoding="utf-8") as fh:
            json.dump(
                {"version": __version__, "config": cfg.to_dict(), **ratio_doc},
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    _write_audit(
        _audit_path(args, args.out),
        "augment plan",
        cfg,
        inputs={"pool": args.pool},
        outputs={"plan": args.out, "ratios": args.ratios_out},
        planned=len(entries),
        **ratio_doc,
    )
    return 0


def cmd_augment_apply(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    entries = read_plan(args.plan)
    records = {
        rec.id: rec
        for rec in load_manifest(args.manifest, label_range=cfg.label_range)
    }
    os.makedirs(args.out_dir, exist_ok=True)
    written = []
    for entry in entries:
        rec = records.get(entry.spec.source_id)
        if rec is None:
            raise DataError(
                f"plan references id '{entry.spec.source_id}' "
                f"not present in {args.manifest}"
            )
        rel = rec.path if rec.path else f"{rec.id}.png"
        src = rel if os.path.isabs(rel) else os.path.join(args.images_dir, rel)
        image = load_png(src)
        out_path = os.path.join(args.out_dir, f"{entry.aug_id}.png")
        save_png(apply_transform(image, entry.spec), out_path)
        written.append(f"{entry.aug_id}.png")
    _write_audit(
        _audit_path(args, os.path.join(args.out_dir, "apply")),
        "augment apply",
        cfg,
        inputs={"plan": args.plan, "manifest": args.manifest, "images_dir": args.images_dir},
        outputs={"dir": args.out_dir, "files": written},
        rendered=len(written),
    )
    return 0


def cmd_augment_filter(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if args.range:
        cfg = override_section(cfg, "augment", filter_range=args.range)
    frange = FilterRange.parse(cfg.augment.filter_range)
    model = load_model(args.model)
    scores = read_scores(args.scores)
    outcome = filter_by_llr(scores, model, frange)
    kept = set(outcome.kept)
    write_filter_report(scores, kept, args.out)
    _write_audit(
        _audit_path(args, args.out),
        "augment filter",
        cfg,
        inputs={"scores": args.scores, "model": args.model},
        outputs={"report": args.out},
        segments=[list(seg) for seg in frange.segments],
        cutoffs=[
            {"lo": lo, "hi": hi} for lo, hi in outcome.cutoffs
        ],
        kept=len(kept),
        dropped=len(scores) - len(kept),
    )
    return 0


def cmd_augment_sample(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    cfg = override_section(
        cfg, "augment", feature=args.feature, budget=args.budget
    )
    if not cfg.augment.feature:
        raise ConfigError("no feature given (flag --feature)")
    entries = read_plan(args.plan)
    kept_ids = {row[0] for row in read_filter_report(args.filter_report) if row[2]}
    feature = cfg.augment.feature
    groups: dict[tuple[int, str], list[str]] = {}
    for entry in entries:
        if entry.aug_id not in kept_ids:
            continue
        if feature not in entry.features:
            raise DataError(f"plan row '{entry.aug_id}' lacks feature '{feature}'")
        key = (entry.class_id, entry.features[feature])
        groups.setdefault(key, []).append(entry.aug_id)
    result = sample_balanced(groups, cfg.augment.budget, cfg.seed)
    chosen = set(result.selected)
    write_plan([e for e in entries if e.aug_id in chosen], args.out)
    _write_audit(
        _audit_path(args, args.out),
        "augment sample",
        cfg,
        inputs={"plan": args.plan, "filter_report": args.filter_report},
        outputs={"plan": args.out},
        budget=cfg.augment.budget,
        kept_in=len(kept_ids),
        selected=len(chosen),
        shortfalls=[
            {"class": c, "state": s, "missing": m}
            for (c, s), m in sorted(result.shortfalls.items())
        ],
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    cfg = override_section(
        cfg,
        "metrics",
        tolerance=args.tolerance,
        features=_csv_list(args.features) if args.features else None,
    )
    if not cfg.metrics.features:
        raise ConfigError("no features given (flag --features)")
    predictions = read_predictions(args.predictions, label_range=cfg.label_range)
    overall_mae = mae(predictions)
    fairness_doc: dict[str, Any] = {}
    csv_paths: dict[str, str] = {}
    for feature in cfg.metrics.features:
        rep = fairness_score(predictions, feature, cfg.metrics.tolerance)
        distances = mean_distance(predictions, feature)
        csv_path = f"{args.out}.{feature}.csv"
        write_fairness_csv(rep, distances, csv_path)
        csv_paths[feature] = csv_path
        fairness_doc[feature] = {
            "score": rep.score,
            "tolerance": rep.tolerance,
            "evaluated_ages": list(rep.evaluated_ages),
            "skipped_ages": list(rep.skipped_ages),
            "per_age": [
                {
                    "age": age,
                    "fair": rep.per_age_fair[age],
                    "means": rep.per_age_means[age],
                    "max_distance": distances.get(age, 0.0),
                }
                for age in rep.evaluated_ages
            ],
        }
    doc = {
        "command": "evaluate",
        "version": __version__,
        "config": cfg.to_dict(),
        "inputs": {"predictions": args.predictions},
        "outputs": {"csv": csv_paths},
        "rows": len(predictions),
        "mae": overall_mae,
        "fairness": fairness_doc,
    }
    with open(f"{args.out}.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    records = load_manifest(args.manifest, label_range=cfg.label_range)
    if not records:
        raise DataError("manifest is empty")
    by_age: dict[int, int] = {}
    for rec in records:
        by_age[rec.age] = by_age.get(rec.age, 0) + 1
    with open(args.out_svg, "w", encoding="utf-8") as fh:
        fh.write(age_histogram_svg(by_age))
    outputs = {"age_svg": args.out_svg}
    if args.scores or args.model or args.llr_svg:
        if not (args.scores and args.model and args.llr_svg):
            raise ConfigError(
                "score distribution plots need --model, --scores, and --llr-svg"
            )
        model = load_model(args.model)
        scores = read_scores(args.scores)
        if model.train_llr.size == 0:
            raise DataError("model carries no training scores")
        with open(args.llr_svg, "w", encoding="utf-8") as fh:
            fh.write(
                llr_histogram_svg(
                    model.train_llr.tolist(), [s.llr for s in scores]
                )
            )
        outputs["llr_svg"] = args.llr_svg
    _write_audit(
        _audit_path(args, args.out_svg),
        "report",
        cfg,
        inputs={"manifest": args.manifest, "model": args.model, "scores": args.scores},
        outputs=outputs,
        ages=len(by_age),
        records=len(records),
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags win over it)")
    p.add_argument("--seed", type=int, help="u64 master seed (default 0)")
    p.add_argument("--label-range", help="valid age range LO:HI (default 0:100)")
    p.add_argument("--audit", help="audit JSON path (default <out>.audit.json)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curaug",
        description="Balanced dataset curation, filtered augmentation, "
        "and fairness evaluation.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="select a balanced pool subset")
    p.add_argument("--pool", action="append", required=True, help="pool manifest (repeatable)")
    p.add_argument("--out", required=True, help="curated manifest path")
    p.add_argument("--feature-priority", help="comma-separated feature names")
    p.add_argument("--q-low", type=float, help="lower count quantile (default 0.2)")
    p.add_argument("--q-high", type=float, help="upper count quantile (default 0.8)")
    _common_flags(p)
    p.set_defaults(func=cmd_curate)

    ood_p = sub.add_parser("ood", help="Gaussian density models and scoring")
    ood_sub = ood_p.add_subparsers(dest="ood_command", required=True)

    p = ood_sub.add_parser("fit", help="fit per-class Gaussians")
    p.add_argument("--embeddings", required=True, help="binary embedding table")
    p.add_argument("--ids", required=True, help="id sidecar file")
    p.add_argument("--labels-from", required=True, help="manifest supplying ages")
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--k", type=int, help="contrast set size (default min(10, classes-1))")
    p.add_argument("--shrinkage", type=float, help="covariance shrinkage (default 1e-3)")
    _common_flags(p)
    p.set_defaults(func=cmd_ood_fit)

    p = ood_sub.add_parser("score", help="score an embedding table")
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--ids", required=True)
    p.add_argument("--out", required=True, help="score CSV path")
    _common_flags(p)
    p.set_defaults(func=cmd_ood_score)

    p = ood_sub.add_parser("quantile", help="train-distribution quantile")
    p.add_argument("--model", required=True)
    p.add_argument("--q", type=float, required=True)
    p.set_defaults(func=cmd_ood_quantile)

    aug_p = sub.add_parser("augment", help="plan, render, filter, sample mutations")
    aug_sub = aug_p.add_subparsers(dest="augment_command", required=True)

    p = aug_sub.add_parser("plan", help="derive ratios and draw parameters")
    p.add_argument("--pool", required=True, help="curated manifest")
    p.add_argument("--feature", help="demographic feature defining cells")
    p.add_argument("--out", required=True, help="plan JSONL path")
    p.add_argument("--ratios-out", help="ratio table JSON path")
    p.add_argument("--rotation-max", type=float, help="degrees; bounds become (-v, v)")
    p.add_argument("--translate-max", type=float, help="fraction; bounds become (-v, v)")
    p.add_argument("--shear-max", type=float, help="bounds become (-v, v)")
    p.add_argument("--brightness-max", type=float, help="fraction; bounds become (-v, v)")
    p.add_argument("--scale-min", type=float)
    p.add_argument("--scale-max", type=float)
    p.add_argument("--contrast-min", type=float)
    p.add_argument("--contrast-max", type=float)
    _common_flags(p)
    p.set_defaults(func=cmd_augment_plan)

    p = aug_sub.add_parser("apply", help="render planned mutations")
    p.add_argument("--plan", required=True)
    p.add_argument("--manifest", required=True, help="manifest supplying image paths")
    p.add_argument("--images-dir", required=True)
    p.add_argument("--out-dir", required=True)
    _common_flags(p)
    p.set_defaults(func=cmd_augment_apply)

    p = aug_sub.add_parser("filter", help="drop out-of-band mutations")
    p.add_argument("--scores", required=True, help="score CSV from 'ood score'")
    p.add_argument("--model", required=True)
    p.add_argument("--range", help='quantile segments, e.g. "0.05:1.0" (default)')
    p.add_argument("--out", required=True, help="filter report CSV path")
    _common_flags(p)
    p.set_defaults(func=cmd_augment_filter)

    p = aug_sub.add_parser("sample", help="balanced budget-sized selection")
    p.add_argument("--plan", required=True)
    p.add_argument("--filter-report", required=True)
    p.add_argument("--feature", help="demographic feature defining cells")
    p.add_argument("--budget", type=int, help="total mutations to keep")
    p.add_argument("--out", required=True, help="sampled plan JSONL path")
    _common_flags(p)
    p.set_defaults(func=cmd_augment_sample)

    p = sub.add_parser("evaluate", help="accuracy and fairness metrics")
    p.add_argument("--predictions", required=True, help="prediction CSV")
    p.add_argument("--features", help="comma-separated features to audit")
    p.add_argument("--tolerance", type=float, help="fairness tolerance (default 3)")
    p.add_argument("--out", required=True, help="output prefix")
    _common_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="SVG distribution views")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-svg", required=True, help="per-age histogram SVG path")
    p.add_argument("--model", help="model JSON (for the train distribution)")
    p.add_argument("--scores", help="score CSV to compare against training")
    p.add_argument("--llr-svg", help="score distribution SVG path")
    _common_flags(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _fail("config", exc)
        return 2
    except (DataError, OSError) as exc:
        _fail("data", exc)
        return 3
    except NumericError as exc:
        _fail("numeric", exc)
        return 4


def _fail(kind: str, exc: Exception) -> None:
    print(
        json.dumps({"error": kind, "message": str(exc)}, sort_keys=True),
        file=sys.stderr,
    )


if __name__ == "__main__":
    sys.exit(main())
