"""Augmentation planning, filtering, and balanced selection.

How many mutations each sample gets is driven by how under-represented its
(age, state) cell is: scarce cells are multiplied up toward the median cell
size, capped by the ratio of the largest cell to the mean cell so no single
cell explodes. Generated mutations are later scored against the training
distribution; those whose likelihood-ratio falls outside the configured
train-quantile band are discarded, and a balanced subset of the survivors
is drawn to a fixed budget (per class first, then per state, with the same
shortfall redistribution rule curation uses).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from statistics import median
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .manifest import Record
from .ood import LlrScore, OodModel, train_quantile
from .seeds import rng_for
from .transforms import TransformSpec


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class TransformBounds:
    """Uniform-draw bounds for each transform parameter."""

    rotation_deg: tuple[float, float] = (-15.0, 15.0)
    translate_frac: tuple[float, float] = (-0.10, 0.10)
    scale: tuple[float, float] = (0.9, 1.1)
    shear: tuple[float, float] = (-0.1, 0.1)
    brightness_delta: tuple[float, float] = (-0.2, 0.2)
    contrast_factor: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self) -> None:
        for name in (
            "rotation_deg",
            "translate_frac",
            "scale",
            "shear",
            "brightness_delta",
            "contrast_factor",
        ):
            pair = tuple(getattr(self, name))
            object.__setattr__(self, name, pair)
            if len(pair) != 2 or not pair[0] <= pair[1]:
                raise ConfigError(f"bounds for {name} must be (lo, hi) with lo <= hi")
        if self.scale[0] <= 0:
            raise ConfigError(f"scale bounds must be positive, got {self.scale}")
        if self.contrast_factor[0] < 0:
            raise ConfigError(
                f"contrast bounds must be non-negative, got {self.contrast_factor}"
            )


@dataclass
class AugRatioTable:
    """Per-cell mutation counts plus the statistics that produced them."""

    feature: str
    median_num: int
    mean_num: int
    max_num: int
    max_ratio: int
    ratios: dict[tuple[int, str], int]
    zero_cells: tuple[tuple[int, str], ...]
    exact_median: float
    exact_mean: float


def plan_ratios(
    counts: Mapping[tuple[int, str], int], feature: str = ""
) -> AugRatioTable:
    """Derive per-(age, state) augmentation ratios from cell counts.

    ratio(cell) = min(ceil(median / count), ceil(max / mean)), at least 1
    for non-empty cells. Median and mean are taken over all given cells and
    rounded to the nearest integer for the ratio arithmetic (ties to even);
    the exact values are kept in the table for auditing. Empty cells get
    ratio 0 and a warning: there is nothing to mutate.
    """
    if not counts:
        raise DataError("no cell counts given")
    for key, value in counts.items():
        if value < 0:
            raise DataError(f"negative count for cell {key}")
    cells = sorted(counts)
    values = [counts[c] for c in cells]
    if max(values) == 0:
        raise DataError("all cells are empty")
    exact_median = float(median(values))
    exact_mean = sum(values) / len(values)
    median_num = round(exact_median)
    mean_num = round(exact_mean)
    max_num = max(values)
    # a pool tiny enough to round its mean to zero still needs a sane cap
    max_ratio = _ceil_div(max_num, max(mean_num, 1))
    ratios: dict[tuple[int, str], int] = {}
    zero_cells: list[tuple[int, str]] = []
    for cell in cells:
        num = counts[cell]
        if num == 0:
            ratios[cell] = 0
            zero_cells.append(cell)
        else:
            ratios[cell] = min(max(1, _ceil_div(median_num, num)), max_ratio)
    if zero_cells:
        warnings.warn(
            f"{len(zero_cells)} cell(s) have no samples and get ratio 0: "
            f"{zero_cells[:5]}",
            stacklevel=2,
        )
    return AugRatioTable(
        feature=feature,
        median_num=median_num,
        mean_num=mean_num,
        max_num=max_num,
        max_ratio=max_ratio,
        ratios=ratios,
        zero_cells=tuple(zero_cells),
        exact_median=exact_median,
        exact_mean=exact_mean,
    )


@dataclass(frozen=True)
class PlanEntry:
    """One planned mutation: output id, provenance, and parameters."""

    aug_id: str
    class_id: int
    features: Mapping[str, str]
    spec: TransformSpec


def generate_specs(
    records: Sequence[Record],
    table: AugRatioTable,
    bounds: TransformBounds,
    seed: int,
) -> list[PlanEntry]:
    """Draw transform parameters for every planned mutation.

    Records are visited in input order; each yields ratio(cell) entries.
    Per entry, parameters are drawn from one Philox stream (label
    ``"augment.plan"``) in a fixed order: rotation, translate x, translate
    y, scale, shear, brightness, contrast, then a provenance seed.
    """
    if not table.feature:
        raise ConfigError("ratio table does not name the feature it was built on")
    rng = rng_for(seed, "augment.plan")
    entries: list[PlanEntry] = []
    for rec in records:
        if table.feature not in rec.features:
            raise DataError(f"record '{rec.id}' lacks feature '{table.feature}'")
        cell = (rec.age, rec.features[table.feature])
        if cell not in table.ratios:
            raise DataError(f"record '{rec.id}' falls in unplanned cell {cell}")
        for j in range(table.ratios[cell]):
            spec = TransformSpec(
                source_id=rec.id,
                rotation_deg=float(rng.uniform(*bounds.rotation_deg)),
                translate_frac=(
                    float(rng.uniform(*bounds.translate_frac)),
                    float(rng.uniform(*bounds.translate_frac)),
                ),
                scale=float(rng.uniform(*bounds.scale)),
                shear=float(rng.uniform(*bounds.shear)),
                brightness_delta=float(rng.uniform(*bounds.brightness_delta)),
                contrast_factor=float(rng.uniform(*bounds.contrast_factor)),
                seed=int(rng.integers(0, 2**64, dtype=np.uint64)),
            )
            entries.append(
                PlanEntry(
                    aug_id=f"{rec.id}-aug{j:03d}",
                    class_id=rec.age,
                    features=dict(rec.features),
                    spec=spec,
                )
            )
    return entries


@dataclass(frozen=True)
class FilterRange:
    """Union of train-quantile segments whose scores survive filtering."""

    segments: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        segs = tuple((float(lo), float(hi)) for lo, hi in self.segments)
        if not segs:
            raise ConfigError("filter range needs at least one segment")
        for lo, hi in segs:
            if not (0.0 <= lo < hi <= 1.0):
                raise ConfigError(f"segment ({lo}, {hi}) must satisfy 0 <= lo < hi <= 1")
        segs = tuple(sorted(segs))
        for (_, prev_hi), (next_lo, _) in zip(segs, segs[1:]):
            if next_lo < prev_hi:
                raise ConfigError(f"filter segments overlap at {next_lo}")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def parse(cls, text: str) -> "FilterRange":
        """Parse "0.05:1.0" or "0.0:0.05,0.95:1.0" into a FilterRange."""
        segments = []
        for part in text.split(","):
            try:
                lo, hi = part.split(":")
                segments.append((float(lo), float(hi)))
            except ValueError as exc:
                raise ConfigError(f"cannot parse filter segment {part!r}") from exc
        return cls(segments=tuple(segments))


@dataclass
class FilterOutcome:
    kept: tuple[str, ...]
    cutoffs: tuple[tuple[float, float], ...]


def filter_by_llr(
    scores: Sequence[LlrScore], model: OodModel, frange: FilterRange
) -> FilterOutcome:
    """Keep scores inside any segment's resolved train-quantile cutoffs.

    Segment bounds are inclusive on both ends; a ``0.0`` lower quantile
    means unbounded below and a ``1.0`` upper quantile unbounded above, so
    the full range [0, 1] keeps everything regardless of where scores sit
    relative to the training extremes.
    """
    if not scores:
        raise DataError("no scores to filter")
    cutoffs = []
    for lo, hi in frange.segments:
        lo_abs = float("-inf") if lo == 0.0 else train_quantile(model, lo)
        hi_abs = float("inf") if hi == 1.0 else train_quantile(model, hi)
        cutoffs.append((lo_abs, hi_abs))
    kept = tuple(
        s.id
        for s in scores
        if any(lo_abs <= s.llr <= hi_abs for lo_abs, hi_abs in cutoffs)
    )
    return FilterOutcome(kept=kept, cutoffs=tuple(cutoffs))


@dataclass
class SampleResult:
    selected: tuple[str, ...]
    shortfalls: dict[tuple[int, str], int]


def sample_balanced(
    kept: Mapping[tuple[int, str], Sequence[str]],
    budget: int,
    seed: int,
) -> SampleResult:
    """Draw a budget-sized, class- then state-balanced subset of kept ids.

    The budget splits evenly over classes (floor division; the remainder
    goes one each to the classes with the most kept entries, ties to the
    smaller class id). Within a class it splits evenly over states with the
    curation redistribution rule: states are visited in ascending kept
    order, short states surrender their shortfall to the unvisited ones
    (integer division, remainder to the final state), and a shortfall at
    the final state is recorded. Draws are uniform without replacement from
    one Philox stream (label ``"augment.sample"``).
    """
    if budget < 0:
        raise ConfigError(f"budget must be non-negative, got {budget}")
    if budget == 0:
        return SampleResult(selected=(), shortfalls={})
    if not kept:
        raise DataError("nothing to sample from")
    classes = sorted({c for c, _ in kept})
    totals = {
        c: sum(len(kept[key]) for key in kept if key[0] == c) for c in classes
    }
    base, leftover = divmod(budget, len(classes))
    bonus_order = sorted(classes, key=lambda c: (-totals[c], c))
    budget_by_class = {c: base for c in classes}
    for c in bonus_order[:leftover]:
        budget_by_class[c] += 1

    rng = rng_for(seed, "augment.sample")
    selected: list[str] = []
    shortfalls: dict[tuple[int, str], int] = {}
    for cls in classes:
        class_budget = budget_by_class[cls]
        if class_budget == 0:
            continue
        states = sorted(s for c, s in kept if c == cls)
        n_states = len(states)
        s_base, s_leftover = divmod(class_budget, n_states)
        visit = sorted(states, key=lambda s: (len(kept[(cls, s)]), s))
        targets = [s_base] * (n_states - s_leftover) + [s_base + 1] * s_leftover
        for i, state in enumerate(visit):
            avail = list(kept[(cls, state)])
            target = targets[i]
            if len(avail) <= target:
                selected.extend(avail)
                remain = target - len(avail)
                rest = n_states - i - 1
                if remain and rest:
                    each, extra = divmod(remain, rest)
                    for j in range(i + 1, n_states):
                        targets[j] += each
                    targets[-1] += extra
                elif remain:
                    shortfalls[(cls, state)] = remain
            else:
                idx = rng.choice(len(avail), size=target, replace=False)
                selected.extend(avail[i2] for i2 in sorted(idx))
    return SampleResult(selected=tuple(selected), shortfalls=shortfalls)


# ---------------------------------------------------------------------------
# plan and report files


def write_plan(entries: Sequence[PlanEntry], path: str) -> None:
    """Plan file: one JSON object per line, canonical key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            obj = {
                "aug_id": e.aug_id,
                "source_id": e.spec.source_id,
                "class": e.class_id,
                "features": dict(sorted(e.features.items())),
                "rotation_deg": e.spec.rotation_deg,
                "translate_frac": list(e.spec.translate_frac),
                "scale": e.spec.scale,
                "shear": e.spec.shear,
                "brightness_delta": e.spec.brightness_delta,
                "contrast_factor": e.spec.contrast_factor,
                "seed": e.spec.seed,
            }
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def read_plan(path: str) -> list[PlanEntry]:
    entries: list[PlanEntry] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON, line {line_no}: {exc.msg}") from exc
            try:
                spec = TransformSpec(
                    source_id=obj["source_id"],
                    rotation_deg=float(obj["rotation_deg"]),
                    translate_frac=tuple(obj["translate_frac"]),
                    scale=float(obj["scale"]),
                    shear=float(obj["shear"]),
                    brightness_delta=float(obj["brightness_delta"]),
                    contrast_factor=float(obj["contrast_factor"]),
                    seed=int(obj["seed"]),
                )
                entry = PlanEntry(
                    aug_id=str(obj["aug_id"]),
                    class_id=int(obj["class"]),
                    features={str(k): str(v) for k, v in obj["features"].items()},
                    spec=spec,
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"malformed plan row, line {line_no}: {exc}") from exc
            if entry.aug_id in seen:
                raise DataError(
                    f"duplicate aug_id '{entry.aug_id}', lines "
                    f"{seen[entry.aug_id]} and {line_no}"
                )
            seen[entry.aug_id] = line_no
            entries.append(entry)
    return entries


def write_filter_report(
    scores: Sequence[LlrScore], kept: set[str], path: str
) -> None:
    """Filter report CSV: aug_id,llr,kept (kept is 0/1), score order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("aug_id,llr,kept\n")
        for s in scores:
            fh.write(f"{s.id},{s.llr!r},{1 if s.id in kept else 0}\n")


def read_filter_report(path: str) -> list[tuple[str, float, bool]]:
    out: list[tuple[str, float, bool]] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "aug_id,llr,kept":
            raise DataError(f"unexpected filter report header: {header!r}")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != 3 or parts[2] not in ("0", "1"):
                raise DataError(f"malformed filter row, line {line_no}")
            out.append((parts[0], float(parts[1]), parts[2] == "1"))
    return out
