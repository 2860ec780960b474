"""Accuracy and group-fairness metrics over per-sample age predictions.

A prediction set is fair at an age when every pair of demographic states
receives (strictly) similar mean predicted ages there: the pair gap must
stay below half the tolerance. The fairness score is the fraction of
evaluable ages at which all pairs pass; an age missing samples for any
state cannot be evaluated and is skipped, not failed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Sequence

from .errors import ConfigError, DataError

DEFAULT_TOLERANCE = 3.0


@dataclass(frozen=True)
class Prediction:
    """One scored sample: true age, predicted age, demographic states."""

    id: str
    actual_age: int
    predicted_age: float
    features: Mapping[str, str]


@dataclass
class FairnessReport:
    """fairness_score() output for one feature."""

    feature: str
    tolerance: float
    score: float
    per_age_means: dict[int, dict[str, float]]
    per_age_fair: dict[int, bool]
    evaluated_ages: tuple[int, ...]
    skipped_ages: tuple[int, ...]


def mae(predictions: Sequence[Prediction]) -> float:
    """Mean absolute error of predicted vs actual age."""
    if not predictions:
        raise DataError("no predictions given")
    return sum(abs(p.predicted_age - p.actual_age) for p in predictions) / len(
        predictions
    )


def _state_means(
    predictions: Sequence[Prediction], feature: str
) -> tuple[list[str], dict[int, dict[str, float]]]:
    """All states of `feature`, and mean predicted age per (age, state)."""
    for p in predictions:
        if feature not in p.features:
            raise DataError(f"prediction '{p.id}' lacks feature '{feature}'")
    states = sorted({p.features[feature] for p in predictions})
    sums: dict[int, dict[str, list[float]]] = {}
    for p in predictions:
        sums.setdefault(p.actual_age, {}).setdefault(
            p.features[feature], []
        ).append(p.predicted_age)
    means = {
        age: {state: sum(v) / len(v) for state, v in sorted(by_state.items())}
        for age, by_state in sorted(sums.items())
    }
    return states, means


def fairness_score(
    predictions: Sequence[Prediction],
    feature: str,
    tolerance: float = DEFAULT_TOLERANCE,
) -> FairnessReport:
    """Fraction of evaluable ages at which all state pairs are treated alike.

    A pair of states is fair at an age iff the absolute difference of their
    mean predicted ages is strictly below tolerance/2; the age is fair iff
    every pair is. Ages lacking samples for at least one state of the
    feature are excluded from the denominator and reported as skipped.
    """
    if not predictions:
        raise DataError("no predictions given")
    if tolerance <= 0:
        raise ConfigError(f"tolerance must be positive, got {tolerance}")
    states, means = _state_means(predictions, feature)
    if len(states) < 2:
        raise DataError(
            f"feature '{feature}' has {len(states)} state(s); need at least 2"
        )
    per_age_fair: dict[int, bool] = {}
    skipped: list[int] = []
    for age, by_state in means.items():
        if len(by_state) < len(states):
            skipped.append(age)
            continue
        per_age_fair[age] = all(
            abs(by_state[a] - by_state[b]) < tolerance / 2.0
            for a, b in combinations(states, 2)
        )
    if not per_age_fair:
        raise DataError(f"no age has samples for every state of '{feature}'")
    score = sum(per_age_fair.values()) / len(per_age_fair)
    return FairnessReport(
        feature=feature,
        tolerance=tolerance,
        score=score,
        per_age_means={age: means[age] for age in per_age_fair},
        per_age_fair=per_age_fair,
        evaluated_ages=tuple(per_age_fair),
        skipped_ages=tuple(skipped),
    )


def mean_distance(
    predictions: Sequence[Prediction], feature: str
) -> dict[int, float]:
    """Worst pairwise gap of per-state mean predicted age, by age.

    Ages with fewer than two states present are omitted.
    """
    if not predictions:
        raise DataError("no predictions given")
    _, means = _state_means(predictions, feature)
    out: dict[int, float] = {}
    for age, by_state in means.items():
        if len(by_state) < 2:
            continue
        out[age] = max(
            abs(x - y) for x, y in combinations(by_state.values(), 2)
        )
    return out


# ---------------------------------------------------------------------------
# prediction files

_CORE_COLUMNS = ("id", "actual_age", "predicted_age")


def read_predictions(
    path: str, label_range: tuple[int, int] = (0, 100)
) -> list[Prediction]:
    """Read a prediction CSV: id,actual_age,predicted_age,<feature...>."""
    out: list[Prediction] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("prediction file is empty") from None
        if tuple(header[:3]) != _CORE_COLUMNS:
            raise DataError(
                f"prediction header must start with {','.join(_CORE_COLUMNS)}, "
                f"got {header[:3]}"
            )
        feature_names = header[3:]
        if len(set(feature_names)) != len(feature_names):
            raise DataError("duplicate feature column in prediction header")
        lo, hi = label_range
        seen: dict[str, int] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"wrong column count, line {line_no}")
            rid = row[0]
            if not rid:
                raise DataError(f"empty id, line {line_no}")
            if rid in seen:
                raise DataError(
                    f"duplicate id '{rid}', lines {seen[rid]} and {line_no}"
                )
            seen[rid] = line_no
            try:
                actual = int(row[1])
                predicted = float(row[2])
            except ValueError as exc:
                raise DataError(f"malformed row, line {line_no}: {exc}") from exc
            if not lo <= actual <= hi:
                raise DataError(
                    f"age {actual} out of range [{lo}, {hi}], line {line_no}"
                )
            if not math.isfinite(predicted):
                raise DataError(f"non-finite prediction, line {line_no}")
            features = dict(zip(feature_names, row[3:]))
            if any(not v for v in features.values()):
                raise DataError(f"missing feature value, line {line_no}")
            out.append(Prediction(rid, actual, predicted, features))
    if not out:
        raise DataError("prediction file has no rows")
    return out


def write_predictions(predictions: Sequence[Prediction], path: str) -> None:
    if not predictions:
        raise DataError("no predictions given")
    feature_names = sorted(predictions[0].features)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(_CORE_COLUMNS) + feature_names)
        for p in predictions:
            writer.writerow(
                [p.id, p.actual_age, repr(p.predicted_age)]
                + [p.features[f] for f in feature_names]
            )


def write_fairness_csv(
    report: FairnessReport, distances: Mapping[int, float], path: str
) -> None:
    """Flat per-age table: state means, worst gap, fair flag."""
    states = sorted(
        {s for by_state in report.per_age_means.values() for s in by_state}
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["age"] + [f"mean_{s}" for s in states] + ["max_distance", "fair"]
        )
        for age in report.evaluated_ages:
            means = report.per_age_means[age]
            writer.writerow(
                [age]
                + [repr(means[s]) for s in states]
                + [repr(distances.get(age, 0.0)), int(report.per_age_fair[age])]
            )
