"""Balanced pool curation across ages, demographic states, and sources.

Given a pooled manifest drawn from several source datasets, curation picks a
subset in which, at every age, each state of a chosen demographic feature
(for example gender) contributes the same number of samples, and sources
contribute as evenly as availability allows. The per-age sample target is
derived from the pool itself: the scarcest state at that age sets the raw
target, clamped into a band computed from per-state count quantiles so that
rare ages are not starved and abundant ages do not dominate.

Selection protocol
------------------
The plan is a pure function of (pool order, seed, config). Draws happen in
this exact order, one Philox stream per curate call (label ``"curate"``):

1. Ages ascending; within an age, priority-feature states lexicographic.
2. Per (age, state): sources ascending by their cell count, ties by source
   name. Each source's target starts at ``threshold // n_sources``; the
   division leftover goes one each to the *largest* sources (the tail of the
   visit order).
3. Visiting a source: if availability <= target, every record is taken and
   no draw is consumed; the shortfall is split over the not-yet-visited
   sources (integer division, remainder added to the final source). A
   shortfall at the final source is recorded as a deficit.
4. If availability exceeds the target, the cell is sampled without
   replacement. With further features in ``feature_priority``, records are
   grouped by their remaining-feature state combination (keys sorted);
   group quotas are proportional with largest-remainder rounding (ties to
   the smaller key), capped at group size, overflow handed one at a time to
   the group with the most spare capacity (ties to the smaller key). Groups
   are then drawn in key order; a group whose quota equals its size is taken
   whole without consuming a draw, otherwise one ``Generator.choice``
   without replacement is consumed per group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ConfigError, DataError
from .manifest import GroupKey, Record, group_counts
from .seeds import rng_for

DEFAULT_Q_LOW = 0.2
DEFAULT_Q_HIGH = 0.8


def nearest_rank_quantile(values: Sequence[float], q: float) -> float:
    """Return the ceil(q*n)-th smallest value (nearest-rank, no interpolation).

    Counts stay integers under this rule, so thresholds derived from it are
    always achievable sample sizes.
    """
    if len(values) == 0:
        raise DataError("quantile of empty sequence")
    if not 0.0 < q <= 1.0:
        raise ConfigError(f"quantile q out of range (0, 1], got {q}")
    n = len(values)
    x = q * n
    # Snap float noise: 0.07*100 = 7.000000000000001, whose ceil would
    # overshoot the decimal-exact rank by one.
    nearest = round(x)
    rank = int(nearest) if abs(x - nearest) < 1e-9 else math.ceil(x)
    rank = max(1, rank)
    return sorted(values)[rank - 1]


@dataclass(frozen=True)
class CurationConfig:
    """Knobs for curate(); quantiles bound the per-age threshold band."""

    feature_priority: tuple[str, ...]
    q_low: float = DEFAULT_Q_LOW
    q_high: float = DEFAULT_Q_HIGH
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.feature_priority:
            raise ConfigError("feature_priority must name at least one feature")
        object.__setattr__(self, "feature_priority", tuple(self.feature_priority))
        if not 0.0 < self.q_low < self.q_high <= 1.0:
            raise ConfigError(
                f"require 0 < q_low < q_high <= 1, got ({self.q_low}, {self.q_high})"
            )


@dataclass
class CurationPlan:
    """Result of curate(): the selection plus the audit that explains it."""

    selected_ids: tuple[str, ...]
    per_group_counts: dict[GroupKey, int]
    per_source_counts: dict[tuple[GroupKey, str], int]
    thresholds: dict[int, int]
    min_sample: int
    max_sample: int
    dropped_ages: tuple[int, ...]
    deficits: dict[tuple[int, str], int]


def compute_thresholds(
    counts: Mapping[tuple[int, str], int],
    q_low: float = DEFAULT_Q_LOW,
    q_high: float = DEFAULT_Q_HIGH,
) -> tuple[dict[int, int], int, int]:
    """Derive per-age selection thresholds from (age, state) cell counts.

    For each state the q_high quantile of its per-age counts is an upper
    candidate and the q_low quantile a lower candidate; the band is
    [max of lows, min of highs]. An age's raw threshold is its scarcest
    state's count, clamped into the band (upper clamp wins if the band is
    inverted). Returns (thresholds by age, min_sample, max_sample).
    """
    if not counts:
        raise DataError("no cell counts given")
    if not 0.0 < q_low < q_high <= 1.0:
        raise ConfigError(f"require 0 < q_low < q_high <= 1, got ({q_low}, {q_high})")
    for key, value in counts.items():
        if value < 0:
            raise DataError(f"negative count for cell {key}")
    ages = sorted({age for age, _ in counts})
    states = sorted({state for _, state in counts})
    highs: list[int] = []
    lows: list[int] = []
    for state in states:
        vec = [counts.get((age, state), 0) for age in ages]
        highs.append(int(nearest_rank_quantile(vec, q_high)))
        lows.append(int(nearest_rank_quantile(vec, q_low)))
    max_sample = min(highs)
    min_sample = max(lows)
    thresholds: dict[int, int] = {}
    for age in ages:
        raw = min(counts.get((age, state), 0) for state in states)
        thresholds[age] = min(max_sample, max(min_sample, raw))
    return thresholds, min_sample, max_sample


def _largest_remainder_quotas(
    sizes: dict[tuple[str, ...], int], m: int
) -> dict[tuple[str, ...], int]:
    """Proportional integer quotas summing to m, capped at group sizes."""
    total = sum(sizes.values())
    keys = sorted(sizes)
    quotas = {k: (m * sizes[k]) // total for k in keys}
    remainders = {k: (m * sizes[k]) % total for k in keys}
    short = m - sum(quotas.values())
    for k in sorted(keys, key=lambda k: (-remainders[k], k))[:short]:
        quotas[k] += 1
    overflow = 0
    for k in keys:
        if quotas[k] > sizes[k]:
            overflow += quotas[k] - sizes[k]
            quotas[k] = sizes[k]
    while overflow > 0:
        # most spare capacity wins; ties go to the smaller key
        spare = [(sizes[k] - quotas[k], k) for k in keys if quotas[k] < sizes[k]]
        best = sorted(spare, key=lambda t: (-t[0], t[1]))[0][1]
        quotas[best] += 1
        overflow -= 1
    return quotas


def _stratified_take(
    records: Sequence[Record], m: int, strat_features: Sequence[str], rng
) -> list[Record]:
    """Draw m records without replacement, proportionally over strata."""
    if m >= len(records):
        return list(records)
    if m == 0:
        return []
    if not strat_features:
        idx = rng.choice(len(records), size=m, replace=False)
        return [records[i] for i in sorted(idx)]
    groups: dict[tuple[str, ...], list[Record]] = {}
    for rec in records:
        key = tuple(rec.features[f] for f in strat_features)
        groups.setdefault(key, []).append(rec)
    quotas = _largest_remainder_quotas({k: len(v) for k, v in groups.items()}, m)
    chosen: list[Record] = []
    for key in sorted(groups):
        members = groups[key]
        want = quotas[key]
        if want == 0:
            continue
        if want == len(members):
            chosen.extend(members)
        else:
            idx = rng.choice(len(members), size=want, replace=False)
            chosen.extend(members[i] for i in sorted(idx))
    return chosen


def curate(pool: Sequence[Record], config: CurationConfig) -> CurationPlan:
    """Select a balanced subset of the pool (see module docstring for the
    full protocol). Ages whose clamped threshold is zero are dropped and
    listed in the plan audit; availability shortfalls become deficits, not
    errors.
    """
    if not pool:
        raise DataError("pool is empty")
    feature = config.feature_priority[0]
    for name in config.feature_priority:
        if any(name not in rec.features for rec in pool):
            raise DataError(f"feature '{name}' missing from pool records")
    sources = sorted({rec.source for rec in pool})
    states = sorted({rec.features[feature] for rec in pool})
    ages = sorted({rec.age for rec in pool})
    cells: dict[tuple[int, str, str], list[Record]] = {}
    counts: dict[tuple[int, str], int] = {}
    for rec in pool:
        state = rec.features[feature]
        cells.setdefault((rec.age, state, rec.source), []).append(rec)
        counts[(rec.age, state)] = counts.get((rec.age, state), 0) + 1

    thresholds, min_sample, max_sample = compute_thresholds(
        counts, config.q_low, config.q_high
    )
    rng = rng_for(config.seed, "curate")
    strat = list(config.feature_priority[1:])
    n_src = len(sources)
    selected: set[str] = set()
    dropped: list[int] = []
    deficits: dict[tuple[int, str], int] = {}

    for age in ages:
        threshold = thresholds[age]
        if threshold == 0:
            dropped.append(age)
            continue
        base, leftover = divmod(threshold, n_src)
        for state in states:
            visit = sorted(
                sources, key=lambda d: (len(cells.get((age, state, d), [])), d)
            )
            targets = [base] * (n_src - leftover) + [base + 1] * leftover
            for i, src in enumerate(visit):
                avail = cells.get((age, state, src), [])
                target = targets[i]
                if len(avail) <= target:
                    taken = avail
                    remain = target - len(avail)
                    rest = n_src - i - 1
                    if remain and rest:
                        each, extra = divmod(remain, rest)
                        for j in range(i + 1, n_src):
                            targets[j] += each
                        targets[-1] += extra
                    elif remain:
                        deficits[(age, state)] = deficits.get((age, state), 0) + remain
                else:
                    taken = _stratified_take(avail, target, strat, rng)
                selected.update(rec.id for rec in taken)

    kept = [rec for rec in pool if rec.id in selected]
    per_group, per_source = group_counts(kept)
    return CurationPlan(
        selected_ids=tuple(rec.id for rec in kept),
        per_group_counts=per_group,
        per_source_counts=per_source,
        thresholds=thresholds,
        min_sample=min_sample,
        max_sample=max_sample,
        dropped_ages=tuple(dropped),
        deficits=deficits,
    )
