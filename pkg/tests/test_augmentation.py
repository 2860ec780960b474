from __future__ import annotations

import math

import pytest

from curaug.augmentation import (
    FilterRange,
    PlanEntry,
    TransformBounds,
    filter_by_llr,
    generate_specs,
    plan_ratios,
    read_filter_report,
    read_plan,
    sample_balanced,
    write_filter_report,
    write_plan,
)
from curaug.errors import ConfigError, DataError
from curaug.manifest import Record
from curaug.ood import LlrScore


def _rec(rid, age, state="m", source="srcA"):
    return Record(id=rid, source=source, age=age, features={"gender": state})


# ---------------------------------------------------------------------------
# ratio planning


def test_plan_ratios_caps_scarce_cells():
    counts = {(20, "m"): 30, (40, "m"): 100, (60, "m"): 400}
    table = plan_ratios(counts, feature="gender")
    assert table.median_num == 100
    assert table.mean_num == 177  # 530 / 3 rounded
    assert table.max_num == 400
    assert table.max_ratio == 3  # ceil(400 / 177)
    # the scarce cell wants ceil(100 / 30) = 4 but the cap wins
    assert table.ratios == {(20, "m"): 3, (40, "m"): 1, (60, "m"): 1}
    assert table.exact_median == 100.0
    assert table.exact_mean == pytest.approx(530 / 3)


def test_plan_ratios_uniform_pool_gets_ratio_one():
    counts = {(a, s): 50 for a in (20, 30) for s in ("f", "m")}
    table = plan_ratios(counts, feature="gender")
    assert table.max_ratio == 1
    assert set(table.ratios.values()) == {1}


def test_plan_ratios_median_rounds_ties_to_even():
    counts = {(a, "m"): n for a, n in zip((1, 2, 3, 4), (1, 2, 3, 8))}
    table = plan_ratios(counts, feature="gender")
    assert table.exact_median == 2.5
    assert table.median_num == 2
    assert table.exact_mean == 3.5
    assert table.mean_num == 4


def test_plan_ratios_zero_cell_warns():
    counts = {(20, "m"): 0, (30, "m"): 10}
    with pytest.warns(UserWarning, match="ratio 0"):
        table = plan_ratios(counts, feature="gender")
    assert table.ratios[(20, "m")] == 0
    assert table.zero_cells == ((20, "m"),)


def test_plan_ratios_bounds_property():
    import random

    rnd = random.Random(99)
    for _ in range(20):
        counts = {
            (age, st): rnd.randint(1, 500)
            for age in range(20, 30)
            for st in ("f", "m")
        }
        table = plan_ratios(counts, feature="gender")
        assert all(1 <= r <= table.max_ratio for r in table.ratios.values())
        biggest = max(counts, key=lambda c: counts[c])
        assert table.ratios[biggest] == 1


def test_plan_ratios_validation():
    with pytest.raises(DataError, match="no cell counts"):
        plan_ratios({}, feature="gender")
    with pytest.raises(DataError, match="negative count"):
        plan_ratios({(1, "m"): -1}, feature="gender")
    with pytest.raises(DataError, match="all cells are empty"):
        plan_ratios({(1, "m"): 0, (2, "m"): 0}, feature="gender")


# ---------------------------------------------------------------------------
# spec generation


def _small_table():
    # ratios: (20, m) -> 2, (40, m) -> 1
    return plan_ratios({(20, "m"): 1, (40, "m"): 4}, feature="gender")


def test_generate_specs_counts_and_ids():
    table = _small_table()
    records = [_rec("a", 20), _rec("b", 40)]
    entries = generate_specs(records, table, TransformBounds(), seed=7)
    assert [e.aug_id for e in entries] == ["a-aug000", "a-aug001", "b-aug000"]
    assert [e.spec.source_id for e in entries] == ["a", "a", "b"]
    assert [e.class_id for e in entries] == [20, 20, 40]
    assert entries[0].features == {"gender": "m"}


def test_generate_specs_respects_bounds():
    counts = {(25, "m"): 1}
    table = plan_ratios({(25, "m"): 1, (26, "m"): 40}, feature="gender")
    records = [_rec(f"r{i}", 25) for i in range(30)]
    bounds = TransformBounds()
    entries = generate_specs(records, table, bounds, seed=3)
    assert counts  # silence lint about the helper shape
    for e in entries:
        s = e.spec
        assert bounds.rotation_deg[0] <= s.rotation_deg <= bounds.rotation_deg[1]
        for t in s.translate_frac:
            assert bounds.translate_frac[0] <= t <= bounds.translate_frac[1]
        assert bounds.scale[0] <= s.scale <= bounds.scale[1]
        assert bounds.shear[0] <= s.shear <= bounds.shear[1]
        assert (
            bounds.brightness_delta[0]
            <= s.brightness_delta
            <= bounds.brightness_delta[1]
        )
        assert (
            bounds.contrast_factor[0] <= s.contrast_factor <= bounds.contrast_factor[1]
        )
        assert 0 <= s.seed < 2**64


def test_generate_specs_deterministic_and_seed_sensitive():
    table = _small_table()
    records = [_rec("a", 20), _rec("b", 40)]
    first = generate_specs(records, table, TransformBounds(), seed=11)
    again = generate_specs(records, table, TransformBounds(), seed=11)
    other = generate_specs(records, table, TransformBounds(), seed=12)
    assert first == again
    assert first != other
    # consecutive entries use fresh draws
    assert first[0].spec.rotation_deg != first[1].spec.rotation_deg


def test_generate_specs_zero_width_bounds_pin_parameters():
    table = _small_table()
    bounds = TransformBounds(
        rotation_deg=(5.0, 5.0),
        translate_frac=(0.0, 0.0),
        scale=(1.0, 1.0),
        shear=(0.0, 0.0),
        brightness_delta=(0.0, 0.0),
        contrast_factor=(1.0, 1.0),
    )
    entries = generate_specs([_rec("a", 20)], table, bounds, seed=1)
    assert all(e.spec.rotation_deg == 5.0 for e in entries)
    assert all(e.spec.scale == 1.0 for e in entries)


def test_generate_specs_errors():
    table = _small_table()
    with pytest.raises(DataError, match="unplanned cell"):
        generate_specs([_rec("a", 99)], table, TransformBounds(), seed=0)
    bare = Record(id="x", source="srcA", age=20, features={})
    with pytest.raises(DataError, match="lacks feature"):
        generate_specs([bare], table, TransformBounds(), seed=0)
    anon = plan_ratios({(20, "m"): 1})
    with pytest.raises(ConfigError, match="feature"):
        generate_specs([_rec("a", 20)], anon, TransformBounds(), seed=0)


def test_transform_bounds_validation():
    with pytest.raises(ConfigError, match="lo <= hi"):
        TransformBounds(rotation_deg=(10.0, -10.0))
    with pytest.raises(ConfigError, match="scale bounds must be positive"):
        TransformBounds(scale=(0.0, 1.1))
    with pytest.raises(ConfigError, match="contrast bounds"):
        TransformBounds(contrast_factor=(-0.1, 1.0))


# ---------------------------------------------------------------------------
# filtering


def test_filter_range_parse():
    assert FilterRange.parse("0.05:1.0").segments == ((0.05, 1.0),)
    both = FilterRange.parse("0.95:1.0,0.0:0.05")
    assert both.segments == ((0.0, 0.05), (0.95, 1.0))  # sorted
    with pytest.raises(ConfigError, match="cannot parse"):
        FilterRange.parse("0.05")
    with pytest.raises(ConfigError, match="cannot parse"):
        FilterRange.parse("a:b")


def test_filter_range_validation():
    with pytest.raises(ConfigError, match="at least one segment"):
        FilterRange(segments=())
    with pytest.raises(ConfigError, match="must satisfy"):
        FilterRange(segments=((0.5, 0.5),))
    with pytest.raises(ConfigError, match="must satisfy"):
        FilterRange(segments=((-0.1, 0.5),))
    with pytest.raises(ConfigError, match="must satisfy"):
        FilterRange(segments=((0.5, 1.2),))
    with pytest.raises(ConfigError, match="overlap"):
        FilterRange(segments=((0.0, 0.5), (0.4, 1.0)))
    # touching segments are fine
    FilterRange(segments=((0.0, 0.5), (0.5, 1.0)))


def _scored_model():
    """Model whose train scores are the half-integers 0.5 .. 99.5."""
    import numpy as np

    from tests.test_ood import _two_class_1d

    model = _two_class_1d()
    model.train_llr = np.arange(100, dtype=np.float64) + 0.5
    return model


def _scores(values):
    return [LlrScore(id=f"s{i}", llr=v, predicted_class=0) for i, v in enumerate(values)]


def test_filter_full_range_keeps_everything():
    model = _scored_model()
    scores = _scores([-1e6, 0.0, 50.0, 1e6])
    out = filter_by_llr(scores, model, FilterRange.parse("0.0:1.0"))
    assert out.kept == tuple(s.id for s in scores)
    assert out.cutoffs == ((-math.inf, math.inf),)


def test_filter_lower_tail_cut():
    model = _scored_model()
    scores = _scores(list(range(0, 101)))  # integers, no cutoff ties
    out = filter_by_llr(scores, model, FilterRange.parse("0.05:1.0"))
    # 5th smallest train score is 4.5, so integers >= 5 survive
    assert out.cutoffs == ((4.5, math.inf),)
    assert len(out.kept) == 96
    kept_values = {int(sid[1:]) for sid in out.kept}
    assert min(kept_values) == 5


def test_filter_band_bounds_are_inclusive():
    model = _scored_model()
    scores = _scores([4.4999, 4.5, 50.0, 94.5, 94.5001])
    out = filter_by_llr(scores, model, FilterRange.parse("0.05:0.95"))
    assert out.cutoffs == ((4.5, 94.5),)
    assert out.kept == ("s1", "s2", "s3")


def test_filter_complement_partitions():
    model = _scored_model()
    scores = _scores(list(range(0, 101)))
    mid = filter_by_llr(scores, model, FilterRange.parse("0.05:0.95"))
    tails = filter_by_llr(scores, model, FilterRange.parse("0.0:0.05,0.95:1.0"))
    assert set(mid.kept) | set(tails.kept) == {s.id for s in scores}
    assert set(mid.kept) & set(tails.kept) == set()


def test_filter_requires_scores():
    model = _scored_model()
    with pytest.raises(DataError, match="no scores"):
        filter_by_llr([], model, FilterRange.parse("0.0:1.0"))


# ---------------------------------------------------------------------------
# balanced sampling


def _ids(prefix, n):
    return [f"{prefix}{i}" for i in range(n)]


def test_sample_balanced_even_split():
    kept = {
        (20, "f"): _ids("a", 10),
        (20, "m"): _ids("b", 10),
        (30, "f"): _ids("c", 10),
        (30, "m"): _ids("d", 10),
    }
    result = sample_balanced(kept, budget=8, seed=5)
    assert len(result.selected) == 8
    assert len(set(result.selected)) == 8
    assert result.shortfalls == {}
    by_cell = {
        key: sum(1 for sid in result.selected if sid[0] == prefix)
        for key, prefix in zip(sorted(kept), "abcd")
    }
    assert set(by_cell.values()) == {2}


def test_sample_balanced_budget_zero():
    result = sample_balanced({(1, "m"): ["x"]}, budget=0, seed=0)
    assert result.selected == () and result.shortfalls == {}


def test_sample_balanced_remainder_goes_to_largest_class():
    kept = {(10, "m"): _ids("a", 10), (20, "m"): _ids("b", 20)}
    result = sample_balanced(kept, budget=5, seed=1)
    counts = {
        10: sum(1 for s in result.selected if s.startswith("a")),
        20: sum(1 for s in result.selected if s.startswith("b")),
    }
    assert counts == {10: 2, 20: 3}


def test_sample_balanced_remainder_ties_to_smaller_class():
    kept = {(10, "m"): _ids("a", 10), (20, "m"): _ids("b", 10)}
    result = sample_balanced(kept, budget=5, seed=1)
    counts = {
        10: sum(1 for s in result.selected if s.startswith("a")),
        20: sum(1 for s in result.selected if s.startswith("b")),
    }
    assert counts == {10: 3, 20: 2}


def test_sample_balanced_state_redistribution():
    kept = {(10, "f"): _ids("a", 1), (10, "m"): _ids("b", 100)}
    result = sample_balanced(kept, budget=20, seed=2)
    assert sum(1 for s in result.selected if s.startswith("a")) == 1
    assert sum(1 for s in result.selected if s.startswith("b")) == 19
    assert result.shortfalls == {}


def test_sample_balanced_final_state_shortfall():
    kept = {(10, "f"): _ids("a", 1), (10, "m"): _ids("b", 2)}
    result = sample_balanced(kept, budget=20, seed=2)
    assert sorted(result.selected) == ["a0", "b0", "b1"]
    assert result.shortfalls == {(10, "m"): 17}


def test_sample_balanced_class_shortfall_not_redistributed():
    kept = {(10, "m"): _ids("a", 1), (20, "m"): _ids("b", 100)}
    result = sample_balanced(kept, budget=10, seed=3)
    assert sum(1 for s in result.selected if s.startswith("a")) == 1
    assert sum(1 for s in result.selected if s.startswith("b")) == 5
    assert result.shortfalls == {(10, "m"): 4}


def test_sample_balanced_exact_budget_takes_everything():
    kept = {(10, "f"): _ids("a", 3), (10, "m"): _ids("b", 3)}
    result = sample_balanced(kept, budget=6, seed=4)
    assert sorted(result.selected) == sorted(_ids("a", 3) + _ids("b", 3))


def test_sample_balanced_deterministic_and_seed_sensitive():
    kept = {(10, "m"): _ids("a", 30)}
    first = sample_balanced(kept, budget=5, seed=6)
    again = sample_balanced(kept, budget=5, seed=6)
    other = sample_balanced(kept, budget=5, seed=7)
    assert first.selected == again.selected
    assert first.selected != other.selected
    assert set(first.selected) <= set(_ids("a", 30))


def test_sample_balanced_validation():
    with pytest.raises(ConfigError, match="non-negative"):
        sample_balanced({(1, "m"): ["x"]}, budget=-1, seed=0)
    with pytest.raises(DataError, match="nothing to sample"):
        sample_balanced({}, budget=1, seed=0)


# ---------------------------------------------------------------------------
# plan and report files


def test_plan_roundtrip(tmp_path):
    table = _small_table()
    records = [_rec("a", 20), _rec("b", 40)]
    entries = generate_specs(records, table, TransformBounds(), seed=9)
    path = str(tmp_path / "plan.jsonl")
    write_plan(entries, path)
    assert read_plan(path) == entries
    # rewriting is byte-identical
    first = open(path, "rb").read()
    write_plan(entries, path)
    assert open(path, "rb").read() == first


def test_read_plan_errors(tmp_path):
    path = str(tmp_path / "plan.jsonl")
    open(path, "w").write("not json\n")
    with pytest.raises(DataError, match="invalid JSON, line 1"):
        read_plan(path)
    open(path, "w").write('{"aug_id": "x"}\n')
    with pytest.raises(DataError, match="malformed plan row, line 1"):
        read_plan(path)
    table = _small_table()
    entries = generate_specs([_rec("a", 20)], table, TransformBounds(), seed=9)
    write_plan([entries[0], entries[0]], path)
    with pytest.raises(DataError, match="duplicate aug_id 'a-aug000', lines 1 and 2"):
        read_plan(path)


def test_filter_report_roundtrip(tmp_path):
    scores = _scores([1.25, -3.5, 42.0])
    path = str(tmp_path / "report.csv")
    write_filter_report(scores, kept={"s0", "s2"}, path=path)
    rows = read_filter_report(path)
    assert rows == [("s0", 1.25, True), ("s1", -3.5, False), ("s2", 42.0, True)]


def test_read_filter_report_errors(tmp_path):
    path = str(tmp_path / "report.csv")
    open(path, "w").write("nope\n")
    with pytest.raises(DataError, match="unexpected filter report header"):
        read_filter_report(path)
    open(path, "w").write("aug_id,llr,kept\nx,1.0,yes\n")
    with pytest.raises(DataError, match="malformed filter row, line 2"):
        read_filter_report(path)
