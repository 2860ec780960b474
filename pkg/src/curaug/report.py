"""Self-contained SVG renderings of dataset and score distributions.

Deliberately hand-rolled string assembly: output bytes depend only on the
input numbers, never on a plotting library's version or the wall clock, so
report artifacts stay byte-identical across reruns.
"""

from __future__ import annotations

from typing import Mapping, Sequence

from .errors import DataError

_W, _H = 960, 360
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 50, 15, 25, 40


def _f(x: float) -> str:
    return f"{x:.2f}"


def _frame(title: str, body: list[str]) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="16" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{title}</text>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def age_histogram_svg(counts: Mapping[int, int], title: str = "samples per age") -> str:
    """One bar per age, height proportional to its sample count."""
    if not counts:
        raise DataError("no counts to plot")
    ages = sorted(counts)
    lo, hi = ages[0], ages[-1]
    span = hi - lo + 1
    peak = max(max(counts.values()), 1)
    plot_w = _W - _MARGIN_L - _MARGIN_R
    plot_h = _H - _MARGIN_T - _MARGIN_B
    bar_w = plot_w / span
    body = [
        f'<line x1="{_MARGIN_L}" y1="{_H - _MARGIN_B}" x2="{_W - _MARGIN_R}" '
        f'y2="{_H - _MARGIN_B}" stroke="black"/>'
    ]
    for age in ages:
        h = plot_h * counts[age] / peak
        x = _MARGIN_L + (age - lo) * bar_w
        y = _H - _MARGIN_B - h
        body.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(bar_w * 0.9)}" '
            f'height="{_f(h)}" fill="#4878a8"><title>age {age}: '
            f"{counts[age]}</title></rect>"
        )
    step = max(1, span // 12)
    for age in range(lo, hi + 1, step):
        x = _MARGIN_L + (age - lo + 0.45) * bar_w
        body.append(
            f'<text x="{_f(x)}" y="{_H - _MARGIN_B + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{age}</text>'
        )
    body.append(
        f'<text x="12" y="{_MARGIN_T + 10}" font-family="sans-serif" '
        f'font-size="10">{peak}</text>'
    )
    return _frame(title, body)


def _bin_counts(
    values: Sequence[float], lo: float, hi: float, bins: int
) -> list[int]:
    width = (hi - lo) / bins or 1.0
    out = [0] * bins
    for v in values:
        idx = min(int((v - lo) / width), bins - 1)
        out[max(idx, 0)] += 1
    return out


def llr_histogram_svg(
    train: Sequence[float],
    other: Sequence[float],
    bins: int = 40,
    title: str = "likelihood-ratio distributions",
) -> str:
    """Overlaid outline histograms of two score sets on a shared axis."""
    if not train or not other:
        raise DataError("need scores for both series")
    if bins < 1:
        raise DataError(f"bins must be positive, got {bins}")
    lo = min(min(train), min(other))
    hi = max(max(train), max(other))
    if hi == lo:
        hi = lo + 1.0
    plot_w = _W - _MARGIN_L - _MARGIN_R
    plot_h = _H - _MARGIN_T - _MARGIN_B
    series = [
        ("train", _bin_counts(train, lo, hi, bins), "#4878a8"),
        ("scored", _bin_counts(other, lo, hi, bins), "#c2443c"),
    ]
    peak = max(max(c) for _, c, _ in series) or 1
    body = [
        f'<line x1="{_MARGIN_L}" y1="{_H - _MARGIN_B}" x2="{_W - _MARGIN_R}" '
        f'y2="{_H - _MARGIN_B}" stroke="black"/>'
    ]
    for si, (name, counts, color) in enumerate(series):
        points = [f"{_MARGIN_L},{_f(_H - _MARGIN_B)}"]
        for i, c in enumerate(counts):
            x0 = _MARGIN_L + plot_w * i / bins
            x1 = _MARGIN_L + plot_w * (i + 1) / bins
            y = _H - _MARGIN_B - plot_h * c / peak
            points.append(f"{_f(x0)},{_f(y)}")
            points.append(f"{_f(x1)},{_f(y)}")
        points.append(f"{_f(_MARGIN_L + plot_w)},{_f(_H - _MARGIN_B)}")
        body.append(
            f'<polyline points="{" ".join(points)}" fill="{color}" '
            f'fill-opacity="0.25" stroke="{color}" stroke-width="1.5"/>'
        )
        body.append(
            f'<text x="{_W - 120}" y="{_MARGIN_T + 14 + 16 * si}" '
            f'font-family="sans-serif" font-size="11" fill="{color}">'
            f"{name} (n={len(train) if si == 0 else len(other)})</text>"
        )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = _MARGIN_L + plot_w * frac
        v = lo + (hi - lo) * frac
        body.append(
            f'<text x="{_f(x)}" y="{_H - _MARGIN_B + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{_f(v)}</text>'
        )
    return _frame(title, body)
