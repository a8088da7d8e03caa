"""Figure rendering for the model CLI's CSV outputs.

Three panels are understood: the adjustment sweep under each valuation
convention (``tva_true``, ``tva_fake``) and the contagion-spike trace from
a verification report (``spike``).  The renderer draws exactly what the
CSV contains; it never recomputes a statistic, so the primary component
stays the single source of numerical truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be fixed first)

__all__ = ["PANELS", "PlotSpec", "RenderError", "build_figure", "render"]

PANELS = ("tva_true", "tva_fake", "spike")

_TVA_HEADER = ("rho", "lambda_bank", "mode", "tva", "se")
_REPORT_HEADER = ("name", "estimate", "se", "target", "z", "verdict")
_TITLES = {"tva_true": "true valuation (all defaults priced)",
           "tva_fake": "fake valuation (reference names only)",
           "spike": "intensity jump at a reference default"}
_SPIKE_PREFIX = "spike/median/rho="


class RenderError(ValueError):
    """Input CSV does not match the published interface."""


@dataclass(frozen=True)
class PlotSpec:
    """One panel: which CSV to read, how to read it, where the image goes."""

    input_csv: Path
    output_image: Path
    panel: str

    def __post_init__(self) -> None:
        if self.panel not in PANELS:
            raise RenderError(f"unknown panel {self.panel!r}; "
                              f"choose from {', '.join(PANELS)}")


def _read_rows(path: Path, header: tuple[str, ...]) -> list[dict]:
    try:
        with open(path, newline="") as handle:
            reader = csv.reader(handle)
            try:
                found = next(reader)
            except StopIteration:
                raise RenderError(f"{path}: file is empty") from None
            for column in header:
                if column not in found:
                    raise RenderError(f"{path}: missing column {column!r}")
            for column in found:
                if column not in header:
                    raise RenderError(f"{path}: unexpected column {column!r}")
            if tuple(found) != header:
                raise RenderError(f"{path}: columns out of order; expected "
                                  f"{','.join(header)}")
            rows = [dict(zip(header, line)) for line in reader if line]
    except OSError as err:
        raise RenderError(f"{path}: {err.strerror}") from None
    if not rows:
        raise RenderError(f"{path}: no data rows")
    return rows


def _tva_series(path: Path, mode: str) -> dict[float, list[tuple[float, ...]]]:
    """Per bank-hazard level: (rho, tva, se) points for one mode."""
    series: dict[float, list[tuple[float, ...]]] = {}
    for row in _read_rows(path, _TVA_HEADER):
        if row["mode"] != mode:
            continue
        try:
            point = (float(row["rho"]), float(row["tva"]), float(row["se"]))
            level = float(row["lambda_bank"])
        except ValueError:
            raise RenderError(f"{path}: non-numeric value in row {row}") from None
        series.setdefault(level, []).append(point)
    if not series:
        raise RenderError(f"{path}: no rows with mode {mode!r}")
    for level, points in series.items():
        points.sort()
        if len({rho for rho, _, _ in points}) < 2:
            raise RenderError(f"{path}: need at least 2 correlation points, "
                              f"level {level:g} has {len(points)}")
    return series


def _spike_series(path: Path) -> list[tuple[float, float, float]]:
    """(rho, median ratio, se) points from a verification report."""
    points = []
    for row in _read_rows(path, _REPORT_HEADER):
        if not row["name"].startswith(_SPIKE_PREFIX):
            continue
        try:
            rho = float(row["name"][len(_SPIKE_PREFIX):])
            points.append((rho, float(row["estimate"]), float(row["se"])))
        except ValueError:
            raise RenderError(f"{path}: non-numeric value in row {row}") from None
    if len({rho for rho, _, _ in points}) < 2:
        raise RenderError(f"{path}: need at least 2 correlation points, "
                          f"found {len(points)}")
    points.sort()
    return points


def _draw(ax, spec: PlotSpec) -> None:
    if spec.panel == "spike":
        points = _spike_series(spec.input_csv)
        rho, est, se = zip(*points)
        ax.errorbar(rho, est, yerr=se, marker="o", capsize=3,
                    label="median jump ratio")
        ax.set_ylabel("intensity ratio")
    else:
        mode = spec.panel.removeprefix("tva_")
        series = _tva_series(spec.input_csv, mode)
        for level in sorted(series):
            rho, est, se = zip(*series[level])
            ax.errorbar(rho, est, yerr=se, marker="o", capsize=3,
                        label=f"bank hazard {level:g}")
        ax.set_ylabel("TVA")
    ax.set_xlabel(r"$\varrho$")
    ax.set_title(_TITLES[spec.panel])
    ax.legend()
    ax.grid(True, alpha=0.3)


def build_figure(specs: list[PlotSpec]):
    """One axes per spec, side by side, sharing the y scale when the
    panels show the same quantity."""
    if not specs:
        raise RenderError("nothing to draw")
    share = all(spec.panel != "spike" for spec in specs)
    fig, axes = plt.subplots(1, len(specs), figsize=(6 * len(specs), 4.5),
                             sharey=share, squeeze=False)
    for ax, spec in zip(axes[0], specs):
        _draw(ax, spec)
    fig.tight_layout()
    return fig


def render(spec: PlotSpec, second: PlotSpec | None = None) -> None:
    """Write the figure for one spec, optionally paired with a second
    panel on the right."""
    specs = [spec] if second is None else [spec, second]
    fig = build_figure(specs)
    try:
        fig.savefig(spec.output_image, dpi=150)
    finally:
        plt.close(fig)
