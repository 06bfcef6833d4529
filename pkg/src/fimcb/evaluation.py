"""Accuracy, per-antibody true-positive rates and the color-mode comparison report."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .dataset import Manifest, Stress

TIE_NOTE = ("[x] marks the best value of a column, (x) the second best. "
            "Tied best values are all marked best and no second best is marked; "
            "tied second-best values are all marked second.")


@dataclass(frozen=True)
class Prediction:
    id: str
    predicted: Stress
    true: Stress

    def __post_init__(self):
        object.__setattr__(self, "predicted", Stress(self.predicted))
        object.__setattr__(self, "true", Stress(self.true))

    @property
    def correct(self) -> bool:
        return self.predicted == self.true


def accuracy(preds) -> float:
    preds = list(preds)
    if not preds:
        raise ValueError("accuracy of an empty prediction list")
    return sum(p.correct for p in preds) / len(preds)


def per_antibody_tpr(preds, manifest: Manifest, stress: Stress | str | None = None) -> dict[str, float]:
    """Fraction of each antibody's images whose stress source is predicted correctly.

    With ``stress`` set, only images of that true stress class are counted.
    """
    index = manifest.by_id()
    hits: dict[str, list[int]] = {}
    for p in preds:
        try:
            rec = index[p.id]
        except KeyError:
            raise KeyError(f"prediction for unknown record id {p.id!r}") from None
        if stress is not None and rec.stress != Stress(stress):
            continue
        tally = hits.setdefault(rec.antibody, [0, 0])
        tally[0] += p.correct
        tally[1] += 1
    return {ab: c / n for ab, (c, n) in sorted(hits.items(), key=lambda kv: _antibody_key(kv[0]))}


def _antibody_key(label: str):
    digits = "".join(ch for ch in label if ch.isdigit())
    return (label.rstrip("0123456789"), int(digits) if digits else -1, label)


def predictions_from_run(pairs, manifest: Manifest) -> list[Prediction]:
    """Build predictions from ``[record id, predicted stress]`` pairs."""
    index = manifest.by_id()
    out = []
    for rec_id, label in pairs:
        if rec_id not in index:
            raise KeyError(f"prediction for unknown record id {rec_id!r}")
        out.append(Prediction(rec_id, label, index[rec_id].stress))
    return out


def mark_extremes(values) -> list[str]:
    """'best' / 'second' / '' per value; ``None`` entries are never marked."""
    present = sorted({v for v in values if v is not None}, reverse=True)
    if not present:
        return ["" for _ in values]
    top = present[0]
    n_top = sum(v == top for v in values)
    second = present[1] if len(present) > 1 and n_top == 1 else None
    return ["best" if v == top else "second" if (second is not None and v == second) else ""
            for v in values]


@dataclass
class Report:
    columns: list[str]  # "overall", then "heat:<antibody>", then "mechanical:<antibody>"
    rows: list[tuple[str, list[float | None]]]  # (mode, values)
    marks: list[list[str]]  # per row, per column


def build_report(preds_by_mode: dict[str, list[Prediction]], manifest: Manifest) -> Report:
    if not preds_by_mode:
        raise ValueError("report needs at least one color mode")
    tables = {}
    for mode, preds in preds_by_mode.items():
        tables[mode] = {"overall": accuracy(preds)}
        for stress in Stress:
            for ab, tpr in per_antibody_tpr(preds, manifest, stress).items():
                tables[mode][f"{stress.value}:{ab}"] = tpr
    columns = ["overall"]
    for stress in Stress:
        abs_ = {c.split(":", 1)[1] for t in tables.values() for c in t if c.startswith(stress.value + ":")}
        columns += [f"{stress.value}:{ab}" for ab in sorted(abs_, key=_antibody_key)]
    rows = [(mode, [tables[mode].get(c) for c in columns]) for mode in preds_by_mode]
    per_col = [mark_extremes([vals[j] for _, vals in rows]) for j in range(len(columns))]
    marks = [[per_col[j][i] for j in range(len(columns))] for i in range(len(rows))]
    return Report(columns, rows, marks)


def _cell(value, mark) -> str:
    if value is None:
        return "-"
    text = f"{100 * value:.1f}"
    return f"[{text}]" if mark == "best" else f"({text})" if mark == "second" else f" {text} "


def render_text(report: Report, title: str = "") -> str:
    header = ["mode"] + report.columns
    body = [[mode] + [_cell(v, m) for v, m in zip(vals, marks)]
            for (mode, vals), marks in zip(report.rows, report.marks)]
    widths = [max(len(r[j]) for r in [header] + body) for j in range(len(header))]
    lines = [title] if title else []
    lines.append("  ".join(h.rjust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in body]
    lines += ["", "Values are percentages; columns after 'overall' are per-antibody TPR by true stress.", TIE_NOTE]
    return "\n".join(lines) + "\n"


def render_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mode"] + [x for c in report.columns for x in (c, c + "_mark")])
    for (mode, vals), marks in zip(report.rows, report.marks):
        cells = []
        for v, m in zip(vals, marks):
            cells += ["" if v is None else f"{v:.6f}", m]
        writer.writerow([mode] + cells)
    return buf.getvalue()


def render_report(results, preds_by_mode: dict[str, list[Prediction]] | None, manifest: Manifest,
                  fmt: str = "text") -> str:
    """Render the mode comparison as ``text`` or ``csv``.

    ``results`` maps mode to GridResult; when ``preds_by_mode`` is None the
    predictions of each grid's best run are used.
    """
    if preds_by_mode is None:
        preds_by_mode = {mode: predictions_from_run(g.best.predictions, manifest) for mode, g in results.items()}
    report = build_report(preds_by_mode, manifest)
    if fmt == "csv":
        return render_csv(report)
    if fmt == "text":
        return render_text(report, "Best run per color mode: accuracy and per-antibody TPR")
    raise ValueError(f"unknown report format {fmt!r}")
