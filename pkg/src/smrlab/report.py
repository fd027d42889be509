"""
Deterministic experiment outputs: CSV tables, a markdown report and SVG plots.

Nothing time- or host-dependent is written, so identical inputs give
identical bytes. Floats are written with ``repr`` in CSV files and with a
fixed significant-digit format in the report.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = ["Check", "Table", "ExperimentResult", "write_outputs", "fmt",
           "EXIT_OK", "EXIT_MISSED", "EXIT_CONFIG", "EXIT_INCONCLUSIVE"]

EXIT_OK, EXIT_MISSED, EXIT_CONFIG, EXIT_INCONCLUSIVE = 0, 1, 2, 3


def fmt(x, digits: int = 6) -> str:
    """Fixed-format number for the report."""
    if isinstance(x, (bool, np.bool_)):
        return "yes" if x else "no"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, complex):
        return f"{fmt(x.real, digits)}{'+' if x.imag >= 0 else '-'}{fmt(abs(x.imag), digits)}i"
    if x is None:
        return "-"
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{digits}g}"


@dataclass
class Check:
    """One acceptance window."""

    name: str
    value: float
    lo: Optional[float]
    hi: Optional[float]
    passed: bool
    note: str = ""

    @classmethod
    def window(cls, name, value, lo=None, hi=None, note=""):
        ok = value is not None and not (isinstance(value, float) and math.isnan(value))
        if ok and lo is not None:
            ok = value >= lo
        if ok and hi is not None:
            ok = value <= hi
        return cls(name, value, lo, hi, bool(ok), note)

    def describe(self) -> str:
        if self.lo is not None and self.hi is not None:
            w = f"[{fmt(self.lo)}, {fmt(self.hi)}]"
        elif self.hi is not None:
            w = f"<= {fmt(self.hi)}"
        elif self.lo is not None:
            w = f">= {fmt(self.lo)}"
        else:
            w = "-"
        return w


@dataclass
class Table:
    """Rows for one CSV file (``None`` file name: report only)."""

    title: str
    columns: tuple
    rows: list = field(default_factory=list)
    filename: Optional[str] = None


@dataclass
class ExperimentResult:
    """Everything an experiment emits."""

    experiment: str
    config: dict
    scope_notes: list
    tables: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    plots: list = field(default_factory=list)      # (name, callable(ax)) pairs
    inconclusive: bool = False

    @property
    def exit_code(self) -> int:
        # noisy estimates make window verdicts unreliable, so they take precedence
        if self.inconclusive:
            return EXIT_INCONCLUSIVE
        if any(not c.passed for c in self.checks):
            return EXIT_MISSED
        return EXIT_OK

    def table(self, filename: str) -> Table:
        for t in self.tables:
            if t.filename == filename:
                return t
        raise KeyError(filename)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _csv_value(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, complex):
        return repr(v)
    return str(v)


def _csv_bytes(t: Table) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(t.columns)
    for r in t.rows:
        w.writerow([_csv_value(v) for v in r])
    return buf.getvalue().encode()


def _config_lines(cfg: dict, prefix=""):
    out = []
    for k in sorted(cfg):
        v = cfg[k]
        if isinstance(v, dict):
            out.extend(_config_lines(v, prefix + k + "."))
        elif k == "output_dir" or k == "threads":
            continue                    # do not affect results
        else:
            out.append(f"- `{prefix}{k}` = `{v}`")
    return out


def render_report(res: ExperimentResult) -> str:
    """Markdown summary of a result."""
    L = [f"# smrlab report: {res.experiment}", ""]
    status = {EXIT_OK: "all acceptance windows met", EXIT_MISSED: "acceptance window missed",
              EXIT_INCONCLUSIVE: "inconclusive (Monte Carlo noise)"}[res.exit_code]
    L += [f"Status: **{status}** (exit code {res.exit_code})", ""]
    L += ["## Parameter scope", ""]
    if res.scope_notes:
        L += ["Out of the range covered by the theory (p in (2, inf), q in [2, inf), "
              "alpha in [0, 1/p]):", ""]
        L += [f"- {n}" for n in res.scope_notes]
    else:
        L.append("All parameters lie in the range covered by the theory "
                 "(p in (2, inf), q in [2, inf), alpha in [0, 1/p]).")
    L += ["", "## Configuration", ""] + _config_lines(res.config) + [""]
    if res.checks:
        L += ["## Acceptance windows", "",
              "Windows are empirical choices, not constants from the theory.", "",
              "| check | value | window | result | note |", "|---|---|---|---|---|"]
        for c in res.checks:
            L.append(f"| {c.name} | {fmt(c.value)} | {c.describe()} | "
                     f"{'pass' if c.passed else 'FAIL'} | {c.note} |")
        L.append("")
    if res.flags:
        L += ["## Flags", ""] + [f"- {f}" for f in res.flags] + [""]
    for t in res.tables:
        L += [f"## {t.title}", ""]
        if t.filename:
            L += [f"File: `{t.filename}`", ""]
        L.append("| " + " | ".join(t.columns) + " |")
        L.append("|" + "---|" * len(t.columns))
        for r in t.rows:
            L.append("| " + " | ".join(fmt(v) if not isinstance(v, str) else v for v in r) + " |")
        L.append("")
    if res.notes:
        L += ["## Notes", ""] + [f"- {n}" for n in res.notes] + [""]
    if res.plots:
        L += ["## Plots", ""] + [f"- `plots/{name}.svg`" for name, _ in res.plots] + [""]
    return "\n".join(L)


def _svg_bytes(draw) -> bytes:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    with matplotlib.rc_context({"svg.hashsalt": "smrlab", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        draw(ax)
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def write_outputs(res: ExperimentResult, out_dir, plots: bool = True) -> dict:
    """Write CSVs, ``report.md`` and ``plots/*.svg``; returns name -> bytes."""
    files = {}
    for t in res.tables:
        if t.filename:
            files[t.filename] = _csv_bytes(t)
    files["report.md"] = render_report(res).encode()
    if plots:
        for name, draw in res.plots:
            files[f"plots/{name}.svg"] = _svg_bytes(draw)
    os.makedirs(out_dir, exist_ok=True)
    for name, data in files.items():
        path = os.path.join(out_dir, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(data)
    return files
