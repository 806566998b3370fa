"""Render the evaluation figure suite from persisted CSV files.

Four figure kinds are supported, each tied to one CSV schema produced by
the evaluation pipeline:

* ``rates`` - the two error-exponent curves (plus the likelihood-ratio
  comparison columns when present) against the threshold;
* ``are`` - asymptotic relative efficiencies against the model parameter;
* ``ratio_sweep`` - expected-sample-size ratios against the SPRT over a
  level grid, with the closed-form bound envelopes overlaid;
* ``robustness`` - expected sample size per test against the true
  parameter, with the two design points highlighted on the x-axis.

The renderer never calls into the test-design package: the CSV column
order is the contract, and any missing or re-ordered column fails fast
with a column diff.  Output is always a vector image; rendering the same
CSV and spec twice produces the same bytes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "mstage-plots"

EVAL_COLUMNS = [
    "test", "model", "statistic", "alpha", "beta", "true_param", "reps",
    "ess", "ess_se", "reject_rate", "reject_se", "bound_lower", "bound_upper",
    "seed",
]
SWEEP_COLUMNS = EVAL_COLUMNS + ["regime", "ratio", "ratio_se"]
RATES_COLUMNS = ["kappa", "psi0", "psi1"]
RATES_COLUMNS_FULL = RATES_COLUMNS + ["zeta0", "zeta1"]
ARE_COLUMNS = ["param", "are0", "are1"]

KINDS = ("rates", "are", "ratio_sweep", "robustness")

_TEST_LABELS = {
    "fss": "fixed-sample",
    "three": "3-stage",
    "four-hat": "4-stage (accept)",
    "four-check": "4-stage (reject)",
    "sprt": "SPRT",
}


class SchemaError(Exception):
    """CSV columns do not match the expected contract."""


@dataclass(frozen=True)
class FigureSpec:
    inputs: Sequence[str]
    kind: str
    output: str
    title: Optional[str] = None
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None
    options: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind: {self.kind!r}")
        if not self.inputs:
            raise SchemaError("at least one input CSV is required")


def _read_rows(path, allowed_headers: Sequence[Sequence[str]]) -> List[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header") from None
        for candidate in allowed_headers:
            if header == list(candidate):
                break
        else:
            want = " | ".join(",".join(h) for h in allowed_headers)
            raise SchemaError(
                f"{path}: column mismatch\n  expected: {want}\n  found:    "
                f"{','.join(header)}")
        rows = [dict(zip(header, row)) for row in reader if row]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _fnum(value: str) -> float:
    return float(value) if value not in ("", None) else math.nan


def _render_rates(ax, path):
    rows = _read_rows(path, [RATES_COLUMNS_FULL, RATES_COLUMNS])
    kappa = [_fnum(r["kappa"]) for r in rows]
    for name, style in (("psi0", "-"), ("psi1", "-")):
        ax.plot(kappa, [_fnum(r[name]) for r in rows], style, label=name)
    if "zeta0" in rows[0]:
        for name in ("zeta0", "zeta1"):
            pts = [(k, _fnum(r[name])) for k, r in zip(kappa, rows)
                   if r[name] not in ("", None)]
            if pts:
                ax.plot(*zip(*pts), "--", label=name)
    ax.set_xlabel("threshold")
    ax.set_ylabel("error exponent")


def _render_are(ax, path):
    rows = _read_rows(path, [ARE_COLUMNS])
    param = [_fnum(r["param"]) for r in rows]
    ax.plot(param, [_fnum(r["are0"]) for r in rows], label="efficiency (null)")
    ax.plot(param, [_fnum(r["are1"]) for r in rows], "--",
            label="efficiency (alternative)")
    ax.set_xlabel("model parameter")
    ax.set_ylabel("asymptotic relative efficiency")
    ax.set_ylim(0, 1.05)


def _render_ratio_sweep(ax, path):
    rows = _read_rows(path, [SWEEP_COLUMNS])
    sprt_ess = {r["beta"]: _fnum(r["ess"]) for r in rows if r["test"] == "sprt"}
    if not sprt_ess:
        raise SchemaError(f"{path}: no SPRT rows to take ratios against")
    tests = sorted({r["test"] for r in rows} - {"sprt"})
    for test in tests:
        sub = [r for r in rows if r["test"] == test]
        sub.sort(key=lambda r: -math.log10(_fnum(r["beta"])))
        x = [-math.log10(_fnum(r["beta"])) for r in sub]
        ax.plot(x, [_fnum(r["ratio"]) for r in sub], "o-",
                label=_TEST_LABELS.get(test, test))
        # closed-form bound envelopes relative to the measured SPRT size
        lower = [_fnum(r["bound_lower"]) / sprt_ess[r["beta"]] for r in sub]
        upper = [_fnum(r["bound_upper"]) / sprt_ess[r["beta"]] for r in sub]
        if all(math.isfinite(v) for v in lower + upper):
            ax.fill_between(x, lower, upper, alpha=0.15)
    ax.axhline(1.0, color="gray", lw=0.8)
    ax.set_xlabel("-log10 type-II level")
    ax.set_ylabel("sample-size ratio vs SPRT")


def _render_robustness(ax, path):
    rows = _read_rows(path, [EVAL_COLUMNS])
    tests = sorted({r["test"] for r in rows})
    for test in tests:
        sub = sorted((r for r in rows if r["test"] == test),
                     key=lambda r: _fnum(r["true_param"]))
        ax.plot([_fnum(r["true_param"]) for r in sub],
                [_fnum(r["ess"]) for r in sub], "o-",
                label=_TEST_LABELS.get(test, test))
    # the design points are the rows carrying bound columns
    marks = sorted({_fnum(r["true_param"]) for r in rows
                    if r["bound_lower"] not in ("", None)})
    for mu in marks:
        ax.axvline(mu, color="black", lw=0.8, ls=":")
        ax.plot([mu], [0], marker="^", color="black", clip_on=False)
    ax.set_xlabel("true parameter")
    ax.set_ylabel("expected sample size")


_RENERERS = {
    "rates": _render_rates,
    "are": _render_are,
    "ratio_sweep": _render_ratio_sweep,
    "robustness": _render_robustness,
}


def render(spec: FigureSpec) -> Path:
    """Render one figure; returns the output path.

    Raises :class:`SchemaError` (and writes nothing) when an input CSV does
    not match the schema for the requested kind.
    """
    out = Path(spec.output)
    if out.suffix.lower() not in (".svg", ".pdf"):
        raise SchemaError(f"output must be a vector format (.svg/.pdf), "
                          f"got {out.suffix!r}")
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    try:
        renderer = _RENERERS[spec.kind]
        for path in spec.inputs:
            renderer(ax, path)
        if spec.title:
            ax.set_title(spec.title)
        if spec.xlabel:
            ax.set_xlabel(spec.xlabel)
        if spec.ylabel:
            ax.set_ylabel(spec.ylabel)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, metadata={"Date": None})
    finally:
        plt.close(fig)
    return out
