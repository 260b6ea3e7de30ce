"""Per-video result aggregation and significance tests.

Two-sided p-values come from the Student-t CDF written as a regularized
incomplete beta function: p = I_x(df/2, 1/2) with x = df / (df + t²),
evaluated with ``scipy.special.betainc``.
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel
from scipy.special import betainc

from services.shared.errors import DegenerateInput, EmptyInput, ShapeMismatch

logger = logging.getLogger(__name__)

METRICS = ("accuracy", "f1")
DEFAULT_BASELINE = "baseline"
TABLE_FIXTURE = Path(__file__).parent / "data" / "classification_results.csv"


class TTestResult(BaseModel):
    t: float
    p_two_sided: float
    df: Union[int, float]
    mean_difference: float
    n: int


class SystemSummary(BaseModel):
    system: str
    n: int
    means: Dict[str, float]
    versus_baseline: Dict[str, TTestResult] = {}


class TableSummary(BaseModel):
    baseline: Optional[str] = None
    systems: List[SystemSummary]

    def system(self, name: str) -> SystemSummary:
        for summary in self.systems:
            if summary.system == name:
                return summary
        raise KeyError(name)

    def to_markdown(self) -> str:
        lines = ["| System | Mean accuracy | Mean F1 | p (accuracy) | p (F1) |", "|---|---|---|---|---|"]
        for summary in self.systems:
            tests = summary.versus_baseline
            p_acc = f"{tests['accuracy'].p_two_sided:.2g}" if "accuracy" in tests else "-"
            p_f1 = f"{tests['f1'].p_two_sided:.2g}" if "f1" in tests else "-"
            lines.append(
                f"| {summary.system} | {summary.means.get('accuracy', float('nan')):.2f} "
                f"| {summary.means.get('f1', float('nan')):.2f} | {p_acc} | {p_f1} |"
            )
        return "\n".join(lines) + "\n"


def aggregate_mean(values: Iterable[float]) -> float:
    """Arithmetic mean.

    Raises:
        EmptyInput: no values
    """
    array = np.asarray(list(values), dtype=float)
    if array.size == 0:
        raise EmptyInput("Cannot average an empty list")
    return float(array.mean())


def _two_sided_p(t: float, df: float) -> float:
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Paired two-sided t-test of a against b.

    Raises:
        DegenerateInput: lengths differ, fewer than 2 pairs, or the
            differences have zero variance
    """
    first = np.asarray(a, dtype=float)
    second = np.asarray(b, dtype=float)
    if first.shape != second.shape:
        raise DegenerateInput(f"Paired samples differ in length: {first.size} vs {second.size}")
    n = first.size
    if n < 2:
        raise DegenerateInput(f"Paired t-test needs at least 2 pairs, got {n}")
    differences = first - second
    sd = differences.std(ddof=1)
    scale = max(1.0, float(np.abs(differences).max()))
    if sd <= 1e-12 * scale:
        raise DegenerateInput("Differences have zero variance; t statistic undefined")
    df = int(n - 1)
    t = float(differences.mean() / (sd / np.sqrt(n)))
    return TTestResult(
        t=t,
        p_two_sided=_two_sided_p(t, df),
        df=df,
        mean_difference=float(differences.mean()),
        n=n,
    )


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Unpaired two-sided t-test with Welch–Satterthwaite degrees of freedom."""
    first = np.asarray(a, dtype=float)
    second = np.asarray(b, dtype=float)
    if first.size < 2 or second.size < 2:
        raise DegenerateInput("Welch t-test needs at least 2 values per sample")
    var_a = first.var(ddof=1) / first.size
    var_b = second.var(ddof=1) / second.size
    if var_a + var_b <= 0:
        raise DegenerateInput("Both samples have zero variance; t statistic undefined")
    difference = float(first.mean() - second.mean())
    t = difference / float(np.sqrt(var_a + var_b))
    df = float(
        (var_a + var_b) ** 2
        / (var_a**2 / (first.size - 1) + var_b**2 / (second.size - 1))
    )
    return TTestResult(
        t=t,
        p_two_sided=_two_sided_p(t, df),
        df=df,
        mean_difference=difference,
        n=int(first.size + second.size),
    )


def load_table(path: Path = TABLE_FIXTURE) -> pd.DataFrame:
    """Read a wide results table: ``video_id`` plus ``<system>_<metric>`` columns."""
    return pd.read_csv(path, dtype={"video_id": str})


def pivot_rows(rows: pd.DataFrame) -> pd.DataFrame:
    """Long rows (video_id, system, accuracy, f1) → wide ``<system>_<metric>`` table."""
    missing = {"video_id", "system", *METRICS} - set(rows.columns)
    if missing:
        raise ShapeMismatch(f"Result rows lack columns {sorted(missing)}")
    wide = rows.pivot_table(index="video_id", columns="system", values=list(METRICS), aggfunc="mean")
    wide.columns = [f"{system}_{metric}" for metric, system in wide.columns]
    return wide.reset_index()


def _systems(table: pd.DataFrame) -> List[str]:
    systems: List[str] = []
    for column in table.columns:
        for metric in METRICS:
            suffix = f"_{metric}"
            if column.endswith(suffix):
                system = column[: -len(suffix)]
                if system not in systems:
                    systems.append(system)
    return systems


def summarize_table(
    table: pd.DataFrame, baseline: Optional[str] = DEFAULT_BASELINE, test: str = "paired"
) -> TableSummary:
    """Mean per system and metric, plus a t-test of every system against the baseline.

    Args:
        table: Wide table as produced by load_table or pivot_rows
        baseline: System compared against (None or absent: no tests)
        test: ``paired`` (default) or ``welch``
    """
    if table.empty:
        raise EmptyInput("Results table has no rows")
    run_test = paired_t_test if test == "paired" else welch_t_test
    systems = _systems(table)
    if baseline not in systems:
        baseline = None

    summaries: List[SystemSummary] = []
    for system in systems:
        means: Dict[str, float] = {}
        tests: Dict[str, TTestResult] = {}
        for metric in METRICS:
            column = f"{system}_{metric}"
            if column not in table.columns:
                continue
            means[metric] = aggregate_mean(table[column].dropna())
            reference = f"{baseline}_{metric}"
            if baseline and system != baseline and reference in table.columns:
                paired = table[[column, reference]].dropna()
                tests[metric] = run_test(paired[column].to_numpy(), paired[reference].to_numpy())
        summaries.append(
            SystemSummary(system=system, n=int(len(table)), means=means, versus_baseline=tests)
        )
        logger.info(f"Summarized {system}: {means}")
    return TableSummary(baseline=baseline, systems=summaries)
