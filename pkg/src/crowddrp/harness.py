"""Batch experiments: replication management, paired policy comparisons,
parameter tuning and KPI aggregation.

Paired design: within one plan, replication i uses the same instance seed for
every variant, so competing policies face identical request arrivals and
crowdshipper appearances.  All randomness flows from the plan's seed base;
result files are bit-identical across repeated runs (wall-clock diagnostics
are kept out of them).
"""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from scipy import stats as _stats

from .instances import generate_instance
from .mdp import CostConfig, KpiReport, Simulator
from .policies import AlnsConfig, make_policy

RESULTS_VERSION = 1

KPI_FIELDS = ("total_cost", "routing_cost", "lateness_charge",
              "delayed_requests", "total_delay", "crowd_served",
              "dedicated_served")


@dataclass(frozen=True)
class Variant:
    """One policy configuration evaluated in an experiment."""

    label: str
    policy: str                      # "drace" | "myopic"
    cost: CostConfig = field(default_factory=CostConfig)
    alns: AlnsConfig = field(default_factory=AlnsConfig)
    avg_tt: bool = False


@dataclass(frozen=True)
class ExperimentPlan:
    cls: str
    level: str
    variants: tuple[Variant, ...]
    replications: int = 20
    seed_base: int = 1000
    jobs: int = 1

    def __post_init__(self):
        if self.replications < 0:
            raise ValueError("replications must be >= 0")
        labels = [v.label for v in self.variants]
        if len(set(labels)) != len(labels):
            raise ValueError("variant labels must be unique")


@dataclass
class ComparisonSummary:
    """Paired comparison of one variant against the baseline variant."""

    baseline: str
    variant: str
    diffs: list[float]               # per-day baseline - variant total cost
    pct_reductions: list[float]      # (baseline - variant) / baseline
    wins: int                        # days the variant is strictly cheaper
    ci95: tuple[float, float]        # paired-t interval on the mean diff

    @property
    def median_pct(self) -> float:
        return statistics.median(self.pct_reductions)


def paired_ci(diffs, level: float = 0.95) -> tuple[float, float]:
    """Two-sided paired-t confidence interval on the mean difference."""
    n = len(diffs)
    if n < 2:
        raise ValueError("paired_ci needs at least two observations")
    mean = statistics.fmean(diffs)
    sd = statistics.stdev(diffs)
    if sd == 0.0:
        return (mean, mean)
    half = float(_stats.t.ppf(0.5 + level / 2.0, n - 1)) * sd / math.sqrt(n)
    return (mean - half, mean + half)


def _run_one(task):
    cls, level, seed, variant = task
    instance = generate_instance(cls, level, seed)
    sim = Simulator(instance, config=variant.cost)
    policy = make_policy(variant.policy, alns=variant.alns,
                         avg_tt=variant.avg_tt)
    report, _ = sim.run(policy, seed=seed)
    report.policy = variant.label
    return variant.label, seed, report


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    reports: dict                    # (label, seed) -> KpiReport
    comparisons: list[ComparisonSummary]
    max_decide_s: float

    def by_variant(self, label: str) -> list[KpiReport]:
        seeds = sorted(s for (l, s) in self.reports if l == label)
        return [self.reports[(label, s)] for s in seeds]

    def kpi_stats(self, label: str, kpi: str):
        vals = [float(getattr(r, kpi)) for r in self.by_variant(label)]
        if not vals:
            return None
        sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
        return (statistics.fmean(vals), statistics.median(vals), sd,
                min(vals), max(vals))


def run_experiment(plan: ExperimentPlan,
                   out_dir: str | Path | None = None) -> ExperimentResult:
    """Execute every (replication, variant) pair on identical sample paths
    and aggregate; optionally write results/summary files."""
    seeds = [plan.seed_base + i for i in range(plan.replications)]
    tasks = [(plan.cls, plan.level, s, v) for s in seeds
             for v in plan.variants]
    reports = {}
    max_decide = 0.0
    if plan.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
            for label, seed, rep in pool.map(_run_one, tasks):
                reports[(label, seed)] = rep
                max_decide = max(max_decide, rep.max_decide_s)
    else:
        for task in tasks:
            label, seed, rep = _run_one(task)
            reports[(label, seed)] = rep
            max_decide = max(max_decide, rep.max_decide_s)

    comparisons = []
    if plan.variants and plan.replications >= 2:
        base = plan.variants[0].label
        for v in plan.variants[1:]:
            diffs = []
            pcts = []
            wins = 0
            for s in seeds:
                a = reports[(base, s)].total_cost
                b = reports[(v.label, s)].total_cost
                diffs.append(a - b)
                pcts.append((a - b) / a if a != 0 else 0.0)
                wins += 1 if b < a else 0
            comparisons.append(ComparisonSummary(
                baseline=base, variant=v.label, diffs=diffs,
                pct_reductions=pcts, wins=wins, ci95=paired_ci(diffs)))

    result = ExperimentResult(plan, reports, comparisons, max_decide)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results(result, out / "results.tsv")
        write_summary(result, out / "summary.tsv")
    return result


def write_results(result: ExperimentResult, path) -> None:
    lines = [f"# crowddrp results v{RESULTS_VERSION}",
             "\t".join(KpiReport.COLUMNS)]
    for v in result.plan.variants:
        for rep in result.by_variant(v.label):
            lines.append(rep.to_row())
    Path(path).write_text("\n".join(lines) + "\n")


def read_results(path) -> list[KpiReport]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# crowddrp results"):
        raise ValueError(f"{path}: not a results file")
    return [KpiReport.from_row(l) for l in lines[2:] if l]


def write_summary(result: ExperimentResult, path) -> None:
    """Per-variant KPI statistics plus the paired comparisons."""
    lines = [f"# crowddrp summary v{RESULTS_VERSION}",
             "section\tvariant\tmetric\tmean\tmedian\tstdev\tmin\tmax"]
    for v in result.plan.variants:
        for kpi in KPI_FIELDS:
            st = result.kpi_stats(v.label, kpi)
            if st is None:
                continue
            lines.append("kpi\t" + v.label + "\t" + kpi + "\t"
                         + "\t".join(repr(x) for x in st))
    for c in result.comparisons:
        pct = c.pct_reductions
        lines.append(
            "compare\t" + f"{c.baseline}-vs-{c.variant}" + "\tpct_reduction\t"
            + "\t".join(repr(x) for x in (
                statistics.fmean(pct), statistics.median(pct),
                statistics.stdev(pct) if len(pct) > 1 else 0.0,
                min(pct), max(pct))))
        lines.append(
            "compare\t" + f"{c.baseline}-vs-{c.variant}"
            + f"\twins\t{c.wins}\t{len(c.diffs)}\t-\t-\t-")
        lines.append(
            "compare\t" + f"{c.baseline}-vs-{c.variant}"
            + "\tci95_diff\t" + repr(c.ci95[0]) + "\t" + repr(c.ci95[1])
            + "\t-\t-\t-")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class TuneResult:
    parameter: str
    best_value: float
    mean_costs: dict                 # value -> mean total cost


_TUNABLE = {"lambda": "capacity_weight", "eta": "wait_fraction"}


def tune(parameter: str, grid, plan: ExperimentPlan) -> TuneResult:
    """Mean total cost per grid value; returns the argmin (ties -> smaller
    value)."""
    if parameter not in _TUNABLE:
        raise ValueError(f"unknown tunable parameter {parameter!r}")
    if not list(grid):
        raise ValueError("empty tuning grid")
    if len(plan.variants) != 1:
        raise ValueError("tuning expects exactly one variant in the plan")
    base = plan.variants[0]
    mean_costs = {}
    for value in grid:
        cost = replace(base.cost, **{_TUNABLE[parameter]: float(value)})
        variant = replace(base, label=f"{base.label}@{value!r}", cost=cost)
        res = run_experiment(replace(plan, variants=(variant,)))
        vals = [r.total_cost for r in res.by_variant(variant.label)]
        mean_costs[float(value)] = statistics.fmean(vals) if vals else 0.0
    best = min(sorted(mean_costs), key=lambda v: (mean_costs[v], v))
    return TuneResult(parameter, best, mean_costs)
