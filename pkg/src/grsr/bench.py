"""Replicate metrics, paired tests and the simulation benchmark harness."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .covariance import CovarianceModel
from .errors import DimensionError, InsufficientDraws
from .gibbs import run_gibbs
from .model import DrawSet, HyperGrid, PriorSpec
from .sampler import ACCEPT_NULL, SeedLike, run_grsr, seed_sequence
from .simulate import EQ17, SimTruth, scenario_config, simulate_dataset

SLMM = "SLMM"
TRSR = "TRSR"
GRSR = "GRSR"
METHODS = (SLMM, TRSR, GRSR)
MIN_DRAWS = 20


def rmse(truth: NDArray, estimate: NDArray) -> float:
    """``||truth - estimate|| / sqrt(p)``."""
    t = np.asarray(truth, dtype=float).ravel()
    e = np.asarray(estimate, dtype=float).ravel()
    if t.shape != e.shape or t.size == 0:
        raise DimensionError(f"shapes {t.shape} and {e.shape} differ or are empty")
    return float(np.sqrt(np.sum((t - e) ** 2) / t.size))


def mspe(y_true_miss: NDArray, y_hat_miss: NDArray) -> float:
    t = np.asarray(y_true_miss, dtype=float).ravel()
    e = np.asarray(y_hat_miss, dtype=float).ravel()
    if t.shape != e.shape or t.size == 0:
        raise DimensionError(f"shapes {t.shape} and {e.shape} differ or are empty")
    return float(np.mean((t - e) ** 2))


def coverage(draws: NDArray, truth: NDArray, level: float = 0.95) -> float:
    """Share of coordinates whose equal-tailed credible interval contains the truth."""
    D = np.asarray(draws, dtype=float)
    if D.ndim == 1:
        D = D[:, None]
    t = np.asarray(truth, dtype=float).ravel()
    if D.shape[1] != t.size:
        raise DimensionError(f"draws have {D.shape[1]} columns, truth has {t.size}")
    if D.shape[0] < MIN_DRAWS:
        raise InsufficientDraws(f"need at least {MIN_DRAWS} draws, got {D.shape[0]}")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(D, [tail, 1.0 - tail], axis=0)
    return float(np.mean((lo <= t) & (t <= hi)))


def mean_pred_var(y_miss_draws: NDArray) -> float:
    """Average over missing sites of the per-site draw variance."""
    Y = np.asarray(y_miss_draws, dtype=float)
    if Y.ndim != 2 or Y.shape[1] == 0:
        return float("nan")
    return float(np.mean(np.var(Y, axis=0, ddof=1)))


@dataclass(frozen=True)
class PairedTest:
    t: float
    p_value: float
    significant: bool
    degenerate: bool = False
    mean_diff: float = 0.0
    se_diff: float = 0.0


def paired_t_test(a: NDArray, b: NDArray, alpha: float = 0.05, comparisons: int = 1) -> PairedTest:
    """Two-sided paired t-test with a Bonferroni threshold ``alpha / comparisons``.

    Zero-variance differences carry no evidence and return ``p = 1``.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionError("paired samples must have equal length")
    if a.size < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    md = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    if sd == 0.0 or sd <= 1e-14 * max(1.0, abs(md)):
        return PairedTest(0.0, 1.0, False, True, md, 0.0)
    res = stats.ttest_rel(a, b)
    p = float(res.pvalue)
    return PairedTest(float(res.statistic), p, p < alpha / comparisons, False, md,
                      sd / np.sqrt(d.size))


@dataclass
class ReplicateMetrics:
    rmse_delta: float
    rmse_beta: float
    mspe: float
    mean_pred_var: float
    cpu_seconds: float
    coverage_delta: float
    coverage_beta: float

    def __post_init__(self):
        for f in ("coverage_delta", "coverage_beta"):
            v = getattr(self, f)
            if not (np.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"{f} must lie in [0, 1]")


METRIC_NAMES = tuple(f.name for f in fields(ReplicateMetrics))


def replicate_metrics(draws: DrawSet, truth: SimTruth, seconds: float,
                      beta_from_delta: bool = False, level: float = 0.95) -> ReplicateMetrics:
    """Metrics for one fitted replicate.

    ``beta_from_delta`` reads inference on ``beta`` from the ``delta`` draws,
    which is how the traditional restricted model is summarised.
    """
    bdraws = draws.delta if beta_from_delta else draws.beta
    has_miss = draws.y_miss.shape[1] > 0
    return ReplicateMetrics(
        rmse_delta=rmse(truth.delta_true, draws.delta.mean(axis=0)),
        rmse_beta=rmse(truth.beta_true, bdraws.mean(axis=0)),
        mspe=mspe(truth.y_miss, draws.y_miss.mean(axis=0)) if has_miss else float("nan"),
        mean_pred_var=mean_pred_var(draws.y_miss),
        cpu_seconds=float(seconds),
        coverage_delta=coverage(draws.delta, truth.delta_true, level),
        coverage_beta=coverage(bdraws, truth.beta_true, level),
    )


@dataclass
class ExperimentConfig:
    scenario: str = EQ17
    n_reps: int = 100
    methods: Sequence[str] = METHODS
    B: int = 100
    gibbs_iters: int = 2000
    gibbs_burn: int = 1000
    gibbs_thin: int = 10
    n_basis: int = 10
    rho: float = 0.01
    tau2_min: float = 0.01
    tau2_max: float = 3.0
    K: int = 1000
    alpha: float = 1.0
    kappa: float = 1.0
    a: float = 0.25
    threads: int = 1
    sim_overrides: dict = field(default_factory=dict)

    def prior(self) -> PriorSpec:
        return PriorSpec(HyperGrid.uniform(self.tau2_min, self.tau2_max, self.K),
                         self.alpha, self.kappa)

    def model(self) -> CovarianceModel:
        return CovarianceModel.bspline(self.n_basis, self.rho)


@dataclass
class ReplicateResult:
    index: int
    metrics: Dict[str, ReplicateMetrics]
    decision: Optional[str]
    prob_h0: float


def run_replicate(cfg: ExperimentConfig, index: int, ss: np.random.SeedSequence) -> ReplicateResult:
    s_data, s_grsr, s_gibbs = ss.spawn(3)
    data, truth = simulate_dataset(scenario_config(cfg.scenario, **cfg.sim_overrides), s_data)
    model, prior = cfg.model(), cfg.prior()
    out: Dict[str, ReplicateMetrics] = {}
    decision, prob = None, float("nan")
    if GRSR in cfg.methods or TRSR in cfg.methods:
        res = run_grsr(data, model, prior, cfg.B, cfg.a, s_grsr)
        decision, prob = res.test.decision, res.test.posterior_prob_h0
        if GRSR in cfg.methods:
            out[GRSR] = replicate_metrics(res.draws, truth, res.seconds)
        if TRSR in cfg.methods:
            out[TRSR] = replicate_metrics(res.draws, truth, res.seconds, beta_from_delta=True)
    if SLMM in cfg.methods:
        gres = run_gibbs(data, model, prior, cfg.gibbs_iters, cfg.gibbs_burn, cfg.gibbs_thin, s_gibbs)
        out[SLMM] = replicate_metrics(gres.draws, truth, gres.seconds)
    return ReplicateResult(index, out, decision, prob)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    replicates: List[ReplicateResult]

    @property
    def methods(self) -> List[str]:
        return [m for m in METHODS if m in self.config.methods]

    def values(self, method: str, metric: str) -> NDArray:
        return np.array([getattr(r.metrics[method], metric) for r in self.replicates])

    def summary(self) -> Dict[str, Dict[str, tuple]]:
        """``{method: {metric: (mean, se)}}``; ``se`` is ``None`` with one replicate."""
        out: Dict[str, Dict[str, tuple]] = {}
        for m in self.methods:
            row = {}
            for name in METRIC_NAMES:
                v = self.values(m, name)
                se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else None
                row[name] = (float(np.mean(v)), se)
            out[m] = row
        return out

    @property
    def accept_count(self) -> int:
        return sum(r.decision == ACCEPT_NULL for r in self.replicates)

    @property
    def reject_count(self) -> int:
        return sum(r.decision is not None and r.decision != ACCEPT_NULL for r in self.replicates)

    def compare(self, m1: str, m2: str, metric: str, alpha: float = 0.05,
                comparisons: int = 3) -> PairedTest:
        return paired_t_test(self.values(m1, metric), self.values(m2, metric), alpha, comparisons)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method"] + [f"{n}{s}" for n in METRIC_NAMES for s in ("_mean", "_se")])
        for m, row in self.summary().items():
            cells = []
            for n in METRIC_NAMES:
                mean, se = row[n]
                cells += [repr(mean), "" if se is None else repr(se)]
            w.writerow([m] + cells)
        return buf.getvalue()

    def to_text(self) -> str:
        headers = ["Method", "RMSE_delta", "RMSE_beta", "MSPE", "var(y_m)", "CPU (s)",
                   "cov_delta", "cov_beta"]
        rows = []
        for m, row in self.summary().items():
            cells = [m]
            for n in METRIC_NAMES:
                mean, se = row[n]
                cells.append(f"{mean:.3f}" + ("" if se is None else f" ({se:.3f})"))
            rows.append(cells)
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
        lines = ["  ".join(h.ljust(wd) for h, wd in zip(headers, widths))]
        lines.append("  ".join("-" * wd for wd in widths))
        for r in rows:
            lines.append("  ".join(c.ljust(wd) for c, wd in zip(r, widths)))
        n = len(self.replicates)
        lines.append(f"\nreplicates: {n}; hypothesis test accepted null in "
                     f"{self.accept_count}, rejected in {self.reject_count}")
        return "\n".join(lines) + "\n"

    def replicate_rows(self) -> List[dict]:
        rows = []
        for r in self.replicates:
            for m, met in r.metrics.items():
                rows.append({"replicate": r.index, "method": m, **asdict(met),
                             "decision": r.decision or "", "prob_h0": r.prob_h0})
        return rows


def run_experiment(cfg: Optional[ExperimentConfig] = None, seed: SeedLike = None,
                   **kwargs) -> ExperimentReport:
    """Simulate ``n_reps`` datasets and fit every requested method to each.

    Replicates use independent child seeds, so the report does not depend on
    ``threads``.
    """
    cfg = cfg or ExperimentConfig(**kwargs)
    unknown = set(cfg.methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    streams = seed_sequence(seed).spawn(cfg.n_reps)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            reps = list(pool.map(lambda i: run_replicate(cfg, i, streams[i]), range(cfg.n_reps)))
    else:
        reps = [run_replicate(cfg, i, streams[i]) for i in range(cfg.n_reps)]
    reps.sort(key=lambda r: r.index)
    return ExperimentReport(cfg, reps)


ASSERTION_KINDS = ("metric_range", "accept_null_min", "reject_null_all", "time_ratio_max",
                   "paired_not_significant", "paired_significant_lower", "gap_min")


def evaluate_assertion(report: ExperimentReport, spec: dict):
    """Check one named criterion against a report; returns ``(passed, message)``."""
    kind = spec["kind"]
    name = spec.get("name", kind)
    summ = report.summary()
    if kind == "metric_range":
        v = summ[spec["method"]][spec["metric"]][0]
        lo, hi = spec.get("min", -np.inf), spec.get("max", np.inf)
        ok = lo <= v <= hi
        msg = f"{spec['method']} {spec['metric']} = {v:.4f}, required [{lo}, {hi}]"
    elif kind == "accept_null_min":
        ok = report.accept_count >= spec["count"]
        msg = f"accepted null in {report.accept_count}/{len(report.replicates)}, need >= {spec['count']}"
    elif kind == "reject_null_all":
        ok = report.reject_count == len(report.replicates)
        msg = f"rejected null in {report.reject_count}/{len(report.replicates)}"
    elif kind == "time_ratio_max":
        num = summ[spec["numerator"]]["cpu_seconds"][0]
        den = summ[spec["denominator"]]["cpu_seconds"][0]
        ok = num <= spec["max"] * den
        msg = f"time ratio {spec['numerator']}/{spec['denominator']} = {num / den:.3f}, max {spec['max']}"
    elif kind == "paired_not_significant":
        t = report.compare(spec["a"], spec["b"], spec["metric"], spec.get("alpha", 0.05),
                           spec.get("comparisons", 3))
        ok = not t.significant and abs(t.mean_diff) <= spec.get("max_se", np.inf) * t.se_diff + 1e-15
        msg = (f"{spec['a']} vs {spec['b']} {spec['metric']}: diff {t.mean_diff:.4g} "
               f"(se {t.se_diff:.3g}), p = {t.p_value:.3g}")
    elif kind == "paired_significant_lower":
        t = report.compare(spec["lower"], spec["higher"], spec["metric"], spec.get("alpha", 0.05),
                           spec.get("comparisons", 3))
        ok = t.significant and t.mean_diff < 0
        msg = (f"{spec['lower']} - {spec['higher']} {spec['metric']}: diff {t.mean_diff:.4g}, "
               f"p = {t.p_value:.3g}")
    elif kind == "gap_min":
        hi = summ[spec["higher"]][spec["metric"]][0]
        lo = summ[spec["lower"]][spec["metric"]][0]
        ok = hi - lo >= spec["min"]
        msg = f"{spec['metric']} gap {spec['higher']} - {spec['lower']} = {hi - lo:.4f}, min {spec['min']}"
    else:
        raise ValueError(f"unknown assertion kind {kind!r}")
    return bool(ok), f"{name}: {'PASS' if ok else 'FAIL'} ({msg})"
