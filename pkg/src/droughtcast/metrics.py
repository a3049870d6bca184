"""Evaluation metrics and experiment statistics.

Regression errors (MAE/RMSE) are computed on the raw continuous scores;
classification metrics map scores to the six intensity categories by
round-half-up with clamping.  ROC-AUC scores a regression output through
triangular membership around the integer categories, and the paired t-test
uses an internally implemented Student-t CDF (regularized incomplete beta
via continued fraction) so results carry no dependency on an external
stats library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    DegenerateTestError,
    NumericError,
    UndefinedMetricError,
)
from .model import FORECAST_WEEKS, HybridModel
from .training import batch_from_samples

N_CATEGORIES = 6


def _select_week(pred: np.ndarray, target: np.ndarray, week: int | None):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DataError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise DataError("empty inputs")
    if week is not None:
        if not 1 <= week <= FORECAST_WEEKS:
            raise DataError(f"week must be 1..{FORECAST_WEEKS}, got {week}")
        pred = pred[:, week - 1]
        target = target[:, week - 1]
    return pred, target


def mae(pred, target, week: int | None = None) -> float:
    pred, target = _select_week(pred, target, week)
    return float(np.abs(pred - target).mean())


def rmse(pred, target, week: int | None = None) -> float:
    pred, target = _select_week(pred, target, week)
    return float(np.sqrt(((pred - target) ** 2).mean()))


def score_to_category(score: float, mode: str = "round") -> int:
    """Map a continuous drought score to an intensity category 0..5."""
    if isinstance(score, (np.ndarray, list)):
        return np.array([score_to_category(s, mode) for s in np.ravel(score)], dtype=np.int64)
    if math.isnan(score):
        raise NumericError("cannot categorize NaN score")
    if mode == "round":
        cat = math.floor(score + 0.5)
    elif mode == "floor":
        cat = math.floor(score)
    elif mode == "ceil":
        cat = math.ceil(score)
    else:
        raise DataError(f"unknown category mode {mode!r}")
    return int(min(max(cat, 0), N_CATEGORIES - 1))


def macro_f1(pred_categories, target_categories, classes=range(N_CATEGORIES)) -> float:
    """Unweighted mean of per-class F1, in percent.

    Classes absent from both predictions and targets are excluded so the
    mean stays defined.
    """
    pred = np.asarray(pred_categories, dtype=np.int64).ravel()
    target = np.asarray(target_categories, dtype=np.int64).ravel()
    if pred.size == 0:
        raise DataError("empty inputs")
    if pred.shape != target.shape:
        raise DataError("length mismatch")
    scores = []
    for cls in classes:
        tp = int(((pred == cls) & (target == cls)).sum())
        fp = int(((pred == cls) & (target != cls)).sum())
        fn = int(((pred != cls) & (target == cls)).sum())
        if tp + fp + fn == 0:
            continue
        scores.append(2 * tp / (2 * tp + fp + fn))
    if not scores:
        raise DataError("no classes present")
    return float(np.mean(scores) * 100.0)


def _midrank(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def binary_auc(scores, positives) -> float:
    """Mann-Whitney AUC with midranks for ties, as a fraction in [0, 1]."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative examples")
    ranks = _midrank(scores)
    rank_sum = ranks[positives].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def membership_scores(predictions) -> np.ndarray:
    """Per-category pseudo-probabilities for continuous predictions.

    Scores are clamped to the category range, then category k receives
    mass max(0, 1 - |score - k|), normalized per sample.
    """
    flat = np.clip(np.asarray(predictions, dtype=float).ravel(), 0.0, N_CATEGORIES - 1)
    cats = np.arange(N_CATEGORIES)
    raw = np.maximum(0.0, 1.0 - np.abs(flat[:, None] - cats[None, :]))
    return raw / raw.sum(axis=1, keepdims=True)


def roc_auc_weighted(class_scores, target_categories) -> float:
    """One-vs-rest AUC per present class, support-weighted, in percent."""
    scores = np.asarray(class_scores, dtype=float)
    target = np.asarray(target_categories, dtype=np.int64).ravel()
    if scores.ndim != 2 or scores.shape[0] != target.size:
        raise DataError(f"class-score matrix {scores.shape} does not match {target.size} targets")
    present = [cls for cls in range(scores.shape[1]) if (target == cls).any()]
    if len(present) < 2:
        raise UndefinedMetricError("targets contain fewer than two classes")
    total = 0.0
    weight_sum = 0
    for cls in present:
        support = int((target == cls).sum())
        total += support * binary_auc(scores[:, cls], target == cls)
        weight_sum += support
    return float(total / weight_sum * 100.0)


@dataclass
class MetricsReport:
    weekly_mae: list[float]
    weekly_f1: list[float]
    mae: float
    rmse: float
    f1: float
    roc_auc: float
    sample_count: int

    def weekly_csv(self) -> str:
        lines = ["week,mae,f1"]
        for w in range(FORECAST_WEEKS):
            lines.append(f"{w + 1},{self.weekly_mae[w]!r},{self.weekly_f1[w]!r}")
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        return (
            "mae,rmse,f1,roc_auc,samples\n"
            f"{self.mae!r},{self.rmse!r},{self.f1!r},{self.roc_auc!r},{self.sample_count}\n"
        )

    def render_text(self) -> str:
        lines = [f"{'week':>6} {'MAE':>8} {'F1':>7}"]
        for w in range(FORECAST_WEEKS):
            lines.append(f"{w + 1:>6} {self.weekly_mae[w]:>8.3f} {self.weekly_f1[w]:>7.1f}")
        lines.append(
            f"pooled MAE {self.mae:.3f}  RMSE {self.rmse:.3f}  "
            f"F1 {self.f1:.1f}  ROC-AUC {self.roc_auc:.1f}  n={self.sample_count}"
        )
        return "\n".join(lines) + "\n"


def report_from_predictions(pred, target) -> MetricsReport:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.ndim != 2 or pred.shape[1] != FORECAST_WEEKS:
        raise DataError(f"expected (N, {FORECAST_WEEKS}) predictions, got {pred.shape}")
    weekly_mae = [mae(pred, target, week=w) for w in range(1, FORECAST_WEEKS + 1)]
    pred_cats = score_to_category(pred)
    target_cats = score_to_category(target)
    weekly_f1 = [
        macro_f1(pred_cats.reshape(pred.shape)[:, w], target_cats.reshape(pred.shape)[:, w])
        for w in range(FORECAST_WEEKS)
    ]
    try:
        auc = roc_auc_weighted(membership_scores(pred), target_cats)
    except UndefinedMetricError:
        auc = float("nan")
    return MetricsReport(
        weekly_mae=weekly_mae,
        weekly_f1=weekly_f1,
        mae=mae(pred, target),
        rmse=rmse(pred, target),
        f1=macro_f1(pred_cats, target_cats),
        roc_auc=auc,
        sample_count=pred.shape[0],
    )


def evaluate(model: HybridModel, samples, batch_size: int = 256) -> MetricsReport:
    """Eval-mode forward over the sample set, then the full report."""
    if not samples:
        raise DataError("cannot evaluate on an empty sample set")
    preds = []
    targets = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        batch = batch_from_samples(chunk)
        preds.append(model.forward(batch, training=False).predictions.data)
        targets.append(batch.y)
    return report_from_predictions(np.concatenate(preds), np.concatenate(targets))


# Student-t distribution, implemented directly so significance results do
# not depend on an external statistics package.

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise NumericError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x < 0.0 or x > 1.0:
        raise NumericError(f"x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed_p(t: float, df: int) -> float:
    """P(|T_df| >= |t|) via I_{df/(df+t^2)}(df/2, 1/2)."""
    if df < 1:
        raise DataError(f"degrees of freedom must be >= 1, got {df}")
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


@dataclass
class PairedTestResult:
    mean_difference: float
    t_stat: float
    df: int
    p_value: float


def paired_t_test(a, b) -> PairedTestResult:
    """Two-tailed paired t-test of matched measurement vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("paired test needs two equal-length vectors")
    k = a.size
    if k < 2:
        raise DataError("paired test needs at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise DegenerateTestError("differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(k)))
    return PairedTestResult(float(d.mean()), t, k - 1, student_t_two_tailed_p(t, k - 1))


@dataclass
class FoldResults:
    metric_names: list[str]
    folds: list[dict[str, float]]
    summary: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.summary:
            self.summary = {
                name: summarize_folds([fold[name] for fold in self.folds])
                for name in self.metric_names
            }

    def folds_csv(self) -> str:
        lines = ["fold," + ",".join(self.metric_names)]
        for i, fold in enumerate(self.folds, start=1):
            lines.append(f"{i}," + ",".join(repr(fold[n]) for n in self.metric_names))
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        lines = ["metric,mean,std"]
        for name in self.metric_names:
            mean, std = self.summary[name]
            lines.append(f"{name},{mean!r},{std!r}")
        return "\n".join(lines) + "\n"


def summarize_folds(values) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1 denominator)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise DataError("need at least two folds to summarize")
    return float(values.mean()), float(values.std(ddof=1))


def cross_validate(samples, k, model_builder, trainer, seed: int = 0) -> FoldResults:
    """Train a fresh seeded model per fold and report MAE/RMSE/F1 per fold.

    ``model_builder(fold_seed)`` returns an untrained model;
    ``trainer(model, train, val, fold_seed)`` trains it in place.
    """
    from .data import kfold_split

    folds = []
    for i, (train, val) in enumerate(kfold_split(samples, k=k, seed=seed)):
        fold_seed = seed + 1000 * (i + 1)
        model = model_builder(fold_seed)
        trainer(model, train, val, fold_seed)
        report = evaluate(model, val)
        folds.append({"mae": report.mae, "rmse": report.rmse, "f1": report.f1})
    return FoldResults(["mae", "rmse", "f1"], folds)


def relative_improvement(baseline: float, candidate: float, better: str = "lower") -> float:
    """Percent improvement of candidate over baseline."""
    if baseline == 0.0:
        raise DataError("baseline of zero has no relative improvement")
    if better == "lower":
        return (baseline - candidate) / baseline * 100.0
    if better == "higher":
        return (candidate - baseline) / baseline * 100.0
    raise DataError(f"better must be 'lower' or 'higher', got {better!r}")


def claim_consistent(computed_percent: float, claimed_percent: float,
                     tolerance_points: float = 0.5) -> bool:
    """Whether a rounded headline improvement agrees with the computed one."""
    return abs(computed_percent - claimed_percent) <= tolerance_points


@dataclass
class LocationExperimentReport:
    """Specific-vs-agnostic training comparison across states.

    ``improvements`` holds, per candidate definition, the per-state relative
    improvement of agnostic training plus its average; the average is
    definition-dependent, so every candidate is labeled and reported.
    """

    states: list[str]
    specific: dict[str, MetricsReport]
    agnostic: dict[str, MetricsReport]
    improvements: dict[str, tuple[dict[str, float], float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.improvements:
            defs = {
                "test_mae": (lambda r: r.mae, "lower"),
                "test_f1": (lambda r: r.f1, "higher"),
                "week_avg_mae": (lambda r: float(np.mean(r.weekly_mae)), "lower"),
                "week_avg_f1": (lambda r: float(np.mean(r.weekly_f1)), "higher"),
            }
            for name, (getter, better) in defs.items():
                per_state = {}
                for s in self.states:
                    try:
                        per_state[s] = relative_improvement(
                            getter(self.specific[s]), getter(self.agnostic[s]), better
                        )
                    except DataError:  # zero baseline: improvement undefined
                        per_state[s] = float("nan")
                self.improvements[name] = (per_state, float(np.mean(list(per_state.values()))))

    def weekly_csv(self) -> str:
        header = ["train,eval"]
        for w in range(1, FORECAST_WEEKS + 1):
            header.append(f"week{w}_mae,week{w}_f1")
        lines = [",".join(header)]
        for scope, reports in (("specific", self.specific), ("all", self.agnostic)):
            for s in self.states:
                r = reports[s]
                cells = [scope if scope == "all" else s, s]
                for w in range(FORECAST_WEEKS):
                    cells.extend([repr(r.weekly_mae[w]), repr(r.weekly_f1[w])])
                lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        lines = ["train,eval,mae,rmse,f1"]
        for scope, reports in (("specific", self.specific), ("all", self.agnostic)):
            for s in self.states:
                r = reports[s]
                train = s if scope == "specific" else "all"
                lines.append(f"{train},{s},{r.mae!r},{r.rmse!r},{r.f1!r}")
        return "\n".join(lines) + "\n"

    def improvements_csv(self) -> str:
        lines = ["definition," + ",".join(self.states) + ",average"]
        for name, (per_state, avg) in self.improvements.items():
            cells = [name] + [repr(per_state[s]) for s in self.states] + [repr(avg)]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def location_experiment_report(specific: dict[str, MetricsReport],
                               agnostic: dict[str, MetricsReport]) -> LocationExperimentReport:
    states = sorted(specific)
    missing = set(states) ^ set(agnostic)
    if missing:
        raise DataError(f"missing specific/agnostic pair for states {sorted(missing)}")
    return LocationExperimentReport(states, specific, agnostic)
