"""Quantile bound learning and train/validation consistency selection.

For each abstract rule, statistics are collected over seeded minibatches of
the training and validation sets, quantile bounds are taken on each side,
and the rule is kept only when the two bound intervals overlap strongly
under the interval Jaccard index.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import schema as schema_mod
from .dataset import sample_minibatches
from .dataset import bucket_edges as fit_bucket_edges
from .errors import EmptyStatisticError
from .schema import LOGIC, LOWER, PAIRED, TWO_SIDED, UPPER, ConcreteRule
from .statistics import (PER_SAMPLE, StatisticRegistry, batch_value, f1_score,
                         match_class, sample_values, sample_values_aligned)

INF = float("inf")


@dataclass(frozen=True)
class Interval:
    """Closed interval; one endpoint may be infinite for one-sided rules."""

    lo: float = -INF
    hi: float = INF

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("interval endpoints cannot be NaN")
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")
        if math.isinf(self.lo) and math.isinf(self.hi):
            raise ValueError("at least one endpoint must be finite")

    def contains(self, value) -> bool:
        return self.lo <= value <= self.hi


@dataclass(frozen=True)
class BoundJob:
    """Shared parameters for learning bounds over a rule list.

    ``batch_size`` and ``delta`` override the per-rule values from the
    schema when set; normally the schema values apply.
    """

    n_train_batches: int = 200
    n_valid_batches: int = 50
    batch_size: int | None = None
    delta: float | None = None
    epsilon: float = 0.2
    train_seed: int = 0
    valid_seed: int = 1

    def __post_init__(self):
        if self.n_train_batches < 1 or self.n_valid_batches < 1:
            raise ValueError("batch counts must be >= 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")


def percentile(values, q) -> float:
    """Linear-interpolation percentile of a value list.

    Sorts ascending and evaluates at rank h = q*(n-1): the value is
    v[floor(h)] + (h - floor(h)) * (v[floor(h)+1] - v[floor(h)]), so q=0
    gives the minimum and q=1 the maximum.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("percentile of an empty value list")
    if np.isnan(v).any():
        raise ValueError("percentile input contains NaN")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    v = np.sort(v)
    h = q * (v.size - 1)
    i = int(math.floor(h))
    if i + 1 >= v.size:
        return float(v[-1])
    return float(v[i] + (h - i) * (v[i + 1] - v[i]))


def interval_from_values(values, delta, sided) -> Interval:
    if sided == TWO_SIDED:
        return Interval(percentile(values, delta / 2.0),
                        percentile(values, 1.0 - delta / 2.0))
    if sided == LOWER:
        return Interval(percentile(values, delta), INF)
    if sided == UPPER:
        return Interval(-INF, percentile(values, 1.0 - delta))
    raise ValueError(f"unknown sidedness {sided!r}")


def _guard_mask(rule, dataset, rows, label_column):
    if rule.guard is None:
        return np.ones(len(rows), dtype=bool)
    return match_class(dataset, rows, label_column, rule.guard).astype(bool)


def _paired_mask(s1_name, dataset, rows, registry, s1_lo, s1_hi):
    stat = registry.resolve(s1_name)
    vals, valid = sample_values_aligned(stat, dataset, rows)
    mask = valid.copy()
    mask[valid] = (vals[valid] > s1_lo) & (vals[valid] <= s1_hi)
    return mask


def s1_bucket_interval(rule, dataset, registry, label_column):
    """Learned first-statistic interval for a paired rule's bucket.

    Bucket edges are fitted with equal-frequency quantiles on the guard
    class's rows of the whole dataset; bucket j covers (edge[j-1], edge[j]]
    with open ends at the extremes.
    """
    rows = np.arange(dataset.n_rows)
    guard = _guard_mask(rule, dataset, rows, label_column)
    stat = registry.resolve(rule.s1)
    vals, _ = sample_values(stat, dataset, rows[guard])
    if vals.size == 0:
        raise EmptyStatisticError(
            f"rule {schema_mod.rule_signature(rule)}: no rows for bucket edges")
    edges = fit_bucket_edges(vals, rule.s1_bucket_count)
    lo = -INF if rule.s1_bucket == 0 else edges[rule.s1_bucket - 1]
    hi = INF if rule.s1_bucket == rule.s1_bucket_count - 1 else edges[rule.s1_bucket]
    return float(lo), float(hi)


def collect_statistics(rule, batches, registry, label_column, s1_interval=None):
    """One value per batch for minibatch statistics, or per-sample values
    pooled across batches, matching the rule's structure."""
    dataset = batches[0].dataset
    if rule.kind == LOGIC:
        values = []
        for batch in batches:
            v = f1_score(rule, dataset, batch.rows, label_column)
            if v is not None:
                values.append(v)
        return np.asarray(values, dtype=float)

    stat = registry.resolve(rule.statistic)
    if stat.arity == PER_SAMPLE:
        pooled = []
        for batch in batches:
            rows = batch.rows
            keep = _guard_mask(rule, dataset, rows, label_column)
            if rule.kind == PAIRED:
                if s1_interval is None:
                    raise ValueError("paired rules need a learned s1 interval")
                keep &= _paired_mask(rule.s1, dataset, rows, registry, *s1_interval)
            if not keep.any():
                continue
            vals, _ = sample_values(stat, dataset, rows[keep])
            pooled.append(vals)
        if not pooled:
            return np.asarray([], dtype=float)
        return np.concatenate(pooled)

    values = []
    for batch in batches:
        rows = batch.rows
        keep = _guard_mask(rule, dataset, rows, label_column)
        if not keep.any():
            continue
        v = batch_value(stat, dataset, rows[keep])
        if v is not None:
            values.append(v)
    return np.asarray(values, dtype=float)


def compute_bounds(rule, batches, delta=None, sided=None, *, registry=None,
                   label_column=None, s1_interval=None) -> Interval:
    """Quantile bounds for one rule over pre-sampled minibatches.

    delta and sidedness default to the rule's own schema values. Raises
    EmptyStatisticError naming the rule when no statistic value survives.
    """
    if not batches:
        raise ValueError("compute_bounds needs at least one minibatch")
    dataset = batches[0].dataset
    if registry is None:
        registry = StatisticRegistry.from_dataset(dataset)
    if label_column is None:
        label_column = dataset.label_column
    delta = rule.delta if delta is None else delta
    sided = rule.sided if sided is None else sided
    if rule.kind == PAIRED and s1_interval is None:
        s1_interval = s1_bucket_interval(rule, dataset, registry, label_column)
    values = collect_statistics(rule, batches, registry, label_column, s1_interval)
    if values.size == 0:
        raise EmptyStatisticError(
            f"rule {schema_mod.rule_signature(rule)}: no statistic values collected")
    return interval_from_values(values, delta, sided)


def jaccard(train: Interval, valid: Interval, stat_range: Interval) -> float:
    """Interval Jaccard index: intersection length over union length.

    Infinite endpoints are first replaced by the statistic's observed
    range. The intersection is clamped at 0, so disjoint intervals score 0;
    two identical point intervals score 1.
    """
    if not (math.isfinite(stat_range.lo) and math.isfinite(stat_range.hi)):
        raise ValueError("stat_range must be finite")
    finite = [v for v in (train.lo, train.hi, valid.lo, valid.hi) if math.isfinite(v)]
    range_lo = min([stat_range.lo] + finite)
    range_hi = max([stat_range.hi] + finite)

    def resolve(iv):
        lo = range_lo if math.isinf(iv.lo) else iv.lo
        hi = range_hi if math.isinf(iv.hi) else iv.hi
        return lo, hi

    t_lo, t_hi = resolve(train)
    v_lo, v_hi = resolve(valid)
    inter = max(min(t_hi, v_hi) - max(t_lo, v_lo), 0.0)
    union = max(t_hi, v_hi) - min(t_lo, v_lo)
    if union <= 0.0:
        return 1.0 if (t_lo, t_hi) == (v_lo, v_hi) else 0.0
    return inter / union


def _group_batches(rules, train, valid, job):
    sizes = {job.batch_size or rule.batch_size for rule in rules}
    groups = {}
    for size in sizes:
        groups[size] = (
            sample_minibatches(train, size, job.n_train_batches, job.train_seed),
            sample_minibatches(valid, size, job.n_valid_batches, job.valid_seed),
        )
    return groups


def learn_and_select(rules, train, valid, job, *, registry=None,
                     label_column=None, threads=1, log=None):
    """Learn train bounds for each rule and keep the consistent ones.

    A rule passes when Jaccard(train bounds, valid bounds) > 1 - epsilon;
    its training-side bounds become the ConcreteRule. Rules whose statistic
    collapses to nothing are skipped and reported through ``log`` (a list
    receiving dict entries), never raised. Output preserves input order and
    is invariant to ``threads``.
    """
    if registry is None:
        registry = StatisticRegistry.from_dataset(train)
    if label_column is None:
        label_column = train.label_column
    if not rules:
        return []
    groups = _group_batches(rules, train, valid, job)
    provenance = {"train": train.origin or "", "train_seed": job.train_seed,
                  "valid_seed": job.valid_seed}

    def run(rule):
        size = job.batch_size or rule.batch_size
        train_batches, valid_batches = groups[size]
        delta = job.delta if job.delta is not None else rule.delta
        try:
            s1_interval = None
            if rule.kind == PAIRED:
                s1_interval = s1_bucket_interval(rule, train, registry, label_column)
            t_vals = collect_statistics(rule, train_batches, registry, label_column,
                                        s1_interval)
            v_vals = collect_statistics(rule, valid_batches, registry, label_column,
                                        s1_interval)
            if t_vals.size == 0 or v_vals.size == 0:
                raise EmptyStatisticError(
                    f"rule {schema_mod.rule_signature(rule)}: no statistic values collected")
        except EmptyStatisticError as exc:
            return ("skip", rule, str(exc))
        t_int = interval_from_values(t_vals, delta, rule.sided)
        v_int = interval_from_values(v_vals, delta, rule.sided)
        pooled = np.concatenate([t_vals, v_vals])
        stat_range = Interval(float(pooled.min()), float(pooled.max()))
        score = jaccard(t_int, v_int, stat_range)
        if score > 1.0 - job.epsilon:
            concrete = ConcreteRule(
                rule=rule, lo=t_int.lo, hi=t_int.hi, delta=delta,
                s1_lo=None if s1_interval is None else s1_interval[0],
                s1_hi=None if s1_interval is None else s1_interval[1],
                provenance=dict(provenance),
            )
            return ("keep", concrete, score)
        return ("drop", rule, score)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, rules))
    else:
        outcomes = [run(rule) for rule in rules]

    selected = []
    for status, payload, detail in outcomes:
        if status == "keep":
            selected.append(payload)
            if log is not None:
                log.append({"event": "selected", "signature": payload.signature,
                            "jaccard": detail})
        elif log is not None:
            sig = schema_mod.rule_signature(payload)
            key = "reason" if status == "skip" else "jaccard"
            log.append({"event": "skipped" if status == "skip" else "rejected",
                        "signature": sig, key: detail})
    return selected
