"""Rule violation counting over a test set.

Learned intervals are closed, so a statistic exactly at a bound satisfies
its rule. Per-sample rules are checked on every applicable row; minibatch
rules are checked on seeded batches, and a violated batch attributes one
violation to every member row so the per-rule and per-sample margins both
sum to the same total.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import _guard_mask, _paired_mask
from .dataset import Minibatch, sample_minibatches
from .errors import EmptyStatisticError, ResolutionError
from .schema import LOGIC, PAIRED
from .statistics import (PER_SAMPLE, StatisticRegistry, batch_value, f1_score,
                         sample_values_aligned)

REPORT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class CheckResult:
    evaluated: bool
    violated: bool = False
    value: float | None = None


@dataclass
class ViolationReport:
    per_rule: list = field(default_factory=list)   # (signature, violations, evaluations)
    per_sample: list = field(default_factory=list)  # (sample id, violations), sorted
    total_violations: int = 0
    per_sample_mean: float = 0.0
    per_sample_std: float = 0.0

    def validate(self):
        rule_total = sum(v for _, v, _ in self.per_rule)
        sample_total = sum(v for _, v in self.per_sample)
        if not (self.total_violations == rule_total == sample_total):
            raise AssertionError(
                f"violation accounting mismatch: total={self.total_violations} "
                f"per-rule={rule_total} per-sample={sample_total}")
        for sig, v, n in self.per_rule:
            if not 0 <= v <= n:
                raise AssertionError(f"rule {sig}: count {v} outside [0, {n}]")


def check_rule(crule, batch: Minibatch, *, registry=None, label_column=None) -> CheckResult:
    """Check one concrete rule on a sample or minibatch.

    Per-sample statistics over a batch violate if any applicable row falls
    outside the bounds; the offending value is reported. A batch with no
    applicable row is recorded as not evaluated.
    """
    dataset = batch.dataset
    if registry is None:
        registry = StatisticRegistry.from_dataset(dataset)
    if label_column is None:
        label_column = dataset.label_column
    rule = crule.rule
    if rule.kind == LOGIC:
        value = f1_score(rule, dataset, batch.rows, label_column)
        if value is None:
            return CheckResult(evaluated=False)
        inside = crule.lo <= value <= crule.hi
        return CheckResult(evaluated=True, violated=not inside, value=value)

    stat = registry.resolve(rule.statistic)
    rows = batch.rows
    keep = _guard_mask(rule, dataset, rows, label_column)
    if rule.kind == PAIRED:
        keep &= _paired_mask(rule.s1, dataset, rows, registry, crule.s1_lo, crule.s1_hi)
    if stat.arity == PER_SAMPLE:
        vals, valid = sample_values_aligned(stat, dataset, rows)
        keep &= valid
        if not keep.any():
            return CheckResult(evaluated=False)
        vals = vals[keep]
        outside = (vals < crule.lo) | (vals > crule.hi)
        if outside.any():
            return CheckResult(evaluated=True, violated=True,
                               value=float(vals[outside][0]))
        return CheckResult(evaluated=True, violated=False)

    if not keep.any():
        return CheckResult(evaluated=False)
    value = batch_value(stat, dataset, rows[keep])
    if value is None:
        return CheckResult(evaluated=False)
    inside = crule.lo <= value <= crule.hi
    return CheckResult(evaluated=True, violated=not inside, value=value)


def _is_per_sample(crule, registry):
    rule = crule.rule
    if rule.kind == LOGIC:
        return False
    return registry.resolve(rule.statistic).arity == PER_SAMPLE


def _scan_sample_rule(crule, dataset, registry, label_column, sample_counts):
    rule = crule.rule
    rows = np.arange(dataset.n_rows)
    keep = _guard_mask(rule, dataset, rows, label_column)
    if rule.kind == PAIRED:
        keep &= _paired_mask(rule.s1, dataset, rows, registry, crule.s1_lo, crule.s1_hi)
    stat = registry.resolve(rule.statistic)
    vals, valid = sample_values_aligned(stat, dataset, rows)
    keep &= valid
    outside = keep & ((vals < crule.lo) | (vals > crule.hi))
    sample_counts[outside] += 1
    return int(outside.sum()), int(keep.sum())


def _scan_batch_rule(crule, dataset, batches, registry, label_column, sample_counts):
    violations = 0
    evaluations = 0
    for batch in batches:
        result = check_rule(crule, batch, registry=registry, label_column=label_column)
        if not result.evaluated:
            continue
        evaluations += batch.size
        if result.violated:
            violations += batch.size
            np.add.at(sample_counts, batch.rows, 1)
    return violations, evaluations


def evaluate(rules, test, batching=None, *, label_column=None, registry=None) -> ViolationReport:
    """Count violations of every rule over a test dataset.

    ``batching`` is (batch_size, count, seed) for minibatch rules; the
    batch size acts as a fallback when a rule carries none. Rules whose
    columns are absent are skipped with zero evaluations rather than
    failing the run.
    """
    if registry is None:
        registry = StatisticRegistry.from_dataset(test)
    if label_column is None:
        label_column = test.label_column
    sample_counts = np.zeros(test.n_rows, dtype=int)
    per_rule = []

    batch_cache = {}

    def batches_for(size):
        if size not in batch_cache:
            if batching is None:
                raise ValueError("minibatch rules need a (batch_size, count, seed) batching")
            fallback, count, seed = batching
            batch_cache[size] = sample_minibatches(test, size or fallback, count, seed)
        return batch_cache[size]

    for crule in rules:
        try:
            if _is_per_sample(crule, registry):
                v, n = _scan_sample_rule(crule, test, registry, label_column, sample_counts)
            else:
                size = crule.rule.batch_size if crule.rule.batch_size > 1 else None
                v, n = _scan_batch_rule(crule, test, batches_for(size), registry,
                                        label_column, sample_counts)
        except (ResolutionError, EmptyStatisticError):
            v, n = 0, 0  # rule not evaluable on this dataset; recorded as skipped
        per_rule.append((crule.signature, v, n))

    report = ViolationReport(
        per_rule=per_rule,
        per_sample=[(int(i), int(c)) for i, c in enumerate(sample_counts)],
        total_violations=int(sample_counts.sum()),
        per_sample_mean=float(sample_counts.mean()) if test.n_rows else 0.0,
        per_sample_std=float(sample_counts.std()) if test.n_rows else 0.0,
    )
    report.validate()
    return report


def batch_violation_count(rules, dataset, rows, *, registry=None, label_column=None) -> int:
    """Member-attributed violation count of a rule set on one batch of rows."""
    batch = Minibatch(dataset, rows)
    if registry is None:
        registry = StatisticRegistry.from_dataset(dataset)
    total = 0
    for crule in rules:
        result = check_rule(crule, batch, registry=registry, label_column=label_column)
        if not (result.evaluated and result.violated):
            continue
        if _is_per_sample(crule, registry):
            rule = crule.rule
            keep = _guard_mask(rule, dataset, batch.rows, label_column)
            if rule.kind == PAIRED:
                keep &= _paired_mask(rule.s1, dataset, batch.rows, registry,
                                     crule.s1_lo, crule.s1_hi)
            stat = registry.resolve(rule.statistic)
            vals, valid = sample_values_aligned(stat, dataset, batch.rows)
            keep &= valid
            total += int((keep & ((vals < crule.lo) | (vals > crule.hi))).sum())
        else:
            total += batch.size
    return total


def report_to_obj(report: ViolationReport) -> dict:
    return {
        "format_version": REPORT_FORMAT_VERSION,
        "per_rule": [{"signature": s, "violations": v, "evaluations": n}
                     for s, v, n in report.per_rule],
        "per_sample": [{"sample": i, "violations": c} for i, c in report.per_sample],
        "totals": {
            "violations": report.total_violations,
            "per_sample_mean": report.per_sample_mean,
            "per_sample_std": report.per_sample_std,
            "rules": len(report.per_rule),
            "samples": len(report.per_sample),
        },
    }


def report_from_obj(obj: dict) -> ViolationReport:
    if obj.get("format_version") != REPORT_FORMAT_VERSION:
        raise ValueError(f"unsupported report format_version {obj.get('format_version')!r}")
    report = ViolationReport(
        per_rule=[(r["signature"], r["violations"], r["evaluations"])
                  for r in obj["per_rule"]],
        per_sample=[(r["sample"], r["violations"]) for r in obj["per_sample"]],
        total_violations=obj["totals"]["violations"],
        per_sample_mean=obj["totals"]["per_sample_mean"],
        per_sample_std=obj["totals"]["per_sample_std"],
    )
    report.validate()
    return report


def report_to_csv(report: ViolationReport) -> str:
    """Long-format CSV: one row per rule, sample, and total entry."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section", "key", "violations", "evaluations"])
    for sig, v, n in report.per_rule:
        writer.writerow(["rule", sig, v, n])
    for i, c in report.per_sample:
        writer.writerow(["sample", i, c, ""])
    writer.writerow(["total", "violations", report.total_violations, ""])
    writer.writerow(["total", "per_sample_mean", repr(report.per_sample_mean), ""])
    writer.writerow(["total", "per_sample_std", repr(report.per_sample_std), ""])
    return buf.getvalue()


def write_report(report: ViolationReport, path, fmt="json"):
    """Serialize a report; JSON key order and float text are stable."""
    path = Path(path)
    if fmt == "json":
        payload = json.dumps(report_to_obj(report), indent=2) + "\n"
    elif fmt == "csv":
        payload = report_to_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def read_report(path) -> ViolationReport:
    with open(path, encoding="utf-8") as fh:
        return report_from_obj(json.load(fh))
