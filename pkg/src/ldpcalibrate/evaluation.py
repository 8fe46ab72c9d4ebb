"""Accuracy metrics and the repeated-trial experiment runner."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import calibrate as cal
from .data import SyntheticSpec, synthesize
from .exceptions import InvalidParameterError
from .protocols import (FrequencyTable, estimate_from_counts, make_spec,
                        sample_itemset_items, simulate_support_counts)

__all__ = ["TrialSet", "HeavyHitterReport", "mse_per_item", "estimation_error",
           "heavy_hitters", "prf", "Scenario", "ExperimentResult", "trial_rng",
           "run_pipeline", "run_experiment", "threshold_grid", "VARIANTS"]

VARIANTS = ("raw", "zero", "calibrate", "calibrate_zero")


@dataclass
class TrialSet:
    trials: list
    truth: FrequencyTable

    def __post_init__(self):
        if not self.trials:
            raise InvalidParameterError("need at least one trial")
        for t in self.trials:
            if t.d != self.truth.d:
                raise InvalidParameterError(f"trial has d={t.d}, truth has d={self.truth.d}")


def mse_per_item(trials: TrialSet) -> np.ndarray:
    est = np.stack([t.values for t in trials.trials])
    return np.mean((est - trials.truth.values) ** 2, axis=0)


def estimation_error(trials: TrialSet) -> float:
    return float(np.mean(mse_per_item(trials)))


def heavy_hitters(table: FrequencyTable, threshold: float) -> set:
    """Items whose value is strictly larger than the threshold."""
    return set((np.flatnonzero(table.values > threshold) + 1).tolist())


@dataclass
class HeavyHitterReport:
    """Counts and scores; ``None`` marks a 0/0 score."""

    threshold: float | None
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float | None
    recall: float | None
    f_score: float | None


def _ratio(num, den):
    return num / den if den else None


def prf(truth_set: set, predicted_set: set, threshold: float | None = None) -> HeavyHitterReport:
    tp = len(truth_set & predicted_set)
    fp = len(predicted_set - truth_set)
    fn = len(truth_set - predicted_set)
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    if precision is None or recall is None:
        f = None
    else:
        f = _ratio(2 * precision * recall, precision + recall)
    return HeavyHitterReport(threshold, tp, fp, fn, precision, recall, f)


@dataclass
class Scenario:
    """What to simulate and how to post-process it.

    Exactly one of ``truth`` or ``synthetic`` is given. For set-valued
    users pass ``itemsets=(offsets, flat_items)`` together with ``truth``
    holding per-item user counts; ``l`` is then the pad length.
    """

    epsilons: Sequence[float]
    truth: FrequencyTable | None = None
    synthetic: SyntheticSpec | None = None
    protocol: str = "oue"
    variants: Sequence[str] = ("raw", "zero", "calibrate")
    family: str = cal.POWERLAW
    fit_method: str = "mv"
    beta: float = 0.05
    thresholds: Sequence[float] | None = None
    n_thresholds: int = 20
    itemsets: tuple | None = None
    l: int = 1
    support: tuple | None = None
    config: cal.CalibrationConfig = field(default_factory=cal.CalibrationConfig)

    def __post_init__(self):
        if (self.truth is None) == (self.synthetic is None):
            raise InvalidParameterError("give exactly one of truth / synthetic")
        if not self.epsilons:
            raise InvalidParameterError("epsilons: need at least one value")
        for eps in self.epsilons:
            if not eps > 0:
                raise InvalidParameterError(f"epsilons: values must be > 0, got {eps}")
        for v in self.variants:
            if v not in VARIANTS:
                raise InvalidParameterError(f"variants: unknown variant {v!r}")
        if not 0 < self.beta < 1:
            raise InvalidParameterError(f"beta: must be in (0, 1), got {self.beta}")
        if self.fit_method not in ("mv", "mle"):
            raise InvalidParameterError(f"fit_method: unknown method {self.fit_method!r}")
        if self.l < 1:
            raise InvalidParameterError(f"l: must be >= 1, got {self.l}")


def trial_rng(master_seed: int, trial: int, eps_index: int = 0) -> np.random.Generator:
    """Independent stream for one (trial, epsilon) cell."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(trial, eps_index)))


def threshold_grid(sig: float, count: int = 20) -> np.ndarray:
    """``count`` log-spaced thresholds below the significance threshold."""
    return np.geomspace(sig / 50.0, sig, count, endpoint=False)


def _simulate(scenario: Scenario, truth: FrequencyTable, eps: float, rng):
    d = truth.d
    if scenario.itemsets is None:
        size = d
        spec = make_spec(scenario.protocol, eps, d=size)
        counts = simulate_support_counts(spec, np.rint(truth.values).astype(np.int64), truth.n, rng)
        values = estimate_from_counts(spec, counts[:d], truth.n)
        return spec, FrequencyTable(values, truth.n, "estimated")
    offsets, flat = scenario.itemsets
    n_users = len(offsets) - 1
    size = d + scenario.l
    spec = make_spec(scenario.protocol, eps, d=size)
    sampled = sample_itemset_items(offsets, flat, scenario.l, d, rng)
    slot_counts = np.bincount(sampled, minlength=size + 1)[1:]
    counts = simulate_support_counts(spec, slot_counts, n_users, rng)
    values = scenario.l * estimate_from_counts(spec, counts[:d], n_users)
    return spec, FrequencyTable(values, n_users, "estimated")


def run_pipeline(scenario: Scenario, truth: FrequencyTable, eps: float, rng):
    """One collection followed by every requested post-processing variant.

    Returns ``(tables, info)``; all variants share the same raw estimates.
    """
    spec, raw = _simulate(scenario, truth, eps, rng)
    noise = cal.noise_model_for(spec, raw.n, scenario.l)
    sig = cal.significance_threshold(raw.d, scenario.beta, noise.variance)
    tables = {}
    prior = None
    for variant in scenario.variants:
        if variant == "raw":
            tables[variant] = raw
        elif variant == "zero":
            tables[variant] = cal.zero_below_threshold(raw, sig)
        else:
            if prior is None:
                prior = cal.fit_prior(raw, noise, scenario.family, scenario.fit_method,
                                      scenario.config, scenario.support)
            calibrated = cal.calibrate_all(raw, prior, noise, scenario.config)
            if variant == "calibrate_zero":
                calibrated = cal.zero_below_threshold(calibrated, sig)
            tables[variant] = calibrated
    return tables, {"noise": noise, "significance_threshold": sig, "prior": prior, "spec": spec}


@dataclass
class ExperimentResult:
    records: list
    summary: list
    truth: FrequencyTable


def _summarise(records):
    groups = {}
    for r in records:
        key = (r["epsilon"], r["variant"], r["metric"], r["threshold"])
        groups.setdefault(key, []).append(r["value"])
    out = []
    for (eps, variant, metric, thr), vals in groups.items():
        defined = [v for v in vals if v is not None]
        out.append({
            "epsilon": eps, "variant": variant, "metric": metric, "threshold": thr,
            "mean": float(np.mean(defined)) if defined else None,
            "std": float(np.std(defined)) if defined else None,
            "count": len(defined), "undefined": len(vals) - len(defined),
        })
    return out


def run_experiment(scenario: Scenario, trials: int, master_seed: int) -> ExperimentResult:
    """Repeat collection ``trials`` times per epsilon and score every variant."""
    if trials < 1:
        raise InvalidParameterError(f"trials: must be >= 1, got {trials}")
    if scenario.truth is not None:
        truth = scenario.truth
    else:
        truth, _ = synthesize(scenario.synthetic)
    records = []
    for e_idx, eps in enumerate(scenario.epsilons):
        for trial in range(trials):
            tables, info = run_pipeline(scenario, truth, eps, trial_rng(master_seed, trial, e_idx))
            sig = info["significance_threshold"]
            grid = (list(scenario.thresholds) if scenario.thresholds is not None
                    else threshold_grid(sig, scenario.n_thresholds).tolist())
            grid = [float(t) for t in grid] + [float(sig)]
            for variant in scenario.variants:
                table = tables[variant]
                err = float(np.mean((table.values - truth.values) ** 2))
                base = {"epsilon": float(eps), "variant": variant, "trial": trial}
                records.append({**base, "metric": "estimation_error", "threshold": None, "value": err})
                for thr in grid:
                    rep = prf(heavy_hitters(truth, thr), heavy_hitters(table, thr), thr)
                    for metric in ("precision", "recall", "f_score"):
                        records.append({**base, "metric": metric, "threshold": thr,
                                        "value": getattr(rep, metric)})
    return ExperimentResult(records, _summarise(records), truth)
