import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldpcalibrate import protocols as pr
from ldpcalibrate.exceptions import InvalidParameterError
from ldpcalibrate.protocols import (Domain, FrequencyTable, ItemSetUser, PerturbedReport,
                                    ReportBatch)

eps_st = st.floats(min_value=0.05, max_value=8.0, allow_nan=False)


# --- spec constructors -------------------------------------------------------

def test_oue_examples():
    s = pr.oue_spec(1.0)
    assert s.p_star == 0.5
    assert s.q_star == pytest.approx(0.268941, abs=1e-6)
    s = pr.oue_spec(math.log(3))
    assert (s.p_star, s.q_star) == (0.5, pytest.approx(0.25, abs=1e-15))


@pytest.mark.parametrize("make", [pr.oue_spec, pr.basic_rappor_spec, pr.olh_spec,
                                  lambda e: pr.krr_spec(e, 4)])
@pytest.mark.parametrize("eps", [0.0, -1.0, float("nan"), float("inf")])
def test_bad_epsilon_rejected(make, eps):
    with pytest.raises(InvalidParameterError):
        make(eps)


def test_basic_rappor_examples():
    s = pr.basic_rappor_spec(2.0)
    assert s.p_star == pytest.approx(0.731059, abs=1e-6)
    assert s.q_star == pytest.approx(0.268941, abs=1e-6)
    s = pr.basic_rappor_spec(2 * math.log(3))
    assert s.p_star == pytest.approx(0.75, abs=1e-15)
    assert s.q_star == pytest.approx(0.25, abs=1e-15)


@given(eps_st)
def test_basic_rappor_symmetric(eps):
    s = pr.basic_rappor_spec(eps)
    assert s.p_star + s.q_star == pytest.approx(1.0, abs=1e-15)


def test_olh_examples():
    s = pr.olh_spec(math.log(3))
    assert s.olh_g == 4 and s.p == pytest.approx(0.5) and s.q_star == 0.25
    s = pr.olh_spec(math.log(2))
    assert s.olh_g == 3 and s.p == pytest.approx(0.5) and s.q_star == pytest.approx(1 / 3)


def test_olh_g_floor():
    assert pr.olh_spec(0.01).olh_g == 2


def test_krr_examples():
    s = pr.krr_spec(math.log(3), 4)
    assert s.p_star == pytest.approx(0.5) and s.q_star == pytest.approx(1 / 6)
    with pytest.raises(InvalidParameterError):
        pr.krr_spec(1.0, 1)


@given(eps_st, st.integers(2, 1000))
def test_krr_ratio_and_total(eps, d):
    s = pr.krr_spec(eps, d)
    assert s.p_star / s.q_star == pytest.approx(math.exp(eps), rel=1e-12)
    assert s.p_star + (d - 1) * s.q_star == pytest.approx(1.0, abs=1e-12)


def test_make_spec_dispatch():
    assert pr.make_spec("oue", 1.0).kind == pr.OUE
    assert pr.make_spec("krr", 1.0, d=5).d == 5
    with pytest.raises(InvalidParameterError):
        pr.make_spec("krr", 1.0)
    with pytest.raises(InvalidParameterError):
        pr.make_spec("bogus", 1.0)


# --- OLH hashing -------------------------------------------------------------

@pytest.mark.parametrize("d,g", [(3, 2), (4, 3), (5, 4), (8, 2)])
def test_olh_support_probability_full_family(d, g):
    # Exact oracle: average over every function [d] -> [g] (a universal family)
    # and every output bucket; a non-true item is supported with probability 1/g.
    e = Fraction(3)  # e^epsilon; the answer does not depend on it
    p = e / (g - 1 + e)
    q = (1 - p) / (g - 1)
    true_item, other = 0, 1
    total = Fraction(0)
    funcs = list(itertools.product(range(g), repeat=d))
    for h in funcs:
        for b in range(g):
            pr_b = p if b == h[true_item] else q
            if h[other] == b:
                total += pr_b
    assert total / len(funcs) == Fraction(1, g)


@pytest.mark.parametrize("g", [2, 3, 4, 7])
def test_olh_hash_collision_rate(g):
    rng = np.random.default_rng(0)
    seeds = rng.integers(0, 2 ** 64, size=200_000, dtype=np.uint64)
    a = pr.olh_hash(seeds, 3, g)
    b = pr.olh_hash(seeds, 11, g)
    rate = np.mean(a == b)
    assert abs(rate - 1 / g) < 4 * math.sqrt((1 / g) * (1 - 1 / g) / seeds.size)
    assert a.min() >= 0 and a.max() < g


def test_olh_support_count_averages_d_over_g():
    spec = pr.olh_spec(math.log(3))
    d = 40
    rng = np.random.default_rng(1)
    batch = pr.perturb_many(spec, np.full(5000, 1), d, rng)
    supported = np.stack([pr.olh_hash(batch.seeds, i, spec.olh_g) == batch.buckets
                          for i in range(2, d + 1)]).sum(axis=0)
    assert abs(supported.mean() - (d - 1) / spec.olh_g) < 0.2


# --- perturb / supports -------------------------------------------------------

def test_oue_large_epsilon_zero_bits_exact():
    spec = pr.oue_spec(60.0)
    rng = np.random.default_rng(2)
    batch = pr.perturb_many(spec, np.full(2000, 2), 5, rng)
    assert batch.bits[:, [0, 2, 3, 4]].sum() == 0
    assert 0.45 < batch.bits[:, 1].mean() < 0.55


@pytest.mark.parametrize("kind", [pr.OUE, pr.BASIC_RAPPOR])
def test_unary_bit_rates(kind):
    spec = pr.make_spec(kind, 1.5)
    rng = np.random.default_rng(3)
    bits = pr.perturb_many(spec, np.full(100_000, 2), 3, rng).bits
    rates = bits.mean(axis=0)
    assert rates == pytest.approx([spec.q, spec.p, spec.q], abs=0.01)


def test_krr_rates():
    spec = pr.krr_spec(1.0, 4)
    rng = np.random.default_rng(4)
    items = pr.perturb_many(spec, np.full(100_000, 3), 4, rng).items
    rates = np.bincount(items, minlength=5)[1:] / items.size
    assert rates == pytest.approx([spec.q, spec.q, spec.p, spec.q], abs=0.01)


def test_supports_examples():
    oue = pr.oue_spec(1.0)
    rep = PerturbedReport(pr.OUE, bits=np.array([1, 0, 1], dtype=np.uint8))
    assert pr.supports(oue, rep, 1) and not pr.supports(oue, rep, 2)
    krr = pr.krr_spec(1.0, 10)
    assert pr.supports(krr, PerturbedReport(pr.KRR, item=7), 7)
    assert not pr.supports(krr, PerturbedReport(pr.KRR, item=7), 6)


def test_perturb_single_matches_domain_checks():
    spec = pr.oue_spec(1.0)
    rng = np.random.default_rng(0)
    rep = pr.perturb(spec, 2, Domain(3), rng)
    assert rep.bits.shape == (3,)
    with pytest.raises(InvalidParameterError):
        pr.perturb(spec, 4, Domain(3), rng)
    with pytest.raises(InvalidParameterError):
        pr.perturb(pr.krr_spec(1.0, 3), 1, Domain(4), rng)


def test_batch_roundtrip_through_reports():
    spec = pr.olh_spec(2.0)
    batch = pr.perturb_many(spec, [1, 2, 3, 2], 3, np.random.default_rng(5))
    again = ReportBatch.from_reports(list(batch))
    assert np.array_equal(again.seeds, batch.seeds)
    assert np.array_equal(again.buckets, batch.buckets)
    assert pr.support_counts(spec, list(batch), 3).tolist() == pr.support_counts(spec, batch, 3).tolist()


# --- aggregation ---------------------------------------------------------------

def test_estimate_from_counts_examples():
    spec = pr.oue_spec(math.log(3))
    assert pr.estimate_from_counts(spec, [40, 25, 20], 100) == pytest.approx([60, 0, -20])


def test_aggregate_empty_rejected():
    with pytest.raises(InvalidParameterError):
        pr.aggregate(pr.oue_spec(1.0), [], 3)


def test_aggregate_ignores_dummies():
    spec = pr.oue_spec(2.0)
    rng = np.random.default_rng(6)
    batch = pr.perturb_many(spec, [1, 4, 5, 2], Domain(3, 2), rng)
    assert pr.aggregate(spec, batch, 3).d == 3


@pytest.mark.slow
@pytest.mark.parametrize("kind", pr.KINDS)
def test_unbiased_small_example(kind):
    truth = FrequencyTable(np.array([600, 300, 100]), 1000)
    spec = pr.make_spec(kind, 4.0, d=3)
    trials = 200
    rng = np.random.default_rng(7)
    means = pr.unbiasedness_check(spec, truth, trials, rng)
    # holders of the item are supported w.p. p*, everyone else w.p. q*
    p, q = spec.p_star, spec.q_star
    var = (1000 * q * (1 - q) + truth.values * (p * (1 - p) - q * (1 - q))) / (p - q) ** 2
    se = np.sqrt(var / trials)
    assert np.all(np.abs(means - truth.values) <= 3 * se)


@pytest.mark.slow
@pytest.mark.parametrize("kind", [pr.OUE, pr.BASIC_RAPPOR])
def test_unbiasedness_exceedance_rate_pooled(kind):
    # pooled over repetitions, |z| > 3 should occur at about the normal rate 0.27%
    truth = FrequencyTable(np.repeat([160, 60, 20, 0], 25), 6000)
    spec = pr.make_spec(kind, 2.0)
    p, q = spec.p_star, spec.q_star
    var = (6000 * q * (1 - q) + truth.values * (p * (1 - p) - q * (1 - q))) / (p - q) ** 2
    zs = []
    for rep in range(8):
        means = pr.unbiasedness_check(spec, truth, 100, np.random.default_rng([31, rep]))
        zs.append((means - truth.values) / np.sqrt(var / 100))
    zs = np.concatenate(zs)
    assert np.mean(np.abs(zs) > 3) <= 0.008
    assert abs(zs.std() - 1) < 0.08 and abs(zs.mean()) < 0.12


def test_all_zero_truth_single_trial_equals_aggregate():
    spec = pr.oue_spec(1.0)
    truth = FrequencyTable(np.array([0, 0, 5]), 5)
    rng_a, rng_b = np.random.default_rng(8), np.random.default_rng(8)
    one = pr.unbiasedness_check(spec, truth, 1, rng_a)
    batch = pr.perturb_many(spec, pr.users_from_counts([0, 0, 5]), 3, rng_b)
    assert np.array_equal(one, pr.aggregate(spec, batch, 3).values)


@pytest.mark.parametrize("kind", pr.KINDS)
def test_fast_simulation_matches_moments(kind):
    f = np.array([500, 300, 150, 50])
    n = int(f.sum())
    spec = pr.make_spec(kind, 2.0, d=4)
    rng = np.random.default_rng(9)
    est = np.stack([pr.estimate_from_counts(spec, pr.simulate_support_counts(spec, f, n, rng), n)
                    for _ in range(4000)])
    var = n * spec.q_star * (1 - spec.q_star) / (spec.p_star - spec.q_star) ** 2
    assert np.all(np.abs(est.mean(axis=0) - f) < 4 * np.sqrt(est.var(axis=0) / 4000))
    if kind in (pr.OUE,):
        assert est.var(axis=0) == pytest.approx(
            var + f * (spec.p * (1 - spec.p) - spec.q * (1 - spec.q)) / (spec.p - spec.q) ** 2, rel=0.1)


def test_simulate_rejects_bad_counts():
    with pytest.raises(InvalidParameterError):
        pr.simulate_support_counts(pr.oue_spec(1.0), [1, 2], 4, np.random.default_rng(0))


# --- item sets -------------------------------------------------------------------

def test_percentile_examples():
    assert pr.percentile_l(range(1, 11), 0.9) == 9
    assert pr.percentile_l([3, 3, 3, 3], 0.37) == 3
    assert pr.percentile_l([0, 0, 0], 0.9) == 1
    with pytest.raises(InvalidParameterError):
        pr.percentile_l([1, 2], 0.0)


def _pick_rates(user, l, d, reps=60_000, seed=0):
    rng = np.random.default_rng(seed)
    dom = Domain(d, l)
    picks = np.array([pr.pad_and_sample(user, l, dom, rng) for _ in range(reps)])
    return np.bincount(picks, minlength=d + l + 1)[1:] / reps


def test_pad_two_items_l3():
    rates = _pick_rates(ItemSetUser({1, 2}), 3, 5, reps=30_000)
    assert rates[0] == pytest.approx(1 / 3, abs=0.01)
    assert rates[1] == pytest.approx(1 / 3, abs=0.01)
    assert rates[5:].sum() == pytest.approx(1 / 3, abs=0.01)


def test_subsample_five_items_l3():
    rates = _pick_rates(ItemSetUser({1, 2, 3, 4, 5}), 3, 5, reps=30_000)
    assert rates[:5] == pytest.approx([0.2] * 5, abs=0.01)


def test_empty_set_always_dummy():
    rng = np.random.default_rng(0)
    picks = [pr.pad_and_sample(ItemSetUser(), 2, Domain(4, 2), rng) for _ in range(200)]
    assert set(picks) <= {5, 6}


def test_vectorised_sampler_matches_scalar_law():
    offsets = np.array([0, 2, 7, 7])
    flat = np.array([1, 2, 1, 2, 3, 4, 5])
    rng = np.random.default_rng(10)
    reps = 40_000
    out = np.stack([pr.sample_itemset_items(offsets, flat, 3, 5, rng) for _ in range(reps)])
    u0 = np.bincount(out[:, 0], minlength=9)[1:] / reps
    u1 = np.bincount(out[:, 1], minlength=9)[1:] / reps
    u2 = np.bincount(out[:, 2], minlength=9)[1:] / reps
    assert u0[:2] == pytest.approx([1 / 3, 1 / 3], abs=0.01) and u0[5:].sum() == pytest.approx(1 / 3, abs=0.01)
    assert u1[:5] == pytest.approx([0.2] * 5, abs=0.01) and u1[5:].sum() == 0
    assert u2[:5].sum() == 0 and u2[5:] == pytest.approx([1 / 3] * 3, abs=0.01)


def test_itemset_aggregate_l1_is_aggregate():
    spec = pr.oue_spec(1.0)
    batch = pr.perturb_many(spec, [1, 2, 2, 3], Domain(3, 1), np.random.default_rng(0))
    assert np.array_equal(pr.itemset_aggregate(spec, batch, 3, 1).values,
                          pr.aggregate(spec, batch, 3).values)


@pytest.mark.slow
def test_itemset_single_item_unbiased_l2():
    spec = pr.oue_spec(2.0)
    n, l, d = 2000, 2, 3
    offsets = np.arange(n + 1)
    flat = np.full(n, 2)
    rng = np.random.default_rng(11)
    vals = []
    for _ in range(200):
        items = pr.sample_itemset_items(offsets, flat, l, d, rng)
        vals.append(pr.itemset_aggregate(spec, pr.perturb_many(spec, items, d + l, rng), d, l).values[1])
    var = l ** 2 * n * spec.q_star * (1 - spec.q_star) / (spec.p_star - spec.q_star) ** 2
    assert abs(np.mean(vals) - n) < 3 * math.sqrt(var / 200) * 1.5


# --- LDP ratio by enumeration -------------------------------------------------

@pytest.mark.parametrize("kind", pr.KINDS)
@given(eps=st.floats(0.1, 3.0))
@settings(max_examples=15, deadline=None)
def test_ldp_ratio_enumeration(kind, eps):
    size = 4
    spec = pr.make_spec(kind, eps, d=size)
    if kind == pr.OLH and spec.olh_g > 4:
        return
    worst = 0.0
    for rep in pr.enumerate_reports(spec, size):
        probs = [pr.report_probability(spec, i, rep, size) for i in range(1, size + 1)]
        worst = max(worst, max(probs) / min(probs))
    assert worst <= math.exp(eps) * (1 + 1e-12)


@pytest.mark.parametrize("kind", pr.KINDS)
def test_report_probabilities_sum_to_one(kind):
    spec = pr.make_spec(kind, 1.0, d=3)
    for item in (1, 2, 3):
        total = sum(pr.report_probability(spec, item, r, 3) for r in pr.enumerate_reports(spec, 3, seeds=[5]))
        assert total == pytest.approx(1.0, abs=1e-12)
