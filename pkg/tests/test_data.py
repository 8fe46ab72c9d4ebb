import io
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldpcalibrate import calibrate as cal
from ldpcalibrate.data import (SyntheticSpec, flatten_single_item, largest_remainder,
                               parse_transactions, read_transactions, synthesize,
                               write_transactions)
from ldpcalibrate.exceptions import InvalidParameterError, ParseError

DATA = Path(__file__).parent / "data"


def parse_text(text):
    return parse_transactions(io.BytesIO(text.encode()))


def test_two_user_example():
    ds = parse_text("1 2 3\n2 2\n")
    assert ds.n_users == 2 and ds.d == 3 and ds.total_occurrences == 5
    assert [u.items for u in ds.users] == [frozenset({1, 2, 3}), frozenset({2})]
    n, truth, items = flatten_single_item(ds)
    assert n == 5 and truth.values.tolist() == [1, 3, 1] and truth.n == 5
    assert items.tolist() == [1, 2, 3, 2, 2]


def test_mini_fixture_hand_counts():
    # 4 users; ids 1, 2, 3, 10, 7 in first-seen order; 8 occurrences
    ds = read_transactions(DATA / "mini.dat")
    assert ds.d == 5 and ds.n_users == 4 and ds.total_occurrences == 8
    assert ds.original_ids.tolist() == [1, 2, 3, 10, 7]
    assert ds.occurrence_counts().tolist() == [1, 3, 2, 1, 1]
    assert ds.set_counts().tolist() == [1, 2, 2, 1, 1]
    assert ds.set_sizes.tolist() == [3, 1, 2, 1]


def test_gzip_detected():
    plain = read_transactions(DATA / "mini.dat")
    packed = read_transactions(DATA / "mini.dat.gz")
    assert np.array_equal(plain.raw_items, packed.raw_items)
    assert np.array_equal(plain.original_ids, packed.original_ids)


def test_blank_lines_and_trailing_space():
    ds = read_transactions(DATA / "mini_retail.dat")
    assert ds.n_users == 3 and ds.d == 4 and ds.total_occurrences == 7
    assert ds.occurrence_counts().tolist() == [3, 2, 1, 1]


@pytest.mark.parametrize("text,line", [("1 2\nx 3\n", 2), ("1\n\n0\n", 3), ("4 -2\n", 1)])
def test_parse_errors_name_line(text, line):
    with pytest.raises(ParseError) as info:
        parse_text(text)
    assert info.value.line_number == line


def test_empty_dataset_flatten_rejected():
    with pytest.raises(InvalidParameterError):
        flatten_single_item(parse_text("\n\n"))


transactions = st.lists(st.lists(st.integers(1, 60), min_size=1, max_size=8), min_size=1, max_size=30)


@given(transactions)
@settings(max_examples=60)
def test_flatten_recount_and_roundtrip(rows):
    text = "".join(" ".join(map(str, r)) + "\n" for r in rows)
    ds = parse_text(text)
    n, truth, items = flatten_single_item(ds)
    expected = {}
    for r in rows:
        for x in r:
            expected[x] = expected.get(x, 0) + 1
    got = {int(ds.original_ids[i]): int(c) for i, c in enumerate(truth.values)}
    assert got == expected and n == sum(expected.values()) == truth.values.sum()
    out = io.StringIO()
    write_transactions(ds, out)
    assert out.getvalue() == text


def _dataset_path(name):
    root = os.environ.get("LDPCAL_DATA_DIR", str(DATA))
    for candidate in (f"{name}.dat", f"{name}.dat.gz"):
        path = Path(root) / candidate
        if path.exists():
            return path
    pytest.skip(f"{name} dataset not available (set LDPCAL_DATA_DIR)")


@pytest.mark.parametrize("name,d,total", [("kosarak", 41_270, 8_019_015), ("retail", 16_470, 908_576)])
def test_published_dataset_totals(name, d, total):
    ds = read_transactions(_dataset_path(name))
    assert ds.d == d and ds.total_occurrences == total


# --- synthesis -------------------------------------------------------------------

def test_point_mass_equal_rescale():
    prior = cal.discrete_prior(1, [1.0])
    truth, items = synthesize(SyntheticSpec(d=4, n=8), prior=prior)
    assert truth.values.tolist() == [2, 2, 2, 2]
    assert sorted(items.tolist()) == [1, 1, 2, 2, 3, 3, 4, 4]


@given(st.integers(0, 10 ** 6), st.integers(1, 300), st.integers(1, 10 ** 5))
@settings(max_examples=30, deadline=None)
def test_rescale_sums_to_n(seed, d, n):
    truth, items = synthesize(SyntheticSpec(d=d, n=n, seed=seed, k_max=1000))
    assert truth.values.sum() == n == truth.n == items.size
    assert truth.values.min() >= 0


def test_bit_reproducible():
    spec = SyntheticSpec(d=500, n=20_000, seed=42)
    a, ia = synthesize(spec)
    b, ib = synthesize(spec)
    assert np.array_equal(a.values, b.values) and np.array_equal(ia, ib)
    c, _ = synthesize(SyntheticSpec(d=500, n=20_000, seed=43))
    assert not np.array_equal(a.values, c.values)


def test_natural_mode_keeps_draws():
    truth, items = synthesize(SyntheticSpec(d=300, n=None, seed=1, k_max=50))
    assert truth.values.max() <= 50 and truth.values.min() >= 1
    assert truth.n == truth.values.sum() == items.size


def test_gaussian_family():
    spec = SyntheticSpec(d=2000, n=None, family=cal.GAUSSIAN, params={"mu": 40, "sigma2": 25}, k_max=200)
    truth, _ = synthesize(spec)
    assert abs(truth.values.mean() - 40) < 0.5


def test_largest_remainder():
    assert largest_remainder([1.5, 1.5, 1.0], 4).tolist() == [2, 1, 1]
    assert largest_remainder([0.2, 0.3, 0.5], 1).tolist() == [0, 0, 1]


def _log_binned_slope(values):
    v = values[values > 0]
    edges = np.unique(np.floor(np.logspace(0, np.log10(v.max()) + 1e-9, 25)).astype(int))
    hist, _ = np.histogram(v, bins=edges)
    density = hist / np.diff(edges)
    centre = np.sqrt(edges[:-1] * edges[1:])
    keep = hist >= 5
    return np.polyfit(np.log(centre[keep]), np.log(density[keep]), 1)[0]


@pytest.mark.parametrize("n", [None, 10 ** 6])
def test_powerlaw_histogram_slope(n):
    truth, _ = synthesize(SyntheticSpec(d=10_000, n=n, seed=0, k_max=10 ** 5 if n is None else None))
    assert abs(_log_binned_slope(truth.values) + 2.0) <= 0.15
