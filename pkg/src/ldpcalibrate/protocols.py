"""Pure-LDP frequency oracles: client-side perturbation, server-side aggregation.

Items are 1-based throughout. A protocol is described by its support
probabilities ``p_star`` (a report supports the user's own item) and
``q_star`` (a report supports some other fixed item); aggregation inverts
them with the standard unbiased estimator.

Two simulation routes exist. ``perturb``/``perturb_many`` produce actual
reports that ``aggregate`` consumes. ``simulate_support_counts`` draws the
per-item support counts directly; for OUE, basic RAPPOR and k-RR this is
the exact joint distribution of the counts, for OLH the per-item marginals
are exact (counts of different items are correlated through the shared
hashes, which the shortcut ignores).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InvalidParameterError

__all__ = [
    "OUE", "BASIC_RAPPOR", "OLH", "KRR", "KINDS",
    "Domain", "ProtocolSpec", "PerturbedReport", "ReportBatch", "FrequencyTable",
    "ItemSetUser",
    "oue_spec", "basic_rappor_spec", "olh_spec", "krr_spec", "make_spec",
    "olh_hash", "perturb", "perturb_many", "supports", "support_counts",
    "aggregate", "estimate_from_counts", "simulate_support_counts",
    "unbiasedness_check", "report_probability", "enumerate_reports",
    "percentile_l", "pad_and_sample", "sample_itemset_items",
    "itemset_aggregate", "users_from_counts",
]

OUE = "oue"
BASIC_RAPPOR = "basic_rappor"
OLH = "olh"
KRR = "krr"
KINDS = (OUE, BASIC_RAPPOR, OLH, KRR)
_UNARY = (OUE, BASIC_RAPPOR)


@dataclass(frozen=True)
class Domain:
    """Real items ``1..d`` followed by ``dummy_count`` padding slots."""

    d: int
    dummy_count: int = 0

    def __post_init__(self):
        if int(self.d) < 1:
            raise InvalidParameterError(f"d must be >= 1, got {self.d}")
        if int(self.dummy_count) < 0:
            raise InvalidParameterError(f"dummy_count must be >= 0, got {self.dummy_count}")

    @property
    def size(self) -> int:
        return self.d + self.dummy_count


@dataclass(frozen=True)
class ProtocolSpec:
    """Identity and probabilities of a pure-LDP mechanism.

    ``p`` and ``q`` are the perturbation probabilities used by the client;
    ``p_star``/``q_star`` are the support probabilities used by the
    aggregator. They coincide except for OLH, where ``q_star = 1/g``.
    """

    kind: str
    epsilon: float
    p_star: float
    q_star: float
    p: float
    q: float
    olh_g: int | None = None
    d: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown protocol kind {self.kind!r}")
        if not self.epsilon > 0:
            raise InvalidParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.q_star < self.p_star <= 1:
            raise InvalidParameterError(
                f"need 0 < q* < p* <= 1, got p*={self.p_star}, q*={self.q_star}")
        if self.kind == OLH and (self.olh_g is None or self.olh_g < 2):
            raise InvalidParameterError(f"OLH needs g >= 2, got {self.olh_g}")


@dataclass(frozen=True)
class PerturbedReport:
    """One user's randomized output. Exactly one variant is populated."""

    kind: str
    bits: np.ndarray | None = None
    hash_seed: int | None = None
    bucket: int | None = None
    item: int | None = None


@dataclass
class ReportBatch:
    """Column-wise storage for many reports of the same protocol."""

    kind: str
    bits: np.ndarray | None = None      # (n, size) uint8
    seeds: np.ndarray | None = None     # (n,) uint64
    buckets: np.ndarray | None = None   # (n,) int64
    items: np.ndarray | None = None     # (n,) int64, 1-based

    def __len__(self):
        for arr in (self.bits, self.seeds, self.items):
            if arr is not None:
                return len(arr)
        return 0

    def __getitem__(self, u) -> PerturbedReport:
        if self.kind in _UNARY:
            return PerturbedReport(self.kind, bits=self.bits[u])
        if self.kind == OLH:
            return PerturbedReport(self.kind, hash_seed=int(self.seeds[u]),
                                   bucket=int(self.buckets[u]))
        return PerturbedReport(self.kind, item=int(self.items[u]))

    def __iter__(self):
        for u in range(len(self)):
            yield self[u]

    @classmethod
    def from_reports(cls, reports: Sequence[PerturbedReport]) -> "ReportBatch":
        reports = list(reports)
        if not reports:
            raise InvalidParameterError("empty report sequence")
        kind = reports[0].kind
        if any(r.kind != kind for r in reports):
            raise InvalidParameterError("reports mix protocol kinds")
        if kind in _UNARY:
            return cls(kind, bits=np.stack([np.asarray(r.bits, dtype=np.uint8) for r in reports]))
        if kind == OLH:
            return cls(kind,
                       seeds=np.array([r.hash_seed for r in reports], dtype=np.uint64),
                       buckets=np.array([r.bucket for r in reports], dtype=np.int64))
        return cls(kind, items=np.array([r.item for r in reports], dtype=np.int64))


@dataclass
class FrequencyTable:
    """Per-item frequencies in user counts. ``values[i-1]`` belongs to item ``i``."""

    values: np.ndarray
    n: int
    label: str = "estimated"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.label not in ("true", "estimated", "calibrated"):
            raise InvalidParameterError(f"bad label {self.label!r}")

    @property
    def d(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ItemSetUser:
    items: frozenset

    def __init__(self, items: Iterable[int] = ()):
        object.__setattr__(self, "items", frozenset(int(i) for i in items))


def _check_epsilon(epsilon):
    if not (isinstance(epsilon, (int, float, np.floating)) and math.isfinite(epsilon) and epsilon > 0):
        raise InvalidParameterError(f"epsilon must be a finite value > 0, got {epsilon!r}")


def oue_spec(epsilon: float) -> ProtocolSpec:
    _check_epsilon(epsilon)
    q = 1.0 / (1.0 + math.exp(epsilon))
    return ProtocolSpec(OUE, float(epsilon), 0.5, q, 0.5, q)


def basic_rappor_spec(epsilon: float) -> ProtocolSpec:
    _check_epsilon(epsilon)
    h = math.exp(epsilon / 2.0)
    p, q = h / (1.0 + h), 1.0 / (1.0 + h)
    return ProtocolSpec(BASIC_RAPPOR, float(epsilon), p, q, p, q)


def olh_spec(epsilon: float) -> ProtocolSpec:
    _check_epsilon(epsilon)
    e = math.exp(epsilon)
    g = max(2, int(round(e + 1.0)))
    p = e / (g - 1 + e)
    q = 1.0 / (g - 1 + e)
    return ProtocolSpec(OLH, float(epsilon), p, 1.0 / g, p, q, olh_g=g)


def krr_spec(epsilon: float, d: int) -> ProtocolSpec:
    _check_epsilon(epsilon)
    if int(d) < 2:
        raise InvalidParameterError(f"k-RR needs d >= 2, got {d}")
    e = math.exp(epsilon)
    p, q = e / (e + d - 1), 1.0 / (e + d - 1)
    return ProtocolSpec(KRR, float(epsilon), p, q, p, q, d=int(d))


def make_spec(kind: str, epsilon: float, d: int | None = None) -> ProtocolSpec:
    """Build a spec by name; ``d`` is the full report domain (k-RR only)."""
    kind = kind.lower().replace("-", "_")
    if kind == OUE:
        return oue_spec(epsilon)
    if kind in (BASIC_RAPPOR, "rappor"):
        return basic_rappor_spec(epsilon)
    if kind == OLH:
        return olh_spec(epsilon)
    if kind in (KRR, "k_rr"):
        if d is None:
            raise InvalidParameterError("k-RR needs the domain size")
        return krr_spec(epsilon, d)
    raise InvalidParameterError(f"unknown protocol kind {kind!r}")


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def olh_hash(seeds, items, g: int) -> np.ndarray:
    """Seeded 64-bit mix of ``(seed, item)`` reduced modulo ``g``.

    splitmix64 finalizer over ``seed ^ (item * golden)``; broadcasts.
    """
    s = np.asarray(seeds, dtype=np.uint64)
    x = np.asarray(items, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = s ^ (x * _GOLDEN)
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z = z ^ (z >> np.uint64(31))
    return (z % np.uint64(g)).astype(np.int64)


def _domain_size(spec: ProtocolSpec, domain) -> int:
    if isinstance(domain, Domain):
        size = domain.size
    elif domain is None:
        if spec.d is None:
            raise InvalidParameterError("domain size is required")
        size = spec.d
    else:
        size = int(domain)
    if spec.kind == KRR and spec.d is not None and spec.d != size:
        raise InvalidParameterError(f"k-RR spec built for d={spec.d}, domain has {size} slots")
    return size


def perturb_many(spec: ProtocolSpec, items, domain, rng: np.random.Generator) -> ReportBatch:
    """Perturb every item in ``items`` (1-based) with one shared stream."""
    size = _domain_size(spec, domain)
    items = np.asarray(items, dtype=np.int64)
    if items.size and (items.min() < 1 or items.max() > size):
        raise InvalidParameterError(f"items must lie in [1, {size}]")
    n = len(items)
    if spec.kind in _UNARY:
        bits = (rng.random((n, size)) < spec.q).astype(np.uint8)
        own = (rng.random(n) < spec.p).astype(np.uint8)
        bits[np.arange(n), items - 1] = own
        return ReportBatch(spec.kind, bits=bits)
    if spec.kind == OLH:
        g = spec.olh_g
        seeds = rng.integers(0, 2**64, size=n, dtype=np.uint64)
        true_bucket = olh_hash(seeds, items, g)
        keep = rng.random(n) < spec.p
        other = rng.integers(0, g - 1, size=n)
        other = other + (other >= true_bucket)
        return ReportBatch(OLH, seeds=seeds, buckets=np.where(keep, true_bucket, other))
    keep = rng.random(n) < spec.p
    other = rng.integers(1, size, size=n)          # 1..size-1
    other = other + (other >= items)
    return ReportBatch(KRR, items=np.where(keep, items, other))


def perturb(spec: ProtocolSpec, item: int, domain, rng: np.random.Generator) -> PerturbedReport:
    """Perturb a single user's item."""
    size = _domain_size(spec, domain)
    if not 1 <= int(item) <= size:
        raise InvalidParameterError(f"item {item} outside [1, {size}]")
    return perturb_many(spec, [int(item)], size, rng)[0]


def supports(spec: ProtocolSpec, report: PerturbedReport, item: int) -> bool:
    if spec.kind in _UNARY:
        return bool(report.bits[item - 1])
    if spec.kind == OLH:
        return int(olh_hash(report.hash_seed, item, spec.olh_g)) == report.bucket
    return report.item == item


def support_counts(spec: ProtocolSpec, reports, d: int) -> np.ndarray:
    """Number of reports supporting each real item ``1..d``."""
    if not isinstance(reports, ReportBatch):
        reports = ReportBatch.from_reports(reports)
    if len(reports) == 0:
        raise InvalidParameterError("empty report sequence")
    if reports.kind != spec.kind:
        raise InvalidParameterError(f"reports are {reports.kind}, spec is {spec.kind}")
    if spec.kind in _UNARY:
        return reports.bits[:, :d].sum(axis=0, dtype=np.int64)
    if spec.kind == OLH:
        counts = np.empty(d, dtype=np.int64)
        for i in range(1, d + 1):
            counts[i - 1] = np.count_nonzero(olh_hash(reports.seeds, i, spec.olh_g) == reports.buckets)
        return counts
    return np.bincount(reports.items, minlength=d + 1)[1:d + 1].astype(np.int64)


def estimate_from_counts(spec: ProtocolSpec, counts, n: int) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    return (counts - n * spec.q_star) / (spec.p_star - spec.q_star)


def aggregate(spec: ProtocolSpec, reports, d: int) -> FrequencyTable:
    """Unbiased frequency estimates for real items; dummy slots are ignored."""
    if not isinstance(reports, ReportBatch):
        reports = ReportBatch.from_reports(reports)
    n = len(reports)
    if n == 0:
        raise InvalidParameterError("empty report sequence")
    counts = support_counts(spec, reports, d)
    return FrequencyTable(estimate_from_counts(spec, counts, n), n, "estimated")


def simulate_support_counts(spec: ProtocolSpec, true_counts, n: int, rng: np.random.Generator,
                            size: int | None = None) -> np.ndarray:
    """Draw support counts for a population with ``true_counts`` per item.

    ``true_counts`` covers every slot of the report domain (dummies
    included); the returned counts cover the same slots.
    """
    f = np.asarray(true_counts, dtype=np.int64)
    if f.min(initial=0) < 0 or f.sum() != n:
        raise InvalidParameterError("true counts must be non-negative and sum to n")
    size = len(f) if size is None else size
    if spec.kind in _UNARY:
        return rng.binomial(f, spec.p) + rng.binomial(n - f, spec.q)
    if spec.kind == OLH:
        return rng.binomial(f, spec.p) + rng.binomial(n - f, spec.q_star)
    if spec.d is not None and spec.d != size:
        raise InvalidParameterError(f"k-RR spec built for d={spec.d}, domain has {size} slots")
    kept = rng.binomial(f, spec.p)
    moved = f - kept
    owners = np.repeat(np.arange(1, size + 1), moved)
    dest = rng.integers(1, size, size=len(owners))
    dest = dest + (dest >= owners)
    return kept + np.bincount(dest, minlength=size + 1)[1:]


def users_from_counts(counts) -> np.ndarray:
    """Item sequence with item ``i`` repeated ``counts[i-1]`` times."""
    counts = np.asarray(counts, dtype=np.int64)
    return np.repeat(np.arange(1, len(counts) + 1), counts)


def unbiasedness_check(spec: ProtocolSpec, true_table: FrequencyTable, trials: int,
                       rng: np.random.Generator, domain=None) -> np.ndarray:
    """Trial-mean of report-level estimates for each item."""
    if trials < 1:
        raise InvalidParameterError("trials must be >= 1")
    d = true_table.d
    domain = d if domain is None else domain
    counts = np.rint(true_table.values).astype(np.int64)
    if counts.sum() != true_table.n:
        raise InvalidParameterError(f"true counts sum to {counts.sum()}, table says n={true_table.n}")
    users = users_from_counts(counts)
    total = np.zeros(d)
    for _ in range(trials):
        reports = perturb_many(spec, users, domain, rng)
        total += aggregate(spec, reports, d).values
    return total / trials


def report_probability(spec: ProtocolSpec, item: int, report: PerturbedReport, size: int) -> float:
    """Exact Pr[perturb(item) = report]; OLH is conditioned on the hash seed."""
    if spec.kind in _UNARY:
        bits = np.asarray(report.bits, dtype=bool)
        prob = 1.0
        for pos in range(size):
            on = spec.p if pos == item - 1 else spec.q
            prob *= on if bits[pos] else 1.0 - on
        return prob
    if spec.kind == OLH:
        own = int(olh_hash(report.hash_seed, item, spec.olh_g))
        return spec.p if report.bucket == own else spec.q
    if report.item == item:
        return spec.p
    return spec.q


def enumerate_reports(spec: ProtocolSpec, size: int, seeds: Sequence[int] = range(16)):
    """Every report the client can emit (OLH: for the given seeds)."""
    if spec.kind in _UNARY:
        for code in range(2 ** size):
            bits = np.array([(code >> (size - 1 - pos)) & 1 for pos in range(size)], dtype=np.uint8)
            yield PerturbedReport(spec.kind, bits=bits)
    elif spec.kind == OLH:
        for seed in seeds:
            for b in range(spec.olh_g):
                yield PerturbedReport(OLH, hash_seed=int(seed), bucket=b)
    else:
        for i in range(1, size + 1):
            yield PerturbedReport(KRR, item=i)


def percentile_l(set_sizes, fraction: float = 0.9) -> int:
    """Nearest-rank percentile of set sizes, floored at 1."""
    sizes = np.sort(np.asarray(set_sizes, dtype=np.int64))
    if sizes.size == 0:
        raise InvalidParameterError("set_sizes is empty")
    if not 0 < fraction <= 1:
        raise InvalidParameterError(f"fraction must be in (0, 1], got {fraction}")
    rank = max(1, math.ceil(fraction * sizes.size))
    return max(1, int(sizes[rank - 1]))


def pad_and_sample(user: ItemSetUser, l: int, domain: Domain, rng: np.random.Generator) -> int:
    """Fix the user to ``l`` items by padding or sub-sampling, then pick one."""
    if l < 1:
        raise InvalidParameterError(f"l must be >= 1, got {l}")
    if domain.dummy_count != l:
        raise InvalidParameterError(f"domain has {domain.dummy_count} dummy slots, need l={l}")
    items = np.array(sorted(user.items), dtype=np.int64)
    if items.size and (items.min() < 1 or items.max() > domain.d):
        raise InvalidParameterError("user holds items outside the real domain")
    if items.size >= l:
        chosen = rng.choice(items, size=l, replace=False)
    else:
        dummies = rng.choice(np.arange(domain.d + 1, domain.d + l + 1), size=l - items.size, replace=False)
        chosen = np.concatenate([items, dummies])
    return int(chosen[rng.integers(l)])


def sample_itemset_items(offsets, flat_items, l: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised ``pad_and_sample`` over users stored CSR-style.

    User ``u`` holds ``flat_items[offsets[u]:offsets[u+1]]``. A uniform slot
    among ``max(size, l)`` lands on a true item with probability
    ``size/max(size, l)`` and on a uniformly chosen dummy otherwise, which
    is the same law as padding/sub-sampling followed by a uniform pick.
    """
    if l < 1:
        raise InvalidParameterError(f"l must be >= 1, got {l}")
    offsets = np.asarray(offsets, dtype=np.int64)
    sizes = np.diff(offsets)
    slots = np.maximum(sizes, l)
    pick = rng.integers(0, slots)
    dummy = d + 1 + rng.integers(0, l, size=len(sizes))
    real = pick < sizes
    out = dummy
    out[real] = np.asarray(flat_items, dtype=np.int64)[offsets[:-1][real] + pick[real]]
    return out


def itemset_aggregate(spec: ProtocolSpec, reports, d: int, l: int) -> FrequencyTable:
    table = aggregate(spec, reports, d)
    table.values = table.values * l
    return table
