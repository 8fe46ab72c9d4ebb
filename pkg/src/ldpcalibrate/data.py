"""Transaction datasets and synthetic populations."""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .calibrate import POWERLAW, PriorModel, prior_pmf
from .exceptions import DegenerateSampleError, InvalidParameterError, ParseError
from .protocols import FrequencyTable, ItemSetUser, users_from_counts

__all__ = ["TransactionDataset", "SyntheticSpec", "parse_transactions", "read_transactions",
           "write_transactions", "flatten_single_item", "synthesize", "largest_remainder"]


@dataclass
class TransactionDataset:
    """Users' item sets with ids remapped to a dense ``1..d`` range.

    ``raw_items``/``raw_offsets`` keep every occurrence in file order
    (duplicates included); ``set_items``/``set_offsets`` hold the
    deduplicated per-user sets. ``original_ids[i-1]`` is the file id of
    dense item ``i``.
    """

    original_ids: np.ndarray
    raw_items: np.ndarray
    raw_offsets: np.ndarray
    set_items: np.ndarray
    set_offsets: np.ndarray

    @property
    def d(self) -> int:
        return len(self.original_ids)

    @property
    def n_users(self) -> int:
        return len(self.set_offsets) - 1

    @property
    def total_occurrences(self) -> int:
        return int(self.raw_items.size)

    @property
    def set_sizes(self) -> np.ndarray:
        return np.diff(self.set_offsets)

    @property
    def users(self) -> list:
        return [ItemSetUser(self.set_items[a:b].tolist())
                for a, b in zip(self.set_offsets[:-1], self.set_offsets[1:])]

    def occurrence_counts(self) -> np.ndarray:
        return np.bincount(self.raw_items, minlength=self.d + 1)[1:]

    def set_counts(self) -> np.ndarray:
        """Number of users holding each item."""
        return np.bincount(self.set_items, minlength=self.d + 1)[1:]


def _open_text(stream: BinaryIO):
    head = stream.peek(2)[:2] if hasattr(stream, "peek") else b""
    if not head:
        data = stream.read()
        stream = io.BytesIO(data)
        head = data[:2]
    if head == b"\x1f\x8b":
        stream = gzip.GzipFile(fileobj=stream)
    return io.TextIOWrapper(stream, encoding="utf-8")


def parse_transactions(stream: BinaryIO) -> TransactionDataset:
    """Parse one transaction of space-separated positive ids per line."""
    remap: dict[int, int] = {}
    raw, set_items = [], []
    raw_offsets, set_offsets = [0], [0]
    for lineno, line in enumerate(_open_text(stream), start=1):
        tokens = line.split()
        if not tokens:
            continue
        seen = set()
        for tok in tokens:
            try:
                value = int(tok)
            except ValueError:
                raise ParseError(lineno, f"not an integer: {tok!r}") from None
            if value <= 0:
                raise ParseError(lineno, f"item ids must be positive, got {value}")
            dense = remap.setdefault(value, len(remap) + 1)
            raw.append(dense)
            if dense not in seen:
                seen.add(dense)
                set_items.append(dense)
        raw_offsets.append(len(raw))
        set_offsets.append(len(set_items))
    return TransactionDataset(
        original_ids=np.fromiter(remap.keys(), dtype=np.int64, count=len(remap)),
        raw_items=np.asarray(raw, dtype=np.int64),
        raw_offsets=np.asarray(raw_offsets, dtype=np.int64),
        set_items=np.asarray(set_items, dtype=np.int64),
        set_offsets=np.asarray(set_offsets, dtype=np.int64),
    )


def read_transactions(path) -> TransactionDataset:
    with open(path, "rb") as fh:
        return parse_transactions(io.BufferedReader(fh))


def write_transactions(dataset: TransactionDataset, stream) -> None:
    """Write every raw occurrence back using the original ids."""
    ids = dataset.original_ids
    for a, b in zip(dataset.raw_offsets[:-1], dataset.raw_offsets[1:]):
        stream.write(" ".join(str(ids[i - 1]) for i in dataset.raw_items[a:b]) + "\n")


def flatten_single_item(dataset: TransactionDataset):
    """Treat every occurrence as its own single-item user.

    Returns ``(n, truth, items)`` with ``items`` the per-user item sequence
    in file order.
    """
    if dataset.total_occurrences == 0:
        raise InvalidParameterError("dataset has no item occurrences")
    counts = dataset.occurrence_counts()
    n = dataset.total_occurrences
    return n, FrequencyTable(counts, n, "true"), dataset.raw_items.copy()


@dataclass
class SyntheticSpec:
    """Population whose item frequencies are i.i.d. draws from a prior.

    With ``n`` set, the draws are rescaled to sum to ``n`` exactly. With
    ``n=None`` the draws are used as frequencies directly, so the data
    follow the family on its own support and ``n`` is their sum.
    """

    d: int
    n: int | None
    family: str = POWERLAW
    params: dict = field(default_factory=lambda: {"alpha": 2.0})
    seed: int = 0
    k_max: int | None = None

    def __post_init__(self):
        if self.d < 1 or (self.n is not None and self.n < 1):
            raise InvalidParameterError(f"need d >= 1 and n >= 1, got d={self.d}, n={self.n}")

    def prior(self) -> PriorModel:
        k_max = self.k_max if self.k_max is not None else (self.n or 10 ** 6)
        k_min = 1 if self.family == POWERLAW else 0
        return prior_pmf(self.family, self.params, (k_min, k_max))


def largest_remainder(targets, total: int) -> np.ndarray:
    """Integers that sum to ``total``, rounding the largest fractional parts up."""
    targets = np.asarray(targets, dtype=float)
    base = np.floor(targets).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        order = np.argsort(-(targets - base), kind="stable")
        base[order[:short]] += 1
    return base


def synthesize(spec: SyntheticSpec, prior: PriorModel | None = None):
    """Draw true frequencies and materialise users.

    Returns ``(truth, items)`` where ``items`` is the shuffled per-user item
    sequence.
    """
    prior = prior if prior is not None else spec.prior()
    for attempt in range(9):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(attempt,)))
        raw = rng.choice(prior.support, size=spec.d, p=prior.pmf)
        if raw.sum() > 0:
            break
    else:
        raise DegenerateSampleError(f"all {spec.d} draws were zero on 9 attempts (seed {spec.seed})")
    if spec.n is None:
        counts = raw.astype(np.int64)
    else:
        counts = largest_remainder(spec.n * raw / raw.sum(), spec.n)
    n = int(counts.sum())
    items = users_from_counts(counts)
    rng.shuffle(items)
    return FrequencyTable(counts, n, "true"), items
