"""Set-valued users with padding and sampling.

Each user holds a small set of items. The client pads (or subsamples) the
set to l slots, picks one slot at random and reports it through OUE; the
server multiplies its estimates by l. The price is an l^2 larger variance.
"""

import io

import numpy as np

from ldpcalibrate import calibrate as cal
from ldpcalibrate import protocols as pr
from ldpcalibrate.data import parse_transactions

rng = np.random.default_rng(0)
lines = []
for _ in range(5000):
    size = rng.integers(1, 6)
    lines.append(" ".join(map(str, rng.choice(np.arange(100, 140), size=size, replace=False))))
dataset = parse_transactions(io.BytesIO(("\n".join(lines) + "\n").encode()))

l = pr.percentile_l(dataset.set_sizes, 0.9)
d, n = dataset.d, dataset.n_users
truth = dataset.set_counts()
spec = pr.oue_spec(2.0)
print(f"{n} users, {d} items, l = {l} (90th percentile of set sizes)")

estimates = []
for _ in range(100):
    sampled = pr.sample_itemset_items(dataset.set_offsets, dataset.set_items, l, d, rng)
    reports = pr.perturb_many(spec, sampled, pr.Domain(d, l), rng)
    estimates.append(pr.itemset_aggregate(spec, reports, d, l).values)
estimates = np.array(estimates)

bias = estimates.mean(axis=0) - truth
print(f"largest |bias| {np.abs(bias).max():.1f} (se {np.sqrt(estimates.var(axis=0).max() / 100):.1f})")
print(f"empirical variance {estimates.var(axis=0).mean():.0f}, "
      f"l^2 formula {cal.noise_model_for(spec, n, l).variance:.0f}")
# users with more than l items are subsampled, so their extra items are
# under-reported; the mean stays exact only when every set fits in l slots
print(f"users with more than l items: {np.sum(dataset.set_sizes > l)}")
