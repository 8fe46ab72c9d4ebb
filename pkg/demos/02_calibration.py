"""Posterior-mean calibration on a power-law population.

Raw estimates are unbiased but noisy, and many are negative. Fitting a
power-law prior to the estimates and replacing each one by its posterior
mean shrinks the noise; zeroing everything below the significance
threshold is the simpler baseline.
"""

import numpy as np

from ldpcalibrate import calibrate as cal
from ldpcalibrate import protocols as pr
from ldpcalibrate.data import SyntheticSpec, synthesize

truth, _ = synthesize(SyntheticSpec(d=1000, n=100_000, seed=0))
spec = pr.oue_spec(3.0)
rng = np.random.default_rng(0)
counts = pr.simulate_support_counts(spec, truth.values, truth.n, rng)
raw = pr.FrequencyTable(pr.estimate_from_counts(spec, counts, truth.n), truth.n, "estimated")
noise = cal.noise_model_for(spec, truth.n)

for method in ("mv", "mle"):
    prior = cal.fit_prior(raw, noise, cal.POWERLAW, method)
    print(f"{method}: alpha = {prior.params['alpha']:.3f}")

prior = cal.fit_prior(raw, noise, cal.POWERLAW, "mv")
sig = cal.significance_threshold(truth.d, 0.05, noise.variance)
tables = {
    "raw": raw,
    "zero": cal.zero_below_threshold(raw, sig),
    "calibrate": cal.calibrate_all(raw, prior, noise),
}
print(f"noise sd {noise.std:.1f}, significance threshold {sig:.1f}")
for name, table in tables.items():
    mse = np.mean((table.values - truth.values) ** 2)
    print(f"{name:>10}: MSE {mse:10.1f}   negative estimates {np.sum(table.values < 0):4d}")

# a single item's posterior
i = int(np.argmax(truth.values))
post = cal.posterior(raw.values[i], prior, noise)
print(f"top item: truth {truth.values[i]:.0f}, raw {raw.values[i]:.1f}, posterior mean {post.mean:.1f}")
