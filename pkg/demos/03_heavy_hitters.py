"""Heavy hitters across thresholds and privacy budgets.

Precision, recall and F-score of the items whose estimate exceeds a
threshold, for thresholded (Zero) and calibrated estimates, averaged over
a handful of seeded trials.
"""

from collections import defaultdict

from ldpcalibrate.data import SyntheticSpec
from ldpcalibrate.evaluation import Scenario, run_experiment

scenario = Scenario(epsilons=[2.0, 4.0], synthetic=SyntheticSpec(d=1000, n=100_000, seed=0),
                    variants=("zero", "calibrate"), n_thresholds=6)
result = run_experiment(scenario, trials=5, master_seed=0)

table = defaultdict(dict)
for row in result.summary:
    if row["metric"] == "f_score":
        table[row["epsilon"], row["threshold"]][row["variant"]] = row["mean"]

print(f"{'eps':>4} {'threshold':>10} {'F zero':>8} {'F calibrate':>12}")
for (eps, thr), scores in sorted(table.items()):
    z, c = scores.get("zero"), scores.get("calibrate")
    show = lambda v: "   n/a" if v is None else f"{v:6.3f}"
    print(f"{eps:4g} {thr:10.1f} {show(z):>8} {show(c):>12}")
# the last threshold per epsilon is the significance threshold itself
