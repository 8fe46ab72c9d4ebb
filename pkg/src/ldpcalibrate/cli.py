"""Command-line pipeline: simulate -> fit -> calibrate -> evaluate, plus sweep.

Exit codes: 1 configuration error, 2 I/O or input-format error, 3 numeric
failure. Output paths default to ``$LDPCAL_OUTPUT_DIR`` (or the working
directory) when ``--out`` is omitted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import calibrate as cal
from . import io as fio
from .data import SyntheticSpec, flatten_single_item, read_transactions, synthesize
from .evaluation import (Scenario, VARIANTS, heavy_hitters, prf, run_experiment,
                         threshold_grid, trial_rng)
from .exceptions import (DegeneratePosteriorError, DegenerateSampleError, FitError,
                         InvalidParameterError, ParseError)
from .protocols import (FrequencyTable, aggregate, estimate_from_counts, itemset_aggregate,
                        make_spec, percentile_l, perturb_many, sample_itemset_items,
                        simulate_support_counts)

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 1, 2, 3
OUTPUT_DIR_ENV = "LDPCAL_OUTPUT_DIR"
# destinations do not change file contents, so they stay out of the config echo
_OUTPUT_FLAGS = {"func", "out", "reports", "truth_out", "json_out"}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _out_path(path, default_name):
    if path:
        return path
    return os.path.join(os.environ.get(OUTPUT_DIR_ENV, "."), default_name)


def _provenance(command, args, **extra):
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _OUTPUT_FLAGS}
    return {"tool": "ldpcalibrate", "version": __version__, "command": command,
            "config": config, **extra}


def parse_synthetic(text: str) -> SyntheticSpec:
    """``d=100,n=10000,alpha=2[,seed=..,k_max=..,family=gaussian,mu=..,sigma2=..]``."""
    fields = {}
    for part in text.split(","):
        if "=" not in part:
            raise ConfigError(f"--synthetic: expected key=value, got {part!r}")
        key, value = part.split("=", 1)
        fields[key.strip()] = value.strip()
    try:
        d = int(fields.pop("d"))
        n_text = fields.pop("n")
        n = None if n_text.lower() == "none" else int(float(n_text))
        family = fields.pop("family", "powerlaw")
        if family == "powerlaw":
            params = {"alpha": float(fields.pop("alpha", 2.0))}
        elif family == "gaussian":
            params = {"mu": float(fields.pop("mu")), "sigma2": float(fields.pop("sigma2"))}
        else:
            raise ConfigError(f"--synthetic: unknown family {family!r}")
        seed = int(fields.pop("seed")) if "seed" in fields else None
        k_max = int(float(fields.pop("k_max"))) if "k_max" in fields else None
    except KeyError as exc:
        raise ConfigError(f"--synthetic: missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(f"--synthetic: {exc}") from None
    if fields:
        raise ConfigError(f"--synthetic: unknown fields {sorted(fields)}")
    return SyntheticSpec(d=d, n=n, family=family, params=params,
                         seed=seed if seed is not None else 0, k_max=k_max)


def _epsilon(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0 or not np.isfinite(value):
        raise argparse.ArgumentTypeError(f"invalid-parameter: epsilon must be > 0, got {text}")
    return value


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


class _Population:
    """Truth and users for a synthetic spec or a transaction file."""

    def __init__(self, args):
        self.item_ids = None
        self.itemsets = None
        self.l = 1
        if args.synthetic:
            spec = parse_synthetic(args.synthetic)
            if "seed=" not in args.synthetic:
                spec.seed = args.seed
            if getattr(args, "itemset", False):
                raise ConfigError("--itemset needs --dataset")
            self.truth, self.items = synthesize(spec)
        else:
            dataset = read_transactions(args.dataset)
            self.item_ids = dataset.original_ids
            if getattr(args, "itemset", False):
                self.l = percentile_l(dataset.set_sizes, args.fraction)
                self.itemsets = (dataset.set_offsets, dataset.set_items)
                self.truth = FrequencyTable(dataset.set_counts(), dataset.n_users, "true")
            else:
                _, self.truth, self.items = flatten_single_item(dataset)


def _add_source(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", help="synthetic population, e.g. d=100,n=10000,alpha=2")
    src.add_argument("--dataset", help="transaction file (one user per line)")
    p.add_argument("--itemset", action="store_true", help="set-valued users with padding and sampling")
    p.add_argument("--fraction", type=float, default=0.9, help="percentile used to pick the pad length")
    p.add_argument("--protocol", default="oue", choices=["oue", "basic_rappor", "olh", "krr"])
    p.add_argument("--seed", type=int, default=0)


def cmd_simulate(args):
    if not 0 < args.fraction <= 1:
        raise ConfigError(f"--fraction must be in (0, 1], got {args.fraction}")
    pop = _Population(args)
    truth = pop.truth
    d = truth.d
    size = d + (pop.l if pop.itemsets is not None else 0)
    spec = make_spec(args.protocol, args.epsilon, d=size)
    rng = trial_rng(args.seed, 0, 0)
    meta = _provenance("simulate", args, protocol=spec.kind, epsilon=spec.epsilon, seed=args.seed,
                       d=d, dummy_count=size - d, l=pop.l)
    if pop.itemsets is not None:
        offsets, flat = pop.itemsets
        items = sample_itemset_items(offsets, flat, pop.l, d, rng)
    else:
        items = pop.items
    if args.reports:
        batch = perturb_many(spec, items, size, rng)
        with open(args.reports, "w") as fh:
            fio.write_reports(fh, batch, meta)
        if pop.itemsets is not None:
            est = itemset_aggregate(spec, batch, d, pop.l)
        else:
            est = aggregate(spec, batch, d)
    else:
        slot_counts = np.bincount(items, minlength=size + 1)[1:]
        counts = simulate_support_counts(spec, slot_counts, len(items), rng)
        est = FrequencyTable(pop.l * estimate_from_counts(spec, counts[:d], len(items)), len(items))
    with open(_out_path(args.out, "estimates.csv"), "w") as fh:
        fio.write_table(fh, est, meta, pop.item_ids)
    if args.truth_out:
        with open(args.truth_out, "w") as fh:
            fio.write_table(fh, truth, meta, pop.item_ids)
    return 0


def cmd_aggregate(args):
    with open(args.reports) as fh:
        meta, batch = fio.read_reports(fh)
    d, dummies, l = int(meta["d"]), int(meta.get("dummy_count", 0)), int(meta.get("l", 1))
    spec = make_spec(meta["protocol"], float(meta["epsilon"]), d=d + dummies)
    est = itemset_aggregate(spec, batch, d, l) if dummies else aggregate(spec, batch, d)
    out_meta = {**meta, "command": "aggregate", "source_reports": os.path.basename(args.reports)}
    with open(_out_path(args.out, "estimates.csv"), "w") as fh:
        fio.write_table(fh, est, out_meta)
    return 0


def _noise_from_meta(meta, n):
    d = int(meta["d"]) + int(meta.get("dummy_count", 0))
    spec = make_spec(meta["protocol"], float(meta["epsilon"]), d=d)
    return cal.noise_model_for(spec, n, int(meta.get("l", 1)))


def cmd_fit(args):
    with open(args.estimates) as fh:
        meta, table, _ = fio.read_table(fh)
    table.label = "estimated"
    noise = _noise_from_meta(meta, table.n)
    support = None
    if args.k_max is not None:
        support = (1 if args.family == cal.POWERLAW else 0, args.k_max)
    prior = cal.fit_prior(table, noise, args.family, args.method, support=support)
    extra = {"n": table.n, "epsilon": float(meta["epsilon"]), "l": int(meta.get("l", 1)),
             "protocol": meta["protocol"], "d": int(meta["d"]),
             "dummy_count": int(meta.get("dummy_count", 0)),
             "provenance": _provenance("fit", args)}
    with open(_out_path(args.out, "model.json"), "w") as fh:
        fio.write_model(fh, prior, noise, extra)
    return 0


def cmd_calibrate(args):
    with open(args.estimates) as fh:
        meta, table, ids = fio.read_table(fh)
    with open(args.model) as fh:
        doc = json.load(fh)
    prior, noise = fio.model_from_dict(doc)
    table.label = "estimated"
    out = cal.calibrate_all(table, prior, noise)
    if args.post_zero:
        sig = cal.significance_threshold(table.d, args.beta, noise.variance)
        out = cal.zero_below_threshold(out, sig)
    out_meta = {**meta, "command": "calibrate", "provenance": _provenance("calibrate", args)}
    with open(_out_path(args.out, "calibrated.csv"), "w") as fh:
        fio.write_table(fh, out, out_meta, ids)
    return 0


def _named_tables(specs):
    for k, text in enumerate(specs):
        name, _, path = text.rpartition("=")
        with open(path) as fh:
            meta, table, ids = fio.read_table(fh)
        yield (name or meta.get("label", f"table{k}")), meta, table, ids


def cmd_evaluate(args):
    with open(args.truth) as fh:
        _, truth, truth_ids = fio.read_table(fh)
    records = []
    for trial, (name, meta, table, ids) in enumerate(_named_tables(args.table)):
        if not np.array_equal(ids, truth_ids):
            raise ConfigError(f"table {name!r} lists different items from the truth")
        if args.thresholds is not None:
            grid = list(args.thresholds)
        elif "protocol" in meta:
            noise = _noise_from_meta(meta, int(meta["n"]))
            sig = cal.significance_threshold(table.d, args.beta, noise.variance)
            grid = threshold_grid(sig).tolist() + [sig]
        else:
            raise ConfigError("--thresholds is required when tables carry no protocol metadata")
        eps = meta.get("epsilon")
        base = {"epsilon": eps, "variant": name, "trial": trial}
        err = float(np.mean((table.values - truth.values) ** 2))
        records.append({**base, "metric": "estimation_error", "threshold": None, "value": err})
        for thr in grid:
            rep = prf(heavy_hitters(truth, thr), heavy_hitters(table, thr), thr)
            for metric in ("precision", "recall", "f_score"):
                records.append({**base, "metric": metric, "threshold": float(thr),
                                "value": getattr(rep, metric)})
    meta = _provenance("evaluate", args)
    with open(_out_path(args.out, "metrics.csv"), "w") as fh:
        fio.write_records_csv(fh, records, meta)
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fio.write_json(fh, {"provenance": meta, "records": records})
    return 0


def cmd_sweep(args):
    if not 0 < args.fraction <= 1:
        raise ConfigError(f"--fraction must be in (0, 1], got {args.fraction}")
    if args.synthetic:
        spec = parse_synthetic(args.synthetic)
        if "seed=" not in args.synthetic:
            spec.seed = args.seed
        if args.itemset:
            raise ConfigError("--itemset needs --dataset")
        truth_kwargs = {"synthetic": spec}
        l = 1
        itemsets = None
    else:
        pop = _Population(args)
        truth_kwargs = {"truth": pop.truth}
        l, itemsets = pop.l, pop.itemsets
    try:
        scenario = Scenario(epsilons=args.epsilons, protocol=args.protocol, variants=args.variants,
                            family=args.family, fit_method=args.method, beta=args.beta,
                            thresholds=args.thresholds, itemsets=itemsets, l=l, **truth_kwargs)
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from None
    result = run_experiment(scenario, args.trials, args.seed)
    meta = _provenance("sweep", args, seed=args.seed)
    with open(_out_path(args.out, "sweep.csv"), "w") as fh:
        fio.write_records_csv(fh, result.records, meta)
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fio.write_json(fh, {"provenance": meta, "summary": result.summary})
    return 0


def _variants(text):
    names = [v.strip() for v in text.split(",") if v.strip()]
    for v in names:
        if v not in VARIANTS:
            raise argparse.ArgumentTypeError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    return names


def build_parser():
    parser = _Parser(prog="ldp-calibrate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="collect perturbed reports and aggregate them once")
    _add_source(p)
    p.add_argument("--epsilon", type=_epsilon, required=True)
    p.add_argument("--reports", help="also write the per-user reports here")
    p.add_argument("--out", help="estimates CSV")
    p.add_argument("--truth-out", help="true-frequency CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("aggregate", help="estimate frequencies from a report file")
    p.add_argument("--reports", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("fit", help="fit the prior of true frequencies")
    p.add_argument("--estimates", required=True)
    p.add_argument("--family", default="powerlaw", choices=["powerlaw", "gaussian"])
    p.add_argument("--method", default="mv", choices=["mv", "mle"])
    p.add_argument("--k-max", type=int, help="largest frequency in the prior support (default n)")
    p.add_argument("--out", help="model JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("calibrate", help="replace estimates by posterior means")
    p.add_argument("--estimates", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--post-zero", action="store_true", help="zero calibrated values below the significance threshold")
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="score tables against the truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--table", action="append", required=True, help="[name=]path, repeatable")
    p.add_argument("--thresholds", type=_float_list)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--out")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="repeated trials over several privacy budgets")
    _add_source(p)
    p.add_argument("--epsilons", type=_float_list, default=[1, 2, 3, 4, 5])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--variants", type=_variants, default=["raw", "zero", "calibrate"])
    p.add_argument("--family", default="powerlaw", choices=["powerlaw", "gaussian"])
    p.add_argument("--method", default="mv", choices=["mv", "mle"])
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--thresholds", type=_float_list)
    p.add_argument("--out")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FitError, DegeneratePosteriorError, DegenerateSampleError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
