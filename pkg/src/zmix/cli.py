"""Command-line front end: simulate, fit, report, replicate-study, pipeline.

Option values are resolved from, in increasing priority: built-in defaults,
a flat ``key = value`` file given by ``--config``, ``ZMIX_<KEY>``
environment variables (e.g. ``ZMIX_ITERATIONS``), and command-line flags.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 5 relabeling refusal.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import diagnostics as diag
from . import relabel, trace_io
from .exceptions import (ConfigError, DataLoadError, InvalidInputError,
                         NumericalError, RelabelRefusal)
from .model import Hyperparams
from .sampler import RunConfig, build_ladder, zmix_run

log = logging.getLogger("zmix")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_REFUSAL = 0, 2, 3, 4, 5
ENV_PREFIX = "ZMIX_"


def _flag(text):
    return text.lower() in ("1", "true", "yes", "on")


# name -> (type, default, help)
OPTIONS = {
    "seed": (int, 0, "master random seed"),
    "threads": (int, None, "worker threads (default: available CPUs)"),
    "data": (str, None, "dataset file (one value per line, optional label column)"),
    "sim": (int, None, "built-in simulation 1-4"),
    "case": (str, None, "case study: galaxy, acidity or enzyme"),
    "n": (int, 200, "sample size for simulated data"),
    "spec": (str, None, "simulation spec file (weights/means/variances = comma lists)"),
    "K": (int, 10, "number of fitted components"),
    "iterations": (int, 50_000, "total sweeps"),
    "burn_in": (int, 30_000, "discarded sweeps"),
    "ladder": (str, "refined", "exploratory, refined, or comma-separated decreasing alphas"),
    "swap_prob": (float, 0.5, "probability of attempting a swap per sweep"),
    "store_all_chains": (_flag, False, "keep every chain's draws"),
    "tau": (float, 1.0, "prior precision scale of the means"),
    "a": (float, 2.5, "inverse-gamma shape"),
    "b": (float, None, "inverse-gamma scale (default: sample variance)"),
    "l": (float, None, "prior mean location (default: sample mean)"),
    "trace": (str, None, "trace file written by fit"),
    "m": (float, relabel.DEFAULT_M, "candidate-set threshold"),
    "cap": (int, relabel.FACTORIAL_CAP, "largest permutation search"),
    "R": (int, 10_000, "posterior predictive replicates (0 to skip)"),
    "replicates": (int, 20, "replicate datasets in the study"),
    "out": (str, None, "output file or directory"),
}

COMMAND_OPTIONS = {
    "simulate": ["sim", "spec", "n", "seed", "out"],
    "fit": ["data", "sim", "case", "n", "K", "iterations", "burn_in", "ladder", "swap_prob",
            "store_all_chains", "tau", "a", "b", "l", "seed", "out", "threads"],
    "report": ["trace", "data", "sim", "case", "n", "m", "cap", "R", "seed", "out", "threads"],
    "replicate-study": ["sim", "n", "replicates", "K", "iterations", "burn_in", "ladder",
                        "swap_prob", "tau", "a", "seed", "out", "threads"],
    "pipeline": ["data", "sim", "case", "n", "K", "iterations", "burn_in", "ladder",
                 "swap_prob", "store_all_chains", "tau", "a", "b", "l", "m", "cap", "R",
                 "seed", "out", "threads"],
}

COMMAND_DEFAULTS = {"replicate-study": {"iterations": 20_000, "burn_in": 5_000}}

HELP = {
    "simulate": "draw a dataset from a built-in or file-defined simulation",
    "fit": "run the tempered sampler and save the target-chain trace",
    "report": "relabel a saved trace and write summaries and plot data",
    "replicate-study": "modal alive counts over repeated simulated datasets",
    "pipeline": "fit followed by report",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="zmix", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, names in COMMAND_OPTIONS.items():
        p = sub.add_parser(cmd, help=HELP[cmd])
        for name in names:
            typ, _, text = OPTIONS[name]
            flag = "--" + name.replace("_", "-")
            if typ is _flag:
                p.add_argument(flag, dest=name, action="store_const", const=True,
                               default=None, help=text)
            else:
                p.add_argument(flag, dest=name, type=typ, default=None, help=text)
    return parser


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}, line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise ConfigError(f"{path}, line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_options(args, environ=None):
    """Merge defaults, config file, environment and flags into a dict."""
    environ = os.environ if environ is None else environ
    names = COMMAND_OPTIONS[args.command]
    filecfg = read_config_file(args.config) if args.config else {}
    defaults = COMMAND_DEFAULTS.get(args.command, {})
    opts = {}
    for name in names:
        typ, default, _ = OPTIONS[name]
        value = defaults.get(name, default)
        raw = filecfg.get(name)
        env = environ.get(ENV_PREFIX + name.upper())
        for source, text in (("config file", raw), ("environment", env)):
            if text is not None:
                try:
                    value = typ(text)
                except ValueError:
                    raise ConfigError(f"bad value {text!r} for {name} in {source}") from None
        flag = getattr(args, name, None)
        if flag is not None:
            value = flag
        opts[name] = value
    if "threads" in opts and opts["threads"] is None:
        opts["threads"] = os.cpu_count() or 1
    return opts


# ---------------------------------------------------------------------------
# helpers

def _ladder(text):
    if text in ("exploratory", "refined"):
        return build_ladder(text)
    try:
        return build_ladder([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"cannot parse ladder {text!r}") from None


def _read_spec(path, n, seed):
    vals = {}
    for key, value in read_spec_file(path).items():
        vals[key] = tuple(float(v) for v in value.split(","))
    missing = {"weights", "means", "variances"} - vals.keys()
    if missing:
        raise ConfigError(f"{path}: missing {', '.join(sorted(missing))}")
    return data_mod.SimulationSpec(vals["weights"], vals["means"], vals["variances"],
                                   n=n, seed=seed, name=Path(path).stem)


def read_spec_file(path):
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read spec file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}, line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ("weights", "means", "variances"):
            raise ConfigError(f"{path}, line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _sim_spec(opts):
    if opts.get("n") is not None and opts["n"] < 1:
        raise ConfigError("n must be at least 1")
    if opts.get("spec"):
        return _read_spec(opts["spec"], opts["n"], opts["seed"])
    return data_mod.builtin_sim(opts["sim"], opts["n"], opts["seed"])


def _dataset(opts):
    """Load the single configured data source; returns (Dataset, truth)."""
    given = [k for k in ("data", "sim", "case") if opts.get(k) is not None]
    if len(given) != 1:
        raise ConfigError("give exactly one of --data, --sim, --case")
    if opts.get("data") is not None:
        return data_mod.load_dataset(opts["data"]), None
    if opts.get("case") is not None:
        return data_mod.load_case_study(opts["case"]), None
    spec = _sim_spec(opts)
    return data_mod.generate_simulation(spec), spec.truth()


def _run_config(opts):
    return RunConfig(K=opts["K"], iterations=opts["iterations"], burn_in=opts["burn_in"],
                     swap_prob=opts["swap_prob"], seed=opts["seed"],
                     store_all_chains=bool(opts.get("store_all_chains")),
                     ladder=_ladder(opts["ladder"]))


def _hyper(values, opts):
    return Hyperparams.from_data(values, opts["K"], a=opts["a"], b=opts.get("b"),
                                 l=opts.get("l"), tau=opts["tau"])


def _alive_table(trace):
    lines = [f"{'chain':>5} {'alpha':>12} {'median':>7} {'min':>4} {'max':>4}   swap rate to next"]
    rates = trace.swap_rates
    for j, a in enumerate(trace.config.ladder.alphas):
        s = trace.alive_counts[j]
        rate = f"{rates[j]:.3f}" if j < rates.size and np.isfinite(rates[j]) else "-"
        lines.append(f"{j + 1:>5} {a:>12.4g} {np.median(s):>7.1f} {s.min():>4} {s.max():>4}   "
                     f"{rate if j < rates.size else ''}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(opts):
    if opts.get("out") is None:
        raise ConfigError("simulate needs --out")
    if (opts.get("sim") is None) == (opts.get("spec") is None):
        raise ConfigError("give exactly one of --sim, --spec")
    spec = _sim_spec(opts)
    ds = data_mod.generate_simulation(spec)
    data_mod.write_dataset(ds, opts["out"])
    print(f"wrote {opts['out']}: n={ds.n}, K0={spec.K0}, weights={list(spec.weights)}, "
          f"means={list(spec.means)}, variances={list(spec.variances)}")
    return EXIT_OK


def _fit(opts):
    ds, truth = _dataset(opts)
    config = _run_config(opts)
    hyper = _hyper(ds.values, opts)
    out = Path(opts.get("out") or "zmix_out")
    out.mkdir(parents=True, exist_ok=True)
    log.info("fitting %s: n=%d, %d chains, %d iterations", ds.name, ds.n,
             config.ladder.J, config.iterations)
    trace = zmix_run(ds, config, hyper,
                     progress=lambda it: log.info("iteration %d", it))
    trace_io.save_trace(trace, out / "trace.jsonl")
    data_mod.write_dataset(ds, out / "data.txt", header=True)
    if truth is not None:
        (out / "truth.json").write_text(json.dumps(
            {k: v.tolist() for k, v in truth.items()}, sort_keys=True) + "\n")
    print(_alive_table(trace))
    return trace, ds, truth, out


def cmd_fit(opts):
    _fit(opts)
    return EXIT_OK


def _report(trace, ds, truth, opts, out):
    if trace.data_checksum and trace.data_checksum != ds.checksum():
        raise DataLoadError("dataset does not match the one the trace was fitted to")
    threads = max(1, int(opts["threads"]))
    with ThreadPoolExecutor(max_workers=threads) as ex:
        cells = relabel.zswitch(trace, ds, m=opts["m"], cap=opts["cap"],
                                executor=ex if threads > 1 else None)
    probs = diag.configuration_probabilities({k: len(s) for k, s in cells.items()})
    reports = []
    seeds = np.random.SeedSequence(opts["seed"]).spawn(len(cells))
    for (k0, sub), seq in zip(sorted(cells.items()), seeds):
        rep = diag.build_report(sub, probs[k0], ds, R=opts["R"], seed=seq,
                                threads=threads, truth=truth)
        reports.append(rep)
        trace_io.save_relabeled(sub, out / f"k{k0}_relabeled.jsonl")
        diag.emit_plot_data(rep, sub, ds, out)
    diag.write_reports(reports, out, extra={"dataset": ds.name, "n": ds.n,
                                            "swap_rates": [None if not np.isfinite(r) else r
                                                           for r in trace.swap_rates.tolist()]})
    sys.stdout.write(diag.format_table(reports))
    for r in reports:
        sys.stdout.write("\n" + diag.format_parameters(r))
    return reports


def cmd_report(opts):
    if opts.get("trace") is None:
        raise ConfigError("report needs --trace")
    trace = trace_io.load_trace(opts["trace"])
    tdir = Path(opts["trace"]).parent
    truth = None
    if all(opts.get(k) is None for k in ("data", "sim", "case")):
        if not (tdir / "data.txt").is_file():
            raise ConfigError("no data source given and no data.txt next to the trace")
        ds = data_mod.load_dataset(tdir / "data.txt")
        if (tdir / "truth.json").is_file():
            truth = {k: np.array(v) for k, v in json.loads((tdir / "truth.json").read_text()).items()}
    else:
        ds, truth = _dataset(opts)
    out = Path(opts.get("out") or tdir)
    _report(trace, ds, truth, opts, out)
    return EXIT_OK


def cmd_pipeline(opts):
    trace, ds, truth, out = _fit(opts)
    print()
    _report(trace, ds, truth, opts, out)
    return EXIT_OK


def cmd_replicate_study(opts):
    if opts.get("sim") is None:
        raise ConfigError("replicate-study needs --sim")
    spec = _sim_spec(opts)
    config = RunConfig(K=opts["K"], iterations=opts["iterations"], burn_in=opts["burn_in"],
                       swap_prob=opts["swap_prob"], ladder=_ladder(opts["ladder"]))
    summary = data_mod.replicate_study(spec, opts["replicates"], config, seed=opts["seed"],
                                       processes=max(1, int(opts["threads"])),
                                       hyper_kw={"tau": opts["tau"], "a": opts["a"]})
    table = summary.to_table(config.K)
    if opts.get("out"):
        Path(opts["out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(opts["out"]).write_text(table)
    sys.stdout.write(table)
    if summary.failures:
        for r, msg in sorted(summary.failures.items()):
            print(f"replicate {r} failed: {msg}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "report": cmd_report,
            "replicate-study": cmd_replicate_study, "pipeline": cmd_pipeline}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except (ConfigError, InvalidInputError) as exc:
        print(f"zmix: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataLoadError as exc:
        print(f"zmix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"zmix: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RelabelRefusal as exc:
        print(f"zmix: relabeling refused: {exc}", file=sys.stderr)
        return EXIT_REFUSAL


if __name__ == "__main__":
    sys.exit(main())
