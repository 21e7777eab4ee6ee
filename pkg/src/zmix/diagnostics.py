"""Summaries and goodness-of-fit checks for relabeled mixture posteriors.

Predictive replicates are generated in fixed-size chunks, each with its own
``SeedSequence`` child, so the results are the same whether chunks run
serially or on a thread pool.  Only per-replicate summaries plus a pooled
histogram are kept; pooled quantiles are then made exact by a second pass
that collects just the values falling in the bins around the target ranks.
"""

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import gaussian_kde

from .exceptions import InvalidInputError
from .relabel import density_grid

QUANTILES = (0.025, 0.975)
CHUNK = 256
HIST_BINS = 1 << 16
#: Replicate values are bounded by the component means +/- this many sds.
SUPPORT_SDS = 40.0


def configuration_probabilities(partition):
    """p(k0) = |T(k0)| / total retained iterations."""
    sizes = {int(k): (len(v) if not np.isscalar(v) else int(v)) for k, v in partition.items()}
    total = sum(sizes.values())
    if total == 0:
        raise InvalidInputError("partition is empty")
    return {k: sizes[k] / total for k in sorted(sizes)}


@dataclass
class ParamSummary:
    estimate: float
    lower: float
    upper: float


def summarize_series(x):
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise InvalidInputError("need at least two samples")
    lo, hi = np.quantile(x, QUANTILES)
    est = float(np.mean(x))
    # the mean of a constant series can differ from it in the last ulp
    est = min(max(est, float(lo)), float(hi))
    return ParamSummary(est, float(lo), float(hi))


def posterior_summaries(sub):
    """{parameter: [ParamSummary per alive component]} for weights, means
    and variances, in relabeled component order."""
    return {name: [summarize_series(col) for col in sub.alive(name).T]
            for name in ("weights", "means", "variances")}


def weight_order(summaries):
    """Component order by descending estimated weight (stable)."""
    w = np.array([s.estimate for s in summaries["weights"]])
    return np.argsort(-w, kind="stable")


def allocation_probabilities(sub):
    """n x k0 matrix of the fraction of iterations allocating i to k."""
    z = np.asarray(sub.allocations)
    T, n = z.shape
    if np.any(z >= sub.k0):
        raise InvalidInputError("allocations reference empty components; relabel first")
    counts = np.zeros((n, sub.k0))
    for k in range(sub.k0):
        counts[:, k] = np.count_nonzero(z == k, axis=0)
    return counts / T


def best_matching(pred, truth, k):
    """Bijection between estimated and true labels maximizing agreement.

    Returns (mapping, correct) where ``mapping[est] = true``.  Exhaustive
    for k <= 8, Hungarian assignment beyond.
    """
    C = np.zeros((k, k), dtype=np.int64)
    np.add.at(C, (pred, truth), 1)
    if k <= 8:
        best, best_v = None, -1
        for perm in itertools.permutations(range(k)):
            v = int(C[np.arange(k), perm].sum())
            if v > best_v:
                best, best_v = perm, v
        return np.array(best), best_v
    r, c = linear_sum_assignment(-C)
    return c, int(C[r, c].sum())


def classification_accuracy(alloc_probs, true_labels):
    """Percentage correctly classified under the best label bijection, or
    None when the alive count differs from the true number of groups."""
    P = np.asarray(alloc_probs)
    truth = np.asarray(true_labels, dtype=np.int64)
    k = P.shape[1]
    true_k = np.unique(truth).size
    if k != true_k:
        return None
    _, truth = np.unique(truth, return_inverse=True)
    pred = np.argmax(P, axis=1)
    _, correct = best_matching(pred, truth, k)
    return 100.0 * correct / truth.size


def parameter_errors(summaries, truth, mapping):
    """(MAE, MSE) of posterior means against true (weights, means, variances).

    ``truth`` maps each parameter name to its true vector; ``mapping[k]`` is
    the true component matched to estimated component k.
    """
    err = []
    for name in ("weights", "means", "variances"):
        true = np.asarray(truth[name], dtype=np.float64)
        for k, s in enumerate(summaries[name]):
            err.append(s.estimate - true[mapping[k]])
    err = np.asarray(err)
    return float(np.mean(np.abs(err))), float(np.mean(err ** 2))


# ---------------------------------------------------------------------------
# posterior predictive replicates

@dataclass
class PredictiveReplicates:
    """Per-replicate summaries of R predictive datasets of size n."""

    R: int
    n: int
    mins: np.ndarray
    maxs: np.ndarray
    abs_errors: Optional[np.ndarray]
    sq_errors: Optional[np.ndarray]
    quantiles: dict = field(default_factory=dict)
    mean: float = float("nan")
    var: float = float("nan")


def _support(sub):
    mu = sub.alive("means")
    sd = sub.alive("sds")
    return float(np.min(mu - SUPPORT_SDS * sd)), float(np.max(mu + SUPPORT_SDS * sd))


def _chunk_values(sub, n, size, seq):
    """(size, n) replicate values for one chunk."""
    rng = np.random.Generator(np.random.PCG64(seq))
    k0 = sub.k0
    t = rng.integers(len(sub), size=size)
    w = sub.alive("weights")[t]
    cdf = np.cumsum(w / w.sum(axis=1, keepdims=True), axis=1)
    u = rng.random((size, n))
    lab = np.minimum((u[:, :, None] > cdf[:, None, :]).sum(axis=2), k0 - 1)
    mu = np.take_along_axis(sub.alive("means")[t], lab, axis=1)
    sd = np.take_along_axis(sub.alive("sds")[t], lab, axis=1)
    return mu + sd * rng.standard_normal((size, n))


def _chunk_plan(R, seed):
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sizes = [CHUNK] * (R // CHUNK) + ([R % CHUNK] if R % CHUNK else [])
    return list(zip(sizes, seq.spawn(len(sizes))))


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _rank_targets(N, q):
    h = (N - 1) * q
    lo = math.floor(h)
    return lo, min(lo + 1, N - 1), h - lo


def generate_replicates(sub, n, R=10_000, seed=0, data=None, threads=1,
                        quantiles=QUANTILES):
    """Draw R predictive datasets of size n from a relabeled cell.

    Each replicate picks a retained iteration uniformly and draws n values
    from that iteration's mixture.  When ``data`` is given, sorted-value
    errors against it are kept per replicate.  ``quantiles`` of the pooled
    replicate values are computed exactly (linear interpolation).
    """
    if R < 1 or n < 1:
        raise InvalidInputError("R and n must be at least 1")
    plan = _chunk_plan(R, seed)
    ys = None if data is None else np.sort(np.asarray(getattr(data, "values", data)))
    if ys is not None and ys.size != n:
        raise InvalidInputError("data size must equal the replicate size n")
    lo, hi = _support(sub)
    edges = np.linspace(lo, hi, HIST_BINS + 1)

    def first(item):
        size, seq = item
        x = _chunk_values(sub, n, size, seq)
        out = {"min": x.min(axis=1), "max": x.max(axis=1), "sum": x.sum(), "shift": x[0, 0]}
        out["ss"] = np.sum((x - out["shift"]) ** 2)
        out["size"] = x.size
        if ys is not None:
            d = np.sort(x, axis=1) - ys
            out["abs"] = np.abs(d).sum(axis=1)
            out["sq"] = (d * d).sum(axis=1)
        b = np.clip(np.searchsorted(edges, x.ravel(), side="right") - 1, 0, HIST_BINS - 1)
        out["hist"] = np.bincount(b, minlength=HIST_BINS)
        return out

    parts = _map(first, plan, threads)
    hist = np.sum([p["hist"] for p in parts], axis=0)
    cum = np.cumsum(hist)
    N = R * n

    # bins holding the order statistics needed for each requested quantile
    ranks = sorted({r for q in quantiles for r in _rank_targets(N, q)[:2]})
    wanted = np.unique(np.searchsorted(cum, np.asarray(ranks), side="right"))

    def second(item):
        size, seq = item
        x = _chunk_values(sub, n, size, seq).ravel()
        b = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, HIST_BINS - 1)
        return x[np.isin(b, wanted)]

    picked = np.sort(np.concatenate(_map(second, plan, threads)))
    before = {int(b): int(cum[b] - hist[b]) for b in wanted}
    offsets = np.concatenate([[0], np.cumsum([hist[b] for b in wanted])])
    start = {int(b): int(offsets[i]) for i, b in enumerate(wanted)}

    def order_stat(r):
        b = int(np.searchsorted(cum, r, side="right"))
        return float(picked[start[b] + (r - before[b])])

    qs = {}
    for q in quantiles:
        a, b, frac = _rank_targets(N, q)
        xa, xb = order_stat(a), order_stat(b)
        qs[float(q)] = xa + (xb - xa) * frac

    # pooled moments from per-chunk shifted sums
    mean = sum(p["sum"] for p in parts) / N
    ss = sum(p["ss"] - (p["sum"] - p["shift"] * p["size"]) ** 2 / p["size"]
             + p["size"] * (p["sum"] / p["size"] - mean) ** 2
             for p in parts)

    cat = lambda key: np.concatenate([p[key] for p in parts])
    return PredictiveReplicates(
        R=R, n=n, mins=cat("min"), maxs=cat("max"),
        abs_errors=cat("abs") if ys is not None else None,
        sq_errors=cat("sq") if ys is not None else None, quantiles=qs,
        mean=float(mean), var=float(ss / N))


def bayes_pvalues(reps, data):
    """(P_min, P_max) = fractions of replicates with min/max below the
    observed min/max."""
    y = np.asarray(getattr(data, "values", data))
    return float(np.mean(reps.mins < y.min())), float(np.mean(reps.maxs < y.max()))


def concordance(reps, data):
    """Fraction of observations strictly inside the pooled central 95%
    predictive interval."""
    y = np.asarray(getattr(data, "values", data))
    lo, hi = reps.quantiles[QUANTILES[0]], reps.quantiles[QUANTILES[1]]
    return float(np.mean((y > lo) & (y < hi)))


def prediction_errors(reps, data=None):
    """(MAPE, MSPE): per replicate, the summed absolute and squared
    differences between sorted replicate and sorted data, averaged over
    replicates."""
    if reps.abs_errors is None:
        raise InvalidInputError("replicates were generated without data")
    return float(np.mean(reps.abs_errors)), float(np.mean(reps.sq_errors))


def sorted_errors(replicate, data):
    """Summed absolute and squared sorted differences for one replicate."""
    d = np.sort(np.asarray(replicate, dtype=np.float64)) - np.sort(np.asarray(data, dtype=np.float64))
    return float(np.abs(d).sum()), float((d * d).sum())


# ---------------------------------------------------------------------------
# reports

@dataclass
class ConfigurationReport:
    k0: int
    prob: float
    iterations: int
    param_summaries: dict
    order: list
    alloc_probs: np.ndarray
    classification_pct: Optional[float] = None
    mae: Optional[float] = None
    mse: Optional[float] = None
    pmin: Optional[float] = None
    pmax: Optional[float] = None
    concordance: Optional[float] = None
    mape: Optional[float] = None
    mspe: Optional[float] = None
    modes: Optional[dict] = None

    def ordered(self, name):
        """Summaries of one parameter by descending weight."""
        s = self.param_summaries[name]
        return [s[k] for k in self.order]

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("k0", "prob", "iterations", "classification_pct",
                                          "mae", "mse", "pmin", "pmax", "concordance",
                                          "mape", "mspe")}
        d["components"] = [
            {"label": int(k),
             **{name: asdict(self.param_summaries[name][k])
                for name in ("weights", "means", "variances")}}
            for k in self.order]
        if self.modes is not None:
            d["mode_counts"] = {f"{p}[{k}]": c for (p, k), c in sorted(self.modes.items())}
        return d


def build_report(sub, prob, data, R=10_000, seed=0, threads=1, truth=None):
    """Full summary of one relabeled cell.

    ``truth`` (optional) holds true ``weights``, ``means`` and ``variances``
    for simulated data; classification needs ``data.true_labels``.
    """
    summaries = posterior_summaries(sub)
    P = allocation_probabilities(sub)
    rep = ConfigurationReport(k0=sub.k0, prob=prob, iterations=len(sub),
                              param_summaries=summaries,
                              order=weight_order(summaries).tolist(), alloc_probs=P)
    labels = getattr(data, "true_labels", None)
    if labels is not None:
        rep.classification_pct = classification_accuracy(P, labels)
        if rep.classification_pct is not None and truth is not None:
            _, inv = np.unique(labels, return_inverse=True)
            mapping, _ = best_matching(np.argmax(P, axis=1), inv, sub.k0)
            rep.mae, rep.mse = parameter_errors(summaries, truth, mapping)
    if R:
        reps = generate_replicates(sub, data.n, R, seed, data, threads)
        rep.pmin, rep.pmax = bayes_pvalues(reps, data)
        rep.concordance = concordance(reps, data)
        rep.mape, rep.mspe = prediction_errors(reps)
    if len(sub) >= 100:
        from .relabel import unimodality_report
        rep.modes = {key: g.modes for key, g in unimodality_report(sub).items()}
    return rep


def _fmt(x, spec):
    return "-" if x is None else format(x, spec)


def format_table(reports):
    """Goodness-of-fit table, one row per configuration."""
    head = f"{'k0':>3} {'p':>6} {'%':>7} {'P_min':>6} {'P_max':>6} {'Conc.':>6} {'MAPE':>10} {'MSPE':>12}"
    lines = [head]
    for r in reports:
        lines.append(f"{r.k0:>3} {r.prob:>6.3f} {_fmt(r.classification_pct, '7.2f'):>7} "
                     f"{_fmt(r.pmin, '6.3f'):>6} {_fmt(r.pmax, '6.3f'):>6} "
                     f"{_fmt(r.concordance, '6.3f'):>6} {_fmt(r.mape, '10.3f'):>10} "
                     f"{_fmt(r.mspe, '12.3f'):>12}")
    return "\n".join(lines) + "\n"


def format_parameters(report):
    """Parameter table: estimate (2.5%, 97.5%) per component by weight."""
    lines = [f"k0 = {report.k0}  (p = {report.prob:.3f})",
             f"{'comp':>4}  {'weight':>28}  {'mean':>30}  {'variance':>30}"]
    cell = lambda s: f"{s.estimate:.3f} ({s.lower:.3f}, {s.upper:.3f})"
    for i, k in enumerate(report.order, 1):
        lines.append(f"{i:>4}  {cell(report.param_summaries['weights'][k]):>28}  "
                     f"{cell(report.param_summaries['means'][k]):>30}  "
                     f"{cell(report.param_summaries['variances'][k]):>30}")
    return "\n".join(lines) + "\n"


def write_reports(reports, outdir, extra=None):
    """Write ``summary.txt``, ``parameters.txt`` and ``report.json``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.txt").write_text(format_table(reports))
    (out / "parameters.txt").write_text("\n".join(format_parameters(r) for r in reports))
    doc = {"configurations": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    with open(out / "report.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# plot data

def _write_table(path, header, rows):
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join("%.17g" % v if isinstance(v, float) else str(v) for v in row))
            fh.write("\n")


def read_table(path):
    """Parse a file written by :func:`emit_plot_data` into (header, rows)."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    return header, rows


def predictive_density(sub, x, max_draws=2000):
    """Posterior-averaged mixture density on ``x`` over up to ``max_draws``
    evenly spaced retained iterations."""
    T = len(sub)
    idx = np.unique(np.linspace(0, T - 1, min(T, max_draws)).round().astype(int))
    w = sub.alive("weights")[idx]
    w = w / w.sum(axis=1, keepdims=True)
    mu, sd = sub.alive("means")[idx], sub.alive("sds")[idx]
    dens = np.zeros_like(x)
    for t in range(idx.size):
        z = (x[:, None] - mu[t]) / sd[t]
        dens += (w[t] * np.exp(-0.5 * z * z) / (sd[t] * np.sqrt(2 * np.pi))).sum(axis=1)
    return dens / idx.size


def emit_plot_data(report, sub, data, outdir, points=512):
    """Write parameter densities, allocation probabilities and
    data-vs-predictive densities for one configuration.

    Returns the three paths.  Values use ``%.17g`` so they parse back
    exactly.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    k0 = report.k0
    p_dens = out / f"k{k0}_parameter_density.tsv"
    rows = []
    for name in ("weights", "means", "variances"):
        arr = sub.alive(name)
        for rank, k in enumerate(report.order, 1):
            g = density_grid(arr[:, k], points)
            rows.extend((name, rank, float(a), float(b)) for a, b in zip(g.x, g.density))
    _write_table(p_dens, ["parameter", "component", "x", "density"], rows)

    p_alloc = out / f"k{k0}_allocations.tsv"
    P = report.alloc_probs[:, report.order]
    _write_table(p_alloc, ["index"] + [f"p{j}" for j in range(1, k0 + 1)],
                 ([i + 1] + [float(v) for v in P[i]] for i in range(P.shape[0])))

    p_pred = out / f"k{k0}_predictive_density.tsv"
    y = data.values
    mu, sd = sub.alive("means"), sub.alive("sds")
    lo = min(y.min(), float(np.quantile(mu - 6 * sd, 0.01)))
    hi = max(y.max(), float(np.quantile(mu + 6 * sd, 0.99)))
    span = hi - lo
    x = np.linspace(lo - 0.25 * span, hi + 0.25 * span, points)
    data_d = gaussian_kde(y)(x) if y.size > 1 and np.ptp(y) > 0 else np.zeros_like(x)
    pred_d = predictive_density(sub, x)
    _write_table(p_pred, ["x", "data_density", "predictive_density"],
                 ((float(a), float(b), float(c)) for a, b, c in zip(x, data_d, pred_d)))
    return p_dens, p_alloc, p_pred
