"""Simulation designs, bundled datasets, text I/O and the replicate study.

Text files hold one value per line, optionally followed by a delimiter
(comma, tab or whitespace) and a 1-based integer label.  Labels are 0-based
once loaded.
"""

import hashlib
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataLoadError, ZmixError
from .model import Dataset, Hyperparams
from .sampler import RunConfig, build_ladder, modal_alive_count, zmix_run

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimulationSpec:
    weights: tuple
    means: tuple
    variances: tuple
    n: int = 200
    seed: int = 0
    name: str = "sim"

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        mu = tuple(float(v) for v in self.means)
        var = tuple(float(v) for v in self.variances)
        if not (len(w) == len(mu) == len(var) >= 1):
            raise ConfigError("weights, means and variances must have equal, non-zero length")
        if any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError("weights must be non-negative and sum to 1")
        if any(not np.isfinite(v) for v in mu):
            raise ConfigError("means must be finite")
        if any(not (v > 0 and np.isfinite(v)) for v in var):
            raise ConfigError("variances must be positive")
        if int(self.n) < 1:
            raise ConfigError("n must be at least 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "n", int(self.n))

    @property
    def K0(self):
        return len(self.weights)

    def truth(self):
        return {"weights": np.array(self.weights), "means": np.array(self.means),
                "variances": np.array(self.variances)}


_SIMS = {
    1: ((0.5, 0.3, 0.2), (15.0, 7.0, 1.0), (1.0, 1.0, 1.0)),
    2: ((0.5, 0.3, 0.2), (-1.0, 10.0, 4.0), (0.5, 0.5, 3.0)),
    3: ((0.5, 0.5), (1.0, 1.0), (10.0, 1.0)),
    4: ((0.6, 0.39, 0.01), (6.0, 10.0, 20.0), (1.0, 1.0, 0.5)),
}


def builtin_sims(n=200, seed=0):
    """The four simulation designs, keyed 1..4."""
    return {k: SimulationSpec(*v, n=n, seed=seed, name=f"sim{k}") for k, v in _SIMS.items()}


def builtin_sim(which, n=200, seed=0):
    try:
        return builtin_sims(n, seed)[int(which)]
    except (KeyError, ValueError):
        raise ConfigError(f"unknown simulation {which!r}; choose 1, 2, 3 or 4") from None


def generate_simulation(spec, rng=None):
    """Draw labels from the weights, then each value from its component."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    w = np.asarray(spec.weights)
    labels = rng.choice(spec.K0, size=spec.n, p=w / w.sum())
    values = rng.normal(np.asarray(spec.means)[labels],
                        np.sqrt(np.asarray(spec.variances))[labels])
    return Dataset(values, labels.astype(np.int64), spec.name)


# ---------------------------------------------------------------------------
# case studies

#: name -> (expected length, pinned SHA-256 of the file bytes or None)
CASE_STUDIES = {
    "galaxy": (82, "4b9b7f7177a38a22339befe8094a23520d7d96afe05510bd8f8182f50b515b19"),
    "acidity": (155, None),
    "enzyme": (245, None),
}
DATA_ENV = "ZMIX_DATA_DIR"


def _case_study_file(name):
    bundled = resources.files("zmix").joinpath("datasets", f"{name}.txt")
    if bundled.is_file():
        return Path(str(bundled))
    extra = os.environ.get(DATA_ENV)
    if extra:
        p = Path(extra) / f"{name}.txt"
        if p.is_file():
            return p
    raise DataLoadError(
        f"case study {name!r} is not bundled; place {name}.txt (one value per line) "
        f"in the directory named by ${DATA_ENV}")


def load_case_study(name):
    """Load and verify a case-study dataset by name."""
    key = name.lower()
    if key not in CASE_STUDIES:
        raise DataLoadError(f"unknown case study {name!r}; known: {', '.join(CASE_STUDIES)}")
    n_expected, digest = CASE_STUDIES[key]
    path = _case_study_file(key)
    raw = path.read_bytes()
    if digest is not None:
        got = hashlib.sha256(raw).hexdigest()
        if got != digest:
            raise DataLoadError(f"{path}: checksum mismatch (expected {digest}, got {got})")
    data = load_dataset(path, name=key)
    if data.n != n_expected:
        raise DataLoadError(f"{path}: expected {n_expected} values, found {data.n}")
    return data


def builtin_case_studies():
    """All case studies, as {name: Dataset}; raises if any is unavailable."""
    return {name: load_case_study(name) for name in CASE_STUDIES}


# ---------------------------------------------------------------------------
# text files

_SPLIT = re.compile(r"[,\t ;]+")
_NAME_TAG = "# dataset:"


def load_dataset(path, name=None):
    """Read one value per line with an optional second label column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataLoadError(f"cannot read {path}: {exc}") from exc
    values, labels, labelled = [], [], None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if line.startswith(_NAME_TAG) and name is None and not values:
            name = line[len(_NAME_TAG):].strip() or None
        if not line or line.startswith("#"):
            continue
        fields = _SPLIT.split(line)
        if len(fields) > 2:
            raise DataLoadError(f"{path}, line {lineno}: expected 1 or 2 columns, got {len(fields)}")
        has_label = len(fields) == 2
        if labelled is None:
            labelled = has_label
        elif labelled != has_label:
            raise DataLoadError(f"{path}, line {lineno}: inconsistent label column")
        try:
            v = float(fields[0])
        except ValueError:
            raise DataLoadError(f"{path}, line {lineno}: not a number: {fields[0]!r}") from None
        if not np.isfinite(v):
            raise DataLoadError(f"{path}, line {lineno}: non-finite value")
        values.append(v)
        if has_label:
            try:
                lab = int(fields[1])
            except ValueError:
                raise DataLoadError(f"{path}, line {lineno}: label is not an integer: "
                                    f"{fields[1]!r}") from None
            if lab < 1:
                raise DataLoadError(f"{path}, line {lineno}: labels start at 1")
            labels.append(lab - 1)
    if not values:
        raise DataLoadError(f"{path}: no data")
    return Dataset(np.array(values), np.array(labels) if labelled else None,
                   name or path.stem)


def write_dataset(data, path, header=False):
    """Write values (``repr`` precision) and 1-based labels if present.

    With ``header`` a leading ``# dataset: <name>`` comment keeps the name.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        if header:
            fh.write(f"{_NAME_TAG} {data.name}\n")
        if data.true_labels is None:
            for v in data.values:
                fh.write(f"{float(v)!r}\n")
        else:
            for v, k in zip(data.values, data.true_labels):
                fh.write(f"{float(v)!r}\t{int(k) + 1}\n")
    return path


# ---------------------------------------------------------------------------
# replicate study

def protocol_config(**overrides):
    """Replicate-study defaults: K=10, refined ladder, 20,000 iterations of
    which the first 5,000 are discarded."""
    base = dict(K=10, iterations=20_000, burn_in=5_000, ladder=build_ladder("refined"))
    base.update(overrides)
    return RunConfig(**base)


@dataclass
class ReplicateStudySummary:
    name: str
    n: int
    modal_counts: list
    failures: dict = field(default_factory=dict)

    @property
    def completed(self):
        return [k for k in self.modal_counts if k is not None]

    @property
    def complete(self):
        return not self.failures

    @property
    def fractions(self):
        done = self.completed
        if not done:
            return {}
        return {k: done.count(k) / len(done) for k in sorted(set(done))}

    def to_table(self, K=10):
        cols = [f"k0={k}" for k in range(1, K + 1)]
        head = ["sim", "n", "replicates", "failed"] + cols
        fr = self.fractions
        row = [self.name, str(self.n), str(len(self.modal_counts)), str(len(self.failures))]
        row += [f"{fr.get(k, 0.0):.2f}" for k in range(1, K + 1)]
        return "\t".join(head) + "\n" + "\t".join(row) + "\n"


def _one_replicate(args):
    spec, data_seq, run_seed, config, hyper_kw = args
    data = generate_simulation(spec, np.random.Generator(np.random.PCG64(data_seq)))
    hyper = Hyperparams.from_data(data.values, config.K, **hyper_kw)
    trace = zmix_run(data, replace(config, seed=run_seed), hyper)
    return modal_alive_count(trace)


def replicate_study(spec, replicates=20, config=None, seed=0, processes=1,
                    hyper_kw=None):
    """Fit ``replicates`` fresh datasets drawn from ``spec``; record the modal
    alive count of each target chain.

    Replicate r derives its data stream and run seed from child r of
    ``SeedSequence(seed)``, so the summary does not depend on ``processes``.
    A failing replicate is logged and recorded, not raised.
    """
    if replicates < 1:
        raise ConfigError("replicates must be at least 1")
    config = protocol_config() if config is None else config
    hyper_kw = dict(hyper_kw or {})
    jobs = []
    for child in np.random.SeedSequence(seed).spawn(replicates):
        data_seq, run_seq = child.spawn(2)
        jobs.append((spec, data_seq, int(run_seq.generate_state(1, np.uint64)[0] >> 1),
                     config, hyper_kw))
    modal, failures = [None] * replicates, {}
    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as ex:
            futures = [ex.submit(_one_replicate, j) for j in jobs]
            outcomes = []
            for f in futures:
                try:
                    outcomes.append((f.result(), None))
                except ZmixError as exc:
                    outcomes.append((None, exc))
    else:
        outcomes = []
        for j in jobs:
            try:
                outcomes.append((_one_replicate(j), None))
            except ZmixError as exc:
                outcomes.append((None, exc))
    for r, (k, exc) in enumerate(outcomes):
        if exc is not None:
            log.warning("replicate %d failed: %s", r, exc)
            failures[r] = str(exc)
        else:
            modal[r] = int(k)
    return ReplicateStudySummary(spec.name, spec.n, modal, failures)
