"""Newline-delimited trace files with a JSON sidecar.

A trace at ``run.jsonl`` (or ``run.jsonl.gz``) holds one JSON object per
retained iteration::

    {"iteration": 30001, "log_weights": [...], "weights": [...],
     "means": [...], "variances": [...], "allocations": [...]}

and ``run.meta.json`` holds the run configuration, hyperparameters, ladder,
seed, data checksum, per-chain alive-count series and swap statistics.
Floats are written with ``repr`` so a save/load cycle is bit-exact.
Relabeled sub-traces add ``"permutation"`` (and ``"phase"``) to every record
and a ``k0`` tag to the sidecar.

When a run stored every chain, the extra draws go to ``run.chains.npz``.
"""

import gzip
import io
import json
from pathlib import Path

import numpy as np

from .exceptions import DataLoadError
from .model import Hyperparams
from .sampler import PosteriorTrace, RunConfig

FORMAT = "zmix-trace/1"


def _open(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        # mtime=0 keeps compressed output byte-identical across runs
        raw = open(path, mode + "b")
        gz = gzip.GzipFile(filename="", fileobj=raw, mode=mode + "b", mtime=0)
        return io.TextIOWrapper(gz, encoding="utf-8"), raw
    return open(path, mode, encoding="utf-8"), None


def meta_path(path):
    """Sidecar location for a trace file."""
    p = str(path)
    for ext in (".jsonl.gz", ".jsonl", ".gz"):
        if p.endswith(ext):
            return Path(p[: -len(ext)] + ".meta.json")
    return Path(p + ".meta.json")


def _chains_path(path):
    return meta_path(path).with_name(meta_path(path).name.replace(".meta.json", ".chains.npz"))


def _hyper_dict(h):
    return {"K": h.K, "alpha": h.alpha, "a": h.a, "b": h.b, "l": h.l,
            "tau": h.tau, "d": h.d}


def _write_records(path, columns, extra=None):
    iterations, lw, w, mu, var, z = columns
    fh, raw = _open(path, "w")
    try:
        for t in range(len(iterations)):
            rec = {"iteration": int(iterations[t]),
                   "log_weights": lw[t].tolist(), "weights": w[t].tolist(),
                   "means": mu[t].tolist(), "variances": var[t].tolist(),
                   "allocations": z[t].tolist()}
            if extra:
                for key, arr in extra.items():
                    rec[key] = arr[t].tolist() if np.ndim(arr[t]) else arr[t].item()
            fh.write(json.dumps(rec))
            fh.write("\n")
    finally:
        fh.close()
        if raw is not None:
            raw.close()


def _read_records(path, extra=()):
    try:
        fh, raw = _open(path, "r")
    except OSError as exc:
        raise DataLoadError(f"cannot open trace {path}: {exc}") from exc
    cols = {k: [] for k in ("iteration", "log_weights", "weights", "means",
                            "variances", "allocations") + tuple(extra)}
    try:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                for k in cols:
                    cols[k].append(rec[k])
            except (ValueError, KeyError, TypeError) as exc:
                raise DataLoadError(f"{path}, line {lineno}: malformed record ({exc})") from exc
    except (OSError, EOFError) as exc:
        raise DataLoadError(f"cannot read trace {path}: {exc}") from exc
    finally:
        fh.close()
        if raw is not None:
            raw.close()
    if not cols["iteration"]:
        raise DataLoadError(f"trace {path} contains no records")
    return cols


def _write_meta(path, meta):
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_meta(path):
    mp = meta_path(path)
    try:
        with open(mp, encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise DataLoadError(f"cannot open trace metadata {mp}: {exc}") from exc
    except ValueError as exc:
        raise DataLoadError(f"malformed trace metadata {mp}: {exc}") from exc
    if meta.get("format") != FORMAT:
        raise DataLoadError(f"{mp}: unsupported format {meta.get('format')!r}")
    return meta


def save_trace(trace: PosteriorTrace, path):
    """Write ``trace`` to ``path`` plus its sidecar (and chain archive)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_records(path, (trace.iterations, trace.log_weights, trace.weights,
                          trace.means, trace.variances, trace.allocations))
    cfg = trace.config.to_dict()
    meta = {"format": FORMAT, "records": len(trace), "config": cfg,
            "ladder": cfg["ladder"], "seed": cfg["seed"],
            "hyper": _hyper_dict(trace.hyper),
            "data_checksum": trace.data_checksum,
            "alive_counts": trace.alive_counts.tolist(),
            "swap_attempts": trace.swap_attempts.tolist(),
            "swap_accepts": trace.swap_accepts.tolist(),
            "has_all_chains": trace.all_chains is not None}
    _write_meta(path, meta)
    if trace.all_chains is not None:
        with open(_chains_path(path), "wb") as fh:
            np.savez(fh, **trace.all_chains)
    return path


def load_trace(path) -> PosteriorTrace:
    meta = _read_meta(path)
    cols = _read_records(path)
    T = len(cols["iteration"])
    if T != meta["records"]:
        raise DataLoadError(f"{path}: expected {meta['records']} records, found {T}")
    K = len(cols["log_weights"][0])
    zdtype = np.int8 if K <= 127 else np.int32
    chains = None
    if meta.get("has_all_chains"):
        try:
            with np.load(_chains_path(path)) as npz:
                chains = {k: npz[k] for k in npz.files}
        except OSError as exc:
            raise DataLoadError(f"missing chain archive for {path}: {exc}") from exc
    try:
        return PosteriorTrace(
            iterations=np.asarray(cols["iteration"], dtype=np.int64),
            log_weights=np.asarray(cols["log_weights"], dtype=np.float64),
            means=np.asarray(cols["means"], dtype=np.float64),
            variances=np.asarray(cols["variances"], dtype=np.float64),
            allocations=np.asarray(cols["allocations"], dtype=zdtype),
            alive_counts=np.asarray(meta["alive_counts"], dtype=np.int16).reshape(-1, T),
            swap_attempts=np.asarray(meta["swap_attempts"], dtype=np.int64),
            swap_accepts=np.asarray(meta["swap_accepts"], dtype=np.int64),
            config=RunConfig.from_dict(meta["config"]),
            hyper=Hyperparams(**meta["hyper"]),
            data_checksum=meta["data_checksum"], all_chains=chains)
    except (ValueError, TypeError, KeyError) as exc:
        raise DataLoadError(f"{path}: inconsistent trace contents ({exc})") from exc


def save_relabeled(sub, path):
    """Persist a :class:`~zmix.relabel.RelabeledTrace`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_records(path, (sub.iterations, sub.log_weights, sub.weights,
                          sub.means, sub.variances, sub.allocations),
                   extra={"permutation": sub.permutations, "phase": sub.phases})
    ref = sub.reference
    meta = {"format": FORMAT, "records": len(sub), "k0": sub.k0,
            "hyper": _hyper_dict(sub.hyper), "data_checksum": sub.data_checksum,
            "m": sub.m, "positions": sub.positions.tolist(),
            "fallbacks": sub.fallbacks.tolist(),
            "reference": {"iteration": int(ref.iteration), "position": int(ref.position),
                          "score": ref.score, "permutation": ref.permutation.tolist()}}
    _write_meta(path, meta)
    return path


def load_relabeled(path):
    from .relabel import ReferenceLabeling, RelabeledTrace

    meta = _read_meta(path)
    if "k0" not in meta:
        raise DataLoadError(f"{path} is not a relabeled sub-trace")
    cols = _read_records(path, extra=("permutation", "phase"))
    lw = np.asarray(cols["log_weights"], dtype=np.float64)
    mu = np.asarray(cols["means"], dtype=np.float64)
    var = np.asarray(cols["variances"], dtype=np.float64)
    z = np.asarray(cols["allocations"], dtype=np.int64)
    positions = np.asarray(meta["positions"], dtype=np.int64)
    r = meta["reference"]
    i = int(np.flatnonzero(positions == r["position"])[0])
    ref = ReferenceLabeling(
        k0=meta["k0"], iteration=r["iteration"], position=r["position"],
        allocations=z[i].copy(), log_weights=lw[i].copy(), means=mu[i].copy(),
        variances=var[i].copy(), permutation=np.asarray(r["permutation"]),
        score=r["score"])
    return RelabeledTrace(
        k0=meta["k0"], positions=positions,
        iterations=np.asarray(cols["iteration"], dtype=np.int64),
        log_weights=lw, means=mu, variances=var, allocations=z,
        permutations=np.asarray(cols["permutation"], dtype=np.int64),
        phases=np.asarray(cols["phase"], dtype=np.int64),
        fallbacks=np.asarray(meta["fallbacks"], dtype=np.int64),
        reference=ref, hyper=Hyperparams(**meta["hyper"]), m=meta["m"],
        data_checksum=meta["data_checksum"])

