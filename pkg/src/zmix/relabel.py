"""Two-phase relabeling of an overfitted mixture trace.

Iterations are grouped by their number of alive components k0.  Within each
group a reference labeling is taken from the iteration with the largest
unnormalized log posterior.  Every other iteration is then matched to it:

* phase one compares allocations through a k0 x k0 contingency table and
  keeps, for each current group, the reference groups sharing more than a
  fraction ``m`` of its members;
* when those candidate sets do not already pin down a permutation, phase two
  searches the injective assignments they allow and keeps the one closest
  to the reference in weights, means and standard deviations.

Labels are 0-based; after relabeling the alive components occupy
``0..k0-1`` and the empty ones ``k0..K-1`` in ascending original order.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict

import numpy as np
from scipy.stats import gaussian_kde

from . import model
from .exceptions import InvalidInputError, NoInjectiveAssignment, RelabelRefusal

log = logging.getLogger(__name__)

DEFAULT_M = 0.25
#: Largest number of candidate assignments phase two will enumerate.
FACTORIAL_CAP = math.factorial(6)
#: Reference values smaller than this in magnitude use absolute differences.
DENOM_GUARD = 1e-8
#: Relative tolerance under which two alive components count as identical.
IDENTICAL_RTOL = 1e-10


@dataclass
class ReferenceLabeling:
    """MAP iteration of one k0 cell, with its alive labels moved to the front.

    ``permutation[k]`` is the new label of that iteration's component k.
    """

    k0: int
    iteration: int
    position: int
    allocations: np.ndarray
    log_weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    permutation: np.ndarray
    score: float

    @property
    def weights(self):
        return np.exp(self.log_weights[: self.k0])

    @property
    def sds(self):
        return np.sqrt(self.variances[: self.k0])


@dataclass
class ContingencyTable:
    """Joint counts of current alive labels (rows) and reference labels."""

    M: np.ndarray
    row_labels: np.ndarray
    row_counts: np.ndarray


@dataclass
class CandidateSets:
    sets: tuple
    m: float

    @property
    def total(self):
        return sum(len(s) for s in self.sets)


@dataclass
class RelabeledTrace:
    """Label-consistent draws of one k0 cell.

    ``positions`` index the retained iterations of the source trace;
    ``permutations[t, k]`` is the label given to original component k;
    ``phases`` records which phase settled each iteration and ``fallbacks``
    how many widening steps were needed (0 when none).
    """

    k0: int
    positions: np.ndarray
    iterations: np.ndarray
    log_weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    allocations: np.ndarray
    permutations: np.ndarray
    phases: np.ndarray
    fallbacks: np.ndarray
    reference: ReferenceLabeling
    hyper: model.Hyperparams
    m: float = DEFAULT_M
    data_checksum: str = ""

    def __len__(self):
        return self.positions.size

    @property
    def K(self):
        return self.log_weights.shape[1]

    @property
    def weights(self):
        return model.floor_weights(np.exp(self.log_weights))

    def alive(self, name):
        """(T, k0) slice of ``weights``, ``means``, ``variances`` or ``sds``."""
        if name == "sds":
            return np.sqrt(self.variances[:, : self.k0])
        if name == "weights":
            return np.exp(self.log_weights[:, : self.k0])
        return getattr(self, name)[:, : self.k0]

    def state(self, t):
        return model.ChainState(self.log_weights[t], self.means[t],
                                self.variances[t], self.allocations[t])


def partition_by_k0(trace) -> Dict[int, np.ndarray]:
    """Map k0 to the retained positions whose target state has k0 alive
    components."""
    alive = np.asarray(trace.target_alive)
    return {int(k): np.flatnonzero(alive == k) for k in np.unique(alive)}


def _alive_first(counts):
    """Permutation sending alive labels (ascending) to 0..k0-1 and empty
    labels (ascending) to k0..K-1."""
    K = counts.size
    order = np.concatenate([np.flatnonzero(counts > 0), np.flatnonzero(counts == 0)])
    perm = np.empty(K, dtype=np.int64)
    perm[order] = np.arange(K)
    return perm


def select_reference(trace, positions, data, hyper=None, chunk=2048) -> ReferenceLabeling:
    """Highest-scoring iteration among ``positions``; ties go to the earliest."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        raise InvalidInputError("cannot select a reference from an empty cell")
    hyper = trace.hyper if hyper is None else hyper
    y = data.values
    scores = np.empty(positions.size)
    for s in range(0, positions.size, chunk):
        idx = positions[s:s + chunk]
        scores[s:s + chunk] = model.log_posterior_batch(
            y, trace.log_weights[idx], trace.means[idx], trace.variances[idx],
            trace.allocations[idx].astype(np.int64), hyper)
    best = int(np.argmax(scores))
    t = int(positions[best])
    state = trace.state(t)
    counts = state.counts()
    perm = _alive_first(counts)
    ref = state.permuted(perm)
    return ReferenceLabeling(
        k0=int(np.count_nonzero(counts)), iteration=int(trace.iterations[t]),
        position=t, allocations=ref.allocations, log_weights=ref.log_weights,
        means=ref.means, variances=ref.variances, permutation=perm,
        score=float(scores[best]))


def build_contingency(Zt, Z0, k0) -> ContingencyTable:
    """M[r, c] = #{i : Zt[i] is the r-th alive label and Z0[i] = c}."""
    Zt = np.asarray(Zt, dtype=np.int64)
    Z0 = np.asarray(Z0, dtype=np.int64)
    if Zt.shape != Z0.shape:
        raise InvalidInputError("allocation vectors differ in length")
    rows = np.unique(Zt)
    if rows.size != k0:
        raise InvalidInputError(f"iteration has {rows.size} alive labels, expected {k0}")
    if Z0.size and Z0.max() >= k0:
        raise InvalidInputError("reference labels must lie in 0..k0-1")
    r = np.searchsorted(rows, Zt)
    M = np.bincount(r * k0 + Z0, minlength=k0 * k0).reshape(k0, k0)
    return ContingencyTable(M, rows, M.sum(axis=1))


def candidate_sets(M, row_counts, m=DEFAULT_M) -> CandidateSets:
    """I^r = {c : M[r, c] / n_r > m} with strict inequality."""
    M = np.asarray(M, dtype=np.float64)
    share = M / np.asarray(row_counts, dtype=np.float64)[:, None]
    return CandidateSets(tuple(tuple(np.flatnonzero(row > m).tolist()) for row in share), m)


def _singleton_assignment(cands):
    if all(len(s) == 1 for s in cands.sets):
        v = tuple(s[0] for s in cands.sets)
        if len(set(v)) == len(v):
            return v
    return None


def _relative_terms(ref, cur):
    ref = np.asarray(ref, dtype=np.float64)
    diff = np.abs(ref - cur)
    mag = np.abs(ref)
    return np.where(mag < DENOM_GUARD, diff, diff / np.where(mag < DENOM_GUARD, 1.0, mag))


def assignment_loss(v, state_params, reference):
    """Summed relative distance between current rows and their assigned
    reference groups.

    ``state_params`` is (weights, means, sds) of the current alive
    components in row order; ``v[r]`` is the reference label of row r.
    """
    v = np.asarray(v)
    w, mu, sd = state_params
    return float(np.sum(_relative_terms(reference.weights[v], w))
                 + np.sum(_relative_terms(reference.means[v], mu))
                 + np.sum(_relative_terms(reference.sds[v], sd)))


def phase_two_minimize(cands, state_params, reference, cap=FACTORIAL_CAP):
    """Loss-minimizing injective assignment within the candidate sets.

    Assignments are visited in lexicographic order and the first minimum
    wins.  Raises :class:`NoInjectiveAssignment` when none exists and
    :class:`RelabelRefusal` when more than ``cap`` assignments would need
    checking.
    """
    sets = [sorted(s) for s in cands.sets]
    if any(not s for s in sets):
        raise NoInjectiveAssignment("a current group has no candidate reference group")
    workload = math.prod(len(s) for s in sets)
    if workload > cap:
        raise RelabelRefusal(
            f"{workload} candidate assignments exceed the cap of {cap}; "
            f"raise m (currently {cands.m}) or the cap")
    best, best_loss = None, np.inf
    for v in itertools.product(*sets):
        if len(set(v)) < len(v):
            continue
        loss = assignment_loss(v, state_params, reference)
        if loss < best_loss:
            best, best_loss = v, loss
    if best is None:
        raise NoInjectiveAssignment("candidate sets admit no permutation")
    return best


def _check_identical(w, mu, var):
    k0 = w.size
    for a in range(k0):
        for b in range(a + 1, k0):
            if (np.isclose(w[a], w[b], rtol=IDENTICAL_RTOL, atol=0)
                    and np.isclose(mu[a], mu[b], rtol=IDENTICAL_RTOL, atol=0)
                    and np.isclose(var[a], var[b], rtol=IDENTICAL_RTOL, atol=0)):
                raise RelabelRefusal(
                    f"alive components {a} and {b} are identical; relabeling needs "
                    "a posterior without merged components")


def relabel_iteration(state, reference, m=DEFAULT_M, cap=FACTORIAL_CAP):
    """Permutation (old label -> new label) for one iteration.

    Returns (perm, phase, fallbacks).  When the candidate sets admit no
    permutation, ``m`` is lowered to m/2, m/4 and 0 in turn and finally
    every permutation is allowed.
    """
    k0 = reference.k0
    ct = build_contingency(state.allocations, reference.allocations, k0)
    rows = ct.row_labels
    w = np.exp(state.log_weights[rows])
    params = (w, state.means[rows], np.sqrt(state.variances[rows]))
    _check_identical(w, state.means[rows], state.variances[rows])

    schedule = [m, m / 2, m / 4, 0.0, None]
    v = phase = None
    for step, mm in enumerate(schedule):
        if mm is None:
            cands = CandidateSets(tuple(tuple(range(k0)) for _ in range(k0)), 0.0)
        else:
            cands = candidate_sets(ct.M, ct.row_counts, mm)
        v = _singleton_assignment(cands)
        if v is not None:
            phase = 1
            break
        try:
            v = phase_two_minimize(cands, params, reference, cap)
            phase = 2
            break
        except NoInjectiveAssignment:
            continue
    perm = np.empty(state.K, dtype=np.int64)
    perm[rows] = v
    empty = np.setdiff1d(np.arange(state.K), rows)
    perm[empty] = np.arange(k0, state.K)
    return perm, phase, step


def _relabel_cell(trace, positions, data, hyper, m, cap):
    ref = select_reference(trace, positions, data, hyper)
    T, K, n = positions.size, trace.K, trace.allocations.shape[1]
    lw = np.empty((T, K))
    mu = np.empty((T, K))
    var = np.empty((T, K))
    z = np.empty((T, n), dtype=np.int64)
    perms = np.empty((T, K), dtype=np.int64)
    phases = np.empty(T, dtype=np.int64)
    falls = np.empty(T, dtype=np.int64)
    for i, t in enumerate(positions):
        state = trace.state(int(t))
        try:
            perm, phases[i], falls[i] = relabel_iteration(state, ref, m, cap)
        except RelabelRefusal as exc:
            raise RelabelRefusal(f"k0={ref.k0}, retained iteration {int(t)}: {exc}") from None
        new = state.permuted(perm)
        lw[i], mu[i], var[i], z[i], perms[i] = (new.log_weights, new.means,
                                                new.variances, new.allocations, perm)
    if np.any(falls):
        log.info("k0=%d: %d of %d iterations needed widened candidate sets",
                 ref.k0, int(np.count_nonzero(falls)), T)
    return RelabeledTrace(
        k0=ref.k0, positions=positions.copy(), iterations=trace.iterations[positions],
        log_weights=lw, means=mu, variances=var, allocations=z,
        permutations=perms, phases=phases, fallbacks=falls, reference=ref,
        hyper=hyper, m=m, data_checksum=getattr(trace, "data_checksum", ""))


def zswitch(trace, data, hyper=None, m=DEFAULT_M, cap=FACTORIAL_CAP,
            executor=None) -> Dict[int, RelabeledTrace]:
    """Relabel every k0 cell of ``trace``.

    ``executor`` (e.g. a ``ThreadPoolExecutor``) relabels cells
    concurrently; the result does not depend on it.
    """
    if not 0.0 < m < 1.0:
        raise InvalidInputError("m must lie strictly between 0 and 1")
    if len(trace) == 0:
        raise InvalidInputError("trace has no retained iterations")
    hyper = trace.hyper if hyper is None else hyper
    cells = partition_by_k0(trace)
    if executor is None:
        out = {k: _relabel_cell(trace, pos, data, hyper, m, cap) for k, pos in cells.items()}
    else:
        futures = {k: executor.submit(_relabel_cell, trace, pos, data, hyper, m, cap)
                   for k, pos in cells.items()}
        out = {k: f.result() for k, f in futures.items()}
    return out


# ---------------------------------------------------------------------------
# unimodality check

KDE_GRID = 512
MODE_FLOOR = 0.05


@dataclass
class DensityGrid:
    x: np.ndarray
    density: np.ndarray
    modes: int


def density_grid(samples, points=KDE_GRID, pad=5.0) -> DensityGrid:
    """Gaussian KDE (Scott bandwidth) on an evenly spaced grid.

    The grid extends ``pad`` bandwidths beyond the sample range.  Constant
    or near-constant series yield a single spike with one mode.
    """
    s = np.asarray(samples, dtype=np.float64)
    spread = np.ptp(s)
    scale = max(abs(float(np.mean(s))), 1.0)
    if s.size < 2 or spread <= 1e-12 * scale:
        c = float(np.mean(s))
        h = 1e-6 * scale
        x = np.linspace(c - pad * h, c + pad * h, points)
        dens = np.exp(-0.5 * ((x - c) / h) ** 2) / (h * np.sqrt(2 * np.pi))
        return DensityGrid(x, dens, 1)
    kde = gaussian_kde(s)
    bw = float(np.sqrt(kde.covariance[0, 0]))
    x = np.linspace(s.min() - pad * bw, s.max() + pad * bw, points)
    dens = kde(x)
    return DensityGrid(x, dens, count_modes(dens))


def count_modes(dens, floor=MODE_FLOOR):
    """Strict local maxima above ``floor`` times the global maximum."""
    d = np.asarray(dens)
    inner = (d[1:-1] > d[:-2]) & (d[1:-1] > d[2:]) & (d[1:-1] > floor * d.max())
    return max(int(np.count_nonzero(inner)), 1 if d.size else 0)


def unimodality_report(sub: RelabeledTrace, min_samples=100):
    """Mode counts for every alive parameter series of a relabeled cell.

    Returns {(parameter, component): DensityGrid} with parameter in
    ``weights``, ``means``, ``variances``.
    """
    if len(sub) < min_samples:
        raise InvalidInputError(f"need at least {min_samples} samples, got {len(sub)}")
    out = {}
    for name in ("weights", "means", "variances"):
        arr = sub.alive(name)
        for k in range(sub.k0):
            out[(name, k)] = density_grid(arr[:, k])
    return out
