import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zmix import model, relabel
from zmix.exceptions import InvalidInputError, NoInjectiveAssignment, RelabelRefusal
from zmix.model import Dataset

from conftest import consistent_trace, make_trace


def _permute_trace(rng, y, lw, mu, var, Z):
    """Apply an independent random permutation to every iteration."""
    T, K = lw.shape
    out = [np.empty_like(a) for a in (lw, mu, var, Z)]
    for t in range(T):
        perm = rng.permutation(K)
        inv = np.argsort(perm)
        out[0][t], out[1][t], out[2][t] = lw[t, inv], mu[t, inv], var[t, inv]
        out[3][t] = perm[Z[t]]
    return out


def _cells(y, lw, mu, var, Z, **kw):
    tr = make_trace(y, lw, mu, var, Z)
    return tr, relabel.zswitch(tr, Dataset(y), **kw)


# --- partition and reference ----------------------------------------------------

def test_partition_single_cell_and_exhaustive():
    rng = np.random.default_rng(0)
    y, lw, mu, var, Z = consistent_trace(rng)
    tr = make_trace(y, lw, mu, var, Z)
    cells = relabel.partition_by_k0(tr)
    assert list(cells) == [3] and cells[3].tolist() == list(range(len(tr)))
    Z2 = Z.copy()
    Z2[::3, :] = np.where(Z2[::3] == 2, 1, Z2[::3])
    cells = relabel.partition_by_k0(make_trace(y, lw, mu, var, Z2))
    allpos = np.sort(np.concatenate(list(cells.values())))
    assert allpos.tolist() == list(range(len(tr)))
    assert set(cells) == {2, 3}


def test_single_iteration_reference():
    rng = np.random.default_rng(1)
    y, lw, mu, var, Z = consistent_trace(rng, T=1)
    tr = make_trace(y, lw, mu, var, Z)
    ref = relabel.select_reference(tr, [0], Dataset(y))
    assert ref.position == 0 and ref.k0 == 3


def test_reference_tie_goes_to_earliest():
    rng = np.random.default_rng(2)
    y, lw, mu, var, Z = consistent_trace(rng, T=2)
    perm = np.array([2, 0, 1, 4, 3])
    inv = np.argsort(perm)
    lw[1], mu[1], var[1], Z[1] = lw[0, inv], mu[0, inv], var[0, inv], perm[Z[0]]
    tr = make_trace(y, lw, mu, var, Z)
    ref = relabel.select_reference(tr, [0, 1], Dataset(y))
    assert ref.position == 0


def test_reference_matches_brute_force():
    rng = np.random.default_rng(3)
    y, lw, mu, var, Z = consistent_trace(rng, T=50)
    tr = make_trace(y, lw, mu, var, Z)
    d = Dataset(y)
    scores = [model.log_unnormalized_posterior(d, tr.state(t), tr.hyper) for t in range(50)]
    ref = relabel.select_reference(tr, np.arange(50), d)
    assert ref.position == int(np.argmax(scores))
    assert sorted(np.unique(ref.allocations)) == [0, 1, 2]


# --- contingency and candidates ---------------------------------------------------

def test_contingency_identity_and_swap():
    z = np.array([0, 0, 1, 2, 2, 2])
    ct = relabel.build_contingency(z, z, 3)
    assert np.array_equal(ct.M, np.diag([2, 1, 3]))
    swapped = np.array([1, 0, 2])[z]
    M = relabel.build_contingency(swapped, z, 3).M
    assert np.array_equal(M[:2, :2], [[0, 1], [2, 0]]) and M[2, 2] == 3


def test_contingency_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(20):
        zt = rng.choice([1, 4, 6], size=20)
        zt[:3] = [1, 4, 6]
        z0 = rng.integers(3, size=20)
        ct = relabel.build_contingency(zt, z0, 3)
        labels = [1, 4, 6]
        for r in range(3):
            for c in range(3):
                assert ct.M[r, c] == sum(1 for i in range(20)
                                         if zt[i] == labels[r] and z0[i] == c)
        assert ct.M.sum() == 20
        assert np.array_equal(ct.row_counts, [np.sum(zt == v) for v in labels])


def test_contingency_wrong_cell():
    with pytest.raises(InvalidInputError):
        relabel.build_contingency(np.array([0, 1, 1]), np.array([0, 0, 0]), 3)


def test_candidate_sets():
    diag = np.diag([5, 3, 2])
    assert relabel.candidate_sets(diag, [5, 3, 2], 0.9).sets == ((0,), (1,), (2,))
    M = np.array([[6, 4], [0, 10]])
    assert relabel.candidate_sets(M, [10, 10], 0.25).sets[0] == (0, 1)
    assert relabel.candidate_sets(M, [10, 10], 0.5).sets[0] == (0,)
    # strict inequality
    assert relabel.candidate_sets(np.array([[5, 5]]), [10], 0.5).sets[0] == ()


# --- phase two ---------------------------------------------------------------------

def _ref(k0, w, mu, var):
    K = k0
    return relabel.ReferenceLabeling(
        k0=k0, iteration=0, position=0, allocations=np.zeros(1, int),
        log_weights=np.log(np.asarray(w, float)), means=np.asarray(mu, float),
        variances=np.asarray(var, float), permutation=np.arange(K), score=0.0)


def test_phase_two_singletons_and_transposition():
    ref = _ref(2, [0.6, 0.4], [0.0, 5.0], [1.0, 2.0])
    c = relabel.CandidateSets(((1,), (0,)), 0.25)
    params = (np.array([0.1, 0.9]), np.array([9.0, 9.0]), np.array([1.0, 1.0]))
    assert relabel.phase_two_minimize(c, params, ref) == (1, 0)
    c = relabel.CandidateSets(((0, 1), (0, 1)), 0.25)
    params = (np.array([0.4, 0.6]), np.array([5.0, 0.0]), np.sqrt([2.0, 1.0]))
    v = relabel.phase_two_minimize(c, params, ref)
    assert v == (1, 0)
    assert relabel.assignment_loss(v, params, ref) == 0.0


def test_phase_two_matches_exhaustive():
    rng = np.random.default_rng(5)
    for _ in range(50):
        ref = _ref(3, rng.dirichlet(np.ones(3)), rng.normal(0, 3, 3), rng.gamma(2, 1, 3))
        params = (rng.dirichlet(np.ones(3)), rng.normal(0, 3, 3), np.sqrt(rng.gamma(2, 1, 3)))
        sets = tuple(tuple(sorted(rng.choice(3, size=rng.integers(1, 4), replace=False)))
                     for _ in range(3))
        cands = relabel.CandidateSets(sets, 0.25)
        feasible = [p for p in itertools.permutations(range(3))
                    if all(p[r] in sets[r] for r in range(3))]
        if not feasible:
            with pytest.raises(NoInjectiveAssignment):
                relabel.phase_two_minimize(cands, params, ref)
            continue
        losses = [relabel.assignment_loss(p, params, ref) for p in feasible]
        assert relabel.phase_two_minimize(cands, params, ref) == feasible[int(np.argmin(losses))]
        full = relabel.CandidateSets(((0, 1, 2),) * 3, 0.0)
        all_losses = [relabel.assignment_loss(p, params, ref)
                      for p in itertools.permutations(range(3))]
        assert relabel.phase_two_minimize(full, params, ref) == \
            list(itertools.permutations(range(3)))[int(np.argmin(all_losses))]


def test_denominator_guard():
    ref = _ref(2, [0.5, 0.5], [0.0, 4.0], [1.0, 1.0])
    params = (np.array([0.5, 0.5]), np.array([0.3, 4.0]), np.array([1.0, 1.0]))
    assert relabel.assignment_loss((0, 1), params, ref) == pytest.approx(0.3)


def test_workload_cap():
    ref = _ref(3, [0.3, 0.3, 0.4], [0, 1, 2], [1, 1, 1])
    c = relabel.CandidateSets(((0, 1, 2),) * 3, 0.1)
    params = (np.array([0.3, 0.3, 0.4]), np.array([0.0, 1, 2]), np.ones(3))
    with pytest.raises(RelabelRefusal, match="raise m"):
        relabel.phase_two_minimize(c, params, ref, cap=26)
    assert relabel.phase_two_minimize(c, params, ref, cap=27) == (0, 1, 2)


# --- zswitch ------------------------------------------------------------------------

def test_fixed_point_on_consistent_trace():
    rng = np.random.default_rng(6)
    y, lw, mu, var, Z = consistent_trace(rng)
    tr, cells = _cells(y, lw, mu, var, Z)
    sub = cells[3]
    # the reference is already alive-first, so nothing moves
    assert np.array_equal(sub.allocations, Z)
    assert np.array_equal(sub.means, mu) and np.array_equal(sub.log_weights, lw)
    assert np.all(sub.phases == 1) and not np.any(sub.fallbacks)


def _recovers(seed, n, k0, K, T):
    rng = np.random.default_rng(seed)
    y, lw, mu, var, Z = consistent_trace(rng, n=n, k0=k0, K=K, T=T)
    plw, pmu, pvar, pZ = _permute_trace(rng, y, lw, mu, var, Z)
    tr, cells = _cells(y, plw, pmu, pvar, pZ)
    sub = cells[k0]
    # one global relabeling maps the truth onto the output
    g = np.full(k0, -1)
    for t in range(T):
        for k in range(k0):
            new = np.unique(sub.allocations[t][Z[t] == k])
            assert new.size == 1
            assert g[k] in (-1, new[0])
            g[k] = new[0]
    assert sorted(g) == list(range(k0))
    for t in range(T):
        assert np.array_equal(sub.means[t, g], mu[t, :k0])
        assert np.array_equal(sub.log_weights[t, g], lw[t, :k0])
    again = relabel.zswitch(make_trace(y, sub.log_weights, sub.means, sub.variances,
                                       sub.allocations), Dataset(y))[k0]
    assert np.array_equal(again.allocations, sub.allocations)
    assert np.array_equal(again.means, sub.means)
    assert np.array_equal(again.permutations, np.tile(np.arange(K), (T, 1)))
    d = Dataset(y)
    for t in range(T):
        a = model.mixture_log_likelihood(d, tr.state(t))
        b = model.mixture_log_likelihood(d, sub.state(t))
        assert abs(a - b) <= 1e-9 * abs(a)
        assert sorted(np.bincount(tr.state(t).allocations, minlength=K)) == \
            sorted(np.bincount(sub.allocations[t], minlength=K))
        assert sorted(tr.means[t]) == sorted(sub.means[t])


def test_permutation_recovery_100_instances():
    rng = np.random.default_rng(7)
    for i in range(100):
        k0 = int(rng.integers(1, 5))
        K = int(rng.integers(k0, k0 + 3))
        _recovers(1000 + i, n=int(rng.integers(max(10, 3 * k0), 51)), k0=k0, K=K, T=12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), k0=st.integers(2, 4))
def test_permutation_recovery_property(seed, k0):
    _recovers(seed, n=40, k0=k0, K=k0 + 2, T=8)


def test_phase_two_used_when_groups_overlap():
    rng = np.random.default_rng(8)
    y, lw, mu, var, Z = consistent_trace(rng, T=20)
    # scramble 45% of group 0 into group 1 at odd iterations
    for t in range(1, 20, 2):
        members = np.flatnonzero(Z[t] == 0)
        Z[t, members[: int(0.45 * members.size)]] = 1
    plw, pmu, pvar, pZ = _permute_trace(rng, y, lw, mu, var, Z)
    _, cells = _cells(y, plw, pmu, pvar, pZ)
    sub = cells[3]
    assert np.any(sub.phases == 2)
    # parameters still line up with the reference group order
    order = np.argsort(sub.means[:, :3], axis=1)
    assert np.all(order == order[0])


def test_identical_components_refused():
    rng = np.random.default_rng(9)
    y, lw, mu, var, Z = consistent_trace(rng, T=5)
    lw[2, 1] = lw[2, 0]
    mu[2, 1], var[2, 1] = mu[2, 0], var[2, 0]
    with pytest.raises(RelabelRefusal, match="identical"):
        _cells(y, lw, mu, var, Z)


def test_invalid_m():
    rng = np.random.default_rng(10)
    y, lw, mu, var, Z = consistent_trace(rng, T=3)
    with pytest.raises(InvalidInputError):
        _cells(y, lw, mu, var, Z, m=1.0)


def test_cells_identical_with_executor():
    from concurrent.futures import ThreadPoolExecutor
    rng = np.random.default_rng(11)
    y, lw, mu, var, Z = consistent_trace(rng, T=20)
    Z[::2] = np.where(Z[::2] == 2, 1, Z[::2])
    tr = make_trace(y, *_permute_trace(rng, y, lw, mu, var, Z))
    a = relabel.zswitch(tr, Dataset(y))
    with ThreadPoolExecutor(3) as ex:
        b = relabel.zswitch(tr, Dataset(y), executor=ex)
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k].allocations, b[k].allocations)


# --- unimodality ------------------------------------------------------------------------

def test_mode_counts():
    rng = np.random.default_rng(12)
    assert relabel.density_grid(rng.normal(size=2000)).modes == 1
    two = np.concatenate([rng.normal(0, 1, 1000), rng.normal(5, 1, 1000)])
    assert relabel.density_grid(two).modes == 2
    assert relabel.density_grid(np.full(200, 3.0)).modes == 1


def test_density_grid_integrates_to_one():
    rng = np.random.default_rng(13)
    g = relabel.density_grid(rng.gamma(2, 1, 500))
    assert abs(np.trapezoid(g.density, g.x) - 1) < 1e-3


def test_unimodality_report():
    rng = np.random.default_rng(14)
    y, lw, mu, var, Z = consistent_trace(rng, T=400)
    _, cells = _cells(y, lw, mu, var, Z)
    rep = relabel.unimodality_report(cells[3])
    assert set(rep) == {(p, k) for p in ("weights", "means", "variances") for k in range(3)}
    assert all(g.modes == 1 for g in rep.values())
    with pytest.raises(InvalidInputError):
        relabel.unimodality_report(cells[3], min_samples=1000)
