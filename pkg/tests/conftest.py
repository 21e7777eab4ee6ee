import numpy as np
import pytest

from zmix import data as zdata
from zmix.model import Dataset, Hyperparams
from zmix.sampler import PosteriorTrace, RunConfig, build_ladder

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def sim2_small():
    return zdata.generate_simulation(zdata.builtin_sim(2, n=60, seed=11))


def make_trace(values, log_weights, means, variances, allocations, K=None, alpha=1e-3):
    """PosteriorTrace around hand-built target-chain arrays."""
    lw = np.asarray(log_weights, dtype=np.float64)
    T, K = lw.shape
    z = np.asarray(allocations)
    alive = np.array([[np.unique(row).size for row in z]], dtype=np.int16)
    cfg = RunConfig(K=K, iterations=T + 1, burn_in=1, ladder=build_ladder([alpha]))
    hyper = Hyperparams.from_data(values, K, alpha=alpha)
    return PosteriorTrace(
        iterations=np.arange(2, T + 2), log_weights=lw,
        means=np.asarray(means, dtype=np.float64),
        variances=np.asarray(variances, dtype=np.float64),
        allocations=z.astype(np.int8), alive_counts=alive,
        swap_attempts=np.zeros(0, dtype=np.int64), swap_accepts=np.zeros(0, dtype=np.int64),
        config=cfg, hyper=hyper, data_checksum=Dataset(values).checksum())


def consistent_trace(rng, n=40, k0=3, K=5, T=30):
    """Well separated groups observed with small jitter; labels consistent
    across iterations and empty components at the end."""
    centres = np.arange(k0) * 10.0 + rng.normal(0, 0.1, k0)
    z0 = np.concatenate([np.arange(k0), rng.integers(k0, size=n - k0)])
    y = centres[z0] + rng.normal(0, 1, n)
    w0 = np.bincount(z0, minlength=k0) / n
    lw = np.full((T, K), -800.0)
    mu = np.empty((T, K))
    var = np.empty((T, K))
    Z = np.tile(z0, (T, 1))
    for t in range(T):
        w = w0 * np.exp(rng.normal(0, 0.05, k0))
        w = w / w.sum() * (1 - (K - k0) * np.exp(-800.0))
        lw[t, :k0] = np.log(w)
        mu[t, :k0] = centres + rng.normal(0, 0.05, k0)
        var[t, :k0] = np.exp(rng.normal(0, 0.05, k0))
        mu[t, k0:] = rng.normal(0, 5, K - k0)
        var[t, k0:] = np.exp(rng.normal(0, 1, K - k0))
        # a few members wander to a neighbouring group
        flip = rng.random(n) < 0.05
        Z[t, flip] = (z0[flip] + 1) % k0
        for k in range(k0):  # keep every group alive
            if not np.any(Z[t] == k):
                Z[t, np.flatnonzero(z0 == k)[0]] = k
    return y, lw, mu, var, Z
