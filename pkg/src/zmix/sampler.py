"""Prior parallel tempering over a ladder of Dirichlet concentrations.

All chains share the likelihood and the component priors; they differ only
in the concentration of the symmetric Dirichlet prior on the weights.  The
swap acceptance ratio therefore reduces to four Dirichlet densities.  The
chain with the smallest concentration is the target chain.

Random streams
--------------
``numpy.random.SeedSequence(seed).spawn(J + 1)`` gives one child per chain
(in ladder order) plus a final child driving the swap moves.  Chain ``j``
consumes its own stream in a fixed pattern per sweep, so the trace does not
depend on how chain updates are scheduled.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field, asdict, replace
from typing import Optional, Sequence

import numpy as np

from . import model
from .exceptions import ConfigError, NumericalError
from .model import ChainState, Hyperparams

log = logging.getLogger(__name__)

_HALF = 0.5
EXPLORATORY = (30.0, 20.0, 10.0, 5.0, 3.0, 1.0, _HALF) + tuple(
    _HALF ** p for p in (2, 3, 4, 5, 6, 8, 9, 10, 15, 20, 30, 35, 40, 45, 50))
REFINED = (30.0, 20.0, 10.0, 5.0, 3.0, 1.0, _HALF) + tuple(
    _HALF ** p for p in (2, 3, 4, 5, 6, 8, 9, 10, 15, 20, 30))


@dataclass(frozen=True)
class TemperingLadder:
    alphas: tuple

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas:
            raise ConfigError("ladder must contain at least one value")
        if any(not (np.isfinite(a) and a > 0) for a in alphas):
            raise ConfigError("ladder values must be positive and finite")
        if any(b >= a for a, b in zip(alphas, alphas[1:])):
            raise ConfigError("ladder must be strictly decreasing")
        object.__setattr__(self, "alphas", alphas)

    @property
    def J(self):
        return len(self.alphas)

    @property
    def target(self):
        return self.alphas[-1]

    def __len__(self):
        return len(self.alphas)


def build_ladder(kind="refined"):
    """Return the exploratory (22 chains) or refined (18 chains) ladder, or
    validate an explicit decreasing sequence."""
    if isinstance(kind, TemperingLadder):
        return kind
    if isinstance(kind, str):
        try:
            return TemperingLadder({"exploratory": EXPLORATORY,
                                    "refined": REFINED}[kind])
        except KeyError:
            raise ConfigError(f"unknown ladder {kind!r}") from None
    return TemperingLadder(tuple(kind))


@dataclass(frozen=True)
class RunConfig:
    K: int = 10
    iterations: int = 50_000
    burn_in: int = 30_000
    swap_prob: float = 0.5
    seed: int = 0
    store_all_chains: bool = False
    ladder: TemperingLadder = field(default_factory=lambda: build_ladder("refined"))
    debug: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ladder", build_ladder(self.ladder))
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("burn_in must satisfy 0 <= burn_in < iterations")
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ConfigError("swap_prob must lie in [0, 1]")

    @property
    def retained(self):
        return self.iterations - self.burn_in

    def to_dict(self):
        d = asdict(self)
        d["ladder"] = list(self.ladder.alphas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["ladder"] = TemperingLadder(tuple(d["ladder"]))
        return cls(**d)


@dataclass
class PosteriorTrace:
    """Retained target-chain draws plus per-chain alive counts.

    Arrays are indexed by retained iteration along axis 0 (``alive_counts``
    is chains x iterations).  ``all_chains`` holds full per-chain draws only
    when the run was configured with ``store_all_chains``.
    """

    iterations: np.ndarray
    log_weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    allocations: np.ndarray
    alive_counts: np.ndarray
    swap_attempts: np.ndarray
    swap_accepts: np.ndarray
    config: RunConfig
    hyper: Hyperparams
    data_checksum: str = ""
    all_chains: Optional[dict] = None

    def __len__(self):
        return self.iterations.size

    @property
    def K(self):
        return self.log_weights.shape[1]

    @property
    def weights(self):
        return model.floor_weights(np.exp(self.log_weights))

    @property
    def target_alive(self):
        return self.alive_counts[-1]

    @property
    def swap_rates(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.swap_attempts > 0,
                            self.swap_accepts / np.maximum(self.swap_attempts, 1),
                            np.nan)

    def state(self, t):
        return ChainState(self.log_weights[t].copy(), self.means[t].copy(),
                          self.variances[t].copy(),
                          self.allocations[t].astype(np.int64))

    def subset(self, idx):
        """Target-chain draws restricted to retained positions ``idx``."""
        idx = np.asarray(idx)
        return PosteriorTrace(
            self.iterations[idx], self.log_weights[idx], self.means[idx],
            self.variances[idx], self.allocations[idx],
            self.alive_counts[:, idx], self.swap_attempts, self.swap_accepts,
            self.config, self.hyper, self.data_checksum)


def chain_streams(seed, J):
    """Per-chain generators plus the swap-move generator."""
    children = np.random.SeedSequence(int(seed)).spawn(J + 1)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def swap_log_ratio(w_j, w_next, alpha_j, alpha_next):
    """log of the Dirichlet-only acceptance ratio for exchanging two chains."""
    K = len(w_j)
    d = model.dirichlet_log_density
    return float(d(w_next, alpha_j, K) + d(w_j, alpha_next, K)
                 - d(w_j, alpha_j, K) - d(w_next, alpha_next, K))


def _swap_decision(weights, alphas, rng):
    """Pick an adjacent pair uniformly and decide acceptance.

    ``weights`` is a J x K array of linear weights.  Returns
    (j, accepted, log_ratio) with chains j and j + 1 as the pair.
    """
    J = len(alphas)
    j = int(rng.integers(J - 1))
    log_a = swap_log_ratio(weights[j], weights[j + 1], alphas[j], alphas[j + 1])
    accepted = bool(np.log(1.0 - rng.random()) <= min(0.0, log_a))
    return j, accepted, log_a


def propose_swap(states: Sequence[ChainState], ladder, rng):
    """Attempt one adjacent exchange; returns (states, pair_index, accepted).

    On acceptance the weights, component parameters and allocations of the
    two chains are exchanged, which amounts to exchanging the states.
    """
    ladder = build_ladder(ladder)
    if len(states) < 2:
        raise ConfigError("a swap needs at least two chains")
    weights = np.stack([s.weights for s in states])
    j, accepted, _ = _swap_decision(weights, ladder.alphas, rng)
    states = list(states)
    if accepted:
        states[j], states[j + 1] = states[j + 1], states[j]
    return states, j, accepted


def _check_debug(values, LW, MU, VAR, Z):
    for j in range(LW.shape[0]):
        ChainState(LW[j], MU[j], VAR[j], Z[j]).validate(values.size)
    p = np.exp(LW[:, None, :] + model._normal_logpdf(values[:, None], MU[:, None, :],
                                                       VAR[:, None, :]))
    p /= p.sum(-1, keepdims=True)
    assert np.all(np.abs(p.sum(-1) - 1.0) <= 1e-12)


def zmix_run(data, config: RunConfig, hyper: Hyperparams, progress=None):
    """Run the tempered Gibbs sampler and return the post-burn-in trace.

    ``hyper.alpha`` is ignored; each chain uses its ladder value.  The
    returned trace's ``hyper`` carries the target concentration.
    """
    ladder = config.ladder
    alphas = np.asarray(ladder.alphas)
    J, K, n = ladder.J, config.K, data.n
    if hyper.K != K:
        hyper = replace(hyper, K=K)
    y = data.values
    rngs = chain_streams(config.seed, J)
    chain_rngs, swap_rng = rngs[:J], rngs[J]

    inits = [model.initial_state(data, model.with_alpha(hyper, a), r)
             for a, r in zip(alphas, chain_rngs)]
    LW = np.stack([s.log_weights for s in inits])
    MU = np.stack([s.means for s in inits])
    VAR = np.stack([s.variances for s in inits])
    Z = np.stack([s.allocations for s in inits])
    counts = np.stack([s.stats.counts for s in inits])

    T = config.retained
    zdtype = np.int8 if K <= 127 else np.int32
    out_lw = np.empty((T, K))
    out_mu = np.empty((T, K))
    out_var = np.empty((T, K))
    out_z = np.empty((T, n), dtype=zdtype)
    alive = np.empty((J, T), dtype=np.int16)
    attempts = np.zeros(max(J - 1, 0), dtype=np.int64)
    accepts = np.zeros(max(J - 1, 0), dtype=np.int64)
    full = None
    if config.store_all_chains:
        full = {"log_weights": np.empty((J, T, K)), "means": np.empty((J, T, K)),
                "variances": np.empty((J, T, K)),
                "allocations": np.empty((J, T, n), dtype=zdtype)}

    gamma = lambda shapes: np.stack([r.standard_gamma(s)
                                     for r, s in zip(chain_rngs, shapes)])
    normal = lambda: np.stack([r.standard_normal(K) for r in chain_rngs])

    for it in range(1, config.iterations + 1):
        try:
            U = np.stack([1.0 - r.random(n + K) for r in chain_rngs])
            Z = model._draw_allocations(y, LW, MU, VAR, U[:, :n])
            LW, MU, VAR, stats = model._draw_parameters(
                y, Z, K, alphas, hyper, U[:, n:], gamma, normal)
        except NumericalError as exc:
            raise NumericalError(str(exc), iteration=it) from exc
        counts = stats.counts

        if J > 1 and swap_rng.random() < config.swap_prob:
            j, accepted, _ = _swap_decision(model.floor_weights(np.exp(LW)),
                                            alphas, swap_rng)
            attempts[j] += 1
            if accepted:
                accepts[j] += 1
                pair, flip = [j, j + 1], [j + 1, j]
                for arr in (LW, MU, VAR, Z, counts):
                    arr[pair] = arr[flip]

        if config.debug:
            _check_debug(y, LW, MU, VAR, Z)

        if it > config.burn_in:
            t = it - config.burn_in - 1
            out_lw[t], out_mu[t], out_var[t], out_z[t] = LW[-1], MU[-1], VAR[-1], Z[-1]
            alive[:, t] = np.count_nonzero(counts, axis=1)
            if full is not None:
                full["log_weights"][:, t] = LW
                full["means"][:, t] = MU
                full["variances"][:, t] = VAR
                full["allocations"][:, t] = Z
        if progress is not None and it % 1000 == 0:
            progress(it)

    return PosteriorTrace(
        iterations=np.arange(config.burn_in + 1, config.iterations + 1),
        log_weights=out_lw, means=out_mu, variances=out_var, allocations=out_z,
        alive_counts=alive, swap_attempts=attempts, swap_accepts=accepts,
        config=config, hyper=model.with_alpha(hyper, ladder.target),
        data_checksum=data.checksum(), all_chains=full)


def alive_count_distribution(trace_or_series, chain=-1):
    """Empirical distribution of the alive-component count, as {k0: freq}."""
    if isinstance(trace_or_series, PosteriorTrace):
        series = trace_or_series.alive_counts[chain]
    else:
        series = np.asarray(trace_or_series)
    if series.size == 0:
        raise ValueError("empty alive-count series")
    c = Counter(int(k) for k in series)
    return {k: c[k] / series.size for k in sorted(c)}


def modal_alive_count(trace_or_series, chain=-1):
    """Mode of the alive-count distribution; ties go to the smaller count."""
    dist = alive_count_distribution(trace_or_series, chain)
    best = max(dist.values())
    return min(k for k, p in dist.items() if p == best)
