"""Probability kernels for an overfitted univariate Gaussian mixture.

The Gibbs sweep draws, in order, the allocations from their categorical
full conditional, the weights from a Dirichlet, and the component means and
variances from the conjugate Normal-Inverse-Gamma posterior.  Weights are
carried in log space so that chains with a very small Dirichlet
concentration keep finite log-weights for their empty components.

Private helpers prefixed with ``_`` operate on arrays with arbitrary leading
batch dimensions; the parallel-tempered sampler calls them with one row per
chain, the public single-state functions with none.
"""

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .exceptions import InvalidInputError, NumericalError

LOG_2PI = math.log(2.0 * math.pi)

#: Weights are floored here before any Dirichlet density evaluation.
WEIGHT_FLOOR = 1e-300

#: Shapes below this are sampled through the log-space Gamma identity.
SMALL_SHAPE = 0.1

#: Number of free emission parameters per component (mean and variance).
FREE_PARAMS = 2


@dataclass(frozen=True)
class Dataset:
    """Observed values with optional ground-truth labels (0-based)."""

    values: np.ndarray
    true_labels: Optional[np.ndarray] = None
    name: str = "data"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size < 1:
            raise InvalidInputError("dataset must contain at least one value")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("dataset contains non-finite values")
        object.__setattr__(self, "values", values)
        if self.true_labels is not None:
            labels = np.asarray(self.true_labels, dtype=np.int64).reshape(-1)
            if labels.size != values.size:
                raise InvalidInputError(
                    f"true_labels has length {labels.size}, expected {values.size}")
            if labels.min() < 0:
                raise InvalidInputError("true_labels must be non-negative")
            object.__setattr__(self, "true_labels", labels)

    @property
    def n(self):
        return self.values.size

    def checksum(self):
        """SHA-256 of the little-endian float64 representation of the values."""
        return hashlib.sha256(self.values.astype("<f8").tobytes()).hexdigest()


@dataclass(frozen=True)
class Hyperparams:
    """Prior hyperparameters.

    The weights follow a symmetric Dirichlet(alpha), each variance an
    InvGamma(a, b) and each mean, given its variance, a Normal(l, var / tau).
    """

    K: int
    alpha: float
    a: float
    b: float
    l: float
    tau: float = 1.0
    d: int = FREE_PARAMS

    def __post_init__(self):
        if int(self.K) < 1:
            raise InvalidInputError("K must be at least 1")
        for name in ("alpha", "a", "b", "tau"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidInputError(f"{name} must be positive and finite, got {value}")
        if not np.isfinite(self.l):
            raise InvalidInputError("l must be finite")
        if self.d != FREE_PARAMS:
            raise InvalidInputError("only univariate Gaussian components (d=2) are supported")

    @classmethod
    def from_data(cls, values, K, alpha=1.0, *, a=2.5, b=None, l=None, tau=1.0):
        """Data-dependent defaults: ``l`` is the sample mean, ``b`` the
        sample variance (divisor n)."""
        values = np.asarray(values, dtype=np.float64)
        if l is None:
            l = float(values.mean())
        if b is None:
            b = float(np.mean((values - values.mean()) ** 2))
            if b <= 0:
                raise InvalidInputError(
                    "sample variance is zero; pass b explicitly")
        return cls(K=int(K), alpha=float(alpha), a=float(a), b=float(b),
                   l=float(l), tau=float(tau))


@dataclass(frozen=True)
class ComponentStats:
    """Sufficient statistics of an allocation vector.

    ``centered_ss`` is the within-component sum of squared deviations,
    accumulated in a second pass rather than from ``sumsq``.
    """

    counts: np.ndarray
    sums: np.ndarray
    sumsq: np.ndarray
    centered_ss: np.ndarray

    @property
    def group_means(self):
        return self.sums / np.maximum(self.counts, 1)


@dataclass
class ChainState:
    """One chain's mixture parameters and allocations at one iteration."""

    log_weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    allocations: np.ndarray
    stats: Optional[ComponentStats] = field(default=None, repr=False)

    @classmethod
    def from_weights(cls, weights, means, variances, allocations):
        weights = np.asarray(weights, dtype=np.float64)
        with np.errstate(divide="ignore"):
            log_weights = np.log(weights)
        return cls(log_weights, np.asarray(means, dtype=np.float64),
                   np.asarray(variances, dtype=np.float64),
                   np.asarray(allocations, dtype=np.int64))

    @property
    def K(self):
        return self.log_weights.size

    @property
    def weights(self):
        """Linear weights, floored at :data:`WEIGHT_FLOOR` and renormalized."""
        return floor_weights(np.exp(self.log_weights))

    def counts(self):
        return np.bincount(self.allocations, minlength=self.K)

    def permuted(self, perm):
        """Relabel so that old component ``k`` becomes ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return ChainState(self.log_weights[inv], self.means[inv],
                          self.variances[inv], perm[self.allocations])

    def validate(self, n=None):
        K = self.K
        if self.means.shape != (K,) or self.variances.shape != (K,):
            raise InvalidInputError("parameter vectors must all have length K")
        if np.any(np.isnan(self.log_weights)) or np.any(self.log_weights > 1e-12):
            raise InvalidInputError("log-weights must be <= 0 and not NaN")
        total = np.exp(_logsumexp(self.log_weights))
        if abs(total - 1.0) > 1e-12:
            raise InvalidInputError(f"weights sum to {total!r}, not 1")
        if not np.all(np.isfinite(self.means)):
            raise InvalidInputError("means must be finite")
        if not (np.all(np.isfinite(self.variances)) and np.all(self.variances > 0)):
            raise InvalidInputError("variances must be positive and finite")
        z = self.allocations
        if n is not None and z.shape != (n,):
            raise InvalidInputError(f"allocations have shape {z.shape}, expected ({n},)")
        if z.size and (z.min() < 0 or z.max() >= K):
            raise InvalidInputError("allocation labels out of range")


def floor_weights(weights):
    w = np.maximum(np.asarray(weights, dtype=np.float64), WEIGHT_FLOOR)
    return w / w.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# batched kernels

def _logsumexp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _normal_logpdf(y, mean, var):
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (y - mean) ** 2 / var


def _invgamma_logpdf(x, a, b):
    return a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x


def _allocation_logits(values, log_weights, means, variances):
    """Unnormalized log P(z_i = k); output shape (..., n, K)."""
    lw = log_weights[..., None, :]
    mu = means[..., None, :]
    var = variances[..., None, :]
    return lw + _normal_logpdf(values[:, None], mu, var)


def _draw_allocations(values, log_weights, means, variances, u):
    """Categorical allocation draw; parameters (..., K), ``u`` (..., n) in (0, 1]."""
    lead = log_weights.shape[:-1]
    K, n = log_weights.shape[-1], values.size
    out = np.empty(lead + (n,), dtype=np.int64)
    bad = _kernels.allocate(
        values, np.ascontiguousarray(log_weights, dtype=np.float64).reshape(-1, K),
        np.ascontiguousarray(means, dtype=np.float64).reshape(-1, K),
        np.ascontiguousarray(variances, dtype=np.float64).reshape(-1, K),
        np.ascontiguousarray(u).reshape(-1, n), out.reshape(-1, n))
    if bad >= 0:
        raise NumericalError(
            f"all allocation probabilities underflowed for observation {bad % n}")
    return out


def _component_stats(values, z, K):
    """Counts, sums, sums of squares and centered SS for allocations ``z`` of
    shape (..., n)."""
    lead = z.shape[:-1]
    rows = int(np.prod(lead)) if lead else 1
    flat = (z.reshape(rows, -1) + K * np.arange(rows)[:, None]).ravel()
    y = np.broadcast_to(values, (rows, values.size)).ravel()
    counts = np.bincount(flat, minlength=rows * K)
    sums = np.bincount(flat, weights=y, minlength=rows * K)
    sumsq = np.bincount(flat, weights=y * y, minlength=rows * K)
    gm = sums / np.maximum(counts, 1)
    dev = y - gm[flat]
    ss = np.bincount(flat, weights=dev * dev, minlength=rows * K)
    shape = lead + (K,)
    return ComponentStats(counts.reshape(shape), sums.reshape(shape),
                          sumsq.reshape(shape), ss.reshape(shape))


def _weight_gamma_shapes(counts, alpha):
    shape = np.asarray(alpha)[..., None] + counts if np.ndim(alpha) else alpha + counts
    small = shape < SMALL_SHAPE
    return shape, small, np.where(small, shape + 1.0, shape)


def _log_gamma_variates(shape, small, g, u):
    """log of Gamma(shape) variates.  For small shapes, ``g`` ~ Gamma(shape+1)
    and the identity Gamma(s) = Gamma(s+1) * U**(1/s) is applied in logs."""
    with np.errstate(divide="ignore"):
        lg = np.log(g)
    return np.where(small, lg + np.log(u) / shape, lg)


def _normalize_log(lg):
    return lg - _logsumexp(lg)[..., None]


def _nig_posterior(stats, hyper):
    """Conjugate update; returns (shape, scale, mean, precision_scale).

    Empty components reduce to the prior.
    """
    n_k = stats.counts
    prec = hyper.tau + n_k
    ybar = stats.sums / np.maximum(n_k, 1)
    shape = hyper.a + 0.5 * n_k
    scale = (hyper.b + 0.5 * stats.centered_ss
             + hyper.tau * n_k * (ybar - hyper.l) ** 2 / (2.0 * prec))
    mean = (hyper.tau * hyper.l + stats.sums) / prec
    return shape, scale, mean, prec


def _params_from_draws(post, g, e):
    shape, scale, mean, prec = post
    variances = scale / g
    means = mean + np.sqrt(variances / prec) * e
    return means, variances


# ---------------------------------------------------------------------------
# public single-state operations

def _check_state(data, state):
    if not (np.all(np.isfinite(state.means)) and np.all(np.isfinite(state.variances))):
        raise InvalidInputError("means and variances must be finite")
    if np.any(state.variances <= 0):
        raise InvalidInputError("variances must be positive")
    if np.any(np.isnan(state.log_weights)) or np.any(np.isposinf(state.log_weights)):
        raise InvalidInputError("log-weights must not be NaN or +inf")


def component_stats(values, allocations, K):
    return _component_stats(np.asarray(values, dtype=np.float64),
                            np.asarray(allocations), int(K))


def mixture_log_likelihood(data, state):
    """Sum over observations of log sum_k w_k N(y_i | mu_k, var_k)."""
    _check_state(data, state)
    logits = _allocation_logits(data.values, state.log_weights, state.means,
                                state.variances)
    return float(np.sum(_logsumexp(logits)))


def allocation_probabilities(data, state):
    """n x K matrix of P(z_i = k | weights, params)."""
    _check_state(data, state)
    logits = _allocation_logits(data.values, state.log_weights, state.means,
                                state.variances)
    top = logits.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise NumericalError("all allocation probabilities underflowed")
    p = np.exp(logits - top)
    return p / p.sum(axis=-1, keepdims=True)


def sample_allocations(data, state, rng):
    _check_state(data, state)
    u = 1.0 - rng.random(data.n)
    return _draw_allocations(data.values, state.log_weights, state.means,
                             state.variances, u)


def sample_log_weights(counts, alpha, rng):
    """Log of a Dirichlet(alpha + counts) draw; finite even for tiny alpha."""
    counts = np.asarray(counts, dtype=np.float64)
    shape, small, gshape = _weight_gamma_shapes(counts, float(alpha))
    g = rng.standard_gamma(gshape)
    u = 1.0 - rng.random(counts.size)
    return _normalize_log(_log_gamma_variates(shape, small, g, u))


def sample_weights(stats, alpha, rng):
    counts = stats.counts if isinstance(stats, ComponentStats) else stats
    return floor_weights(np.exp(sample_log_weights(counts, alpha, rng)))


def sample_component_params(data, allocations, hyper, rng):
    """Draw (means, variances) from the Normal-Inverse-Gamma conditional."""
    stats = component_stats(data.values, allocations, hyper.K)
    post = _nig_posterior(stats, hyper)
    g = rng.standard_gamma(post[0])
    e = rng.standard_normal(hyper.K)
    return _params_from_draws(post, g, e)


def dirichlet_log_density(weights, alpha, K=None):
    """log Dir(weights | alpha, ..., alpha) after flooring the weights."""
    w = np.asarray(weights, dtype=np.float64)
    if K is None:
        K = w.shape[-1]
    if w.shape[-1] != K:
        raise InvalidInputError(f"expected {K} weights, got {w.shape[-1]}")
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise InvalidInputError("weights must be finite and non-negative")
    w = floor_weights(w)
    return (gammaln(K * alpha) - K * gammaln(alpha)
            + (alpha - 1.0) * np.sum(np.log(w), axis=-1))


def count_alive(stats):
    counts = stats.counts if isinstance(stats, ComponentStats) else np.asarray(stats)
    return int(np.count_nonzero(counts >= 1))


def log_posterior_batch(values, log_weights, means, variances, allocations, hyper):
    """Unnormalized log posterior for a stack of states (one per row).

    Prior terms are restricted to the alive components; the Dirichlet term
    uses the alive weights renormalized onto their own sub-simplex.
    Components are put into a canonical order first so the result is
    exactly invariant to relabeling.
    """
    log_weights = np.atleast_2d(log_weights)
    means = np.atleast_2d(means)
    variances = np.atleast_2d(variances)
    allocations = np.atleast_2d(allocations)
    K = log_weights.shape[-1]
    counts = _component_stats(values, allocations, K).counts

    order = np.lexsort((counts, log_weights, variances, means), axis=-1)
    take = lambda a: np.take_along_axis(a, order, axis=-1)
    lw, mu, var, cnt = take(log_weights), take(means), take(variances), take(counts)
    alive = cnt > 0

    ll = np.sum(_logsumexp(_allocation_logits(values, lw, mu, var)), axis=-1)
    prior = (_normal_logpdf(mu, hyper.l, var / hyper.tau)
             + _invgamma_logpdf(var, hyper.a, hyper.b))
    prior = np.sum(np.where(alive, prior, 0.0), axis=-1)

    k0 = alive.sum(axis=-1)
    lw_alive = np.where(alive, lw, -np.inf)
    lw_alive = lw_alive - _logsumexp(lw_alive)[:, None]
    alpha = hyper.alpha
    dirichlet = (gammaln(k0 * alpha) - k0 * gammaln(alpha)
                 + (alpha - 1.0) * np.sum(np.where(alive, lw_alive, 0.0), axis=-1))
    return ll + prior + dirichlet


def log_unnormalized_posterior(data, state, hyper):
    _check_state(data, state)
    return float(log_posterior_batch(data.values, state.log_weights, state.means,
                                     state.variances, state.allocations, hyper)[0])


# ---------------------------------------------------------------------------
# sweeps

def _draw_parameters(values, z, K, alpha, hyper, u_w, gamma, normal):
    """Weights and component parameters given allocations ``z``.

    ``gamma(shapes)`` and ``normal()`` supply the random variates so the same
    code serves single chains and the batched sampler.
    """
    stats = _component_stats(values, z, K)
    shape, small, gshape = _weight_gamma_shapes(stats.counts, alpha)
    post = _nig_posterior(stats, hyper)
    g = gamma(np.concatenate([gshape, post[0]], axis=-1))
    log_w = _normalize_log(_log_gamma_variates(shape, small, g[..., :K], u_w))
    means, variances = _params_from_draws(post, g[..., K:], normal())
    return log_w, means, variances, stats


def initial_state(data, hyper, rng):
    """Uniform random allocations followed by one parameter draw."""
    K = hyper.K
    z = rng.integers(K, size=data.n)
    u_w = 1.0 - rng.random(K)
    log_w, means, variances, stats = _draw_parameters(
        data.values, z, K, hyper.alpha, hyper, u_w,
        rng.standard_gamma, lambda: rng.standard_normal(K))
    return ChainState(log_w, means, variances, z, stats)


def gibbs_sweep(data, state, hyper, rng):
    """One full Gibbs sweep at concentration ``hyper.alpha``.

    Per sweep the chain's generator is consumed as: ``n + K`` uniforms,
    ``2K`` Gamma variates, ``K`` standard normals.
    """
    K = hyper.K
    u = 1.0 - rng.random(data.n + K)
    _check_state(data, state)
    z = _draw_allocations(data.values, state.log_weights, state.means,
                          state.variances, u[:data.n])
    log_w, means, variances, stats = _draw_parameters(
        data.values, z, K, hyper.alpha, hyper, u[data.n:],
        rng.standard_gamma, lambda: rng.standard_normal(K))
    return ChainState(log_w, means, variances, z, stats)


def with_alpha(hyper, alpha):
    return replace(hyper, alpha=float(alpha))
