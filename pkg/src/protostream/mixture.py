"""Online diagonal Gaussian mixture estimation for streaming prototype learning.

The mixture is updated one mini-batch at a time: an annealed E-step produces
soft assignments, per-batch sufficient statistics are blended into persistent
accumulators with a responsibility-weighted forgetting factor, and an M-step
recovers weights, means, and diagonal variances.  The means double as the
prototype set.  Two regularizers keep long runs healthy: ``split_resurrect``
halves the mass of an over-weighted component into a reinitialized lightest
one, and ``rescale_dominant_mean`` shrinks the norm of dominant means.

All operations are pure: they return new state and never mutate their inputs.
Arrays are float64 throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

logger = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))

# fixed label so the split-resurrect stream is decoupled from init draws
_SPLIT_STREAM = 7


class DegenerateComponentError(RuntimeError):
    """Raised when a component's count statistic is non-positive in the M-step."""


class StateError(RuntimeError):
    """Raised when an operation is applied to a state in the wrong phase."""


@dataclass(frozen=True)
class LinearSchedule:
    """Linear ramp from ``start`` to ``end`` over ``total_steps`` updates."""

    start: float
    end: float
    total_steps: int

    def at(self, step: int) -> float:
        if self.total_steps <= 0:
            return self.end
        frac = min(max(step, 0), self.total_steps) / self.total_steps
        return self.start + (self.end - self.start) * frac


@dataclass
class GmmConfig:
    """Hyperparameters and feature toggles for the streaming mixture.

    ``beta`` is the constant annealing exponent used when ``annealing`` is
    off; with ``annealing`` on, beta ramps linearly ``anneal_start -> 1.0``
    over ``total_steps``.  The forgetting factor ramps ``eta_start ->
    eta_end`` over the same horizon and is evaluated once per update.
    """

    total_steps: int = 1000
    beta: float = 1.0
    anneal_start: float = 0.5
    eta_start: float = 0.1
    eta_end: float = 0.5
    variance_floor: float = 1e-6
    resurrect_threshold: float = 0.3
    responsibility_forgetting: bool = True
    annealing: bool = True
    resurrect: bool = True
    rescaling: bool = True
    rng_seed: int = 0
    # unit variances blur all structure when the data lives on a much smaller
    # scale (e.g. 1/D per coordinate for unit-norm vectors), which starves all
    # but a couple of components; match this to the data scale in that case
    init_variance: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        for name in ("eta_start", "eta_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.resurrect_threshold <= 1.0:
            raise ValueError(
                f"resurrect_threshold must lie in (0, 1], got {self.resurrect_threshold}"
            )
        if self.variance_floor <= 0.0:
            raise ValueError("variance_floor must be positive")
        if self.init_variance <= 0.0:
            raise ValueError("init_variance must be positive")

    def beta_at(self, step: int) -> float:
        if self.annealing:
            return LinearSchedule(self.anneal_start, 1.0, self.total_steps).at(step)
        return self.beta

    def eta_at(self, step: int) -> float:
        return LinearSchedule(self.eta_start, self.eta_end, self.total_steps).at(step)


@dataclass
class SufficientStats:
    """Persistent per-component accumulators: counts, first and second moments."""

    s_pi: np.ndarray  # (K,)
    s_mu: np.ndarray  # (K, D)
    s_sigma: np.ndarray  # (K, D), diagonal of the second-moment matrix

    @property
    def k(self) -> int:
        return self.s_pi.shape[0]

    def copy(self) -> "SufficientStats":
        return SufficientStats(self.s_pi.copy(), self.s_mu.copy(), self.s_sigma.copy())


@dataclass
class MixtureState:
    """Mixture weights, means (the prototypes), diagonal variances, and stats."""

    weights: np.ndarray  # (K,), on the probability simplex
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D), elementwise >= variance floor
    suffstats: SufficientStats | None
    step: int

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def copy(self) -> "MixtureState":
        return MixtureState(
            self.weights.copy(),
            self.means.copy(),
            self.variances.copy(),
            None if self.suffstats is None else self.suffstats.copy(),
            self.step,
        )


@dataclass(frozen=True)
class SplitEvent:
    """Record of one split-resurrect action (or the K=1 no-op warning)."""

    kind: str  # "split" or "skipped"
    dominant: int = -1
    resurrected: int = -1
    old_weight: float = 0.0


def spread_unit_vectors(k: int, d: int, rng: np.random.Generator,
                        iters: int = 400, sharpness: float = 12.0,
                        step: float = 0.35) -> np.ndarray:
    """Deterministically spread k unit vectors in R^d by pairwise repulsion.

    Starts from seeded random directions and repeatedly pushes each vector
    away from a softmax-weighted average of its nearest neighbours.  Useful
    when k times d is small enough that plain random directions are not
    well separated.
    """
    if k < 1 or d < 1:
        raise ValueError("k and d must be positive")
    v = rng.standard_normal((k, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    if k == 1:
        return v
    for _ in range(iters):
        g = v @ v.T
        np.fill_diagonal(g, -np.inf)
        w = np.exp(sharpness * (g - g.max(axis=1, keepdims=True)))
        push = (w / w.sum(axis=1, keepdims=True)) @ v
        v = v - step * push
        v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def init_mixture(k: int, d: int, init_points: np.ndarray | None = None,
                 config: GmmConfig | None = None,
                 rng: np.random.Generator | None = None) -> MixtureState:
    """Build a fresh mixture with uniform weights and unit variances.

    Means are drawn from ``init_points`` without replacement when provided,
    otherwise i.i.d. normal entries scaled by 1/sqrt(d) so the expected norm
    is 1 regardless of dimension.
    """
    if k < 1 or d < 1:
        raise ValueError(f"k and d must be positive, got k={k}, d={d}")
    if rng is None:
        seed = 0 if config is None else config.rng_seed
        rng = np.random.default_rng(seed)
    if init_points is not None:
        pts = np.asarray(init_points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != d:
            raise ValueError(f"init_points must be (n, {d}), got {pts.shape}")
        if pts.shape[0] < k:
            raise ValueError(
                f"need at least {k} init points, got {pts.shape[0]}"
            )
        idx = rng.choice(pts.shape[0], size=k, replace=False)
        means = pts[idx].copy()
    else:
        means = rng.standard_normal((k, d)) / np.sqrt(d)
    weights = np.full(k, 1.0 / k)
    init_var = 1.0 if config is None else config.init_variance
    variances = np.full((k, d), init_var)
    return MixtureState(weights, means, variances, None, 0)


def _log_densities(state: MixtureState, batch: np.ndarray) -> np.ndarray:
    """Per-sample, per-component diagonal-Gaussian log densities, shape (N, K)."""
    inv_var = 1.0 / state.variances  # (K, D)
    log_norm = -0.5 * (state.d * _LOG_2PI + np.sum(np.log(state.variances), axis=1))
    quad = (
        (batch * batch) @ inv_var.T
        - 2.0 * batch @ (state.means * inv_var).T
        + np.sum(state.means * state.means * inv_var, axis=1)
    )
    return log_norm - 0.5 * quad


def e_step(state: MixtureState, batch: np.ndarray, beta: float) -> np.ndarray:
    """Annealed responsibilities, one simplex row per sample.

    Row i is proportional to weight_k * density_ik**beta, evaluated in log
    space with per-row max subtraction so no row can underflow to all zeros.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != state.d:
        raise ValueError(
            f"batch must be (n, {state.d}), got {batch.shape}"
        )
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    with np.errstate(divide="ignore"):
        scores = np.log(state.weights) + beta * _log_densities(state, batch)
    scores -= scores.max(axis=1, keepdims=True)
    resp = np.exp(scores)
    resp /= resp.sum(axis=1, keepdims=True)
    return resp


def log_likelihood(state: MixtureState, batch: np.ndarray) -> float:
    """Mean per-sample log-likelihood of the batch under the mixture."""
    batch = np.asarray(batch, dtype=np.float64)
    with np.errstate(divide="ignore"):
        scores = np.log(state.weights) + _log_densities(state, batch)
    m = scores.max(axis=1, keepdims=True)
    return float(np.mean(m[:, 0] + np.log(np.sum(np.exp(scores - m), axis=1))))


def batch_suffstats(batch: np.ndarray, resp: np.ndarray) -> SufficientStats:
    """Responsibility-weighted zeroth/first/second moments of one batch."""
    batch = np.asarray(batch, dtype=np.float64)
    resp = np.asarray(resp, dtype=np.float64)
    if batch.ndim != 2 or resp.ndim != 2 or batch.shape[0] != resp.shape[0]:
        raise ValueError(
            f"shape mismatch: batch {batch.shape} vs responsibilities {resp.shape}"
        )
    s_pi = resp.sum(axis=0)
    s_mu = resp.T @ batch
    s_sigma = resp.T @ (batch * batch)
    return SufficientStats(s_pi, s_mu, s_sigma)


def forget_and_merge(state: MixtureState, fresh: SufficientStats,
                     resp: np.ndarray, eta: float,
                     use_resp_forgetting: bool = True) -> SufficientStats:
    """Blend fresh statistics into the persistent ones with decay eta**gamma_k.

    gamma_k is the mean responsibility of component k over the batch, so
    rarely used components decay slowly; a component with exactly zero batch
    responsibility keeps bitwise-identical statistics.  With
    ``use_resp_forgetting`` off the exponent is 1 (plain eta).
    """
    if state.step < 1 or state.suffstats is None:
        raise StateError("first update must use initialize_suffstats")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    old = state.suffstats
    if use_resp_forgetting:
        gamma_hat = np.asarray(resp, dtype=np.float64).mean(axis=0)
        decay = np.power(eta, gamma_hat)
    else:
        gamma_hat = None
        decay = np.full(old.k, float(eta))
    keep = decay
    take = 1.0 - decay
    s_pi = keep * old.s_pi + take * fresh.s_pi
    s_mu = keep[:, None] * old.s_mu + take[:, None] * fresh.s_mu
    s_sigma = keep[:, None] * old.s_sigma + take[:, None] * fresh.s_sigma
    if gamma_hat is not None:
        untouched = gamma_hat == 0.0
        if untouched.any():
            s_pi[untouched] = old.s_pi[untouched]
            s_mu[untouched] = old.s_mu[untouched]
            s_sigma[untouched] = old.s_sigma[untouched]
    return SufficientStats(s_pi, s_mu, s_sigma)


def initialize_suffstats(state: MixtureState, fresh: SufficientStats,
                         views: int, batch_size: int) -> SufficientStats:
    """First-update statistics: the initial parameters as pseudo-counts.

    Every component is credited views*batch_size/K virtual observations whose
    moments reproduce the initial means and variances, so the first M-step
    leaves the parameters where they started and real data takes over through
    the moving average from the second update on.
    """
    if state.step != 0:
        raise StateError(f"suffstats already initialized (step={state.step})")
    if fresh.k != state.k or fresh.s_mu.shape != state.means.shape:
        raise ValueError("fresh statistics do not match the state's shape")
    count = views * batch_size / state.k
    s_pi = np.full(state.k, count)
    s_mu = state.means * count
    # diagonal of: variances * count + outer(s_mu, s_mu) / count
    s_sigma = state.variances * count + (s_mu * s_mu) / count
    return SufficientStats(s_pi, s_mu, s_sigma)


def m_step(suffstats: SufficientStats, variance_floor: float
           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Maximum-likelihood weights, means, and floored diagonal variances."""
    s_pi = suffstats.s_pi
    if np.any(s_pi <= 0.0):
        bad = int(np.argmax(s_pi <= 0.0))
        raise DegenerateComponentError(
            f"component {bad} has non-positive count {s_pi[bad]}"
        )
    weights = s_pi / s_pi.sum()
    means = suffstats.s_mu / s_pi[:, None]
    variances = suffstats.s_sigma / s_pi[:, None] - means * means
    variances = np.maximum(variances, variance_floor)
    return weights, means, variances


def split_resurrect(state: MixtureState, threshold: float,
                    rng: np.random.Generator
                    ) -> tuple[MixtureState, list[SplitEvent]]:
    """Halve each over-threshold component's mass into a reborn lightest one.

    Components exceeding the weight threshold at entry are processed in
    descending weight order, one resurrect each: the currently lightest other
    component gets a fresh random mean (norm matched to the average mean norm),
    unit variances, and half of the dominant's old mass; the dominant keeps
    the other half.  Weights are renormalized once at the end.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    events: list[SplitEvent] = []
    weights = state.weights.copy()
    dominant = [int(i) for i in np.argsort(-weights, kind="stable")
                if weights[i] > threshold]
    if not dominant:
        return state, events
    if state.k == 1:
        logger.warning("split_resurrect: single component, nothing to resurrect")
        return state, [SplitEvent(kind="skipped", dominant=0,
                                  old_weight=float(weights[0]))]
    means = state.means.copy()
    variances = state.variances.copy()
    for k in dominant:
        masked = weights.copy()
        masked[k] = np.inf
        j = int(np.argmin(masked))
        old_weight = float(weights[k])
        target_norm = float(np.linalg.norm(means, axis=1).mean())
        direction = rng.standard_normal(state.d)
        direction /= np.linalg.norm(direction)
        means[j] = direction * target_norm
        variances[j] = 1.0
        weights[k] = weights[j] = old_weight / 2.0
        events.append(SplitEvent(kind="split", dominant=k, resurrected=j,
                                 old_weight=old_weight))
    weights /= weights.sum()
    new_state = MixtureState(weights, means, variances, state.suffstats, state.step)
    return new_state, events


def rescale_dominant_mean(mean: np.ndarray, weight: float,
                          threshold: float) -> np.ndarray:
    """Shrink a dominant mean to norm sqrt(norm); identity below the threshold."""
    mean = np.asarray(mean, dtype=np.float64)
    if weight <= threshold:
        return mean
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        logger.warning("rescale_dominant_mean: zero-norm mean left unchanged")
        return mean
    return mean / np.sqrt(norm)


def gmm_update(state: MixtureState, batch: np.ndarray, config: GmmConfig,
               beta: float | None = None, eta: float | None = None
               ) -> MixtureState:
    """One full streaming update: E-step, statistics blend, M-step, regularizers.

    ``beta`` and ``eta`` default to the config schedules evaluated at the
    current step.  The split-resurrect draw is seeded from (config seed,
    step), so trajectories are bitwise reproducible.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] < 1:
        raise ValueError(f"batch must be a non-empty 2-d array, got {batch.shape}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("batch contains non-finite entries")
    if beta is None:
        beta = config.beta_at(state.step)
    if eta is None:
        eta = config.eta_at(state.step)
    resp = e_step(state, batch, beta)
    fresh = batch_suffstats(batch, resp)
    if state.step == 0:
        stats = initialize_suffstats(state, fresh, 1, batch.shape[0])
    else:
        stats = forget_and_merge(state, fresh, resp, eta,
                                 config.responsibility_forgetting)
    weights, means, variances = m_step(stats, config.variance_floor)
    new_state = MixtureState(weights, means, variances, stats, state.step + 1)
    if config.resurrect:
        rng = np.random.default_rng([config.rng_seed, _SPLIT_STREAM, state.step])
        new_state, events = split_resurrect(new_state, config.resurrect_threshold, rng)
        for ev in events:
            if ev.kind == "split":
                logger.info(
                    "split step %d: component %d (weight %.4f) -> resurrect %d",
                    new_state.step, ev.dominant, ev.old_weight, ev.resurrected,
                )
    if config.rescaling:
        hot = np.flatnonzero(new_state.weights > config.resurrect_threshold)
        if hot.size:
            means = new_state.means.copy()
            for k in hot:
                means[k] = rescale_dominant_mean(
                    means[k], float(new_state.weights[k]), config.resurrect_threshold
                )
            new_state = replace(new_state, means=means)
    return new_state
