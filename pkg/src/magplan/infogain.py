"""Particle-based entropy estimation and expected entropy reduction.

Belief entropy is estimated directly from the weighted particle set, using
the pairwise transition densities between consecutive particle clouds and
the measurement likelihoods of the incorporated reading. Expected entropy
reduction (EER) scores a candidate action by propagating a small hypothesis
set noise-free through the motion model, predicting one representative
measurement per hypothesis from the map, and averaging the resulting
posterior entropies against the no-measurement baseline at the same
horizon. All sums run in log space; entropies are reported in bits.

Estimator conventions (the hard cases, pinned down by the oracle tests):

* Posterior entropy with measurement z over clouds prev -> cur, where cur
  holds the predicted particles reweighted by z:

      H = log(sum_i L_i w_prev_i)
          - sum_i w_cur_i * [log L_i + log(sum_j T_ij w_prev_j)]

  with L_i the likelihood of z at cur particle i and T_ij the transition
  density from prev particle j to cur particle i under the executed
  control. The posterior weights w_cur carry the outer expectation.

* Without a measurement the first term and the likelihood factors drop:

      H = - sum_i w_cur_i * log(sum_j T_ij w_prev_j),   w_cur = w_prev.

* EER(a) = H_base - sum_j pbar_j H_j, where H_base is the no-measurement
  entropy at the rollout's terminal step, H_j the posterior entropy there
  given predicted measurement z_j, and pbar_j the normalized likelihoods
  p(z_j | hypothesis j). Both entropies run over the same M hypotheses, so
  an uninformative map cancels the two terms identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .magmap import MagMap, sample_points
from .models import (
    OUT_OF_MAP_PENALTY,
    ControlInput,
    DegenerateDensityError,
    ModelSet,
    measurement_log_likelihood_array,
    motion_mean_array,
    transition_log_density_matrix,
)
from .pflocal import ParticleBelief

LN2 = math.log(2.0)


class InfoGainError(Exception):
    """Base error for entropy estimation and series analysis."""


class EntropyError(InfoGainError):
    """An entropy estimate could not be formed (degenerate inputs or -inf mass)."""


@dataclass(frozen=True)
class EntropyEstimate:
    """A finite entropy value in bits; non-finite estimates raise instead."""

    bits: float
    n_particles: int
    with_measurement: bool

    def __post_init__(self) -> None:
        if not math.isfinite(self.bits):
            raise EntropyError(f"entropy estimate is not finite: {self.bits}")


@dataclass(frozen=True)
class EerValue:
    bits: float
    action: ControlInput

    def __post_init__(self) -> None:
        if not math.isfinite(self.bits):
            raise EntropyError(f"EER is not finite: {self.bits}")


@dataclass(frozen=True)
class EerHypothesisSet:
    """A candidate action's rollout: M hypotheses at the last two horizon steps.

    `states_prev` holds the hypotheses one step before the terminal step,
    `states` the terminal ones; the transition densities between the two
    feed the entropy estimates. `predicted_z` is the map value at each
    terminal hypothesis (clamped to the extent when a rollout exits).
    """

    m_count: int
    horizon_steps: int
    action: ControlInput
    states_prev: np.ndarray
    states: np.ndarray
    weights: np.ndarray
    predicted_z: np.ndarray

    def __post_init__(self) -> None:
        if self.m_count < 2:
            raise InfoGainError(f"need at least 2 hypotheses, got {self.m_count}")
        if self.horizon_steps < 1:
            raise InfoGainError(f"horizon must be >= 1, got {self.horizon_steps}")
        for name in ("states_prev", "states"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.m_count, 3):
                raise InfoGainError(f"{name} must be ({self.m_count}, 3), got {arr.shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("weights", "predicted_z"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (self.m_count,):
                raise InfoGainError(f"{name} must be ({self.m_count},), got {arr.shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise InfoGainError("hypothesis weights must sum to 1")


def _safe_log(w: np.ndarray) -> np.ndarray:
    out = np.full(w.shape, -np.inf)
    np.log(w, out=out, where=w > 0)
    return out


def _log_predicted_density(
    cur_states: np.ndarray,
    prev_states: np.ndarray,
    w_prev: np.ndarray,
    u: ControlInput,
    models: ModelSet,
) -> np.ndarray:
    """log of sum_j T_ij w_prev_j for every cur particle i."""
    log_t = transition_log_density_matrix(
        cur_states, prev_states, u, models.dt, models.motion
    )
    return logsumexp(log_t + _safe_log(w_prev)[None, :], axis=1)


def _expectation(weights: np.ndarray, log_terms: np.ndarray, what: str) -> float:
    # 0 * (-inf) is a legitimate 0 contribution; positive weight on -inf is not.
    terms = np.where(weights > 0, weights * log_terms, 0.0)
    if not np.all(np.isfinite(terms)):
        raise EntropyError(f"{what}: positive-weight particle with zero density")
    return float(terms.sum())


def _posterior_entropy_nats(
    log_lik: np.ndarray,
    log_pred: np.ndarray,
    w_prev: np.ndarray,
    w_post: np.ndarray,
) -> float:
    log_evidence = float(logsumexp(log_lik + _safe_log(w_prev)))
    if not math.isfinite(log_evidence):
        raise EntropyError("measurement has zero mass under the predicted belief")
    return log_evidence - _expectation(w_post, log_lik + log_pred, "posterior entropy")


def entropy_posterior(
    prev: ParticleBelief,
    cur: ParticleBelief,
    z: float,
    u: ControlInput,
    grid: MagMap,
    models: ModelSet,
) -> EntropyEstimate:
    """Entropy of the belief after incorporating measurement z.

    `prev` is the belief before the motion step, `cur` the belief after
    predict + update under control u; both must hold the same N.
    """
    if prev.n != cur.n:
        raise EntropyError(f"particle counts differ: {prev.n} vs {cur.n}")
    log_lik = measurement_log_likelihood_array(z, cur.particles, grid, models.sensor)
    log_pred = _log_predicted_density(
        cur.particles, prev.particles, prev.weights, u, models
    )
    nats = _posterior_entropy_nats(log_lik, log_pred, prev.weights, cur.weights)
    return EntropyEstimate(nats / LN2, cur.n, with_measurement=True)


def entropy_predicted(
    prev: ParticleBelief,
    cur: ParticleBelief,
    u: ControlInput,
    models: ModelSet,
) -> EntropyEstimate:
    """Entropy of the motion-predicted belief, no measurement incorporated."""
    if prev.n != cur.n:
        raise EntropyError(f"particle counts differ: {prev.n} vs {cur.n}")
    log_pred = _log_predicted_density(
        cur.particles, prev.particles, prev.weights, u, models
    )
    nats = -_expectation(cur.weights, log_pred, "predicted entropy")
    return EntropyEstimate(nats / LN2, cur.n, with_measurement=False)


def build_hypotheses(
    b: ParticleBelief,
    a: ControlInput,
    grid: MagMap,
    models: ModelSet,
    m_count: int,
    horizon_steps: int,
    rng: np.random.Generator,
) -> EerHypothesisSet:
    """Subsample M hypotheses proportional to weight and roll them out.

    The rollout holds the action constant and uses the noise-free motion
    mean; each terminal hypothesis predicts the measurement it would see by
    querying the map there (clamped to the extent if it left the map).
    """
    if m_count > b.n:
        raise InfoGainError(f"m_count {m_count} exceeds particle count {b.n}")
    if m_count < 2:
        raise InfoGainError(f"need at least 2 hypotheses, got {m_count}")
    if horizon_steps < 1:
        raise InfoGainError(f"horizon must be >= 1, got {horizon_steps}")
    idx = rng.choice(b.n, size=m_count, replace=True, p=b.weights)
    states = b.particles[idx]
    for _ in range(horizon_steps - 1):
        states = motion_mean_array(states, a, models.dt)
    states_prev = states
    states = motion_mean_array(states_prev, a, models.dt)
    predicted_z = sample_points(grid, grid.clamp(states[:, :2]))
    return EerHypothesisSet(
        m_count=m_count,
        horizon_steps=horizon_steps,
        action=a,
        states_prev=states_prev,
        states=states,
        weights=np.full(m_count, 1.0 / m_count),
        predicted_z=predicted_z,
    )


def future_entropy(
    hyp: EerHypothesisSet, z_future: float, grid: MagMap, models: ModelSet
) -> EntropyEstimate:
    """Posterior entropy at the rollout's terminal step, given z_future."""
    log_lik = measurement_log_likelihood_array(
        z_future, hyp.states, grid, models.sensor
    )
    log_pred = _log_predicted_density(
        hyp.states, hyp.states_prev, hyp.weights, hyp.action, models
    )
    log_post = log_lik + _safe_log(hyp.weights)
    log_post -= logsumexp(log_post)
    nats = _posterior_entropy_nats(log_lik, log_pred, hyp.weights, np.exp(log_post))
    return EntropyEstimate(nats / LN2, hyp.m_count, with_measurement=True)


def predicted_entropy_at_horizon(hyp: EerHypothesisSet, models: ModelSet) -> EntropyEstimate:
    """No-measurement entropy at the rollout's terminal step (the EER baseline)."""
    log_pred = _log_predicted_density(
        hyp.states, hyp.states_prev, hyp.weights, hyp.action, models
    )
    nats = -_expectation(hyp.weights, log_pred, "horizon baseline entropy")
    return EntropyEstimate(nats / LN2, hyp.m_count, with_measurement=False)


def eer(
    b: ParticleBelief,
    a: ControlInput,
    grid: MagMap,
    models: ModelSet,
    m_count: int,
    horizon_steps: int,
    rng: np.random.Generator,
) -> EerValue:
    """Expected entropy reduction of taking action a, in bits.

    The expectation runs over one representative future measurement per
    hypothesis, weighted by the normalized likelihoods p(z_j | hypothesis j).
    Baseline and future entropies are both evaluated at the terminal horizon
    step over the same hypothesis set, so a map with no gradient yields
    exactly zero for every action.
    """
    hyp = build_hypotheses(b, a, grid, models, m_count, horizon_steps, rng)
    log_w = _safe_log(hyp.weights)
    log_pred = _log_predicted_density(
        hyp.states, hyp.states_prev, hyp.weights, hyp.action, models
    )
    h_base = -_expectation(hyp.weights, log_pred, "horizon baseline entropy")

    # (i, j) = log p(z_j | hypothesis i). Because z_j is the map value at
    # hypothesis j, the whole matrix follows from the predicted values; the
    # arithmetic mirrors measurement_log_likelihood_array term for term so
    # the two paths agree bit for bit.
    sigma = models.sensor.sigma_z
    if sigma == 0:
        raise DegenerateDensityError("future entropy undefined at sigma_z = 0")
    inside = grid.contains(hyp.states[:, :2])
    resid = (hyp.predicted_z[None, :] - hyp.predicted_z[:, None]) / sigma
    log_pdf = -0.5 * resid**2 - math.log(sigma) - 0.5 * math.log(2.0 * math.pi)
    log_lik = np.where(
        inside[:, None], log_pdf, log_pdf + math.log(OUT_OF_MAP_PENALTY)
    )

    log_evidence = logsumexp(log_lik + log_w[:, None], axis=0)
    if not np.all(np.isfinite(log_evidence)):
        raise EntropyError("a predicted measurement has zero mass under the rollout")
    w_post = np.exp(log_lik + log_w[:, None] - log_evidence[None, :])
    inner = log_lik + log_pred[:, None]
    terms = np.where(w_post > 0, w_post * inner, 0.0)
    if not np.all(np.isfinite(terms)):
        raise EntropyError("future entropy: positive-weight hypothesis with zero density")
    h_future = log_evidence - terms.sum(axis=0)

    # p(z_j | x_j) sits on the likelihood matrix diagonal; normalize across j
    # so the future-entropy average is a proper expectation.
    log_pz = np.diagonal(log_lik)
    pbar = np.exp(log_pz - logsumexp(log_pz))
    nats = h_base - float(pbar @ h_future)
    return EerValue(nats / LN2, a)


def iqr_reject(series) -> np.ndarray:
    """Replace fence-breaking values with the last kept value.

    Fences are Q1 - 1.5*IQR and Q3 + 1.5*IQR over the whole input, with
    linearly interpolated quartiles. The first element is always kept and
    seeds the replacement chain.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 1:
        raise InfoGainError(f"expected a 1D series, got shape {arr.shape}")
    if arr.shape[0] < 4:
        raise InfoGainError(f"need at least 4 values, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InfoGainError("series values must be finite")
    q1, q3 = np.percentile(arr, [25.0, 75.0])
    spread = 1.5 * (q3 - q1)
    lo, hi = q1 - spread, q3 + spread
    out = arr.copy()
    for i in range(1, out.shape[0]):
        if not (lo <= arr[i] <= hi):
            out[i] = out[i - 1]
    return out
