"""Discrete-distribution numerics and the precision-weighted belief update.

Both control layers integrate a top-down prediction with bottom-up evidence
through the same linear-dynamic update: the posterior is a convex combination
of the two, weighted by a gain computed from the prediction's free energy and
the precision (log inverse variance) of the prediction error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

SUM_TOLERANCE = 1e-9
SMOOTHING_EPS = 1e-6
VARIANCE_FLOOR = 1e-8
PRECISION_CEILING = math.log(1.0 / VARIANCE_FLOOR)


class BeliefError(ValueError):
    """Base class for distribution and update errors."""


class InvalidDistribution(BeliefError):
    pass


class DomainMismatch(BeliefError):
    pass


class AbsoluteContinuityViolation(BeliefError):
    """q assigns zero mass where p is positive; smooth q first."""


class LengthTooSmall(BeliefError):
    pass


class GainOutOfRange(BeliefError):
    pass


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability vector over a finite ordered domain of unique labels."""

    domain: tuple[Hashable, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "domain", tuple(self.domain))
        object.__setattr__(self, "probs", probs)
        if len(self.domain) != probs.shape[0] or probs.ndim != 1:
            raise InvalidDistribution("domain and probs must have the same length")
        if len(set(self.domain)) != len(self.domain):
            raise InvalidDistribution("domain labels must be unique")
        if np.any(probs < 0.0):
            raise InvalidDistribution("probabilities must be nonnegative")
        if abs(float(probs.sum()) - 1.0) > SUM_TOLERANCE:
            raise InvalidDistribution(f"probabilities sum to {probs.sum()!r}, not 1")
        probs.setflags(write=False)

    def __len__(self) -> int:
        return len(self.domain)

    def prob_of(self, label: Hashable) -> float:
        return float(self.probs[self.domain.index(label)])

    @classmethod
    def uniform(cls, domain: Sequence[Hashable]) -> "DiscreteDistribution":
        n = len(domain)
        return cls(tuple(domain), np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, domain: Sequence[Hashable], label: Hashable) -> "DiscreteDistribution":
        probs = np.zeros(len(domain))
        probs[list(domain).index(label)] = 1.0
        return cls(tuple(domain), probs)

    @classmethod
    def from_weights(cls, domain: Sequence[Hashable], weights: Sequence[float]) -> "DiscreteDistribution":
        """Normalize nonnegative weights into a distribution."""
        w = np.asarray(weights, dtype=float)
        total = float(w.sum())
        if total <= 0.0 or not np.isfinite(total):
            raise InvalidDistribution("weights must have positive finite total mass")
        return cls(tuple(domain), w / total)


def entropy(p: DiscreteDistribution) -> float:
    """Shannon entropy in nats, with 0*ln(0) taken as 0."""
    probs = p.probs
    nz = probs[probs > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def kl_divergence(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """KL divergence of p from q; requires q > 0 wherever p > 0."""
    if p.domain != q.domain:
        raise DomainMismatch("distributions are over different domains")
    mask = p.probs > 0.0
    if np.any(q.probs[mask] == 0.0):
        raise AbsoluteContinuityViolation("q has zero mass where p is positive")
    value = float(np.sum(p.probs[mask] * np.log(p.probs[mask] / q.probs[mask])))
    return max(value, 0.0)


def smoothed(p: DiscreteDistribution, eps: float = SMOOTHING_EPS) -> DiscreteDistribution:
    """Mix with the uniform distribution at weight eps and renormalize.

    Evidence distributions must be smoothed before they appear on the right
    side of a KL term, otherwise a single zero makes the free energy infinite.
    """
    n = len(p)
    mixed = (1.0 - eps) * p.probs + eps / n
    return DiscreteDistribution(p.domain, mixed / mixed.sum())


def precision_of_error(pred_error: Sequence[float]) -> float:
    """Log inverse population variance of a prediction-error vector.

    The variance is floored at 1e-8 and the result clamped to
    [0, ln(1e8)] so the downstream gain stays a convex weight.
    """
    err = np.asarray(pred_error, dtype=float)
    if err.shape[0] < 2:
        raise LengthTooSmall("prediction error needs at least 2 components")
    variance = max(float(np.var(err)), VARIANCE_FLOOR)
    return min(max(math.log(1.0 / variance), 0.0), PRECISION_CEILING)


def free_energy(pred: DiscreteDistribution, evidence: DiscreteDistribution) -> float:
    """Entropy of the prediction plus its KL divergence from the evidence."""
    return entropy(pred) + kl_divergence(pred, evidence)


def kalman_gain(free_energy_value: float, precision: float) -> float:
    """F / (F + pi); 0.5 when both are zero (maximal uncertainty)."""
    if free_energy_value < 0.0 or precision < 0.0:
        raise BeliefError("free energy and precision must be nonnegative")
    if free_energy_value == 0.0 and precision == 0.0:
        return 0.5
    return free_energy_value / (free_energy_value + precision)


def belief_update(
    top_down: DiscreteDistribution,
    bottom_up: DiscreteDistribution,
    gain: float,
) -> DiscreteDistribution:
    """Convex combination (1-K)*top_down + K*bottom_up."""
    if top_down.domain != bottom_up.domain:
        raise DomainMismatch("distributions are over different domains")
    if not 0.0 <= gain <= 1.0:
        raise GainOutOfRange(f"gain {gain!r} outside [0, 1]")
    if gain == 0.0:
        return top_down
    if gain == 1.0:
        return bottom_up
    return DiscreteDistribution(
        top_down.domain,
        top_down.probs + gain * (bottom_up.probs - top_down.probs),
    )


def argmax_state(p: DiscreteDistribution) -> Hashable:
    """Label with the highest probability; ties go to the lowest index."""
    return p.domain[int(np.argmax(p.probs))]


def bayes_combine(prior: DiscreteDistribution, likelihood: DiscreteDistribution) -> DiscreteDistribution:
    """Pointwise product of prior and likelihood, renormalized."""
    if prior.domain != likelihood.domain:
        raise DomainMismatch("distributions are over different domains")
    return DiscreteDistribution.from_weights(prior.domain, prior.probs * likelihood.probs)


@dataclass(frozen=True)
class LayerBelief:
    """One layer's belief state after integrating both directions."""

    prior: DiscreteDistribution
    top_down: DiscreteDistribution
    bottom_up: DiscreteDistribution
    posterior: DiscreteDistribution
    free_energy: float
    precision: float
    gain: float

    def __post_init__(self):
        if not 0.0 <= self.gain <= 1.0:
            raise GainOutOfRange(f"gain {self.gain!r} outside [0, 1]")
        if self.free_energy < 0.0:
            raise BeliefError("free energy must be nonnegative")


def update_layer(
    prior: DiscreteDistribution,
    top_down_likelihood: DiscreteDistribution,
    bottom_up_likelihood: DiscreteDistribution,
    fixed_gain: float | None = None,
) -> LayerBelief:
    """Full precision-weighted update for one layer.

    Combines each likelihood with the empirical prior, derives free energy
    and precision from the resulting top-down/bottom-up pair, and blends the
    pair with either the derived gain or a caller-fixed one.
    """
    top_down = bayes_combine(prior, top_down_likelihood)
    bottom_up = smoothed(bayes_combine(prior, bottom_up_likelihood))
    f = free_energy(top_down, bottom_up)
    pi = precision_of_error(bottom_up.probs - top_down.probs)
    gain = kalman_gain(f, pi) if fixed_gain is None else fixed_gain
    posterior = belief_update(top_down, bottom_up, gain)
    return LayerBelief(
        prior=prior,
        top_down=top_down,
        bottom_up=bottom_up,
        posterior=posterior,
        free_energy=f,
        precision=pi,
        gain=gain,
    )
