"""Sensorimotor control layer.

A damped-spring motor plant pulls the ship toward the current movement goal,
a Kalman-style compensator infers external drift from movement prediction
errors, and the low-level sense of control tracks how well perceived
movement matches what was intended.  One gain value threads through all
three: the compensation update, the LL SoC update, and the movement-belief
blend.  It is either computed dynamically from the movement belief's free
energy and precision or pinned by the experiment condition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .beliefs import DiscreteDistribution, LayerBelief, update_layer
from .config import Scalars
from .environment import Observation


@dataclass(frozen=True)
class MovementGoal:
    """Intended lateral displacement for the upcoming step, in world units."""

    target_dx: float

    @classmethod
    def toward(cls, dx: float, limit: float) -> "MovementGoal":
        return cls(target_dx=max(-limit, min(limit, dx)))


@dataclass(frozen=True)
class MotorPlant:
    position: float = 0.0   # cumulative commanded displacement (bookkeeping)
    velocity: float = 0.0   # units per step


@dataclass(frozen=True)
class SclFeedback:
    """Bottom-up report for the situated state buffer."""

    ll_soc: float
    perceived_dx: float
    position: float


@dataclass(frozen=True)
class SclState:
    plant: MotorPlant
    ll_soc: float
    inferred_force: float
    gain: float
    likelihood_sigma: float
    movement_belief: DiscreteDistribution
    compensation_prior: float | None = None   # top-down drift estimate from CCL, if any
    last_input_dx: float | None = None        # motor prediction for the step in flight
    last_intended_dx: float | None = None     # motor prediction plus modeled drift
    belief: LayerBelief | None = None


def movement_domain(scalars: Scalars) -> tuple[float, ...]:
    """Discrete per-step displacements the SCL forms beliefs over."""
    n = scalars.scl.movement_half_states
    step = scalars.world.step_size
    return tuple(i * step / n for i in range(-n, n + 1))


def new_scl_state(scalars: Scalars, initial_gain: float = 0.5) -> SclState:
    domain = movement_domain(scalars)
    return SclState(
        plant=MotorPlant(),
        ll_soc=scalars.scl.initial_ll_soc,
        inferred_force=0.0,
        gain=initial_gain,
        likelihood_sigma=scalars.scl.likelihood_sigma,
        movement_belief=DiscreteDistribution.uniform(domain),
    )


def movement_likelihood(domain: tuple[float, ...], center: float, sigma: float) -> DiscreteDistribution:
    values = np.asarray(domain, dtype=float)
    weights = np.exp(-((values - center) ** 2) / (2.0 * sigma * sigma))
    return DiscreteDistribution.from_weights(domain, weights)


def plant_step(s: SclState, goal: MovementGoal, scalars: Scalars) -> tuple[SclState, float]:
    """One spring integration toward the goal, compensation included.

    The equilibrium sits at the goal displacement shifted by the negated
    inferred force; the damping keeps c^2 >= 4k so transients do not ring,
    and the dead zone downstream keeps the settle radius just above half a
    steering quantum so arrivals do not chatter.
    """
    cfg = scalars.scl
    equilibrium = goal.target_dx - s.inferred_force
    velocity = s.plant.velocity + cfg.k_spring * equilibrium - cfg.c_damp * s.plant.velocity
    limit = cfg.max_step * scalars.world.step_size
    commanded = max(-limit, min(limit, velocity))
    plant = MotorPlant(position=s.plant.position + commanded, velocity=velocity)
    return replace(s, plant=plant), commanded


def quantize_input(commanded_dx: float, scalars: Scalars) -> str:
    """Map the continuous command onto the task's two-button input."""
    dead = scalars.scl.dead_zone * scalars.world.step_size
    if commanded_dx > dead:
        return "right"
    if commanded_dx < -dead:
        return "left"
    return "none"


def compensate(s: SclState, predicted_dx: float, perceived_dx: float) -> SclState:
    """Update the running external-force estimate from one prediction error.

    The anchor of the update is the current estimate, unless the CCL handed
    down a compensation prior (marked zone), in which case the gain weighs
    bottom-up evidence against that strategic prior.
    """
    sample = perceived_dx - predicted_dx
    anchor = s.inferred_force if s.compensation_prior is None else s.compensation_prior
    force = anchor + s.gain * (sample - anchor)
    return replace(s, inferred_force=force)


def ll_soc_update(s: SclState, perceived_dx: float, intended_dx: float) -> SclState:
    """Move LL SoC toward the Gaussian likelihood of the intended movement.

    The likelihood is peak-normalized (no density prefactor) so it is a
    [0, 1] success score and the update stays a convex combination.
    """
    sigma = s.likelihood_sigma
    p = math.exp(-((perceived_dx - intended_dx) ** 2) / (2.0 * sigma * sigma))
    ll = s.ll_soc + s.gain * (p - s.ll_soc)
    return replace(s, ll_soc=min(1.0, max(0.0, ll)))


def update_movement_belief(
    s: SclState,
    goal: MovementGoal,
    perceived_dx: float,
    scalars: Scalars,
    fixed_gain: float | None,
) -> SclState:
    """Blend the top-down goal prediction with the perceived movement."""
    domain = s.movement_belief.domain
    forget = scalars.scl.prior_forget
    n = len(domain)
    prior = DiscreteDistribution(domain, (1.0 - forget) * s.movement_belief.probs + forget / n)
    top_down = movement_likelihood(domain, goal.target_dx, s.likelihood_sigma)
    bottom_up = movement_likelihood(domain, perceived_dx, s.likelihood_sigma)
    layer = update_layer(prior, top_down, bottom_up, fixed_gain=fixed_gain)
    return replace(s, movement_belief=layer.posterior, gain=layer.gain, belief=layer)


def scl_tick(
    s: SclState,
    goal: MovementGoal,
    obs: Observation,
    scalars: Scalars,
    fixed_gain: float | None = None,
) -> tuple[SclState, str, SclFeedback]:
    """One 50 ms sensorimotor cycle; returns the environment input to apply."""
    if s.last_input_dx is not None:
        s = compensate(s, s.last_input_dx, obs.perceived_dx)
    s, commanded = plant_step(s, goal, scalars)
    action = quantize_input(commanded, scalars)
    if s.last_intended_dx is not None:
        s = ll_soc_update(s, obs.perceived_dx, s.last_intended_dx)
    s = update_movement_belief(s, goal, obs.perceived_dx, scalars, fixed_gain)

    # Both predictions anchor on the issued input; the intended movement also
    # carries the drift model, so its error measures how wrong the model is.
    step = scalars.world.step_size
    input_dx = {"left": -step, "right": step, "none": 0.0}[action]
    s = replace(s, last_input_dx=input_dx, last_intended_dx=input_dx + s.inferred_force)
    feedback = SclFeedback(ll_soc=s.ll_soc, perceived_dx=obs.perceived_dx, position=obs.ship_x)
    return s, action, feedback
