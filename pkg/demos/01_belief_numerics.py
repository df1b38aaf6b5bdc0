"""A walk through the precision-weighted belief update.

Build a top-down prediction and a bottom-up evidence distribution over a
small movement domain, then watch how free energy and precision set the
gain that blends them.
"""

import numpy as np

from soclander.beliefs import (
    DiscreteDistribution,
    belief_update,
    entropy,
    free_energy,
    kalman_gain,
    kl_divergence,
    precision_of_error,
    smoothed,
)

domain = (-1.0, -2 / 3, -1 / 3, 0.0, 1 / 3, 2 / 3, 1.0)

prediction = DiscreteDistribution.from_weights(
    domain, np.exp(-((np.array(domain) - 0.0) ** 2) / 0.5))
print("prediction (peaked at 0):", np.round(prediction.probs, 3))
print("entropy:", round(entropy(prediction), 4))

for shift in (0.0, 0.3, 0.7, 1.0):
    evidence = smoothed(DiscreteDistribution.from_weights(
        domain, np.exp(-((np.array(domain) - shift) ** 2) / 0.5)))
    f = free_energy(prediction, evidence)
    pi = precision_of_error(evidence.probs - prediction.probs)
    k = kalman_gain(f, pi)
    posterior = belief_update(prediction, evidence, k)
    print(f"\nevidence peaked at {shift:+.1f}:")
    print(f"  KL(prediction || evidence) = {kl_divergence(prediction, evidence):.4f}")
    print(f"  free energy F = {f:.4f}   precision pi = {pi:.4f}   gain K = {k:.4f}")
    print(f"  posterior: {np.round(posterior.probs, 3)}")

print("\nThe more the evidence disagrees, the larger F and the smaller pi,")
print("so the gain K shifts weight from the prediction to the evidence.")
