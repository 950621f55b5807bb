"""
Gaussian messages in moment and canonical form
==============================================

Every quantity the filters pass around is a Gaussian message.  This script
walks through the handful of rules they rely on.
"""

import numpy as np

from turbofilter.gaussian import (
    GaussianCanonical,
    GaussianMoment,
    WeightedGaussianPair,
    affine_propagate,
    log_overlap_weight,
    marginal_block,
    moment_match,
    overlap_weight,
    product,
)

np.set_printoptions(precision=4, suppress=True)

# A message can be stored by its mean and covariance or by its precision
# matrix W = C^-1 and shift w = W m.
prior = GaussianMoment([1.0, 0.0], [[1.0, 0.4], [0.4, 2.0]])
c = prior.to_canonical()
print("precision\n", c.precision)
print("shift", c.shift)

# Multiplying two messages adds their canonical parameters.  The flat
# message (W = 0) is the identity.
meas = GaussianMoment([2.0, 1.0], np.eye(2))
post = product(prior.to_canonical(), meas.to_canonical()).to_moment()
print("posterior mean", post.mean)
flat = GaussianCanonical.flat(2)
print("flat is neutral:", np.allclose(product(c, flat).to_moment().mean, prior.mean))

# Pushing a message through x' = A x + b + noise.
A = np.array([[1.0, 0.1], [0.0, 0.98]])
pred = affine_propagate(post, A, np.zeros(2), 1e-2 * np.eye(2))
print("predicted mean", pred.mean)
print("predicted cov\n", pred.cov)

# The overlap of two messages scores how well they agree; it drives the
# particle weights.  Far apart messages underflow, so filters work with logs.
print("overlap", overlap_weight(prior, meas))
far = GaussianMoment([40.0, 0.0], np.eye(2))
print("overlap (far)", overlap_weight(prior, far), "log", log_overlap_weight(prior, far))

# A marginal is just a block of the moment form.
print("marginal of x_0", marginal_block(prior, (0, 1)))

# Collapsing particles carrying Gaussians on the other substate gives one
# joint Gaussian over (Gaussian part, particle part).
pairs = [
    WeightedGaussianPair([-1.0], GaussianMoment([0.0, 0.0], 0.1 * np.eye(2)), 0.5),
    WeightedGaussianPair([1.0], GaussianMoment([1.0, 0.0], 0.1 * np.eye(2)), 0.5),
]
joint = moment_match(pairs)
print("joint mean", joint.mean)
print("joint cov\n", joint.cov)
