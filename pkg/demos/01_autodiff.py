"""
Reverse-mode autodiff on matrices
=================================

Every quantity in graphac is a 2-D float64 matrix wrapped in a ``Value``.
Forward ops record a tape; ``backward`` walks it once in reverse.
"""

import numpy as np

from graphac import tensor as T

rng = np.random.default_rng(0)

# a tiny least-squares problem: fit w so that x @ w ~ y
x = T.constant(rng.normal(size=(32, 3)))
w_true = np.array([[1.5], [-2.0], [0.5]])
y = T.constant(x.data @ w_true + 0.01 * rng.normal(size=(32, 1)))
w = T.parameter(np.zeros((3, 1)), name="w")


def loss():
    r = T.subtract(T.matmul(x, w), y)
    return T.scale(T.sum_of_squares(r), 1 / 32)


# gradients from the tape agree with central differences
T.backward(loss())
print("d loss / d w:", w.grad.ravel())
print("finite-difference check:", T.finite_diff_check(lambda v: T.scale(
    T.sum_of_squares(T.subtract(T.matmul(x, v), y)), 1 / 32), w.data))

# a few hundred Adam steps recover the true weights
state = T.AdamState(lr=0.05)
for step in range(300):
    T.zero_gradients([w])
    T.backward(loss())
    T.adam_step([w], state)
print("fitted w:", np.round(w.data.ravel(), 3), "true:", w_true.ravel())

# segment reductions are what message passing is built from
h = T.parameter(rng.normal(size=(5, 2)))
seg = T.Segments(np.array([0, 0, 1, 1, 1]), 2)
pooled = T.segment_reduce(h, seg, "max")
print("per-segment max:\n", pooled.data)
T.backward(T.sum(pooled))
print("max routes gradient to the arg-max rows only:\n", h.grad)
