#!/usr/bin/env python3
"""The tape engine in ten lines, then the finite-difference referee.

Every operation records a closure on a tape; backward() replays the tape
in reverse from a scalar root. grad_check() perturbs each coordinate by
+/- epsilon and compares the numerical slope with the taped gradient.
"""
import numpy as np

from tinydet import Tape, Tensor, backward, conv2d, grad_check, mul, silu, sum_all

rng = np.random.default_rng(0)

# forward: conv -> silu -> sum of squares, all recorded on one tape
tape = Tape()
x = Tensor(rng.normal(size=(1, 2, 6, 6)), tape)
w = Tensor(rng.normal(size=(3, 2, 3, 3)), tape)
h = silu(conv2d(x, w, padding=1))
loss = sum_all(mul(h, h))
print("loss:", loss.item())

backward(tape, loss)
print("gradient shapes:", x.grad.shape, w.grad.shape)
print("replaying backward is idempotent:", end=" ")
g0 = x.grad.copy()
backward(tape, loss)
print(np.array_equal(g0, x.grad))

# the referee: central differences at every coordinate
w0 = w.data.copy()
report = grad_check(
    lambda t: sum_all(mul(silu(conv2d(t, Tensor(w0), padding=1)),
                          silu(conv2d(t, Tensor(w0), padding=1)))),
    x.data, epsilon=1e-4, tolerance=1e-3)
print("conv/silu gradient check:", report)

# a deliberately broken gradient fails loudly (negative control)
from tinydet.tensor import _op_output

def forged_double(t):
    return _op_output(t.data * 2.0, (t,), lambda g: (g * 3.0,))  # wrong: claims 3x

bad = grad_check(lambda t: sum_all(forged_double(t)), np.ones((1, 1, 2, 2)))
print("forged gradient is caught:", not bad.passed)
