"""
Reverse-mode gradients on a tiny graph
======================================

Build a small scalar computation, run it forward and backward, and compare
the gradients with central finite differences.
"""

import numpy as np

from burdenlab.numgrad import Graph, grad_check

rng = np.random.default_rng(0)

# Inputs are named; everything else is an operation on earlier nodes.
g = Graph()
W = g.input("W")
x = g.input("x")
h = g.tanh(g.matmul(W, x))                 # (3, 2): two columns = a batch of two
loss = g.sum(g.square(h))
g.set_output(loss)

bindings = {"W": rng.normal(size=(3, 4)), "x": rng.normal(size=(4, 2))}
print("loss      ", g.forward(bindings))
print("dloss/dW  ", g.grads()["W"].round(4), sep="\n")

# The same graph under finite differences.
report = grad_check(g, bindings, step=1e-6, tolerance=1e-4)
print("max relative error", report.max_error, "passed", report.passed)

# Hinges are piecewise; at the kink the engine uses the zero subgradient.
g2 = Graph()
a = g2.input("a")
g2.set_output(g2.sum(g2.hinge(a, 0.5)))
g2.forward({"a": np.array([[0.2, 0.5, 0.9]])})
print("hinge grads", g2.grads()["a"])
