"""
Bayesian tensor algebra by hand
===============================

A Bayesian tensor stores a conditional distribution: axis 0 is the
out-going event, the other axes are in-going events, and every column along
axis 0 sums to one. This script walks through the basic operations on a
2x2 example small enough to check by hand.
"""
import numpy as np

from bayestn.bayes import contract_pair, invert_direction, joint, propagate

np.set_printoptions(precision=4, suppress=True)

# %%
# A two-state conditional P(y | x). Column j is the distribution of y
# given x = j.
t = np.array([[0.3, 0.6],
              [0.7, 0.4]])
print("columns sum to", t.sum(axis=0))

# %%
# Propagating a prior over x gives the marginal of y.
prior = np.array([0.5, 0.5])
print("P(y) =", propagate(t, [prior]))

# %%
# The joint table P(y, x) keeps both variables.
j = joint(t, [prior])
print("P(y, x) =\n", j.table)

# %%
# Bayes' rule flips the direction: P(x | y) and the new prior P(y).
inv, p_y = invert_direction(t, [prior], 0)
print("P(x | y) =\n", inv)
print("P(y) =", p_y)

# Inverting once more recovers the original conditional.
back, _ = invert_direction(inv, [p_y], 0)
print("max deviation after two inversions:", np.abs(back - t).max())

# %%
# Chaining two conditionals is a contraction over the shared variable, and
# the result is again column-normalized.
noise = np.array([[0.9, 0.2],
                  [0.1, 0.8]])
chain = contract_pair(noise, t)
print("P(z | x) =\n", chain)
print("columns sum to", chain.sum(axis=0))
