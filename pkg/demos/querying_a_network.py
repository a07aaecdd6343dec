"""
Asking a trained network questions
==================================

Because every tensor is a conditional distribution, a trained tree is a
Bayesian network. Besides classifying images it answers queries about pixel
variables. Run ``small_training_run.py`` first, or pass any saved model path.
"""
import sys

import numpy as np

from bayestn import inference
from bayestn.network import load_model

np.set_printoptions(precision=4, suppress=True)
net = load_model(sys.argv[1] if len(sys.argv) > 1 else "small_model.json")
priors = inference.uniform_priors(net)

# %%
# Class prior implied by uniform pixel priors.
print("P(class) =", inference.marginals(net, priors)[net.leaf_set])

# %%
# Two pixels are independent a priori in a tree, so fixing one of them does
# not change the other. Fixing the class as well couples them.
a, b = net.root_sets[100], net.root_sets[101]
print(f"P({a} | {b}=1)          =", inference.root_conditional(net, priors, a, b, 1))
print(f"P({a} | {b}=1, class=0) =", inference.root_conditional(net, priors, a, b, 1, leaf_event=0))

# %%
# Given the class, how strongly two pixels covary can be compared against the
# number of tensors on the tree path between them. A short training run leaves
# these values small; longer runs give clearer structure.
rows = inference.covariance_decay_probe(net, priors, label=0, n_pairs=60, seed=0)
by_length = {}
for _, _, length, norm in rows:
    by_length.setdefault(length, []).append(norm)
for length in sorted(by_length):
    print(f"path length {length}: mean |cov| {np.mean(by_length[length]):.2e} over {len(by_length[length])} pairs")
