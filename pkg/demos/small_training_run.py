"""
Training a small tree network
=============================

Trains a fan-in 4 tree on a 14x14 subset of fashion-MNIST with the rotation
optimizer, then evaluates it and saves it. Point ``BAYESTN_DATA_DIR`` at a
folder holding the four IDX files (see ``scripts/npm_fashion_to_idx.py``).
A few epochs on 2,000 images take well under a minute.
"""
import math
import os

from bayestn.data import downsample, load_split, subsample
from bayestn.engine import TrainConfig, evaluate, train
from bayestn.network import NetworkSpec, build_tree, parameter_count, save_model

data_dir = os.environ.get("BAYESTN_DATA_DIR", "/root/data/fashion-mnist")

# %%
# Block-mean pooling halves the resolution; the 14x14 grid is padded to 16x16
# so the tree has 256 roots and four levels.
train_ds = subsample(downsample(load_split(data_dir, "train"), 2), 2000, seed=0)
test_ds = subsample(downsample(load_split(data_dir, "test"), 2), 1000, seed=0)

spec = NetworkSpec(train_ds.height, train_ds.width, d=2, chi=2, n_classes=10, fan_in=4)
net = build_tree(spec, seed=0)
print(f"{len(net.nodes)} tensors, {parameter_count(net)} parameters")

# %%
# Every step rotates each normalized slice of the square-root tensors by a
# fixed angle toward the negative gradient, so normalization holds by
# construction.
config = TrainConfig(theta=math.atan(1e-2), epochs=5, batch_size=100, seed=0)
best, metrics = train(net, train_ds, config, test_ds)
for rec in metrics.records:
    print(f"epoch {rec.epoch}: loss {rec.mean_loss:.4f}, train {rec.train_acc:.3f}, test {rec.test_acc:.3f}")

# %%
# ``best`` is the epoch with the highest test accuracy; ``net`` is the last.
print("final test accuracy", evaluate(net, test_ds))
save_model(best, "small_model.json")
print("saved small_model.json")
