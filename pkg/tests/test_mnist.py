"""Opt-in MNIST subset benchmark. Set REALRSS_MNIST_CSV to a CSV with 784
pixel columns and a ``label`` column (for example an export of the MNIST
training set) to run it."""
import os

import numpy as np
import pytest

from realrss import datasets, mlp
from realrss.runtime import Cluster

CSV = os.environ.get("REALRSS_MNIST_CSV")

pytestmark = [pytest.mark.mnist, pytest.mark.slow,
              pytest.mark.skipif(not CSV, reason="set REALRSS_MNIST_CSV to run the MNIST subset benchmark")]


def test_mnist_subset_within_three_points_of_plaintext():
    full = datasets.read_block(CSV)
    keep = np.random.default_rng(0).choice(full.values.shape[0], 1000, replace=False)
    values, labels = full.values[keep] / 255.0, full.labels[keep]
    idx = datasets.split_columns(values.shape[1], datasets.default_split(values.shape[1]))
    blocks = [datasets.Block([full.columns[i] for i in cols], values[:, cols], labels if k == 0 else None)
              for k, cols in enumerate(idx)]
    with Cluster.inprocess(seeds=[1, 2, 3]) as cl:
        data = mlp.ingest_vertical(cl, blocks, 200, split_seed=0, n_classes=10)
        cfg = mlp.MlpConfig.reference("mnist", data.n_features, data.n_classes)
        model, metrics = mlp.train(cl, mlp.init_model(cl, cfg), data, cfg)
    xp = mlp.plain_features(blocks)
    plain = mlp.PlainMLP.init(cfg)
    plain.fit(xp, datasets.one_hot(labels, 10), data.train_rows, cfg)
    plain_acc = float(np.mean(plain.predict(xp[data.test_rows]) == labels[data.test_rows]))
    assert abs(metrics[-1]["accuracy"] - plain_acc) <= 0.03
