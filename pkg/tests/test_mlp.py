import numpy as np
import pytest

from realrss import datasets, mlp, protocols
from realrss.errors import ConfigurationError, DimensionError
from realrss.runtime import Cluster


def iris_blocks(parts=(2, 1, 1), standardize=True):
    X, y, cols = datasets.load_builtin("iris")
    blocks = [datasets.Block([cols[i] for i in idx], X[:, idx], y if k == 0 else None)
              for k, idx in enumerate(datasets.split_columns(4, parts))]
    return blocks, X, y


def mirror_for(cfg, blocks):
    return mlp.PlainMLP.init(cfg), mlp.plain_features(blocks)


def test_ingest_iris_reconstructs(cluster):
    blocks, X, y = iris_blocks()
    data = mlp.ingest_vertical(cluster, blocks, 30, standardize=False)
    assert data.features.shape == (150, 4)
    assert np.allclose(data.features.plaintext(), X, rtol=1e-9, atol=0)
    lab = data.labels.plaintext()
    assert np.allclose(lab, datasets.one_hot(y), atol=1e-12)
    assert data.train_rows.size == 120 and data.test_rows.size == 30
    assert not set(data.train_rows) & set(data.test_rows)


def test_ingest_wine_shapes(cluster):
    data = mlp.ingest_builtin(cluster, "wine", split_seed=3)
    assert data.n_features == 13 and data.n_classes == 3
    assert (data.train_rows.size, data.test_rows.size) == (142, 36)


def test_ingest_errors(cluster):
    blocks, _, _ = iris_blocks()
    short = datasets.Block(blocks[1].columns, blocks[1].values[:-1])
    with pytest.raises(ConfigurationError, match="row count"):
        mlp.ingest_vertical(cluster, [blocks[0], short, blocks[2]], 30)
    nolabel = datasets.Block(blocks[0].columns, blocks[0].values)
    with pytest.raises(ConfigurationError, match="label"):
        mlp.ingest_vertical(cluster, [nolabel, blocks[1], blocks[2]], 30)


def test_split_agnostic_training():
    runs = []
    for parts in [(2, 1, 1), (4, 0, 0)]:
        with Cluster.inprocess(seeds=[1, 2, 3]) as cl:
            blocks, _, _ = iris_blocks(parts)
            data = mlp.ingest_vertical(cl, blocks, 30, split_seed=4)
            cfg = mlp.MlpConfig([4, 16, 16, 3], epochs=2, init_seed=4)
            _, metrics = mlp.train(cl, mlp.init_model(cl, cfg), data, cfg)
            runs.append(metrics)
    for a, b in zip(*runs):
        assert a["loss"] == pytest.approx(b["loss"], rel=1e-9)
        assert a["accuracy"] == b["accuracy"]


def test_forward_zero_weights_uniform(cluster, rng):
    cfg = mlp.MlpConfig([4, 16, 16, 3])
    ws = [np.zeros((a, b)) for a, b in zip(cfg.layer_sizes[:-1], cfg.layer_sizes[1:])]
    bs = [np.zeros((1, b)) for b in cfg.layer_sizes[1:]]
    model = mlp.share_model(cluster, ws, bs)
    x = cluster.share(rng.normal(size=(16, 4)))
    acts, y_hat, derivs = cluster.run(mlp.forward, model.weights, model.biases, x)
    assert y_hat.shape == (16, 3)
    assert np.allclose(y_hat.plaintext(), 1 / 3, atol=1e-9)
    assert len(acts) == 3 and len(derivs) == 2


def test_forward_matches_plaintext(cluster, rng):
    cfg = mlp.MlpConfig([4, 16, 16, 3], init_seed=9)
    model = mlp.init_model(cluster, cfg)
    plain = mlp.PlainMLP.init(cfg)
    x = rng.normal(size=(16, 4))
    _, y_hat, _ = cluster.run(mlp.forward, model.weights, model.biases, cluster.share(x))
    assert np.allclose(y_hat.plaintext(), plain.forward(x)[1], rtol=1e-6, atol=0)


def test_forward_rejects_wrong_width(cluster, rng):
    model = mlp.init_model(cluster, mlp.MlpConfig([4, 8, 3]))
    with pytest.raises(DimensionError):
        cluster.run(mlp.forward, model.weights, model.biases, cluster.share(rng.normal(size=(2, 5))))


def test_fixed_point_gives_zero_gradient(cluster, rng):
    cfg = mlp.MlpConfig([4, 8, 3], init_seed=2)
    model = mlp.init_model(cluster, cfg)
    x = cluster.share(rng.normal(size=(16, 4)))

    def step(p, ws, bs, x):
        acts, y_hat, derivs = mlp.forward(p, ws, bs, x)
        grads = mlp.backward(p, ws, acts, derivs, y_hat, y_hat)
        return mlp.sgd_step(ws, bs, grads, 0.05)

    ws, bs = cluster.run(step, model.weights, model.biases, x)
    before_w, before_b = model.plaintext()
    for a, b in zip([w.plaintext() for w in ws] + [b.plaintext() for b in bs], before_w + before_b):
        assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


def test_one_step_matches_plaintext(cluster):
    blocks, _, y = iris_blocks()
    data = mlp.ingest_vertical(cluster, blocks, 30)
    cfg = mlp.MlpConfig([4, 16, 16, 3], init_seed=5)
    model = mlp.init_model(cluster, cfg)
    plain, xp = mirror_for(cfg, blocks)
    rows = data.train_rows[:16]
    ws, bs, _ = cluster.run(mlp.train_step, model.weights, model.biases, data.features, data.labels,
                            rows, cfg.learning_rate)
    plain.step(xp[rows], datasets.one_hot(y)[rows], cfg.learning_rate)
    for s, p in zip(ws, plain.weights):
        assert np.allclose(s.plaintext(), p, rtol=1e-6, atol=1e-12)


def test_parameter_parts_stay_bounded(cluster):
    blocks, _, _ = iris_blocks()
    data = mlp.ingest_vertical(cluster, blocks, 30)
    cfg = mlp.MlpConfig([4, 16, 16, 3], epochs=1)
    model, _ = mlp.train(cluster, mlp.init_model(cluster, cfg), data, cfg)
    biggest = max(np.abs(w.parts[i].part_a).max() for w in model.weights for i in range(3))
    assert biggest < 50


def test_predict_ties_go_to_lowest_index(cluster, rng):
    model = mlp.share_model(cluster, [np.zeros((4, 3))], [np.zeros((1, 3))])
    pred = mlp.predict(cluster, model, cluster.share(rng.normal(size=(5, 4))))
    assert np.array_equal(pred, np.zeros(5))
    assert np.array_equal(mlp.argmax_ties_low(np.array([[0.2, 0.5, 0.5 + 1e-9], [0.1, 0.3, 0.6]])), [1, 2])


def test_share_hygiene_during_training(cluster):
    blocks, _, _ = iris_blocks()
    data = mlp.ingest_vertical(cluster, blocks, 30)
    cfg = mlp.MlpConfig([4, 8, 3], epochs=1)
    mlp.train(cluster, mlp.init_model(cluster, cfg), data, cfg)
    for p in cluster.parties:
        for rec in p.reveal_log:
            assert rec["label"] in ("loss", "prediction")
            assert rec["targets"] == [0]


def test_checkpoint_roundtrip(tmp_path, cluster, rng):
    cfg = mlp.MlpConfig([4, 8, 3], init_seed=1)
    model = mlp.init_model(cluster, cfg)
    mlp.save_checkpoint(tmp_path, model, [1, 2])
    back, manifest = mlp.load_checkpoint(tmp_path)
    assert manifest == {"layer_sizes": [4, 8, 3], "epoch": 0, "seeds": [1, 2]}
    for a, b in zip(back.weights, model.weights):
        assert np.array_equal(a.plaintext(), b.plaintext())
    x = cluster.share(rng.normal(size=(6, 4)))
    assert np.array_equal(mlp.predict(cluster, back, x), mlp.predict(cluster, model, x))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        mlp.MlpConfig([4])
    with pytest.raises(ConfigurationError):
        mlp.MlpConfig([4, 3], learning_rate=0)
    cfg = mlp.MlpConfig.from_dict({"layer_sizes": [4, 3], "softmax_reshare_range": "-0.5:0.5"})
    assert cfg.softmax_reshare_range.width == 1.0


def test_shuffle_is_public_and_deterministic():
    a = mlp.shuffle_order(120, 3, 1)
    assert np.array_equal(a, mlp.shuffle_order(120, 3, 1))
    assert not np.array_equal(a, mlp.shuffle_order(120, 3, 2))
    assert np.array_equal(np.sort(a), np.arange(120))


def test_plain_gradients_match_finite_differences():
    # Independent check of the mirror itself.
    cfg = mlp.MlpConfig([3, 5, 2], init_seed=0)
    net = mlp.PlainMLP.init(cfg)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(4, 3)), datasets.one_hot(np.array([0, 1, 1, 0]))
    dw = net.gradients(x, y)[0][0]
    h = 1e-6
    for i, j in [(0, 0), (2, 4)]:
        net.weights[0][i, j] += h
        up = net.loss(x, y)
        net.weights[0][i, j] -= 2 * h
        down = net.loss(x, y)
        net.weights[0][i, j] += h
        assert (up - down) / (2 * h) == pytest.approx(dw[i, j], abs=1e-6)
