"""Secure multilayer perceptron on shared, vertically partitioned data.

Architecture: ``Linear -> ReLU`` for every hidden layer, then ``Linear ->
Softmax``. Training minimises cross-entropy summed over the batch, so the
output-layer gradient is ``G = Y_hat - Y`` and the update is
``W <- W - lr * A^T G``.

Party-local functions take ``party`` first and are run through
:meth:`realrss.runtime.Cluster.run`. Driver-level functions take a
``Cluster`` and work on :class:`~realrss.runtime.Shared` bundles.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Optional, Sequence, Union

import numpy as np

from . import datasets, protocols
from .errors import ConfigurationError, DimensionError, ExpOverflowError
from .tensor import RandomRange
from .sharing import AdditiveShare, read_share_file, reconstruct, share_many, write_share_file

if TYPE_CHECKING:
    from .runtime.session import Cluster, Party, Shared

EVALUATOR = 0  # receives the loss
USER = 0       # receives predictions
# Revealed probabilities carry protocol noise near 1e-8, so classes this close
# to the row maximum count as tied; the lowest index wins.
TIE_TOLERANCE = 1e-6
LOSS_FLOOR = 1e-12


@dataclass
class MlpConfig:
    layer_sizes: list[int]
    batch_size: int = 16
    learning_rate: float = 0.05
    epochs: int = 5
    init_seed: int = 0
    softmax_reshare_range: RandomRange = protocols.RESHARE_RANGE

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(int(s) < 1 for s in self.layer_sizes):
            raise ConfigurationError(f"layer_sizes must list at least two positive sizes: {self.layer_sizes}")
        if self.batch_size < 1 or self.epochs < 1 or not self.learning_rate > 0:
            raise ConfigurationError("batch_size and epochs must be >= 1 and learning_rate > 0")
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        if isinstance(self.softmax_reshare_range, str):
            self.softmax_reshare_range = RandomRange.parse(self.softmax_reshare_range)

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @classmethod
    def reference(cls, dataset: str, n_features: int, n_classes: int, init_seed: int = 0) -> "MlpConfig":
        """Reference hyperparameters for the small benchmark datasets."""
        if dataset == "mnist":
            return cls([n_features, 128, 128, n_classes], 128, 0.01, 5, init_seed)
        return cls([n_features, 16, 16, n_classes], 16, 0.05, 5, init_seed)

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        keys = ("layer_sizes", "batch_size", "learning_rate", "epochs", "init_seed", "softmax_reshare_range")
        known = {k: d[k] for k in keys if k in d}
        return cls(**known)


def init_params(layer_sizes: Sequence[int], seed: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """He-uniform weights ``U(+-sqrt(6 / fan_in))`` and zero biases, from a public seed."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        lim = np.sqrt(6.0 / fan_in)
        ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros((1, fan_out)))
    return ws, bs


def shuffle_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Public batch order; every party derives the same permutation."""
    return np.random.default_rng([seed, 1, epoch]).permutation(n)


# -- party-local pieces ---------------------------------------------------------------

def forward(party: "Party", weights: Sequence[AdditiveShare], biases: Sequence[AdditiveShare],
            x: AdditiveShare, reshare_range: RandomRange = protocols.RESHARE_RANGE
            ) -> tuple[list[AdditiveShare], AdditiveShare, list[AdditiveShare]]:
    """Return ``(activations, y_hat, relu_derivs)``; ``activations[0]`` is the input.
    The logits are re-shared with ``reshare_range`` masks before softmax."""
    if x.shape[1] != weights[0].shape[0]:
        raise DimensionError(f"batch has {x.shape[1]} features, first layer expects {weights[0].shape[0]}")
    acts, derivs = [x], []
    for layer, (w, b) in enumerate(zip(weights[:-1], biases[:-1])):
        z = protocols.add_bias(protocols.matmul(party, acts[-1], w), b)
        d, a = protocols.relu(party, z)
        derivs.append(d)
        acts.append(a)
    logits = protocols.add_bias(protocols.matmul(party, acts[-1], weights[-1]), biases[-1])
    logits = protocols.reshare(party, logits, reshare_range)
    try:
        y_hat = protocols.softmax(party, logits)
    except ExpOverflowError as exc:
        raise ExpOverflowError(f"output layer {len(weights)}: {exc}") from exc
    return acts, y_hat, derivs


def backward(party: "Party", weights: Sequence[AdditiveShare], acts: Sequence[AdditiveShare],
             derivs: Sequence[AdditiveShare], y_hat: AdditiveShare, y: AdditiveShare
             ) -> list[tuple[AdditiveShare, AdditiveShare]]:
    """Per-layer ``(dW, db)`` of the batch-summed cross-entropy."""
    if y.shape != y_hat.shape:
        raise DimensionError(f"labels {y.shape} do not match predictions {y_hat.shape}")
    g = protocols.sub(y_hat, y)
    grads = []
    for layer in range(len(weights) - 1, -1, -1):
        grads.append((protocols.matmul(party, protocols.transpose(acts[layer]), g), protocols.colsum(g)))
        if layer > 0:
            g = protocols.matmul(party, g, protocols.transpose(weights[layer]))
            g = protocols.hadamard(party, g, derivs[layer - 1])
    return grads[::-1]


def sgd_step(weights, biases, grads, lr: float) -> tuple[list[AdditiveShare], list[AdditiveShare]]:
    new_w = [protocols.sub(w, protocols.mul_public(dw, lr)) for w, (dw, _) in zip(weights, grads)]
    new_b = [protocols.sub(b, protocols.mul_public(db, lr)) for b, (_, db) in zip(biases, grads)]
    return new_w, new_b


def refresh(party: "Party", params: Sequence[AdditiveShare], randomness_range: RandomRange
            ) -> list[AdditiveShare]:
    """Re-share all parameters in one batched :func:`protocols.reshare`.

    Each SGD update adds product cross terms to the parameters' parts, so
    without a refresh the parts (not the secrets) grow geometrically from
    step to step until float precision is gone.
    """
    flat = [AdditiveShare(p.owner, p.part_a.reshape(1, -1), p.part_b.reshape(1, -1)) for p in params]
    fresh = protocols.reshare(party, protocols.hstack(flat), randomness_range)
    out, start = [], 0
    for p in params:
        n = p.part_a.size
        out.append(AdditiveShare(p.owner, fresh.part_a[:, start:start + n].reshape(p.shape),
                                 fresh.part_b[:, start:start + n].reshape(p.shape)))
        start += n
    return out


def true_class_probability(party: "Party", y_hat: AdditiveShare, y: AdditiveShare) -> AdditiveShare:
    """Shared column ``sum_j Y_ij * Y_hat_ij``."""
    return protocols.take_cols(protocols.rowsum(protocols.hadamard(party, y, y_hat)), [0])


def train_step(party: "Party", weights, biases, x: AdditiveShare, y: AdditiveShare,
               rows: np.ndarray, lr: float, evaluator: int = EVALUATOR,
               reshare_range: RandomRange = protocols.RESHARE_RANGE):
    """One SGD step on ``rows`` of the shared training data. Returns the new
    parameters and, at the evaluator only, the revealed true-class
    probabilities of the batch."""
    xb, yb = protocols.take_rows(x, rows), protocols.take_rows(y, rows)
    acts, y_hat, derivs = forward(party, weights, biases, xb, reshare_range)
    p_true = reconstruct(party, true_class_probability(party, y_hat, yb), evaluator, label="loss")
    grads = backward(party, weights, acts, derivs, y_hat, yb)
    new_w, new_b = sgd_step(weights, biases, grads, lr)
    fresh = refresh(party, new_w + new_b, party.ctx.randomness_range)
    return fresh[:len(new_w)], fresh[len(new_w):], p_true


def argmax_ties_low(probs: np.ndarray, tol: float = TIE_TOLERANCE) -> np.ndarray:
    """Row argmax where entries within ``tol`` of the maximum tie to the lowest index."""
    return np.argmax(probs >= probs.max(axis=1, keepdims=True) - tol, axis=1)


def predict_local(party: "Party", weights, biases, x: AdditiveShare, user: int = USER,
                  reshare_range: RandomRange = protocols.RESHARE_RANGE) -> Optional[np.ndarray]:
    """Class indices at ``user`` (lowest index wins ties); ``None`` elsewhere."""
    _, y_hat, _ = forward(party, weights, biases, x, reshare_range)
    probs = reconstruct(party, y_hat, user, label="prediction")
    return None if probs is None else argmax_ties_low(probs)


# -- driver-level objects -------------------------------------------------------------

@dataclass
class SharedModel:
    layer_sizes: list[int]
    weights: list["Shared"]
    biases: list["Shared"]
    epoch: int = 0

    def __post_init__(self):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if w.shape != want or b.shape != (1, want[1]):
                raise DimensionError(f"layer {k}: weights {w.shape} / bias {b.shape}, expected {want}")

    def plaintext(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Test oracle: combine all parties' views."""
        return [w.plaintext() for w in self.weights], [b.plaintext() for b in self.biases]


@dataclass
class SharedDataset:
    features: "Shared"
    labels: "Shared"
    train_rows: np.ndarray
    test_rows: np.ndarray
    # Held by the label provider, who scores predictions delivered to the user.
    label_truth: np.ndarray = field(repr=False, default=None)
    columns: list[str] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]


def share_model(cl: "Cluster", weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                owner: int = 0) -> SharedModel:
    """Share plaintext parameters from ``owner`` in a single round."""
    mats = list(weights) + list(biases)
    shapes = [m.shape for m in mats]

    def task(p):
        with p.protocol("share"):
            return share_many(p, [(owner, m if p.id == owner else None, s) for m, s in zip(mats, shapes)])

    out = cl.run_each_shared(task)
    sizes = [weights[0].shape[0]] + [w.shape[1] for w in weights]
    k = len(weights)
    return SharedModel(sizes, out[:k], out[k:])


def init_model(cl: "Cluster", config: MlpConfig) -> SharedModel:
    ws, bs = init_params(config.layer_sizes, config.init_seed)
    return share_model(cl, ws, bs)


def ingest_vertical(cl: "Cluster", blocks: Sequence[datasets.Block], n_test: int, split_seed: int = 0,
                    standardize: bool = True, n_classes: Optional[int] = None) -> SharedDataset:
    """Each provider ``k`` shares its own column block (``Shr_k``); the label
    holder one-hot encodes and shares the labels. Blocks are concatenated
    column-wise in provider order. The train/test split is drawn from a
    public seed, stratified by class."""
    if len(blocks) != 3:
        raise ConfigurationError(f"expected three provider blocks, got {len(blocks)}")
    rows = {b.values.shape[0] for b in blocks}
    if len(rows) != 1:
        raise ConfigurationError(f"providers disagree on row count: {[b.values.shape[0] for b in blocks]}")
    holders = [k for k, b in enumerate(blocks) if b.labels is not None]
    if len(holders) != 1:
        raise ConfigurationError(f"exactly one provider must hold the label column, found {len(holders)}")
    lab_owner = holders[0]
    labels = blocks[lab_owner].labels
    y = datasets.one_hot(labels, n_classes)
    parts = []
    for k, b in enumerate(blocks):
        if b.values.shape[1] == 0:
            continue
        vals = datasets.standardize(b.values) if standardize else b.values
        parts.append(cl.share(vals, owner=k))
    feats = cl.run(lambda p, blocks: protocols.hstack(blocks), parts)
    ys = cl.share(y, owner=lab_owner)
    tr, te = datasets.train_test_indices(labels, n_test, split_seed)
    cols = [c for b in blocks for c in b.columns]
    return SharedDataset(feats, ys, tr, te, labels, cols)


def ingest_csv(cl: "Cluster", paths: Sequence[Union[str, Path]], n_test: int, split_seed: int = 0,
               **kw) -> SharedDataset:
    return ingest_vertical(cl, [datasets.read_block(p) for p in paths], n_test, split_seed, **kw)


def ingest_builtin(cl: "Cluster", name: str, split_seed: int = 0, parts: Optional[Sequence[int]] = None,
                   label_provider: int = 0) -> SharedDataset:
    X, y, cols = datasets.load_builtin(name)
    parts = parts or datasets.default_split(X.shape[1])
    blocks = [datasets.Block([cols[i] for i in idx], X[:, idx], y if k == label_provider else None)
              for k, idx in enumerate(datasets.split_columns(X.shape[1], parts))]
    return ingest_vertical(cl, blocks, datasets.SPLITS[name][1], split_seed)


def batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[k:k + batch_size] for k in range(0, order.size, batch_size)]


def predict(cl: "Cluster", model: SharedModel, features: "Shared", user: int = USER,
            reshare_range: RandomRange = protocols.RESHARE_RANGE) -> Optional[np.ndarray]:
    """Predicted classes as delivered to ``user``; ``None`` at a
    single-party driver that is not the user."""
    out = cl.run(predict_local, model.weights, model.biases, features, user, reshare_range)
    return None if out is None else out.parts[user]


def evaluate(cl: "Cluster", model: SharedModel, data: SharedDataset, user: int = USER,
             reshare_range: RandomRange = protocols.RESHARE_RANGE) -> Optional[float]:
    x = cl.run(lambda p, f: protocols.take_rows(f, data.test_rows), data.features)
    pred = predict(cl, model, x, user, reshare_range)
    if pred is None:
        return None
    return float(np.mean(pred == data.label_truth[data.test_rows]))


def train(cl: "Cluster", model: SharedModel, data: SharedDataset, config: MlpConfig,
          progress: Optional[Callable[[dict], None]] = None) -> tuple[SharedModel, list[dict]]:
    """Mini-batch SGD. Emits one metrics dict per epoch: mean training loss
    (known to the evaluator only), test accuracy, and that epoch's traffic."""
    if config.layer_sizes[0] != data.n_features or config.n_classes != data.n_classes:
        raise ConfigurationError(
            f"model {config.layer_sizes} does not fit data with {data.n_features} features "
            f"and {data.n_classes} classes")
    metrics = []
    weights, biases = list(model.weights), list(model.biases)
    for epoch in range(1, config.epochs + 1):
        t0, mark = time.perf_counter(), len(cl.invocations)
        order = data.train_rows[shuffle_order(data.train_rows.size, config.init_seed, epoch)]
        losses = []
        for rows in batches(order, config.batch_size):
            weights, biases, p_true = cl.run(train_step, weights, biases, data.features, data.labels,
                                             rows, config.learning_rate, EVALUATOR,
                                             config.softmax_reshare_range)
            p = p_true.parts[EVALUATOR] if p_true is not None else None
            if p is not None:
                losses.append(-np.log(np.maximum(p, LOSS_FLOOR)).sum())
        model = SharedModel(model.layer_sizes, weights, biases, model.epoch + 1)
        acc = evaluate(cl, model, data, USER, config.softmax_reshare_range)
        tot = cl.totals(mark)
        loss = float(np.sum(losses) / data.train_rows.size) if losses else None
        rec = {"epoch": epoch, "loss": loss, "accuracy": acc,
               "bytes_total": tot.bytes_total, "rounds_total": tot.rounds,
               "wall_ms": (time.perf_counter() - t0) * 1e3}
        metrics.append(rec)
        if progress:
            progress(rec)
    return model, metrics


# -- checkpoints ----------------------------------------------------------------------

def save_checkpoint(directory: Union[str, Path], model: SharedModel, seeds: Sequence[int] = ()) -> Path:
    """One PRSS1 file per party and parameter, plus ``manifest.json``. A
    single-party driver writes only its own files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for p in range(3):
        for k, (w, b) in enumerate(zip(model.weights, model.biases)):
            if w.parts[p] is not None:
                write_share_file(d / f"P{p}_W{k}.prss", w.parts[p])
                write_share_file(d / f"P{p}_b{k}.prss", b.parts[p])
    manifest = {"layer_sizes": model.layer_sizes, "epoch": model.epoch, "seeds": [int(s) for s in seeds]}
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(directory: Union[str, Path]) -> tuple[SharedModel, dict]:
    from .runtime.session import Shared

    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    n = len(manifest["layer_sizes"]) - 1

    def load(name):
        parts = [read_share_file(d / f"P{p}_{name}.prss") if (d / f"P{p}_{name}.prss").exists() else None
                 for p in range(3)]
        if all(x is None for x in parts):
            raise FileNotFoundError(f"{d}: no share files for {name}")
        return Shared(parts)

    ws = [load(f"W{k}") for k in range(n)]
    bs = [load(f"b{k}") for k in range(n)]
    return SharedModel(manifest["layer_sizes"], ws, bs, manifest["epoch"]), manifest


# -- plaintext mirror -------------------------------------------------------------------

class PlainMLP:
    """The same network, arithmetic and update rule in plain numpy."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, config: MlpConfig) -> "PlainMLP":
        return cls(*init_params(config.layer_sizes, config.init_seed))

    def forward(self, x: np.ndarray):
        acts, derivs = [x], []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = acts[-1] @ w + b
            derivs.append((z >= 0).astype(np.float64))
            acts.append(np.maximum(z, 0.0))
        z = acts[-1] @ self.weights[-1] + self.biases[-1]
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return acts, e / e.sum(axis=1, keepdims=True), derivs

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        _, y_hat, _ = self.forward(x)
        return float(-np.log(np.maximum((y * y_hat).sum(axis=1), LOSS_FLOOR)).sum())

    def gradients(self, x: np.ndarray, y: np.ndarray):
        acts, y_hat, derivs = self.forward(x)
        g = y_hat - y
        grads = []
        for layer in range(len(self.weights) - 1, -1, -1):
            grads.append((acts[layer].T @ g, g.sum(axis=0, keepdims=True)))
            if layer > 0:
                g = (g @ self.weights[layer].T) * derivs[layer - 1]
        return grads[::-1]

    def step(self, x: np.ndarray, y: np.ndarray, lr: float) -> None:
        for k, (dw, db) in enumerate(self.gradients(x, y)):
            self.weights[k] = self.weights[k] - lr * dw
            self.biases[k] = self.biases[k] - lr * db

    def predict(self, x: np.ndarray) -> np.ndarray:
        return argmax_ties_low(self.forward(x)[1])

    def fit(self, x: np.ndarray, y_onehot: np.ndarray, train_rows: np.ndarray, config: MlpConfig) -> None:
        for epoch in range(1, config.epochs + 1):
            order = train_rows[shuffle_order(train_rows.size, config.init_seed, epoch)]
            for rows in batches(order, config.batch_size):
                self.step(x[rows], y_onehot[rows], config.learning_rate)


def plain_features(blocks: Sequence[datasets.Block], standardize: bool = True) -> np.ndarray:
    """The feature matrix the providers jointly share, computed in the clear."""
    mats = [datasets.standardize(b.values) if standardize else b.values for b in blocks if b.values.shape[1]]
    return np.hstack(mats)
