"""Two-step hypergraph convolution and the node classifier built on it.

A layer first projects node rows and mean-pools them into hyperedge
embeddings, then projects hyperedge rows and mean-pools them back onto
nodes::

    E_edge = mean_{v in e} relu(x_v W1 + b1)
    E_node = mean_{e ∋ v} relu(E_edge_e W2 + b2)

Isolated nodes receive a zero vector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .evalmetrics import accuracy, macro_f1
from .hypercore import Hypergraph
from .tensor import Adam, Linear, Tensor

log = logging.getLogger(__name__)


@dataclass
class HGConvLayer:
    w1: Linear  # node -> hyperedge message
    w2: Linear  # hyperedge -> node message

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator) -> "HGConvLayer":
        return cls(Linear.init(d_in, d_out, rng), Linear.init(d_out, d_out, rng))

    def params(self) -> list[Tensor]:
        return self.w1.params() + self.w2.params()

    def weights(self) -> list[Tensor]:
        return [self.w1.weight, self.w2.weight]


def edge_step(layer: HGConvLayer, g: Hypergraph, x) -> Tensor:
    x = x if sp.issparse(x) else T._as_tensor(x)
    if x.shape[0] != g.num_nodes:
        raise T.ShapeError(f"x has {x.shape[0]} rows, hypergraph has {g.num_nodes} nodes")
    return T.group_mean(T.relu(layer.w1(x)), g.edge_pool)


def node_step(layer: HGConvLayer, g: Hypergraph, e) -> Tensor:
    e = T._as_tensor(e)
    if e.shape[0] != g.num_hyperedges:
        raise T.ShapeError(f"e has {e.shape[0]} rows, hypergraph has {g.num_hyperedges} hyperedges")
    return T.group_mean(T.relu(layer.w2(e)), g.node_pool)


def conv(layer: HGConvLayer, g: Hypergraph, x) -> tuple[Tensor, Tensor]:
    """Full layer; returns ``(node_embeddings, hyperedge_embeddings)``."""
    e = edge_step(layer, g, x)
    return node_step(layer, g, e), e


@dataclass
class ClassifierModel:
    layers: list[HGConvLayer]
    head: Linear
    dropout: float = 0.5
    input_dropout: bool = True

    @classmethod
    def init(
        cls,
        d_in: int,
        num_classes: int,
        rng: np.random.Generator,
        hidden_dim: int = 64,
        depth: int = 2,
        dropout: float = 0.5,
        input_dropout: bool = True,
    ) -> "ClassifierModel":
        dims = [d_in] + [hidden_dim] * depth
        layers = [HGConvLayer.init(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
        return cls(layers, Linear.init(hidden_dim, num_classes, rng), dropout, input_dropout)

    @property
    def hidden_dim(self) -> int:
        return self.head.d_in

    @property
    def num_classes(self) -> int:
        return self.head.d_out

    def params(self) -> list[Tensor]:
        out = [p for layer in self.layers for p in layer.params()]
        return out + self.head.params()

    def weights(self) -> list[Tensor]:
        return [w for layer in self.layers for w in layer.weights()] + [self.head.weight]

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params()]

    def load_state(self, state: list[np.ndarray]) -> None:
        for p, a in zip(self.params(), state):
            p.data = a.copy()


def forward(
    model: ClassifierModel,
    g: Hypergraph,
    x,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Return ``(logits, pre-head node embeddings)``.

    Dropout is applied to every layer's input when ``training`` is set,
    which requires ``rng``.
    """
    h = x if sp.issparse(x) else T._as_tensor(x)
    for i, layer in enumerate(model.layers):
        if training and (i > 0 or model.input_dropout):
            h = T.dropout(T._as_tensor(h.toarray()) if sp.issparse(h) else h, model.dropout, rng)
        h, _ = conv(layer, g, h)
    emb = h
    if training:
        h = T.dropout(h, model.dropout, rng)
    return model.head(h), emb


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)

    def validate(self, num_nodes: int) -> None:
        parts = [self.train, self.val, self.test]
        allidx = np.concatenate(parts)
        if allidx.size and (allidx.min() < 0 or allidx.max() >= num_nodes):
            raise ValueError("split index out of range")
        if np.unique(allidx).size != allidx.size:
            raise ValueError("split parts overlap or contain duplicates")

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


@dataclass
class TrainResult:
    model: ClassifierModel
    best_epoch: int
    history: list[dict] = field(default_factory=list)


def predict(model: ClassifierModel, g: Hypergraph, x) -> np.ndarray:
    logits, _ = forward(model, g, x)
    return logits.data.argmax(axis=1)


def train_classifier(
    model: ClassifierModel,
    g: Hypergraph,
    x,
    labels,
    split: Split,
    epochs: int = 200,
    seed: int = 0,
    lr: float = 0.01,
    weight_decay: float = 5e-4,
) -> TrainResult:
    """Softmax cross-entropy on the training rows with Adam.

    The parameters with the best validation Macro-F1 (earliest on ties)
    are restored into ``model`` at the end. With an empty validation
    split the last epoch is kept.
    """
    labels = np.asarray(labels, dtype=np.int64)
    split.validate(g.num_nodes)
    if split.train.size == 0:
        raise ValueError("empty training split")
    x = x if sp.issparse(x) else T._as_tensor(x)
    rng = np.random.default_rng(seed)
    mask = np.zeros(g.num_nodes, dtype=bool)
    mask[split.train] = True
    params = model.params()
    opt = Adam(params, lr=lr, weight_decay=weight_decay, decay=model.weights())

    best_f1, best_epoch, best_state = -1.0, -1, model.state()
    history = []
    for epoch in range(epochs):
        with T.Tape() as tape:
            logits, _ = forward(model, g, x, training=True, rng=rng)
            loss = T.softmax_ce_loss(logits, labels, mask)
        opt.step(tape.gradient(loss, params))

        pred = predict(model, g, x)
        rec = {
            "epoch": epoch,
            "loss": loss.item(),
            "train_acc": accuracy(pred[split.train], labels[split.train]),
        }
        if split.val.size:
            rec["val_acc"] = accuracy(pred[split.val], labels[split.val])
            rec["val_macro_f1"] = macro_f1(pred[split.val], labels[split.val], model.num_classes, warn=False)
            if rec["val_macro_f1"] > best_f1:
                best_f1, best_epoch, best_state = rec["val_macro_f1"], epoch, model.state()
        history.append(rec)

    if split.val.size and best_epoch >= 0:
        model.load_state(best_state)
    else:
        best_epoch = epochs - 1
    log.debug("best epoch %d (val macro-F1 %.4f)", best_epoch, best_f1)
    return TrainResult(model, best_epoch, history)
