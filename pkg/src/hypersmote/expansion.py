"""Incidence decoder, hyperedge attachment and hypergraph expansion.

The decoder scores a (node, hyperedge) pair as
``sigmoid(node_emb @ P @ edge_emb)``. It is trained jointly with a
one-layer convolution encoder to reconstruct the original incidence
matrix under a summed binary cross-entropy, then frozen. Each synthetic
node is attached to exactly one existing hyperedge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .hgconv import HGConvLayer, Split, conv
from .hypercore import Hypergraph
from .oversample import AugmentationPlan
from .tensor import Adam, Tensor

log = logging.getLogger(__name__)

VARIANTS = ("decoder", "random", "closest_node", "closest_hyperedge")
_ALIASES = {
    "decoder_argmax": "decoder",
    "closest-node": "closest_node",
    "closest-hyperedge": "closest_hyperedge",
}


def normalize_variant(name: str) -> str:
    v = _ALIASES.get(name, name).replace("-", "_")
    if v not in VARIANTS:
        raise ValueError(f"unknown attachment variant {name!r}; choose from {VARIANTS}")
    return v


@dataclass
class DecoderParams:
    p: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.ndim != 2 or self.p.shape[0] != self.p.shape[1]:
            raise ValueError(f"projection must be square, got {self.p.shape}")
        if not np.all(np.isfinite(self.p)):
            raise ValueError("projection has non-finite entries")

    @property
    def dim(self) -> int:
        return self.p.shape[0]


def decoder_score(dec: DecoderParams, node_emb, edge_emb) -> float:
    node_emb = np.asarray(node_emb, dtype=np.float64)
    edge_emb = np.asarray(edge_emb, dtype=np.float64)
    if node_emb.shape != (dec.dim,) or edge_emb.shape != (dec.dim,):
        raise T.ShapeError(f"embeddings must have shape ({dec.dim},)")
    return float(_open_unit(T.sigmoid_array(node_emb @ dec.p @ edge_emb)))


def decoder_logits(dec: DecoderParams, node_embs: np.ndarray, edge_embs: np.ndarray) -> np.ndarray:
    """Pre-sigmoid scores, shape ``(len(node_embs), len(edge_embs))``."""
    node_embs, edge_embs = np.atleast_2d(node_embs), np.atleast_2d(edge_embs)
    if node_embs.shape[1] != dec.dim or edge_embs.shape[1] != dec.dim:
        raise T.ShapeError(f"embeddings must have {dec.dim} columns")
    return node_embs @ dec.p @ edge_embs.T


def decoder_scores(dec: DecoderParams, node_embs: np.ndarray, edge_embs: np.ndarray) -> np.ndarray:
    """Matrix of probabilities, shape ``(len(node_embs), len(edge_embs))``."""
    return _open_unit(T.sigmoid_array(decoder_logits(dec, node_embs, edge_embs)))


def _open_unit(p):
    # keep saturated float64 sigmoids strictly inside (0, 1)
    return np.clip(p, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)


@dataclass
class DecoderFit:
    encoder: HGConvLayer
    decoder: DecoderParams
    node_emb: np.ndarray
    edge_emb: np.ndarray
    losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def reconstruct(self) -> np.ndarray:
        """Predicted incidence probabilities, shape ``(|E|, |V|)``."""
        return decoder_scores(self.decoder, self.node_emb, self.edge_emb).T


def _reconstruction_loss(encoder, p, g, x, target, mask):
    node_emb, edge_emb = conv(encoder, g, x)
    # (|E|, |V|) matrix of node_emb[v] @ p @ edge_emb[e]
    logits = T.matmul(edge_emb, T.transpose(T.matmul(node_emb, p)))
    return T.bce_with_logits_loss(logits, target, mask), node_emb, edge_emb


def train_decoder(
    g: Hypergraph,
    x,
    hidden_dim: int = 64,
    epochs: int = 200,
    seed: int = 0,
    lr: float = 0.01,
    negative_ratio: float | None = None,
) -> DecoderFit:
    """Fit encoder and projection to the incidence matrix of ``g``.

    The loss sums over every (hyperedge, node) pair. With
    ``negative_ratio`` set, each epoch instead keeps all positive pairs
    and a fresh uniform sample of ``negative_ratio`` zeros per positive.
    Bilinear scores are computed hyperedge-major, matching the incidence
    orientation. Non-convergence is not an error; inspect ``losses``.
    """
    if g.num_hyperedges < 1:
        raise ValueError("hypergraph has no hyperedges")
    rng = np.random.default_rng(seed)
    x = sp.csr_matrix(x) if not sp.issparse(x) else x
    encoder = HGConvLayer.init(x.shape[1], hidden_dim, rng)
    bound = np.sqrt(1.0 / hidden_dim)
    p = Tensor.param(rng.uniform(-bound, bound, size=(hidden_dim, hidden_dim)))
    params = encoder.params() + [p]
    opt = Adam(params, lr=lr)
    target = g.dense().astype(np.float64)
    sparse_target = sp.csr_matrix(target)

    losses = []
    for _ in range(epochs):
        mask = None
        if negative_ratio is not None:
            mask = _negative_sample_mask(target, negative_ratio, rng)
        with T.Tape() as tape:
            loss, _, _ = _reconstruction_loss(encoder, p, g, x, sparse_target, mask)
        losses.append(loss.item())
        opt.step(tape.gradient(loss, params))

    loss, node_emb, edge_emb = _reconstruction_loss(encoder, p, g, x, sparse_target, None)
    losses.append(loss.item())
    log.info("decoder trained: final summed BCE %.4f over %d epochs", losses[-1], epochs)
    return DecoderFit(encoder, DecoderParams(p.data.copy()), node_emb.data, edge_emb.data, losses)


def _negative_sample_mask(target: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    mask = target.copy()
    zeros = np.flatnonzero(target.ravel() == 0)
    k = min(zeros.size, int(round(ratio * target.sum())))
    mask.ravel()[rng.choice(zeros, size=k, replace=False)] = 1.0
    return mask


def _argmax_first(scores: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the smallest id on ties
    return np.argmax(scores, axis=1)


def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(axis=1)[:, None] - 2.0 * a @ b.T + (b * b).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def attach_embeddings(
    variant: str,
    g: Hypergraph,
    node_embs: np.ndarray,
    edge_embs: np.ndarray,
    generated: np.ndarray,
    decoder: DecoderParams | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Hyperedge id for each row of ``generated``.

    ``node_embs``/``edge_embs`` describe the ORIGINAL hypergraph only, so
    earlier synthetic nodes never influence later attachments.
    """
    variant = normalize_variant(variant)
    if g.num_hyperedges == 0:
        raise ValueError("no hyperedges to attach to")
    generated = np.atleast_2d(np.asarray(generated, dtype=np.float64))
    if variant == "decoder":
        if decoder is None:
            raise ValueError("decoder variant needs trained DecoderParams")
        # sigmoid is monotone; ranking logits avoids ties from saturation at 1.0
        return _argmax_first(decoder_logits(decoder, generated, edge_embs))
    if variant == "random":
        rng = np.random.default_rng(seed)
        return rng.integers(0, g.num_hyperedges, size=generated.shape[0])
    if variant == "closest_hyperedge":
        return np.argmin(_sq_dist(generated, np.asarray(edge_embs)), axis=1)
    # closest_node: nearest original node that has a hyperedge
    candidates = np.flatnonzero(g.node_degrees > 0)
    d = _sq_dist(generated, np.asarray(node_embs)[candidates])
    nearest = candidates[np.argmin(d, axis=1)]
    return np.array([g.incident(int(v))[0] for v in nearest], dtype=np.int64)


def attach(
    variant: str,
    g: Hypergraph,
    node_embs: np.ndarray,
    edge_embs: np.ndarray,
    generated,
    decoder: DecoderParams | None = None,
    seed: int = 0,
) -> int:
    """Single-entry form of :func:`attach_embeddings`."""
    return int(attach_embeddings(variant, g, node_embs, edge_embs, generated, decoder, seed)[0])


def attach_plan(
    plan: AugmentationPlan,
    variant: str,
    g: Hypergraph,
    node_embs: np.ndarray,
    edge_embs: np.ndarray,
    decoder: DecoderParams | None = None,
    seed: int = 0,
) -> AugmentationPlan:
    plan.attached = attach_embeddings(variant, g, node_embs, edge_embs, plan.embeddings, decoder, seed)
    plan.meta["variant"] = normalize_variant(variant)
    return plan


@dataclass
class Expanded:
    hypergraph: Hypergraph
    features: np.ndarray
    labels: np.ndarray
    split: Split
    num_original: int


def expand(g: Hypergraph, features: np.ndarray, labels, split: Split, plan: AugmentationPlan) -> Expanded:
    """Append every plan entry as a degree-1 node and add it to the training split.

    New feature rows come from ``plan.features`` (falling back to
    ``plan.embeddings`` when the plan was built in input-feature space).
    """
    if len(plan) == 0:
        raise ValueError("empty augmentation plan")
    if plan.attached is None:
        raise ValueError("plan has no attachments; call attach_plan first")
    new_rows = plan.features if plan.features is not None else plan.embeddings
    features = np.asarray(features, dtype=np.float64)
    if new_rows.shape[1] != features.shape[1]:
        raise ValueError(f"plan feature width {new_rows.shape[1]} != bundle width {features.shape[1]}")
    g2 = g.append_nodes(plan.attached)
    new_ids = np.arange(g.num_nodes, g2.num_nodes)
    return Expanded(
        hypergraph=g2,
        features=np.vstack([features, new_rows]),
        labels=np.concatenate([np.asarray(labels, dtype=np.int64), plan.labels]),
        split=Split(np.concatenate([split.train, new_ids]), split.val.copy(), split.test.copy()),
        num_original=g.num_nodes,
    )
