"""Minority selection, augmentation counts and synthetic node embeddings.

A synthetic node for target ``t`` interpolates between the target and the
mean of its hypergraph neighbours::

    z = tau * E[t] + (1 - tau) * mean(E[u] for u in N(t))

and inherits the target's label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .hypercore import Hypergraph, neighbors

DEFAULT_TAU = 0.3
JITTER_SCALE = 0.01


@dataclass(frozen=True)
class CountPolicy:
    """``fixed(n)`` or ``adaptive`` augmentation counts per minority class."""

    mode: str = "adaptive"
    n: int = 3

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown count mode {self.mode!r}")
        if self.mode == "fixed" and self.n < 1:
            raise ValueError("fixed count must be >= 1")

    @classmethod
    def fixed(cls, n: int) -> "CountPolicy":
        return cls("fixed", n)

    @classmethod
    def adaptive(cls) -> "CountPolicy":
        return cls("adaptive")

    @classmethod
    def parse(cls, text: str) -> "CountPolicy":
        text = text.strip().lower()
        if text == "adaptive":
            return cls.adaptive()
        try:
            return cls.fixed(int(text.removeprefix("fixed").strip("():= ")))
        except ValueError:
            raise ValueError(f"count policy must be 'adaptive' or an integer, got {text!r}") from None

    def __str__(self) -> str:
        return "adaptive" if self.mode == "adaptive" else f"fixed({self.n})"


def class_counts(labels, idx, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return np.bincount(labels[np.asarray(idx, dtype=np.int64)], minlength=num_classes)


def select_minority(labels, train_idx, k: int = 3, num_classes: int | None = None) -> list[int]:
    """The ``k`` classes with the fewest training labels, ascending by count.

    Ties go to the smaller class id. Classes with zero training nodes
    count as 0.
    """
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("empty training split")
    num_classes = int(labels.max()) + 1 if num_classes is None else num_classes
    if not 1 <= k <= num_classes:
        raise ValueError(f"k={k} must lie in [1, {num_classes}]")
    counts = class_counts(labels, train_idx, num_classes)
    order = sorted(range(num_classes), key=lambda c: (counts[c], c))
    return order[:k]


def augmentation_count(policy: CountPolicy, class_counts: Mapping[int, int], minority) -> dict[int, int]:
    """Augmentations per training node for each minority class.

    Adaptive: ``max(1, round(N_max / N_c) - 1)`` with ``N_max`` the
    largest count among all classes in ``class_counts``.
    """
    if policy.mode == "fixed":
        return {int(c): policy.n for c in minority}
    n_max = max(class_counts.values())
    out = {}
    for c in minority:
        n_c = class_counts[c]
        if n_c < 1:
            raise ValueError(f"class {c} has no training nodes")
        out[int(c)] = max(1, int(round(n_max / n_c)) - 1)
    return out


def augmentation_totals(policy: CountPolicy, class_counts: Mapping[int, int], minority) -> dict[int, int]:
    """Total synthetic nodes per minority class.

    Fixed mode is ``n * N_c``. Adaptive mode tops each class up to the
    largest class count, ``N_max - N_c``, but never below one synthetic
    node per training node, so classes with ``N_c > N_max / 2`` end up
    at ``2 * N_c``. When ``N_max / N_c`` is an integer this equals
    ``N_c`` times the per-node count of :func:`augmentation_count`.
    """
    per_node = augmentation_count(policy, class_counts, minority)
    if policy.mode == "fixed":
        return {c: n * int(class_counts[c]) for c, n in per_node.items()}
    n_max = max(class_counts.values())
    return {c: max(int(class_counts[c]), n_max - int(class_counts[c])) for c in per_node}


def spread(total: int, num_targets: int) -> list[int]:
    """Split ``total`` over targets as evenly as possible, extras to the front."""
    base, extra = divmod(total, num_targets)
    return [base + (i < extra) for i in range(num_targets)]


def generate_embedding(g: Hypergraph, emb: np.ndarray, target: int, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Interpolate the target's row with its neighbourhood mean.

    Falls back to the target's own row when it has no neighbours.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    emb = np.asarray(emb, dtype=np.float64)
    nbrs = neighbors(g, target).neighbors
    if not nbrs:
        return emb[target].copy()
    idx = np.fromiter(sorted(nbrs), dtype=np.int64)
    return tau * emb[target] + (1.0 - tau) * emb[idx].mean(axis=0)


@dataclass
class AugmentationPlan:
    """One row per synthetic node.

    ``embeddings`` live in the space used for hyperedge attachment;
    ``features`` (optional) are the same interpolation applied to the
    classifier's input features. ``attached`` is filled by
    :func:`hypersmote.expansion.attach_plan`.
    """

    targets: np.ndarray
    embeddings: np.ndarray
    labels: np.ndarray
    tau: float
    features: np.ndarray | None = None
    attached: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.targets.size)

    def label_histogram(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)


def _jitter_std(space: np.ndarray) -> np.ndarray:
    return JITTER_SCALE * space.std(axis=0)


def build_plan(
    g: Hypergraph,
    emb: np.ndarray,
    labels,
    train_idx,
    minority,
    totals: Mapping[int, int],
    tau: float = DEFAULT_TAU,
    seed: int = 0,
    features: np.ndarray | None = None,
    jitter: bool = True,
) -> AugmentationPlan:
    """Emit ``totals[c]`` synthetic nodes for each minority class ``c``.

    The total is spread over the class's training nodes with
    :func:`spread` in ascending id order, so ``fixed(n)`` totals give
    exactly ``n`` per node. Entries are ordered by (target id, repetition). Repetitions after the
    first get zero-mean Gaussian jitter with per-dimension std of
    ``0.01 * std`` of the corresponding space, unless ``jitter`` is off.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    minority = [int(c) for c in minority]
    if not minority:
        raise ValueError("no minority classes given")
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.sort(np.asarray(train_idx, dtype=np.int64))
    emb = np.asarray(emb, dtype=np.float64)
    for c in minority:
        if not np.any(labels[train_idx] == c):
            raise ValueError(f"minority class {c} has no training nodes")

    reps = {}
    for c in minority:
        members = [int(v) for v in train_idx if labels[v] == c]
        reps.update(zip(members, spread(int(totals.get(c, 0)), len(members))))
    targets = sorted(reps)
    rng = np.random.default_rng(seed)
    e_std = _jitter_std(emb)
    f_std = _jitter_std(features) if features is not None else None

    rows_t, rows_e, rows_f = [], [], []
    for v in targets:
        z = generate_embedding(g, emb, v, tau)
        f = generate_embedding(g, features, v, tau) if features is not None else None
        for rep in range(reps[v]):
            ze, fe = z, f
            if jitter and rep > 0:
                ze = z + rng.normal(size=z.shape) * e_std
                if f is not None:
                    fe = f + rng.normal(size=f.shape) * f_std
            rows_t.append(v)
            rows_e.append(ze)
            if f is not None:
                rows_f.append(fe)

    targets_a = np.asarray(rows_t, dtype=np.int64)
    return AugmentationPlan(
        targets=targets_a,
        embeddings=np.asarray(rows_e, dtype=np.float64).reshape(len(rows_t), emb.shape[1]),
        labels=labels[targets_a],
        tau=float(tau),
        features=None if features is None else np.asarray(rows_f).reshape(len(rows_t), features.shape[1]),
        meta={"seed": int(seed), "jitter": bool(jitter), "totals": {str(k): int(n) for k, n in totals.items()}},
    )
