"""Dataset loading, split protocols and a synthetic imbalanced generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hgconv import Split
from .hypercore import Hypergraph, build

log = logging.getLogger(__name__)

PROTOCOLS = {
    "cora": (140, 500, 1000),
    "cora-ca": (140, 500, 1000),
    "citeseer": (120, 500, 1015),
}


class LoaderError(ValueError):
    pass


@dataclass
class DatasetBundle:
    hypergraph: Hypergraph
    features: np.ndarray
    labels: np.ndarray
    split: Split
    class_names: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.class_names) if self.class_names else int(self.labels.max()) + 1

    def train_counts(self) -> np.ndarray:
        return np.bincount(self.labels[self.split.train], minlength=self.num_classes)


@dataclass
class CitationData:
    """Parsed citation files before a split is attached."""

    hypergraph: Hypergraph
    features: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    paper_ids: list[str]
    skipped_citations: int = 0
    rule: str = "cocitation"


def _read_content(path: Path) -> tuple[list[str], np.ndarray, list[str]]:
    ids, rows, names = [], [], []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise LoaderError(f"{path}:{lineno}: expected id, features, label")
            feats = parts[1:-1]
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise LoaderError(f"{path}:{lineno}: feature width {len(feats)} != {width}")
            try:
                row = np.array(feats, dtype=np.float64)
            except ValueError:
                raise LoaderError(f"{path}:{lineno}: non-numeric feature value") from None
            if not np.all((row == 0) | (row == 1)):
                raise LoaderError(f"{path}:{lineno}: features must be 0/1")
            ids.append(parts[0])
            rows.append(row)
            names.append(parts[-1])
    if not ids:
        raise LoaderError(f"{path}: no records")
    return ids, np.vstack(rows), names


def _read_cites(path: Path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise LoaderError(f"{path}:{lineno}: expected '<cited>\\t<citing>'")
            pairs.append((parts[0], parts[1]))
    return pairs


def read_hyperedge_list(path: str | Path, num_nodes: int) -> list[list[int]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append([int(t) for t in line.split()])
            except ValueError:
                raise LoaderError(f"{path}:{lineno}: node ids must be integers") from None
            if any(not 0 <= v < num_nodes for v in out[-1]):
                raise LoaderError(f"{path}:{lineno}: node id outside [0, {num_nodes})")
    return out


def load_citation(
    content: str | Path,
    cites: str | Path | None = None,
    rule: str = "cocitation",
    hyperedges: str | Path | None = None,
) -> CitationData:
    """Parse a ``.content`` file and build hyperedges.

    ``cocitation``: for each paper ``p``, one hyperedge ``{p} ∪ {q : q cites p}``,
    kept only with at least 2 members. ``coauthorship``: hyperedges are
    read from a prebuilt list file (one hyperedge per line, node ids are
    row positions in the content file). Citations naming unknown papers are
    skipped and counted.
    """
    content = Path(content)
    if not content.exists():
        raise FileNotFoundError(f"content file not found: {content}")
    ids, x, names = _read_content(content)
    classes = sorted(set(names))
    labels = np.array([classes.index(n) for n in names], dtype=np.int64)
    index = {pid: i for i, pid in enumerate(ids)}

    skipped = 0
    if rule == "cocitation":
        if cites is None or not Path(cites).exists():
            raise FileNotFoundError(f"cites file not found: {cites}")
        citers: dict[int, set[int]] = {}
        for cited, citing in _read_cites(Path(cites)):
            if cited not in index or citing not in index:
                skipped += 1
                continue
            citers.setdefault(index[cited], set()).add(index[citing])
        edges = []
        for p in sorted(citers):
            members = citers[p] | {p}
            if len(members) >= 2:
                edges.append(sorted(members))
    elif rule in ("coauthorship", "coauthorship-proxy"):
        if hyperedges is None or not Path(hyperedges).exists():
            raise FileNotFoundError(f"hyperedge list file not found: {hyperedges}")
        edges = read_hyperedge_list(hyperedges, len(ids))
    else:
        raise ValueError(f"unknown hyperedge rule {rule!r}")
    if skipped:
        log.warning("skipped %d citations with unknown paper ids", skipped)
    g = build(len(ids), edges)
    return CitationData(g, x, labels, classes, ids, skipped, rule)


def _stratified_counts(class_sizes: np.ndarray, n: int) -> np.ndarray:
    """Proportional allocation by largest remainder, at least one per class."""
    k = class_sizes.size
    if n < k:
        raise ValueError(f"cannot stratify {n} samples over {k} classes")
    quota = class_sizes / class_sizes.sum() * n
    alloc = np.maximum(np.floor(quota).astype(np.int64), 1)
    alloc = np.minimum(alloc, class_sizes)
    while alloc.sum() < n:
        room = alloc < class_sizes
        rem = np.where(room, quota - alloc, -np.inf)
        alloc[int(np.argmax(rem))] += 1
    while alloc.sum() > n:
        over = np.where(alloc > 1, alloc - quota, -np.inf)
        alloc[int(np.argmax(over))] -= 1
    return alloc


def make_split(labels, protocol: tuple[int, int, int], seed: int = 0) -> Split:
    """Class-proportional training sample, then random val/test from the rest.

    Training counts follow the class distribution, so the imbalance of
    the full label set carries into the training split.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_train, n_val, n_test = protocol
    if n_train + n_val + n_test > labels.size:
        raise ValueError(f"protocol {protocol} needs {sum(protocol)} nodes, have {labels.size}")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    sizes = np.array([(labels == c).sum() for c in classes])
    alloc = _stratified_counts(sizes, n_train)
    train = []
    for c, k in zip(classes, alloc):
        pool = np.flatnonzero(labels == c)
        train.append(rng.choice(pool, size=k, replace=False))
    train = np.sort(np.concatenate(train))
    rest = np.setdiff1d(np.arange(labels.size), train)
    rest = rng.permutation(rest)
    return Split(train, np.sort(rest[:n_val]), np.sort(rest[n_val:n_val + n_test]))


def citation_bundle(data: CitationData, protocol: tuple[int, int, int], seed: int = 0, name: str = "citation") -> DatasetBundle:
    split = make_split(data.labels, protocol, seed)
    return DatasetBundle(
        hypergraph=data.hypergraph,
        features=data.features,
        labels=data.labels,
        split=split,
        class_names=data.class_names,
        meta={
            "dataset": name,
            "rule": data.rule,
            "seed": int(seed),
            "protocol": list(protocol),
            "skipped_citations": int(data.skipped_citations),
        },
    )


def synth_imbalanced(
    counts,
    edge_size: int = 4,
    homophily: float = 0.9,
    dim: int = 16,
    seed: int = 0,
    num_edges: int | None = None,
    split_fractions: tuple[float, float] = (0.5, 0.25),
) -> DatasetBundle:
    """Class-conditioned Gaussian features on a random hypergraph.

    Class ``c`` has mean ``mu_c`` with ``|mu_c - mu_d| = 1`` for every
    pair (scaled simplex vertices) and unit isotropic noise. Each
    hyperedge is single-class with probability ``homophily`` (members drawn
    from one class chosen proportionally to class size), otherwise its
    members are drawn uniformly from all nodes. Every node is then placed
    into at least one hyperedge. Splits are class-stratified by
    ``split_fractions`` (train, val); the remainder is test.
    """
    counts = np.asarray(list(counts), dtype=np.int64)
    if counts.size < 2 or np.any(counts < 1):
        raise ValueError("need at least two classes, each with >= 1 node")
    if not 0.0 <= homophily <= 1.0:
        raise ValueError("homophily must lie in [0, 1]")
    if edge_size < 2 or dim < counts.size:
        raise ValueError("edge_size must be >= 2 and dim >= number of classes")
    rng = np.random.default_rng(seed)
    k = counts.size
    labels = np.repeat(np.arange(k), counts)
    n = labels.size
    means = np.zeros((k, dim))
    means[np.arange(k), np.arange(k)] = 1.0 / np.sqrt(2.0)
    x = means[labels] + rng.normal(size=(n, dim))

    members_of = [np.flatnonzero(labels == c) for c in range(k)]
    num_edges = num_edges if num_edges is not None else max(k, int(np.ceil(2 * n / edge_size)))
    edges, pure = [], []
    for _ in range(num_edges):
        if rng.random() < homophily:
            c = rng.choice(k, p=counts / n)
            pool = members_of[c]
            pure.append(True)
        else:
            pool = np.arange(n)
            pure.append(False)
        size = min(edge_size, pool.size)
        edges.append(sorted(rng.choice(pool, size=size, replace=False).tolist()))
    covered = np.zeros(n, dtype=bool)
    for e in edges:
        covered[e] = True
    for v in np.flatnonzero(~covered):
        # same-class hyperedge for uncovered nodes, respecting homophily
        cands = [i for i, e in enumerate(edges) if pure[i] and labels[e[0]] == labels[v]]
        if cands:
            edges[int(rng.choice(cands))].append(int(v))
        else:
            edges.append([int(v)])
            pure.append(True)

    f_train, f_val = split_fractions
    train, val, test = [], [], []
    for c in range(k):
        idx = rng.permutation(members_of[c])
        a = max(1, int(round(f_train * idx.size)))
        b = a + int(round(f_val * idx.size))
        train.append(idx[:a])
        val.append(idx[a:b])
        test.append(idx[b:])
    split = Split(*(np.sort(np.concatenate(p)) for p in (train, val, test)))
    return DatasetBundle(
        hypergraph=build(n, edges),
        features=x,
        labels=labels,
        split=split,
        class_names=[f"class{c}" for c in range(k)],
        meta={
            "dataset": "synthetic",
            "counts": counts.tolist(),
            "edge_size": edge_size,
            "homophily": homophily,
            "dim": dim,
            "seed": int(seed),
        },
    )


def parse_synth_spec(text: str) -> dict:
    """Parse ``classes=2,counts=40:4,edge_size=4,homophily=0.9,dim=16,seed=0``."""
    out: dict = {}
    for item in filter(None, (t.strip() for t in text.split(","))):
        key, _, value = item.partition("=")
        key = key.strip().replace("-", "_")
        if key == "counts":
            out["counts"] = [int(c) for c in value.split(":")]
        elif key in ("classes", "edge_size", "dim", "seed", "num_edges"):
            out[key] = int(value)
        elif key == "homophily":
            out[key] = float(value)
        else:
            raise ValueError(f"unknown synthetic option {key!r}")
    classes = out.pop("classes", None)
    if "counts" not in out:
        raise ValueError("synthetic spec needs counts=a:b:...")
    if classes is not None and classes != len(out["counts"]):
        raise ValueError("classes does not match the number of counts")
    return out


def normalize_rows(x: np.ndarray) -> np.ndarray:
    s = x.sum(axis=1, keepdims=True)
    return np.divide(x, s, out=np.zeros_like(x, dtype=np.float64), where=s != 0)
