"""Single-file binary artifacts.

Layout::

    b"HSMK1" | uint32 LE header length | JSON header | array payloads | uint32 LE CRC32

The JSON header carries ``version``, ``kind``, free-form ``meta`` and an
``arrays`` table (name, little-endian dtype, shape, offset, nbytes) into
the payload section. The CRC covers every byte before the trailer.
Headers are written with sorted keys so identical inputs give identical
bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .expansion import Expanded
from .hgconv import ClassifierModel, HGConvLayer, Split
from .hypercore import Hypergraph
from .ingest import DatasetBundle
from .oversample import AugmentationPlan
from .tensor import Linear, Tensor

MAGIC = b"HSMK1"
VERSION = 1
KINDS = ("bundle", "plan", "expanded", "checkpoint")


class ArtifactError(ValueError):
    pass


def write_container(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    if kind not in KINDS:
        raise ArtifactError(f"unknown artifact kind {kind!r}")
    table, blobs, offset = [], [], 0
    for name in arrays:
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"version": VERSION, "kind": kind, "meta": meta, "arrays": table},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def read_container(path: str | Path, expect_kind: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise ArtifactError(f"{path}: not an HSMK artifact")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ArtifactError(f"{path}: checksum mismatch")
    (hlen,) = struct.unpack("<I", body[5:9])
    header = json.loads(body[9:9 + hlen].decode("utf-8"))
    if header.get("version") != VERSION:
        raise ArtifactError(f"{path}: unsupported artifact version {header.get('version')!r}")
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise ArtifactError(f"{path}: expected a {expect_kind} artifact, found {kind}")
    payload = body[9 + hlen:]
    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return kind, header["meta"], arrays


# ---------------------------------------------------------------------------
# hypergraph / bundle


def _graph_arrays(g: Hypergraph) -> dict[str, np.ndarray]:
    inc = g.incidence
    return {"incidence_indptr": inc.indptr.astype(np.int64), "incidence_indices": inc.indices.astype(np.int64)}


def _graph_from(arrays: dict, num_nodes: int) -> Hypergraph:
    indptr, indices = arrays["incidence_indptr"], arrays["incidence_indices"]
    inc = sp.csr_matrix(
        (np.ones(indices.size, dtype=np.int8), indices.astype(np.int32), indptr.astype(np.int32)),
        shape=(indptr.size - 1, num_nodes),
    )
    return Hypergraph(num_nodes, inc)


def _bundle_payload(g, features, labels, split) -> dict[str, np.ndarray]:
    return {
        **_graph_arrays(g),
        "features": np.asarray(features, dtype=np.float64),
        "labels": np.asarray(labels, dtype=np.int64),
        "split_train": split.train,
        "split_val": split.val,
        "split_test": split.test,
    }


def save_bundle(path, bundle: DatasetBundle) -> None:
    meta = {"num_nodes": bundle.hypergraph.num_nodes, "class_names": list(bundle.class_names), "dataset": bundle.meta}
    write_container(path, "bundle", meta, _bundle_payload(bundle.hypergraph, bundle.features, bundle.labels, bundle.split))


def load_bundle(path) -> DatasetBundle:
    _, meta, a = read_container(path, "bundle")
    return DatasetBundle(
        hypergraph=_graph_from(a, meta["num_nodes"]),
        features=a["features"],
        labels=a["labels"],
        split=Split(a["split_train"], a["split_val"], a["split_test"]),
        class_names=meta["class_names"],
        meta=meta["dataset"],
    )


def save_expanded(path, expanded: Expanded, class_names=(), meta: dict | None = None) -> None:
    head = {
        "num_nodes": expanded.hypergraph.num_nodes,
        "num_original": expanded.num_original,
        "class_names": list(class_names),
        "dataset": dict(meta or {}),
    }
    payload = _bundle_payload(expanded.hypergraph, expanded.features, expanded.labels, expanded.split)
    write_container(path, "expanded", head, payload)


def load_expanded(path) -> tuple[Expanded, list[str], dict]:
    _, meta, a = read_container(path, "expanded")
    ex = Expanded(
        hypergraph=_graph_from(a, meta["num_nodes"]),
        features=a["features"],
        labels=a["labels"],
        split=Split(a["split_train"], a["split_val"], a["split_test"]),
        num_original=meta["num_original"],
    )
    return ex, meta["class_names"], meta["dataset"]


def load_trainable(path) -> DatasetBundle:
    """Load either a bundle or an expanded bundle as a :class:`DatasetBundle`."""
    kind, meta, a = read_container(path)
    if kind not in ("bundle", "expanded"):
        raise ArtifactError(f"{path}: expected a bundle or expanded artifact, found {kind}")
    info = dict(meta["dataset"])
    if kind == "expanded":
        info["num_original"] = meta["num_original"]
    return DatasetBundle(
        hypergraph=_graph_from(a, meta["num_nodes"]),
        features=a["features"],
        labels=a["labels"],
        split=Split(a["split_train"], a["split_val"], a["split_test"]),
        class_names=meta["class_names"],
        meta=info,
    )


# ---------------------------------------------------------------------------
# plan


def save_plan(path, plan: AugmentationPlan) -> None:
    arrays = {"targets": plan.targets, "embeddings": plan.embeddings, "labels": plan.labels}
    if plan.features is not None:
        arrays["features"] = plan.features
    if plan.attached is not None:
        arrays["attached"] = np.asarray(plan.attached, dtype=np.int64)
    write_container(path, "plan", {"tau": plan.tau, "plan": plan.meta}, arrays)


def load_plan(path, bundle: DatasetBundle | None = None) -> AugmentationPlan:
    """Load a plan; with ``bundle`` given, check it fits that bundle."""
    _, meta, a = read_container(path, "plan")
    plan = AugmentationPlan(
        targets=a["targets"],
        embeddings=a["embeddings"],
        labels=a["labels"],
        tau=meta["tau"],
        features=a.get("features"),
        attached=a.get("attached"),
        meta=meta["plan"],
    )
    if bundle is not None:
        check_plan(plan, bundle)
    return plan


def check_plan(plan: AugmentationPlan, bundle: DatasetBundle) -> None:
    width = bundle.features.shape[1]
    rows = plan.features if plan.features is not None else plan.embeddings
    if rows.shape[1] != width:
        raise ArtifactError(f"plan feature width {rows.shape[1]} does not match bundle width {width}")
    if plan.targets.size and plan.targets.max() >= bundle.hypergraph.num_nodes:
        raise ArtifactError("plan targets a node outside the bundle")
    if plan.attached is not None and plan.attached.size and plan.attached.max() >= bundle.hypergraph.num_hyperedges:
        raise ArtifactError("plan attaches to a hyperedge outside the bundle")


# ---------------------------------------------------------------------------
# checkpoint


def save_checkpoint(path, model: ClassifierModel, meta: dict | None = None) -> None:
    arch = {
        "d_in": model.layers[0].w1.d_in,
        "hidden_dim": model.hidden_dim,
        "depth": len(model.layers),
        "num_classes": model.num_classes,
        "dropout": model.dropout,
    }
    arrays = {f"param_{i:03d}": p.data for i, p in enumerate(model.params())}
    write_container(path, "checkpoint", {"arch": arch, "run": dict(meta or {})}, arrays)


def load_checkpoint(path) -> tuple[ClassifierModel, dict]:
    _, meta, a = read_container(path, "checkpoint")
    arch = meta["arch"]
    params = [a[k] for k in sorted(a)]

    def lin(it):
        return Linear(Tensor.param(next(it)), Tensor.param(next(it)))

    it = iter(params)
    layers = [HGConvLayer(lin(it), lin(it)) for _ in range(arch["depth"])]
    model = ClassifierModel(layers, lin(it), arch["dropout"])
    if model.num_classes != arch["num_classes"] or model.hidden_dim != arch["hidden_dim"]:
        raise ArtifactError(f"{path}: checkpoint architecture does not match its parameters")
    return model, meta["run"]
