"""End-to-end runs: decoder pretraining, augmentation, expansion, training.

Every stage is a function of (inputs, config, seed), so the CLI can stage
runs through artifacts and the acceptance suite can call them in-process.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import expansion, oversample
from .evalmetrics import EvalReport, evaluate
from .expansion import DecoderFit, Expanded
from .hgconv import ClassifierModel, predict, train_classifier
from .ingest import DatasetBundle, make_split, normalize_rows
from .oversample import AugmentationPlan, CountPolicy

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class RunConfig:
    tau: float = oversample.DEFAULT_TAU
    count: str = "adaptive"
    variant: str = "decoder"
    num_minority: int = 3
    jitter: bool = True
    hidden_dim: int = 64
    depth: int = 2
    dropout: float = 0.5
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4
    decoder_hidden: int = 64
    decoder_epochs: int = 1000
    decoder_lr: float = 0.01
    negative_ratio: float | None = None
    normalize_features: bool = False
    input_dropout: bool = False
    augment: bool = True
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        self.count_policy  # parses and range-checks the count
        expansion.normalize_variant(self.variant)
        for name in ("hidden_dim", "depth", "epochs", "decoder_hidden", "num_minority"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.decoder_epochs < 0:
            raise ValueError("decoder_epochs must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def count_policy(self) -> CountPolicy:
        return CountPolicy.parse(self.count)

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def describe(self) -> dict:
        d = asdict(self)
        d.pop("seeds")
        if not self.augment:
            for k in ("tau", "count", "variant", "jitter", "num_minority", "decoder_hidden",
                      "decoder_epochs", "decoder_lr", "negative_ratio"):
                d.pop(k)
        return d


def input_features(bundle: DatasetBundle, cfg: RunConfig) -> np.ndarray:
    x = np.asarray(bundle.features, dtype=np.float64)
    return normalize_rows(x) if cfg.normalize_features else x


def resplit(bundle: DatasetBundle, seed: int) -> DatasetBundle:
    """Same data with a fresh split under the bundle's protocol."""
    protocol = tuple(bundle.meta.get("protocol") or bundle.split.sizes())
    return replace(bundle, split=make_split(bundle.labels, protocol, seed), meta={**bundle.meta, "seed": int(seed)})


def pretrain_decoder(bundle: DatasetBundle, cfg: RunConfig, seed: int) -> DecoderFit:
    return expansion.train_decoder(
        bundle.hypergraph,
        input_features(bundle, cfg),
        hidden_dim=cfg.decoder_hidden,
        epochs=cfg.decoder_epochs,
        seed=seed,
        lr=cfg.decoder_lr,
        negative_ratio=cfg.negative_ratio,
    )


def make_plan(bundle: DatasetBundle, cfg: RunConfig, fit: DecoderFit, seed: int) -> AugmentationPlan:
    train_counts = bundle.train_counts()
    # at least one class stays majority, so two-class data gets one minority class
    k = min(cfg.num_minority, bundle.num_classes - 1)
    minority = oversample.select_minority(bundle.labels, bundle.split.train, k, bundle.num_classes)
    totals = oversample.augmentation_totals(cfg.count_policy, dict(enumerate(train_counts.tolist())), minority)
    log.info("minority classes %s, synthetic nodes per class %s", minority, totals)
    plan = oversample.build_plan(
        bundle.hypergraph,
        fit.node_emb,
        bundle.labels,
        bundle.split.train,
        minority,
        totals,
        tau=cfg.tau,
        seed=seed,
        features=input_features(bundle, cfg),
        jitter=cfg.jitter,
    )
    plan.meta.update({"minority": minority, "count_policy": str(cfg.count_policy)})
    return plan


def augment(
    bundle: DatasetBundle, cfg: RunConfig, seed: int, fit: DecoderFit | None = None
) -> tuple[AugmentationPlan, Expanded, DecoderFit]:
    """Pretrain the decoder (unless ``fit`` is given), build, attach, expand.

    The expanded feature matrix is in classifier-input space (row
    normalised when configured), so it must be trained with
    ``normalize_features`` disabled; :func:`train_eval` handles this.
    """
    fit = fit if fit is not None else pretrain_decoder(bundle, cfg, seed)
    plan = make_plan(bundle, cfg, fit, seed)
    expansion.attach_plan(plan, cfg.variant, bundle.hypergraph, fit.node_emb, fit.edge_emb, fit.decoder, seed)
    expanded = expansion.expand(bundle.hypergraph, input_features(bundle, cfg), bundle.labels, bundle.split, plan)
    return plan, expanded, fit


@dataclass
class RunOutcome:
    report: EvalReport
    model: ClassifierModel
    best_epoch: int
    history: list[dict] = field(default_factory=list)


def train_eval(
    g, x: np.ndarray, labels, split, num_classes: int, cfg: RunConfig, seed: int, config_tag: dict | None = None
) -> RunOutcome:
    """Train a fresh classifier on ``(g, x)`` and evaluate on ``split.test``."""
    rng = np.random.default_rng(seed)
    model = ClassifierModel.init(
        x.shape[1], num_classes, rng, hidden_dim=cfg.hidden_dim, depth=cfg.depth, dropout=cfg.dropout,
        input_dropout=cfg.input_dropout,
    )
    if not cfg.input_dropout:
        x = sp.csr_matrix(x)
    res = train_classifier(model, g, x, labels, split, epochs=cfg.epochs, seed=seed, lr=cfg.lr, weight_decay=cfg.weight_decay)
    pred = predict(res.model, g, x)
    labels = np.asarray(labels)
    report = evaluate(pred[split.test], labels[split.test], num_classes, seed=seed, split="test",
                      config=config_tag if config_tag is not None else cfg.describe())
    return RunOutcome(report, res.model, res.best_epoch, res.history)


def run(bundle: DatasetBundle, cfg: RunConfig, seed: int, fit: DecoderFit | None = None) -> RunOutcome:
    """Baseline (``cfg.augment=False``) or full augmentation run on ``bundle``."""
    if not cfg.augment:
        return train_eval(bundle.hypergraph, input_features(bundle, cfg), bundle.labels, bundle.split,
                          bundle.num_classes, cfg, seed)
    _, ex, _ = augment(bundle, cfg, seed, fit)
    return train_eval(ex.hypergraph, ex.features, ex.labels, ex.split, bundle.num_classes, cfg, seed)
