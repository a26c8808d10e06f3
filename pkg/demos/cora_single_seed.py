"""One Cora seed end to end, stage by stage.

Expects the Cora files under data/cora (see README). The decoder fit
dominates the runtime, about three minutes on one core.

    python demos/cora_single_seed.py [seed]
"""

import sys
import time
from pathlib import Path

import numpy as np

from hypersmote.ingest import PROTOCOLS, citation_bundle, load_citation
from hypersmote.pipeline import RunConfig, augment, pretrain_decoder, run, train_eval

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
root = Path(__file__).resolve().parents[1] / "data" / "cora"
data = load_citation(root / "cora.content", root / "cora.cites")
bundle = citation_bundle(data, PROTOCOLS["cora"], seed, "cora")
g = bundle.hypergraph
print(f"{g.num_nodes} papers, {g.num_hyperedges} co-citation hyperedges, "
      f"training counts {bundle.train_counts().tolist()}")

cfg = RunConfig()
baseline = run(bundle, cfg.with_(augment=False), seed).report
print(f"no augmentation: accuracy {baseline.accuracy:.3f}, macro-F1 {baseline.macro_f1:.3f}")

# The decoder is fitted once and reused by every attachment variant below.
start = time.perf_counter()
fit = pretrain_decoder(bundle, cfg, seed)
hit = np.mean(fit.reconstruct() > 0.5)
print(f"decoder: summed BCE {fit.final_loss:.0f} after {cfg.decoder_epochs} epochs "
      f"({time.perf_counter() - start:.0f}s), {100 * hit:.2f}% of pairs predicted present")

for variant in ("decoder", "closest_hyperedge", "closest_node", "random"):
    row = cfg.with_(variant=variant)
    plan, ex, _ = augment(bundle, row, seed, fit)
    purity = np.mean([np.mean(bundle.labels[g.members(e)] == c) for e, c in zip(plan.attached, plan.labels)])
    rep = train_eval(ex.hypergraph, ex.features, ex.labels, ex.split, bundle.num_classes, row, seed).report
    print(f"{variant:>18}: accuracy {rep.accuracy:.3f}, macro-F1 {rep.macro_f1:.3f}, "
          f"{len(plan)} nodes, label purity of chosen hyperedges {purity:.2f}")
