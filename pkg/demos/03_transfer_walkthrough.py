"""Pretrain on one synthetic glyph set, transfer to another, and look at the mistakes.

Kept small so it finishes in about half a minute on one core. At this size the
source model is far from converged, so the transferred head need not beat the
random-feature baseline yet. The full-size scenario (20 source classes, 200
images each, 15 epochs; see tests/conftest.py) is where the gap shows up.
"""

import tempfile
from pathlib import Path

from charbench.data import ingest, split, synth_generate
from charbench.report import BenchmarkRun, confusion, summary_markdown, top_confused_pairs
from charbench.train import TrainConfig, pretrain_source, transfer

work = Path(tempfile.mkdtemp(prefix="charbench-demo-"))

# two glyph families from the same generator: different seeds give different shapes
synth_generate(work / "source", num_classes=10, per_class=60, seed=1)
synth_generate(work / "target", num_classes=5, per_class=40, seed=2)
source = split(ingest(work / "source"), 0.85, seed=0)
target = split(ingest(work / "target"), 0.85, seed=0)
print(f"source {len(source.train)}/{len(source.test)}, target {len(target.train)}/{len(target.test)}")

# end-to-end training of the whole network on the source task, a touch hotter than
# the default recipe so a few epochs get somewhere
pre_cfg = TrainConfig(epochs=6, lr=0.003, batch_size=16, step_size=100, seed=0)
weights, history = pretrain_source("alexnet", source, pre_cfg, work / "alexnet.cbpw")
print("pretrain valid acc per epoch:", [round(m.valid_accuracy, 3) for m in history])

# frozen extractor, fresh 5-way head
cfg = TrainConfig(epochs=5, seed=0)
result = transfer("alexnet", weights, target, cfg)
baseline = transfer("alexnet", None, target, cfg)
print("features untouched:", result.features_unchanged)
print("transfer  :", [round(m.valid_accuracy, 3) for m in result.metrics])
print("random net:", [round(m.valid_accuracy, 3) for m in baseline.metrics])

run = BenchmarkRun("alexnet", "mini", cfg.to_dict(), result.metrics, 576)
print()
print(summary_markdown([run]))

cm = confusion(result.network, result.params, target.test, result.images, classes=target.classes)
print(cm.counts)
for a, b, n in top_confused_pairs(cm, 3):
    print(f"{cm.classes[a]} <-> {cm.classes[b]}: {n}")
