"""Looking inside the architecture zoo: sizes, shapes and the dense-block growth rule."""

from charbench.arch import (
    DISPLAY_NAMES,
    MODEL_IDS,
    classifier_in_features,
    expand,
    infer_shapes,
    param_count,
    zoo_spec,
)
from charbench.report import audit_architectures, audit_text

# full-scale specs are only shape-inferred, never allocated
print(audit_text(audit_architectures()))

# the mini zoo keeps every mechanism at 64x64 input and a quarter of the width
for m in MODEL_IDS:
    spec = zoo_spec(m, "mini", num_classes=10)
    feats, logits = infer_shapes(spec)
    print(f"{DISPLAY_NAMES[m]:<14} features {feats}  in_features {classifier_in_features(spec):>4}"
          f"  params {param_count(spec):>10,}  logits {logits}")

# a dense block adds growth_rate channels per unit
spec = zoo_spec("densenet121", "mini")
block = next(l for l in spec.feature_layers if l.kind == "dense_block")
units = expand(block)
print(f"\n{block.name}: in {block.hp['in_ch']} channels, {len(units)} units of growth "
      f"{block.hp['growth_rate']} -> {block.hp['in_ch'] + len(units) * block.hp['growth_rate']} out")
