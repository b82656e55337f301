"""Dense vs delta inference on one synthetic utterance.

Runs the reference-dims model once densely and once in delta mode with the
square threshold preset, then compares logits and executed MACs.
"""

import numpy as np

from deltakws import (
    ModelConfig,
    ThresholdConfig,
    classify,
    delta_forward,
    dense_forward,
    gen_features,
    gen_weights,
)
from deltakws.accounting import MHSA_STAGES, StageId

config = ModelConfig.kwt3()
weights = gen_weights(seed=11, config=config)
features = gen_features(seed=5, seq_tokens=config.seq_tokens,
                        feature_dim=config.feature_dim, rho=0.9)

print("dense pass...")
dense_logits, dense_report = dense_forward(features, weights, config)
print(f"  predicted class {classify(dense_logits)}")
print(f"  attention MACs per layer: {dense_report.dense_total() // config.layers:,}")

print("delta pass with the square preset (0.2, 0.2, 0.2, 0.05, 0.001, 0.05)...")
thresholds = ThresholdConfig.square_preset()
delta_logits, delta_report = delta_forward(features, weights, config, thresholds)
print(f"  predicted class {classify(delta_logits)}")
print(f"  max |logit deviation| = {np.abs(delta_logits - dense_logits).max():.3e}")

print("\nexecuted share of dense MACs, averaged across layers:")
names = {
    StageId.PROJ_QKV: "QKV projections",
    StageId.ATT_SCORES: "attention scores",
    StageId.ATT_CONTEXT: "attention context",
    StageId.HEAD_PROJ: "head projection",
}
for stage in MHSA_STAGES:
    print(f"  {names[stage]:<18} {100 * delta_report.stage_fraction_mean(stage):6.2f}%")
print(f"  {'total (MHSA)':<18} {100 * delta_report.total_fraction_layer_mean():6.2f}%")
print(f"  MAC-derived speedup: {delta_report.speedup():.2f}x")

print("\nwith all thresholds at zero the delta path reproduces the dense result:")
zero_logits, _ = delta_forward(features, weights, config, ThresholdConfig.zeros())
print(f"  max |logit deviation| = {np.abs(zero_logits - dense_logits).max():.3e}")
