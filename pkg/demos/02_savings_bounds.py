"""Extreme-case savings bounds, verified against measured counters.

With perfectly repeating tokens and thresholds high enough to suppress
every delta, only the class-embedding row and the first token row are ever
computed. The closed-form bounds below are exactly the counts the engine
reports in that regime.
"""

from deltakws import (
    ModelConfig,
    ThresholdConfig,
    delta_forward,
    extreme_case_macs,
    gen_features,
    gen_weights,
    theoretical_max_savings,
)
from deltakws.accounting import MHSA_STAGES

config = ModelConfig.kwt3(last_layer_opt=True)

print("theoretical maximum savings (reference dims, percent):")
print(f"{'stage':<14} {'layers 0..L-2':>14} {'last layer':>12}")
for stage in MHSA_STAGES:
    body = 100 * theoretical_max_savings(config, stage, last_layer=False)
    last = 100 * theoretical_max_savings(config, stage, last_layer=True)
    print(f"{stage.value:<14} {body:>13.2f}% {last:>11.2f}%")

print("\nmeasuring: constant input, all thresholds at 1e12 ...")
weights = gen_weights(seed=11, config=config)
features = gen_features(seed=5, seq_tokens=98, feature_dim=40, rho=1.0)
_, report = delta_forward(features, weights, config, ThresholdConfig(*([1e12] * 6)))

print(f"{'stage':<14} {'measured':>12} {'formula':>12}  (layer 0 executed MACs)")
for stage in MHSA_STAGES:
    measured = report.stage(0, stage).executed
    formula = extreme_case_macs(config, stage)
    flag = "" if measured == formula else "  MISMATCH"
    print(f"{stage.value:<14} {measured:>12,} {formula:>12,}{flag}")

last = config.layers - 1
print(f"\nlast layer (class-row restriction active):")
for stage in MHSA_STAGES:
    measured = report.stage(last, stage).executed
    formula = extreme_case_macs(config, stage, last_layer=True)
    flag = "" if measured == formula else "  MISMATCH"
    print(f"{stage.value:<14} {measured:>12,} {formula:>12,}{flag}")
