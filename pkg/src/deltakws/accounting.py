"""Closed-form MAC counts, extreme-case savings bounds, and report assembly.

The encoder splits into five per-layer stages. Four of them are gated by
delta thresholds; the MLP is reported for completeness but never pruned.
Savings bounds describe the extreme case where every delta is suppressed
and only the class-embedding row and the first token row are computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

from .errors import ShapeError, UnsupportedStageError
from .tensor import MacCounter


class StageId(Enum):
    PROJ_QKV = "proj_qkv"
    ATT_SCORES = "att_scores"
    ATT_CONTEXT = "att_context"
    HEAD_PROJ = "head_proj"
    MLP = "mlp"


#: Stages that make up the attention block (the MLP is tracked separately).
MHSA_STAGES = (StageId.PROJ_QKV, StageId.ATT_SCORES, StageId.ATT_CONTEXT, StageId.HEAD_PROJ)


def dense_stage_macs(config, stage: StageId, last_layer_opt: bool = False) -> int:
    """Multiplications the dense schedule performs for one stage of one layer.

    With last_layer_opt the counts honor the class-row restriction: the
    query projection, score row, context row, head projection and MLP are
    computed for the class token only, while keys and values still cover
    every token.
    """
    n = config.seq_tokens + 1
    d = config.embed_dim
    dh = config.head_dim
    k = config.heads
    if stage is StageId.PROJ_QKV:
        return (2 * n + 1) * d * d if last_layer_opt else 3 * n * d * d
    if stage is StageId.ATT_SCORES:
        return k * n * dh if last_layer_opt else k * n * n * dh
    if stage is StageId.ATT_CONTEXT:
        return k * n * dh if last_layer_opt else k * n * n * dh
    if stage is StageId.HEAD_PROJ:
        return d * d if last_layer_opt else n * d * d
    if stage is StageId.MLP:
        return 2 * d * config.mlp_dim if last_layer_opt else 2 * n * d * config.mlp_dim
    raise UnsupportedStageError(f"unknown stage {stage}")


def extreme_case_macs(config, stage: StageId, last_layer: bool = False) -> int:
    """Executed MACs when every delta is suppressed.

    Only the two untouched rows (class embedding and first token) are ever
    computed; with last_layer the class-row restriction applies on top.
    """
    n = config.seq_tokens + 1
    d = config.embed_dim
    dh = config.head_dim
    k = config.heads
    if stage is StageId.PROJ_QKV:
        # two dense rows through K and V plus the single dense query row,
        # versus two dense rows through all three projections
        return 5 * d * d if last_layer else 6 * d * d
    if stage is StageId.ATT_SCORES:
        # anchor cells only: 2x2 block per head, or the two anchor-column
        # cells of the single class-query row
        return k * 2 * dh if last_layer else k * 4 * dh
    if stage is StageId.ATT_CONTEXT:
        return k * n * dh if last_layer else k * 2 * n * dh
    if stage is StageId.HEAD_PROJ:
        return d * d if last_layer else 2 * d * d
    raise UnsupportedStageError(f"no extreme-case bound for stage {stage}")


def theoretical_max_savings(config, stage: StageId, last_layer: bool = False) -> float:
    """Upper bound on the executed-MAC saving for one stage, as a fraction.

    The bound is the extreme case where only the class-embedding row and
    first token row are computed, measured against the full dense count.
    """
    if stage is StageId.MLP:
        raise UnsupportedStageError("the MLP stage is never delta-pruned")
    dense = dense_stage_macs(config, stage, last_layer_opt=False)
    return 1.0 - extreme_case_macs(config, stage, last_layer=last_layer) / dense


@dataclass
class StageCount:
    """Aggregated counts for one (layer, stage) cell of a report."""

    executed: int = 0
    dense_equivalent: int = 0
    overhead_ops: int = 0
    fallbacks: int = 0


@dataclass
class MacReport:
    """Per-layer, per-stage executed vs dense MAC counts plus derived ratios.

    Stage percentages follow the averaged-across-layers convention (mean of
    per-layer executed fractions); the global executed/dense ratio is also
    exposed since the averaging convention is a reporting choice. Totals and
    the speedup cover the four attention stages only.
    """

    layers: int
    stages: dict = field(default_factory=dict)  # (layer, StageId) -> StageCount
    retained: dict = field(default_factory=dict)  # (layer, site) -> (kept, candidates)

    def stage(self, layer: int, stage: StageId) -> StageCount:
        return self.stages[(layer, stage)]

    def executed_total(self, stages=MHSA_STAGES) -> int:
        return sum(self.stages[(l, s)].executed for l in range(self.layers) for s in stages)

    def dense_total(self, stages=MHSA_STAGES) -> int:
        return sum(
            self.stages[(l, s)].dense_equivalent for l in range(self.layers) for s in stages
        )

    def layer_fraction(self, layer: int, stages=MHSA_STAGES) -> float:
        ex = sum(self.stages[(layer, s)].executed for s in stages)
        de = sum(self.stages[(layer, s)].dense_equivalent for s in stages)
        return ex / de

    def stage_fraction_mean(self, stage: StageId) -> float:
        """Mean over layers of the per-layer executed fraction for one stage."""
        fr = [
            self.stages[(l, stage)].executed / self.stages[(l, stage)].dense_equivalent
            for l in range(self.layers)
        ]
        return sum(fr) / len(fr)

    def total_fraction_layer_mean(self) -> float:
        fr = [self.layer_fraction(l) for l in range(self.layers)]
        return sum(fr) / len(fr)

    def total_fraction_global(self) -> float:
        return self.executed_total() / self.dense_total()

    def speedup(self) -> float:
        """MAC-derived speedup of the attention block (never wall-clock)."""
        return self.dense_total() / self.executed_total()

    def fallback_total(self) -> int:
        return sum(c.fallbacks for c in self.stages.values())

    def to_dict(self) -> dict:
        per_layer = []
        for l in range(self.layers):
            entry = {}
            for s in StageId:
                c = self.stages[(l, s)]
                entry[s.value] = {
                    "executed": c.executed,
                    "dense_equivalent": c.dense_equivalent,
                    "overhead_ops": c.overhead_ops,
                    "fallbacks": c.fallbacks,
                }
            per_layer.append(entry)
        retained = {
            f"layer{l}.{site}": {"kept": kept, "candidates": cand}
            for (l, site), (kept, cand) in sorted(self.retained.items())
        }
        return {
            "layers": self.layers,
            "per_layer": per_layer,
            "retained": retained,
            "summary": {
                "pct_proj": 100.0 * self.stage_fraction_mean(StageId.PROJ_QKV),
                "pct_scores": 100.0 * self.stage_fraction_mean(StageId.ATT_SCORES),
                "pct_context": 100.0 * self.stage_fraction_mean(StageId.ATT_CONTEXT),
                "pct_headproj": 100.0 * self.stage_fraction_mean(StageId.HEAD_PROJ),
                "pct_total_layer_mean": 100.0 * self.total_fraction_layer_mean(),
                "pct_total_global": 100.0 * self.total_fraction_global(),
                "speedup": self.speedup(),
            },
        }


def assemble_report(
    per_layer_counters: Mapping[tuple[int, StageId], MacCounter],
    config,
    fallbacks: Mapping[tuple[int, StageId], int] | None = None,
    retained: Mapping[tuple[int, str], tuple[int, int]] | None = None,
) -> MacReport:
    """Aggregate per-(layer, stage) counters into a report.

    dense_equivalent is filled from the closed-form stage counts (it is a
    function of shapes only), so the report's denominators are identical for
    dense, delta and class-row-restricted runs. Missing (layer, stage)
    entries are an error; input ordering is irrelevant.
    """
    report = MacReport(layers=config.layers)
    for layer in range(config.layers):
        for stage in StageId:
            key = (layer, stage)
            if key not in per_layer_counters:
                raise ShapeError(f"missing counter for layer {layer} stage {stage.value}")
            c = per_layer_counters[key]
            report.stages[key] = StageCount(
                executed=c.executed,
                dense_equivalent=dense_stage_macs(config, stage, last_layer_opt=False),
                overhead_ops=c.overhead_ops,
                fallbacks=0 if fallbacks is None else int(fallbacks.get(key, 0)),
            )
    if retained:
        report.retained = {k: tuple(v) for k, v in retained.items()}
    return report
