import numpy as np
import pytest

from deltakws import (
    MacCounter,
    ModelConfig,
    ShapeError,
    StageId,
    UnsupportedStageError,
    assemble_report,
    dense_stage_macs,
    extreme_case_macs,
    theoretical_max_savings,
)

KWT3 = ModelConfig.kwt3()

# frozen closed-form counts for the reference dims (n=99, d=192, dh=64, k=3)
DENSE_PER_LAYER = {
    StageId.PROJ_QKV: 10_948_608,
    StageId.ATT_SCORES: 1_881_792,
    StageId.ATT_CONTEXT: 1_881_792,
    StageId.HEAD_PROJ: 3_649_536,
    StageId.MLP: 29_196_288,
}


class TestDenseStageMacs:
    def test_reference_dims(self):
        for stage, want in DENSE_PER_LAYER.items():
            assert dense_stage_macs(KWT3, stage) == want

    def test_mhsa_stage_fractions(self):
        mhsa = sum(DENSE_PER_LAYER[s] for s in list(StageId)[:4])
        pct = {s: 100.0 * DENSE_PER_LAYER[s] / mhsa for s in list(StageId)[:4]}
        assert abs(pct[StageId.PROJ_QKV] - 59.63) <= 0.01
        assert abs(pct[StageId.ATT_SCORES] - 10.25) <= 0.01
        assert abs(pct[StageId.ATT_CONTEXT] - 10.25) <= 0.01
        assert abs(pct[StageId.HEAD_PROJ] - 19.88) <= 0.01

    def test_mhsa_vs_mlp_split(self):
        mhsa = sum(dense_stage_macs(KWT3, s) for s in list(StageId)[:4])
        mlp = dense_stage_macs(KWT3, StageId.MLP)
        share = 100.0 * mhsa / (mhsa + mlp)
        # the published split is rounded to whole percents (~39 / ~61)
        assert abs(share - 39.0) <= 0.5
        assert abs((100.0 - share) - 61.0) <= 0.5

    def test_last_layer_restriction(self):
        assert dense_stage_macs(KWT3, StageId.PROJ_QKV, True) == (2 * 99 + 1) * 192 * 192
        assert dense_stage_macs(KWT3, StageId.ATT_SCORES, True) == 3 * 99 * 64
        assert dense_stage_macs(KWT3, StageId.HEAD_PROJ, True) == 192 * 192


class TestTheoreticalMaxSavings:
    # the eight published extreme-case percentages
    @pytest.mark.parametrize(
        "stage,last,want",
        [
            (StageId.PROJ_QKV, False, 97.98),
            (StageId.PROJ_QKV, True, 98.32),
            (StageId.ATT_SCORES, False, 99.96),
            (StageId.ATT_SCORES, True, 99.98),
            (StageId.ATT_CONTEXT, False, 97.98),
            (StageId.ATT_CONTEXT, True, 98.99),
            (StageId.HEAD_PROJ, False, 97.98),
            (StageId.HEAD_PROJ, True, 98.99),
        ],
    )
    def test_reference_percentages(self, stage, last, want):
        got = 100.0 * theoretical_max_savings(KWT3, stage, last_layer=last)
        assert abs(got - want) <= 0.01

    def test_mlp_unsupported(self):
        with pytest.raises(UnsupportedStageError):
            theoretical_max_savings(KWT3, StageId.MLP)

    def test_last_layer_dense_savings(self):
        dense = sum(dense_stage_macs(KWT3, s) for s in list(StageId)[:4])
        restricted = sum(dense_stage_macs(KWT3, s, True) for s in list(StageId)[:4])
        saving = 100.0 * (1.0 - restricted / dense)
        assert abs(saving - 59.64) <= 0.01
        total = saving / KWT3.layers
        assert total + 0.01 >= 4.97


def synthetic_counters(config, executed_of_dense=1.0):
    counters = {}
    for layer in range(config.layers):
        for stage in StageId:
            dense = dense_stage_macs(config, stage)
            counters[(layer, stage)] = MacCounter(
                executed=int(dense * executed_of_dense), dense_equivalent=dense
            )
    return counters


class TestAssembleReport:
    def test_dense_run_totals(self):
        cfg = ModelConfig(seq_tokens=4, feature_dim=3, embed_dim=8, mlp_dim=16,
                          heads=2, layers=2)
        rep = assemble_report(synthetic_counters(cfg), cfg)
        assert rep.total_fraction_layer_mean() == 1.0
        assert rep.total_fraction_global() == 1.0
        assert rep.speedup() == 1.0

    def test_half_executed_doubles_speedup(self):
        cfg = ModelConfig(seq_tokens=4, feature_dim=3, embed_dim=8, mlp_dim=16,
                          heads=2, layers=2)
        rep = assemble_report(synthetic_counters(cfg, 0.5), cfg)
        assert rep.speedup() == 2.0

    def test_matches_independent_aggregation(self):
        cfg = ModelConfig(seq_tokens=6, feature_dim=3, embed_dim=12, mlp_dim=24,
                          heads=3, layers=3)
        rng = np.random.default_rng(0)
        counters = {}
        for layer in range(cfg.layers):
            for stage in StageId:
                dense = dense_stage_macs(cfg, stage)
                counters[(layer, stage)] = MacCounter(
                    executed=int(rng.integers(0, dense + 1)), dense_equivalent=dense
                )
        rep = assemble_report(counters, cfg)
        # spreadsheet-style recount
        mhsa = list(StageId)[:4]
        ex = sum(counters[(l, s)].executed for l in range(cfg.layers) for s in mhsa)
        de = sum(dense_stage_macs(cfg, s) for _ in range(cfg.layers) for s in mhsa)
        assert rep.executed_total() == ex
        assert rep.dense_total() == de
        fr = [
            sum(counters[(l, s)].executed for s in mhsa)
            / sum(dense_stage_macs(cfg, s) for s in mhsa)
            for l in range(cfg.layers)
        ]
        assert rep.total_fraction_layer_mean() == pytest.approx(sum(fr) / len(fr), abs=1e-15)

    def test_permutation_invariance(self):
        cfg = ModelConfig(seq_tokens=4, feature_dim=3, embed_dim=8, mlp_dim=16,
                          heads=2, layers=2)
        counters = synthetic_counters(cfg, 0.25)
        forward = assemble_report(dict(counters), cfg)
        backward = assemble_report(dict(reversed(list(counters.items()))), cfg)
        assert forward.to_dict() == backward.to_dict()

    def test_missing_layer_entry(self):
        cfg = ModelConfig(seq_tokens=4, feature_dim=3, embed_dim=8, mlp_dim=16,
                          heads=2, layers=2)
        counters = synthetic_counters(cfg)
        del counters[(1, StageId.MLP)]
        with pytest.raises(ShapeError, match="missing counter"):
            assemble_report(counters, cfg)

    def test_extreme_counts_equal_formula_counts(self):
        # the extreme-case formulas ARE the minimum executed counts
        for stage in list(StageId)[:4]:
            dense = dense_stage_macs(KWT3, stage)
            assert extreme_case_macs(KWT3, stage) <= dense
            assert extreme_case_macs(KWT3, stage, last_layer=True) <= dense
