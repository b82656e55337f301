"""Acceptance suite.

Each test evaluates one acceptance criterion at its stated tolerance and
prints a PASS/FAIL line (run pytest with -s to see them on success).
"""

import time

import numpy as np
import pytest

from deltakws import (
    DeltaRowState,
    DeltaSoftmaxState,
    DeltaTrace,
    MacCounter,
    ModelConfig,
    StageId,
    ThresholdConfig,
    delta_delta_product,
    delta_forward,
    delta_softmax_update,
    dense_forward,
    dense_stage_macs,
    encode_row,
    extreme_case_macs,
    gen_features,
    gen_weights,
    reconstruct_rows,
    row_softmax,
    subthreshold_fraction,
    theoretical_max_savings,
)
from deltakws.accounting import MHSA_STAGES
from deltakws.cli import main as cli_main
from conftest import chain_encode


def _report(name: str, ok: bool, detail: str = "") -> None:
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name}: {detail}"


A1_MODELS = [
    # (config, weight seed, feature seed, rho)
    (dict(seq_tokens=98, feature_dim=40, embed_dim=192, mlp_dim=768, heads=3, layers=12), 11, 5, 0.9),
    (dict(seq_tokens=16, feature_dim=8, embed_dim=32, mlp_dim=64, heads=2, layers=3), 21, 22, 0.5),
    (dict(seq_tokens=8, feature_dim=4, embed_dim=16, mlp_dim=24, heads=1, layers=1), 31, 32, 0.0),
    (dict(seq_tokens=12, feature_dim=6, embed_dim=24, mlp_dim=48, heads=4, layers=2), 41, 42, 0.99),
    (dict(seq_tokens=24, feature_dim=10, embed_dim=36, mlp_dim=72, heads=3, layers=4), 51, 52, 0.7),
    (dict(seq_tokens=4, feature_dim=3, embed_dim=8, mlp_dim=16, heads=2, layers=2), 61, 62, 0.3),
    (dict(seq_tokens=32, feature_dim=12, embed_dim=48, mlp_dim=96, heads=2, layers=3), 71, 72, 0.95),
    (dict(seq_tokens=10, feature_dim=5, embed_dim=20, mlp_dim=40, heads=5, layers=2), 81, 82, 0.6),
    (dict(seq_tokens=20, feature_dim=8, embed_dim=40, mlp_dim=80, heads=4, layers=3), 91, 92, 0.8),
    (dict(seq_tokens=6, feature_dim=4, embed_dim=12, mlp_dim=24, heads=3, layers=5), 101, 102, 0.2),
]


def test_a1_zero_threshold_equivalence():
    started = time.perf_counter()
    worst = 0.0
    for spec, wseed, fseed, rho in A1_MODELS:
        cfg = ModelConfig(**spec)
        assert cfg.precision == "double"
        w = gen_weights(wseed, cfg)
        f = gen_features(fseed, cfg.seq_tokens, cfg.feature_dim, rho=rho)
        ld, _ = dense_forward(f, w, cfg)
        lt, _ = delta_forward(f, w, cfg, ThresholdConfig.zeros())
        worst = max(worst, float(np.abs(lt - ld).max()))
    elapsed = time.perf_counter() - started
    _report(
        "A1", worst <= 1e-9 and elapsed < 120.0,
        f"max |delta - dense| = {worst:.3e} over {len(A1_MODELS)} models "
        f"(tolerance 1e-9), {elapsed:.1f}s (budget 120s)",
    )


PUBLISHED_SAVINGS = {
    (StageId.PROJ_QKV, False): 97.98,
    (StageId.PROJ_QKV, True): 98.32,
    (StageId.ATT_SCORES, False): 99.96,
    (StageId.ATT_SCORES, True): 99.98,
    (StageId.ATT_CONTEXT, False): 97.98,
    (StageId.ATT_CONTEXT, True): 98.99,
    (StageId.HEAD_PROJ, False): 97.98,
    (StageId.HEAD_PROJ, True): 98.99,
}


def test_a2_extreme_case_counts_and_savings():
    cfg = ModelConfig.kwt3(last_layer_opt=True)
    w = gen_weights(11, cfg)
    feats = gen_features(5, 98, 40, rho=1.0)  # identical rows from row 1
    assert np.array_equal(feats[0], feats[-1])
    _, rep = delta_forward(feats, w, cfg, ThresholdConfig(*([1e12] * 6)))

    count_ok = True
    for layer in range(cfg.layers):
        last = layer == cfg.layers - 1
        for stage in MHSA_STAGES:
            if rep.stage(layer, stage).executed != extreme_case_macs(cfg, stage, last_layer=last):
                count_ok = False

    pct_ok = True
    details = []
    for (stage, last), want in PUBLISHED_SAVINGS.items():
        layer = cfg.layers - 1 if last else 0
        cell = rep.stage(layer, stage)
        measured = 100.0 * (1.0 - cell.executed / cell.dense_equivalent)
        formula = 100.0 * theoretical_max_savings(cfg, stage, last_layer=last)
        details.append(f"{measured:.2f}")
        if abs(measured - want) > 0.01 or abs(formula - want) > 0.01:
            pct_ok = False
    _report(
        "A2", count_ok and pct_ok,
        f"per-stage executed == formula minima: {count_ok}; savings {'/'.join(details)} "
        f"vs published 97.98/98.32/99.96/99.98/97.98/98.99/97.98/98.99 (tol 0.01)",
    )


def test_a3_stage_fractions():
    cfg = ModelConfig.kwt3()
    mhsa = {s: dense_stage_macs(cfg, s) for s in MHSA_STAGES}
    total = sum(mhsa.values())
    pct = {s: 100.0 * v / total for s, v in mhsa.items()}
    stage_ok = (
        abs(pct[StageId.PROJ_QKV] - 59.63) <= 0.01
        and abs(pct[StageId.ATT_SCORES] - 10.25) <= 0.01
        and abs(pct[StageId.ATT_CONTEXT] - 10.25) <= 0.01
        and abs(pct[StageId.HEAD_PROJ] - 19.88) <= 0.01
    )
    mlp = dense_stage_macs(cfg, StageId.MLP)
    mhsa_share = 100.0 * total / (total + mlp)
    # the published ~39/~61 split is rounded to whole percents; the exact
    # closed-form split is 38.61/61.39, so the check is round-trip agreement
    split_ok = round(mhsa_share) == 39 and round(100.0 - mhsa_share) == 61
    _report(
        "A3", stage_ok and split_ok,
        f"stage split {pct[StageId.PROJ_QKV]:.2f}/{pct[StageId.ATT_SCORES]:.2f}/"
        f"{pct[StageId.ATT_CONTEXT]:.2f}/{pct[StageId.HEAD_PROJ]:.2f} (tol 0.01); "
        f"MHSA/MLP {mhsa_share:.2f}/{100 - mhsa_share:.2f} rounds to 39/61",
    )


def test_a4_last_layer_optimization():
    cfg = ModelConfig.kwt3()
    cfg_opt = ModelConfig.kwt3(last_layer_opt=True)
    w = gen_weights(11, cfg)
    f = gen_features(5, 98, 40, rho=0.9)
    base_logits, base_rep = dense_forward(f, w, cfg)
    opt_logits, opt_rep = dense_forward(f, w, cfg_opt)
    bit_identical = np.array_equal(base_logits, opt_logits)
    last = cfg.layers - 1
    ex_base = sum(base_rep.stage(last, s).executed for s in MHSA_STAGES)
    ex_opt = sum(opt_rep.stage(last, s).executed for s in MHSA_STAGES)
    layer_saving = 100.0 * (1.0 - ex_opt / ex_base)
    total_saving = 100.0 * (base_rep.executed_total() - opt_rep.executed_total()) / base_rep.executed_total()
    _report(
        "A4",
        bit_identical and abs(layer_saving - 59.64) <= 0.01 and total_saving + 0.01 >= 4.97,
        f"bit-identical logits: {bit_identical}; last-layer saving {layer_saving:.4f}% "
        f"(59.64 +/- 0.01); total MHSA saving {total_saving:.4f}% (>= 4.97 within 0.01)",
    )


def test_a5_kernel_oracles():
    rng = np.random.default_rng(2024)
    worst_dd = 0.0
    threshold_ok = True
    for i in range(200):
        theta = [0.0, 0.1, 1.0][i % 3]
        a = rng.standard_normal((8, 6))
        bt = rng.standard_normal((8, 6))
        a_deltas, _ = chain_encode(a[2:], theta, a[1])
        b_deltas, _ = chain_encode(bt[2:], theta, bt[1])
        for d in a_deltas + b_deltas:
            if d.nnz and not np.all(np.abs(d.values) > theta):
                threshold_ok = False
        got = delta_delta_product(a[:2], a_deltas, bt[:2].T, b_deltas, MacCounter())
        want = reconstruct_rows(a[:2], a_deltas) @ reconstruct_rows(bt[:2], b_deltas).T
        worst_dd = max(worst_dd, float(np.abs(got - want).max()))

    worst_sm = 0.0
    logits = rng.standard_normal(16) * 2
    enc = DeltaRowState(reference=logits.copy())
    state = DeltaSoftmaxState(prev_softmax=row_softmax(logits.reshape(1, -1))[0],
                              exp_sum=float(np.exp(logits).sum()))
    for _ in range(50):
        logits = logits + rng.standard_normal(16) * 0.4
        d = encode_row(logits, enc, 0.0)
        got = delta_softmax_update(state, d, MacCounter())
        want = row_softmax(logits.reshape(1, -1))[0]
        worst_sm = max(worst_sm, float(np.abs(got - want).max()))

    _report(
        "A5", worst_dd <= 1e-9 and worst_sm <= 1e-9 and threshold_ok,
        f"delta-delta max err {worst_dd:.3e} over 200 instances; softmax chain max err "
        f"{worst_sm:.3e} over 50 rows (tol 1e-9); every delta above threshold: {threshold_ok}",
    )


def test_a6_sweep_determinism(tmp_path):
    dims = ["--seq-tokens", "12", "--feature-dim", "6", "--embed-dim", "16",
            "--mlp-dim", "32", "--heads", "2", "--layers", "2"]
    assert cli_main(["gen", "weights", "--seed", "3", "-o", str(tmp_path / "w.dkwt"), *dims]) == 0
    inputs = []
    for i in range(5):
        p = tmp_path / f"{i}__input.dkwf"
        assert cli_main(["gen", "features", "--seed", str(100 + i), "-o", str(p),
                         "--seq-tokens", "12", "--feature-dim", "6", "--rho", "0.8"]) == 0
        inputs.append(str(p))
    grid = ["--theta-x", "0", "0.1", "0.3", "--theta-softmax", "0", "0.001", "0.01"]
    a, b = tmp_path / "jobs1.csv", tmp_path / "jobs8.csv"
    assert cli_main(["sweep", "-w", str(tmp_path / "w.dkwt"), "--inputs", *inputs,
                     "-o", str(a), *grid, "--jobs", "1"]) == 0
    assert cli_main(["sweep", "-w", str(tmp_path / "w.dkwt"), "--inputs", *inputs,
                     "-o", str(b), *grid, "--jobs", "8"]) == 0
    rows = len(a.read_text().splitlines()) - 1
    identical = a.read_bytes() == b.read_bytes()
    _report("A6", identical and rows == 45,
            f"jobs=1 vs jobs=8 byte-identical: {identical} ({rows} rows, 3x3 grid x 5 inputs)")


def test_a7_correlation_behavior():
    cfg = ModelConfig(seq_tokens=48, feature_dim=40, embed_dim=96, mlp_dim=192,
                      heads=3, layers=6)
    w = gen_weights(2718, cfg)
    rhos = [0.0, 0.5, 0.9, 0.99]
    fractions, subs = [], []
    for rho in rhos:
        f = gen_features(3141, cfg.seq_tokens, cfg.feature_dim, rho=rho)
        _, rep = delta_forward(f, w, cfg, ThresholdConfig.square_preset())
        fractions.append(rep.total_fraction_layer_mean())
        subs.append(subthreshold_fraction(f, 1.0, skip_rows=0).below_fraction)
    macs_monotone = all(a > b for a, b in zip(fractions, fractions[1:]))
    subs_monotone = all(a < b for a, b in zip(subs, subs[1:]))
    _report(
        "A7", macs_monotone and subs_monotone,
        f"executed fractions {['%.4f' % v for v in fractions]} strictly decreasing: {macs_monotone}; "
        f"subthreshold fractions {['%.4f' % v for v in subs]} strictly increasing: {subs_monotone}",
    )
