import numpy as np
import pytest

from deltakws import ModelConfig, gen_features, gen_weights


def small_config(**overrides) -> ModelConfig:
    base = dict(seq_tokens=16, feature_dim=8, embed_dim=32, mlp_dim=64,
                heads=2, layers=3, num_classes=12)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def small_model():
    config = small_config()
    weights = gen_weights(42, config)
    features = gen_features(7, config.seq_tokens, config.feature_dim, rho=0.8)
    return config, weights, features


def random_deltas(rng, count, dim, density=0.4):
    """Sparse deltas with the invariants encode_row guarantees."""
    from deltakws import SparseDelta

    out = []
    for _ in range(count):
        mask = rng.random(dim) < density
        idx = np.flatnonzero(mask)
        vals = rng.standard_normal(idx.size)
        vals[vals == 0] = 1.0
        out.append(SparseDelta(indices=idx, values=vals, dim=dim))
    return out


def chain_encode(rows, theta, start_reference):
    """Reference delta chain: encode each row against the running reference,
    returning (deltas, reconstructed reference rows)."""
    from deltakws import DeltaRowState, encode_row

    state = DeltaRowState(reference=start_reference.copy())
    deltas, refs = [], []
    for row in rows:
        deltas.append(encode_row(row, state, theta))
        refs.append(state.reference.copy())
    return deltas, refs
