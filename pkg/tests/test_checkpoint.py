import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bsa import checkpoint
from bsa.attention import SpectralAttention
from bsa.errors import CheckpointError
from bsa.forecasters import build_model


def random_model(kind, seed, with_bsa=True):
    rng = np.random.default_rng(seed)
    m = build_model(kind, 6, 3, 2, rng=rng)
    for v in m.params().values():
        v[...] = rng.normal(size=v.shape)
    if with_bsa:
        bsa = SpectralAttention(2, alphas=[0.3, 0.8])
        bsa.sa_matrix[...] = rng.normal(size=bsa.sa_matrix.shape)
        bsa.init_momentum(rng.normal(size=2))
        m.attach(bsa)
    return m


@given(st.sampled_from(["dlinear", "rlinear"]), st.booleans(), st.integers(0, 10**6))
def test_round_trip_is_exact(kind, with_bsa, seed):
    m = random_model(kind, seed, with_bsa)
    back, cfg = checkpoint.from_dict(json.loads(json.dumps(checkpoint.to_dict(m, {"seed": 3}))))
    assert cfg == {"seed": 3}
    for k, v in m.all_params().items():
        np.testing.assert_array_equal(back.all_params()[k], v)
    assert (back.bsa is None) == (not with_bsa)
    x = np.random.default_rng(seed).normal(size=(4, 6, 2))
    np.testing.assert_array_equal(back.forward(x)[0], m.forward(x)[0])


def test_save_load_file(tmp_path):
    m = random_model("dlinear", 0)
    checkpoint.save(tmp_path / "c.json", m)
    back, _ = checkpoint.load(tmp_path / "c.json")
    np.testing.assert_array_equal(back.bsa.momentum, m.bsa.momentum)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.update(format="other"),
        lambda d: d.update(version=99),
        lambda d: d["model"]["params"].pop("bias"),
        lambda d: d["model"]["params"].update(bias=[[0.0]]),
        lambda d: d["bsa"].update(sa_matrix=[[0.0]]),
    ],
)
def test_malformed_checkpoints(mutate):
    d = checkpoint.to_dict(random_model("dlinear", 1))
    mutate(d)
    with pytest.raises(CheckpointError):
        checkpoint.from_dict(d)


def test_not_json(tmp_path):
    (tmp_path / "x.json").write_text("{nope")
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "x.json")


def test_compatibility_check():
    m = random_model("rlinear", 0, with_bsa=False)
    checkpoint.check_compatible(m, 2, 6, 3)
    with pytest.raises(CheckpointError):
        checkpoint.check_compatible(m, 3)
    with pytest.raises(CheckpointError):
        checkpoint.check_compatible(m, 2, lookback=7)
