import numpy as np
import pytest

from mixfacenet import config as cfgmod
from mixfacenet import reference as ref
from mixfacenet.config import ConfigError, StageSpec, preset
from mixfacenet.network import (CheckpointError, Network, compare, forward, load_checkpoint,
                                read_checkpoint, save_checkpoint, similarity_matrix)
from mixfacenet.tensor import ShapeError, Tensor


@pytest.fixture(scope="module")
def nano():
    return Network(preset("mixfacenet-nano"), seed=0).eval()


def batch(cfg, n, seed=0):
    h, w = cfg.input_size
    return np.random.default_rng(seed).uniform(-1, 1, (n, 3, h, w)).astype(np.float32)


def test_same_seed_same_weights(tmp_path):
    a = Network(preset("mixfacenet-nano"), seed=5)
    b = Network(preset("mixfacenet-nano"), seed=5)
    save_checkpoint(a, tmp_path / "a")
    save_checkpoint(b, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    c = Network(preset("mixfacenet-nano"), seed=6)
    assert not np.array_equal(a.head.conv.weight.data, c.head.conv.weight.data)


def test_mixfacenet_s_forward_shape():
    net = Network(preset("mixfacenet-s"), seed=0)
    y = forward(net, batch(net.config, 1))
    assert y.shape == (1, 512) and np.all(np.isfinite(y))


def test_duplicate_rows_and_batch_permutation(nano):
    x = batch(nano.config, 3)
    x = np.concatenate([x, x[:1]])
    y = forward(nano, x)
    assert np.array_equal(y[0], y[3])
    perm = [2, 0, 3, 1]
    assert np.array_equal(forward(nano, x[perm]), y[perm])


def test_forward_rejects_wrong_shape(nano):
    with pytest.raises(ShapeError):
        nano(Tensor(np.zeros((1, 3, 112, 112), dtype=np.float32)))


def test_nano_matches_block_by_block_oracle(nano):
    x = batch(nano.config, 1, seed=3)
    counter = ref.OpCounter()
    y = ref.run_layer(nano.head, x, counter)
    for blk in nano.blocks:
        y = ref.run_layer(blk, y, counter)
    y = ref.run_layer(nano.embedding, y, counter)
    np.testing.assert_allclose(forward(nano, x), y, atol=1e-4, rtol=1e-4)


def test_thread_count_does_not_change_bits(nano):
    x = batch(nano.config, 4, seed=1)
    assert np.array_equal(forward(nano, x, threads=1), forward(nano, x, threads=4))


def test_channel_chain_error_names_stage():
    cfg = preset("mixfacenet-nano")
    bad = cfg.stages[:1] + (StageSpec(20, 24, (3, 5, 7), 3, 2, "swish", 0.5),)
    with pytest.raises(ConfigError, match="stage 1"):
        Network(cfgmod.NetworkConfig(**{**cfg.__dict__, "stages": bad}))


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset("mixfacenet-xl")


def test_shuffle_variant_differs_only_in_flag():
    a, b = preset("mixfacenet-s"), preset("shufflemixfacenet-s")
    assert b.shuffle and not a.shuffle
    assert cfgmod.to_text(a).replace("shuffle = false", "") == \
        cfgmod.to_text(b).replace("shuffle = true", "").replace("shufflemixfacenet-s", "mixfacenet-s")


@pytest.mark.parametrize("name", cfgmod.PRESETS)
def test_config_text_round_trip(name):
    cfg = preset(name)
    assert cfgmod.from_text(cfgmod.to_text(cfg)) == cfg


def test_config_text_errors():
    with pytest.raises(ConfigError, match="line 2"):
        cfgmod.from_text("name = x\nbogus = 1\n")
    with pytest.raises(ConfigError):
        cfgmod.from_text("stage = in=8 out=8\n")


# checkpoints ------------------------------------------------------------------

def test_checkpoint_round_trip_bitwise(nano, tmp_path):
    p = tmp_path / "nano.mfnw"
    save_checkpoint(nano, p)
    back = load_checkpoint(p)
    x = batch(nano.config, 2)
    assert np.array_equal(forward(back, x), forward(nano, x))
    tensors, meta = read_checkpoint(p)
    assert meta["config_name"] == "mixfacenet-nano"
    assert set(tensors) == {k for k, _ in nano.named_tensors()}


def test_truncated_checkpoint_is_rejected(nano, tmp_path):
    p = tmp_path / "nano.mfnw"
    save_checkpoint(nano, p)
    raw = p.read_bytes()
    for cut in (3, 10, len(raw) // 2, len(raw) - 1):
        (tmp_path / "cut").write_bytes(raw[:cut])
        with pytest.raises(CheckpointError, match="truncated|magic"):
            load_checkpoint(tmp_path / "cut")


def test_checkpoint_version_and_magic(nano, tmp_path):
    p = tmp_path / "nano.mfnw"
    save_checkpoint(nano, p)
    raw = bytearray(p.read_bytes())
    raw[4] = 9
    (tmp_path / "v").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v")
    (tmp_path / "m").write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "m")


def test_shuffle_checkpoint_loads_into_plain_twin(tmp_path):
    shuf = Network(preset("shufflemixfacenet-nano"), seed=2).eval()
    save_checkpoint(shuf, tmp_path / "s")
    plain = load_checkpoint(tmp_path / "s", preset("mixfacenet-nano"))
    x = batch(plain.config, 2)
    assert not np.array_equal(forward(plain, x), forward(shuf, x))


def test_missing_and_extra_names_listed(nano, tmp_path):
    p = tmp_path / "nano.mfnw"
    save_checkpoint(nano, p)
    with pytest.raises(CheckpointError, match="missing=.*extra="):
        load_checkpoint(p, preset("mixfacenet-xs"))


# comparison -------------------------------------------------------------------

def test_compare_examples(rng):
    v = rng.standard_normal(16)
    assert compare(v, v, "euclidean") == 0
    e0, e1 = np.eye(2)
    assert abs(compare(e0, e1, "euclidean_normalized") - np.sqrt(2)) < 1e-12
    assert compare(e0, e1, "cosine") == 0
    a, b = rng.standard_normal(32), rng.standard_normal(32)
    en = compare(a, b, "euclidean_normalized")
    assert abs(en ** 2 - (2 - 2 * compare(a, b, "cosine"))) < 1e-6
    with pytest.raises(ShapeError):
        compare(a, b[:3])


def test_cosine_and_normalized_distance_rank_identically(rng):
    probe = rng.standard_normal((1, 16))
    cands = rng.standard_normal((30, 16))
    a = similarity_matrix(probe, cands, "cosine")[0]
    b = similarity_matrix(probe, cands, "euclidean_normalized")[0]
    assert np.array_equal(np.argsort(-a), np.argsort(-b))
