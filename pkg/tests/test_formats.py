import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from ilalab import attacks as atk, formats as fm, models
from ilalab.config import ConfigError, dump_config, load_config, parse_config, section
from ilalab.data import load_idx_dataset, make_shapes, read_idx, save_idx_dataset, write_idx
from ilalab.guides import DirectionalGuide


# -------------------------------------------------------------- checkpoints


@pytest.mark.parametrize("arch", models.ARCH_IDS)
def test_checkpoint_round_trip(arch, tmp_path):
    m = models.build(arch, 3).with_linbp(1)
    m.metadata["note"] = "x"
    fm.save_checkpoint(m, tmp_path / "m.ilaf")
    back = fm.load_checkpoint(tmp_path / "m.ilaf")
    assert back.arch_id == arch and back.seed == 3
    assert back.layers == m.layers
    assert back.checksum() == m.checksum()
    assert back.metadata == m.metadata


def test_checkpoint_corruption_detected():
    raw = bytearray(fm.dump_checkpoint(models.build("mlp-2", 0)))
    raw[len(raw) // 2] ^= 0xFF
    with pytest.raises(fm.FormatError):
        fm.load_checkpoint_bytes(bytes(raw))
    with pytest.raises(fm.FormatError):
        fm.load_checkpoint_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(fm.FormatError):
        fm.load_checkpoint_bytes(bytes(raw[:40]))


# ------------------------------------------------------------- trajectories


@pytest.fixture(scope="module")
def trajectory():
    sm = models.split(models.build("cnn-small", 0), 5)
    x = np.random.default_rng(0).uniform(size=(2, 1, 16, 16)).astype(np.float32)
    cfg = atk.AttackConfig(iterations=4, sample_count=2)
    return atk.ifgsm(sm, x, np.array([1, 2]), cfg, indices=[40, 41], keep_inputs=True)[1]


@pytest.mark.parametrize("store", [False, True])
def test_trajectory_round_trip(trajectory, store, tmp_path):
    h = fm.config_hash({"a": 1})
    path = fm.save_trajectory(trajectory, tmp_path, h, store_inputs=store)
    assert path.name == "traj_000041_r00.bin"
    back, h2 = fm.load_trajectory(path)
    assert h2 == h and back.index == 41 and back.label == 2
    np.testing.assert_array_equal(back.t, trajectory.t)
    np.testing.assert_array_equal(back.features, trajectory.features)
    np.testing.assert_allclose(back.losses, trajectory.losses, rtol=1e-7)
    if store:
        np.testing.assert_array_equal(back.inputs, trajectory.inputs)
        np.testing.assert_array_equal(back.final, trajectory.final)
    else:
        assert back.inputs is None and back.final is None


def test_trajectory_truncation_detected(trajectory):
    raw = fm.dump_trajectory(trajectory, fm.config_hash({}))
    with pytest.raises(fm.FormatError):
        fm.load_trajectory_bytes(raw[:-3])
    with pytest.raises(fm.FormatError):
        fm.load_trajectory_bytes(raw + b"\0")


# ------------------------------------------------------------ guides, batches


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, (3, 7), elements=st.floats(-1e3, 1e3, width=32)))
def test_guides_round_trip(ws):
    guides = [DirectionalGuide(w.astype(np.float64), -w.astype(np.float64), {"method": "rr", "i": i})
              for i, w in enumerate(ws)]
    back, head = fm.load_guides_bytes(fm.dump_guides(guides, "rr", {"lam": 1e10}, [5, 6, 7]))
    assert head["indices"] == [5, 6, 7] and head["hyper"] == {"lam": 1e10}
    for g, b in zip(guides, back):
        np.testing.assert_array_equal(g.w, b.w)
        np.testing.assert_array_equal(g.anchor, b.anchor)
        assert g.provenance == b.provenance


def test_adv_batch_round_trip(tmp_path):
    imgs = np.random.default_rng(0).uniform(size=(4, 1, 16, 16)).astype(np.float32)
    batch = fm.AdvBatch(np.array([3, 9, 11, 20]), np.array([0, 1, 2, 3]), imgs,
                        {"method": "ifgsm", "epsilon": 8 / 255})
    fm.save_adv_batch(batch, tmp_path / "b.ilab")
    back = fm.load_adv_batch(tmp_path / "b.ilab")
    np.testing.assert_array_equal(back.images, imgs)
    np.testing.assert_array_equal(back.indices, batch.indices)
    assert back.header["method"] == "ifgsm" and back.header["count"] == 4


def test_atomic_write_leaves_no_temp_files(tmp_path):
    fm.atomic_write(tmp_path / "sub" / "f.bin", b"abc")
    fm.atomic_write(tmp_path / "sub" / "f.bin", b"xyz")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.bin"]
    assert (tmp_path / "sub" / "f.bin").read_bytes() == b"xyz"


def test_config_hash_ignores_key_order():
    assert fm.config_hash({"a": 1, "b": [1, 2]}) == fm.config_hash({"b": [1, 2], "a": 1})
    assert fm.config_hash({"a": 1}) != fm.config_hash({"a": 2})


# --------------------------------------------------------------------- IDX


@pytest.mark.parametrize("dtype", [np.uint8, np.int32, np.float32, np.float64])
def test_idx_round_trip(dtype, tmp_path):
    arr = (np.arange(24).reshape(2, 3, 4) * 3).astype(dtype)
    write_idx(tmp_path / "a.idx", arr)
    back = read_idx(tmp_path / "a.idx")
    assert back.shape == arr.shape
    np.testing.assert_array_equal(back, arr)


def test_dataset_idx_round_trip_is_exact(tmp_path):
    ds = make_shapes(n_train=30, n_test=10, seed=4)
    save_idx_dataset(ds, tmp_path)
    back = load_idx_dataset(tmp_path)
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.split, ds.split)


def test_dataset_is_deterministic_and_valid():
    a, b = make_shapes(50, 20, seed=1), make_shapes(50, 20, seed=1)
    np.testing.assert_array_equal(a.images, b.images)
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert np.bincount(a.train[1], minlength=10).tolist() == [5] * 10
    assert not np.array_equal(a.images, make_shapes(50, 20, seed=2).images)


# ------------------------------------------------------------------ config


def test_config_parse_and_section():
    cfg = parse_config("# comment\nattack.epsilon = 0.03 # trailing\n\nfit-guide.svr-c=1e-10\n")
    assert cfg == {"attack.epsilon": "0.03", "fit-guide.svr-c": "1e-10"}
    assert section(cfg, "fit-guide") == {"svr_c": "1e-10"}
    assert section(cfg, "attack") == {"epsilon": "0.03"}


@pytest.mark.parametrize("text", ["epsilon = 1", "attack.epsilon", "Attack.x = 1",
                                  "a.b = 1\na.b = 2"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_dump_round_trip(tmp_path):
    text = dump_config({"epsilon": 0.1, "runs": 10, "random_init": True, "archs": ("a", "b"),
                        "skip": None}, "attack")
    (tmp_path / "c.cfg").write_text(text)
    assert section(load_config(tmp_path / "c.cfg"), "attack") == {
        "archs": "a,b", "epsilon": "0.1", "random_init": "true", "runs": "10"}
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
