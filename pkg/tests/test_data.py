import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from depthkd.core import Tensor, ops
from depthkd.data import (SceneSpec, batch_iterator, generate_scene, generate_split, load_dataset,
                          load_split, write_dataset, write_splits)
from depthkd.data.synth import shade
from depthkd.errors import ConfigError, FormatError
from depthkd.metrics import evaluate
from depthkd.nn import Conv2d, Module
from depthkd.train import Adam

SMALL = SceneSpec(height=32, width=64, n_train=6, n_val=3)


def test_generation_is_deterministic_per_index():
    a, b = generate_scene(SMALL, 4), generate_scene(SMALL, 4)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.depth, b.depth)
    assert a.meta == b.meta
    assert not np.array_equal(a.image, generate_scene(SMALL, 5).image)


def test_sample_ranges_and_shapes():
    spec = SceneSpec()
    for i in range(5):
        s = generate_scene(spec, i)
        assert s.image.shape == (3, 96, 96) and s.image.dtype == np.float32
        assert s.depth.shape == (1, 96, 96)
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.depth.min() >= spec.d_min and s.depth.max() <= spec.d_max
        assert s.mask.all()


def test_shading_decreases_with_depth():
    d = np.linspace(0.25, 10.0, 50)
    assert np.all(np.diff(shade(d, 10.0)) < 0)


def test_objects_sit_in_front_of_background():
    # the far edge of the plane lies at the top row; object depths stay nearer than it
    spec = SceneSpec(noise=0.0)
    for i in range(10):
        s = generate_scene(spec, i)
        top = s.depth[0, 0].max()
        assert all(d <= top for d in s.meta["object_depths"])


@pytest.mark.parametrize("h,w", [(33, 64), (64, 48), (16, 32)])
def test_spec_rejects_sizes_not_divisible_by_32(h, w):
    with pytest.raises(ConfigError):
        SceneSpec(height=h, width=w).validate()


def test_spec_rejects_bad_ranges():
    with pytest.raises(ConfigError):
        SceneSpec(d_min=5.0, d_max=1.0).validate()
    with pytest.raises(ConfigError):
        SceneSpec(objects=(3, 1)).validate()


def test_write_and_load_round_trip(tmp_path):
    write_splits(SMALL, tmp_path)
    train, val = load_split(tmp_path, "train"), load_split(tmp_path, "val")
    mem = generate_split(SMALL, "train")
    np.testing.assert_array_equal(train.images, mem.images)
    np.testing.assert_array_equal(train.depth, mem.depth)
    assert list(val.indices) == [6, 7, 8]
    assert train.spec == SMALL


def test_write_resumes_and_rejects_other_spec(tmp_path):
    write_dataset(SMALL, 3, tmp_path)
    write_dataset(SMALL, 3, tmp_path)   # idempotent with the same spec
    other = SceneSpec(height=32, width=64, n_train=6, n_val=3, seed=9)
    with pytest.raises(ConfigError):
        write_dataset(other, 3, tmp_path)


def test_load_errors(tmp_path):
    with pytest.raises(FormatError):
        load_dataset(tmp_path)
    write_dataset(SMALL, 2, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["spec"]["height"] = 40
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ConfigError):
        load_dataset(tmp_path)
    manifest["schema_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(FormatError):
        load_dataset(tmp_path)


@pytest.fixture(scope="module")
def tiny_split():
    return generate_split(SceneSpec(height=32, width=32, n_train=23, n_val=1), "train")


@settings(max_examples=30)
@given(batch=st.integers(1, 8), seed=st.integers(0, 1000), epoch=st.integers(0, 5), flip=st.booleans())
def test_batch_iterator_covers_each_sample_once(tiny_split, batch, seed, epoch, flip):
    batches = list(batch_iterator(tiny_split, batch, seed, epoch, flip=flip))
    idx = np.concatenate([b.indices for b in batches])
    assert sorted(idx) == list(range(len(tiny_split)))
    assert all(len(b.indices) <= batch for b in batches)
    for b in batches:
        for i, j in enumerate(b.indices):
            expected = tiny_split.depth[j][..., ::-1] if b.flips[i] else tiny_split.depth[j]
            np.testing.assert_array_equal(b.depth[i], expected)


def test_epoch_orders_differ_and_start_batch_skips(tiny_split):
    e0 = np.concatenate([b.indices for b in batch_iterator(tiny_split, 8, 0, 0)])
    e1 = np.concatenate([b.indices for b in batch_iterator(tiny_split, 8, 0, 1)])
    assert not np.array_equal(e0, e1)
    tail = np.concatenate([b.indices for b in batch_iterator(tiny_split, 8, 0, 0, start_batch=1)])
    np.testing.assert_array_equal(tail, e0[8:])


# -- learnability -------------------------------------------------------------------

class TinyRegressor(Module):
    """Three convolutions predicting log-depth at quarter resolution."""

    def __init__(self, rng):
        super().__init__()
        self.c1 = Conv2d(3, 16, 3, stride=2, rng=rng)
        self.c2 = Conv2d(16, 32, 3, stride=2, rng=rng)
        self.c3 = Conv2d(32, 1, 1, rng=rng, init_scale=0.1)

    def forward(self, x):
        h = ops.relu(self.c1(x))
        h = ops.relu(self.c2(h))
        return ops.upsample_nearest(self.c3(h), 4)


def test_synthetic_depth_is_learnable_by_small_cnn():
    spec = SceneSpec(n_train=200, n_val=32)
    train, val = generate_split(spec, "train"), generate_split(spec, "val")
    model = TinyRegressor(np.random.default_rng(0))
    opt = Adam(dict(model.named_parameters()), weight_decay=0.0)
    log_mid = np.float32(np.log(np.sqrt(spec.d_min * spec.d_max)))
    for epoch in range(5):
        for b in batch_iterator(train, 8, 0, epoch):
            err = ops.sub(ops.add(model(Tensor(b.images)), log_mid), np.log(b.depth))
            loss = ops.mean(ops.mul(err, err))
            model.zero_grad()
            loss.backward()
            opt.step(2e-3)
    pred = np.exp(model(Tensor(val.images)).data + log_mid)
    assert evaluate(pred, val.depth, val.mask).abs_rel < 0.25
