import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvae.data import (MAGIC, BadMagicError, FormatError, Records, SceneConfig, TruncatedFileError,
                       UnsupportedVersionError, dataset_bytes, from_arrays, generate, load_dataset, make_dataset,
                       parse_dataset, save_dataset, split)

CFG = SceneConfig()


def test_generate_deterministic():
    a, b = generate(CFG, 20), generate(CFG, 20)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_generate_seed_matters():
    assert not np.array_equal(generate(CFG, 3).images, generate(SceneConfig(seed=1), 3).images)


def test_shapes_and_ranges():
    r = generate(CFG, 50)
    assert r.images.shape == (50, 256) and r.labels.shape == (50, 8)
    assert np.all(np.isfinite(r.images))
    assert r.labels.min() >= 0.0 and r.labels.max() <= 1.0
    assert CFG.d_dim == 256 and CFG.h_dim == 8


def test_bad_config_rejected():
    for kwargs in ({"num_landmarks": 1}, {"image_side": 0}, {"blob_std": 0.0}, {"noise_std": -1.0}):
        with pytest.raises(ValueError):
            SceneConfig(**kwargs)
    with pytest.raises(ValueError):
        generate(CFG, 0)


def test_impossible_layout_rejected():
    # landmarks jittered far outside the frame can never be placed
    with pytest.raises(RuntimeError, match="attempts"):
        generate(SceneConfig(jitter_std=50.0), 1)


def _subpixel_peak(img, side, label_xy):
    """Quadratic fit around the brightest pixel near the labelled position."""
    grid = img.reshape(side, side)
    cx, cy = label_xy * side - 0.5
    r0, c0 = int(round(cy)), int(round(cx))
    best, pos = -np.inf, None
    for r in range(max(1, r0 - 1), min(side - 1, r0 + 2)):
        for c in range(max(1, c0 - 1), min(side - 1, c0 + 2)):
            if grid[r, c] > best:
                best, pos = grid[r, c], (r, c)
    r, c = pos

    def vertex(m1, m0, p1):
        denom = m1 - 2 * m0 + p1
        return 0.0 if denom == 0 else 0.5 * (m1 - p1) / denom

    y = r + vertex(grid[r - 1, c], grid[r, c], grid[r + 1, c])
    x = c + vertex(grid[r, c - 1], grid[r, c], grid[r, c + 1])
    return np.array([x, y]) + 0.5


def test_labels_match_rendered_bumps():
    cfg = SceneConfig(noise_std=0.0)
    r = generate(cfg, 100)
    worst = 0.0
    for img, lab in zip(r.images, r.labels):
        for xy in lab.reshape(-1, 2):
            worst = max(worst, np.linalg.norm(_subpixel_peak(img, cfg.image_side, xy) - xy * cfg.image_side))
    assert worst < 1.0


def test_depth_mask_fraction():
    cfg = SceneConfig(depth_mode=True)
    r = generate(cfg, 400)
    assert r.masks.shape == r.images.shape
    assert (~r.masks).mean() < 0.6
    assert np.all(r.images[~r.masks] == 0.0)
    assert (~r.masks).any()


class TestSplit:
    def test_partition(self):
        recs = generate(CFG, 6)
        ds = split(recs, 2, 3, 1, seed=0)
        assert (ds.n, ds.m, ds.t) == (2, 3, 1)
        idx = ds.source_index
        all_idx = np.concatenate([idx["labeled"], idx["unlabeled"], idx["test"]])
        assert sorted(all_idx) == list(range(6))

    def test_overflow(self):
        with pytest.raises(ValueError, match="needs 7 records but only 6"):
            split(generate(CFG, 6), 2, 3, 2, seed=0)

    def test_no_test_rejected(self):
        with pytest.raises(ValueError):
            split(generate(CFG, 6), 2, 3, 0, seed=0)

    def test_deterministic(self):
        recs = generate(CFG, 10)
        a, b = split(recs, 3, 4, 2, seed=5), split(recs, 3, 4, 2, seed=5)
        for key in ("labeled", "unlabeled", "test"):
            np.testing.assert_array_equal(a.source_index[key], b.source_index[key])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10), st.integers(0, 10), st.integers(1, 10), st.integers(0, 2**31))
    def test_disjoint(self, n, m, t, seed):
        total = 30
        if n + m + t > total:
            return
        recs = Records(np.arange(total, dtype=float)[:, None] * np.ones((1, 4)), np.zeros((total, 4)))
        ds = split(recs, n, m, t, seed)
        sets = [set(ds.source_index[k].tolist()) for k in ("labeled", "unlabeled", "test")]
        assert sum(len(s) for s in sets) == len(set.union(*sets)) == n + m + t

    def test_subset(self):
        ds = make_dataset(CFG, 5, 7, 3)
        sub = ds.subset(2, 4)
        assert (sub.n, sub.m, sub.t) == (2, 4, 3)
        np.testing.assert_array_equal(sub.labeled_d, ds.labeled_d[:2])
        with pytest.raises(ValueError):
            ds.subset(6, 0)


class TestFormat:
    def _roundtrip(self, ds, tmp_path):
        path = tmp_path / "ds.hvds"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert dataset_bytes(back) == path.read_bytes()
        return back

    def test_roundtrip(self, tmp_path):
        ds = make_dataset(CFG, 3, 4, 2)
        back = self._roundtrip(ds, tmp_path)
        for name in ("labeled_d", "labeled_h", "unlabeled_d", "test_d", "test_h"):
            assert getattr(back, name).tobytes() == getattr(ds, name).tobytes()
        assert (back.config.image_side, back.config.num_landmarks) == (16, 4)

    def test_roundtrip_depth(self, tmp_path):
        ds = make_dataset(SceneConfig(depth_mode=True, image_side=5), 3, 2, 2)
        back = self._roundtrip(ds, tmp_path)
        assert back.depth_mode
        for name in ("labeled_mask", "unlabeled_mask", "test_mask"):
            np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))

    def test_empty_pools(self, tmp_path):
        ds = make_dataset(CFG, 0, 0, 1)
        back = self._roundtrip(ds, tmp_path)
        assert (back.n, back.m, back.t) == (0, 0, 1)

    def test_bad_magic(self):
        buf = bytearray(dataset_bytes(make_dataset(CFG, 1, 1, 1)))
        buf[:4] = b"XXXX"
        with pytest.raises(BadMagicError, match="bad magic"):
            parse_dataset(bytes(buf))

    def test_newer_version(self):
        buf = bytearray(dataset_bytes(make_dataset(CFG, 1, 1, 1)))
        buf[4:8] = (2).to_bytes(4, "little")
        with pytest.raises(UnsupportedVersionError, match="version 2"):
            parse_dataset(bytes(buf))

    def test_truncated(self):
        buf = dataset_bytes(make_dataset(CFG, 1, 1, 1))
        for cut in (10, len(buf) - 1):
            with pytest.raises(TruncatedFileError):
                parse_dataset(buf[:cut])
        with pytest.raises(FormatError):
            parse_dataset(buf + b"\0")

    def test_errors_are_distinct(self):
        assert len({BadMagicError, UnsupportedVersionError, TruncatedFileError}) == 3
        assert MAGIC == b"HVDS"

    def test_external_arrays(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs, labs = rng.random((10, 4, 4)), rng.random((10, 6))
        ds = from_arrays(imgs, labs, 3, 4, 3, path=tmp_path / "ext.hvds")
        back = load_dataset(tmp_path / "ext.hvds")
        assert (back.config.image_side, back.config.num_landmarks) == (4, 3)
        np.testing.assert_array_equal(back.test_h, ds.test_h)
