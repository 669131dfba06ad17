import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from facialgan import data
from facialgan.data import (DatasetIndex, build_index, decode_index_grid,
                            load_sample, make_batch, mask_attribute, remap_classes,
                            resize_grid, split_counts)
from facialgan.errors import (BadMask, DecodeError, EmptySplit, ShapeMismatch,
                              UnknownClass)
from facialgan.toy import draw_toy_face

RAW = {name: i for i, name in enumerate(data.RAW_CLASS_NAMES)}
WORKING = {"background": 0, "skin": 1, "eyes": 2, "nose": 3, "mouth": 4}


def brute_force_remap(raw_grid):
    """Independent per-pixel oracle for the remapping table."""
    table = {
        RAW["l_eye"]: "eyes", RAW["r_eye"]: "eyes",
        RAW["l_brow"]: "eyes", RAW["r_brow"]: "eyes",
        RAW["nose"]: "nose",
        RAW["mouth"]: "mouth", RAW["u_lip"]: "mouth", RAW["l_lip"]: "mouth",
        RAW["skin"]: "skin",
    }
    h, w = raw_grid.shape
    out = np.zeros((5, h, w), dtype=np.float32)
    for i in range(h):
        for j in range(w):
            out[WORKING[table.get(int(raw_grid[i, j]), "background")], i, j] = 1.0
    return out


class TestRemapClasses:
    def test_brow_goes_to_eyes(self):
        grid = np.full((2, 2), RAW["l_brow"])
        m = remap_classes(grid)
        assert torch.equal(m[WORKING["eyes"]], torch.ones(2, 2))

    def test_upper_lip_goes_to_mouth(self):
        grid = np.full((2, 2), RAW["u_lip"])
        m = remap_classes(grid)
        assert torch.equal(m[WORKING["mouth"]], torch.ones(2, 2))

    def test_known_4x4_grid_matches_hand_table(self):
        grid = np.array([
            [RAW["background"], RAW["skin"], RAW["l_eye"], RAW["r_brow"]],
            [RAW["nose"], RAW["mouth"], RAW["u_lip"], RAW["l_lip"]],
            [RAW["hair"], RAW["hat"], RAW["cloth"], RAW["neck"]],
            [RAW["eye_g"], RAW["l_ear"], RAW["skin"], RAW["r_eye"]],
        ])
        assert np.array_equal(remap_classes(grid).numpy(), brute_force_remap(grid))

    def test_full_sample_pixel_counts_match_oracle(self, toy_root_64):
        rec = build_index(toy_root_64, "all").records[0]
        raw = decode_index_grid(rec.mask_path)
        m = remap_classes(raw)
        oracle = brute_force_remap(raw)
        assert np.array_equal(m.sum(dim=(1, 2)).numpy(), oracle.sum(axis=(1, 2)))

    def test_unknown_class_raises(self):
        with pytest.raises(UnknownClass):
            remap_classes(np.array([[19]]))

    @given(grid=st.integers(0, 18).flatmap(
        lambda _: st.lists(st.lists(st.integers(0, 18), min_size=3, max_size=3),
                           min_size=3, max_size=3)))
    @settings(max_examples=30, deadline=None)
    def test_one_hot_integrity(self, grid):
        m = remap_classes(np.array(grid))
        assert torch.equal(m.sum(dim=0), torch.ones(3, 3))


class TestLoadSample:
    def test_resize_to_working_resolution(self, tmp_path):
        img, mask, gender = draw_toy_face([9, 0], size=1024)
        (tmp_path / "images").mkdir(), (tmp_path / "masks").mkdir()
        (tmp_path / "images" / "a.png").write_bytes(data.encode_image(img))
        (tmp_path / "masks" / "a.png").write_bytes(data.encode_index_grid(mask))
        rec = data.DatasetRecord("a", tmp_path / "images" / "a.png",
                                 tmp_path / "masks" / "a.png", gender)
        x, m = load_sample(rec, 256)
        assert x.shape == (3, 256, 256) and m.shape == (5, 256, 256)
        assert x.min() >= -1.0 and x.max() <= 1.0

    def test_all_background_mask(self, tmp_path):
        (tmp_path / "images").mkdir(), (tmp_path / "masks").mkdir()
        img = np.zeros((8, 8, 3), dtype=np.uint8)
        mask = np.zeros((8, 8), dtype=np.uint8)
        (tmp_path / "images" / "b.png").write_bytes(data.encode_image(img))
        (tmp_path / "masks" / "b.png").write_bytes(data.encode_index_grid(mask))
        rec = data.DatasetRecord("b", tmp_path / "images" / "b.png",
                                 tmp_path / "masks" / "b.png", 0)
        _, m = load_sample(rec, 8)
        assert torch.equal(m[0], torch.ones(8, 8))
        assert torch.equal(m[1:], torch.zeros(4, 8, 8))

    def test_deterministic(self, toy_root_64):
        rec = build_index(toy_root_64, "all").records[0]
        x1, m1 = load_sample(rec, 64)
        x2, m2 = load_sample(rec, 64)
        assert torch.equal(x1, x2) and torch.equal(m1, m2)

    def test_shape_mismatch(self, tmp_path):
        (tmp_path / "images").mkdir(), (tmp_path / "masks").mkdir()
        (tmp_path / "images" / "c.png").write_bytes(
            data.encode_image(np.zeros((8, 8, 3), dtype=np.uint8)))
        (tmp_path / "masks" / "c.png").write_bytes(
            data.encode_index_grid(np.zeros((4, 4), dtype=np.uint8)))
        rec = data.DatasetRecord("c", tmp_path / "images" / "c.png",
                                 tmp_path / "masks" / "c.png", 0)
        with pytest.raises(ShapeMismatch):
            load_sample(rec, 8)

    def test_corrupt_file(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not a png")
        with pytest.raises(DecodeError):
            data.decode_image(tmp_path / "bad.png")
        with pytest.raises(DecodeError):
            decode_index_grid(b"\x89PNG\r\n\x1a\ntruncated")

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_nearest_resize_invents_no_classes(self, seed):
        rng = np.random.default_rng(seed)
        grid = rng.integers(0, 19, size=(11, 11)).astype(np.uint8)
        for target in (4, 7, 23):
            resized = resize_grid(grid, target)
            assert set(np.unique(resized)) <= set(np.unique(grid))


class TestMaskAttribute:
    def _pair(self, h=8):
        rng = np.random.default_rng(5)
        x = torch.from_numpy(rng.uniform(-1, 1, size=(3, h, h)).astype(np.float32))
        grid = rng.integers(0, 5, size=(h, h))
        m = data.grid_to_onehot(grid)
        return x, m, grid

    def test_differs_exactly_on_region(self):
        x, m, grid = self._pair()
        out = mask_attribute(x, m, "eyes")
        region = torch.from_numpy(grid == WORKING["eyes"])
        assert torch.equal(out[:, region], torch.zeros_like(out[:, region]))
        assert torch.equal(out[:, ~region], x[:, ~region])

    def test_empty_region_is_identity(self):
        x, _, _ = self._pair()
        m = data.grid_to_onehot(np.zeros((8, 8), dtype=np.int64))
        assert torch.equal(mask_attribute(x, m, "nose"), x)

    def test_zeroed_set_matches_per_pixel_oracle(self):
        x, m, grid = self._pair()
        out = mask_attribute(x, m, "mouth")
        oracle = {(i, j) for i in range(8) for j in range(8)
                  if grid[i, j] == WORKING["mouth"]}
        zeroed = {(i, j) for i in range(8) for j in range(8)
                  if torch.all(out[:, i, j] == 0) and not torch.all(x[:, i, j] == 0)}
        assert zeroed == oracle

    def test_idempotent(self):
        x, m, _ = self._pair()
        once = mask_attribute(x, m, "eyes")
        twice = mask_attribute(once, m, "eyes")
        assert torch.equal(once, twice)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mask_attribute(torch.zeros(3, 8, 8), torch.zeros(5, 4, 4), "eyes")


class TestMakeBatch:
    def test_deterministic_for_fixed_seed(self, toy_root_16):
        idx = build_index(toy_root_16, "all")
        b1 = make_batch(idx, 4, 7, 16)
        b2 = make_batch(idx, 4, 7, 16)
        assert torch.equal(b1.x, b2.x) and torch.equal(b1.m, b2.m)
        assert torch.equal(b1.gender, b2.gender) and b1.c_masked == b2.c_masked
        assert torch.equal(b1.x_masked, b2.x_masked)

    def test_leading_dim(self, toy_root_16):
        idx = build_index(toy_root_16, "all")
        b = make_batch(idx, 8, 0, 16)
        assert b.x.shape[0] == b.m.shape[0] == b.gender.shape[0] == 8
        assert b.x_masked.shape[0] == 8 and len(b.c_masked) == 8

    def test_masked_matches_op(self, toy_root_16):
        idx = build_index(toy_root_16, "all")
        b = make_batch(idx, 4, 1, 16)
        for i, c in enumerate(b.c_masked):
            assert torch.equal(b.x_masked[i], mask_attribute(b.x[i], b.m[i], c))

    def test_attribute_frequency_binomial(self, toy_root_16):
        idx = build_index(toy_root_16, "all")
        counts = {"eyes": 0, "nose": 0, "mouth": 0}
        draws, batch = 30_000, 500
        for k in range(draws // batch):
            for c in make_batch(idx, batch, [13, k], 16).c_masked:
                counts[c] += 1
        sigma = (draws * (1 / 3) * (2 / 3)) ** 0.5
        for c, n in counts.items():
            assert abs(n - draws / 3) <= 3 * sigma, f"{c}: {n}"

    def test_empty_split(self):
        with pytest.raises(EmptySplit):
            make_batch(DatasetIndex(records=[], split="train"), 2, 0, 16)


class TestIndex:
    def test_split_counts(self):
        assert split_counts(30_000) == (28_000, 1_000, 1_000)
        assert split_counts(18) == (16, 1, 1)
        assert split_counts(2) == (2, 0, 0)

    def test_splits_partition_by_ascending_id(self, toy_root_64):
        train = build_index(toy_root_64, "train").records
        val = build_index(toy_root_64, "val").records
        test = build_index(toy_root_64, "test").records
        ids = [r.sample_id for r in train + val + test]
        assert ids == sorted(ids) and len(ids) == 18
        assert (len(train), len(val), len(test)) == (16, 1, 1)

    def test_wire_grid_roundtrip(self):
        rng = np.random.default_rng(2)
        grid = rng.integers(0, 5, size=(9, 9)).astype(np.uint8)
        assert np.array_equal(decode_index_grid(data.encode_index_grid(grid)), grid)

    def test_grid_to_onehot_rejects_out_of_range(self):
        with pytest.raises(BadMask):
            data.grid_to_onehot(np.array([[7]]))
