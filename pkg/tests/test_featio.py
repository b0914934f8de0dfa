import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctxkernel.errors import FeatureRangeError, FormatError, LabelError, ShapeMismatchError, UnknownModeError
from ctxkernel.featio import (
    FeatureSet,
    LabelMatrix,
    gen_synthetic,
    load_features,
    phi0_hi,
    phi0_linear,
    read_feature_file,
    read_labels,
    write_feature_file,
    write_labels,
)
from ctxkernel.grid import GridSpec


def hi_kernel_quantized(u, v, levels):
    """Direct histogram intersection on quantized values (independent of the unary map)."""
    total = 0.0
    for a, b in zip(u, v):
        qa = np.floor(a * levels + 0.5) / levels
        qb = np.floor(b * levels + 0.5) / levels
        total += min(qa, qb)
    return total


class TestPhi0:
    def test_linear_identity(self, rng):
        assert phi0_linear([1, 2]).tolist() == [1.0, 2.0]
        assert phi0_linear([0, 0]).tolist() == [0.0, 0.0]
        u, v = rng.standard_normal(7), rng.standard_normal(7)
        assert phi0_linear(u) @ phi0_linear(v) == pytest.approx(u @ v, rel=1e-14)

    def test_linear_rejects_nonfinite(self):
        with pytest.raises(FeatureRangeError):
            phi0_linear([1.0, np.nan])

    def test_hi_full_block(self):
        m = phi0_hi([1.0], 4)
        assert m.tolist() == [0.5, 0.5, 0.5, 0.5]
        assert m @ m == 1.0

    def test_hi_example_pair(self):
        u, v = phi0_hi([0.5], 4), phi0_hi([0.75], 4)
        assert u @ v == pytest.approx(0.5, abs=1e-15)
        assert hi_kernel_quantized([0.5], [0.75], 4) == 0.5

    def test_hi_zero_block(self, rng):
        z = phi0_hi([0.0], 4)
        assert not z.any()
        assert z @ phi0_hi([rng.random()], 4) == 0.0

    @pytest.mark.parametrize("bad", [[1.5], [-0.1]])
    def test_hi_range(self, bad):
        with pytest.raises(FeatureRangeError):
            phi0_hi(bad, 4)

    @pytest.mark.parametrize("levels", [0, -3])
    def test_hi_levels(self, levels):
        with pytest.raises(ValueError):
            phi0_hi([0.2], levels)

    def test_hi_batched_shape(self, rng):
        x = rng.random((3, 5, 2))
        assert phi0_hi(x, 8).shape == (3, 5, 16)

    @settings(max_examples=200, deadline=None)
    @given(
        u=arrays(np.float64, 6, elements=st.floats(0, 1)),
        v=arrays(np.float64, 6, elements=st.floats(0, 1)),
        levels=st.integers(1, 32),
    )
    def test_hi_inner_product_is_hi_kernel(self, u, v, levels):
        got = phi0_hi(u, levels) @ phi0_hi(v, levels)
        want = hi_kernel_quantized(u, v, levels)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def _feature_set(rng, spec, n_images=2, d0=3, mode="linear", levels=0):
    values = rng.random((n_images, spec.n_cells, d0)).astype(np.float32)
    return FeatureSet([f"img{p}" for p in range(n_images)], values, spec, mode, levels)


class TestFeatureFile:
    def test_round_trip(self, tmp_path, rng):
        spec = GridSpec(2, 3)
        fs = _feature_set(rng, spec)
        write_feature_file(tmp_path / "f.ctxf", fs)
        back = read_feature_file(tmp_path / "f.ctxf")
        assert back.image_ids == fs.image_ids
        assert (back.spec.rows, back.spec.cols) == (2, 3)
        assert back.mode == "linear"
        np.testing.assert_array_equal(back.values, fs.values)

    def test_load_full_size_file(self, tmp_path, rng):
        spec = GridSpec(8, 10)
        fs = _feature_set(rng, spec, n_images=2, d0=500)
        write_feature_file(tmp_path / "f.ctxf", fs)
        images = load_features(tmp_path / "f.ctxf", spec, "linear")
        assert len(images) == 2
        assert all(img.cells.shape == (80, 500) for img in images)

    def test_load_hi_applies_unary_map(self, tmp_path, rng):
        spec = GridSpec(2, 2)
        fs = _feature_set(rng, spec, d0=3, mode="hi", levels=8)
        write_feature_file(tmp_path / "f.ctxf", fs)
        images = load_features(tmp_path / "f.ctxf", spec)
        assert images[0].cells.shape == (4, 24)
        np.testing.assert_array_equal(images[1].cells, phi0_hi(fs.values[1], 8))

    def test_truncated_image_is_shape_mismatch(self, tmp_path, rng):
        spec = GridSpec(8, 10)
        fs = _feature_set(rng, spec, n_images=1, d0=5)
        path = tmp_path / "f.ctxf"
        write_feature_file(path, fs)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 4 * 5])  # drop the last cell: 79 cells remain
        with pytest.raises(ShapeMismatchError):
            load_features(path, spec)

    def test_grid_mismatch(self, tmp_path, rng):
        write_feature_file(tmp_path / "f.ctxf", _feature_set(rng, GridSpec(2, 2)))
        with pytest.raises(ShapeMismatchError):
            load_features(tmp_path / "f.ctxf", GridSpec(2, 3))

    def test_hi_out_of_range(self, tmp_path, rng):
        spec = GridSpec(1, 2)
        fs = _feature_set(rng, spec, mode="hi", levels=4)
        fs.values[0, 0, 0] = 1.5
        write_feature_file(tmp_path / "f.ctxf", fs)
        with pytest.raises(FeatureRangeError):
            load_features(tmp_path / "f.ctxf", spec)

    def test_nonfinite(self, tmp_path, rng):
        spec = GridSpec(1, 2)
        fs = _feature_set(rng, spec)
        fs.values[0, 1, 1] = np.inf
        write_feature_file(tmp_path / "f.ctxf", fs)
        with pytest.raises(FeatureRangeError):
            load_features(tmp_path / "f.ctxf", spec)

    def test_unknown_mode(self, tmp_path, rng):
        spec = GridSpec(1, 2)
        write_feature_file(tmp_path / "f.ctxf", _feature_set(rng, spec))
        with pytest.raises(UnknownModeError):
            load_features(tmp_path / "f.ctxf", spec, "gaussian")
        with pytest.raises(UnknownModeError):
            load_features(tmp_path / "f.ctxf", spec, "hi")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "f.ctxf").write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(FormatError):
            read_feature_file(tmp_path / "f.ctxf")

    def test_empty_file(self, tmp_path):
        spec = GridSpec(2, 2)
        write_feature_file(tmp_path / "f.ctxf", FeatureSet([], np.zeros((0, 4, 3)), spec))
        assert load_features(tmp_path / "f.ctxf", spec) == []


class TestLabels:
    def test_round_trip(self, tmp_path):
        labels = LabelMatrix([[1, -1], [-1, 1], [1, 1]], ["sky", "sea"], ["a", "b", "c"])
        write_labels(tmp_path / "l.csv", labels)
        back = read_labels(tmp_path / "l.csv")
        assert back.concept_names == ["sky", "sea"]
        assert back.image_ids == ["a", "b", "c"]
        np.testing.assert_array_equal(back.Y, labels.Y)

    def test_reorder_to_image_ids(self, tmp_path):
        labels = LabelMatrix([[1], [-1]], ["sky"], ["a", "b"])
        write_labels(tmp_path / "l.csv", labels)
        assert read_labels(tmp_path / "l.csv", ["b", "a"]).Y[:, 0].tolist() == [-1, 1]

    def test_missing_and_bad_values(self, tmp_path):
        (tmp_path / "l.csv").write_text("image_id,concept,label\na,sky,1\n")
        with pytest.raises(LabelError):
            read_labels(tmp_path / "l.csv", ["a", "b"])
        (tmp_path / "l.csv").write_text("image_id,concept,label\na,sky,0\n")
        with pytest.raises(LabelError):
            read_labels(tmp_path / "l.csv")

    def test_single_sign_concept_named(self):
        labels = LabelMatrix([[1, 1], [-1, 1]], ["sky", "sea"])
        with pytest.raises(LabelError, match="sea"):
            labels.check_trainable()

    def test_entries_must_be_pm1(self):
        with pytest.raises(LabelError):
            LabelMatrix([[0]], ["x"])


class TestSynthetic:
    def test_small_example(self):
        fs, labels = gen_synthetic(GridSpec(2, 2), 4, seed=7)
        assert len(fs) == 4
        assert (labels.Y[:, 0] == 1).sum() == 2 and (labels.Y[:, 1] == 1).sum() == 2
        pooled = fs.values.sum(axis=1)
        cls0, cls1 = labels.Y[:, 0] == 1, labels.Y[:, 1] == 1
        # oracle: class-wise means of context-free pooled features
        np.testing.assert_allclose(pooled[cls0].mean(axis=0), pooled[cls1].mean(axis=0), atol=1e-12)

    def test_deterministic_bytes(self, tmp_path):
        for name in ("a", "b"):
            fs, labels = gen_synthetic(GridSpec(3, 4), 10, seed=11)
            write_feature_file(tmp_path / f"{name}.ctxf", fs)
            write_labels(tmp_path / f"{name}.csv", labels)
        assert (tmp_path / "a.ctxf").read_bytes() == (tmp_path / "b.ctxf").read_bytes()
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_classes_are_mirror_images(self):
        spec = GridSpec(3, 5)
        fs, _ = gen_synthetic(spec, 6, seed=3)
        grids = fs.values.reshape(6, 3, 5, -1)
        np.testing.assert_array_equal(grids[1], grids[0][:, ::-1])
        assert np.all((fs.values >= 0) & (fs.values <= 1))

    @pytest.mark.parametrize("n", [3, 2, 7])
    def test_bad_counts(self, n):
        with pytest.raises(ValueError):
            gen_synthetic(GridSpec(2, 2), n, seed=0)
