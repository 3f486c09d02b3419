import numpy as np
import pytest

from ramanmix.core import (
    AbundanceMatrix,
    EndmemberMatrix,
    GroundTruth,
    MixtureModel,
    SpectralAxis,
    SpectralDataset,
)
from ramanmix.formats import (
    FormatError,
    load_abundances_csv,
    load_dataset,
    load_endmembers_csv,
    load_ground_truth,
    save_abundances_csv,
    save_dataset,
    save_endmembers_csv,
    save_ground_truth,
)


def make_dataset(n=5, b=50, shape=None, seed=3):
    rng = np.random.default_rng(seed)
    axis = SpectralAxis(np.sort(rng.uniform(100, 3000, b)))
    return SpectralDataset(axis=axis, intensities=rng.standard_normal((n, b)),
                           shape=shape)


class TestBin:
    def test_round_trip_bit_exact(self, tmp_path):
        d = make_dataset(5, 50)
        path = tmp_path / "d.bin"
        save_dataset(d, path)
        back = load_dataset(path)
        assert np.array_equal(back.intensities, d.intensities)
        assert np.array_equal(back.axis.values, d.axis.values)
        assert back.shape is None

    def test_round_trip_with_shape(self, tmp_path):
        d = make_dataset(24, 10, shape=(2, 3, 4))
        path = tmp_path / "d.bin"
        save_dataset(d, path)
        assert load_dataset(path).shape == (2, 3, 4)

    def test_save_is_deterministic(self, tmp_path):
        d = make_dataset(4, 30)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_dataset(d, p1)
        save_dataset(d, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.bin"
        path.write_bytes(b"NOPE" + b"\0" * 40)
        with pytest.raises(FormatError, match="magic"):
            load_dataset(path)

    def test_truncated_file(self, tmp_path):
        d = make_dataset(4, 30)
        path = tmp_path / "d.bin"
        save_dataset(d, path)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(FormatError, match="truncated"):
            load_dataset(path)


class TestCsv:
    def test_round_trip_within_tolerance(self, tmp_path):
        d = make_dataset(5, 40)
        path = tmp_path / "d.csv"
        save_dataset(d, path)
        back = load_dataset(path)
        assert np.allclose(back.intensities, d.intensities, rtol=1e-12, atol=0)
        assert np.allclose(back.axis.values, d.axis.values, rtol=1e-12, atol=0)

    def test_sidecar_shape(self, tmp_path):
        d = make_dataset(12, 8, shape=(3, 4))
        path = tmp_path / "d.csv"
        save_dataset(d, path)
        assert (tmp_path / "d.meta.json").exists()
        assert load_dataset(path).shape == (3, 4)

    def test_decreasing_axis_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("3.0,2.0,1.0\n1.0,2.0,3.0\n")
        with pytest.raises(FormatError, match="axis not strictly increasing"):
            load_dataset(path)

    def test_ragged_row_names_line(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1.0,2.0,3.0\n1.0,2.0,3.0\n1.0,2.0\n")
        with pytest.raises(FormatError, match="row 3"):
            load_dataset(path)

    def test_non_numeric_cell_names_position(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1.0,2.0\n0.5,oops\n")
        with pytest.raises(FormatError, match="line 2, column 2"):
            load_dataset(path)


class TestGroundTruth:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        ax = SpectralAxis(np.arange(1.0, 21.0))
        M = EndmemberMatrix(rng.random((20, 3)) + 0.01, ax)
        A = rng.random((7, 3))
        A /= A.sum(axis=1, keepdims=True)
        gt = GroundTruth(M, AbundanceMatrix(A, asc_enforced=True),
                         MixtureModel.BILINEAR_FAN)
        path = tmp_path / "x.gt.bin"
        save_ground_truth(gt, path)
        back = load_ground_truth(path)
        assert np.array_equal(back.endmembers.signatures, M.signatures)
        assert np.array_equal(back.abundances.values, A)
        assert back.abundances.asc_enforced
        assert back.mixture_model is MixtureModel.BILINEAR_FAN


class TestResultCsv:
    def test_endmembers_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        ax = SpectralAxis(np.arange(1.0, 31.0))
        M = EndmemberMatrix(rng.random((30, 4)) + 0.01, ax)
        path = tmp_path / "endmembers.csv"
        save_endmembers_csv(M, path)
        back = load_endmembers_csv(path)
        assert np.allclose(back.signatures, M.signatures, rtol=1e-12)

    def test_abundances_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        A = rng.random((9, 4))
        path = tmp_path / "abundances.csv"
        save_abundances_csv(A, path, asc_enforced=False)
        assert np.allclose(load_abundances_csv(path), A, rtol=1e-12)
