import numpy as np
import pytest

from gradcheck import model_fd_check

from ramanmix import ae
from ramanmix.core import EndmemberMatrix, SpectralAxis, SpectralDataset
from ramanmix.nnet import NumericalError
from ramanmix.synth import DatasetSpec, EndmemberSpec, SceneSpec, generate_dataset


def rng_for(seed):
    return np.random.Generator(np.random.Philox(key=seed))


def build(enc="dense", dec="linear", b=32, m=3, asc=True, seed=1, fixed=None):
    return ae.build_model(
        ae.EncoderSpec(enc, b, m),
        ae.DecoderSpec(dec, fixed_endmembers=fixed),
        ae.ConstraintConfig(asc=asc),
        rng_for(seed),
    )


def tiny_problem(n=2, b=60, side=10, seed=5):
    spec = DatasetSpec(EndmemberSpec(n=n, b=b),
                       SceneSpec("chessboard", side, side, n, patch_size=side // 2),
                       seed=seed)
    return generate_dataset(spec)


class TestBuildModel:
    def test_dense_parameter_count(self):
        model = build(b=1000, m=5)
        # b*128 + 128 (hidden) + 128*5 + 5 (latent) + 1000*5 (decoder)
        assert model.parameter_count == 1000 * 128 + 128 + 128 * 5 + 5 + 1000 * 5

    def test_latent_activation_follows_constraints(self):
        with_asc = build(asc=True)
        without = build(asc=False)
        assert with_asc.encoder_layers[-1].kind == "softmax"
        assert without.encoder_layers[-1].kind == "soft_rect_tanh"
        assert without.encoder_layers[-1].param == 10.0

    def test_non_blind_decoder_fixed(self):
        rng = np.random.default_rng(3)
        ax = SpectralAxis(np.arange(1.0, 33.0))
        fixed = EndmemberMatrix(rng.random((32, 3)) + 0.01, ax)
        model = build(fixed=fixed)
        assert not model.decoder.trainable
        assert all(not name.startswith("dec.") for name, _ in model.parameters())
        out = ae.extract_endmembers(model)
        assert np.array_equal(out.signatures, fixed.signatures)

    def test_deterministic_given_seed(self):
        m1, m2 = build(seed=9), build(seed=9)
        for (_, p1), (_, p2) in zip(m1.state_parameters(), m2.state_parameters()):
            assert np.array_equal(p1, p2)

    def test_latent_dim_validation(self):
        with pytest.raises(ValueError):
            ae.EncoderSpec("dense", b=8, m=9)
        with pytest.raises(ValueError):
            ae.EncoderSpec("resnet", b=8, m=2)


class TestDecode:
    def test_one_hot_returns_column(self):
        model = build(b=16, m=4)
        z = np.zeros(4)
        z[2] = 1.0
        assert np.allclose(ae.decode(model, z), model.decoder.W[:, 2])

    def test_bilinear_single_latent_equals_linear(self):
        lin = build(dec="linear", b=16, m=1, seed=4)
        bil = build(dec="bilinear_fan", b=16, m=1, seed=4)
        z = np.array([0.7])
        assert np.allclose(ae.decode(lin, z), ae.decode(bil, z))

    def test_bilinear_hand_expansion(self):
        model = build(dec="bilinear_fan", b=2, m=2)
        model.decoder.W[...] = np.array([[1.0, 1.0], [1.0, 0.0]])
        out = ae.decode(model, np.array([0.5, 0.5]))
        assert np.allclose(out, [1.5, 0.5])

    def test_length_validation(self):
        model = build(b=16, m=4)
        with pytest.raises(ValueError, match="length 4"):
            ae.decode(model, np.ones(3))


class TestLosses:
    def test_sad_of_identical_is_zero(self):
        x = np.random.default_rng(0).random(50) + 0.1
        assert ae.sad_loss(x, x) < 1e-6

    def test_sad_scale_invariant(self):
        x = np.random.default_rng(1).random(50) + 0.1
        assert ae.sad_loss(3.7 * x, x) < 1e-5
        y = np.random.default_rng(2).random(50) + 0.1
        assert ae.sad_loss(5.0 * x, y) == pytest.approx(ae.sad_loss(x, y), abs=1e-12)

    def test_orthogonal_gives_right_angle(self):
        x = np.array([1.0, 0.0])
        y = np.array([0.0, 1.0])
        assert ae.sad_loss(x, y) == pytest.approx(np.pi / 2, abs=1e-9)

    def test_combined_loss_adds_weighted_mse(self):
        rng = np.random.default_rng(3)
        x, y = rng.random(20) + 0.1, rng.random(20) + 0.1
        lam = 1000.0
        expected = ae.sad_loss(x, y) + lam * np.mean((x - y) ** 2)
        assert ae.combined_loss(x, y, lam) == pytest.approx(expected, rel=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(NumericalError, match="zero-norm"):
            ae.sad_loss(np.zeros(5), np.ones(5))


class TestTraining:
    def test_loss_decreases_on_learnable_problem(self):
        data, _ = tiny_problem()
        model = build(b=60, m=2)
        history = ae.train(model, data, ae.TrainConfig(epochs=10, seed=3))
        assert len(history) == 10
        assert history[-1] < history[0]

    def test_decoder_stays_nonnegative(self):
        data, _ = tiny_problem(seed=8)
        model = build(b=60, m=2)
        ae.train(model, data, ae.TrainConfig(epochs=3, seed=1))
        assert model.decoder.W.min() >= 0.0

    def test_identical_seeds_reproduce_history(self):
        data, _ = tiny_problem(seed=11)
        h1 = ae.train(build(b=60, m=2, seed=2), data,
                      ae.TrainConfig(epochs=4, seed=7))
        h2 = ae.train(build(b=60, m=2, seed=2), data,
                      ae.TrainConfig(epochs=4, seed=7))
        assert h1 == h2

    def test_zero_spectrum_aborts_with_diagnostic(self):
        data, _ = tiny_problem(seed=12)
        bad = SpectralDataset(data.axis,
                              np.vstack([data.intensities, np.zeros(60)]))
        model = build(b=60, m=2)
        with pytest.raises(NumericalError):
            ae.train(model, bad, ae.TrainConfig(epochs=1, seed=0))

    def test_band_count_checked(self):
        data, _ = tiny_problem()
        model = build(b=61, m=2)
        with pytest.raises(ValueError, match="bands"):
            ae.train(model, data, ae.TrainConfig(epochs=1, seed=0))

    def test_non_blind_training_keeps_fixed_endmembers(self):
        data, gt = tiny_problem(seed=13)
        model = build(b=60, m=2, fixed=gt.endmembers)
        before = model.decoder.W.copy()
        ae.train(model, data, ae.TrainConfig(epochs=2, seed=5))
        assert np.array_equal(model.decoder.W, before)
        out = ae.extract_endmembers(model)
        assert np.array_equal(out.signatures, gt.endmembers.signatures)


class TestInference:
    def test_asc_rows_sum_to_one(self):
        data, _ = tiny_problem(seed=21)
        model = build(b=60, m=2, asc=True)
        ae.train(model, data, ae.TrainConfig(epochs=2, seed=1))
        ab = ae.predict_abundances(model, data)
        assert ab.asc_enforced
        assert np.abs(ab.values.sum(axis=1) - 1.0).max() < 1e-6

    def test_anc_only_range(self):
        data, _ = tiny_problem(seed=22)
        model = build(b=60, m=2, asc=False)
        ae.train(model, data, ae.TrainConfig(epochs=2, seed=1))
        ab = ae.predict_abundances(model, data)
        assert not ab.asc_enforced
        assert ab.values.min() > 0.0
        assert ab.values.max() < 1.00001

    def test_extract_requires_axis(self):
        model = build()
        with pytest.raises(ValueError, match="axis"):
            ae.extract_endmembers(model)


class TestEndToEndGradients:
    @pytest.mark.parametrize("enc", ["dense", "convolutional"])
    @pytest.mark.parametrize("dec", ["linear", "bilinear_fan"])
    def test_small_combinations(self, enc, dec):
        assert model_fd_check(enc, dec) < 1e-3


class TestSerialization:
    def test_round_trip(self, tmp_path):
        data, _ = tiny_problem(seed=31)
        model = build(b=60, m=2)
        ae.train(model, data, ae.TrainConfig(epochs=2, seed=9))
        path = tmp_path / "model.bin"
        ae.save_model(model, path)
        back = ae.load_model(path)
        for (n1, p1), (n2, p2) in zip(model.state_parameters(),
                                      back.state_parameters()):
            assert n1 == n2
            assert np.array_equal(p1, p2)
        ab1 = ae.predict_abundances(model, data).values
        ab2 = ae.predict_abundances(back, data).values
        assert np.array_equal(ab1, ab2)
        assert np.array_equal(back.axis.values, data.axis.values)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"WRONGSTUFF")
        with pytest.raises(ValueError, match="magic"):
            ae.load_model(path)
