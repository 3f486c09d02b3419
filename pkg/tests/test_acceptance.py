"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The heavy scenario tests (artifact robustness, bilinear, scaling)
generate full 100x100 x 1000-band datasets and train real models, so the
whole module takes several minutes.
"""

import itertools
import json
import time

import numpy as np
import pytest

from gradcheck import fd_check, model_fd_check

from ramanmix import ae, cli, evalbench, nnet
from ramanmix.classic import fcls, nnls
from ramanmix.core import MixtureModel
from ramanmix.evalbench import _hungarian_square
from ramanmix.synth import (
    ArtifactConfig,
    DatasetSpec,
    EndmemberSpec,
    SceneSpec,
    generate_dataset,
    generate_scene,
    stage_rng,
    _major_component,
)

N_ENDMEMBERS = 5
BANDS = 1000


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} — {detail}")


def benchmark_spec(seed, style="clean", scene="chessboard", artifacts=None,
               model=MixtureModel.LINEAR):
    return DatasetSpec(
        endmembers=EndmemberSpec(n=N_ENDMEMBERS, b=BANDS, style=style),
        scene=SceneSpec(scene, 100, 100, N_ENDMEMBERS),
        model=model,
        artifacts=artifacts,
        seed=seed,
    )


@pytest.fixture(scope="module")
def ideal_chessboard():
    return generate_dataset(benchmark_spec(seed=11))


def run_and_score(method, data, gt, seed, latent):
    M, ab, seconds = evalbench.run_method(method, data, N_ENDMEMBERS,
                                          seed=seed, latent=latent)
    rep = evalbench.evaluate((M, ab), gt, runtime=seconds)
    return rep


class TestCriterion1IdealRecovery:
    def test_conventional_methods_recover_exactly(self, ideal_chessboard):
        data, gt = ideal_chessboard
        results = {}
        for method in ("nfindr+fcls", "vca+fcls"):
            start = time.perf_counter()
            rep = run_and_score(method, data, gt, seed=1, latent=N_ENDMEMBERS)
            elapsed = time.perf_counter() - start
            results[method] = (rep.endmember_sad, rep.abundance_mse, elapsed)
        ok = all(s <= 0.01 and m <= 0.001 and t < 120
                 for s, m, t in results.values())
        report("1 (ideal/chessboard conventional recovery)", ok,
               "; ".join(f"{k}: SAD={v[0]:.2e} MSE={v[1]:.2e} {v[2]:.0f}s"
                         for k, v in results.items()))
        for method, (s, m, t) in results.items():
            assert s <= 0.01, method
            assert m <= 0.001, method
            assert t < 120, method


class TestCriterion2DenseAEIdeal:
    def test_mean_over_five_seeds(self, ideal_chessboard):
        data, gt = ideal_chessboard
        sads, mses = [], []
        for seed in range(1, 6):
            rep = run_and_score("dense-ae", data, gt, seed=seed,
                                latent=N_ENDMEMBERS)
            sads.append(rep.endmember_sad)
            mses.append(rep.abundance_mse)
        mean_sad, mean_mse = float(np.mean(sads)), float(np.mean(mses))
        ok = mean_sad <= 0.10 and mean_mse <= 0.02
        report("2 (dense AE ideal/chessboard)", ok,
               f"mean SAD={mean_sad:.4f} (<=0.10), mean MSE={mean_mse:.4f} (<=0.02)")
        assert mean_sad <= 0.10
        assert mean_mse <= 0.02


class TestCriterion3ArtifactRobustness:
    def test_ae_beats_both_conventional(self):
        dataset_seeds = (21, 22, 23)
        model_seeds = (1, 2, 3)
        latent = N_ENDMEMBERS + 1
        means = {}
        for method in ("dense-ae", "vca+fcls", "nfindr+fcls"):
            sads = []
            for ds_seed in dataset_seeds:
                data, gt = generate_dataset(
                    benchmark_spec(seed=ds_seed, artifacts=ArtifactConfig()))
                for seed in model_seeds:
                    rep = run_and_score(method, data, gt, seed=seed,
                                        latent=latent)
                    sads.append(rep.endmember_sad)
            means[method] = float(np.mean(sads))
        ok = (means["dense-ae"] < means["vca+fcls"]
              and means["dense-ae"] < means["nfindr+fcls"])
        report("3 (+artifacts robustness ordering)", ok,
               f"dense-ae={means['dense-ae']:.3f} < vca={means['vca+fcls']:.3f}"
               f" and < nfindr={means['nfindr+fcls']:.3f}")
        assert means["dense-ae"] < means["vca+fcls"]
        assert means["dense-ae"] < means["nfindr+fcls"]


class TestCriterion4Bilinear:
    def test_bilinear_decoder_beats_conventional(self):
        dataset_seeds = (41, 42, 43)
        model_seeds = (1, 2, 3)
        latent = N_ENDMEMBERS + 1
        bilinear_ae = {"kind": "ae", "encoder": "dense",
                       "decoder": "bilinear_fan", "name": "dense-ae-bilinear"}
        means = {}
        for method in (bilinear_ae, "vca+fcls", "nfindr+fcls"):
            name = method if isinstance(method, str) else method["name"]
            sads = []
            for ds_seed in dataset_seeds:
                data, gt = generate_dataset(
                    benchmark_spec(seed=ds_seed, style="noisy", scene="dirichlet",
                               artifacts=ArtifactConfig(),
                               model=MixtureModel.BILINEAR_FAN))
                for seed in model_seeds:
                    rep = run_and_score(method, data, gt, seed=seed,
                                        latent=latent)
                    sads.append(rep.endmember_sad)
            means[name] = float(np.mean(sads))
        ok = (means["dense-ae-bilinear"] < means["vca+fcls"]
              and means["dense-ae-bilinear"] < means["nfindr+fcls"])
        report("4 (+bilinear/dirichlet ordering)", ok,
               f"dense-ae-bilinear={means['dense-ae-bilinear']:.3f} < "
               f"vca={means['vca+fcls']:.3f} and < nfindr={means['nfindr+fcls']:.3f}")
        assert means["dense-ae-bilinear"] < means["vca+fcls"]
        assert means["dense-ae-bilinear"] < means["nfindr+fcls"]


class TestCriterion5GradientSuite:
    def test_all_layers_and_models(self):
        start = time.perf_counter()
        rng = np.random.Generator(np.random.Philox(key=0))
        data_rng = np.random.default_rng(3)
        layer_errs = {
            "dense": fd_check(nnet.Dense(7, 4, rng),
                              data_rng.standard_normal((3, 7))),
            "conv1d": fd_check(nnet.Conv1D(2, 4, 5, rng),
                               data_rng.standard_normal((2, 13, 2))),
            "attention": fd_check(nnet.MultiHeadAttention(8, 2, 4, rng),
                                  data_rng.standard_normal((2, 6, 8))),
            "layernorm": fd_check(nnet.LayerNorm(6),
                                  data_rng.standard_normal((3, 4, 6))),
            "softmax": fd_check(nnet.Activation("softmax"),
                                data_rng.standard_normal((3, 5))),
            "soft_rect_tanh": fd_check(nnet.Activation("soft_rect_tanh", 10.0),
                                       data_rng.standard_normal((3, 5)) * 0.5),
            "leaky_relu": fd_check(nnet.Activation("leaky_relu", 0.02),
                                   data_rng.standard_normal((3, 5)) + 0.2),
        }
        model_errs = {}
        for enc in ae.ENCODER_KINDS:
            for dec in ae.DECODER_KINDS:
                model_errs[f"{enc}x{dec}"] = model_fd_check(enc, dec)
        elapsed = time.perf_counter() - start
        worst_layer = max(layer_errs.values())
        worst_model = max(model_errs.values())
        ok = worst_layer < 1e-4 and worst_model < 1e-3 and elapsed < 60
        report("5 (gradient suite)", ok,
               f"worst layer {worst_layer:.2e} (<1e-4), worst model "
               f"{worst_model:.2e} (<1e-3), {elapsed:.1f}s (<60s)")
        assert worst_layer < 1e-4
        assert worst_model < 1e-3
        assert elapsed < 60


class TestCriterion6Constraints:
    def test_latent_constraints_and_weight_clipping(self):
        rng = np.random.default_rng(0)
        latents = rng.standard_normal((10_000, 6)) * 10
        soft = nnet.softmax(latents)
        softmax_dev = float(np.abs(soft.sum(axis=1) - 1.0).max())
        srt = nnet.soft_rect_tanh(latents, 10.0)
        srt_ok = bool(srt.min() > 0.0 and srt.max() < 1.00001)

        spec = DatasetSpec(EndmemberSpec(n=3, b=60),
                           SceneSpec("chessboard", 20, 20, 3, patch_size=5),
                           seed=6)
        data, _ = generate_dataset(spec)
        model = ae.build_model(ae.EncoderSpec("dense", 60, 3),
                               ae.DecoderSpec("linear"),
                               ae.ConstraintConfig(asc=True),
                               np.random.Generator(np.random.Philox(key=1)))
        ae.train(model, data, ae.TrainConfig(epochs=3, seed=2))
        w_min = float(model.decoder.W.min())
        ok = softmax_dev <= 1e-12 and srt_ok and w_min >= 0.0
        report("6 (constraint suite)", ok,
               f"softmax row-sum dev {softmax_dev:.1e} (<=1e-12), "
               f"soft-rect range ok={srt_ok}, trained W min {w_min:.1e} (>=0)")
        assert softmax_dev <= 1e-12
        assert srt_ok
        assert w_min >= 0.0


class TestCriterion7SolverOracles:
    def test_nnls_fcls_hungarian(self):
        rng = np.random.default_rng(7)
        worst_kkt = 0.0
        for _ in range(100):
            m = int(rng.integers(3, 30))
            n = int(rng.integers(1, 9))
            A = rng.standard_normal((m, n))
            x = rng.standard_normal(m)
            alpha = nnls(A, x)
            grad = A.T @ (A @ alpha - x)
            for j in range(n):
                if alpha[j] > 1e-9:
                    worst_kkt = max(worst_kkt, abs(grad[j]))
                else:
                    worst_kkt = max(worst_kkt, max(-grad[j], 0.0))

        worst_asc = 0.0
        for _ in range(50):
            A = rng.random((25, 4)) + 0.01
            x = rng.standard_normal(25)
            alpha = fcls(A, x)
            worst_asc = max(worst_asc, abs(alpha.sum() - 1.0))

        hungarian_exact = True
        for _ in range(200):
            n_t = int(rng.integers(2, 8))
            n_e = int(rng.integers(2, 8))
            C = rng.random((n_t, n_e)) * np.pi
            size = max(n_t, n_e)
            padded = np.full((size, size), 100.0)
            padded[:n_t, :n_e] = C
            assignment = _hungarian_square(padded)
            cost = sum(C[i, assignment[i]] for i in range(n_t)
                       if assignment[i] < n_e)
            k = min(n_t, n_e)
            if n_t <= n_e:
                best = min(sum(C[i, p[i]] for i in range(k)) for p in
                           itertools.permutations(range(n_e), k))
            else:
                best = min(sum(C[p[j], j] for j in range(k)) for p in
                           itertools.permutations(range(n_t), k))
            if abs(cost - best) > 1e-10:
                hungarian_exact = False
        ok = worst_kkt < 1e-8 and worst_asc < 1e-6 and hungarian_exact
        report("7 (solver oracles)", ok,
               f"NNLS KKT {worst_kkt:.1e} (<1e-8), FCLS ASC {worst_asc:.1e} "
               f"(<1e-6), Hungarian==brute-force={hungarian_exact}")
        assert worst_kkt < 1e-8
        assert worst_asc < 1e-6
        assert hungarian_exact


class TestCriterion8GeneratorStatistics:
    def test_peak_counts_incidences_and_dirichlet(self):
        rng = stage_rng(99, 0)
        counts = np.array([_major_component(rng, 40)[1] for _ in range(10_000)])
        counts_ok = bool(counts.min() >= 5 and counts.max() <= 9)

        from ramanmix.core import SpectralAxis, SpectralDataset
        n, b = 10_000, 30
        zeros = SpectralDataset(SpectralAxis(np.arange(1.0, b + 1)),
                                np.zeros((n, b)))
        from ramanmix.synth import add_artifacts
        out = add_artifacts(zeros,
                            ArtifactConfig(sigma_noise=0.0, p_baseline=0.25,
                                           p_spike=0.0),
                            stage_rng(99, 1))
        base_rate = float(np.mean(out.intensities.any(axis=1)))
        base_ok = abs(base_rate - 0.25) < 3 * np.sqrt(0.25 * 0.75 / n)
        out = add_artifacts(zeros,
                            ArtifactConfig(sigma_noise=0.0, p_baseline=0.0,
                                           p_spike=0.1),
                            stage_rng(99, 2))
        spike_rate = float(np.mean(out.intensities.any(axis=1)))
        spike_ok = abs(spike_rate - 0.1) < 3 * np.sqrt(0.1 * 0.9 / n)

        A = generate_scene(SceneSpec("dirichlet", 100, 100, N_ENDMEMBERS),
                           stage_rng(99, 3)).values
        var = (1 / N_ENDMEMBERS) * (1 - 1 / N_ENDMEMBERS) / (N_ENDMEMBERS + 1)
        bound = 3 * np.sqrt(var / A.shape[0])
        dir_dev = float(np.abs(A.mean(axis=0) - 1 / N_ENDMEMBERS).max())
        dir_ok = dir_dev < bound

        ok = counts_ok and base_ok and spike_ok and dir_ok
        report("8 (generator statistics)", ok,
               f"peak counts in 5..9={counts_ok}, baseline {base_rate:.3f} "
               f"(0.25±3σ={base_ok}), spikes {spike_rate:.3f} (0.1±3σ={spike_ok}), "
               f"dirichlet dev {dir_dev:.4f} < {bound:.4f}")
        assert counts_ok and base_ok and spike_ok and dir_ok


class TestCriterion9Scaling:
    def test_dense_ae_wall_time_linear_in_n(self, tmp_path):
        sizes = [2500, 10000, 40000]
        rows = evalbench.profile_scaling(sizes, ["dense-ae"], runs=3,
                                         base_seed=5,
                                         out_path=tmp_path / "scaling.csv")
        cells = {(r["method"], r["N"]) for r in rows}
        grid_complete = (cells == {("dense-ae", s) for s in sizes}
                         and all(sum(1 for r in rows if r["N"] == s) == 3
                                 for s in sizes))
        N = np.array([r["N"] for r in rows], dtype=float)
        t = np.array([r["seconds"] for r in rows])
        slope, intercept = np.polyfit(N, t, 1)
        pred = slope * N + intercept
        r2 = 1.0 - np.sum((t - pred) ** 2) / np.sum((t - t.mean()) ** 2)
        ok = grid_complete and r2 > 0.95
        report("9 (wall-time scaling)", ok,
               f"grid complete={grid_complete}, linear fit R^2={r2:.4f} (>0.95), "
               f"times {sorted(set(zip(N.astype(int), np.round(t, 1))))}")
        assert grid_complete
        assert r2 > 0.95


class TestCriterion10Determinism:
    def test_generate_train_benchmark_bit_exact(self, tmp_path):
        spec_doc = {
            "endmembers": {"n": 3, "b": 50, "style": "noisy"},
            "scene": {"kind": "gaussian", "height": 20, "width": 20, "n": 3},
            "model": "linear",
            "artifacts": {"sigma_noise": 0.1},
            "seed": 12,
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec_doc))
        outs = [tmp_path / "g1", tmp_path / "g2"]
        for out in outs:
            assert cli.main(["generate", str(spec_path), "--out", str(out)]) == 0
        gen_ok = ((outs[0] / "data.bin").read_bytes()
                  == (outs[1] / "data.bin").read_bytes()
                  and (outs[0] / "data.gt.bin").read_bytes()
                  == (outs[1] / "data.gt.bin").read_bytes())

        spec = DatasetSpec(EndmemberSpec(n=3, b=50),
                           SceneSpec("chessboard", 20, 20, 3, patch_size=5),
                           seed=3)
        data, _ = generate_dataset(spec)
        histories = []
        for _ in range(2):
            model = ae.build_model(
                ae.EncoderSpec("dense", 50, 3), ae.DecoderSpec("linear"),
                ae.ConstraintConfig(asc=True),
                np.random.Generator(np.random.Philox(key=8)))
            histories.append(ae.train(model, data,
                                      ae.TrainConfig(epochs=3, seed=4)))
        train_ok = histories[0] == histories[1]

        grid_doc = {
            "variants": [{"name": "v", "spec": spec_doc}],
            "methods": ["vca+fcls"],
            "datasets_per_variant": 1,
            "seeds_per_dataset": 2,
            "base_seed": 1,
        }
        grid_path = tmp_path / "grid.json"
        grid_path.write_text(json.dumps(grid_doc))
        bench_outs = [tmp_path / "b1", tmp_path / "b2"]
        for out in bench_outs:
            assert cli.main(["benchmark", str(grid_path), "--out", str(out)]) == 0
        bench_ok = ((bench_outs[0] / "bench_results.csv").read_bytes()
                    == (bench_outs[1] / "bench_results.csv").read_bytes())

        ok = gen_ok and train_ok and bench_ok
        report("10 (determinism)", ok,
               f"generate bit-exact={gen_ok}, loss histories equal={train_ok}, "
               f"benchmark csv bit-exact={bench_ok}")
        assert gen_ok and train_ok and bench_ok
