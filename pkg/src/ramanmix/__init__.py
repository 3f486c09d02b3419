"""Hyperspectral unmixing toolkit for Raman-like spectra."""

from .core import (
    AbundanceMatrix,
    EndmemberMatrix,
    GroundTruth,
    MixtureModel,
    SpectralAxis,
    SpectralDataset,
    crop,
    validate_dataset,
)
from .synth import (
    ArtifactConfig,
    DatasetSpec,
    EndmemberSpec,
    SceneSpec,
    add_artifacts,
    generate_dataset,
    generate_endmembers,
    generate_scene,
    mix,
)
from .formats import load_dataset, load_ground_truth, save_dataset, save_ground_truth
from .classic import estimate_abundances, fcls, nfindr, nnls, pca_unmix, vca
from .ae import (
    AEModel,
    ConstraintConfig,
    DecoderSpec,
    EncoderSpec,
    TrainConfig,
    build_model,
    combined_loss,
    decode,
    extract_endmembers,
    load_model,
    predict_abundances,
    sad_loss,
    save_model,
    train,
)
from .evalbench import (
    BenchmarkGrid,
    MatchAssignment,
    MetricReport,
    abundance_mse,
    evaluate,
    match,
    pcc_dist,
    profile_scaling,
    run_benchmark,
    run_method,
    sad,
)
from .preprocess import (
    BaselineParams,
    DespikeParams,
    asls_baseline,
    aspls_baseline,
    despike,
    normalize,
    run_pipeline,
    savgol,
)

__version__ = "0.1.0"
