"""cloaklab: a desk-scale laboratory for style-cloaking perturbations,
purification counter-perturbations, and the metrics that judge them."""

__version__ = "0.1.0"

from .autoencoder import (
    Autoencoder,
    decode,
    encode,
    load_weights,
    reconstruct,
    reconstruction_gap,
    save_weights,
    train,
)
from .datagen import (
    ArtistCorpus,
    ArtistSpec,
    Bench,
    generate_artist_corpus,
    generate_content,
    standard_bench,
)
from .errors import CloakLabError, NumericalError, ValidationError
from .evaluate import (
    GapReport,
    GenreClassifier,
    StyleSignature,
    artifact_energy,
    gap_report,
    genre_accuracy,
    mimic_score,
    signature_distance,
    style_signature,
    texture_retention,
    train_genre_classifier,
)
from .image import Image, gaussian_blur, load_image, pixel_l2, resize_bilinear, save_image
from .nn import Rng, derive_seed, rng_normal
from .optimize import OptConfig, OptResult, cloak, purify
from .perceptual import PerceptualMetric, pd, pd_gradient
from .style import StyleParams, default_styles, load_styles, select_target_style, stylize
