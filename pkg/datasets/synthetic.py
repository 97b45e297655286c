"""
Gaussian-blob source/target domain pairs with a controllable covariate shift.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.errors import GenerationError, ParameterError, ShapeError
from datasets.views import LabeledDataset

logger = logging.getLogger(__name__)

MAX_REJECTION_ATTEMPTS = 1000


@dataclass(frozen=True)
class ShiftSpec:
    """
    Source-to-target transformation.

    Attributes:
        rotation: Angle in radians, applied in the plane of the first two coordinates.
        translation: Offset added after rotation; empty means zero.
        class_scale: Multiplier on the within-class spread of the target.
        noise_std: Standard deviation of extra isotropic noise on target samples.
    """

    rotation: float = 0.0
    translation: Tuple[float, ...] = field(default_factory=tuple)
    class_scale: float = 1.0
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.class_scale > 0:
            raise ParameterError(f"class_scale must be positive, got {self.class_scale}")
        if self.noise_std < 0:
            raise ParameterError(f"noise_std must be non-negative, got {self.noise_std}")

    def offset(self, dim: int) -> NDArray[np.float64]:
        if not self.translation:
            return np.zeros(dim)
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (dim,):
            raise ShapeError(f"translation has {t.size} entries, expected {dim}")
        return t

    def rotation_matrix(self, dim: int) -> NDArray[np.float64]:
        R = np.eye(dim)
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        R[:2, :2] = [[c, -s], [s, c]]
        return R


BLOBS_ROT60 = dict(num_classes=4, dim=3, n_per_class=150)

# The shift is a 60 degree turn about (0.51, 0.283) in the first two coordinates.
# Classes 0 and 1 sit on that point and stay put; class 3 is carried onto the
# source region of class 2, which leaves class 3 unpredicted on the target.
BLOBS_ROT60_MEANS = (
    (0.51, 0.283, -0.5),
    (0.51, 0.283, -1.7),
    (1.283, 0.49, 0.5),
    (0.51, -0.517, 0.5),
)


def blobs_rot60_shift() -> ShiftSpec:
    """60 degree rotation, translation (0.5, -0.3, 0), extra noise 0.15."""
    return ShiftSpec(rotation=math.radians(60.0), translation=(0.5, -0.3, 0.0), class_scale=1.0, noise_std=0.15)


def sample_class_means(num_classes: int, dim: int, min_distance: float, rng: np.random.Generator) -> NDArray[np.float64]:
    """
    Unit-norm class means with pairwise distance >= min_distance.

    Raises:
        GenerationError: When no valid draw is found within the attempt budget.
    """
    for _ in range(MAX_REJECTION_ATTEMPTS):
        raw = rng.normal(size=(num_classes, dim))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.any(norms <= 1e-12):
            continue
        means = raw / norms
        gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
        gaps[np.diag_indices(num_classes)] = np.inf
        if gaps.min() >= min_distance:
            return means
    raise GenerationError(
        f"could not place {num_classes} unit-norm means {min_distance:.3g} apart in {dim} dimensions "
        f"after {MAX_REJECTION_ATTEMPTS} attempts"
    )


def fixed_class_means(means: ArrayLike, num_classes: int, dim: int, min_distance: float) -> NDArray[np.float64]:
    """
    Caller-placed class means, used as given.

    Raises:
        ShapeError: If `means` is not a finite C x d array.
        GenerationError: If two means are closer than min_distance.
    """
    centers = np.array(means, dtype=np.float64)
    if centers.shape != (num_classes, dim) or not np.all(np.isfinite(centers)):
        raise ShapeError(f"class means must be a finite ({num_classes}, {dim}) array, got shape {centers.shape}")
    gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    gaps[np.diag_indices(num_classes)] = np.inf
    if gaps.min() < min_distance:
        raise GenerationError(f"class means are {gaps.min():.3g} apart, need at least {min_distance:.3g}")
    return centers


def _draw(
    means: NDArray[np.float64], n_per_class: int, spread: float, rng: np.random.Generator
) -> Tuple[NDArray[np.float64], NDArray[np.int64]]:
    C, d = means.shape
    labels = np.repeat(np.arange(C, dtype=np.int64), n_per_class)
    x = means[labels] + spread * rng.normal(size=(labels.size, d))
    return x, labels


def make_gaussian_domains(
    num_classes: int,
    dim: int,
    n_per_class: int,
    shift: ShiftSpec,
    seed: int = 0,
    cluster_std: float = 0.2,
    means: Optional[ArrayLike] = None,
) -> Tuple[LabeledDataset, LabeledDataset]:
    """
    Generate a labeled source domain and its shifted target domain.

    The target re-draws every class from the same means, then rotates,
    translates and adds noise according to `shift`. Rows are shuffled.

    Args:
        num_classes: C >= 2.
        dim: Input dimension d >= 2.
        n_per_class: Samples per class per domain, >= 10.
        shift: Source-to-target transformation.
        seed: Seed for every random draw.
        cluster_std: Within-class standard deviation sigma; means are >= 2 sigma apart.
        means: Optional C x d class means used as given; unit-norm random means when omitted.

    Raises:
        ParameterError: For out-of-range sizes.
        ShapeError: If `means` is not C x d.
        GenerationError: If the means cannot be separated.
    """
    if num_classes < 2 or dim < 2 or n_per_class < 10:
        raise ParameterError(f"need C >= 2, d >= 2 and n_per_class >= 10, got {num_classes}, {dim}, {n_per_class}")
    if not cluster_std > 0:
        raise ParameterError(f"cluster_std must be positive, got {cluster_std}")
    rng = np.random.default_rng(seed)
    if means is None:
        centers = sample_class_means(num_classes, dim, 2.0 * cluster_std, rng)
    else:
        centers = fixed_class_means(means, num_classes, dim, 2.0 * cluster_std)

    xs, ys = _draw(centers, n_per_class, cluster_std, rng)
    xt, yt = _draw(centers, n_per_class, shift.class_scale * cluster_std, rng)
    xt = xt @ shift.rotation_matrix(dim).T + shift.offset(dim)
    if shift.noise_std > 0:
        xt = xt + shift.noise_std * rng.normal(size=xt.shape)

    src_order = rng.permutation(xs.shape[0])
    tgt_order = rng.permutation(xt.shape[0])
    source = LabeledDataset(xs[src_order], ys[src_order], num_classes, domain="source", seed=seed)
    target = LabeledDataset(xt[tgt_order], yt[tgt_order], num_classes, domain="target", seed=seed)
    logger.info("Generated domains: C=%d, d=%d, %d per class, seed=%d", num_classes, dim, n_per_class, seed)
    return source, target


def make_blobs_rot60(seed: int = 0, cluster_std: float = 0.2) -> Tuple[LabeledDataset, LabeledDataset]:
    return make_gaussian_domains(
        shift=blobs_rot60_shift(), seed=seed, cluster_std=cluster_std, means=BLOBS_ROT60_MEANS, **BLOBS_ROT60
    )
