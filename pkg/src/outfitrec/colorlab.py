"""Colour science: sRGB/CIELab/LCh conversion, k-means palettes and colour-wheel rules.

All conversions use the D65 reference white with the 2 degree observer and the
standard sRGB transfer curve. Colour difference is CIE76 (Euclidean in Lab),
which is the metric k-means centroids are consistent with.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_colors, check_positive_int, check_rgb
from .errors import FormatVersionError, ValidationError
from .taxonomy import GarmentCategory

log = logging.getLogger(__name__)

D65_WHITE = np.array([0.95047, 1.0, 1.08883])

_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)

_EPSILON = 216 / 24389
_KAPPA = 24389 / 27

DEFAULT_MIN_CHROMA = 10.0
DEFAULT_HUE_TOL = 15.0

PALETTE_FORMAT = "outfitrec/palette"
PALETTE_VERSION = 1


class LabColor(NamedTuple):
    L: float
    a: float
    b: float


class LchColor(NamedTuple):
    L: float
    C: float
    h: float


# -- conversions -------------------------------------------------------------


def srgb_to_lab(rgb):
    """Convert 8-bit sRGB triples to CIELab.

    Accepts a single ``(r, g, b)`` or an ``(n, 3)`` array; returns an array of
    the same leading shape.
    """
    arr = np.asarray(rgb)
    single = arr.ndim == 1
    c = check_rgb(arr) / 255.0
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / D65_WHITE
    f = np.where(t > _EPSILON, np.cbrt(t), (_KAPPA * t + 16) / 116)
    L = 116 * f[:, 1] - 16
    a = 500 * (f[:, 0] - f[:, 1])
    b = 200 * (f[:, 1] - f[:, 2])
    lab = np.stack([L, a, b], axis=1)
    # black and white land on the axis up to rounding of the matrix
    lab[:, 0] = np.clip(lab[:, 0], 0.0, 100.0)
    return lab[0] if single else lab


def lab_to_lch(lab):
    """Cylindrical form of Lab. Achromatic colours get hue 0."""
    arr = np.asarray(lab, dtype=np.float64)
    a, b = arr[..., 1], arr[..., 2]
    C = np.hypot(a, b)
    h = np.degrees(np.arctan2(b, a)) % 360.0
    h = np.where(h >= 360.0, h - 360.0, h)
    h = np.where(C == 0, 0.0, h)
    return np.stack([arr[..., 0], C, h], axis=-1)


def lch_to_lab(lch):
    arr = np.asarray(lch, dtype=np.float64)
    rad = np.radians(arr[..., 2])
    return np.stack([arr[..., 0], arr[..., 1] * np.cos(rad), arr[..., 1] * np.sin(rad)], axis=-1)


def delta_e(x, y):
    """CIE76 colour difference; broadcasts over leading dimensions."""
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _sq_dists(X, C, chunk=8192):
    # Component-wise accumulation keeps the summation order fixed, so equal
    # distances compare equal and ties resolve to the lowest index.
    out = np.empty((X.shape[0], C.shape[0]))
    for start in range(0, X.shape[0], chunk):
        block = X[start : start + chunk]
        acc = np.zeros((block.shape[0], C.shape[0]))
        for j in range(X.shape[1]):
            d = block[:, j, None] - C[None, :, j]
            acc += d * d
        out[start : start + chunk] = acc
    return out


def _nearest(X, C):
    d2 = _sq_dists(X, C)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(X.shape[0]), labels]


# -- hue rules ---------------------------------------------------------------


def complementary_hue(h):
    return (h + 180.0) % 360.0


def triadic_hues(h):
    return ((h + 120.0) % 360.0, (h + 240.0) % 360.0)


def hue_distance(h1, h2):
    """Circular distance between hue angles, in [0, 180]."""
    d = np.abs(np.asarray(h1, dtype=np.float64) - np.asarray(h2, dtype=np.float64)) % 360.0
    return np.minimum(d, 360.0 - d)


# -- k-means -----------------------------------------------------------------


class PaletteKMeans(ClusterMixin, BaseEstimator):
    """Lloyd's k-means with greedy k-means++ seeding.

    Deterministic for a fixed ``random_state``. Each seeding step draws
    ``n_local_trials`` candidates in proportion to squared distance and keeps
    the one that lowers inertia most. Every accepted iteration has
    inertia no larger than the previous one; an update that would increase it
    (floating-point noise at convergence) is rejected and iteration stops.

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
    labels_ : ndarray of shape (n_samples,)
    inertia_ : float
    inertia_history_ : list of float
        Inertia after seeding and after each accepted update of the best run.
    n_iter_ : int
    """

    def __init__(self, n_clusters=130, *, n_init=1, max_iter=300, tol=1e-6, n_local_trials=40,
                 random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.n_local_trials = n_local_trials
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        k = check_positive_int(self.n_clusters, "n_clusters")
        n_distinct = np.unique(X, axis=0).shape[0]
        if k > n_distinct:
            warnings.warn(
                f"n_clusters={k} exceeds the {n_distinct} distinct samples; clamping",
                UserWarning,
                stacklevel=2,
            )
            k = n_distinct
        rng = np.random.default_rng(self.random_state)
        best = None
        for _ in range(check_positive_int(self.n_init, "n_init")):
            run = self._single_run(X, k, rng)
            if best is None or run[2] < best[2]:
                best = run
        self.cluster_centers_, self.labels_, self.inertia_, self.inertia_history_, self.n_iter_ = best
        self.n_clusters_ = k
        return self

    def _single_run(self, X, k, rng):
        centers = _kmeans_plusplus(X, k, rng, check_positive_int(self.n_local_trials, "n_local_trials"))
        labels, d2 = _nearest(X, centers)
        inertia = float(d2.sum())
        history = [inertia]
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            new_centers = _update_centers(X, labels, centers, k)
            new_labels, new_d2 = _nearest(X, new_centers)
            new_inertia = float(new_d2.sum())
            if new_inertia > inertia:
                n_iter -= 1
                break
            converged = np.array_equal(new_labels, labels) or (
                inertia - new_inertia <= self.tol * inertia
            )
            centers, labels, inertia = new_centers, new_labels, new_inertia
            history.append(inertia)
            if converged:
                break
        return centers, labels, inertia, history, n_iter

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return _nearest(X, self.cluster_centers_)[0]

    def transform(self, X):
        """Distance from each sample to every centroid."""
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return np.sqrt(_sq_dists(X, self.cluster_centers_))

    def to_palette(self, category=None) -> "Palette":
        check_is_fitted(self, "cluster_centers_")
        return Palette(
            centroids=self.cluster_centers_.copy(),
            category=None if category is None else GarmentCategory.parse(category),
            seed=self.random_state,
            n_iter=self.n_iter_,
            inertia=self.inertia_,
        )


def _kmeans_plusplus(X, k, rng, n_trials):
    # Many tight clusters need far more candidates per step than the usual
    # 2 + log(k), or two seeds land in one cluster and Lloyd cannot undo it.
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = _sq_dists(X, centers[:1])[:, 0]
    for c in range(1, k):
        cum = np.cumsum(closest)
        picks = np.searchsorted(cum, rng.random(n_trials) * cum[-1], side="right")
        picks = np.minimum(picks, n - 1)
        trial = np.minimum(closest[:, None], _sq_dists(X, X[picks]))
        best = int(np.argmin(trial.sum(axis=0)))
        centers[c] = X[picks[best]]
        closest = trial[:, best]
    return centers


def _update_centers(X, labels, centers, k):
    counts = np.bincount(labels, minlength=k)
    new = centers.copy()
    filled = counts > 0
    for j in range(X.shape[1]):
        sums = np.bincount(labels, weights=X[:, j], minlength=k)
        new[filled, j] = sums[filled] / counts[filled]
    empty = np.flatnonzero(~filled)
    if empty.size:
        # Split the highest-inertia cluster: its farthest member seeds the empty one.
        d2 = _sq_dists(X, new)[np.arange(X.shape[0]), labels]
        taken = np.zeros(X.shape[0], dtype=bool)
        for j in empty:
            per_cluster = np.bincount(labels[~taken], weights=d2[~taken], minlength=k)
            donor = int(np.argmax(per_cluster))
            members = np.flatnonzero((labels == donor) & ~taken)
            far = members[np.argmax(d2[members])]
            new[j] = X[far]
            taken[far] = True
    return new


# -- palettes ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Palette:
    """Per-category colour map; centroid order is the bin index."""

    centroids: np.ndarray
    category: GarmentCategory | None = None
    seed: int | None = None
    n_iter: int | None = None
    inertia: float | None = None
    _lch: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cents = check_colors(self.centroids, name="centroids")
        cents.setflags(write=False)
        object.__setattr__(self, "centroids", cents)
        lch = lab_to_lch(cents)
        lch.setflags(write=False)
        object.__setattr__(self, "_lch", lch)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def lch(self) -> np.ndarray:
        return self._lch

    def assign(self, colors):
        """Nearest-centroid bin for each colour; ties go to the lowest index."""
        return _nearest(check_colors(colors), self.centroids)[0]

    def __eq__(self, other):
        if not isinstance(other, Palette):
            return NotImplemented
        return (
            self.category == other.category
            and self.seed == other.seed
            and np.array_equal(self.centroids, other.centroids)
        )

    def __hash__(self):
        return hash((self.category, self.k, self.centroids.tobytes()))


def build_palette(pixels, k=130, seed=0, *, category=None, n_init=1, max_iter=300):
    """Fit a ``k``-colour palette to Lab pixels."""
    pixels = check_colors(pixels, name="pixels", allow_empty=True)
    if pixels.shape[0] == 0:
        raise ValidationError("cannot build a palette from an empty pixel set", field="pixels")
    km = PaletteKMeans(n_clusters=k, n_init=n_init, max_iter=max_iter, random_state=seed)
    km.fit(pixels)
    return km.to_palette(category)


def assign_bin(color, palette: Palette) -> int:
    return int(palette.assign(color)[0])


def dominant_color(pixels, palette: Palette):
    """Return ``(bin, histogram)`` of Lab pixels over the palette bins."""
    pixels = check_colors(pixels, name="pixels", allow_empty=True)
    if pixels.shape[0] == 0:
        raise ValidationError("no pixels to take a dominant colour from", field="pixels")
    hist = np.bincount(palette.assign(pixels), minlength=palette.k)
    return int(np.argmax(hist)), hist


def bins_near_hue(palette: Palette, target_h, hue_tol=DEFAULT_HUE_TOL, min_chroma=DEFAULT_MIN_CHROMA):
    """Chromatic bins within ``hue_tol`` degrees of ``target_h``, nearest first."""
    if not 0 < hue_tol <= 180:
        raise ValidationError(f"hue_tol must lie in (0, 180], got {hue_tol}", field="hue_tol")
    if min_chroma < 0:
        raise ValidationError("min_chroma must be non-negative", field="min_chroma")
    dist = hue_distance(palette.lch[:, 2], target_h)
    ok = np.flatnonzero((palette.lch[:, 1] >= min_chroma) & (dist <= hue_tol))
    return [int(i) for i in ok[np.argsort(dist[ok], kind="stable")]]


def save_palette(palette: Palette, path):
    header = {
        "format": PALETTE_FORMAT,
        "version": PALETTE_VERSION,
        "category": None if palette.category is None else palette.category.value,
        "seed": palette.seed,
        "k": palette.k,
        "n_iter": palette.n_iter,
        "inertia": palette.inertia,
    }
    lines = [json.dumps(header)]
    lines += [json.dumps([float(v) for v in row]) for row in palette.centroids]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_palette(path) -> Palette:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValidationError("empty palette file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValidationError(f"bad header: {exc}", line=1) from None
    if not isinstance(header, dict) or header.get("format") != PALETTE_FORMAT:
        raise FormatVersionError("not a palette file", line=1, field="format")
    if header.get("version") != PALETTE_VERSION:
        raise FormatVersionError(f"unsupported version {header.get('version')!r}", line=1, field="version")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed centroid row: {exc}", line=lineno) from None
        if not isinstance(row, list) or len(row) != 3:
            raise ValidationError("centroid row must be [L, a, b]", line=lineno)
        rows.append(row)
    if len(rows) != header.get("k"):
        raise ValidationError(f"header declares k={header.get('k')} but file has {len(rows)} rows", field="k")
    if not rows:
        raise ValidationError("palette needs at least one centroid", field="k")
    category = header.get("category")
    return Palette(
        centroids=np.array(rows, dtype=np.float64),
        category=None if category is None else GarmentCategory.parse(category),
        seed=header.get("seed"),
        n_iter=header.get("n_iter"),
        inertia=header.get("inertia"),
    )
