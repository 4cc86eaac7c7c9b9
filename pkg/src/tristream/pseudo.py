"""Pseudo part-label generation by two-stage k-means over dense features.

Stage one splits pixels into foreground/background by normalized activation
magnitude; stage two clusters the foreground's unit-normalized feature
vectors into the part clusters, which are then numbered top-to-bottom by
mean row index. Labels are regenerated every epoch from the current model
and are never used at inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateInputError, InsufficientDataError


@dataclass
class KMeansResult:
    centroids: np.ndarray  # [k, d]
    assignment: np.ndarray  # [n] cluster index of each point
    inertia: float  # sum of squared distances to assigned centroids
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def _pairwise_sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plusplus_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each next centroid drawn with probability ~ D(x)^2."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=points.dtype)
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))  # all remaining points coincide with a centroid
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def kmeans(points, k: int, seed, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeding.

    Runs until the assignment reaches a fixpoint or ``max_iter`` iterations.
    Empty clusters are repaired by stealing the point currently farthest
    from its own centroid. Deterministic for a fixed seed; argmin/argmax
    ties break to the lowest index.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        pts = pts.reshape(len(pts), -1)
    n = pts.shape[0]
    if n < k:
        raise InsufficientDataError(f"k-means needs at least k={k} points, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    centroids = _plusplus_seed(pts, k, rng)

    history: list[float] = []
    prev = None
    assignment = None
    for it in range(max_iter):
        d2 = _pairwise_sq_dists(pts, centroids)
        assignment = d2.argmin(axis=1)
        history.append(float(d2[np.arange(n), assignment].sum()))
        if prev is not None and np.array_equal(assignment, prev):
            break
        prev = assignment

        new_centroids = centroids.copy()
        for c in range(k):
            members = assignment == c
            if members.any():
                new_centroids[c] = pts[members].mean(axis=0)
        # repair empty clusters: move each onto the point farthest from its centroid
        dist_to_own = d2[np.arange(n), assignment].copy()
        for c in range(k):
            if not (assignment == c).any():
                far = int(dist_to_own.argmax())
                new_centroids[c] = pts[far]
                dist_to_own[far] = -1.0  # one steal per point
        centroids = new_centroids

    return KMeansResult(
        centroids=centroids,
        assignment=assignment,
        inertia=history[-1],
        inertia_history=history,
        n_iter=len(history),
    )


def foreground_split(dense_map: np.ndarray, seed) -> np.ndarray:
    """Boolean foreground mask from 2-means on normalized activation magnitude.

    Pixel magnitude is the L2 norm of its feature vector divided by the
    spatial maximum; the cluster with the higher mean magnitude wins.
    """
    fm = np.asarray(dense_map, dtype=np.float64)
    h, w = fm.shape[:2]
    norms = np.sqrt((fm**2).sum(axis=-1))
    peak = norms.max()
    if peak <= 0.0:
        raise DegenerateInputError("all-zero dense map: cannot split foreground")
    activation = (norms / peak).reshape(-1, 1)
    result = kmeans(activation, 2, seed)
    means = np.full(2, -np.inf)
    for c in range(2):
        members = result.assignment == c
        if members.any():
            means[c] = activation[members].mean()
    fg_cluster = int(means.argmax())
    return (result.assignment == fg_cluster).reshape(h, w)


@dataclass
class PseudoLabelMap:
    """Per-pixel part labels: 0 = background, 1..K-1 = parts top to bottom."""

    labels: np.ndarray  # [h, w] int
    one_hot: np.ndarray  # [h, w, K] float
    epoch_generated: int = 0
    fallback: bool = False  # single-part fallback was taken

    @property
    def num_channels(self) -> int:
        return self.one_hot.shape[-1]


def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    eye = np.eye(k, dtype=np.float64)
    return eye[labels]


def generate_pseudo_labels(dense_map: np.ndarray, k: int, seed, epoch: int = 0) -> PseudoLabelMap:
    """Two-stage clustering of one dense map into a K-channel label map.

    Foreground pixels are unit-normalized and clustered into K-1 groups;
    groups are numbered 1..K-1 by ascending mean row index (ties by smaller
    centroid norm). Degenerate foregrounds (fewer than K-1 pixels, or all
    feature vectors identical) collapse to a single part with a warning flag.
    """
    fm = np.asarray(dense_map, dtype=np.float64)
    h, w = fm.shape[:2]
    base = np.random.default_rng(_derive_seed(seed, 0))
    fg = foreground_split(fm, base)

    norms = np.sqrt((fm**2).sum(axis=-1))
    fg = fg & (norms > 0.0)  # zero-norm pixels cannot be unit-normalized
    labels = np.zeros((h, w), dtype=np.int64)
    coords = np.argwhere(fg)
    n_fg = len(coords)

    vecs = fm[fg] / norms[fg][:, None]
    degenerate = n_fg < (k - 1) or (n_fg > 0 and np.unique(vecs, axis=0).shape[0] < (k - 1))
    if degenerate:
        labels[fg] = 1
        return PseudoLabelMap(labels, _one_hot(labels, k), epoch, fallback=True)

    result = kmeans(vecs, k - 1, np.random.default_rng(_derive_seed(seed, 1)))
    mean_rows = np.full(k - 1, np.inf)
    cnorms = np.sqrt((result.centroids**2).sum(axis=1))
    for c in range(k - 1):
        members = result.assignment == c
        if members.any():
            mean_rows[c] = coords[members, 0].mean()
    order = sorted(range(k - 1), key=lambda c: (mean_rows[c], cnorms[c]))
    rank_of = {c: i + 1 for i, c in enumerate(order)}
    labels[fg] = np.array([rank_of[c] for c in result.assignment], dtype=np.int64)
    return PseudoLabelMap(labels, _one_hot(labels, k), epoch, fallback=False)


def _derive_seed(seed, salt: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(entropy=seed.entropy, spawn_key=seed.spawn_key + (salt,))
    if isinstance(seed, np.random.Generator):
        # draw a stable child seed from the generator-owned stream
        return np.random.SeedSequence([int(seed.integers(2**32)), salt])
    return np.random.SeedSequence([int(seed), salt])


def refresh_policy(epoch: int) -> bool:
    """Pseudo-labels are refreshed every epoch, including the very first."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return True
