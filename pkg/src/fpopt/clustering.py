"""k-means over traffic fingerprints, elbow-based choice of k, silhouette score."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import date

import numpy as np

log = logging.getLogger(__name__)

NORM_TOL = 1e-9


class InsufficientPoints(ValueError):
    pass


class SilhouetteUndefined(ValueError):
    pass


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    wcss: float
    n_iter: int
    history: list[float] = field(default_factory=list)  # wcss after every Lloyd update

    def __iter__(self):
        return iter((self.centroids, self.labels, self.wcss))


@dataclass
class ClusterModel:
    centroids: np.ndarray
    k: int
    silhouette: float
    wcss_curve: dict[int, float]
    seed: int
    trained_through: date | None = None
    labels: np.ndarray | None = field(default=None, repr=False, compare=False)
    # centroids of every evaluated k; not serialized
    candidates: dict[int, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def to_json(self) -> str:
        payload = {
            "k": self.k,
            "seed": self.seed,
            "silhouette": self.silhouette,
            "trained_through": self.trained_through.isoformat() if self.trained_through else None,
            "wcss_curve": {str(k): v for k, v in sorted(self.wcss_curve.items())},
            "centroids": [[float(x) for x in row] for row in self.centroids],
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ClusterModel:
        raw = json.loads(text)
        centroids = np.array(raw["centroids"], dtype=np.float64).reshape(-1, 24)
        if int(raw["k"]) != len(centroids):
            raise ValueError(f"model declares k={raw['k']} but has {len(centroids)} centroids")
        through = raw.get("trained_through")
        return cls(
            centroids=centroids,
            k=int(raw["k"]),
            silhouette=float(raw["silhouette"]),
            wcss_curve={int(k): float(v) for k, v in raw["wcss_curve"].items()},
            seed=int(raw["seed"]),
            trained_through=date.fromisoformat(through) if through else None,
        )


def _sqdist(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _check_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if len(x) and np.any(np.abs(x.sum(axis=1) - 1.0) > NORM_TOL):
        raise ValueError("points must be normalized (components sum to 1)")
    return x


def _canonical_order(x: np.ndarray) -> np.ndarray:
    # lexicographic row order, first column most significant
    return np.lexsort(x.T[::-1])


def _n_distinct(x: np.ndarray) -> int:
    return len(np.unique(x, axis=0)) if len(x) else 0


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = _sqdist(x, x[chosen]).ravel()
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # fewer distinct points than k; caller guarantees this does not happen
            raise InsufficientPoints("not enough distinct points to seed k centroids")
        nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        nxt = min(nxt, n - 1)
        chosen.append(nxt)
        d2 = np.minimum(d2, _sqdist(x, x[nxt:nxt + 1]).ravel())
    return x[chosen].copy()


def _fix_empty(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Re-seed every empty centroid at the point farthest from its own centroid."""
    k = len(centroids)
    for _ in range(k):
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if not len(empty):
            break
        d2 = _sqdist(x, centroids)
        own = d2[np.arange(len(x)), labels]
        own = np.where(counts[labels] > 1, own, -1.0)  # never strip a singleton
        centroids[empty[0]] = x[int(np.argmax(own))]
        labels = np.argmin(_sqdist(x, centroids), axis=1)
    return labels


def _order_clusters(centroids: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = len(centroids)
    counts = np.bincount(labels, minlength=k)
    order = sorted(range(k), key=lambda j: (-counts[j], tuple(centroids[j])))
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    return centroids[order], remap[labels]


def kmeans(points, k: int, seed: int = 0, max_iters: int = 300, tol: float = 1e-6,
           init: np.ndarray | None = None) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Points are processed in lexicographic order internally, so the result
    does not depend on input order. Clusters are numbered by descending size,
    ties broken by lexicographic centroid order. ``init`` overrides seeding.
    """
    x = _check_points(points)
    n = len(x)
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise InsufficientPoints(f"{n} points for k={k}")
    if _n_distinct(x) < k:
        raise InsufficientPoints(f"only {_n_distinct(x)} distinct points for k={k}")

    order = _canonical_order(x)
    xs = x[order]
    if init is None:
        centroids = _plusplus(xs, k, np.random.default_rng(seed))
    else:
        centroids = np.array(init, dtype=np.float64, copy=True)
        if centroids.shape != (k, x.shape[1]):
            raise ValueError("init must have shape (k, dim)")

    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        labels = np.argmin(_sqdist(xs, centroids), axis=1)
        labels = _fix_empty(xs, centroids, labels)
        updated = np.zeros_like(centroids)
        np.add.at(updated, labels, xs)
        updated /= np.bincount(labels, minlength=k)[:, None]
        resid = xs - updated[labels]
        history.append(float(np.einsum("ij,ij->", resid, resid)))
        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        if shift < tol:
            break

    centroids, labels = _order_clusters(centroids, labels)
    out = np.empty(n, dtype=np.int64)
    out[order] = labels
    return KMeansResult(centroids, out, history[-1], n_iter, history)


def wcss(points, centroids, labels) -> float:
    x = np.asarray(points, dtype=np.float64)
    resid = x - np.asarray(centroids)[np.asarray(labels)]
    return float(np.einsum("ij,ij->", resid, resid))


def silhouette_score(points, labels, chunk: int = 256) -> float:
    """Mean silhouette (Euclidean); members of singleton clusters score 0."""
    x = np.asarray(points, dtype=np.float64)
    ids, lab = np.unique(np.asarray(labels), return_inverse=True)
    if len(ids) < 2:
        raise SilhouetteUndefined("silhouette needs at least two clusters")
    n = len(x)
    m = len(ids)
    sizes = np.bincount(lab, minlength=m).astype(np.float64)
    onehot = np.zeros((n, m))
    onehot[np.arange(n), lab] = 1.0
    s = np.zeros(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        diff = x[lo:hi, None, :] - x[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        sums = dist @ onehot
        own = lab[lo:hi]
        rows = np.arange(hi - lo)
        own_size = sizes[own]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = sums[rows, own] / (own_size - 1)
            mean_other = sums / sizes
        mean_other[rows, own] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            si = np.where(denom > 0, (b - a) / denom, 0.0)
        s[lo:hi] = np.where(own_size > 1, si, 0.0)
    return float(np.clip(s.mean(), -1.0, 1.0))


def _subseed(seed: int, k: int, restart: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(k, restart))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def best_of(points, k: int, seed: int, n_restarts: int = 10, max_iters: int = 300,
            tol: float = 1e-6, warm: np.ndarray | None = None) -> KMeansResult:
    """Lowest-wcss run over ``n_restarts`` seeded restarts (plus ``warm`` init)."""
    best = None
    for r in range(n_restarts):
        res = kmeans(points, k, _subseed(seed, k, r), max_iters, tol)
        if best is None or res.wcss < best.wcss:
            best = res
    if warm is not None:
        res = kmeans(points, k, seed, max_iters, tol, init=warm)
        if best is None or res.wcss < best.wcss:
            best = res
    return best


def _warm_start(x: np.ndarray, prev: KMeansResult) -> np.ndarray:
    """Previous centroids plus the point farthest from its centroid."""
    xs = x[_canonical_order(x)]
    d2 = _sqdist(xs, prev.centroids).min(axis=1)
    return np.vstack([prev.centroids, xs[int(np.argmax(d2))]])


def select_k(points, k_min: int = 2, k_max: int = 8, elbow_threshold: float = 0.10,
             seed: int = 0, n_restarts: int = 10, max_iters: int = 300,
             tol: float = 1e-6) -> ClusterModel:
    """Choose k with the elbow rule and fit the final model.

    Evaluates k in ``k_min..k_max`` and keeps the smallest k whose relative
    wcss gain from adding one more cluster is below ``elbow_threshold``.
    Each k is seeded from the previous k's solution as well as from random
    restarts, which keeps the wcss curve non-increasing.
    """
    x = _check_points(points)
    if k_min < 2:
        raise ValueError("k_min must be >= 2")
    if k_max < k_min:
        raise ValueError("k_max must be >= k_min")
    if not 0 < elbow_threshold < 1:
        raise ValueError("elbow_threshold must be in (0, 1)")
    if len(x) < k_max:
        raise InsufficientPoints(f"{len(x)} points for k_max={k_max}")
    k_hi = min(k_max, _n_distinct(x))
    if k_hi < k_min:
        raise InsufficientPoints(f"only {k_hi} distinct points for k_min={k_min}")
    if k_hi < k_max:
        log.warning("only %d distinct fingerprints; wcss curve stops at k=%d", k_hi, k_hi)

    fits: dict[int, KMeansResult] = {}
    prev = None
    for k in range(k_min, k_hi + 1):
        warm = _warm_start(x, prev) if prev is not None else None
        prev = fits[k] = best_of(x, k, seed, n_restarts, max_iters, tol, warm)
    curve = {k: r.wcss for k, r in fits.items()}

    chosen = k_hi
    for k in range(k_min, k_hi):
        gain = (curve[k] - curve[k + 1]) / curve[k] if curve[k] > 0 else 0.0
        if gain < elbow_threshold:
            chosen = k
            break
    fit = fits[chosen]
    return ClusterModel(
        centroids=fit.centroids,
        k=chosen,
        silhouette=silhouette_score(x, fit.labels),
        wcss_curve=curve,
        seed=seed,
        labels=fit.labels,
        candidates={k: r.centroids for k, r in fits.items()},
    )
