"""Numerical primitives: diagonal Gaussians, entropy, seeded sampling, small PCA.

Everything here is float64 and value-semantic.  Distributions are immutable
after construction; all randomness flows through explicit `RngStream` objects
so that any call site can be replayed bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LN_2PI = float(np.log(2.0 * np.pi))


class DegenerateDataError(ValueError):
    """Raised when an input carries no usable variation (e.g. identical points)."""


@dataclass(frozen=True)
class DiagonalGaussian:
    """Gaussian with diagonal covariance, stored as (mean, variance) vectors.

    Variance (not stddev, not log-variance) is the boundary representation;
    producers that work in log-variance exponentiate before constructing one.
    """

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        variance = np.asarray(self.variance, dtype=np.float64)
        if mean.ndim != 1 or variance.ndim != 1:
            raise ValueError("mean and variance must be 1-d vectors")
        if mean.shape != variance.shape:
            raise ValueError(
                f"mean and variance lengths differ: {mean.shape} vs {variance.shape}"
            )
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(variance)):
            raise ValueError("mean and variance must be finite")
        if np.any(variance <= 0.0):
            raise ValueError("variance must be strictly positive in every dimension")
        mean.setflags(write=False)
        variance.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass
class RngStream:
    """A named, replayable random stream.

    Two streams built from the same (seed, stream_id) produce identical
    sample sequences.  `child(i, j, ...)` derives an independent stream with
    an extended id, which is how each logical sampling site (one rollout, one
    training epoch, one planner iteration) gets its own stream: parallel
    workers can then draw in any order without changing results.

    A stream object is stateful: consecutive draws advance it.  Build a fresh
    stream (same id) to replay from the start.
    """

    seed: int
    stream_id: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if isinstance(self.stream_id, int):
            self.stream_id = (self.stream_id,)
        else:
            self.stream_id = tuple(int(i) for i in self.stream_id)

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream_id)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + tuple(int(i) for i in ids))


def gaussian_entropy(dist: DiagonalGaussian) -> float:
    """Differential entropy in nats: (d/2)(ln 2pi + 1) + (1/2) sum_i ln var_i."""
    d = dist.dim
    return 0.5 * d * (LN_2PI + 1.0) + 0.5 * float(np.sum(np.log(dist.variance)))


def entropy_from_variances(variances: np.ndarray) -> np.ndarray:
    """Vectorized `gaussian_entropy` over rows of a (n, d) variance array."""
    variances = np.asarray(variances, dtype=np.float64)
    d = variances.shape[-1]
    return 0.5 * d * (LN_2PI + 1.0) + 0.5 * np.sum(np.log(variances), axis=-1)


def gaussian_sample(dist: DiagonalGaussian, rng: RngStream) -> np.ndarray:
    """Draw one sample; mean + sqrt(var) * z with z ~ N(0, I) from `rng`."""
    z = rng.gen.standard_normal(dist.dim)
    return dist.mean + np.sqrt(dist.variance) * z


@dataclass(frozen=True)
class PcaResult:
    component_1: np.ndarray
    component_2: np.ndarray
    projected: np.ndarray
    eigenvalues: np.ndarray       # top-2 eigenvalues, descending
    explained_variance_ratio: np.ndarray

    def __iter__(self):
        # allows `c1, c2, proj = pca_top2(...)`
        return iter((self.component_1, self.component_2, self.projected))


def pca_top2(points) -> PcaResult:
    """Project points onto the two leading eigenvectors of their covariance.

    Components are orthonormal eigenvectors of the centered covariance matrix
    with the two largest eigenvalues; projections are the centered points
    dotted with them.  Sign convention: each component's largest-magnitude
    entry is made positive, so repeated runs agree bitwise.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be a (n, d) array")
    n, d = x.shape
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    if d < 2:
        raise ValueError(f"need dimension >= 2, got {d}")
    centered = x - x.mean(axis=0)
    if not np.any(np.abs(centered) > 0.0):
        raise DegenerateDataError("all points identical; covariance is zero")
    cov = centered.T @ centered / n
    eigvals, eigvecs = np.linalg.eigh(cov)       # ascending
    order = np.argsort(eigvals)[::-1][:2]
    top_vals = eigvals[order]
    comps = eigvecs[:, order].T.copy()           # rows are components
    for c in comps:
        pivot = np.argmax(np.abs(c))
        if c[pivot] < 0:
            c *= -1.0
    total = float(np.sum(np.clip(eigvals, 0.0, None)))
    ratio = np.clip(top_vals, 0.0, None) / total if total > 0 else np.zeros(2)
    return PcaResult(
        component_1=comps[0],
        component_2=comps[1],
        projected=centered @ comps.T,
        eigenvalues=top_vals,
        explained_variance_ratio=ratio,
    )
