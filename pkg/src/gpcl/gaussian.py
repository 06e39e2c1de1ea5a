"""Per-node Gaussian embeddings: means, transformed variances, sampling.

Every node carries a trainable mean vector and an unconstrained raw
variance vector. The raw variance passes through ELU(x) + 1 to stay
strictly positive, and samples are drawn with the reparameterization
e = mu + sqrt(var) * eps so gradients reach both parameter sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

_TINY = np.finfo(np.float64).tiny


@dataclass
class GaussianEmbeddingTable:
    """Trainable (rows x dim) mean and raw-variance matrices."""

    mean: ad.Tensor
    raw_var: ad.Tensor

    def __post_init__(self):
        if self.mean.shape != self.raw_var.shape:
            raise ValueError("mean and raw_var must share a shape")

    @property
    def rows(self) -> int:
        return self.mean.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    def parameters(self) -> list[ad.Tensor]:
        return [self.mean, self.raw_var]


@dataclass(frozen=True)
class NoiseDraw:
    """Standard-normal noise with its provenance key.

    The key seeds a dedicated generator, so the exact draw is recoverable
    from the key alone.
    """

    eps: np.ndarray
    key: tuple[int, ...]

    @classmethod
    def from_key(cls, rows: int, dim: int, key: tuple[int, ...]) -> "NoiseDraw":
        rng = np.random.default_rng(np.random.SeedSequence(list(key)))
        return cls(rng.standard_normal((rows, dim)), key)

    def regenerate(self) -> "NoiseDraw":
        return NoiseDraw.from_key(self.eps.shape[0], self.eps.shape[1], self.key)


def transform_variance(raw_var):
    """ELU(x) + 1, clamped away from zero so the result stays positive.

    The clamp only matters when exp(x) underflows (x below about -745);
    mathematically ELU(x) + 1 > 0 for every finite x.
    """
    raw = np.asarray(raw_var, dtype=np.float64)
    return np.maximum(ad.elu(raw) + 1.0, _TINY)


def sample(table: GaussianEmbeddingTable, noise: NoiseDraw) -> ad.Tensor:
    """Reparameterized draw mu + sqrt(var) * eps; differentiable in both tables."""
    if noise.eps.shape != tuple(table.mean.shape):
        raise ValueError(
            f"noise shape {noise.eps.shape} does not match table shape {table.mean.shape}")
    return table.mean + ad.gauss_std(table.raw_var) * noise.eps


def uncertainty_scores(table: GaussianEmbeddingTable, guard: float = 1e-12) -> np.ndarray:
    """Per-node sum over dimensions of sqrt(var_i) / (|mu_i| + guard)."""
    mu = table.mean.value
    std = ad.gauss_std(table.raw_var.value)
    return np.sum(std / (np.abs(mu) + guard), axis=1)


def uncertainty_score(table: GaussianEmbeddingTable, node_id: int) -> float:
    if not 0 <= node_id < table.rows:
        raise IndexError(f"node id {node_id} outside [0, {table.rows})")
    return float(uncertainty_scores(table)[node_id])


def init_table(rows: int, dim: int, mean_scale: float, raw_var_init: float,
               rng: np.random.Generator, name: str) -> GaussianEmbeddingTable:
    """Means drawn N(0, mean_scale^2) i.i.d.; raw variances set to a constant."""
    if rows <= 0 or dim <= 0:
        raise ValueError("rows and dim must be positive")
    if mean_scale < 0:
        raise ValueError("mean_scale must be nonnegative")
    mean = rng.normal(0.0, mean_scale, size=(rows, dim)) if mean_scale > 0 \
        else np.zeros((rows, dim))
    raw = np.full((rows, dim), float(raw_var_init))
    return GaussianEmbeddingTable(
        ad.parameter(mean, f"{name}.mean"),
        ad.parameter(raw, f"{name}.raw_var"),
    )
