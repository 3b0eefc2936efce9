"""Deterministic numeric kernels: flat vectors, norms, medians, seeded Gaussians.

All randomness in the simulator flows through :class:`RngStream`, an immutable
handle over a counter-based generator (Philox). Substreams are derived by
label/index paths, so concurrent workers drawing from disjoint paths can never
perturb each other's sequences.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

# A ParamVector is a finite 1-D float64 array. Kept as a bare ndarray because
# every consumer does elementwise arithmetic on it.
ParamVector = np.ndarray


def as_vector(values) -> ParamVector:
    """Coerce to a 1-D float64 array, rejecting non-finite entries."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected 1-D vector, got shape {v.shape}")
    if v.size and not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


def l2_norm(v: ParamVector) -> float:
    """Euclidean norm of a non-empty finite vector."""
    v = as_vector(v)
    if v.size == 0:
        raise ValueError("l2_norm of empty vector is undefined")
    return float(np.linalg.norm(v))


def median(xs) -> float:
    """Median of finite reals; even lengths average the two middle values."""
    a = np.asarray(xs, dtype=np.float64)
    if a.size == 0:
        raise ValueError("median of empty sequence is undefined")
    if not np.all(np.isfinite(a)):
        raise ValueError("median input contains non-finite entries")
    return float(np.median(a))


@dataclass(frozen=True)
class RngStream:
    """Immutable handle on a deterministic substream of a master seed.

    Identical (master_seed, stream_path) pairs always produce identical
    sample sequences; distinct paths are statistically independent.
    """

    master_seed: int
    stream_path: tuple = ()

    def child(self, label: str, index: int = 0) -> "RngStream":
        """Derive the substream named (label, index)."""
        if index < 0:
            raise ValueError("substream index must be non-negative")
        return RngStream(self.master_seed, self.stream_path + ((label, int(index)),))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this substream."""
        key = []
        for label, index in self.stream_path:
            key.append(zlib.crc32(label.encode("utf-8")))
            key.append(index)
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=tuple(key))
        return np.random.Generator(np.random.Philox(seq))


def gaussian_vector(rng: RngStream, std: float, dim: int) -> ParamVector:
    """dim i.i.d. draws from Normal(0, std^2); std=0 yields the zero vector.

    Pure in its arguments: calling twice with the same stream returns the
    same vector. Callers wanting fresh draws derive a new child stream.
    """
    if std < 0:
        raise ValueError("gaussian std must be non-negative")
    if dim < 1:
        raise ValueError("dim must be positive")
    if std == 0:
        return np.zeros(dim, dtype=np.float64)
    return rng.generator().normal(0.0, std, size=dim)
