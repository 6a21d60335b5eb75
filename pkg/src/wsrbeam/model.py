"""System configuration, matrix-set data types, and random generation.

All generation is a pure function of (config, seed).  Channel matrices and
initial precoders are drawn from two independent counter-based Philox
streams, so the precoder initialization can be varied while the channel
realization is held fixed across algorithm comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateChannelError

#: Generator identity pinned into summary outputs so traces are reproducible
#: across machines running the same numpy version.
RNG_ALGORITHM = "numpy.random.Philox (SeedSequence-keyed)"

# Distinct stream tags keep the channel and initialization draws independent
# even when the two seed integers coincide.
_CHANNEL_STREAM = 0xC4A77E1
_INIT_STREAM = 0x1417C0DE

HERMITIAN_TOL = 1e-10
POWER_SLACK = 1e-12


def _rng(seed: int, stream: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=[int(seed), int(stream)])
    return np.random.Generator(np.random.Philox(seq))


class Stage(Enum):
    """Whether the weight matrices are pinned to identity (warm-start stage)
    or actively updated."""

    UNWEIGHTED = 0
    WEIGHTED = 1


@dataclass(frozen=True)
class SystemConfig:
    """Downlink dimensions, power budget, SNR, user priorities, and seeds."""

    M: int  # BS transmit antennas
    N: int  # receive antennas per user
    K: int  # users
    d: int  # data streams per user
    p_max: float = 10.0  # total transmit budget [W]
    snr_db: float = 10.0  # average per-user receive SNR [dB]
    weights: tuple[float, ...] | None = None  # user priorities, default all ones
    channel_seed: int = 0
    init_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("M", "N", "K", "d"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not (isinstance(self.p_max, (int, float)) and math.isfinite(self.p_max) and self.p_max > 0):
            raise ConfigError(f"p_max must be a positive real, got {self.p_max!r}")
        object.__setattr__(self, "p_max", float(self.p_max))
        if not (isinstance(self.snr_db, (int, float)) and math.isfinite(self.snr_db)):
            raise ConfigError(f"snr_db must be a finite real, got {self.snr_db!r}")
        object.__setattr__(self, "snr_db", float(self.snr_db))
        w = self.weights
        if w is None:
            w = (1.0,) * self.K
        w = tuple(float(x) for x in w)
        if len(w) != self.K:
            raise ConfigError(f"weights must have length K={self.K}, got {len(w)}")
        if any(not (math.isfinite(x) and x > 0) for x in w):
            raise ConfigError("weights must all be strictly positive")
        object.__setattr__(self, "weights", w)
        for name in ("channel_seed", "init_seed"):
            s = getattr(self, name)
            if not isinstance(s, (int, np.integer)) or isinstance(s, bool) or s < 0:
                raise ConfigError(f"{name} must be a nonnegative integer, got {s!r}")
            object.__setattr__(self, name, int(s))

    @property
    def weight_vector(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


def _matrix_stack(arrays, count: int | None, rows_cols: tuple[int, int] | None, name: str) -> np.ndarray:
    a = np.array(arrays, dtype=np.complex128, copy=True)
    if a.ndim != 3:
        raise ConfigError(f"{name} must be a stack of matrices, got shape {a.shape}")
    if count is not None and a.shape[0] != count:
        raise ConfigError(f"{name} must contain {count} matrices, got {a.shape[0]}")
    if rows_cols is not None and a.shape[1:] != rows_cols:
        raise ConfigError(f"{name} matrices must be {rows_cols[0]}x{rows_cols[1]}, got {a.shape[1:]}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} contains non-finite entries")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Per-user channel matrices H_k (N x M) plus the common noise power."""

    channels: np.ndarray  # (K, N, M)
    noise_power: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "channels", _matrix_stack(self.channels, None, None, "channels"))
        if self.noise_power is not None:
            s2 = float(self.noise_power)
            if not (math.isfinite(s2) and s2 > 0):
                raise ConfigError(f"noise_power must be positive, got {self.noise_power!r}")
            object.__setattr__(self, "noise_power", s2)

    @property
    def K(self) -> int:
        return self.channels.shape[0]

    @property
    def N(self) -> int:
        return self.channels.shape[1]

    @property
    def M(self) -> int:
        return self.channels.shape[2]

    def with_noise_power(self, noise_power: float) -> "ChannelSet":
        return ChannelSet(self.channels, noise_power)


@dataclass(frozen=True, eq=False)
class PrecoderSet:
    """Per-user transmit precoders V_k (M x d)."""

    precoders: np.ndarray  # (K, M, d)

    def __post_init__(self) -> None:
        object.__setattr__(self, "precoders", _matrix_stack(self.precoders, None, None, "precoders"))

    def total_power(self) -> float:
        """Sum over users of Tr(V_k V_k^H)."""
        return float(np.real(np.vdot(self.precoders, self.precoders)))


@dataclass(frozen=True, eq=False)
class ReceiverSet:
    """Per-user receive combiners U_k (N x d)."""

    receivers: np.ndarray  # (K, N, d)

    def __post_init__(self) -> None:
        object.__setattr__(self, "receivers", _matrix_stack(self.receivers, None, None, "receivers"))


@dataclass(frozen=True, eq=False)
class WeightMatrixSet:
    """Per-user MSE weight matrices W_k (d x d), Hermitian positive definite.

    In the UNWEIGHTED stage the matrices are pinned to the exact identity.
    """

    weight_matrices: np.ndarray  # (K, d, d)
    stage_flag: Stage = Stage.WEIGHTED

    def __post_init__(self) -> None:
        w = _matrix_stack(self.weight_matrices, None, None, "weight_matrices")
        if w.shape[1] != w.shape[2]:
            raise ConfigError(f"weight matrices must be square, got {w.shape[1:]}")
        asym = np.max(np.abs(w - np.conj(np.swapaxes(w, -1, -2))))
        if asym > HERMITIAN_TOL:
            raise ConfigError(f"weight matrices not Hermitian (max asymmetry {asym:.3e})")
        eigs = np.linalg.eigvalsh(w)
        if not np.all(eigs > 0):
            raise ConfigError(f"weight matrices must be positive definite (min eig {eigs.min():.3e})")
        if self.stage_flag is Stage.UNWEIGHTED:
            eye = np.broadcast_to(np.eye(w.shape[1], dtype=np.complex128), w.shape)
            if not np.array_equal(w, eye):
                raise ConfigError("UNWEIGHTED stage requires exact identity weight matrices")
        object.__setattr__(self, "weight_matrices", w)

    @property
    def d(self) -> int:
        return self.weight_matrices.shape[1]

    @classmethod
    def identity(cls, K: int, d: int) -> "WeightMatrixSet":
        eye = np.tile(np.eye(d, dtype=np.complex128), (K, 1, 1))
        return cls(eye, Stage.UNWEIGHTED)


def generate_channels(config: SystemConfig) -> ChannelSet:
    """Draw i.i.d. circularly symmetric complex Gaussian channels.

    Entries have zero mean and unit total variance (real and imaginary parts
    each carry variance 1/2), so E ||H_k||_F^2 = N * M.  The noise power is
    left unset; see :func:`compute_noise_power`.
    """
    rng = _rng(config.channel_seed, _CHANNEL_STREAM)
    shape = (config.K, config.N, config.M)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)
    return ChannelSet(channels=h)


def compute_noise_power(channels: ChannelSet, snr_db: float, config: SystemConfig) -> float:
    """Common noise power giving the requested average per-user receive SNR.

    sigma^2 = 10^{(1/K) sum_k log10(||H_k||_F^2 / N)} * 10^{-SNR/10},
    i.e. the geometric mean of the per-antenna channel gains scaled by the
    SNR in linear units.
    """
    h = channels.channels
    fro2 = np.sum(np.abs(h) ** 2, axis=(1, 2))
    if np.any(fro2 <= 0.0):
        raise DegenerateChannelError("channel matrix with zero Frobenius norm")
    exponent = float(np.mean(np.log10(fro2 / config.N))) - float(snr_db) / 10.0
    return float(10.0 ** exponent)


def init_precoders(config: SystemConfig, project: Callable[[PrecoderSet, float], PrecoderSet]) -> PrecoderSet:
    """Gaussian initial precoders pushed onto the sum-power ball.

    ``project`` is the feasibility projection (scale onto the ball when the
    raw draw exceeds the budget); it is injected to keep this module free of
    solver dependencies.
    """
    rng = _rng(config.init_seed, _INIT_STREAM)
    shape = (config.K, config.M, config.d)
    v = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(0.5)
    return project(PrecoderSet(v), config.p_max)
