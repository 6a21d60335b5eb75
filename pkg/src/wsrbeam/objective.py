"""Rates, MSE matrices, the weighted sum-MSE objective, its precoder
gradient, and the spectral bounds that control safe step sizes.

Conventions: every optimization-internal quantity (the objective ``f``, the
rates used in stopping tests) is in natural log; reported sum rates are in
bits per channel use (nats / ln 2).  Weight matrices must be Hermitian
positive definite wherever the objective or gradient is evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ObjectiveDomainError
from .linalg import hermitianize, lndet_hpd
from .model import ChannelSet, PrecoderSet, ReceiverSet, WeightMatrixSet

LN2 = math.log(2.0)


def _channel_stack(channels) -> np.ndarray:
    return channels.channels if isinstance(channels, ChannelSet) else np.asarray(channels)


def _precoder_stack(precoders) -> np.ndarray:
    return precoders.precoders if isinstance(precoders, PrecoderSet) else np.asarray(precoders)


def _receiver_stack(receivers) -> np.ndarray:
    return receivers.receivers if isinstance(receivers, ReceiverSet) else np.asarray(receivers)


def _weight_stack(weights) -> np.ndarray:
    return weights.weight_matrices if isinstance(weights, WeightMatrixSet) else np.asarray(weights)


@dataclass(frozen=True)
class BoundsReport:
    """Spectral quantities controlling smoothness and safe step sizes.

    kappa       max over users of the largest singular value of H_k^H H_k
    l_v         smoothness upper bound 2 * alpha_bar * K * kappa / sigma^2
    gamma_safe  provably-descending PGD step, sigma^2 / (2 alpha_bar K kappa)
    ek_floor    lower bound on every MSE-matrix eigenvalue for feasible
                precoders, sigma^2 / (p_max kappa + sigma^2)
    alpha_bar   max user priority
    """

    kappa: float
    l_v: float
    gamma_safe: float
    ek_floor: float
    alpha_bar: float

    def __post_init__(self) -> None:
        for name in ("kappa", "l_v", "gamma_safe", "ek_floor", "alpha_bar"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"BoundsReport.{name} must be a positive real, got {v!r}")
        if abs(self.gamma_safe * self.l_v - 1.0) > 1e-12:
            raise ConfigError("gamma_safe must equal 1 / l_v")
        if not (0.0 < self.ek_floor <= 1.0):
            raise ConfigError(f"ek_floor must lie in (0, 1], got {self.ek_floor!r}")


@dataclass(frozen=True)
class ObjectiveSnapshot:
    """Weighted sum rate (both units), objective value, and transmit power."""

    wsr_nats: float
    total_power: float
    f_value: float = math.nan
    wsr_bits: float = field(init=False)

    def __post_init__(self) -> None:
        if self.wsr_nats < 0:
            raise ConfigError(f"weighted sum rate must be nonnegative, got {self.wsr_nats!r}")
        object.__setattr__(self, "wsr_bits", self.wsr_nats / LN2)


def mse_matrix(channel: np.ndarray, receiver: np.ndarray, precoders, noise_power: float, k: int) -> np.ndarray:
    """MSE matrix of user ``k``'s stream estimates.

    E_k = (I - U_k^H H_k V_k)(I - U_k^H H_k V_k)^H
          + U_k^H (sum_{j != k} H_k V_j V_j^H H_k^H + sigma^2 I) U_k

    Built as a sum of positive semidefinite terms and symmetrized, so the
    result is Hermitian PSD up to roundoff.
    """
    v = _precoder_stack(precoders)
    K, _, d = v.shape
    if channel.shape[1] != v.shape[1] or receiver.shape[0] != channel.shape[0]:
        raise ConfigError("inconsistent shapes for MSE matrix evaluation")
    hv = channel @ v[k]  # (N, d)
    t = np.eye(d, dtype=np.complex128) - receiver.conj().T @ hv
    e = t @ t.conj().T + noise_power * (receiver.conj().T @ receiver)
    for j in range(K):
        if j == k:
            continue
        uhv = receiver.conj().T @ (channel @ v[j])  # (d, d)
        e = e + uhv @ uhv.conj().T
    return hermitianize(e)


def user_rate(channel: np.ndarray, precoders, noise_power: float, k: int) -> float:
    """Achievable rate of user ``k`` in nats per channel use.

    log det(I + H_k V_k V_k^H H_k^H (sum_{j != k} H_k V_j V_j^H H_k^H
    + sigma^2 I)^{-1}), evaluated as a difference of two log-determinants of
    Hermitian positive definite matrices.
    """
    if not (noise_power > 0):
        raise ConfigError("noise power must be positive")
    v = _precoder_stack(precoders)
    n = channel.shape[0]
    cov = noise_power * np.eye(n, dtype=np.complex128)
    for j in range(v.shape[0]):
        if j == k:
            continue
        hv = channel @ v[j]
        cov = cov + hv @ hv.conj().T
    cov = hermitianize(cov)
    own = channel @ v[k]
    rate = lndet_hpd(hermitianize(cov + own @ own.conj().T)) - lndet_hpd(cov)
    return max(rate, 0.0)


def weighted_sum_rate(channels: ChannelSet, precoders, weights) -> ObjectiveSnapshot:
    """Sum of per-user rates scaled by the user priorities.

    Per-user terms are accumulated in fixed user order so traces are
    reproducible.  The returned snapshot leaves ``f_value`` unset (NaN): the
    sum-MSE objective depends on receivers and weight matrices this function
    does not see.
    """
    if channels.noise_power is None:
        raise ConfigError("channels carry no noise power; call compute_noise_power first")
    h = _channel_stack(channels)
    v = _precoder_stack(precoders)
    alpha = np.asarray(weights, dtype=np.float64)
    total = 0.0
    for k in range(h.shape[0]):
        total += float(alpha[k]) * user_rate(h[k], v, channels.noise_power, k)
    power = float(np.real(np.vdot(v, v)))
    return ObjectiveSnapshot(wsr_nats=total, total_power=power)


def wmmse_objective(receivers, weight_matrices, precoders, channels, weights, noise_power: float) -> float:
    """Matrix-weighted sum-MSE objective.

    f = sum_k alpha_k (Tr(W_k E_k) - ln det W_k).  With all W_k = I this is
    the plain sum-MSE objective.
    """
    h = _channel_stack(channels)
    u = _receiver_stack(receivers)
    w = _weight_stack(weight_matrices)
    alpha = np.asarray(weights, dtype=np.float64)
    total = 0.0
    for k in range(h.shape[0]):
        try:
            lndet_w = lndet_hpd(w[k])
        except np.linalg.LinAlgError as exc:
            raise ObjectiveDomainError(f"weight matrix of user {k} is singular or indefinite") from exc
        e = mse_matrix(h[k], u[k], precoders, noise_power, k)
        total += float(alpha[k]) * (float(np.real(np.trace(w[k] @ e))) - lndet_w)
    return total


def weighted_gram(channels, receivers, weight_matrices, weights) -> np.ndarray:
    """System matrix sum_m alpha_m H_m^H U_m W_m U_m^H H_m (M x M, PSD).

    Accumulated in fixed user order; shared by the exact precoder update and
    (times two) by every user's gradient.
    """
    h = _channel_stack(channels)
    u = _receiver_stack(receivers)
    w = _weight_stack(weight_matrices)
    alpha = np.asarray(weights, dtype=np.float64)
    m = h.shape[2]
    total = np.zeros((m, m), dtype=np.complex128)
    for k in range(h.shape[0]):
        hu = h[k].conj().T @ u[k]  # (M, d)
        total += float(alpha[k]) * (hu @ w[k] @ hu.conj().T)
    return hermitianize(total)


def gradient_common_factor(channels, receivers, weight_matrices, weights) -> np.ndarray:
    """The positive semidefinite factor 2 sum_m alpha_m H_m^H U_m W_m U_m^H H_m,
    computed once per iteration and shared across users."""
    return 2.0 * weighted_gram(channels, receivers, weight_matrices, weights)


def gradient_v(receivers, weight_matrices, precoder_k: np.ndarray, channels, weights, k: int,
               common: np.ndarray | None = None) -> np.ndarray:
    """Gradient of the weighted sum-MSE objective in user ``k``'s precoder.

    grad = (2 sum_m alpha_m H_m^H U_m W_m U_m^H H_m) V_k
           - 2 alpha_k H_k^H U_k W_k

    where the complex gradient is the real gradient over the stacked real and
    imaginary coordinates.  Pass ``common`` (from
    :func:`gradient_common_factor`) to share the first factor across users.
    """
    h = _channel_stack(channels)
    u = _receiver_stack(receivers)
    w = _weight_stack(weight_matrices)
    alpha = np.asarray(weights, dtype=np.float64)
    if common is None:
        common = gradient_common_factor(channels, receivers, weight_matrices, weights)
    return common @ precoder_k - 2.0 * float(alpha[k]) * (h[k].conj().T @ u[k] @ w[k])


def compute_bounds(channels, weights, p_max: float, noise_power: float) -> BoundsReport:
    """Spectral bounds for one channel realization (cache per solve).

    kappa is found by a Hermitian eigensolve on the smaller of H H^H and
    H^H H; no singular value decomposition of the full stack is needed.
    """
    if not (noise_power > 0):
        raise ConfigError("noise power must be positive")
    h = _channel_stack(channels)
    alpha = np.asarray(weights, dtype=np.float64)
    K = h.shape[0]
    kappa = 0.0
    for k in range(K):
        hk = h[k]
        gram = hk @ hk.conj().T if hk.shape[0] <= hk.shape[1] else hk.conj().T @ hk
        kappa = max(kappa, float(np.linalg.eigvalsh(hermitianize(gram))[-1]))
    alpha_bar = float(alpha.max())
    l_v = 2.0 * alpha_bar * K * kappa / noise_power
    return BoundsReport(
        kappa=kappa,
        l_v=l_v,
        gamma_safe=1.0 / l_v,
        ek_floor=noise_power / (p_max * kappa + noise_power),
        alpha_bar=alpha_bar,
    )
