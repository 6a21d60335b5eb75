"""Block updates, sum-power projection, dual bisection, and the three
iterative precoder-design drivers.

All three drivers share one loop skeleton per iteration:

  1. extrapolate the precoders (first-order driver only),
  2. MMSE receive-filter update,
  3. weight-matrix update -- pinned to identity during the unweighted
     warm-start stage, standard update once the stage latch has fired,
  4. precoder update -- either the exact minimizer of the precoder
     subproblem (dual bisection over the sum-power constraint) or a single
     projected gradient step,
  5. record the weighted sum rate of the new feasible iterate.

Stage switching and termination are driven by relative changes of the
weighted sum rate over *completed* iterates: the switch test inside
iteration t compares iterations t-1 and t-2, the stop test compares t and
t-1, and at t=1 the relative change is +inf (no stop, no switch).  The stop
test only fires in the weighted stage, so the warm start always hands over
to at least one weighted iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, IllConditionedWeightError, UnstableParametersError
from .linalg import hermitianize, solve_hpd
from .model import (
    ChannelSet,
    PrecoderSet,
    ReceiverSet,
    Stage,
    SystemConfig,
    WeightMatrixSet,
    init_precoders,
)
from .objective import (
    BoundsReport,
    compute_bounds,
    gradient_common_factor,
    weighted_gram,
    weighted_sum_rate,
    wmmse_objective,
    _channel_stack,
    _precoder_stack,
    _receiver_stack,
    _weight_stack,
)

#: Sentinel for SolverOptions.gamma selecting the provably-descending step.
GAMMA_SAFE = "safe"

#: (omega, gamma) operating points for the first-order driver, keyed by SNR
#: in dB.  Used whenever the options leave omega/gamma unset.
STEP_DEFAULTS_BY_SNR: dict[float, tuple[float, float]] = {
    -10.0: (0.6, 0.4),
    -5.0: (0.6, 0.4),
    0.0: (0.6, 0.4),
    5.0: (0.6, 0.4),
    10.0: (0.8, 0.05),
    15.0: (0.8, 0.005),
    20.0: (0.8, 0.003),
}

_COND_LIMIT = 1e12


class Algorithm(Enum):
    WMMSE = "wmmse"
    MMMSE = "mmmse"
    AMMMSE = "ammmse"

    @classmethod
    def from_name(cls, name: str) -> "Algorithm":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown algorithm {name!r}; expected one of "
                              f"{[a.value for a in cls]}") from None


@dataclass(frozen=True)
class SolverOptions:
    """Algorithm selection, step parameters, and stopping controls.

    ``gamma`` may be a positive number, the string ``"safe"`` (use the
    provably-descending step from the bounds report), or None (use the
    SNR-keyed default table).  ``omega`` may be a number in [0, 1) or None
    (default table).  Both are only consulted by the first-order driver.
    """

    algorithm: Algorithm = Algorithm.WMMSE
    gamma: float | str | None = None
    omega: float | None = None
    eps1: float = 0.1  # stage-switch threshold on relative WSR change
    eps2: float = 0.001  # termination threshold on relative WSR change
    max_iters: int = 1000
    bisect_tol: float = 1e-4
    bisect_max: int = 100
    record_iterates: bool = False  # keep (U, W, V) per iteration for bound scans
    latch_stage: bool = True  # False: literal re-test of eps1 every iteration

    def __post_init__(self) -> None:
        if not isinstance(self.algorithm, Algorithm):
            object.__setattr__(self, "algorithm", Algorithm.from_name(str(self.algorithm)))
        if isinstance(self.gamma, str):
            if self.gamma != GAMMA_SAFE:
                raise ConfigError(f"gamma must be positive, {GAMMA_SAFE!r}, or None; got {self.gamma!r}")
        elif self.gamma is not None:
            g = float(self.gamma)
            if not (math.isfinite(g) and g > 0):
                raise ConfigError(f"gamma must be positive, got {self.gamma!r}")
            object.__setattr__(self, "gamma", g)
        if self.omega is not None:
            om = float(self.omega)
            if not (0.0 <= om < 1.0):
                raise ConfigError(f"omega must lie in [0, 1), got {self.omega!r}")
            object.__setattr__(self, "omega", om)
        if not (self.eps1 > 0):
            raise ConfigError(f"eps1 must be positive, got {self.eps1!r}")
        if not (self.eps2 > 0 and math.isfinite(self.eps2)):
            raise ConfigError(f"eps2 must be positive and finite, got {self.eps2!r}")
        if self.eps2 > self.eps1:
            raise ConfigError(f"eps2 ({self.eps2}) must not exceed eps1 ({self.eps1})")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if not (self.bisect_tol > 0):
            raise ConfigError("bisect_tol must be positive")
        if self.bisect_max < 1:
            raise ConfigError("bisect_max must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    """One completed iteration: objective diagnostics at the feasible iterate.

    ``f_after_u`` / ``f_after_w`` / ``f_after_v`` checkpoint the objective
    after each block update inside the iteration; with no extrapolation and a
    step no larger than gamma_safe they form a non-increasing chain.
    """

    t: int
    wsr_bits: float
    f_value: float
    total_power: float
    stage: Stage
    f_after_u: float
    f_after_w: float
    f_after_v: float
    rel_change: float  # +inf at t=1


class BlockIterate(NamedTuple):
    """Full block variables recorded for bound scans."""

    receivers: ReceiverSet
    weight_matrices: WeightMatrixSet
    precoders: PrecoderSet


class BisectionResult(NamedTuple):
    lam: float
    precoders: PrecoderSet
    converged: bool
    iterations: int


@dataclass(frozen=True, eq=False)
class SolveResult:
    final_precoders: PrecoderSet
    trace: tuple[IterationRecord, ...]
    iterations: int
    converged: bool
    stationarity_residual: float
    switch_iteration: int | None = None  # first weighted iteration of a two-stage run
    iterates: tuple[BlockIterate, ...] | None = None


def default_step_parameters(snr_db: float) -> tuple[float, float]:
    """(omega, gamma) for the first-order driver at the given SNR.

    Exact table match when available, otherwise the nearest tabulated SNR
    (ties resolve toward the higher SNR).
    """
    snr = float(snr_db)
    key = min(STEP_DEFAULTS_BY_SNR, key=lambda s: (abs(s - snr), -s))
    return STEP_DEFAULTS_BY_SNR[key]


def resolve_step_parameters(options: SolverOptions, snr_db: float,
                            bounds: BoundsReport) -> tuple[float, float]:
    """Concrete (gamma, omega) for one solve."""
    omega_default, gamma_default = default_step_parameters(snr_db)
    omega = omega_default if options.omega is None else options.omega
    if options.gamma is None:
        gamma = gamma_default
    elif options.gamma == GAMMA_SAFE:
        gamma = bounds.gamma_safe
    else:
        gamma = float(options.gamma)
    return gamma, omega


def update_receivers(channels, precoders, noise_power: float) -> ReceiverSet:
    """MMSE receive filters: U_k = (sum_j H_k V_j V_j^H H_k^H + sigma^2 I)^{-1} H_k V_k.

    The system matrix is strictly positive definite for sigma^2 > 0, so the
    Cholesky solve is always well posed.
    """
    h = _channel_stack(channels)
    v = _precoder_stack(precoders)
    K, n, _ = h.shape
    q = np.tensordot(v, v.conj(), axes=([0, 2], [0, 2]))  # sum_j V_j V_j^H
    eye = noise_power * np.eye(n, dtype=np.complex128)
    out = np.empty((K, n, v.shape[2]), dtype=np.complex128)
    for k in range(K):
        g = hermitianize(h[k] @ q @ h[k].conj().T) + eye
        out[k] = solve_hpd(g, h[k] @ v[k])
    return ReceiverSet(out)


def update_weight_matrices(channels, receivers, precoders) -> WeightMatrixSet:
    """Weight update W_k = (I - U_k^H H_k V_k)^{-1}, symmetrized after the solve.

    With fresh MMSE receivers the argument equals the (Hermitian positive
    definite) MSE matrix, so the update is well posed; for other receivers a
    near-singular argument raises with a condition estimate.
    """
    h = _channel_stack(channels)
    u = _receiver_stack(receivers)
    v = _precoder_stack(precoders)
    K, _, d = v.shape
    eye = np.eye(d, dtype=np.complex128)
    out = np.empty((K, d, d), dtype=np.complex128)
    for k in range(K):
        t = eye - u[k].conj().T @ h[k] @ v[k]
        cond = np.linalg.cond(t)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise IllConditionedWeightError(
                f"weight update for user {k} is ill conditioned (cond ~ {cond:.3e}); "
                "receivers are not MMSE-consistent with the precoders")
        w = hermitianize(np.linalg.solve(t, eye))
        if float(np.linalg.eigvalsh(w)[0]) <= 0.0:
            raise IllConditionedWeightError(
                f"weight update for user {k} produced a non positive definite matrix; "
                f"argument condition ~ {cond:.3e}")
        out[k] = w
    return WeightMatrixSet(out, Stage.WEIGHTED)


def project_sum_power(precoders: PrecoderSet, p_max: float) -> PrecoderSet:
    """Projection onto the sum-power ball: identity when feasible, otherwise
    a uniform scaling by sqrt(p_max / power)."""
    power = precoders.total_power()
    if power <= p_max:
        return precoders
    return PrecoderSet(precoders.precoders * math.sqrt(p_max / power))


def _stack_targets(targets: np.ndarray) -> np.ndarray:
    k, m, d = targets.shape
    return np.ascontiguousarray(targets.transpose(1, 0, 2).reshape(m, k * d))


def _unstack_targets(flat: np.ndarray, k: int, d: int) -> np.ndarray:
    m = flat.shape[0]
    return np.ascontiguousarray(flat.reshape(m, k, d).transpose(1, 0, 2))


def bisect_dual(gram: np.ndarray, targets, p_max: float, tol: float = 1e-4,
                max_iter: int = 100) -> BisectionResult:
    """Solve V_k = (A + lam I)^{-1} B_k with the single dual variable of the
    sum-power constraint found by bisection.

    If the lam=0 solution exists and is feasible it is returned directly.
    Otherwise lam is bisected inside [0, sqrt(sum_k ||B_k||_F^2 / p_max)]:
    since ||V_k(lam)||_F <= ||B_k||_F / lam for PSD A, the upper endpoint is
    always on the feasible side, so the bracket is valid.  Bisection stops
    once the feasible-side power is inside [p_max (1 - 1e-3), p_max] and the
    bracket is narrower than ``tol``.  When A is singular and the optimum is
    interior (the power band is unreachable), the minimum-norm least-squares
    solution is the lam=0 answer.
    """
    gram = np.asarray(gram, dtype=np.complex128)
    b = np.asarray(targets, dtype=np.complex128)
    K, m, d = b.shape
    bstack = _stack_targets(b)
    eye = np.eye(m, dtype=np.complex128)

    def power_of(x: np.ndarray) -> float:
        return float(np.real(np.vdot(x, x)))

    try:
        x0 = solve_hpd(gram, bstack)
        if power_of(x0) <= p_max:
            return BisectionResult(0.0, PrecoderSet(_unstack_targets(x0, K, d)), True, 0)
    except np.linalg.LinAlgError:
        pass

    lam_hi = math.sqrt(power_of(bstack) / p_max)
    if lam_hi == 0.0:
        return BisectionResult(0.0, PrecoderSet(np.zeros_like(b)), True, 0)

    def solve_at(lam: float) -> np.ndarray | None:
        try:
            return solve_hpd(gram + lam * eye, bstack)
        except np.linalg.LinAlgError:
            return None

    lo, hi = 0.0, lam_hi
    x_hi = solve_at(lam_hi)
    if x_hi is None:
        raise ConfigError("system matrix is not positive semidefinite")
    p_hi = power_of(x_hi)
    band = (1.0 - 1e-3) * p_max
    its = 0
    while its < max_iter and not (p_hi >= band and (hi - lo) < tol):
        mid = 0.5 * (lo + hi)
        its += 1
        x_mid = solve_at(mid)
        if x_mid is None or power_of(x_mid) > p_max:
            lo = mid  # infeasible (or numerically indefinite) side
        else:
            hi, x_hi, p_hi = mid, x_mid, power_of(x_mid)
    converged = p_hi >= band and (hi - lo) < tol
    if not converged:
        # Interior optimum with singular A: power never reaches the band.
        x_ls = np.linalg.lstsq(gram, bstack, rcond=None)[0]
        if power_of(x_ls) <= p_max:
            return BisectionResult(0.0, PrecoderSet(_unstack_targets(x_ls, K, d)), True, its)
    return BisectionResult(hi, PrecoderSet(_unstack_targets(x_hi, K, d)), converged, its)


def update_precoders_exact(channels, receivers, weight_matrices, weights, p_max: float,
                           options: SolverOptions) -> PrecoderSet:
    """Exact minimizer of the precoder subproblem over the sum-power ball:
    V_k = alpha_k (sum_m alpha_m H_m^H U_m W_m U_m^H H_m + lam I)^{-1} H_k^H U_k W_k.

    With identity weight matrices this is exactly the unweighted sum-MSE
    precoder update (the warm-start stage shares this code path).
    """
    h = _channel_stack(channels)
    u = _receiver_stack(receivers)
    w = _weight_stack(weight_matrices)
    alpha = np.asarray(weights, dtype=np.float64)
    gram = weighted_gram(channels, receivers, weight_matrices, weights)
    targets = np.stack([float(alpha[k]) * (h[k].conj().T @ u[k] @ w[k]) for k in range(h.shape[0])])
    result = bisect_dual(gram, targets, p_max, options.bisect_tol, options.bisect_max)
    return result.precoders


def pgd_precoder_step(extrapolated, receivers, weight_matrices, channels, weights,
                      gamma: float, p_max: float) -> PrecoderSet:
    """Single projected gradient step on the precoder block:
    V_k = Pi(Vhat_k - gamma * grad_k(Vhat)).

    Matrix multiplications only; the shared gradient factor is formed once.
    """
    if not (gamma >= 0):
        raise ConfigError("gamma must be nonnegative")
    h = _channel_stack(channels)
    u = _receiver_stack(receivers)
    w = _weight_stack(weight_matrices)
    vhat = _precoder_stack(extrapolated)
    alpha = np.asarray(weights, dtype=np.float64)
    common = gradient_common_factor(channels, receivers, weight_matrices, weights)
    stepped = np.empty_like(vhat)
    for k in range(h.shape[0]):
        grad = common @ vhat[k] - 2.0 * float(alpha[k]) * (h[k].conj().T @ u[k] @ w[k])
        stepped[k] = vhat[k] - gamma * grad
    return project_sum_power(PrecoderSet(stepped), p_max)


def extrapolate(current: PrecoderSet, previous: PrecoderSet, omega: float) -> PrecoderSet:
    """Momentum point Vhat = V_cur + omega (V_cur - V_prev).

    No projection is applied: the point feeds the receiver update and the
    gradient step directly and may sit outside the power ball.
    """
    if not (0.0 <= omega < 1.0):
        raise ConfigError(f"omega must lie in [0, 1), got {omega!r}")
    cur = _precoder_stack(current)
    prev = _precoder_stack(previous)
    return PrecoderSet(cur + omega * (cur - prev))


def _rel_change(new: float, old: float) -> float:
    denom = abs(old)
    if denom == 0.0:
        return math.inf
    return abs(new - old) / denom


def _stationarity_residual(channels: ChannelSet, precoders: PrecoderSet, weights,
                           noise_power: float, p_max: float, bounds: BoundsReport,
                           weighted: bool) -> float:
    """Norm of the projected-gradient fixed-point map at the exit iterate,
    ||V - Pi(V - gamma_safe grad f)||_F / max(1, ||V||_F), evaluated with
    fresh MMSE receivers and the exit stage's weight matrices."""
    u = update_receivers(channels, precoders, noise_power)
    K, _, d = precoders.precoders.shape
    w = update_weight_matrices(channels, u, precoders) if weighted else WeightMatrixSet.identity(K, d)
    stepped = pgd_precoder_step(precoders, u, w, channels, weights, bounds.gamma_safe, p_max)
    diff = precoders.precoders - stepped.precoders
    norm_v = math.sqrt(max(precoders.total_power(), 0.0))
    return float(np.linalg.norm(diff)) / max(1.0, norm_v)


def _run_bcd(channels: ChannelSet, config: SystemConfig, options: SolverOptions, *,
             exact: bool, use_extrapolation: bool, start_weighted: bool) -> SolveResult:
    if channels.noise_power is None:
        raise ConfigError("channels carry no noise power; call compute_noise_power first")
    sigma2 = channels.noise_power
    weights = config.weight_vector
    bounds = compute_bounds(channels, weights, config.p_max, sigma2)
    if options.algorithm is Algorithm.AMMMSE:
        gamma, omega = resolve_step_parameters(options, config.snr_db, bounds)
    else:
        gamma, omega = 0.0, 0.0

    v_curr = init_precoders(config, project_sum_power)
    v_old = v_curr
    eye_w = WeightMatrixSet.identity(config.K, config.d)
    w_prev: WeightMatrixSet = eye_w
    latched = start_weighted
    switch_iteration: int | None = None
    wsr_hist: list[float] = []
    records: list[IterationRecord] = []
    iterates: list[BlockIterate] | None = [] if options.record_iterates else None
    running_max = -math.inf
    drop_streak = 0
    converged = False

    for t in range(1, options.max_iters + 1):
        if use_extrapolation and t >= 2 and omega > 0.0:
            v_hat = extrapolate(v_curr, v_old, omega)
        else:
            v_hat = v_curr

        u = update_receivers(channels, v_hat, sigma2)
        f_after_u = wmmse_objective(u, w_prev, v_hat, channels, weights, sigma2)

        if latched:
            weighted_now = True
        else:
            # Switch test: relative WSR change between iterations t-1 and t-2.
            rel_switch = math.inf if len(wsr_hist) < 2 else _rel_change(wsr_hist[-1], wsr_hist[-2])
            weighted_now = rel_switch <= options.eps1
            if weighted_now:
                if options.latch_stage:
                    latched = True
                if switch_iteration is None:
                    switch_iteration = t

        if weighted_now:
            w = update_weight_matrices(channels, u, v_hat)
        else:
            w = eye_w
        f_after_w = wmmse_objective(u, w, v_hat, channels, weights, sigma2)

        if exact:
            v_new = update_precoders_exact(channels, u, w, weights, config.p_max, options)
        else:
            v_new = pgd_precoder_step(v_hat, u, w, channels, weights, gamma, config.p_max)
        f_after_v = wmmse_objective(u, w, v_new, channels, weights, sigma2)

        snap = weighted_sum_rate(channels, v_new, weights)
        rel = math.inf if t == 1 else _rel_change(snap.wsr_nats, wsr_hist[-1])
        wsr_hist.append(snap.wsr_nats)
        records.append(IterationRecord(
            t=t,
            wsr_bits=snap.wsr_bits,
            f_value=f_after_v,
            total_power=snap.total_power,
            stage=Stage.WEIGHTED if weighted_now else Stage.UNWEIGHTED,
            f_after_u=f_after_u,
            f_after_w=f_after_w,
            f_after_v=f_after_v,
            rel_change=rel,
        ))
        if iterates is not None:
            iterates.append(BlockIterate(u, w, v_new))

        if options.algorithm is Algorithm.AMMMSE:
            running_max = max(running_max, snap.wsr_nats)
            if snap.wsr_nats < 0.5 * running_max:
                drop_streak += 1
            else:
                drop_streak = 0
            if drop_streak >= 5:
                raise UnstableParametersError(
                    f"weighted sum rate fell below half its running maximum for 5 "
                    f"consecutive iterations: gamma={gamma!r}, omega={omega!r} are "
                    "too aggressive for this instance")

        v_old, v_curr, w_prev = v_curr, v_new, w
        if weighted_now and rel <= options.eps2:
            converged = True
            break

    residual = _stationarity_residual(
        channels, v_curr, weights, sigma2, config.p_max, bounds,
        weighted=(latched or records[-1].stage is Stage.WEIGHTED))
    return SolveResult(
        final_precoders=v_curr,
        trace=tuple(records),
        iterations=len(records),
        converged=converged,
        stationarity_residual=residual,
        switch_iteration=switch_iteration,
        iterates=tuple(iterates) if iterates is not None else None,
    )


def run_wmmse(channels: ChannelSet, config: SystemConfig, options: SolverOptions) -> SolveResult:
    """Exact block-coordinate solver: MMSE receivers, standard weight update,
    precoders by dual bisection; stops on the relative WSR change."""
    if options.algorithm is not Algorithm.WMMSE:
        raise ConfigError("options.algorithm must be WMMSE")
    return _run_bcd(channels, config, options, exact=True, use_extrapolation=False,
                    start_weighted=True)


def run_mmmse(channels: ChannelSet, config: SystemConfig, options: SolverOptions) -> SolveResult:
    """Two-stage warm-started solver: identity weights (plain sum-MSE
    minimization) until the relative WSR change first drops below eps1, then
    the standard weighted updates until eps2."""
    if options.algorithm is not Algorithm.MMMSE:
        raise ConfigError("options.algorithm must be MMMSE")
    return _run_bcd(channels, config, options, exact=True, use_extrapolation=False,
                    start_weighted=False)


def run_ammmse(channels: ChannelSet, config: SystemConfig, options: SolverOptions) -> SolveResult:
    """Two-stage warm-started solver with the exact precoder update replaced
    by one projected gradient step from an extrapolated point.

    Flags divergence (an unstable gamma/omega pair) when the WSR stays below
    half its running maximum for five consecutive iterations.
    """
    if options.algorithm is not Algorithm.AMMMSE:
        raise ConfigError("options.algorithm must be AMMMSE")
    return _run_bcd(channels, config, options, exact=False, use_extrapolation=True,
                    start_weighted=False)


_DRIVERS = {
    Algorithm.WMMSE: run_wmmse,
    Algorithm.MMMSE: run_mmmse,
    Algorithm.AMMMSE: run_ammmse,
}


def solve(channels: ChannelSet, config: SystemConfig, options: SolverOptions) -> SolveResult:
    """Dispatch to the driver selected by ``options.algorithm``."""
    return _DRIVERS[options.algorithm](channels, config, options)
