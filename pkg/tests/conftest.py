import pytest

import wsrbeam as wb


def make_system(seed=0, M=8, N=2, K=3, d=2, snr_db=10.0, p_max=10.0, weights=None):
    """One ready-to-solve (config, channels-with-noise) pair."""
    cfg = wb.SystemConfig(M=M, N=N, K=K, d=d, snr_db=snr_db, p_max=p_max,
                          weights=weights, channel_seed=seed, init_seed=seed + 1000)
    ch = wb.generate_channels(cfg)
    ch = ch.with_noise_power(wb.compute_noise_power(ch, cfg.snr_db, cfg))
    return cfg, ch


def mmse_blocks(ch, precoders):
    """Algorithm-produced (receivers, weights) at the given precoders."""
    u = wb.update_receivers(ch, precoders, ch.noise_power)
    w = wb.update_weight_matrices(ch, u, precoders)
    return u, w


@pytest.fixture
def small_system():
    return make_system(seed=0)
