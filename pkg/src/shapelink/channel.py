"""AWGN and Rician block-fading channels with LMMSE estimation/equalization."""

from dataclasses import dataclass

import numpy as np

from .constants import equalized_noise_variance
from .errors import ConfigError, EqualizerError

PILOT = 1.0 + 0.0j


def ebn0_to_n0(ebn0_db, rate):
    """Noise variance for unit-energy symbols carrying ``rate`` info bits."""
    if rate <= 0:
        raise ConfigError(f"rate must be positive, got {rate}")
    return 1.0 / (rate * 10.0 ** (np.asarray(ebn0_db, dtype=float) / 10.0))


def complex_noise(shape, N0, rng):
    """Circular complex Gaussian samples with variance ``N0`` (N0/2 per component)."""
    std = np.sqrt(np.asarray(N0, dtype=float) / 2.0)
    return std * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def awgn(x, N0, rng):
    x = np.asarray(x, dtype=complex)
    if np.any(np.asarray(N0) < 0):
        raise ConfigError("N0 must be non-negative")
    return x + complex_noise(x.shape, N0, rng)


@dataclass(frozen=True)
class BlockFadingConfig:
    n_bf: int = 19
    n_p: int = 3
    k_factor: float = 10.0
    csi: str = "perfect"  # or "estimated"

    def __post_init__(self):
        if not 0 <= self.n_p < self.n_bf:
            raise ConfigError(f"need 0 <= n_p < n_bf, got n_p={self.n_p}, n_bf={self.n_bf}")
        if self.k_factor < 0:
            raise ConfigError("K-factor must be non-negative")
        if self.csi not in ("perfect", "estimated"):
            raise ConfigError(f"csi must be 'perfect' or 'estimated', got {self.csi!r}")
        if self.csi == "estimated" and self.n_p == 0:
            raise ConfigError("estimated CSI needs at least one pilot per block")

    @property
    def data_per_block(self):
        return self.n_bf - self.n_p


def rician_coefficients(shape, k_factor, rng):
    """Unit-power Rician coefficients with line-of-sight ratio ``k_factor``."""
    los = np.sqrt(k_factor / (k_factor + 1.0))
    nlos = np.sqrt(1.0 / (k_factor + 1.0))
    return los + nlos * complex_noise(shape, 1.0, rng)


def rician_block_fading(x, cfg, N0, rng):
    """Pass a channel-use stream (last axis) through block fading plus AWGN.

    One coefficient is drawn per block of ``cfg.n_bf`` consecutive uses.
    Returns ``(y, h)`` with ``h`` expanded to one value per use.
    """
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    n_blocks = -(-n // cfg.n_bf)
    hb = rician_coefficients(x.shape[:-1] + (n_blocks,), cfg.k_factor, rng)
    h = np.repeat(hb, cfg.n_bf, axis=-1)[..., :n]
    return h * x + complex_noise(x.shape, N0, rng), h


def lmmse_estimate(y_pilots, pilot_symbols, N0):
    """LMMSE coefficient estimate from pilots along the last axis, E|h|^2 = 1 prior."""
    y_pilots = np.asarray(y_pilots, dtype=complex)
    p = np.broadcast_to(np.asarray(pilot_symbols, dtype=complex), y_pilots.shape)
    if y_pilots.shape[-1] == 0:
        raise ConfigError("LMMSE estimation needs at least one pilot")
    num = np.sum(np.conj(p) * y_pilots, axis=-1)
    return num / (np.sum(np.abs(p) ** 2, axis=-1) + N0)


@dataclass(frozen=True, eq=False)
class EqualizedSymbol:
    y_eq: np.ndarray
    rho: np.ndarray

    @property
    def noise_var(self):
        return equalized_noise_variance(self.rho)


def lmmse_equalize(y, h_hat, N0):
    y = np.asarray(y, dtype=complex)
    h_hat = np.asarray(h_hat, dtype=complex)
    g = np.abs(h_hat) ** 2
    den = g + N0
    if np.any(den == 0):
        raise EqualizerError("equalizer undefined for h_hat = 0 with N0 = 0")
    return EqualizedSymbol(y * np.conj(h_hat) / den, np.broadcast_to(g / den, np.shape(y)).copy())


def fading_link(x_data, cfg, N0, rng):
    """Block-fading transmission of data symbols with pilots and equalization.

    Data symbols (last axis) are packed ``cfg.data_per_block`` per block, each
    block led by ``cfg.n_p`` pilots. Returns ``(EqualizedSymbol, h, h_hat)``
    for the data positions only.
    """
    x_data = np.asarray(x_data, dtype=complex)
    lead, nd = x_data.shape[:-1], x_data.shape[-1]
    dpb = cfg.data_per_block
    n_blocks = -(-nd // dpb)
    padded = np.zeros(lead + (n_blocks * dpb,), dtype=complex)
    padded[..., :nd] = x_data
    blocks = padded.reshape(lead + (n_blocks, dpb))
    pilots = np.full(lead + (n_blocks, cfg.n_p), PILOT)
    stream = np.concatenate([pilots, blocks], axis=-1).reshape(lead + (-1,))
    y, h = rician_block_fading(stream, cfg, N0, rng)
    y = y.reshape(lead + (n_blocks, cfg.n_bf))
    h = h.reshape(lead + (n_blocks, cfg.n_bf))[..., 0]
    if cfg.csi == "perfect":
        h_hat = h
    else:
        h_hat = lmmse_estimate(y[..., :cfg.n_p], PILOT, N0)
    yd = y[..., cfg.n_p:]
    eq = lmmse_equalize(yd, h_hat[..., None], N0)
    flat = lead + (n_blocks * dpb,)
    hh = np.broadcast_to(h_hat[..., None], yd.shape).reshape(flat)[..., :nd]
    ht = np.broadcast_to(h[..., None], yd.shape).reshape(flat)[..., :nd]
    out = EqualizedSymbol(eq.y_eq.reshape(flat)[..., :nd], eq.rho.reshape(flat)[..., :nd])
    return out, ht, hh
