#!/usr/bin/env python3
"""
Channel module for the IAB lab.
Link-level math: LoS probability, path loss, Nakagami-m fading, noise and Shannon rate.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]


class ChannelError(ValueError):
    """Custom exception for channel domain errors."""
    pass


@dataclass(frozen=True)
class ChannelParams:
    """
    Propagation constants shared by every link in a scenario.

    Attributes:
        los_range_constant_rho: LoS range constant in meters (P_LoS = exp(-d/rho))
        pathloss_exponent_los: Log-distance exponent for LoS links
        pathloss_exponent_nlos: Log-distance exponent for NLoS links
        reference_loss_db: Path loss at 1 m in dB
        nakagami_shape_m: Nakagami shape for LoS links
        nakagami_shape_nlos: Nakagami shape for NLoS links (1 = Rayleigh)
        noise_density_dbm_per_hz: Thermal noise density
        noise_figure_db: Receiver noise figure
        min_distance: Distance clamp in meters
    """
    los_range_constant_rho: float = 150.0
    pathloss_exponent_los: float = 2.0
    pathloss_exponent_nlos: float = 3.5
    reference_loss_db: float = 30.0
    nakagami_shape_m: float = 3.0
    nakagami_shape_nlos: float = 1.0
    noise_density_dbm_per_hz: float = -174.0
    noise_figure_db: float = 7.0
    min_distance: float = 1.0

    def __post_init__(self):
        if not self.los_range_constant_rho > 0:
            raise ChannelError(f"los_range_constant_rho must be > 0, got {self.los_range_constant_rho}")
        if self.nakagami_shape_m < 0.5:
            raise ChannelError(f"nakagami_shape_m must be >= 0.5, got {self.nakagami_shape_m}")
        if self.nakagami_shape_nlos < 0.5:
            raise ChannelError(f"nakagami_shape_nlos must be >= 0.5, got {self.nakagami_shape_nlos}")
        if self.pathloss_exponent_nlos < self.pathloss_exponent_los:
            raise ChannelError(
                f"pathloss_exponent_nlos ({self.pathloss_exponent_nlos}) must be >= "
                f"pathloss_exponent_los ({self.pathloss_exponent_los})")
        if not self.min_distance > 0:
            raise ChannelError(f"min_distance must be > 0, got {self.min_distance}")


@dataclass(frozen=True)
class LinkGain:
    """Gain of one link split into its large-scale and small-scale parts."""
    large_scale_gain_linear: float
    fading_gain_linear: float
    is_los: bool

    @property
    def combined(self) -> float:
        return self.large_scale_gain_linear * self.fading_gain_linear


@dataclass
class ChannelSnapshot:
    """
    Per-slot channel state of the whole network.

    Backhaul arrays are indexed [i, m, n]: MBS i transmitting to SBS n of MBS m.
    Access arrays are indexed [i, m, n, k]: SBS n of MBS i transmitting to user k
    of SBS (m, n). Entries with i != m are interference gains.
    """
    backhaul_large_scale: np.ndarray
    backhaul_fading: np.ndarray
    backhaul_los: np.ndarray
    access_large_scale: np.ndarray
    access_fading: np.ndarray
    access_los: np.ndarray

    @property
    def backhaul_gain(self) -> np.ndarray:
        return self.backhaul_large_scale * self.backhaul_fading

    @property
    def access_gain(self) -> np.ndarray:
        return self.access_large_scale * self.access_fading

    def backhaul_link(self, i: int, m: int, n: int) -> LinkGain:
        return LinkGain(float(self.backhaul_large_scale[i, m, n]),
                        float(self.backhaul_fading[i, m, n]),
                        bool(self.backhaul_los[i, m, n]))

    def access_link(self, i: int, m: int, n: int, k: int) -> LinkGain:
        return LinkGain(float(self.access_large_scale[i, m, n, k]),
                        float(self.access_fading[i, m, n, k]),
                        bool(self.access_los[i, m, n, k]))

    @property
    def shape(self) -> Tuple[int, int, int]:
        """(M, N, K) of the network this snapshot describes."""
        _, m, n, k = self.access_large_scale.shape
        return m, n, k


def los_probability(d: ArrayLike, rho: float) -> ArrayLike:
    """
    Probability of a LoS connection at distance d.

    Args:
        d: Distance(s) in meters, >= 0
        rho: LoS range constant in meters, > 0

    Returns:
        exp(-d / rho), same shape as d

    Raises:
        ChannelError: If d < 0 or rho <= 0
    """
    if not rho > 0:
        raise ChannelError(f"rho must be > 0, got {rho}")
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < 0):
        raise ChannelError(f"distance must be >= 0, got {d}")
    result = np.exp(-d_arr / rho)
    return float(result) if result.ndim == 0 else result


def path_loss_gain(d: ArrayLike, is_los: Union[bool, np.ndarray], params: ChannelParams) -> ArrayLike:
    """
    Large-scale power gain of the log-distance model.

    gain_db = -(reference_loss_db + 10 * exponent * log10(d)), exponent picked by
    the LoS flag; distances below params.min_distance are clamped.
    """
    d_arr = np.maximum(np.asarray(d, dtype=float), params.min_distance)
    exponent = np.where(is_los, params.pathloss_exponent_los, params.pathloss_exponent_nlos)
    gain_db = -(params.reference_loss_db + 10.0 * exponent * np.log10(d_arr))
    result = np.power(10.0, gain_db / 10.0)
    return float(result) if result.ndim == 0 else result


def sample_nakagami_power(shape_m: ArrayLike, mean_omega: float, rng: np.random.Generator,
                          size: Optional[Union[int, Tuple[int, ...]]] = None) -> ArrayLike:
    """
    Draw squared-envelope Nakagami-m gains.

    The power gain is Gamma(shape=m, scale=omega/m): mean omega, variance omega^2/m.

    Args:
        shape_m: Nakagami shape (scalar or array), >= 0.5
        mean_omega: Mean power, > 0
        rng: Random generator owned by the caller
        size: Optional output shape

    Raises:
        ChannelError: On invalid parameters
    """
    shape_arr = np.asarray(shape_m, dtype=float)
    if np.any(shape_arr < 0.5):
        raise ChannelError(f"Nakagami shape must be >= 0.5, got {shape_m}")
    if not mean_omega > 0:
        raise ChannelError(f"mean_omega must be > 0, got {mean_omega}")
    draws = rng.gamma(shape_arr, mean_omega / shape_arr, size=size)
    return float(draws) if np.ndim(draws) == 0 else draws


def shannon_rate(bandwidth_hz: ArrayLike, signal_w: ArrayLike, interference_w: ArrayLike,
                 noise_w: ArrayLike) -> ArrayLike:
    """
    Shannon rate B * log2(1 + S / (I + N)) in bits/s.

    Raises:
        ChannelError: On negative inputs or non-positive noise
    """
    b = np.asarray(bandwidth_hz, dtype=float)
    s = np.asarray(signal_w, dtype=float)
    i = np.asarray(interference_w, dtype=float)
    n = np.asarray(noise_w, dtype=float)
    if np.any(b < 0) or np.any(s < 0) or np.any(i < 0):
        raise ChannelError("bandwidth, signal and interference must be >= 0")
    if np.any(n <= 0):
        raise ChannelError(f"noise must be > 0, got {noise_w}")
    result = b * np.log2(1.0 + s / (i + n))
    return float(result) if result.ndim == 0 else result


def dbm_to_watts(p_dbm: ArrayLike) -> ArrayLike:
    result = np.power(10.0, (np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)
    return float(result) if result.ndim == 0 else result


def watts_to_dbm(p_w: float) -> float:
    if not p_w > 0:
        raise ChannelError(f"power must be > 0 to express in dBm, got {p_w}")
    return 10.0 * math.log10(p_w) + 30.0


def linear_to_db(ratio: float) -> float:
    if not ratio > 0:
        raise ChannelError(f"ratio must be > 0 to express in dB, got {ratio}")
    return 10.0 * math.log10(ratio)


def noise_power_watts(bandwidth_hz: float, params: ChannelParams) -> float:
    """Thermal noise plus noise figure over the given bandwidth."""
    if not bandwidth_hz > 0:
        raise ChannelError(f"bandwidth must be > 0 for a noise power, got {bandwidth_hz}")
    noise_dbm = params.noise_density_dbm_per_hz + params.noise_figure_db + 10.0 * math.log10(bandwidth_hz)
    return dbm_to_watts(noise_dbm)


def sample_snapshot(backhaul_large_scale: np.ndarray, backhaul_los: np.ndarray,
                    access_large_scale: np.ndarray, access_los: np.ndarray,
                    params: ChannelParams, rng: np.random.Generator,
                    frozen: bool = False) -> ChannelSnapshot:
    """
    Draw one slot of unit-mean Nakagami fading on top of the given large-scale gains.

    Args:
        frozen: If True, every fading gain is exactly 1 (no random draws)
    """
    if frozen:
        backhaul_fading = np.ones_like(backhaul_large_scale)
        access_fading = np.ones_like(access_large_scale)
    else:
        backhaul_shape = np.where(backhaul_los, params.nakagami_shape_m, params.nakagami_shape_nlos)
        access_shape = np.where(access_los, params.nakagami_shape_m, params.nakagami_shape_nlos)
        backhaul_fading = sample_nakagami_power(backhaul_shape, 1.0, rng)
        access_fading = sample_nakagami_power(access_shape, 1.0, rng)
    return ChannelSnapshot(
        backhaul_large_scale=backhaul_large_scale.copy(),
        backhaul_fading=np.asarray(backhaul_fading, dtype=float),
        backhaul_los=backhaul_los.copy(),
        access_large_scale=access_large_scale.copy(),
        access_fading=np.asarray(access_fading, dtype=float),
        access_los=access_los.copy(),
    )
