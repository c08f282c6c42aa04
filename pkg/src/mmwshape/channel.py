"""MIMO-OFDM channel tensor synthesis, AWGN injection, and Hamming windowing.

The channel is an Nr x Nt x Nc complex tensor. For a path with delay tau,
AoA phi, AoD varphi and gain beta the element (nr, nt, nc) receives

    beta * exp(-j 2 pi (f0 - Nc/2 * df) tau) * exp(-j 2 pi nc df tau)
         * exp(-j 2 pi nt d/lambda sin(varphi)) * exp(+j 2 pi nr d/lambda sin(phi))

summed over paths. Noise is i.i.d. circular complex Gaussian calibrated
against the mean element power: sigma^2 = mean(|H|^2) * 10^(-snr_db/10).
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .scene import SystemConfig

NO_NOISE = math.inf  # snr_db sentinel: skip noise injection entirely


class AllZeroChannel(ValueError):
    """SNR is undefined for an all-zero channel tensor."""


@dataclass(frozen=True)
class ChannelTensor:
    h: np.ndarray  # complex, shape (n_rx, n_tx, n_subcarriers)
    system: SystemConfig
    windowed: bool = False

    def __post_init__(self):
        expected = (self.system.n_rx, self.system.n_tx, self.system.n_subcarriers)
        if self.h.shape != expected:
            raise ValueError(f"tensor shape {self.h.shape} != {expected}")


@dataclass(frozen=True)
class Window3D:
    """Separable 3-D taper: w[r, t, c] = wr[r] * wt[t] * wc[c]."""

    wr: np.ndarray
    wt: np.ndarray
    wc: np.ndarray

    @property
    def tensor(self) -> np.ndarray:
        return self.wr[:, None, None] * self.wt[None, :, None] * self.wc[None, None, :]


def hamming_window(system: SystemConfig) -> Window3D:
    return Window3D(wr=np.hamming(system.n_rx),
                    wt=np.hamming(system.n_tx),
                    wc=np.hamming(system.n_subcarriers))


def synthesize(paths, system: SystemConfig) -> ChannelTensor:
    """Superpose path contributions into the channel tensor.

    An empty path list yields the all-zero tensor.
    """
    n_rx, n_tx, n_c = system.n_rx, system.n_tx, system.n_subcarriers
    h = np.zeros((n_rx, n_tx, n_c), dtype=complex)
    if not paths:
        return ChannelTensor(h=h, system=system)
    d_lam = system.spacing / system.wavelength
    nr = np.arange(n_rx)
    nt = np.arange(n_tx)
    nc = np.arange(n_c)
    betas = np.empty(len(paths), dtype=complex)
    rx_steer = np.empty((n_rx, len(paths)), dtype=complex)
    tx_steer = np.empty((n_tx, len(paths)), dtype=complex)
    sc_steer = np.empty((n_c, len(paths)), dtype=complex)
    f_offset = system.f0 - 0.5 * n_c * system.delta_f
    for p, path in enumerate(paths):
        betas[p] = path.beta * np.exp(-2j * np.pi * f_offset * path.tau)
        rx_steer[:, p] = np.exp(2j * np.pi * nr * d_lam * np.sin(path.aoa))
        tx_steer[:, p] = np.exp(-2j * np.pi * nt * d_lam * np.sin(path.aod))
        sc_steer[:, p] = np.exp(-2j * np.pi * nc * system.delta_f * path.tau)
    h = np.einsum("p,rp,tp,cp->rtc", betas, rx_steer, tx_steer, sc_steer,
                  optimize=True)
    return ChannelTensor(h=h, system=system)


def add_noise(ct: ChannelTensor, snr_db: float, rng_seed: int) -> ChannelTensor:
    """Add circular complex AWGN at the given element-level SNR.

    Deterministic for a fixed rng_seed. snr_db = NO_NOISE returns the input
    unchanged.
    """
    if snr_db == NO_NOISE:
        return ct
    mean_power = float(np.mean(np.abs(ct.h) ** 2))
    if mean_power == 0.0:
        raise AllZeroChannel("cannot set an SNR against a zero channel")
    sigma2 = mean_power * 10.0 ** (-snr_db / 10.0)
    rng = np.random.default_rng(rng_seed)
    shape = ct.h.shape
    noise = np.sqrt(sigma2 / 2.0) * (rng.standard_normal(shape)
                                     + 1j * rng.standard_normal(shape))
    return ChannelTensor(h=ct.h + noise, system=ct.system, windowed=ct.windowed)


def apply_window(ct: ChannelTensor) -> ChannelTensor:
    """Multiply by the separable 3-D Hamming taper.

    Windowing is not idempotent, so windowed tensors are marked and windowing
    one twice is an error.
    """
    if ct.windowed:
        raise ValueError("tensor is already windowed")
    w = hamming_window(ct.system)
    return ChannelTensor(h=ct.h * w.tensor, system=ct.system, windowed=True)


# Binary dump format: 8-byte header of four little-endian uint16 values
# (n_rx, n_tx, n_subcarriers, 0), then complex64 values in C order.

def save_tensor(ct: ChannelTensor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4H", ct.system.n_rx, ct.system.n_tx,
                             ct.system.n_subcarriers, 0))
        fh.write(ct.h.astype("<c8").tobytes(order="C"))


def load_tensor_array(path) -> np.ndarray:
    """Read back a dumped tensor as a complex64 array (no SystemConfig)."""
    with open(path, "rb") as fh:
        n_rx, n_tx, n_c, _ = struct.unpack("<4H", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<c8")
    return data.reshape(n_rx, n_tx, n_c)
