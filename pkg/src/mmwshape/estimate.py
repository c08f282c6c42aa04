"""Detection stack: FFT periodograms, CA-CFAR, MUSIC, covariance slices.

Transform conventions. The channel tensor is mapped to the AoA/AoD/delay
domains by a forward DFT over receive antennas and unnormalized inverse DFTs
over transmit antennas and subcarriers:

    F[i_phi, i_varphi, i_tau] = sum_{nr,nt,nc} H[nr,nt,nc]
        * exp(-j 2 pi nr (i_phi - Nr/2) / Nr)
        * exp(+j 2 pi nt (i_varphi - Nt/2) / Nt)
        * exp(+j 2 pi nc i_tau / Nc)

so the antenna axes carry a half-band shift (bin N/2 is boresight) and the
delay axis starts at zero. Bin inversions:

    aoa  = arcsin(lambda/d * (i_phi/Nr - 1/2))
    aod  = arcsin(lambda/d * (i_varphi/Nt - 1/2))
    tau  = i_tau / B

MUSIC frequencies map as omega = +2 pi d/lambda sin(aoa) in the rx domain,
omega = -2 pi d/lambda sin(aod) in the tx domain and omega = -2 pi df tau in
the subcarrier domain.

Windowed tensors feed every periodogram/CFAR step; covariances and MUSIC
always use the raw tensor (tapering biases subspace estimates).
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .channel import ChannelTensor, apply_window
from .scene import SystemConfig


class WindowTooLarge(ValueError):
    pass


class IndexOutOfVisibleRange(ValueError):
    pass


class RankDeficient(RuntimeError):
    """Covariance has fewer significant eigenvalues than requested sources."""


@dataclass(frozen=True)
class Periodogram:
    values: np.ndarray  # real, non-negative
    axes: tuple  # axis names, e.g. ('aoa', 'aod')


@dataclass(frozen=True)
class DetectionMap:
    values: np.ndarray  # uint8 in {0, 1}, one entry per AoA bin


@dataclass(frozen=True)
class CovarianceMatrix:
    m: np.ndarray
    domain: str  # 'rx-antenna' | 'tx-antenna' | 'subcarrier'

    def check(self, hermitian_tol=1e-10, psd_tol=1e-8):
        """Assert Hermitian symmetry and positive semidefiniteness."""
        m = self.m
        scale = float(np.abs(m).max()) or 1.0
        if np.abs(m - m.conj().T).max() > hermitian_tol * scale:
            raise ValueError(f"{self.domain} covariance is not Hermitian")
        evals = np.linalg.eigvalsh(m)
        floor = -psd_tol * max(np.trace(m).real, 0.0) / m.shape[0]
        if evals.min() < floor:
            raise ValueError(f"{self.domain} covariance is not PSD")


@dataclass(frozen=True)
class PathEstimate:
    """Estimated path parameters; aod for dual-BS, tau for single-BS,
    all three for reflections."""

    kind: str  # 'scatter' | 'reflect'
    aoa: float
    aod: float | None = None
    tau: float | None = None
    method: str = "periodogram"  # 'periodogram' | 'music'
    fallback: bool = False  # MUSIC rank fallback to periodogram


@dataclass(frozen=True)
class CfarConfig:
    n_train: int = 16  # training cells per side
    n_guard: int = 4  # guard cells per side
    pfa: float = 1e-3

    @property
    def alpha(self) -> float:
        t = 2 * self.n_train
        return t * (self.pfa ** (-1.0 / t) - 1.0)


@dataclass(frozen=True)
class EstimatorConfig:
    cfar: CfarConfig = field(default_factory=CfarConfig)
    music_grid: int = 4096
    music_tol: float = 1e-6  # golden-section width, radians
    aoa_refine: bool = True  # MUSIC AoA refinement around each CFAR hit
    refine_halfwidth: int = 2  # bins kept by the refinement projector
    refl_median_ratio: float = 1e3  # peak-to-median presence threshold
    refl_peak_ratio: float = 10.0  # peak must dominate the runner-up peak
    refl_guard: int = 3  # bins excluded around the peak per axis


# ---------------------------------------------------------------------------
# domain transforms and periodograms
# ---------------------------------------------------------------------------

def _rx_forward(h: np.ndarray) -> np.ndarray:
    n = h.shape[0]
    return np.roll(np.fft.fft(h, axis=0), n // 2, axis=0)


def _tx_inverse(h: np.ndarray) -> np.ndarray:
    n = h.shape[1]
    return np.roll(n * np.fft.ifft(h, axis=1), n // 2, axis=1)


def _sc_inverse(h: np.ndarray) -> np.ndarray:
    return h.shape[2] * np.fft.ifft(h, axis=2)


def periodogram_3d(ct: ChannelTensor) -> Periodogram:
    """Full AoA x AoD x delay periodogram |F|^2."""
    f = _sc_inverse(_tx_inverse(_rx_forward(ct.h)))
    return Periodogram(values=np.abs(f) ** 2, axes=("aoa", "aod", "delay"))


def aoa_periodogram(ct: ChannelTensor) -> Periodogram:
    """AoA-domain periodogram: rx transform, power averaged over (nt, nc)."""
    g = _rx_forward(ct.h)
    return Periodogram(values=np.mean(np.abs(g) ** 2, axis=(1, 2)), axes=("aoa",))


def aoa_aod_periodogram(ct: ChannelTensor) -> Periodogram:
    g = _tx_inverse(_rx_forward(ct.h))
    return Periodogram(values=np.mean(np.abs(g) ** 2, axis=2), axes=("aoa", "aod"))


def aoa_delay_periodogram(ct: ChannelTensor) -> Periodogram:
    g = _sc_inverse(_rx_forward(ct.h))
    return Periodogram(values=np.mean(np.abs(g) ** 2, axis=1), axes=("aoa", "delay"))


# ---------------------------------------------------------------------------
# bin/frequency inversions
# ---------------------------------------------------------------------------

def angle_from_bin(i: float, n_bins: int, system: SystemConfig) -> float:
    arg = system.wavelength / system.spacing * (i / n_bins - 0.5)
    if abs(arg) > 1.0:
        raise IndexOutOfVisibleRange(f"bin {i} maps outside the visible region")
    return float(np.arcsin(arg))


def delay_from_bin(i: float, system: SystemConfig) -> float:
    return float(i / system.bandwidth)


def index_to_params(i_phi: int, i_varphi: int, i_tau: int,
                    system: SystemConfig) -> tuple:
    """(aoa, aod, tau) for a 3-D periodogram index triple."""
    return (angle_from_bin(i_phi, system.n_rx, system),
            angle_from_bin(i_varphi, system.n_tx, system),
            delay_from_bin(i_tau, system))


def angle_from_omega(omega: float, system: SystemConfig, sign: int = 1) -> float:
    arg = sign * omega * system.wavelength / (2.0 * np.pi * system.spacing)
    if abs(arg) > 1.0 + 1e-9:
        raise IndexOutOfVisibleRange("frequency maps outside the visible region")
    return float(np.arcsin(np.clip(arg, -1.0, 1.0)))


def delay_from_omega(omega: float, system: SystemConfig) -> float:
    """Invert omega = -2 pi df tau onto [0, Nc/B), folding wrap-around noise."""
    tau = ((-omega) % (2.0 * np.pi)) / (2.0 * np.pi * system.delta_f)
    span = system.n_subcarriers / system.bandwidth
    if tau > span - 0.5 / system.bandwidth:
        tau -= span  # a hair past the wrap point: fold back toward zero
    return max(tau, 0.0)


# ---------------------------------------------------------------------------
# CFAR
# ---------------------------------------------------------------------------

def cfar_1d(s: Periodogram | np.ndarray, cfg: CfarConfig = CfarConfig()) -> DetectionMap:
    """Cell-averaging CFAR with circular wrap on a 1-D spectrum."""
    values = np.asarray(getattr(s, "values", s), dtype=float)
    if values.ndim != 1:
        raise ValueError("cfar_1d expects a 1-D spectrum")
    half = cfg.n_train + cfg.n_guard
    span = 2 * half + 1
    if span > values.size:
        raise WindowTooLarge(f"CFAR window {span} exceeds spectrum length {values.size}")
    weights = np.zeros(span)
    weights[:cfg.n_train] = 1.0
    weights[-cfg.n_train:] = 1.0
    weights /= 2.0 * cfg.n_train
    noise = ndimage.correlate1d(values, weights, mode="wrap")
    det = (values > cfg.alpha * noise).astype(np.uint8)
    return DetectionMap(values=det)


def rowwise_peak(s2d: Periodogram, det: DetectionMap) -> list:
    """argmax along the second axis for every detected AoA row.

    Ties break toward the lowest index.
    """
    values = s2d.values
    return [(int(i), int(np.argmax(values[i])))
            for i in np.flatnonzero(det.values)]


# ---------------------------------------------------------------------------
# MUSIC
# ---------------------------------------------------------------------------

def _golden_min(f, lo: float, hi: float, tol: float) -> float:
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


_steering_cache: dict = {}


def _grid_steering(m: int, grid: int) -> tuple:
    """Cached (omegas, steering matrix) for the coarse MUSIC grid."""
    key = (m, grid)
    if key not in _steering_cache:
        omegas = -np.pi + 2.0 * np.pi * np.arange(grid) / grid
        _steering_cache[key] = (omegas, np.exp(1j * np.outer(np.arange(m), omegas)))
    return _steering_cache[key]


def music_1d(r, k: int, grid: int = 4096, tol: float = 1e-6,
             omega_range: tuple | None = None) -> list:
    """Frequencies of the k strongest MUSIC pseudo-spectrum peaks.

    r is an M x M Hermitian PSD covariance (array or CovarianceMatrix) for the
    model a(omega) = [1, e^{j omega}, ..., e^{j (M-1) omega}]. The coarse grid
    spans [-pi, pi) (optionally restricted) and each peak is refined by
    golden-section search down to `tol` radians. Raises RankDeficient when the
    covariance has fewer than k significant eigenvalues.
    """
    m_mat = np.asarray(getattr(r, "m", r))
    m = m_mat.shape[0]
    if k >= m:
        raise ValueError("need k < M")
    evals, evecs = np.linalg.eigh(m_mat)
    top = max(float(evals[-1]), 0.0)
    if int(np.sum(evals > 1e-9 * top)) < k or top == 0.0:
        raise RankDeficient(f"fewer than {k} significant eigenvalues")
    un = evecs[:, : m - k]

    omegas, steer = _grid_steering(m, grid)
    circular = omega_range is None
    if not circular:
        lo, hi = omega_range
        keep = (omegas >= lo) & (omegas <= hi)
        if not keep.any():
            raise ValueError("empty omega range")
        omegas = omegas[keep]
        steer = steer[:, keep]

    den = np.sum(np.abs(un.conj().T @ steer) ** 2, axis=0)

    def noise_power(w: float) -> float:
        a = np.exp(1j * np.arange(m) * w)
        return float(np.sum(np.abs(un.conj().T @ a) ** 2))

    n = den.size
    if circular:
        minima = np.flatnonzero((den < np.roll(den, 1)) & (den < np.roll(den, -1)))
    else:
        interior = (den[1:-1] < den[:-2]) & (den[1:-1] < den[2:])
        minima = np.flatnonzero(interior) + 1
        if minima.size == 0:
            minima = np.array([int(np.argmin(den))])
    order = minima[np.argsort(den[minima])][:k]

    step = 2.0 * np.pi / grid
    out = []
    for idx in order:
        lo_b = omegas[idx] - step if (circular or idx > 0) else omegas[idx]
        hi_b = omegas[idx] + step if (circular or idx < n - 1) else omegas[idx]
        out.append(_golden_min(noise_power, lo_b, hi_b, tol))
    return out


# ---------------------------------------------------------------------------
# covariances
# ---------------------------------------------------------------------------

def aoa_slice_covariances(ct: ChannelTensor, i_phi: int):
    """Per-AoA covariance pair (tx-antenna, subcarrier) from the raw tensor.

    H_phi is the Nt x Nc slice of the rx-transformed tensor at i_phi; the
    covariances are H_phi H_phi^H / Nt and H_phi^T H_phi^* / Nc (the stated
    normalizations; MUSIC is scale-invariant either way).
    """
    h_phi = _rx_forward(ct.h)[i_phi]
    rt = h_phi @ h_phi.conj().T / ct.system.n_tx
    rc = h_phi.T @ h_phi.conj() / ct.system.n_subcarriers
    return (CovarianceMatrix(m=rt, domain="tx-antenna"),
            CovarianceMatrix(m=rc, domain="subcarrier"))


def full_domain_covariances(ct: ChannelTensor):
    """Receive-antenna, transmit-antenna and subcarrier covariances of the
    raw tensor, averaged over all snapshots of the other two axes."""
    h = ct.h
    n_rx, n_tx, n_c = h.shape
    hr = h.reshape(n_rx, -1)
    ht = h.transpose(1, 0, 2).reshape(n_tx, -1)
    hc = h.transpose(2, 0, 1).reshape(n_c, -1)
    return (CovarianceMatrix(m=hr @ hr.conj().T / (n_tx * n_c), domain="rx-antenna"),
            CovarianceMatrix(m=ht @ ht.conj().T / (n_rx * n_c), domain="tx-antenna"),
            CovarianceMatrix(m=hc @ hc.conj().T / (n_rx * n_tx), domain="subcarrier"))


def _rx_covariance(h: np.ndarray) -> np.ndarray:
    hr = h.reshape(h.shape[0], -1)
    return hr @ hr.conj().T / hr.shape[1]


def _refine_aoa(rr: np.ndarray, i_bin: int, system: SystemConfig,
                cfg: EstimatorConfig) -> float:
    """MUSIC AoA inside a +/- refine_halfwidth bin window around a CFAR hit.

    The rx covariance is projected onto the span of the window's DFT steering
    vectors to suppress sources in other bins, and the grid search is
    restricted to the window's frequency range.
    """
    n_rx = rr.shape[0]
    w = cfg.refine_halfwidth
    bins = np.arange(i_bin - w, i_bin + w + 1)
    basis = np.exp(2j * np.pi * np.outer(np.arange(n_rx), bins - n_rx / 2) / n_rx)
    proj = basis @ basis.conj().T / n_rx
    rp = proj @ rr @ proj
    lo = 2.0 * np.pi * (i_bin - w - 0.5 - n_rx / 2) / n_rx
    hi = 2.0 * np.pi * (i_bin + w + 0.5 - n_rx / 2) / n_rx
    omega = music_1d(rp, 1, grid=cfg.music_grid, tol=cfg.music_tol,
                     omega_range=(max(lo, -np.pi), min(hi, np.pi)))[0]
    return angle_from_omega(omega, system, sign=1)


# ---------------------------------------------------------------------------
# detection pipelines
# ---------------------------------------------------------------------------

def detect_scatter_points(ct: ChannelTensor, mode: str, method: str,
                          cfg: EstimatorConfig | None = None) -> list:
    """CFAR on the AoA spectrum, then one (AoA, AoD) or (AoA, delay) estimate
    per detected AoA bin.

    mode is 'dual' (AoD from the bistatic pair) or 'single' (delay,
    monostatic); method is 'periodogram' (bin-center readout) or 'music'
    (subspace refinement on raw-tensor covariance slices). Pass the raw,
    unwindowed tensor; windowing for the periodogram steps happens here.
    """
    if ct.windowed:
        raise ValueError("detect_scatter_points needs the raw tensor")
    if mode not in ("single", "dual"):
        raise ValueError(f"unknown mode {mode!r}")
    if method not in ("periodogram", "music"):
        raise ValueError(f"unknown method {method!r}")
    cfg = cfg or EstimatorConfig()
    system = ct.system

    win = apply_window(ct)
    det = cfar_1d(aoa_periodogram(win), cfg.cfar)
    hit_bins = np.flatnonzero(det.values)
    if hit_bins.size == 0:
        return []

    s2d = aoa_aod_periodogram(win) if mode == "dual" else aoa_delay_periodogram(win)
    peak_by_bin = dict(rowwise_peak(s2d, det))

    rr = _rx_covariance(ct.h) if (method == "music" and cfg.aoa_refine) else None
    g_raw = _rx_forward(ct.h) if method == "music" else None

    results = []
    for i in hit_bins:
        i = int(i)
        try:
            bin_aoa = angle_from_bin(i, system.n_rx, system)
        except IndexOutOfVisibleRange:
            continue
        if abs(bin_aoa) >= np.pi / 2:
            continue
        j = peak_by_bin[i]
        fallback = False

        if method == "periodogram":
            aoa = bin_aoa
            if mode == "dual":
                try:
                    aod = angle_from_bin(j, system.n_tx, system)
                except IndexOutOfVisibleRange:
                    continue
                results.append(PathEstimate(kind="scatter", aoa=aoa, aod=aod,
                                            method="periodogram"))
            else:
                results.append(PathEstimate(kind="scatter", aoa=aoa,
                                            tau=delay_from_bin(j, system),
                                            method="periodogram"))
            continue

        # MUSIC: covariance slice at this AoA bin, k = 1
        h_phi = g_raw[i]
        rt = CovarianceMatrix(m=h_phi @ h_phi.conj().T / system.n_tx,
                              domain="tx-antenna")
        rc = CovarianceMatrix(m=h_phi.T @ h_phi.conj() / system.n_subcarriers,
                              domain="subcarrier")
        try:
            if mode == "dual":
                omega = music_1d(rt, 1, grid=cfg.music_grid, tol=cfg.music_tol)[0]
                second = ("aod", angle_from_omega(omega, system, sign=-1))
            else:
                omega = music_1d(rc, 1, grid=cfg.music_grid, tol=cfg.music_tol)[0]
                second = ("tau", delay_from_omega(omega, system))
        except RankDeficient:
            fallback = True
            try:
                second = (("aod", angle_from_bin(j, system.n_tx, system))
                          if mode == "dual" else ("tau", delay_from_bin(j, system)))
            except IndexOutOfVisibleRange:
                continue
        except IndexOutOfVisibleRange:
            continue

        aoa = bin_aoa
        if cfg.aoa_refine and not fallback:
            try:
                aoa = _refine_aoa(rr, i, system, cfg)
            except (RankDeficient, IndexOutOfVisibleRange):
                pass  # keep the bin-center angle
        results.append(PathEstimate(kind="scatter", aoa=aoa, method="music",
                                    fallback=fallback, **dict([second])))
    return results


def detect_reflection(ct: ChannelTensor,
                      cfg: EstimatorConfig | None = None) -> PathEstimate | None:
    """Detect the (at most one) specular path and estimate (aoa, aod, tau).

    Presence needs the global periodogram peak to stand clear of the noise
    floor (peak > refl_median_ratio * median) and to dominate the strongest
    peak outside its own mainlobe neighborhood by refl_peak_ratio; scattering
    ridges fail the second test. Estimation runs MUSIC with one source on the
    three full-domain covariances of the raw tensor.
    """
    if ct.windowed:
        raise ValueError("detect_reflection needs the raw tensor")
    cfg = cfg or EstimatorConfig()
    s3 = periodogram_3d(apply_window(ct)).values
    peak = float(s3.max())
    if peak <= 0.0:
        return None
    if peak <= cfg.refl_median_ratio * float(np.median(s3)):
        return None

    idx = np.unravel_index(int(np.argmax(s3)), s3.shape)
    mask = np.ones(s3.shape, dtype=bool)
    g = cfg.refl_guard
    box = [(np.arange(i - g, i + g + 1) % n) for i, n in zip(idx, s3.shape)]
    mask[np.ix_(*box)] = False
    runner_up = float(s3[mask].max()) if mask.any() else 0.0
    if peak <= cfg.refl_peak_ratio * runner_up:
        return None

    rr, rt, rc = full_domain_covariances(ct)
    system = ct.system
    try:
        w_r = music_1d(rr, 1, grid=cfg.music_grid, tol=cfg.music_tol)[0]
        w_t = music_1d(rt, 1, grid=cfg.music_grid, tol=cfg.music_tol)[0]
        w_c = music_1d(rc, 1, grid=cfg.music_grid, tol=cfg.music_tol)[0]
        return PathEstimate(kind="reflect",
                            aoa=angle_from_omega(w_r, system, sign=1),
                            aod=angle_from_omega(w_t, system, sign=-1),
                            tau=delay_from_omega(w_c, system),
                            method="music")
    except (RankDeficient, IndexOutOfVisibleRange):
        return None


def dump_periodogram_csv(s: Periodogram, path) -> None:
    """Write a periodogram as CSV rows of bin indices plus the value."""
    values = s.values
    header = ",".join(f"i_{name}" for name in s.axes) + ",value\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header)
        for idx in np.ndindex(values.shape):
            cells = ",".join(str(i) for i in idx)
            fh.write(f"{cells},{values[idx]:.12g}\n")
