"""Power-line backbone link: CFR -> CIR -> delay spread, gain, SINR, BER, PDR."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DELTA_F_HZ = 200e3
F_MAX_HZ = 40e6
USABLE_BAND_HZ = (2e6, 40e6)
PACKET_BITS = 136

# reference operating point of the backbone link
TX_PSD_W_PER_HZ = 3.162e-12  # -55 dBm/Hz
NOISE_W_PER_HZ = 0.13  # integrated over 2-40 MHz
GAIN_DB = -34.36


class DegenerateChannelError(ValueError):
    """Impulse response carries no energy."""


class QMode(enum.Enum):
    GAUSSIAN = "gaussian"  # Q(x) = erfc(x / sqrt(2)) / 2
    ERFC = "erfc"  # Q read literally as erfc


class PdrMode(enum.Enum):
    PER_BIT = "per-bit"  # (1 - ber)^n
    PACKET = "packet"  # 1 - ber^n


@dataclass(frozen=True)
class Cfr:
    freqs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        h = np.asarray(self.values, dtype=complex)
        if f.ndim != 1 or f.shape != h.shape or len(f) == 0:
            raise ValueError("freqs and values must be equal-length 1-D arrays")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "values", h)

    @property
    def n(self) -> int:
        return len(self.freqs)

    @property
    def delta_f(self) -> float:
        if self.n < 2:
            return DELTA_F_HZ
        steps = np.diff(self.freqs)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-6):
            raise ValueError("CFR frequency grid is not uniform")
        return float(steps[0])

    @property
    def band(self) -> tuple[float, float]:
        return float(self.freqs[0]), float(self.freqs[-1] + self.delta_f)

    def restrict(self, f_min: float, f_max: float) -> "Cfr":
        m = (self.freqs >= f_min - 1e-6) & (self.freqs < f_max - 1e-6)
        return Cfr(self.freqs[m], self.values[m])


@dataclass(frozen=True)
class Cir:
    taps: np.ndarray
    tap_spacing: float

    @property
    def delays(self) -> np.ndarray:
        return np.arange(len(self.taps)) * self.tap_spacing


@dataclass(frozen=True)
class LognormalFit:
    mu: float
    sigma: float


@dataclass(frozen=True)
class PlcLink:
    gain: float
    gain_db: float
    tau_rms: float
    sinr: float
    ber: float
    pdr: float
    packet_bits: int = PACKET_BITS

    def to_dict(self) -> dict:
        return asdict(self)


def default_grid(f_max: float = F_MAX_HZ, delta_f: float = DELTA_F_HZ) -> np.ndarray:
    return np.arange(int(round(f_max / delta_f))) * delta_f


def cir_from_cfr(cfr: Cfr) -> Cir:
    """N-point inverse DFT of the CFR; taps spaced 1/(N delta_f) apart."""
    df = cfr.delta_f
    return Cir(np.fft.ifft(cfr.values), 1.0 / (cfr.n * df))


def power_delay_profile(cir: Cir) -> np.ndarray:
    power = np.abs(cir.taps) ** 2
    total = power.sum()
    if not total > 0 or not np.isfinite(total):
        raise DegenerateChannelError("impulse response has zero energy")
    return power / total


def rms_delay_spread(profile: np.ndarray, tap_spacing: float) -> float:
    tau = np.arange(len(profile)) * tap_spacing
    m1 = float(np.dot(tau, profile))
    m2 = float(np.dot(tau ** 2, profile))
    return math.sqrt(max(m2 - m1 * m1, 0.0))


def channel_gain(cfr: Cfr, band: tuple[float, float] | None = None) -> float:
    """Mean of |H|^2 over the CFR points (optionally only inside ``band``)."""
    if band is not None:
        cfr = cfr.restrict(*band)
    if cfr.n < 1:
        raise ValueError("no frequency points in band")
    return float(np.mean(np.abs(cfr.values) ** 2))


def to_db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else -math.inf


def noise_psd(f: float, delta_f: float = DELTA_F_HZ) -> float:
    """Colored background noise in dBm/Hz at grid frequency ``f`` (1/f^2 law)."""
    m = f / delta_f
    if abs(m - round(m)) > 1e-6 * max(1.0, abs(m)):
        raise ValueError(f"{f} Hz is not on the {delta_f} Hz grid")
    m = round(m)
    if m < 1:
        raise ValueError("noise PSD is singular at DC (m = 0)")
    return 10.0 * math.log10(1.0 / ((m * delta_f) ** 2 * 10 ** -15.5))


def sinr(gain: float, p_s: float, interference: float = 0.0, p_n: float = NOISE_W_PER_HZ) -> float:
    denom = interference + p_n
    if denom <= 0:
        raise ValueError("interference plus noise must be positive")
    return gain * p_s / denom


def q_function(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def ber_bpsk(sinr_value: float, q_mode: QMode | str = QMode.GAUSSIAN) -> float:
    if sinr_value < 0:
        raise ValueError("SINR must be non-negative")
    x = 2.0 * math.sqrt(sinr_value)
    if QMode(q_mode) is QMode.ERFC:
        return math.erfc(x)
    return q_function(x)


def pdr_plc(ber: float, n_bits: int = PACKET_BITS, mode: PdrMode | str = PdrMode.PER_BIT) -> float:
    if not 0.0 <= ber <= 1.0:
        raise ValueError("BER must be in [0, 1]")
    if n_bits < 1:
        raise ValueError("packets need at least one bit")
    if PdrMode(mode) is PdrMode.PACKET:
        return 1.0 - ber ** n_bits
    return (1.0 - ber) ** n_bits


def fit_lognormal(samples: Sequence[float]) -> LognormalFit:
    """Maximum-likelihood lognormal parameters (population std of the logs)."""
    x = np.asarray(samples, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two samples")
    if np.any(x <= 0):
        raise ValueError("lognormal fit needs strictly positive samples")
    logs = np.log(x)
    return LognormalFit(float(logs.mean()), float(logs.std(ddof=0)))


def synth_cfr(n_paths: int, max_delay: float, attenuation: str = "exponential", seed: int = 0,
              freqs: np.ndarray | None = None, delays: Sequence[float] | None = None,
              gains: Sequence[complex] | None = None) -> Cfr:
    """Multipath CFR H(f) = sum_k g_k exp(-j 2 pi f tau_k).

    The first path sits at zero delay; the rest are uniform on
    [0, max_delay].  ``attenuation`` is "flat" (unit gains) or "exponential"
    (gain decays with delay, decay constant max_delay / 3), both with random
    phase beyond the first path.  Explicit ``delays``/``gains`` override the
    random draws.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    rng = np.random.default_rng(seed)
    freqs = default_grid() if freqs is None else np.asarray(freqs, dtype=float)
    if delays is None:
        tau = np.sort(np.concatenate([[0.0], rng.uniform(0.0, max_delay, n_paths - 1)]))
    else:
        tau = np.asarray(delays, dtype=float)
    if gains is None:
        if attenuation == "flat":
            mag = np.ones(len(tau))
        elif attenuation == "exponential":
            scale = max_delay / 3.0 if max_delay > 0 else 1.0
            mag = np.exp(-tau / scale)
        else:
            raise ValueError(f"unknown attenuation profile {attenuation!r}")
        phase = np.concatenate([[0.0], rng.uniform(0, 2 * np.pi, len(tau) - 1)])
        g = mag * np.exp(1j * phase)
    else:
        g = np.asarray(gains, dtype=complex)
    if len(g) != len(tau):
        raise ValueError("one gain per delay required")
    h = np.exp(-2j * np.pi * np.outer(freqs, tau)) @ g
    return Cfr(freqs, h)


def analyze_link(cfr: Cfr, p_s: float = TX_PSD_W_PER_HZ, interference: float = 0.0,
                 p_n: float = NOISE_W_PER_HZ, n_bits: int = PACKET_BITS,
                 q_mode: QMode | str = QMode.GAUSSIAN, pdr_mode: PdrMode | str = PdrMode.PER_BIT,
                 band: tuple[float, float] | None = None) -> PlcLink:
    """Run the full chain on one CFR."""
    g = channel_gain(cfr, band)
    cir = cir_from_cfr(cfr)
    tau = rms_delay_spread(power_delay_profile(cir), cir.tap_spacing)
    s = sinr(g, p_s, interference, p_n)
    b = ber_bpsk(s, q_mode)
    return PlcLink(g, to_db(g), tau, s, b, pdr_plc(b, n_bits, pdr_mode), n_bits)


# --------------------------------------------------------------------------
# files


def read_cfr_csv(path: str | Path) -> Cfr:
    """Read ``freq_hz,re,im`` CSV (lines starting with '#' are ignored)."""
    freqs, re, im = [], [], []
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows, None)
        if header is None or [h.strip() for h in header] != ["freq_hz", "re", "im"]:
            raise ValueError(f"{path}: expected header freq_hz,re,im, got {header}")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            try:
                freqs.append(float(row[0]))
                re.append(float(row[1]))
                im.append(float(row[2]))
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad row {row}") from exc
    return Cfr(np.array(freqs), np.array(re) + 1j * np.array(im))


def write_cfr_csv(cfr: Cfr, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz", "re", "im"])
        for f, h in zip(cfr.freqs, cfr.values):
            w.writerow([repr(float(f)), repr(float(h.real)), repr(float(h.imag))])


def fixture_metadata(path: str | Path) -> dict:
    """Sidecar ``<name>.meta.json`` next to a CFR fixture, or {}."""
    meta = Path(path).with_suffix(".meta.json")
    if not meta.exists():
        return {}
    return json.loads(meta.read_text())


DATA_DIR = Path(__file__).parent / "data"
FIXTURES = {
    "measured": DATA_DIR / "cfr_measured_gain.csv",
    "switching": DATA_DIR / "cfr_switching_load.csv",
    "resistive": DATA_DIR / "cfr_resistive_load.csv",
}
