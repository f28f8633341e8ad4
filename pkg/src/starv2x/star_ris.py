"""STAR-RIS configuration: amplitudes, quantized phases, coefficient matrices.

Energy splitting is structural: only the reflection amplitudes are stored and
the transmission amplitudes are derived as sqrt(1 - beta_r^2), so the
per-element conservation law holds exactly after any mutation.  Phases are
stored as integer indices on the b-bit grid (exact representation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, OffGridIncrement

MODE_STAR = "STAR"
MODE_REFLECT_ONLY = "REFLECT_ONLY"

REFLECTION = "r"
TRANSMISSION = "t"


def phase_step(b: int) -> float:
    """Grid spacing pi / 2^(b-1) of the b-bit phase catalog."""
    if b < 1:
        raise ValueError("phase resolution must be >= 1 bit")
    return np.pi / 2 ** (b - 1)


def quantize_phase(kappa: int, b: int) -> float:
    """Phase value kappa*pi/2^(b-1), reduced mod 2*pi."""
    if b < 1:
        raise ValueError("phase resolution must be >= 1 bit")
    if not (0 <= kappa <= 2**b - 1):
        raise IndexOutOfRange(f"kappa={kappa} outside [0, {2**b - 1}]")
    return (kappa * phase_step(b)) % (2 * np.pi)


@dataclass(frozen=True)
class StarRisConfig:
    beta_r: np.ndarray          # reflection amplitudes in [floor, 1]
    kappa_r: np.ndarray         # integer phase indices, reflection face
    kappa_t: np.ndarray         # integer phase indices, transmission face
    phase_bits: int
    mode: str = MODE_STAR
    amplitude_floor: float = 1e-3

    def __post_init__(self):
        n = len(self.beta_r)
        if len(self.kappa_r) != n or len(self.kappa_t) != n:
            raise ValueError("amplitude/phase vectors must share length")
        if self.mode not in (MODE_STAR, MODE_REFLECT_ONLY):
            raise ValueError(f"unknown mode {self.mode!r}")
        hi = 2**self.phase_bits - 1
        for kap in (self.kappa_r, self.kappa_t):
            if kap.dtype.kind not in "iu" or (kap < 0).any() or (kap > hi).any():
                raise IndexOutOfRange("phase indices outside the b-bit grid")
        if (self.beta_r < 0).any() or (self.beta_r > 1).any():
            raise ValueError("beta_r outside [0, 1]")
        if self.mode == MODE_REFLECT_ONLY and not np.all(self.beta_r == 1.0):
            raise ValueError("REFLECT_ONLY requires beta_r == 1")

    @property
    def n_elements(self) -> int:
        return len(self.beta_r)

    @property
    def beta_t(self) -> np.ndarray:
        return np.sqrt(np.clip(1.0 - self.beta_r**2, 0.0, 1.0))

    @property
    def theta_r(self) -> np.ndarray:
        return (self.kappa_r * phase_step(self.phase_bits)) % (2 * np.pi)

    @property
    def theta_t(self) -> np.ndarray:
        return (self.kappa_t * phase_step(self.phase_bits)) % (2 * np.pi)


def initial_config(n_elements: int, phase_bits: int, mode: str = MODE_STAR,
                   amplitude_floor: float = 1e-3) -> StarRisConfig:
    """Balanced split beta_r = beta_t = 1/sqrt(2), all phases zero.

    A reflect-only surface pins beta_r = 1 instead.
    """
    beta = np.ones(n_elements) if mode == MODE_REFLECT_ONLY else np.full(n_elements, 1 / np.sqrt(2))
    zeros = np.zeros(n_elements, dtype=np.int64)
    return StarRisConfig(beta, zeros, zeros.copy(), phase_bits, mode, amplitude_floor)


def coefficient_matrix(cfg: StarRisConfig, face: str) -> np.ndarray:
    """Diagonal N x N matrix diag(beta^n e^{j theta^n}) for the given face."""
    if face == REFLECTION:
        return np.diag(cfg.beta_r * np.exp(1j * cfg.theta_r))
    if face == TRANSMISSION:
        return np.diag(cfg.beta_t * np.exp(1j * cfg.theta_t))
    raise ValueError(f"face must be 'r' or 't', got {face!r}")


def coefficient_diag(cfg: StarRisConfig, face: str) -> np.ndarray:
    """The diagonal of :func:`coefficient_matrix` as a length-N vector."""
    if face == REFLECTION:
        return cfg.beta_r * np.exp(1j * cfg.theta_r)
    if face == TRANSMISSION:
        return cfg.beta_t * np.exp(1j * cfg.theta_t)
    raise ValueError(f"face must be 'r' or 't', got {face!r}")


def apply_amplitude_increment(cfg: StarRisConfig, delta_beta_r: np.ndarray) -> StarRisConfig:
    """Multiplicative amplitude update beta_r <- clamp(beta_r * delta).

    The clamp range is [floor, 1 - floor] so neither face can die; a
    reflect-only surface is a fixed point.
    """
    if cfg.mode == MODE_REFLECT_ONLY:
        return cfg
    lo = cfg.amplitude_floor
    beta = np.clip(cfg.beta_r * np.asarray(delta_beta_r, dtype=float), lo, 1.0 - lo)
    return StarRisConfig(beta, cfg.kappa_r, cfg.kappa_t, cfg.phase_bits, cfg.mode,
                         cfg.amplitude_floor)


def apply_phase_increment(cfg: StarRisConfig, delta_theta_r: np.ndarray,
                          delta_theta_t: np.ndarray) -> StarRisConfig:
    """Additive phase update on the quantized grid, wrapping mod 2*pi.

    Increments must be integer multiples of the grid step pi/2^(b-1).
    """
    step = phase_step(cfg.phase_bits)
    period = 2**cfg.phase_bits

    def to_steps(delta: np.ndarray) -> np.ndarray:
        ratio = np.asarray(delta, dtype=float) / step
        snapped = np.rint(ratio)
        if np.max(np.abs(ratio - snapped)) > 1e-9:
            raise OffGridIncrement("phase increment is not a multiple of pi/2^(b-1)")
        return snapped.astype(np.int64)

    kr = (cfg.kappa_r + to_steps(delta_theta_r)) % period
    kt = (cfg.kappa_t + to_steps(delta_theta_t)) % period
    return StarRisConfig(cfg.beta_r, kr, kt, cfg.phase_bits, cfg.mode, cfg.amplitude_floor)


def random_config(n_elements: int, phase_bits: int, rng: np.random.Generator,
                  mode: str = MODE_STAR, amplitude_floor: float = 1e-3) -> StarRisConfig:
    """Uniformly random valid configuration (for the RANDOM benchmark schemes)."""
    if mode == MODE_REFLECT_ONLY:
        beta = np.ones(n_elements)
    else:
        beta = rng.uniform(amplitude_floor, 1.0 - amplitude_floor, size=n_elements)
    period = 2**phase_bits
    kr = rng.integers(0, period, size=n_elements)
    kt = rng.integers(0, period, size=n_elements)
    return StarRisConfig(beta, kr, kt, phase_bits, mode, amplitude_floor)
