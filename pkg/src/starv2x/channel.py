"""Channel realizations: Rayleigh/Rician small-scale fading and the
surface-composed effective V2I channel.

Large-scale attenuation follows eta * d^(-delta) from a 1 m reference; the
VUE-to-surface and surface-to-BS hops may use a separate exponent
(``ris_pathloss_exp``) to model their stronger line-of-sight geometry.
Line-of-sight components come from uniform-linear-array steering vectors with
half-wavelength spacing, driven by the azimuth geometry of each link.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry
from .params import SimParams, db_to_linear
from .scenario import Scenario
from .star_ris import REFLECTION, TRANSMISSION, StarRisConfig, coefficient_diag


@dataclass(frozen=True)
class ChannelSet:
    """All channel gains for one coherence step."""

    h_direct: np.ndarray        # (I, B) BS <-> VUE direct links
    h_vue_ris: np.ndarray       # (I, N) VUE -> surface
    H_ris_bs: np.ndarray        # (N, B) surface -> BS
    h_v2v: np.ndarray           # (V,)   V2V transmitter -> receiver
    h_v2v_to_bs: np.ndarray     # (V,)   V2V transmitter -> BS (feeds G_v)
    h_v2i_to_v2vrx: np.ndarray  # (I, V) VUE -> V2V receiver cross paths
    side_of_surface: tuple[str, ...]  # per-VUE face flag, "r" or "t"

    def __post_init__(self):
        i, b = self.h_direct.shape
        n = self.h_vue_ris.shape[1]
        if self.h_vue_ris.shape[0] != i or self.H_ris_bs.shape != (n, b):
            raise ValueError("channel array dimensions disagree")
        if len(self.side_of_surface) != i:
            raise ValueError("side flags must cover every VUE")
        for arr in (self.h_direct, self.h_vue_ris, self.H_ris_bs, self.h_v2v,
                    self.h_v2v_to_bs, self.h_v2i_to_v2vrx):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite channel gain")

    @property
    def n_vues(self) -> int:
        return self.h_direct.shape[0]

    @property
    def n_pairs(self) -> int:
        return len(self.h_v2v)


def _pathloss_amp(distance: float, params: SimParams, exponent: float) -> float:
    if distance <= 0:
        raise DegenerateGeometry(f"link distance {distance} m is not positive")
    return np.sqrt(params.ref_gain_eta * distance ** (-exponent))


def ula_steering(n_antennas: int, direction: np.ndarray, spacing_wavelengths: float = 0.5,
                 axis: np.ndarray | None = None) -> np.ndarray:
    """Unit-modulus ULA steering vector for a link leaving along ``direction``.

    The array lies along ``axis`` (x by default); the phase ramp is
    2*pi*spacing*k*cos(angle between link and array axis).
    """
    if axis is None:
        axis = np.array([1.0, 0.0, 0.0])
    u = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(u)
    if norm == 0:
        raise DegenerateGeometry("zero-length link direction")
    cos_angle = float(np.dot(u / norm, axis / np.linalg.norm(axis)))
    k = np.arange(n_antennas)
    return np.exp(1j * 2 * np.pi * spacing_wavelengths * k * cos_angle)


def rayleigh_link(distance: float, params: SimParams, rng: np.random.Generator,
                  size: int = 1, extra_loss_db: float = 0.0) -> np.ndarray:
    """sqrt(eta d^-delta) times i.i.d. unit-variance circular complex Gaussians."""
    amp = _pathloss_amp(distance, params, params.pathloss_exp_delta)
    amp *= np.sqrt(db_to_linear(-extra_loss_db))
    scatter = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2.0)
    return amp * scatter


def rician_link(distance: float, los_steering: np.ndarray, params: SimParams,
                rng: np.random.Generator, exponent: float | None = None) -> np.ndarray:
    """Rician fading with a deterministic steering-vector LoS component.

    Power splits K/(1+K) LoS vs 1/(1+K) NLoS; total mean power eta*d^-delta.
    """
    los = np.asarray(los_steering)
    if not np.allclose(np.abs(los), 1.0, atol=1e-9):
        raise ValueError("LoS steering entries must be unit modulus")
    exp = params.ris_exp if exponent is None else exponent
    amp = _pathloss_amp(distance, params, exp)
    k = params.rician_k
    n = len(los)
    nlos = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
    return amp * (np.sqrt(k / (1 + k)) * los + np.sqrt(1 / (1 + k)) * nlos)


def ris_bs_link(scn: Scenario, params: SimParams) -> np.ndarray:
    """Deterministic pure-LoS surface-to-BS channel (N x B, rank one)."""
    d_vec = scn.bs_position - scn.ris_position
    d = float(np.linalg.norm(d_vec))
    amp = _pathloss_amp(d, params, params.ris_exp)
    k = params.rician_k
    a_ris = ula_steering(params.n_elements, d_vec, params.element_spacing_wavelengths)
    a_bs = ula_steering(params.n_antennas_b, -d_vec, params.element_spacing_wavelengths)
    return amp * np.sqrt(k / (1 + k)) * np.outer(a_ris, np.conj(a_bs))


def surface_side(vue_position: np.ndarray, scn: Scenario) -> str:
    """VUEs on the BS side of the surface (y below the surface) are reflected."""
    return REFLECTION if vue_position[1] < scn.ris_position[1] else TRANSMISSION


def draw_channel_set(scn: Scenario, params: SimParams, rng: np.random.Generator) -> ChannelSet:
    """One small-scale realization of every link in the scene."""
    i_count, v_count = params.n_vues_i, params.n_v2v_pairs_v
    b, n = params.n_antennas_b, params.n_elements

    vue_pos = scn.vue_positions()
    tx_pos = scn.v2v_tx_positions()
    rx_pos = scn.v2v_rx_positions()

    h_direct = np.zeros((i_count, b), dtype=complex)
    h_vue_ris = np.zeros((i_count, n), dtype=complex)
    sides = []
    for i in range(i_count):
        d_bs = float(np.linalg.norm(vue_pos[i] - scn.bs_position))
        h_direct[i] = rayleigh_link(d_bs, params, rng, size=b,
                                    extra_loss_db=params.direct_blockage_db)
        d_ris_vec = scn.ris_position - vue_pos[i]
        d_ris = float(np.linalg.norm(d_ris_vec))
        a = ula_steering(n, -d_ris_vec, params.element_spacing_wavelengths)
        h_vue_ris[i] = rician_link(d_ris, a, params, rng)
        sides.append(surface_side(vue_pos[i], scn))

    H_ris_bs = ris_bs_link(scn, params)

    h_v2v = np.zeros(v_count, dtype=complex)
    h_v2v_to_bs = np.zeros(v_count, dtype=complex)
    for v in range(v_count):
        d_pair = float(np.linalg.norm(tx_pos[v] - rx_pos[v]))
        h_v2v[v] = rayleigh_link(d_pair, params, rng)[0]
        d_bs = float(np.linalg.norm(tx_pos[v] - scn.bs_position))
        h_v2v_to_bs[v] = rayleigh_link(d_bs, params, rng)[0]

    h_cross = np.zeros((i_count, v_count), dtype=complex)
    for i in range(i_count):
        for v in range(v_count):
            d = float(np.linalg.norm(vue_pos[i] - rx_pos[v]))
            if d <= 0:
                d = 1.0  # VUE doubling as the receiver itself; no self-interference path
            h_cross[i, v] = rayleigh_link(d, params, rng)[0]

    return ChannelSet(h_direct, h_vue_ris, H_ris_bs, h_v2v, h_v2v_to_bs,
                      h_cross, tuple(sides))


def effective_v2i_channel(cs: ChannelSet, ris: StarRisConfig, i: int) -> np.ndarray:
    """h_i = h_direct + h_vue_ris * Phi_face * H_ris_bs for VUE i."""
    face = cs.side_of_surface[i]
    phi = coefficient_diag(ris, face)
    return cs.h_direct[i] + (cs.h_vue_ris[i] * phi) @ cs.H_ris_bs


def all_effective_channels(cs: ChannelSet, ris: StarRisConfig) -> np.ndarray:
    """Stacked effective channels, shape (I, B)."""
    phi_r = coefficient_diag(ris, REFLECTION)
    phi_t = coefficient_diag(ris, TRANSMISSION)
    out = np.empty_like(cs.h_direct)
    for i, face in enumerate(cs.side_of_surface):
        phi = phi_r if face == REFLECTION else phi_t
        out[i] = cs.h_direct[i] + (cs.h_vue_ris[i] * phi) @ cs.H_ris_bs
    return out


def channel_set_to_json(cs: ChannelSet) -> str:
    def c2pairs(arr: np.ndarray):
        stacked = np.stack([arr.real, arr.imag], axis=-1)
        return stacked.tolist()

    payload = {
        "h_direct": c2pairs(cs.h_direct),
        "h_vue_ris": c2pairs(cs.h_vue_ris),
        "H_ris_bs": c2pairs(cs.H_ris_bs),
        "h_v2v": c2pairs(cs.h_v2v),
        "h_v2v_to_bs": c2pairs(cs.h_v2v_to_bs),
        "h_v2i_to_v2vrx": c2pairs(cs.h_v2i_to_v2vrx),
        "side_of_surface": list(cs.side_of_surface),
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def channel_set_from_json(text: str) -> ChannelSet:
    def pairs2c(data):
        arr = np.asarray(data, dtype=float)
        return arr[..., 0] + 1j * arr[..., 1]

    d = json.loads(text)
    return ChannelSet(
        h_direct=pairs2c(d["h_direct"]),
        h_vue_ris=pairs2c(d["h_vue_ris"]),
        H_ris_bs=pairs2c(d["H_ris_bs"]),
        h_v2v=pairs2c(d["h_v2v"]),
        h_v2v_to_bs=pairs2c(d["h_v2v_to_bs"]),
        h_v2i_to_v2vrx=pairs2c(d["h_v2i_to_v2vrx"]),
        side_of_surface=tuple(d["side_of_surface"]),
    )
