"""Simulation parameters and unit conversions.

All internal math runs in linear/SI units (W, Hz, bit/s, m).  dB/dBm values
appear only at the configuration surface and are converted exactly once,
through the helpers below.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidProbability


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_watt(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watt_to_dbm(x_w: float) -> float:
    return 10.0 * math.log10(x_w) + 30.0


@dataclass(frozen=True)
class SimParams:
    """The canonical parameter set (Table-style defaults plus artifact knobs).

    Fields carrying dB/dBm suffixes are stored in those units; everything else
    is SI.  Derived quantities (noise power, effective outage threshold) are
    exposed as properties so they can never drift out of sync.
    """

    # -- radio / channel ---------------------------------------------------
    bandwidth_w0_hz: float = 10e6        # per-V2I-channel bandwidth (working value)
    bandwidth_w_literal_hz: float = 10e9  # literal configured total-bandwidth row; not used in rate math
    noise_psd_dbm_hz: float = -174.0
    pathloss_exp_delta: float = 4.0
    ris_pathloss_exp: float | None = None  # None -> same as pathloss_exp_delta
    ref_gain_eta_db: float = -40.0       # channel gain at 1 m reference distance
    rician_k: float = 10.0
    direct_blockage_db: float = 0.0      # extra attenuation on the direct BS-VUE path
    carrier_hz: float = 5.9e9
    element_spacing_wavelengths: float = 0.5

    # -- QoS / constraints -------------------------------------------------
    outage_threshold_gamma0_db: float = 4.0
    outage_prob_p0: float = 0.01
    gamma0_is_effective: bool = False    # treat the 4 dB threshold as gamma_ef directly
    outage_sense: str = "paper_upper"    # {"paper_upper", "lower"}
    payload_d_bits: float = 8480.0       # 1060 bytes
    time_budget_tmax_s: float = 0.1
    r_min_bps: float = 5e6
    rmin_exponent_uses_bandwidth: bool = True  # mu floor exponent R_min/W0 (else R_min/B antennas)

    # -- powers ------------------------------------------------------------
    p_i_max_db: float = 10.0             # V2I total power budget, dB (-> W)
    p_v_max_dbm: float = 23.0            # per-V2V-transmitter cap
    power_levels_lp: int = 4

    # -- STAR-RIS ----------------------------------------------------------
    phase_bits_b: int = 2
    n_elements: int = 32
    element_groups: int = 4              # action groups G (<= n_elements)
    amplitude_floor: float = 1e-3
    scalar_amplitude: bool = False       # single shared beta_r across elements

    # -- topology ----------------------------------------------------------
    n_antennas_b: int = 4
    n_vues_i: int = 20
    n_v2v_pairs_v: int = 6
    road_length_m: float = 120.0
    road_width_m: float = 20.0
    bs_position: tuple[float, float, float] = (0.0, 0.0, 10.0)
    ris_position: tuple[float, float, float] = (60.0, 10.0, 5.0)
    vehicle_antenna_height_m: float = 1.5
    broadcast_range_m: float = 50.0
    speed_min_mps: float = 10.0
    speed_max_mps: float = 20.0
    lane_stratified_vues: bool = False
    service_window_m: float | None = None  # None -> road_length_m / 4   # one VUE per lane (round robin) when set
    random_surface_reset: bool = False   # episodes start from uniform random phases
    poisson_intensity_per_m: float | None = None  # None -> calibrated from requested counts

    # -- RL ----------------------------------------------------------------
    discount_zeta: float = 0.98          # Table lists a second factor 0.9; unused alternate
    learning_rate: float = 0.001
    batch_size: int = 4
    eps_initial: float = 1.0
    eps_final: float = 0.02
    eps_decay_frac: float = 0.3          # linear decay over this fraction of episodes
    episodes: int = 1000
    steps_per_episode: int = 20
    target_sync_sq: int = 100
    replay_capacity: int = 100_000

    # -- reward ------------------------------------------------------------
    q1: float = 1.0
    q2: float = 1.0
    q3: float = 1.0
    q4: float = 1.0
    revenue_p0: float = 1.0

    def __post_init__(self) -> None:
        if self.pathloss_exp_delta < 2:
            raise ValueError("pathloss_exp_delta must be >= 2")
        if not (0.0 < self.outage_prob_p0 < 1.0):
            raise InvalidProbability(f"outage_prob_p0={self.outage_prob_p0} not in (0,1)")
        if self.power_levels_lp < 2:
            raise ValueError("power_levels_lp must be >= 2")
        if self.phase_bits_b < 1:
            raise ValueError("phase_bits_b must be >= 1")
        if self.outage_sense not in ("paper_upper", "lower"):
            raise ValueError(f"unknown outage_sense {self.outage_sense!r}")
        if not (1 <= self.element_groups <= self.n_elements):
            raise ValueError("element_groups must be in [1, n_elements]")
        if self.noise_power_sigma2_w <= 0:
            raise ValueError("derived noise power must be positive")

    # -- derived -----------------------------------------------------------
    @property
    def noise_power_sigma2_w(self) -> float:
        """sigma^2 = PSD (dBm/Hz) + 10 log10(W0), in watts."""
        return dbm_to_watt(self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_w0_hz))

    @property
    def ref_gain_eta(self) -> float:
        return db_to_linear(self.ref_gain_eta_db)

    @property
    def p_i_max_w(self) -> float:
        return db_to_linear(self.p_i_max_db)

    @property
    def p_v_max_w(self) -> float:
        return dbm_to_watt(self.p_v_max_dbm)

    @property
    def ris_exp(self) -> float:
        return self.pathloss_exp_delta if self.ris_pathloss_exp is None else self.ris_pathloss_exp

    @property
    def latency_rate_floor_bps(self) -> float:
        """Minimum V2V rate implied by delivering D bits within T_max."""
        return self.payload_d_bits / self.time_budget_tmax_s

    def power_grid_w(self) -> list[float]:
        """Discrete V2V power levels {0, P/(Lp-1), ..., P_max} in watts."""
        lp = self.power_levels_lp
        return [k / (lp - 1) * self.p_v_max_w for k in range(lp)]

    def replace(self, **kwargs) -> "SimParams":
        return dataclasses.replace(self, **kwargs)


def default_params() -> SimParams:
    """Canonical defaults.

    The bandwidth row is kept verbatim in ``bandwidth_w_literal_hz`` while the
    working per-channel value is 10 MHz; noise is interpreted as a PSD in
    dBm/Hz.  Payload size and time budget default to typical C-V2X values.
    """
    return SimParams()


# compatibility aliases used throughout tests/docs -------------------------

def _coerce(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r}")
    if current is None or isinstance(current, float):
        if raw.lower() in ("none", "null"):
            return None
        return float(raw)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, tuple):
        parts = [float(p) for p in raw.strip("()[] ").split(",") if p.strip()]
        return tuple(parts)
    return raw


def apply_overrides(params: SimParams, assignments: list[str]) -> SimParams:
    """Apply ``key=value`` override strings (the CLI ``--set`` mechanism)."""
    updates = {}
    fields = {f.name: f for f in dataclasses.fields(SimParams)}
    for item in assignments:
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in fields:
            raise KeyError(f"unknown parameter {key!r}")
        updates[key] = _coerce(raw.strip(), getattr(params, key))
    return params.replace(**updates)


def load_config(path: str | Path) -> SimParams:
    """Read a flat key/value config file (``key = value``, ``#`` comments)."""
    assignments = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {line!r}")
        assignments.append(line)
    return apply_overrides(default_params(), assignments)


def save_config(params: SimParams, path: str | Path) -> None:
    lines = []
    for f in dataclasses.fields(SimParams):
        value = getattr(params, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def params_to_dict(params: SimParams) -> dict:
    d = dataclasses.asdict(params)
    d["bs_position"] = list(params.bs_position)
    d["ris_position"] = list(params.ris_position)
    return d


def params_from_dict(d: dict) -> SimParams:
    kwargs = dict(d)
    for key in ("bs_position", "ris_position"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return SimParams(**kwargs)


def manifest_hash(obj) -> str:
    """Stable short hash of a parameter set or JSON-serializable object."""
    import hashlib

    if isinstance(obj, SimParams):
        obj = params_to_dict(obj)
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
