"""Link-level metrics: SINRs, achievable rates, constraint flags, RL reward.

Pure functions over a :class:`ChannelSet` and an :class:`AllocationState`;
everything runs in linear/SI units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, all_effective_channels
from .errors import InvalidProbability
from .params import SimParams, db_to_linear
from .star_ris import StarRisConfig


@dataclass(frozen=True)
class AllocationState:
    """Spectrum matrix, V2V powers, V2I beamformers and the surface config."""

    a: np.ndarray               # (I, V) binary spectrum-sharing matrix
    p_v2v: np.ndarray           # (V,) watts, on the discrete power grid
    p_v2i: np.ndarray           # (I, B) complex beamformers
    ris: StarRisConfig

    def __post_init__(self):
        a = np.asarray(self.a)
        if not np.isin(a, (0, 1)).all():
            raise ValueError("allocation entries must be binary")
        if (a.sum(axis=1) > 1).any():
            raise ValueError("a VUE channel is shared by more than one V2V pair")
        if (a.sum(axis=0) > 1).any():
            raise ValueError("a V2V pair occupies more than one VUE channel")
        if (np.asarray(self.p_v2v) < 0).any():
            raise ValueError("negative V2V power")


@dataclass(frozen=True)
class LinkReport:
    gamma_i: np.ndarray     # (I,) linear V2I SINRs
    rate_i: np.ndarray      # (I,) bit/s
    gamma_v: np.ndarray     # (V,)
    rate_v: np.ndarray      # (V,)
    g_v: np.ndarray         # (I,) V2V-into-BS interference per VUE channel, W
    g_i: np.ndarray         # (V,) V2I-into-receiver interference per pair, W
    qos_ok: np.ndarray      # (I,) bool
    latency_ok: np.ndarray  # (V,) bool
    outage_ok: np.ndarray   # (V,) bool

    @property
    def sum_rate_i(self) -> float:
        return float(self.rate_i.sum())


def effective_outage_threshold(params: SimParams) -> float:
    """gamma_ef = gamma_0 / ln(1/(1-p_0)), both sides linear."""
    p0 = params.outage_prob_p0
    if not (0.0 < p0 < 1.0):
        raise InvalidProbability(f"p0={p0}")
    gamma0 = db_to_linear(params.outage_threshold_gamma0_db)
    if params.gamma0_is_effective:
        return gamma0
    return gamma0 / np.log(1.0 / (1.0 - p0))


def v2v_interference_at_bs(cs: ChannelSet, alloc: AllocationState) -> np.ndarray:
    """G_v per VUE channel: sum over sharing pairs of p_v |h_{v->BS}|^2."""
    power_gain = alloc.p_v2v * np.abs(cs.h_v2v_to_bs) ** 2   # (V,)
    return alloc.a @ power_gain                              # (I,)


def v2i_signal_power(cs: ChannelSet, alloc: AllocationState) -> np.ndarray:
    """|h_i p_i|^2 with the surface-composed effective channel."""
    h = all_effective_channels(cs, alloc.ris)                # (I, B)
    return np.abs(np.sum(h * alloc.p_v2i, axis=1)) ** 2


def v2i_sinr(cs: ChannelSet, alloc: AllocationState, params: SimParams,
             i: int | None = None):
    """V2I SINR |h_i p_i|^2 / (G_v + sigma^2); vector when ``i`` is omitted."""
    sig = v2i_signal_power(cs, alloc)
    gv = v2v_interference_at_bs(cs, alloc)
    gamma = sig / (gv + params.noise_power_sigma2_w)
    return gamma if i is None else float(gamma[i])

def v2i_interference_at_rx(cs: ChannelSet, alloc: AllocationState) -> np.ndarray:
    """G_i per pair: the sharing V2I link's received power |h_i p_i|^2."""
    sig = v2i_signal_power(cs, alloc)                        # (I,)
    return alloc.a.T @ sig                                   # (V,)


def v2v_sinr(cs: ChannelSet, alloc: AllocationState, params: SimParams,
             v: int | None = None):
    """V2V SINR p_v |h_v|^2 / (G_i + sigma^2); vector when ``v`` is omitted."""
    sig = alloc.p_v2v * np.abs(cs.h_v2v) ** 2
    gi = v2i_interference_at_rx(cs, alloc)
    gamma = sig / (gi + params.noise_power_sigma2_w)
    return gamma if v is None else float(gamma[v])


def compute_link_report(cs: ChannelSet, alloc: AllocationState,
                        params: SimParams) -> LinkReport:
    w0 = params.bandwidth_w0_hz
    sigma2 = params.noise_power_sigma2_w
    sig_i = v2i_signal_power(cs, alloc)
    g_v = v2v_interference_at_bs(cs, alloc)
    gamma_i = sig_i / (g_v + sigma2)
    rate_i = w0 * np.log2(1.0 + gamma_i)

    sig_v = alloc.p_v2v * np.abs(cs.h_v2v) ** 2
    g_i = alloc.a.T @ sig_i
    gamma_v = sig_v / (g_i + sigma2)
    rate_v = w0 * np.log2(1.0 + gamma_v)

    gamma_ef = effective_outage_threshold(params)
    qos_ok = rate_i >= params.r_min_bps
    latency_ok = rate_v >= params.latency_rate_floor_bps
    if params.outage_sense == "paper_upper":
        outage_ok = gamma_v <= gamma_ef
    else:
        outage_ok = gamma_v >= gamma_ef
    return LinkReport(gamma_i, rate_i, gamma_v, rate_v, g_v, g_i,
                      qos_ok, latency_ok, outage_ok)


def piecewise_revenue(x: np.ndarray | float, p0: float) -> np.ndarray | float:
    """F(x) = P0 for x >= 0, else x."""
    return np.where(np.asarray(x, dtype=float) >= 0, p0, x)


def reward(report: LinkReport, params: SimParams) -> float:
    """Weighted sum of normalized V2I rates plus constraint revenues/penalties.

    Rate slacks are normalized by W0 (spectral-efficiency units) and the
    outage slack by gamma_ef, so the four terms live on comparable scales.
    The outage slack sign follows ``outage_sense`` so that satisfying the
    configured constraint always earns the revenue P0.
    """
    w0 = params.bandwidth_w0_hz
    gamma_ef = effective_outage_threshold(params)
    p0 = params.revenue_p0

    rate_term = params.q1 * float(np.sum(report.rate_i)) / w0
    qos_slack = (report.rate_i - params.r_min_bps) / w0
    lat_slack = (report.rate_v - params.latency_rate_floor_bps) / w0
    if params.outage_sense == "paper_upper":
        out_slack = (gamma_ef - report.gamma_v) / gamma_ef
    else:
        out_slack = (report.gamma_v - gamma_ef) / gamma_ef

    total = rate_term
    total += params.q2 * float(np.sum(piecewise_revenue(qos_slack, p0)))
    total += params.q3 * float(np.sum(piecewise_revenue(lat_slack, p0)))
    total += params.q4 * float(np.sum(piecewise_revenue(out_slack, p0)))
    if not np.isfinite(total):
        raise ValueError("non-finite reward")
    return total


def reward_upper_bound(report: LinkReport, params: SimParams) -> float:
    """For fixed rates: q1*sum(r_hat) + (I q2 + V q3 + V q4) * P0."""
    i_count = len(report.rate_i)
    v_count = len(report.rate_v)
    return (params.q1 * float(np.sum(report.rate_i)) / params.bandwidth_w0_hz
            + (i_count * params.q2 + v_count * (params.q3 + params.q4))
            * params.revenue_p0)


def report_to_json(report: LinkReport) -> str:
    payload = {
        "gamma_i": report.gamma_i.tolist(),
        "rate_i": report.rate_i.tolist(),
        "gamma_v": report.gamma_v.tolist(),
        "rate_v": report.rate_v.tolist(),
        "g_v": report.g_v.tolist(),
        "g_i": report.g_i.tolist(),
        "qos_ok": report.qos_ok.astype(bool).tolist(),
        "latency_ok": report.latency_ok.astype(bool).tolist(),
        "outage_ok": report.outage_ok.astype(bool).tolist(),
        "sum_rate_i": report.sum_rate_i,
    }
    return json.dumps(payload, indent=2, sort_keys=True)
