"""The spectrum/surface/power MDP.

The action space is factored ("multi-discrete"): per-pair spectrum choice,
per-element-group amplitude and phase increments for both surface faces, and
per-pair discrete power levels.  Digital beamformers are an exogenous input,
refreshed by the harness between learner updates; the environment treats them
as read-only state features.

State encoding: one token per scene entity (VUE, V2V pair, element group),
each a fixed-width feature vector, so the attention network has a meaningful
sequence axis.  The flat encoded state is the row-major token matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelSet, all_effective_channels, draw_channel_set
from .errors import InvalidAction
from .metrics import (AllocationState, compute_link_report,
                      effective_outage_threshold, reward)
from .params import SimParams
from .scenario import Scenario
from .star_ris import (MODE_REFLECT_ONLY, MODE_STAR, StarRisConfig,
                       apply_amplitude_increment, apply_phase_increment,
                       coefficient_diag, initial_config, phase_step)

AMP_DELTAS = (0.9, 1.0, 1.1)
PHASE_DELTA_STEPS = (-1, 0, 1)
TOKEN_FEATURES = 6
SPECTRUM_NONE = 0  # spectrum choice 0 = no reuse; 1..I = VUE index + 1


@dataclass(frozen=True)
class ActionCatalog:
    """Branch sizes and labels of the factored action space."""

    n_pairs: int
    n_groups: int
    n_vues: int
    power_levels: int
    phase_bits: int

    @property
    def branch_sizes(self) -> tuple[int, ...]:
        v, g = self.n_pairs, self.n_groups
        return tuple([self.n_vues + 1] * v + [len(AMP_DELTAS)] * g
                     + [len(PHASE_DELTA_STEPS)] * (2 * g)
                     + [self.power_levels] * v)

    @property
    def n_dims(self) -> int:
        return 2 * self.n_pairs + 3 * self.n_groups

    @property
    def labels(self) -> tuple[str, ...]:
        v, g = self.n_pairs, self.n_groups
        return tuple([f"spectrum[{j}]" for j in range(v)]
                     + [f"amp[{j}]" for j in range(g)]
                     + [f"phase_r[{j}]" for j in range(g)]
                     + [f"phase_t[{j}]" for j in range(g)]
                     + [f"power[{j}]" for j in range(v)])

    @property
    def joint_cardinality(self) -> int:
        out = 1
        for s in self.branch_sizes:
            out *= s
        return out


def action_space(params: SimParams) -> ActionCatalog:
    return ActionCatalog(
        n_pairs=params.n_v2v_pairs_v,
        n_groups=params.element_groups,
        n_vues=params.n_vues_i,
        power_levels=params.power_levels_lp,
        phase_bits=params.phase_bits_b,
    )


@dataclass(frozen=True)
class ActionTuple:
    spectrum_choice: tuple[int, ...]   # per pair, 0 = NONE, else VUE index + 1
    amp_choice: tuple[int, ...]        # per group, index into AMP_DELTAS
    phase_r_choice: tuple[int, ...]    # per group, index into PHASE_DELTA_STEPS
    phase_t_choice: tuple[int, ...]
    power_choice: tuple[int, ...]      # per pair, power level index

    def to_indices(self) -> tuple[int, ...]:
        return (*self.spectrum_choice, *self.amp_choice,
                *self.phase_r_choice, *self.phase_t_choice, *self.power_choice)

    @staticmethod
    def from_indices(indices, catalog: ActionCatalog) -> "ActionTuple":
        idx = [int(i) for i in indices]
        sizes = catalog.branch_sizes
        if len(idx) != len(sizes):
            raise InvalidAction(f"expected {len(sizes)} indices, got {len(idx)}")
        for i, (val, size) in enumerate(zip(idx, sizes)):
            if not (0 <= val < size):
                raise InvalidAction(f"dimension {i}: index {val} outside [0, {size})")
        v, g = catalog.n_pairs, catalog.n_groups
        pos = 0
        spectrum = tuple(idx[pos: pos + v]); pos += v
        amp = tuple(idx[pos: pos + g]); pos += g
        ph_r = tuple(idx[pos: pos + g]); pos += g
        ph_t = tuple(idx[pos: pos + g]); pos += g
        power = tuple(idx[pos: pos + v])
        return ActionTuple(spectrum, amp, ph_r, ph_t, power)


def identity_action(catalog: ActionCatalog, power_choice: int = 0) -> ActionTuple:
    """No spectrum reuse, multiplicative identity on amplitudes, zero phase step."""
    v, g = catalog.n_pairs, catalog.n_groups
    return ActionTuple((SPECTRUM_NONE,) * v, (AMP_DELTAS.index(1.0),) * g,
                       (PHASE_DELTA_STEPS.index(0),) * g,
                       (PHASE_DELTA_STEPS.index(0),) * g,
                       (power_choice,) * v)


@dataclass(frozen=True)
class EnvState:
    tokens: np.ndarray        # (T, TOKEN_FEATURES)
    ris: StarRisConfig
    alloc_a: np.ndarray       # (I, V) current spectrum matrix
    power_choice: tuple[int, ...]
    p_v2i: np.ndarray         # (I, B) read-only beamformers
    channels: ChannelSet
    d_r: np.ndarray           # (V,) remaining payload, bits
    t_r: np.ndarray           # (V,) remaining time, s
    step_index: int

    @property
    def encoded(self) -> np.ndarray:
        return self.tokens.reshape(-1)


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action: ActionTuple
    reward: float
    next_state: EnvState
    done: bool


def encoded_length(params: SimParams) -> int:
    """(I + V + G) tokens times the fixed per-token feature width."""
    return (params.n_vues_i + params.n_v2v_pairs_v
            + params.element_groups) * TOKEN_FEATURES


def element_groups(params: SimParams) -> list[np.ndarray]:
    """Contiguous element index blocks, one per action group."""
    return np.array_split(np.arange(params.n_elements), params.element_groups)


class V2XEnv:
    """Episode lifecycle for one scenario.

    All randomness flows from the seed handed to :meth:`reset`, so identical
    (scenario, params, seed) triples reproduce identical episodes bit for bit.
    """

    def __init__(self, scn: Scenario, params: SimParams,
                 ris_mode: str = MODE_STAR):
        self.scn = scn
        self.params = params
        self.catalog = action_space(params)
        self.ris_mode = ris_mode
        self.groups = element_groups(params)
        self.dt = params.time_budget_tmax_s / params.steps_per_episode
        self._rng: np.random.Generator | None = None
        self.state: EnvState | None = None
        self.last_report = None

    # -- lifecycle ---------------------------------------------------------
    def reset(self, seed: int) -> EnvState:
        self._rng = np.random.default_rng(seed)
        p = self.params
        ris = initial_config(p.n_elements, p.phase_bits_b, self.ris_mode,
                             p.amplitude_floor)
        if p.random_surface_reset:
            hi = 2 ** p.phase_bits_b
            ris = StarRisConfig(ris.beta_r,
                                self._rng.integers(0, hi, p.n_elements),
                                self._rng.integers(0, hi, p.n_elements),
                                p.phase_bits_b, self.ris_mode, p.amplitude_floor)
        cs = draw_channel_set(self.scn, p, self._rng)
        alloc_a = np.zeros((p.n_vues_i, p.n_v2v_pairs_v), dtype=int)
        power_choice = (0,) * p.n_v2v_pairs_v
        p_v2i = default_beamformers(cs, ris, p)
        d_r = np.full(p.n_v2v_pairs_v, p.payload_d_bits, dtype=float)
        t_r = np.full(p.n_v2v_pairs_v, p.time_budget_tmax_s, dtype=float)
        self.state = self._encode(cs, ris, alloc_a, power_choice, p_v2i, d_r, t_r, 0)
        return self.state

    def set_beamformers(self, p_v2i: np.ndarray) -> EnvState:
        """Install harness-provided beamformers into the observed state."""
        s = self.state
        self.state = self._encode(s.channels, s.ris, s.alloc_a, s.power_choice,
                                  np.asarray(p_v2i, dtype=complex),
                                  s.d_r, s.t_r, s.step_index)
        return self.state

    def scramble_surface(self, rng: np.random.Generator) -> EnvState:
        """Replace the surface with a uniformly random configuration.

        Benchmark support for random-surface baselines: phases are drawn
        uniformly on the b-bit grid for both faces and the reflection
        amplitudes uniformly inside the feasible band (pinned to 1 for a
        reflect-only surface).
        """
        s = self.state
        p = self.params
        hi = 2 ** p.phase_bits_b
        lo = p.amplitude_floor
        if self.ris_mode == MODE_REFLECT_ONLY:
            beta = np.ones(p.n_elements)
        else:
            # uniform in energy (beta^2) so both faces get 1/2 on average
            beta = np.clip(np.sqrt(rng.uniform(0.0, 1.0, p.n_elements)),
                           lo, 1.0 - lo)
        ris = StarRisConfig(beta, rng.integers(0, hi, p.n_elements),
                            rng.integers(0, hi, p.n_elements),
                            p.phase_bits_b, self.ris_mode, lo)
        self.state = self._encode(s.channels, ris, s.alloc_a, s.power_choice,
                                  s.p_v2i, s.d_r, s.t_r, s.step_index)
        return self.state

    def step(self, action: ActionTuple, redraw_fading: bool = True) -> Transition:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        p = self.params
        self._validate(action)
        prev = self.state

        ris = self._apply_surface(prev.ris, action)
        alloc_a = self._allocation_matrix(action)
        cs = draw_channel_set(self.scn, p, self._rng) if redraw_fading else prev.channels

        grid = np.asarray(p.power_grid_w())
        p_v2v = grid[list(action.power_choice)]
        alloc = AllocationState(alloc_a, p_v2v, prev.p_v2i, ris)
        report = compute_link_report(cs, alloc, p)
        self.last_report = report
        r = reward(report, p)

        d_r = np.maximum(prev.d_r - report.rate_v * self.dt, 0.0)
        t_r = np.maximum(prev.t_r - self.dt, 0.0)
        step_index = prev.step_index + 1
        done = step_index >= p.steps_per_episode or bool(np.all(d_r == 0.0))

        nxt = self._encode(cs, ris, alloc_a, action.power_choice, prev.p_v2i,
                           d_r, t_r, step_index, report=report)
        self.state = nxt
        return Transition(prev, action, r, nxt, done)

    # -- harness hooks -----------------------------------------------------
    def current_v2v_powers(self) -> np.ndarray:
        grid = np.asarray(self.params.power_grid_w())
        return grid[list(self.state.power_choice)]

    def snapshot(self) -> tuple:
        """Freeze (state, rng) so exhaustive search can replay one step."""
        return (self.state, self.last_report,
                self._rng.bit_generator.state if self._rng is not None else None)

    def restore(self, snap: tuple) -> None:
        self.state, self.last_report, rng_state = snap
        if rng_state is not None:
            self._rng = np.random.default_rng()
            self._rng.bit_generator.state = rng_state

    # -- internals ---------------------------------------------------------
    def _validate(self, action: ActionTuple) -> None:
        # from_indices re-checks every branch bound
        ActionTuple.from_indices(action.to_indices(), self.catalog)

    def _apply_surface(self, ris: StarRisConfig, action: ActionTuple) -> StarRisConfig:
        p = self.params
        n = p.n_elements
        amp = np.empty(n)
        ph_r = np.empty(n)
        ph_t = np.empty(n)
        step = phase_step(p.phase_bits_b)
        amp_choice = action.amp_choice
        if p.scalar_amplitude:
            amp_choice = (action.amp_choice[0],) * len(self.groups)
        for g, members in enumerate(self.groups):
            amp[members] = AMP_DELTAS[amp_choice[g]]
            ph_r[members] = PHASE_DELTA_STEPS[action.phase_r_choice[g]] * step
            ph_t[members] = PHASE_DELTA_STEPS[action.phase_t_choice[g]] * step
        ris = apply_amplitude_increment(ris, amp)
        return apply_phase_increment(ris, ph_r, ph_t)

    def _allocation_matrix(self, action: ActionTuple) -> np.ndarray:
        """Per-pair spectrum choices; on a collision the lowest pair index wins."""
        p = self.params
        a = np.zeros((p.n_vues_i, p.n_v2v_pairs_v), dtype=int)
        taken: set[int] = set()
        for v, choice in enumerate(action.spectrum_choice):
            if choice == SPECTRUM_NONE:
                continue
            i = choice - 1
            if i in taken:
                continue
            a[i, v] = 1
            taken.add(i)
        return a

    def _encode(self, cs: ChannelSet, ris: StarRisConfig, alloc_a: np.ndarray,
                power_choice, p_v2i: np.ndarray, d_r: np.ndarray,
                t_r: np.ndarray, step_index: int, report=None) -> EnvState:
        p = self.params
        sigma2 = p.noise_power_sigma2_w
        gamma_ef = effective_outage_threshold(p)
        grid = np.asarray(p.power_grid_w())
        if report is None:
            p_v2v = grid[list(power_choice)]
            alloc = AllocationState(alloc_a, p_v2v, p_v2i, ris)
            report = compute_link_report(cs, alloc, p)

        tokens = np.zeros((p.n_vues_i + p.n_v2v_pairs_v + p.element_groups,
                           TOKEN_FEATURES))
        row = 0
        for i in range(p.n_vues_i):
            tokens[row] = [
                report.rate_i[i] / p.bandwidth_w0_hz / 10.0,
                np.log10(1.0 + report.g_v[i] / sigma2) / 10.0,
                1.0 if cs.side_of_surface[i] == "r" else 0.0,
                1.0, 0.0, 0.0,
            ]
            row += 1
        lp = p.power_levels_lp
        for v in range(p.n_v2v_pairs_v):
            choice = 0
            hit = np.nonzero(alloc_a[:, v])[0]
            if hit.size:
                choice = (hit[0] + 1) / p.n_vues_i
            tokens[row] = [
                report.rate_v[v] / p.bandwidth_w0_hz / 10.0,
                np.clip(np.log10((report.gamma_v[v] + 1e-30) / gamma_ef) / 5.0, -2, 2),
                power_choice[v] / (lp - 1),
                d_r[v] / p.payload_d_bits,
                t_r[v] / p.time_budget_tmax_s,
                choice,
            ]
            row += 1
        period = 2 ** p.phase_bits_b
        res_r = _alignment_residuals(cs, ris, self.groups, "r")
        res_t = _alignment_residuals(cs, ris, self.groups, "t")
        for g, members in enumerate(self.groups):
            tokens[row] = [
                float(np.mean(ris.beta_r[members])),
                float(np.mean(ris.kappa_r[members])) / period,
                float(np.mean(ris.kappa_t[members])) / period,
                res_r[g], res_t[g], 1.0,
            ]
            row += 1
        return EnvState(tokens, ris, alloc_a, tuple(int(c) for c in power_choice),
                        np.asarray(p_v2i, dtype=complex), cs, d_r, t_r, step_index)


def _alignment_residuals(cs: ChannelSet, ris: StarRisConfig,
                         groups: list[np.ndarray], face: str) -> np.ndarray:
    """Per-group phase residual (in units of pi) that would best align each
    group's cascaded-path contribution with the rest of the surface.

    The surface-to-BS link is rank one, so each user's surface path collapses
    to the scalar sum S_i = sum_n d_n s_in with s_in the per-element cascade
    and d_n the face coefficient.  Rotating group g by delta changes the
    summed channel gain sum_i |S_i|^2 by 2 Re(e^{j delta} sum_i conj(S_i -
    S_ig) S_ig) + const, so delta* = arg(sum_i (S_i - S_ig) conj(S_ig)) is
    the coordinate-ascent move for the face's users jointly; exposing it as
    an observation feature makes phase control a learnable state-conditional
    policy instead of blind hill climbing.
    """
    out = np.zeros(len(groups))
    users = [i for i, s in enumerate(cs.side_of_surface) if s == face]
    if not users:
        return out
    s_all = cs.h_vue_ris * cs.H_ris_bs[:, 0][None, :]        # (I, N) cascades
    contrib = coefficient_diag(ris, face)[None, :] * s_all[users]  # (U, N)
    totals = contrib.sum(axis=1)                              # (U,)
    for g, members in enumerate(groups):
        s_g = contrib[:, members].sum(axis=1)                 # (U,)
        acc = np.sum((totals - s_g) * np.conj(s_g))
        if abs(acc) < 1e-300:
            continue
        out[g] = float(np.angle(acc)) / np.pi
    return out


def default_beamformers(cs: ChannelSet, ris: StarRisConfig,
                        params: SimParams) -> np.ndarray:
    """Phase-aligned equal-power split across VUEs (matched filter per user)."""
    h = all_effective_channels(cs, ris)                      # (I, B)
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    scale = np.sqrt(params.p_i_max_w / h.shape[0])
    return scale * np.conj(h) / norms


def transition_to_json(t: Transition) -> str:
    payload = {
        "state": t.state.encoded.tolist(),
        "action": list(t.action.to_indices()),
        "reward": t.reward,
        "next_state": t.next_state.encoded.tolist(),
        "done": t.done,
    }
    return json.dumps(payload, sort_keys=True)
