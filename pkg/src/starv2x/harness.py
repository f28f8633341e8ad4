"""Experiment harness: alternating learning/beamforming loops and exports.

One run alternates between the learned discrete decisions (spectrum,
surface increments, power levels) and the continuous digital beamformer
solved by successive convex approximation, then aggregates per-episode
metrics into byte-deterministic delimited files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import agent as agent_mod
from . import beamformer as bf
from . import env as env_mod
from .channel import all_effective_channels
from . import nn as nn_mod
from . import star_ris
from .errors import Infeasible, SpaceTooLarge
from .params import SimParams, manifest_hash, params_to_dict

SCHEME_STAR_PROPOSED = "STAR_PROPOSED"
SCHEME_STAR_RANDOM = "STAR_RANDOM"
SCHEME_RIS_PROPOSED = "RIS_PROPOSED"
SCHEME_RIS_RANDOM = "RIS_RANDOM"
SCHEME_DDQN_VANILLA = "DDQN_VANILLA"
SCHEME_MAB = "MAB"
ALL_SCHEMES = (SCHEME_STAR_PROPOSED, SCHEME_STAR_RANDOM, SCHEME_RIS_PROPOSED,
               SCHEME_RIS_RANDOM, SCHEME_DDQN_VANILLA, SCHEME_MAB)

CSV_COLUMNS = ("episode", "scheme", "seed", "sum_rate", "p_latency", "reward")

BRUTE_FORCE_CAP = 1_000_000


@dataclass(frozen=True)
class ExperimentManifest:
    params: SimParams
    schemes: tuple[str, ...] = ALL_SCHEMES
    seeds: tuple[int, ...] = (0,)
    episodes: int | None = None          # None -> params.episodes
    beamform_every: int = 1              # per-step cadence; 0 -> once per episode
    matched_filter_tracking: bool = False  # cheap per-step matched-filter refresh
    checkpoint_every: int = 0            # episodes between checkpoints; 0 -> off
    network: nn_mod.NetworkSpec | None = None
    output_dir: str = "."

    def __post_init__(self):
        for s in self.schemes:
            if s not in ALL_SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")

    @property
    def n_episodes(self) -> int:
        return self.episodes if self.episodes is not None else self.params.episodes

    def fingerprint(self) -> str:
        return manifest_hash(self.params)


@dataclass
class EpisodeRecord:
    episode: int
    scheme: str
    seed: int
    sum_rate: float
    p_latency: float
    reward: float


@dataclass
class RunResult:
    scheme: str
    seed: int
    episodes: list[EpisodeRecord] = field(default_factory=list)
    converged_at: int | None = None
    beamform_calls: int = 0
    infeasible_events: int = 0


def _scheme_traits(scheme: str) -> tuple[str, bool, str]:
    """Return (surface mode, surface learned?, agent variant)."""
    mode = (star_ris.MODE_REFLECT_ONLY
            if scheme in (SCHEME_RIS_PROPOSED, SCHEME_RIS_RANDOM)
            else star_ris.MODE_STAR)
    learned_surface = scheme not in (SCHEME_STAR_RANDOM, SCHEME_RIS_RANDOM)
    if scheme == SCHEME_DDQN_VANILLA:
        variant = agent_mod.VARIANT_DDQN_VANILLA
    elif scheme == SCHEME_MAB:
        variant = agent_mod.VARIANT_MAB
    else:
        variant = agent_mod.VARIANT_DDQN_ATTN
    return mode, learned_surface, variant


def default_network_spec(params: SimParams,
                         use_attention: bool = True) -> nn_mod.NetworkSpec:
    catalog = env_mod.action_space(params)
    return nn_mod.NetworkSpec(
        token_count=params.n_vues_i + params.n_v2v_pairs_v + params.element_groups,
        token_features=env_mod.TOKEN_FEATURES,
        head_sizes=tuple(catalog.branch_sizes),
        use_attention=use_attention,
    )


def _solve_beamformers(environment: env_mod.V2XEnv,
                       warm: bf.BeamformingSolution | None,
                       effort: dict | None = None):
    """Run the SCA beamformer for the environment's current coupling state."""
    params = environment.params
    cs, ris = environment.state.channels, environment.state.ris
    h = all_effective_channels(cs, ris)
    p_v2v = environment.current_v2v_powers()
    g_v = environment.state.alloc_a @ (p_v2v * np.abs(cs.h_v2v_to_bs) ** 2)
    v2v_signal = p_v2v * np.abs(cs.h_v2v) ** 2
    prob = bf.BeamformingProblem(h=h, g_v_const=g_v,
                                 a=environment.state.alloc_a,
                                 v2v_signal=v2v_signal, params=params)
    kwargs = dict(effort or {})
    if warm is not None:
        ball = bf.relax_power_constraint(params.p_i_max_w)
        kwargs["init"] = bf.BeamformingSolution(
            p=ball.project(warm.p), mu=np.maximum(warm.mu, 1e-9),
            xi=g_v + params.noise_power_sigma2_w)
    try:
        return bf.sca_solve(prob, **kwargs)
    except Infeasible:
        return None


def run_scheme(manifest: ExperimentManifest, scheme: str, seed: int,
               beamform_effort: dict | None = None,
               progress=None) -> RunResult:
    """Train one scheme for one seed; the alternating-optimization loop."""
    from .scenario import drop_scenario

    params = manifest.params
    mode, learned_surface, variant = _scheme_traits(scheme)
    scn = drop_scenario(params, seed=seed)
    environment = env_mod.V2XEnv(scn, params, ris_mode=mode)
    catalog = environment.catalog
    rng = np.random.default_rng(seed + 7)

    cfg = agent_mod.AgentConfig(
        variant=variant, discount=params.discount_zeta,
        learning_rate=params.learning_rate, batch_size=params.batch_size,
        eps_initial=params.eps_initial, eps_final=params.eps_final,
        eps_decay_frac=params.eps_decay_frac,
        target_sync_sq=params.target_sync_sq)
    if variant == agent_mod.VARIANT_MAB:
        learner: agent_mod.MABAgent | agent_mod.DDQNAgent = agent_mod.MABAgent(
            catalog.branch_sizes, seed=seed)
    else:
        spec = manifest.network or default_network_spec(
            params, use_attention=(variant == agent_mod.VARIANT_DDQN_ATTN))
        learner = agent_mod.DDQNAgent(cfg, spec, seed=seed)
        buffer = agent_mod.ReplayBuffer(params.replay_capacity)

    result = RunResult(scheme=scheme, seed=seed)
    n_episodes = manifest.n_episodes
    effort = beamform_effort or {"max_sca_iters": 6, "tol_rel": 1e-3, "tol_gap": 1e-6}
    warm: bf.BeamformingSolution | None = None

    def refresh_beamformers():
        nonlocal warm
        result.beamform_calls += 1
        sol = _solve_beamformers(environment, warm, effort)
        if sol is None:
            result.infeasible_events += 1
        else:
            environment.set_beamformers(sol.p)
            warm = sol

    for ep in range(n_episodes):
        eps = agent_mod.epsilon_schedule(cfg, ep, n_episodes)
        state = environment.reset(seed=seed * 100_003 + ep)
        if manifest.beamform_every == 0:
            refresh_beamformers()
        ep_reward = 0.0
        ep_rate = 0.0
        delivered_in_time = 0.0
        steps = 0
        done = False
        while not done:
            if manifest.beamform_every and steps % manifest.beamform_every == 0:
                refresh_beamformers()
            if not learned_surface:
                state = environment.scramble_surface(rng)
            if manifest.matched_filter_tracking:
                st = environment.state
                state = environment.set_beamformers(env_mod.default_beamformers(
                    st.channels, st.ris, params))
            if variant == agent_mod.VARIANT_MAB:
                idx = list(learner.select_action(None, eps))
            else:
                idx = list(learner.select_action(state.tokens, eps))
            if not learned_surface:
                _randomize_surface_branches(idx, catalog, rng)
            action = env_mod.ActionTuple.from_indices(idx, catalog)
            transition = environment.step(action)
            ep_reward += transition.reward
            ep_rate += environment.last_report.sum_rate_i
            if variant == agent_mod.VARIANT_MAB:
                learner.update(tuple(idx), transition.reward)
            else:
                buffer.push(agent_mod.BufferEntry(
                    state=state.tokens, action=tuple(idx),
                    reward=transition.reward,
                    next_state=transition.next_state.tokens,
                    done=transition.done))
                if len(buffer) >= cfg.batch_size:
                    learner.train_step(buffer)
            state = transition.next_state
            done = transition.done
            steps += 1
        if np.all(environment.state.d_r <= 0):
            delivered_in_time = 1.0
        result.episodes.append(EpisodeRecord(
            episode=ep, scheme=scheme, seed=seed,
            sum_rate=ep_rate / max(steps, 1),
            p_latency=delivered_in_time,
            reward=ep_reward / max(steps, 1)))
        if progress is not None:
            progress(scheme, seed, ep, result.episodes[-1])
        if (manifest.checkpoint_every and variant != agent_mod.VARIANT_MAB
                and (ep + 1) % manifest.checkpoint_every == 0):
            os.makedirs(manifest.output_dir, exist_ok=True)
            learner.save(os.path.join(
                manifest.output_dir, f"{scheme.lower()}_seed{seed}_ep{ep + 1}.ckpt"))
    result.converged_at = convergence_episode([r.reward for r in result.episodes])
    return result


def _randomize_surface_branches(idx: list[int], catalog, rng) -> None:
    """RANDOM schemes: surface branches uniform, spectrum/power still learned."""
    v, g = catalog.n_pairs, catalog.n_groups
    for k in range(v, v + 3 * g):
        idx[k] = int(rng.integers(catalog.branch_sizes[k]))


def run_algorithm1(manifest: ExperimentManifest,
                   beamform_effort: dict | None = None,
                   progress=None) -> list[RunResult]:
    results = []
    for scheme in manifest.schemes:
        for seed in manifest.seeds:
            results.append(run_scheme(manifest, scheme, seed,
                                      beamform_effort=beamform_effort,
                                      progress=progress))
    return results


def convergence_episode(rewards: list[float], window: int = 50,
                        rel_tol: float = 0.01) -> int | None:
    """First episode whose trailing window mean moved <1% vs the prior window."""
    r = np.asarray(rewards, dtype=float)
    for end in range(2 * window, len(r) + 1):
        recent = r[end - window: end].mean()
        prior = r[end - 2 * window: end - window].mean()
        scale = max(abs(prior), 1e-12)
        if abs(recent - prior) / scale < rel_tol:
            return end - 1
    return None


# -- brute force oracle ----------------------------------------------------

def brute_force_oracle(environment: env_mod.V2XEnv,
                       solve_beamformer: bool = False,
                       effort: dict | None = None) -> tuple[env_mod.ActionTuple, float]:
    """Exhaustively score every joint action from the current state.

    Refuses to enumerate joint spaces beyond one million actions.
    """
    catalog = environment.catalog
    if catalog.joint_cardinality > BRUTE_FORCE_CAP:
        raise SpaceTooLarge(
            f"{catalog.joint_cardinality} joint actions exceed the "
            f"{BRUTE_FORCE_CAP} enumeration cap")
    best_idx, best_reward = None, -np.inf
    snapshot = environment.snapshot()
    for flat in range(catalog.joint_cardinality):
        idx = _unflatten(flat, catalog.branch_sizes)
        action = env_mod.ActionTuple.from_indices(idx, catalog)
        environment.restore(snapshot)
        if solve_beamformer:
            sol = _solve_beamformers(environment, None, effort)
            if sol is not None:
                environment.set_beamformers(sol.p)
        transition = environment.step(action, redraw_fading=False)
        if transition.reward > best_reward:
            best_reward, best_idx = transition.reward, idx
    environment.restore(snapshot)
    return env_mod.ActionTuple.from_indices(best_idx, catalog), float(best_reward)


def _unflatten(flat: int, sizes: tuple[int, ...]) -> list[int]:
    idx = []
    for s in reversed(sizes):
        idx.append(flat % s)
        flat //= s
    return list(reversed(idx))


# -- deterministic exports -------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.10g}"


def export_csv(records: list[EpisodeRecord], path: str) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        lines.append(",".join([str(r.episode), r.scheme, str(r.seed),
                               _fmt(r.sum_rate), _fmt(r.p_latency),
                               _fmt(r.reward)]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _mean_ci95(values: np.ndarray) -> tuple[float, float]:
    mean = float(values.mean())
    if values.size < 2:
        return mean, 0.0
    half = 1.96 * float(values.std(ddof=1)) / np.sqrt(values.size)
    return mean, half


def aggregate_and_export(results: list[RunResult], manifest: ExperimentManifest,
                         tail_frac: float = 0.2) -> dict:
    """Write episodes.csv, summary.json, and per-scheme CDF samples."""
    out = manifest.output_dir
    os.makedirs(out, exist_ok=True)
    records = [r for run in results for r in run.episodes]
    export_csv(records, os.path.join(out, "episodes.csv"))

    summary: dict = {"fingerprint": manifest.fingerprint(),
                     "params": params_to_dict(manifest.params),
                     "schemes": {}}
    for scheme in manifest.schemes:
        runs = [r for r in results if r.scheme == scheme]
        if not runs:
            continue
        tail_rates, tail_rewards, tail_latency = [], [], []
        for run in runs:
            n_tail = max(1, int(len(run.episodes) * tail_frac))
            tail = run.episodes[-n_tail:]
            tail_rates.append(np.mean([e.sum_rate for e in tail]))
            tail_rewards.append(np.mean([e.reward for e in tail]))
            tail_latency.append(np.mean([e.p_latency for e in tail]))
        rate_mean, rate_ci = _mean_ci95(np.array(tail_rates))
        rew_mean, rew_ci = _mean_ci95(np.array(tail_rewards))
        lat_mean, lat_ci = _mean_ci95(np.array(tail_latency))
        summary["schemes"][scheme] = {
            "sum_rate_mean": rate_mean, "sum_rate_ci95": rate_ci,
            "reward_mean": rew_mean, "reward_ci95": rew_ci,
            "p_latency_mean": lat_mean, "p_latency_ci95": lat_ci,
            "converged_at": [run.converged_at for run in runs],
        }
        # CDF sample file: sorted tail-window per-episode sum rates
        samples = sorted(e.sum_rate for run in runs
                         for e in run.episodes[-max(1, int(len(run.episodes) * tail_frac)):])
        cdf_path = os.path.join(out, f"cdf_{scheme.lower()}.csv")
        with open(cdf_path, "w", newline="\n") as fh:
            fh.write("sum_rate,cdf\n")
            n = len(samples)
            for k, v in enumerate(samples, start=1):
                fh.write(f"{_fmt(v)},{_fmt(k / n)}\n")
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
