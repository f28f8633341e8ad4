"""Command-line entry points.

Every run is parameterized by a flat ``key=value`` config file plus
``--set key=value`` overrides, takes an explicit ``--seed``, and writes
under ``--out`` (default from the ``STARV2X_OUTPUT_ROOT`` environment
variable, falling back to the current directory).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import agent as agent_mod
from . import beamformer as bf
from . import env as env_mod
from . import harness
from . import star_ris
from .channel import all_effective_channels, channel_set_to_json, draw_channel_set
from .errors import StarV2XError
from .params import apply_overrides, default_params, load_config
from .scenario import drop_scenario, scenario_to_json

OUTPUT_ROOT_ENV = "STARV2X_OUTPUT_ROOT"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value parameter file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   dest="overrides", help="override one parameter")
    p.add_argument("--seed", type=int, required=True, help="master RNG seed")
    p.add_argument("--out", default=None,
                   help=f"output directory (default ${OUTPUT_ROOT_ENV} or '.')")


def _resolve_params(args):
    params = load_config(args.config) if args.config else default_params()
    if args.overrides:
        params = apply_overrides(params, args.overrides)
    return params


def _resolve_out(args) -> str:
    out = args.out or os.environ.get(OUTPUT_ROOT_ENV, ".")
    os.makedirs(out, exist_ok=True)
    return out


def _manifest(args, schemes, episodes=None, beamform_every=1):
    params = _resolve_params(args)
    return harness.ExperimentManifest(
        params=params, schemes=tuple(schemes), seeds=(args.seed,),
        episodes=episodes, beamform_every=beamform_every,
        output_dir=_resolve_out(args))


def _progress_printer(scheme, seed, ep, record):
    if ep % 10 == 0:
        print(f"[{scheme} seed={seed}] ep={ep} reward={record.reward:.4f} "
              f"sum_rate={record.sum_rate:.4g}", flush=True)


def cmd_train(args) -> int:
    manifest = _manifest(args, [args.scheme], episodes=args.episodes,
                         beamform_every=args.beamform_every)
    results = harness.run_algorithm1(
        manifest, progress=_progress_printer if args.verbose else None)
    harness.aggregate_and_export(results, manifest)
    print(f"wrote {manifest.output_dir}/episodes.csv "
          f"(fingerprint {manifest.fingerprint()})")
    return 0


def cmd_eval(args) -> int:
    """Greedy rollouts of a trained checkpoint, no exploration or learning."""
    params = _resolve_params(args)
    scn = drop_scenario(params, seed=args.seed)
    mode = star_ris.MODE_STAR if args.star else star_ris.MODE_REFLECT_ONLY
    environment = env_mod.V2XEnv(scn, params, ris_mode=mode)
    from .nn import load_checkpoint

    spec, net = load_checkpoint(args.checkpoint)
    cfg = agent_mod.AgentConfig(variant=agent_mod.VARIANT_DDQN_ATTN)
    learner = agent_mod.DDQNAgent(cfg, spec, seed=args.seed)
    learner.online = net
    learner.sync_target()
    rewards, rates = [], []
    for ep in range(args.episodes):
        state = environment.reset(seed=args.seed * 100_003 + ep)
        done, total, rate, steps = False, 0.0, 0.0, 0
        while not done:
            idx = learner.select_action(state.tokens, eps=0.0)
            t = environment.step(env_mod.ActionTuple.from_indices(idx,
                                                                  environment.catalog))
            total += t.reward
            rate += environment.last_report.sum_rate_i
            state, done, steps = t.next_state, t.done, steps + 1
        rewards.append(total / steps)
        rates.append(rate / steps)
    print(json.dumps({"episodes": args.episodes,
                      "reward_mean": float(np.mean(rewards)),
                      "sum_rate_mean": float(np.mean(rates))}, sort_keys=True))
    return 0


def cmd_benchmark(args) -> int:
    schemes = [s.strip().upper() for s in args.schemes.split(",") if s.strip()]
    manifest = _manifest(args, schemes, episodes=args.episodes,
                         beamform_every=args.beamform_every)
    results = harness.run_algorithm1(
        manifest, progress=_progress_printer if args.verbose else None)
    summary = harness.aggregate_and_export(results, manifest)
    for scheme in schemes:
        s = summary["schemes"][scheme]
        print(f"{scheme}: sum_rate={s['sum_rate_mean']:.6g} "
              f"+/-{s['sum_rate_ci95']:.3g} reward={s['reward_mean']:.6g}")
    return 0


def cmd_bruteforce(args) -> int:
    params = _resolve_params(args)
    scn = drop_scenario(params, seed=args.seed)
    environment = env_mod.V2XEnv(scn, params)
    environment.reset(seed=args.seed)
    action, best = harness.brute_force_oracle(environment,
                                              solve_beamformer=args.with_beamformer)
    print(json.dumps({"best_action": list(action.to_indices()),
                      "best_reward": best}, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    """Finite-difference check of the network gradients at a random point."""
    from .autodiff import Tensor, backward, zero_grad
    from .nn import NetworkSpec, forward, init_params

    rng = np.random.default_rng(args.seed)
    spec = NetworkSpec(token_count=4, token_features=6, embed_dim=8,
                       n_res_blocks=1, attention_heads=2, head_dim=4,
                       fusion_width=8, head_sizes=(3, 3))
    params = init_params(spec, rng)
    tokens = rng.standard_normal((4, 6))
    worst = 0.0
    for name, tensor in params.items():
        zero_grad(params)
        heads = forward(spec, params, tokens)
        loss = None
        for h in heads:
            term = (h * h).sum()
            loss = term if loss is None else loss + term
        backward(loss)
        analytic = tensor.grad.copy()
        flat = tensor.data.reshape(-1)
        k = int(rng.integers(flat.size))
        eps = 1e-6
        orig = flat[k]
        for sign, store in ((1.0, "hi"), (-1.0, "lo")):
            flat[k] = orig + sign * eps
            heads = forward(spec, params, tokens)
            val = sum(float((h.data**2).sum()) for h in heads)
            if store == "hi":
                hi = val
            else:
                lo = val
        flat[k] = orig
        fd = (hi - lo) / (2 * eps)
        an = analytic.reshape(-1)[k]
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        worst = max(worst, rel)
        print(f"{name}: analytic={an:.8g} fd={fd:.8g} rel={rel:.2e}")
    ok = worst < args.tol
    print(f"worst relative error {worst:.3e} -> {'OK' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_scenario_dump(args) -> int:
    params = _resolve_params(args)
    scn = drop_scenario(params, seed=args.seed)
    text = scenario_to_json(scn)
    if args.out:
        path = os.path.join(_resolve_out(args), "scenario.json")
        with open(path, "w") as fh:
            fh.write(text + "\n")
        print(path)
    else:
        print(text)
    return 0


def cmd_channel_probe(args) -> int:
    params = _resolve_params(args)
    scn = drop_scenario(params, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    cs = draw_channel_set(scn, params, rng)
    if args.stats:
        out = {
            "direct_mean_power": float(np.mean(np.abs(cs.h_direct) ** 2)),
            "vue_ris_mean_power": float(np.mean(np.abs(cs.h_vue_ris) ** 2)),
            "ris_bs_rank1_gain": float(np.linalg.norm(cs.H_ris_bs) ** 2),
            "v2v_mean_power": float(np.mean(np.abs(cs.h_v2v) ** 2)),
        }
        print(json.dumps(out, sort_keys=True))
    else:
        print(channel_set_to_json(cs))
    return 0


def cmd_metrics_eval(args) -> int:
    params = _resolve_params(args)
    scn = drop_scenario(params, seed=args.seed)
    environment = env_mod.V2XEnv(scn, params)
    environment.reset(seed=args.seed)
    t = environment.step(env_mod.identity_action(environment.catalog,
                                                 power_choice=args.power_level))
    report = environment.last_report
    print(json.dumps({"reward": t.reward,
                      "sum_rate_i": report.sum_rate_i,
                      "rate_v": report.rate_v.tolist(),
                      "qos_ok": report.qos_ok.tolist(),
                      "outage_ok": report.outage_ok.tolist()}, sort_keys=True))
    return 0


def cmd_beamform_solve(args) -> int:
    params = _resolve_params(args)
    scn = drop_scenario(params, seed=args.seed)
    environment = env_mod.V2XEnv(scn, params)
    environment.reset(seed=args.seed)
    cs, ris = environment.state.channels, environment.state.ris
    h = all_effective_channels(cs, ris)
    g_v = np.zeros(params.n_vues_i)
    v2v_signal = environment.current_v2v_powers() * np.abs(cs.h_v2v) ** 2
    sol = bf.solve_for_allocation(h, g_v, environment.state.alloc_a,
                                  v2v_signal, params)
    print(json.dumps({"status": sol.status,
                      "objective": sol.objective,
                      "iterate_trace": sol.iterate_trace,
                      "power_used": float(np.linalg.norm(sol.p) ** 2)},
                     sort_keys=True))
    return 0


def cmd_report(args) -> int:
    from .report import render_all

    out = _resolve_out(args)
    for path in render_all(out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="starv2x",
        description="STAR-RIS assisted V2X resource allocation laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one scheme")
    _add_common(p)
    p.add_argument("--scheme", default=harness.SCHEME_STAR_PROPOSED,
                   choices=harness.ALL_SCHEMES)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--beamform-every", type=int, default=1,
                   help="re-solve the beamformer every N steps (0: once per episode)")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy rollout of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--star", action="store_true", default=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="run several schemes and compare")
    _add_common(p)
    p.add_argument("--schemes", default=",".join(harness.ALL_SCHEMES))
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--beamform-every", type=int, default=1)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("bruteforce", help="exhaustive one-step action search")
    _add_common(p)
    p.add_argument("--with-beamformer", action="store_true")
    p.set_defaults(func=cmd_bruteforce)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(p)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("scenario", help="scenario tools")
    scen_sub = p.add_subparsers(dest="scenario_command", required=True)
    pd = scen_sub.add_parser("dump", help="drop and print a scenario")
    _add_common(pd)
    pd.set_defaults(func=cmd_scenario_dump)

    p = sub.add_parser("channel", help="channel tools")
    ch_sub = p.add_subparsers(dest="channel_command", required=True)
    pp = ch_sub.add_parser("probe", help="draw one channel set")
    _add_common(pp)
    pp.add_argument("--stats", action="store_true",
                    help="print aggregate statistics instead of raw gains")
    pp.set_defaults(func=cmd_channel_probe)

    p = sub.add_parser("metrics", help="metric tools")
    me_sub = p.add_subparsers(dest="metrics_command", required=True)
    pe = me_sub.add_parser("eval", help="score one no-op step")
    _add_common(pe)
    pe.add_argument("--power-level", type=int, default=0)
    pe.set_defaults(func=cmd_metrics_eval)

    p = sub.add_parser("beamform", help="beamformer tools")
    bf_sub = p.add_subparsers(dest="beamform_command", required=True)
    ps = bf_sub.add_parser("solve", help="solve the continuous subproblem once")
    _add_common(ps)
    ps.set_defaults(func=cmd_beamform_solve)

    p = sub.add_parser("report", help="render figures from exported CSVs")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StarV2XError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
