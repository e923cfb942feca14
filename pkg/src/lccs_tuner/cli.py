"""Command-line interface: ``lccs-tuner {simulate,sweep,train,evaluate,compare}``.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure,
3 training abort.  Each command writes one self-contained output directory
(see ``docs/formats.md``).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import agent as ag
from .config import (ConfigError, RunConfig, build_controller, build_driver, build_scenario,
                     event_times, load_config, load_preset, parse_quantity, preset_names,
                     resolved_text)
from .simulator import (ClosedLoop, Metrics, NumericalBlowup, Unsettled, frequency_sweep,
                        recommended_sign, segment_metrics)

log = logging.getLogger("lccs_tuner")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ABORT = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "LCCS_TUNER_OUTPUT_ROOT"
DEFAULT_PRESET = {"simulate": "table2_85khz", "sweep": "table2_85khz", "train": "fig9",
                  "evaluate": "fig9", "compare": "fig9"}
COMPARE_COLUMNS = ("algo", "seeds", "final_reward_mean", "final_reward_var", "kp", "ki",
                   "eval_reward", "all_settled")
EVAL_SEED_OFFSET = 1000


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _seconds(text):
    try:
        return parse_quantity(text, "s")
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _hertz(text):
    try:
        return parse_quantity(text, "Hz")
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _gains(text):
    parts = text.replace(" ", "").split(",")
    try:
        kp, ki = (float(v) for v in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected KP,KI, got {text!r}") from None
    if not (kp >= 0 and ki >= 0 and math.isfinite(kp) and math.isfinite(ki)):
        raise argparse.ArgumentTypeError("gains must be finite and non-negative")
    return kp, ki


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("config", nargs="?", help="configuration file (default: bundled preset)")
    common.add_argument("--preset", help=f"bundled configuration name ({', '.join(preset_names())})")
    common.add_argument("--out", type=Path, help=f"output directory (default: ${OUTPUT_ROOT_ENV}"
                        "/<command>-<config>-seed<seed>, root defaults to ./runs)")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="lccs-tuner", description="LCC-S converter simulation and PI gain tuning")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="open- or closed-loop time-domain run")
    s.add_argument("--duration", type=_seconds, help="override scenario duration (e.g. 10ms)")
    s.add_argument("--gains", type=_gains, help="KP,KI for a closed-loop run")

    s = sub.add_parser("sweep", parents=[common], help="open-loop steady output versus frequency")
    s.add_argument("--f-min", type=_hertz, default=79e3)
    s.add_argument("--f-max", type=_hertz, default=90e3)
    s.add_argument("--points", type=int, default=12)
    s.add_argument("--settle", type=_seconds, default=0.06)
    s.add_argument("--jobs", type=int, default=1)

    for name, text in (("train", "tune PI gains with TD3 or DDPG"),
                       ("compare", "TD3 versus DDPG versus fixed gains")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--algo", choices=ag.MODES, help="learner (train only)")
        s.add_argument("--episodes", type=int)
        s.add_argument("--horizon", type=_seconds, help="episode length (e.g. 20ms)")
        if name == "compare":
            s.add_argument("--seeds", type=int, default=3, help="number of matched seeds")
            s.add_argument("--gains", type=_gains, default=ag.PUBLISHED_GAINS,
                           help="fixed reference gains KP,KI")

    s = sub.add_parser("evaluate", parents=[common], help="run the configured scenario with given gains")
    s.add_argument("--gains", type=_gains, help="KP,KI (default: [controller] section)")
    s.add_argument("--duration", type=_seconds)
    return p


# -- helpers ------------------------------------------------------------------------

def _load(args) -> RunConfig:
    if args.config and args.preset:
        raise ConfigError("give either a config file or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = load_preset(args.preset or DEFAULT_PRESET[args.command])
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, agent=replace(cfg.agent, seed=args.seed))
    if getattr(args, "duration", None) is not None:
        if args.duration < 0:
            raise ConfigError("--duration must be >= 0")
        cfg = replace(cfg, scenario=replace(cfg.scenario, duration=args.duration))
    agent_changes = {}
    if getattr(args, "algo", None):
        agent_changes["mode"] = args.algo
    if getattr(args, "episodes", None) is not None:
        agent_changes["episodes"] = args.episodes
    if getattr(args, "horizon", None) is not None:
        agent_changes["horizon"] = args.horizon
    if agent_changes:
        try:
            cfg = replace(cfg, agent=replace(cfg.agent, **agent_changes))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    if args.out is not None:
        out = args.out
    else:
        stem = Path(args.config).stem if args.config else (args.preset or DEFAULT_PRESET[args.command])
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        tag = f"-{cfg.agent.mode}" if args.command == "train" else ""
        out = root / f"{args.command}-{stem}{tag}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(resolved_text(cfg), encoding="utf-8")
    return out


def _write_lines(path: Path, lines) -> None:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _metrics_block(title: str, m: Metrics, extra=()) -> list:
    lines = [f"[{title}]"] + m.to_text().splitlines()
    lines += [f"{k} = {v}" for k, v in extra]
    return lines + [""]


def _loop(cfg: RunConfig, gains=None) -> ClosedLoop:
    return ClosedLoop(build_scenario(cfg), build_driver(cfg), build_controller(cfg, gains),
                      cfg.converter, variant=cfg.model.variant, logic=cfg.model.logic,
                      decimation=cfg.output.decimation)


def _segment_lines(cfg: RunConfig, loop: ClosedLoop, reward_total=None) -> list:
    w = loop.waveforms()
    edges = event_times(cfg)
    x0 = float(loop.scenario.initial_state[6])
    segs = segment_metrics(w, edges, cfg.scenario.vref, y0=x0) if cfg.scenario.duration > 0 else []
    lines = []
    for i, (m, a, b) in enumerate(zip(segs, edges[:-1], edges[1:]), start=1):
        lines += _metrics_block(f"segment {i}", m, [("t_start", repr(a)), ("t_end", repr(b))])
    summary = [("segments", str(len(segs))),
               ("all_settled", "true" if segs and all(m.settled for m in segs) else "false")]
    if reward_total is not None:
        summary.append(("episode_reward", repr(float(reward_total))))
    modes = sorted(set(int(v) for v in w.mode)) if len(w) else []
    summary.append(("modes_seen", " ".join(map(str, modes))))
    return lines + ["[summary]"] + [f"{k} = {v}" for k, v in summary]


# -- commands -----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load(args)
    if args.gains is not None:
        cfg = replace(cfg, scenario=replace(cfg.scenario, loop="closed", driver="frequency"))
    loop = _loop(cfg, args.gains)
    out = _out_dir(args, cfg)
    loop.run_to_end()
    w = loop.waveforms()
    w.to_csv(out / "waveforms.csv")
    if loop.controller is not None:
        w.control_to_csv(out / "control.csv")
    _write_lines(out / "metrics.txt", _segment_lines(cfg, loop))
    print(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.points < 1:
        raise ConfigError("--points must be >= 1")
    if not args.f_min <= args.f_max:
        raise ConfigError("--f-min must not exceed --f-max")
    if args.points > 1 and args.f_min == args.f_max:
        raise ConfigError("several points need f_min < f_max")
    f_list = np.linspace(args.f_min, args.f_max, args.points)
    out = _out_dir(args, cfg)
    res = frequency_sweep(cfg.converter, f_list, args.settle, variant=cfg.model.variant,
                          logic=cfg.model.logic, dt=cfg.scenario.dt, jobs=args.jobs)
    res.to_csv(out / "sweep.csv")
    lines = ["[sweep]", f"points = {len(res)}", f"peak_frequency = {res.peak_frequency()!r}",
             f"peak_vout = {float(res.vout.max())!r}"]
    if len(res) > 1:
        f_base = cfg.controller.f_base
        lines += [f"slope_at_f_base = {res.slope_at(f_base)!r}",
                  f"recommended_sign = {recommended_sign(res, f_base)}"]
        for lo, hi, sgn in res.segments():
            lines.append(f"branch = {lo!r} {hi!r} {'rising' if sgn > 0 else 'falling'}")
    _write_lines(out / "sweep.txt", lines)
    print(out)
    return EXIT_OK


def _train_one(cfg: RunConfig, out: Path, tag: str = ""):
    env = ag.TuningEnv(cfg.converter, cfg.agent.horizon, bounds=cfg.bounds,
                       obs_scale=cfg.agent.obs_scale, noise=cfg.agent.noise,
                       f_base=cfg.controller.f_base, dt=cfg.scenario.dt,
                       control_period=cfg.scenario.control_period, variant=cfg.model.variant,
                       logic=cfg.model.logic, start=cfg.agent.start)
    train_path = out / f"train{tag}.csv"
    timing_path = out / f"timing{tag}.csv"
    with open(train_path, "w", newline="\n") as fh, open(timing_path, "w", newline="\n") as th:
        fh.write(ag.EpisodeLog.HEADER + "\n")
        th.write("episode,wall_time\n")

        def record(entry):
            fh.write(entry.csv_row() + "\n")
            th.write(f"{entry.episode},{entry.wall_time!r}\n")
            fh.flush()
            log.info("%s episode %d reward %.6g", cfg.agent.mode, entry.episode, entry.reward)

        bundle, logs = ag.train(cfg.agent, env, callback=record)
    return bundle, logs


def _train_summary(bundle, logs, bounds) -> list:
    mean, var = ag.trailing_stats(bundle.reward_history)
    kp, ki = ag.deployment_gains(bundle, bounds)
    end = (logs[-1].kp, logs[-1].ki) if logs else (math.nan, math.nan)
    return ["[train]", f"algo = {bundle.config.mode}", f"episodes = {len(bundle.reward_history)}",
            f"critic_updates = {bundle.critic_updates}", f"actor_updates = {bundle.actor_updates}",
            f"critics = {2 if bundle.twin else 1}",
            f"final_window_reward_mean = {mean!r}", f"final_window_reward_var = {var!r}",
            f"deploy_kp = {kp!r}", f"deploy_ki = {ki!r}",
            f"episode_end_kp = {end[0]!r}", f"episode_end_ki = {end[1]!r}"]


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    try:
        bundle, logs = _train_one(cfg, out)
    except ag.TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    ag.save_bundle(bundle, out / "checkpoint.npz")
    _write_lines(out / "summary.txt", _train_summary(bundle, logs, cfg.bounds))
    print(out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    gains = args.gains or (cfg.controller.kp, cfg.controller.ki)
    cfg = replace(cfg, scenario=replace(cfg.scenario, loop="closed", driver="frequency"),
                  controller=replace(cfg.controller, kp=gains[0], ki=gains[1]))
    loop = _loop(cfg, gains)
    out = _out_dir(args, cfg)
    total = ag.rollout_reward(loop)
    w = loop.waveforms()
    w.to_csv(out / "waveforms.csv")
    w.control_to_csv(out / "control.csv")
    _write_lines(out / "metrics.txt", _segment_lines(cfg, loop, total))
    print(out)
    return EXIT_OK


def _evaluate_row(cfg: RunConfig, gains, seed: int):
    eval_cfg = replace(cfg, seed=seed + EVAL_SEED_OFFSET,
                       scenario=replace(cfg.scenario, loop="closed", driver="frequency"))
    loop = _loop(eval_cfg, gains)
    total = ag.rollout_reward(loop)
    w = loop.waveforms()
    segs = segment_metrics(w, event_times(eval_cfg), cfg.scenario.vref,
                           y0=float(loop.scenario.initial_state[6]))
    return total, segs


def cmd_compare(args) -> int:
    cfg = _load(args)
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    out = _out_dir(args, cfg)
    base_seed = cfg.seed
    seeds = [base_seed + i for i in range(args.seeds)]
    rows = {"td3": [], "ddpg": [], "published": []}
    detail = []
    for algo in ("td3", "ddpg"):
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed, agent=replace(cfg.agent, mode=algo, seed=seed))
            try:
                bundle, logs = _train_one(run_cfg, out, tag=f"_{algo}_seed{seed}")
            except ag.TrainingAborted as exc:
                print(f"{algo} seed {seed} aborted: {exc}", file=sys.stderr)
                return EXIT_ABORT
            mean, var = ag.trailing_stats(bundle.reward_history)
            gains = ag.deployment_gains(bundle, cfg.bounds)
            total, segs = _evaluate_row(cfg, gains, seed)
            rows[algo].append((mean, var, gains, total, segs))
            detail.append((algo, seed, mean, var, gains, total, segs))
    for seed in seeds:
        total, segs = _evaluate_row(cfg, args.gains, seed)
        rows["published"].append((math.nan, math.nan, args.gains, total, segs))
        detail.append(("published", seed, math.nan, math.nan, args.gains, total, segs))

    n_seg = len(event_times(cfg)) - 1
    seg_cols = [f"seg{i}_{k}" for i in range(1, n_seg + 1)
                for k in ("settling_time", "overshoot_pct", "steady_mean")]
    header = ",".join(COMPARE_COLUMNS + tuple(seg_cols))

    def seg_values(seg_lists):
        vals = []
        for i in range(n_seg):
            for key in ("settling_time_2pct", "overshoot_pct", "steady_mean"):
                vals.append(float(np.mean([getattr(s[i], key) for s in seg_lists])))
        return vals

    lines = [header]
    for algo, rs in rows.items():
        mean = float(np.mean([r[0] for r in rs]))
        var = float(np.mean([r[1] for r in rs]))
        kp = float(np.mean([r[2][0] for r in rs]))
        ki = float(np.mean([r[2][1] for r in rs]))
        ev = float(np.mean([r[3] for r in rs]))
        settled = all(all(m.settled for m in r[4]) for r in rs)
        vals = [algo, str(len(rs))] + [repr(v) for v in (mean, var, kp, ki, ev)]
        vals += ["true" if settled else "false"] + [repr(v) for v in seg_values([r[4] for r in rs])]
        lines.append(",".join(vals))
    _write_lines(out / "compare.csv", lines)

    det = ["algo,seed,final_reward_mean,final_reward_var,kp,ki,eval_reward,all_settled"]
    for algo, seed, mean, var, gains, total, segs in detail:
        det.append(",".join([algo, str(seed), repr(mean), repr(var), repr(float(gains[0])),
                             repr(float(gains[1])), repr(float(total)),
                             "true" if all(m.settled for m in segs) else "false"]))
    _write_lines(out / "compare_seeds.csv", det)
    print(out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "train": cmd_train,
            "evaluate": cmd_evaluate, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowup as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Unsettled as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
