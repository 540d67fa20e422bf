"""Operator command line tying the pipeline together.

Subcommand style: gen-data, train-answer, train-baseline, train-sim,
train-reg, eval, serve, export-fixtures. Parameters come from an optional
KEY=VALUE config file overridden by flags; every artifact embeds the producing
command, the resolved-config hash, and the seed.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np
import torch


def load_config_file(path: str) -> dict:
    """KEY=VALUE lines; '#' starts a comment; values stay strings."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected KEY=VALUE, got {raw!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Config file values override parser defaults; explicit flags win over both."""
    cfg = vars(args).copy()
    cfg.pop("func", None)
    file_vals = load_config_file(args.config) if args.config else {}
    defaults = {a.dest: a.default for a in parser._actions}
    for key, raw in file_vals.items():
        if key not in cfg:
            raise ValueError(f"unknown config key {key!r}")
        if cfg[key] == defaults.get(key):  # not set on the command line
            cfg[key] = type_of(defaults.get(key))(raw)
    cfg.pop("config", None)
    return cfg


def type_of(default):
    if isinstance(default, bool):
        return lambda s: s.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str)
                          .encode()).hexdigest()[:16]


def artifact_meta(command: str, cfg: dict) -> dict:
    return {"command": command, "config": {k: str(v) for k, v in cfg.items()},
            "config_hash": config_hash(cfg), "seed": cfg.get("seed", 0)}


def log_resolved(command: str, cfg: dict) -> None:
    print(f"[{command}] resolved config ({config_hash(cfg)}):")
    for key in sorted(cfg):
        print(f"  {key} = {cfg[key]}")


# --- subcommands ---------------------------------------------------------------


def cmd_gen_data(cfg: dict) -> int:
    from . import synthetic

    persistence = cfg["persistence"] if cfg["persistence"] > 0 else None
    rows = synthetic.generate_dataset(cfg["users"], cfg["trials"], seed=cfg["seed"],
                                      base_rt_range=(cfg["rt_min"], cfg["rt_max"]),
                                      pressure_persistence=persistence)
    synthetic.save_dataset(cfg["out"], rows)
    print(f"wrote {len(rows)} rows to {cfg['out']}")
    return 0


def cmd_train_answer(cfg: dict) -> int:
    from .answer_model import AnswerAgent
    from .questions import QuestionGenerator, all_questions, load_bank

    if cfg["bank"]:
        bank = load_bank(cfg["bank"])
    elif cfg["full_space"]:
        bank = list(all_questions())
    else:
        bank = QuestionGenerator(seed=cfg["seed"]).generate_bank(cfg["bank_size"])
    agent = AnswerAgent(seed=cfg["seed"], epochs=cfg["epochs"]).fit(bank)
    agent.save(cfg["out"], meta=artifact_meta("train-answer", cfg))
    rep = agent.report_
    print(f"train accuracy {rep.final_train_accuracy:.4f} after {rep.epochs_run} epochs")
    print(f"saved {cfg['out']}")
    return 0


def cmd_train_baseline(cfg: dict) -> int:
    from .answer_model import AnswerAgent
    from .baseline import BaselineModel
    from .sim_pipeline import rows_to_questions
    from .synthetic import load_dataset

    rows = load_dataset(cfg["data"])
    agent = AnswerAgent.load(cfg["answer"])
    feats = agent.extract_features(rows_to_questions(rows))
    model = BaselineModel(seed=cfg["seed"]).fit(
        feats, np.array([r["trial"] for r in rows]),
        np.array([r["choice"] for r in rows]),
        np.array([r["rt"] for r in rows]))
    model.save(cfg["out"], meta=artifact_meta("train-baseline", cfg))
    print(f"holdout report: {model.report_}")
    print(f"saved {cfg['out']}")
    return 0


def cmd_train_sim(cfg: dict) -> int:
    from .answer_model import AnswerAgent
    from .baseline import BaselineModel
    from .ppo import PPOConfig, SimActorCritic, curve_to_csv, train
    from .sim_pipeline import SimTrainingEnv, build_sim_dataset, evaluate_sim
    from .synthetic import load_dataset

    rows = load_dataset(cfg["data"])
    agent = AnswerAgent.load(cfg["answer"])
    baseline = BaselineModel.load(cfg["baseline"])
    ds = build_sim_dataset(rows, agent, baseline)
    torch.manual_seed(cfg["seed"])
    policy = SimActorCritic()
    pcfg = PPOConfig(total_steps=cfg["steps"], seed=cfg["seed"], lr=cfg["lr"],
                     rollout_len=512, n_envs=8, use_gae=True, gae_lambda=1.0,
                     anneal_lr=cfg["anneal_lr"])
    result = train(lambda i: SimTrainingEnv(ds, seed=cfg["seed"] * 131 + i),
                   policy, pcfg)
    policy.save(cfg["out"], meta=artifact_meta("train-sim", cfg))
    if cfg["curve"]:
        curve_to_csv(cfg["curve"], result.curve)
    report = evaluate_sim(ds, policy)
    print(f"training-set MAPE: sim {report['sim_mape']:.4f}, "
          f"regressor {report['svr_mape']:.4f}")
    print(f"saved {cfg['out']}")
    return 0


def cmd_train_reg(cfg: dict) -> int:
    from .ppo import PPOConfig, VectorActorCritic, curve_to_csv, train
    from .regulation import OBS_DIM, RegulationConfig, RegulationEnv

    if cfg["against"] == "sim":
        from .answer_model import AnswerAgent
        from .baseline import BaselineModel
        from .ppo import load_policy
        from .sim_pipeline import SimulatedUserModel
        from .questions import QuestionGenerator

        agent = AnswerAgent.load(cfg["answer"])
        baseline = BaselineModel.load(cfg["baseline"])
        simpol = load_policy(cfg["sim"])
        probe = SimulatedUserModel(agent, baseline, simpol)
        gen = QuestionGenerator(seed=cfg["seed"] + 17)
        r_init = round(float(np.mean([probe.respond(gen.generate(), False)[1]
                                      for _ in range(100)])), 3)

        def factory(i):
            user = SimulatedUserModel(agent, baseline, simpol)
            return RegulationEnv(lambda ep: (user.reset() or user),
                                 RegulationConfig(n_trials=cfg["trials"]),
                                 r_init_s=r_init, seed=cfg["seed"] * 977 + i)
    elif cfg["against"] == "synthetic":
        from .synthetic import SyntheticUser, SyntheticUserConfig, measure_baseline_rt

        ucfg = SyntheticUserConfig(rt_noise_s=cfg["noise"])
        r_init = measure_baseline_rt(ucfg, seed=cfg["seed"] + 1)

        def factory(i):
            return RegulationEnv(lambda ep: SyntheticUser(ucfg, seed=ep),
                                 RegulationConfig(n_trials=cfg["trials"]),
                                 r_init_s=r_init, seed=cfg["seed"] * 977 + i)
    else:
        raise ValueError("--against must be 'sim' or 'synthetic'")

    print(f"reference no-pressure RT: {r_init:.3f} s")
    torch.manual_seed(cfg["seed"])
    policy = VectorActorCritic(OBS_DIM, action_head="binary")
    with torch.no_grad():
        policy.actor_head.bias.fill_(-0.4)  # start near pressure-off
    pcfg = PPOConfig(total_steps=cfg["steps"], seed=cfg["seed"],
                     rollout_len=4000, n_envs=8, minibatch_size=1000,
                     update_epochs=30, gamma=0.9, use_gae=True, gae_lambda=0.9,
                     anneal_lr=True, entropy_coef=0.02, entropy_off_frac=0.6)
    result = train(factory, policy, pcfg)
    policy.save(cfg["out"], meta=artifact_meta("train-reg", cfg))
    if cfg["curve"]:
        curve_to_csv(cfg["curve"], result.curve)
    tail = [round(c[1], 2) for c in result.curve[-3:]]
    print(f"episode-return tail: {tail}")
    print(f"saved {cfg['out']}")
    return 0


def cmd_eval(cfg: dict) -> int:
    from . import metrics
    from .ppo import load_policy
    from .questions import QuestionGenerator
    from .regulation import RegulationTracker
    from .synthetic import SyntheticUser, measure_baseline_rt, sample_user_config

    policy = load_policy(cfg["reg"]) if cfg["reg"] else None
    gen_t = torch.Generator().manual_seed(cfg["seed"])

    def make_decider(name, seed):
        rng = np.random.default_rng(seed)
        if name == "rl":
            if policy is None:
                raise ValueError("--reg checkpoint required for the rl policy")
            return lambda obs: bool(policy.act({"x": obs["x"][None]},
                                               gen_t)[0][0] > 0.5)
        if name == "random":
            return lambda obs: bool(rng.random() < 0.5)
        if name == "none":
            return lambda obs: False
        if name == "always":
            return lambda obs: True
        raise ValueError(f"unknown policy {name!r}")

    policies = ["rl", "random", "none", "always"] if cfg["reg"] else \
               ["random", "none", "always"]
    rng = np.random.default_rng(cfg["seed"])
    episodes = []
    for _ in range(cfg["episodes"]):
        ucfg = sample_user_config(rng)
        seed = int(rng.integers(2**31))
        episodes.append((ucfg, seed))

    report = {}
    for name in policies:
        reductions, trials_by_ep = [], []
        for idx, (ucfg, seed) in enumerate(episodes):
            r_init = measure_baseline_rt(ucfg, seed=seed + 1)
            user = SyntheticUser(ucfg, seed=seed)
            qgen = QuestionGenerator(seed=seed + 2)
            tracker = RegulationTracker(r_init)
            decide = make_decider(name, seed + 3)
            trials = []
            for _ in range(cfg["trials"]):
                on = decide(tracker.observation())
                q = qgen.generate()
                choice, rt = user.respond(q, on)
                tracker.record(rt)
                trials.append(metrics.Trial(rt_s=rt, correct=True, pressure_on=on))
            valid = [t.rt_s for t in trials if t.valid]
            reductions.append((r_init - float(np.mean(valid))) / r_init)
            trials_by_ep.append(trials)
        blocks = metrics.block_stats(trials_by_ep[0])
        report[name] = {
            "mean_relative_reduction": float(np.mean(reductions)),
            "feedback_pct_blocks_ep0": [round(x, 3) for x in blocks.feedback_pct],
        }
        print(f"{name:>7}: mean relative RT reduction "
              f"{report[name]['mean_relative_reduction']:+.4f}; "
              f"feedback % per block (episode 0) "
              f"{report[name]['feedback_pct_blocks_ep0']}")
    if cfg["out"]:
        with open(cfg["out"], "w") as f:
            json.dump({"meta": artifact_meta("eval", cfg), "report": report},
                      f, indent=2, sort_keys=True)
        print(f"saved {cfg['out']}")
    return 0


def cmd_serve(cfg: dict) -> int:
    import uvicorn

    from .ppo import load_policy
    from .service import ServiceConfig, create_app

    policy = load_policy(cfg["reg"]) if cfg["reg"] else None
    app = create_app(ServiceConfig(data_dir=cfg["data_dir"],
                                   rest_scale=cfg["rest_scale"]), policy)
    uvicorn.run(app, host=cfg["host"], port=cfg["port"], log_level="warning")
    return 0


def cmd_export_fixtures(cfg: dict) -> int:
    from .stimulus import StimulusConfig, export_fill_contract

    export_fill_contract(cfg["out"], StimulusConfig(), t_max_s=cfg["t_max"])
    print(f"saved {cfg['out']}")
    return 0


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pressureloop")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, configure):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="KEY=VALUE config file")
        p.add_argument("--seed", type=int, default=0)
        configure(p)
        p.set_defaults(func=fn, _parser=p)
        return p

    add("gen-data", cmd_gen_data, lambda p: [
        p.add_argument("--users", type=int, default=50),
        p.add_argument("--trials", type=int, default=500),
        p.add_argument("--persistence", type=float, default=0.0,
                       help="per-trial probability of keeping the pressure flag "
                            "(0 = independent coin flips)"),
        p.add_argument("--rt-min", type=float, default=2.0,
                       help="lower bound of the sampled per-user base response time"),
        p.add_argument("--rt-max", type=float, default=4.0,
                       help="upper bound of the sampled per-user base response time"),
        p.add_argument("--out", default="dataset.csv")])

    add("train-answer", cmd_train_answer, lambda p: [
        p.add_argument("--bank", default=None, help="question bank CSV"),
        p.add_argument("--bank-size", type=int, default=5000),
        p.add_argument("--full-space", action="store_true",
                       help="train on every well-formed question"),
        p.add_argument("--epochs", type=int, default=32),
        p.add_argument("--out", default="answer.npz")])

    add("train-baseline", cmd_train_baseline, lambda p: [
        p.add_argument("--data", required=True),
        p.add_argument("--answer", required=True),
        p.add_argument("--out", default="baseline.npz")])

    add("train-sim", cmd_train_sim, lambda p: [
        p.add_argument("--data", required=True),
        p.add_argument("--answer", required=True),
        p.add_argument("--baseline", required=True),
        p.add_argument("--steps", type=int, default=50000),
        p.add_argument("--lr", type=float, default=3e-4),
        p.add_argument("--anneal-lr", action="store_true",
                       help="decay the learning rate linearly to zero"),
        p.add_argument("--curve", default=None),
        p.add_argument("--out", default="sim_policy.npz")])

    add("train-reg", cmd_train_reg, lambda p: [
        p.add_argument("--against", choices=("sim", "synthetic"), default="sim"),
        p.add_argument("--answer", default=None),
        p.add_argument("--baseline", default=None),
        p.add_argument("--sim", default=None),
        p.add_argument("--noise", type=float, default=0.0,
                       help="synthetic-user RT noise when --against synthetic"),
        p.add_argument("--trials", type=int, default=100),
        p.add_argument("--steps", type=int, default=50000),
        p.add_argument("--curve", default=None),
        p.add_argument("--out", default="reg_policy.npz")])

    add("eval", cmd_eval, lambda p: [
        p.add_argument("--reg", default=None),
        p.add_argument("--episodes", type=int, default=10),
        p.add_argument("--trials", type=int, default=100),
        p.add_argument("--out", default=None)])

    add("serve", cmd_serve, lambda p: [
        p.add_argument("--reg", default=None),
        p.add_argument("--data-dir", default="sessions"),
        p.add_argument("--rest-scale", type=float, default=1.0),
        p.add_argument("--host", default="127.0.0.1"),
        p.add_argument("--port", type=int, default=8000)])

    add("export-fixtures", cmd_export_fixtures, lambda p: [
        p.add_argument("--t-max", type=float, default=20.0),
        p.add_argument("--out", default="fill_contract.json")])

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args, args._parser)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cfg.pop("_parser", None)
    cfg.pop("command", None)
    log_resolved(args.command, cfg)
    t0 = time.time()
    try:
        code = args.func(cfg)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - operator-facing runtime failures
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    print(f"done in {time.time() - t0:.1f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())
