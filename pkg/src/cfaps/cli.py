"""Command-line harness: pretrain / train / eval / bench / sweep.

All randomness in a run flows from the config's rng_seed through the
counter-based stream splitter, so a rerun with the same manifest
reproduces its CSVs exactly. Training writes periodic checkpoints and
can resume after a kill with a continuous CSV.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from .baselines import (
    DatasetError,
    generate_pretraining_dataset,
    k_strongest_policy,
    read_dataset,
    write_dataset,
)
from .channel import ChannelError
from .configio import RunConfig, load_config
from .env import EnvError, evaluate_policy
from .manifest import RunManifest
from .mlp import MlpSpec, init_mlp_state, load_mlp_checkpoint, mlp_forward_actor, mlp_greedy_policy, save_mlp_checkpoint
from .phy import PhyError
from .policy import (
    CheckpointError,
    forward_actor,
    greedy_policy,
    init_policy_state,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)
from .scenario import ConfigError
from .seeding import EVAL_STREAM, TRAINER_STREAM, derive_rng
from .training import (
    MappoTrainer,
    PpoLagrTrainer,
    TrainerHooks,
    TrainingError,
    unconstrained_reward_fn,
)

TRAIN_CSV_COLUMNS = [
    "iteration", "env_steps", "mean_reward", "mean_cost", "lambda",
    "mean_active_aps", "mean_se", "actor_loss", "reward_critic_loss",
    "cost_critic_loss", "entropy", "wallclock_s",
]

HOLDOUT_STREAM_OFFSET = 500  # dataset holdout environments


class CliError(Exception):
    pass


def _write_csv(path, header, rows) -> None:
    # atomic replace so a kill mid-write never leaves a torn file
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


def _atomic_checkpoint(save_fn, path):
    tmp = Path(str(path) + ".tmp")
    save_fn(tmp)
    tmp.replace(path)


# ---------------------------------------------------------------------------
# pretrain
# ---------------------------------------------------------------------------

def _dataset_cached(path, cfg: RunConfig, windows: int, k: int):
    """Reuse a dataset file when its header matches the request."""
    p = Path(path)
    if not p.exists():
        return None
    try:
        ds = read_dataset(p)
    except DatasetError:
        return None
    if (ds.num_aps, ds.num_ues, ds.history_len, ds.k) != (
            cfg.scenario.num_aps, cfg.scenario.num_ues, cfg.scenario.history_len, k):
        return None
    if ds.count < windows:
        return None
    ds.history = ds.history[:windows]
    ds.current = ds.current[:windows]
    ds.labels = ds.labels[:windows]
    return ds


def _build_dataset(cfg: RunConfig, windows: int, k: int, path, stream_offset: int):
    ds = _dataset_cached(path, cfg, windows, k)
    if ds is not None:
        return ds, True
    env = cfg.env_factory(phase_offset=stream_offset)(0)
    ds = generate_pretraining_dataset(env, windows, k)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, path)
    return ds, False


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out, "pretrain", sys.argv[1:], cfg.seed, cfg.raw)

    windows = args.windows or cfg.pretrain["windows"]
    holdout_windows = cfg.pretrain["holdout_windows"]
    k = args.k or cfg.pretrain["k"]
    epochs = args.epochs or cfg.pretrain["epochs"]

    ds_path = Path(args.dataset) if args.dataset else out / "dataset.bin"
    ds, cached = _build_dataset(cfg, windows, k, ds_path, stream_offset=0)
    holdout, _ = _build_dataset(cfg, holdout_windows, k, out / "holdout.bin",
                                stream_offset=HOLDOUT_STREAM_OFFSET)
    print(f"dataset: {ds.count} windows ({'cached' if cached else 'generated'}), "
          f"holdout: {holdout.count} windows", flush=True)

    probe_env = cfg.make_env(0)
    probe_env.reset()
    state = init_policy_state(cfg.policy, derive_rng(cfg.seed, TRAINER_STREAM),
                              norm_mean=probe_env.normalization.mean,
                              norm_std=probe_env.normalization.std)

    acc_rows = []

    def progress(epoch, acc):
        acc_rows.append((epoch + 1, acc))
        print(f"epoch {epoch + 1}: holdout accuracy {acc:.4f}", flush=True)

    from .training import pretrain_imitation
    pretrain_imitation(state, ds, epochs, args.lr or cfg.pretrain["lr"],
                       derive_rng(cfg.seed, TRAINER_STREAM + 1),
                       batch_windows=cfg.pretrain["batch_windows"],
                       holdout=holdout, grad_clip=cfg.train.grad_clip,
                       progress=progress)

    ckpt = out / "pretrained.ckpt"
    _atomic_checkpoint(lambda p: save_checkpoint(state, p), ckpt)
    _write_csv(out / "accuracy.csv", ["epoch", "accuracy"], acc_rows)
    manifest.add_output(ckpt)
    manifest.add_output(out / "accuracy.csv")
    manifest.finish()
    print(f"final holdout accuracy: {acc_rows[-1][1]:.4f}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _load_existing_rows(csv_path, upto_iteration):
    rows = []
    if csv_path.exists():
        with open(csv_path) as f:
            for row in csv.DictReader(f):
                if int(row["iteration"]) <= upto_iteration:
                    rows.append([row[c] for c in TRAIN_CSV_COLUMNS])
    return rows


def _make_gnn_state(cfg: RunConfig, args):
    spec = cfg.policy
    if args.no_rnn:
        from dataclasses import replace
        spec = replace(spec, use_rnn=False)
    if args.from_checkpoint:
        state, _ = load_checkpoint(args.from_checkpoint)
        if state.spec.use_rnn != spec.use_rnn:
            raise CheckpointError(
                f"checkpoint use_rnn={state.spec.use_rnn} conflicts with requested "
                f"use_rnn={spec.use_rnn}")
        return state
    probe_env = cfg.make_env(0)
    probe_env.reset()
    return init_policy_state(spec, derive_rng(cfg.seed, TRAINER_STREAM),
                             norm_mean=probe_env.normalization.mean,
                             norm_std=probe_env.normalization.std)


def cmd_train(args) -> int:
    overrides = {}
    if args.max_env_steps:
        overrides["total_env_steps"] = args.max_env_steps
    cfg = load_config(args.config, overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out, f"train:{args.algo}", sys.argv[1:], cfg.seed, cfg.raw)

    csv_path = out / "training.csv"
    latest = out / "checkpoint_latest.ckpt"
    final = out / "final.ckpt"

    if args.algo in ("aps-gnn", "unconstrained"):
        kind = "gnn"
        if args.resume:
            if not latest.exists():
                raise CliError(f"--resume: no periodic checkpoint at {latest}")
            state, train_state = load_checkpoint(latest)
            if train_state is None:
                raise CliError(f"--resume: {latest} carries no training state")
        else:
            state, train_state = _make_gnn_state(cfg, args), None
        envs = [cfg.env_factory()(i) for i in range(cfg.train.num_parallel_envs)]
        for env in envs:
            env.set_normalization(state.norm_mean, state.norm_std)
        reward_fn = None
        constrained = args.algo == "aps-gnn"
        if not constrained:
            reward_fn = unconstrained_reward_fn(args.eta)
        trainer = MappoTrainer(config=cfg.train, state=state, envs=envs,
                               rng=derive_rng(cfg.seed, TRAINER_STREAM + 2),
                               constrained=constrained, reward_fn=reward_fn)
        save_fn = lambda p, ts=None: save_checkpoint(state, p, train_state=ts, kind="gnn")
    elif args.algo == "ppo-lagr":
        kind = "mlp"
        if args.resume:
            if not latest.exists():
                raise CliError(f"--resume: no periodic checkpoint at {latest}")
            state, train_state = load_mlp_checkpoint(latest)
            if train_state is None:
                raise CliError(f"--resume: {latest} carries no training state")
        else:
            train_state = None
            probe_env = cfg.make_env(0)
            probe_env.reset()
            spec = MlpSpec(num_aps=cfg.scenario.num_aps, num_ues=cfg.scenario.num_ues,
                           hidden=cfg.mlp["hidden"], layers=cfg.mlp["layers"])
            state = init_mlp_state(spec, derive_rng(cfg.seed, TRAINER_STREAM),
                                   norm_mean=probe_env.normalization.mean,
                                   norm_std=probe_env.normalization.std)
        envs = [cfg.env_factory()(i) for i in range(cfg.train.num_parallel_envs)]
        for env in envs:
            env.set_normalization(state.norm_mean, state.norm_std)
        trainer = PpoLagrTrainer(config=cfg.train, state=state, envs=envs,
                                 rng=derive_rng(cfg.seed, TRAINER_STREAM + 2))
        save_fn = lambda p, ts=None: save_mlp_checkpoint(state, p, train_state=ts)
    else:
        raise CliError(f"unknown algorithm {args.algo!r}")

    rows = []
    if args.resume:
        trainer.restore(train_state)
        rows = _load_existing_rows(csv_path, trainer.iteration)
        print(f"resumed at iteration {trainer.iteration} "
              f"({trainer.env_steps} env steps)", flush=True)

    def on_iteration(row):
        rows.append([row.get(c, "") for c in TRAIN_CSV_COLUMNS])
        _write_csv(csv_path, TRAIN_CSV_COLUMNS, rows)
        if row["iteration"] % args.log_every == 0:
            print(f"iter {row['iteration']} steps {row['env_steps']} "
                  f"se {row['mean_se']:.3f} active {row['mean_active_aps']:.2f} "
                  f"lambda {row['lambda']:.3f}", flush=True)

    def on_checkpoint(ts):
        _atomic_checkpoint(lambda p: save_fn(p, ts), latest)

    trainer.run(TrainerHooks(on_iteration=on_iteration, on_checkpoint=on_checkpoint))

    _atomic_checkpoint(lambda p: save_fn(p), final)
    manifest.add_output(csv_path)
    manifest.add_output(final)
    manifest.finish()
    print(f"trained {trainer.env_steps} env steps; checkpoint: {final}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _policy_from_args(args, cfg: RunConfig):
    """Resolve the action policy: a checkpoint or a named heuristic."""
    if args.algo == "k-strongest":
        return k_strongest_policy(args.k), f"k-strongest(k={args.k})", None
    if not args.checkpoint:
        raise CliError("eval needs --checkpoint or --algo k-strongest")
    header, _ = read_checkpoint_header(args.checkpoint)
    if header["kind"] == "mlp":
        state, _ = load_mlp_checkpoint(args.checkpoint)
        return mlp_greedy_policy(state), "ppo-lagr", state
    state, _ = load_checkpoint(args.checkpoint)
    return greedy_policy(state), "aps-gnn", state


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    policy, name, state = _policy_from_args(args, cfg)
    env = cfg.make_env(EVAL_STREAM)
    if state is not None:
        env.set_normalization(state.norm_mean, state.norm_std)
    windows = args.windows or cfg.run["eval_windows"]
    per_episode = cfg.scenario.episode_windows
    episodes = (windows + per_episode - 1) // per_episode
    records, _ = evaluate_policy(env, policy, episodes, per_episode)
    records = records[:windows]

    k = cfg.scenario.num_ues
    header = (["window", "active_aps", "total_power_w"]
              + [f"se_ue_{i}" for i in range(k)] + ["mean_se", "mean_cost"])
    rows = []
    for i, r in enumerate(records):
        rows.append([i, r["active_aps"], r["total_power_w"],
                     *[r["ue_avg_se"][j] for j in range(k)],
                     r["mean_se"], r["mean_cost"]])
    body = np.array([row[1:] for row in rows], dtype=float)
    rows.append(["mean", *body.mean(axis=0).tolist()])
    rows.append(["std", *body.std(axis=0).tolist()])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, header, rows)
    print(f"{name}: mean_se {body[:, -2].mean():.4f} "
          f"active_aps {body[:, 0].mean():.3f} over {len(records)} windows")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _sequential_forward_policy(state):
    """Per-agent sequential inference: one full network forward per agent,
    keeping only that agent's decision (an autoregressive-style loop)."""

    def policy(obs, graph):
        n = graph.num_agents
        actions = np.empty(n, dtype=int)
        for i in range(n):
            probs = forward_actor(state, obs, graph).data
            actions[i] = int(probs[i, 1] > probs[i, 0])
        return actions

    return policy


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    if args.repetitions < 30:
        raise CliError("bench needs at least 30 repetitions for stable quantiles")
    env = cfg.make_env(EVAL_STREAM)
    obs = env.reset()
    graph = env.graph

    if args.checkpoint:
        gnn_state, _ = load_checkpoint(args.checkpoint)
    else:
        gnn_state = init_policy_state(cfg.policy, derive_rng(cfg.seed, TRAINER_STREAM))
    if args.ppo_lagr_checkpoint:
        mlp_state, _ = load_mlp_checkpoint(args.ppo_lagr_checkpoint)
    else:
        mlp_state = init_mlp_state(
            MlpSpec(num_aps=cfg.scenario.num_aps, num_ues=cfg.scenario.num_ues,
                    hidden=cfg.mlp["hidden"], layers=cfg.mlp["layers"]),
            derive_rng(cfg.seed, TRAINER_STREAM))

    methods = {
        "k-strongest": k_strongest_policy(cfg.run["bench_k"]),
        "ppo-lagr": mlp_greedy_policy(mlp_state),
        "aps-gnn": greedy_policy(gnn_state),
        "aps-gnn-sequential": _sequential_forward_policy(gnn_state),
    }

    rows = []
    summary_rows = []
    for name, policy in methods.items():
        policy(obs, graph)  # warm-up outside the timed region
        times = []
        for rep in range(args.repetitions):
            t0 = time.perf_counter()
            policy(obs, graph)
            times.append(time.perf_counter() - t0)
            rows.append([name, rep, times[-1]])
        arr = np.array(times)
        summary_rows.append([name, float(arr.min()), float(np.median(arr)),
                             float(np.percentile(arr, 95))])
        print(f"{name}: median {np.median(arr) * 1e3:.3f} ms "
              f"(min {arr.min() * 1e3:.3f}, p95 {np.percentile(arr, 95) * 1e3:.3f})")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ["method", "rep", "latency_s"], rows)
    summary_path = out.with_name(out.stem + "_summary.csv")
    _write_csv(summary_path, ["method", "min_s", "median_s", "p95_s"], summary_rows)
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out, "sweep", sys.argv[1:], cfg.seed, cfg.raw)
    etas = [float(e) for e in args.etas.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]

    sweep_rows = []
    for eta in etas:
        for seed in seeds:
            run_dir = out / f"eta{eta:g}_seed{seed}"
            run_dir.mkdir(exist_ok=True)
            train_args = argparse.Namespace(
                config=args.config, out=str(run_dir), algo="unconstrained",
                from_checkpoint=args.from_checkpoint, no_rnn=False, eta=eta,
                resume=False, max_env_steps=args.max_env_steps, log_every=50)
            sub_cfg = load_config(args.config, {"rng_seed": seed,
                                                "total_env_steps": args.max_env_steps})
            _train_for_sweep(sub_cfg, train_args, run_dir)
            eval_args = argparse.Namespace(
                config=args.config, checkpoint=str(run_dir / "final.ckpt"),
                algo=None, k=1, windows=args.eval_windows,
                out=str(run_dir / "eval.csv"))
            # evaluate with the sweep seed
            eval_cfg = load_config(args.config, {"rng_seed": seed})
            policy, _, state = _policy_from_args(eval_args, eval_cfg)
            env = eval_cfg.make_env(EVAL_STREAM)
            env.set_normalization(state.norm_mean, state.norm_std)
            per_episode = eval_cfg.scenario.episode_windows
            episodes = (args.eval_windows + per_episode - 1) // per_episode
            records, summary = evaluate_policy(env, policy, episodes, per_episode)
            sweep_rows.append([eta, seed,
                               summary["mean_se"][0], summary["mean_se"][1],
                               summary["active_aps"][0], summary["active_aps"][1],
                               summary["mean_cost"][0]])
            print(f"eta={eta} seed={seed}: mean_se {summary['mean_se'][0]:.3f} "
                  f"active {summary['active_aps'][0]:.2f}", flush=True)

    sweep_csv = out / "sweep.csv"
    _write_csv(sweep_csv, ["eta", "seed", "mean_se", "std_se",
                           "mean_active_aps", "std_active_aps", "mean_cost"],
               sweep_rows)
    manifest.add_output(sweep_csv)
    manifest.finish()
    return 0


def _train_for_sweep(cfg: RunConfig, args, run_dir: Path) -> None:
    if args.from_checkpoint:
        state, _ = load_checkpoint(args.from_checkpoint)
    else:
        probe_env = cfg.make_env(0)
        probe_env.reset()
        state = init_policy_state(cfg.policy, derive_rng(cfg.seed, TRAINER_STREAM),
                                  norm_mean=probe_env.normalization.mean,
                                  norm_std=probe_env.normalization.std)
    envs = [cfg.env_factory()(i) for i in range(cfg.train.num_parallel_envs)]
    for env in envs:
        env.set_normalization(state.norm_mean, state.norm_std)
    trainer = MappoTrainer(config=cfg.train, state=state, envs=envs,
                           rng=derive_rng(cfg.seed, TRAINER_STREAM + 2),
                           constrained=False, reward_fn=unconstrained_reward_fn(args.eta))
    csv_path = run_dir / "training.csv"
    rows = []

    def on_iteration(row):
        rows.append([row.get(c, "") for c in TRAIN_CSV_COLUMNS])
        _write_csv(csv_path, TRAIN_CSV_COLUMNS, rows)

    trainer.run(TrainerHooks(on_iteration=on_iteration))
    _atomic_checkpoint(lambda p: save_checkpoint(state, p, kind="gnn"),
                       run_dir / "final.ckpt")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfaps",
        description="Cell-free massive MIMO AP-selection simulator and trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="imitation pretraining from the k-strongest heuristic")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--windows", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--dataset", default=None, help="dataset cache path")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="reinforcement-learning training")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--algo", choices=["aps-gnn", "ppo-lagr", "unconstrained"],
                   default="aps-gnn")
    p.add_argument("--from-checkpoint", default=None)
    p.add_argument("--no-rnn", action="store_true")
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--max-env-steps", type=int, default=None)
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="deterministic policy evaluation")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--algo", choices=["k-strongest"], default=None)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--windows", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-decision inference latency")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repetitions", type=int, default=100)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--ppo-lagr-checkpoint", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="eta sweep for the unconstrained ablation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--etas", default="0.1,1,10")
    p.add_argument("--seeds", default=None)
    p.add_argument("--from-checkpoint", default=None)
    p.add_argument("--max-env-steps", type=int, default=20_000)
    p.add_argument("--eval-windows", type=int, default=400)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, CheckpointError, DatasetError, TrainingError,
            EnvError, PhyError, ChannelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
