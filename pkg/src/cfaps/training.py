"""Training procedures: imitation pretraining, constrained multi-agent
PPO with a Lagrange multiplier, the single-agent constrained baseline,
and the single-reward ablation.

One training iteration: collect a synchronized rollout from the
parallel environments, estimate reward and cost advantages with GAE,
form the Lagrangian advantage, run the clipped-surrogate PPO epochs for
the actor and squared-error updates for both critics, then take one
projected dual step on the multiplier from the batch-mean per-UE cost.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, AutodiffError, Graph, Tensor, adam_step, backward, clip_grads_
from .autodiff import tensor as T
from .env import AgentGraph, CellFreeEnv, Observations
from .mlp import MlpState, mlp_forward_actor, mlp_forward_critics
from .policy import PolicyState, forward_actor, forward_critics


class TrainingError(Exception):
    pass


class TrainingDiverged(TrainingError):
    pass


@dataclass
class TrainConfig:
    total_env_steps: int = 500_000
    num_parallel_envs: int = 8
    rollout_length: int = 32
    ppo_update_iterations: int = 10
    clip_epsilon: float = 0.1
    learning_rate: float = 0.001
    discount: float = 0.01
    gae_lambda: float = 0.95
    lambda_lr: float = 2.0
    initial_lambda: float = 0.0
    entropy_coef: float = 0.01
    grad_clip: float = 1.0
    checkpoint_every: int = 50

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise TrainingError("clip_epsilon must be in (0, 1)")
        if not 0.0 <= self.discount <= 1.0:
            raise TrainingError("discount must be in [0, 1]")
        if self.initial_lambda < 0:
            raise TrainingError("initial_lambda must be >= 0")


def compute_gae(rewards: np.ndarray, values: np.ndarray, bootstrap: np.ndarray,
                gamma: float, lam: float, dones: np.ndarray | None = None):
    """Generalized advantage estimation along axis 0.

    `rewards` and `values` are [T, ...]; `bootstrap` is the value of the
    state after the last step. `dones[t]` marks transitions that ended an
    episode (no bootstrapping across them). Returns (advantages,
    value_targets) with targets = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise TrainingError(f"rewards {rewards.shape} and values {values.shape} disagree")
    t_len = rewards.shape[0]
    if dones is None:
        dones = np.zeros(rewards.shape)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap, dtype=np.float64)
    gae = np.zeros_like(next_value)
    for t in reversed(range(t_len)):
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * alive - values[t]
        gae = delta + gamma * lam * alive * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


def dual_update(lmbda: float, ue_costs: np.ndarray, lambda_lr: float) -> float:
    """Projected gradient ascent on the multiplier: lambda rises with the
    mean per-UE cost and never goes negative."""
    return max(0.0, lmbda + lambda_lr * float(np.mean(ue_costs)))


def standardize(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance; degenerate batches are only centered
    (rescaling near-zero variance would amplify numerical noise into
    full-scale pseudo-advantages)."""
    std = x.std()
    centered = x - x.mean()
    if std < 1e-8:
        return centered
    return centered / std


def _select_logp(probs: Tensor, actions: np.ndarray) -> Tensor:
    """log pi(a|s) for the taken binary actions; probs is [S, 2]."""
    onehot = np.zeros(probs.data.shape)
    onehot[np.arange(actions.size), actions.astype(int)] = 1.0
    eps = Tensor(np.full(probs.data.shape, 1e-300))
    logp = T.log(T.add(probs, eps))
    return T.reduce_sum(T.mul(logp, Tensor(onehot)), axis=1)


def _entropy(probs: Tensor) -> Tensor:
    eps = Tensor(np.full(probs.data.shape, 1e-300))
    return T.scale(T.reduce_mean(T.reduce_sum(T.mul(probs, T.log(T.add(probs, eps))), axis=1)), -1.0)


def ppo_surrogate(logp_new: Tensor, logp_old: np.ndarray, advantages: np.ndarray,
                  clip_epsilon: float) -> Tensor:
    """Mean clipped surrogate, expressed with relu for min and clip."""
    ratio = T.exp(T.sub(logp_new, Tensor(logp_old)))
    adv = Tensor(advantages)
    lo = Tensor(np.full(ratio.data.shape, 1.0 - clip_epsilon))
    hi = Tensor(np.full(ratio.data.shape, 1.0 + clip_epsilon))
    clipped = T.sub(T.add(lo, T.relu(T.sub(ratio, lo))), T.relu(T.sub(ratio, hi)))
    a = T.mul(ratio, adv)
    b = T.mul(clipped, adv)
    # min(a, b) = b - relu(b - a)
    return T.reduce_mean(T.sub(b, T.relu(T.sub(b, a))))


# ---------------------------------------------------------------------------
# Imitation pretraining
# ---------------------------------------------------------------------------

def pretrain_imitation(state: PolicyState, dataset, epochs: int, lr: float,
                       rng: np.random.Generator, batch_windows: int = 64,
                       holdout=None, grad_clip: float = 1.0,
                       progress=None, warmup_frac: float = 0.05,
                       final_lr_frac: float = 0.05):
    """Fit the actor to heuristic labels with cross-entropy; critics are
    untouched. Returns the per-epoch accuracy curve (on the holdout when
    given, else on the training set).

    The learning rate warms up linearly then follows a cosine decay to
    final_lr_frac * lr; `lr` is the peak.
    """
    if dataset.count == 0:
        raise TrainingError("empty pretraining dataset")
    graph = AgentGraph(dataset.num_aps, dataset.num_ues)
    actor_params = state.network_params("actor")
    adam = AdamState(actor_params)
    batches_per_epoch = (dataset.count + batch_windows - 1) // batch_windows
    total_steps = max(1, epochs * batches_per_epoch)
    warmup = max(1, int(warmup_frac * total_steps))
    curve = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(dataset.count)
        for lo in range(0, dataset.count, batch_windows):
            idx = order[lo:lo + batch_windows]
            obs = Observations(dataset.history[idx].reshape(-1, dataset.history_len),
                               dataset.current[idx].reshape(-1))
            labels = dataset.labels[idx].reshape(-1)
            with Graph() as g:
                probs = forward_actor(state, obs, graph, batch=len(idx))
                logp = _select_logp(probs, labels)
                loss = T.scale(T.reduce_mean(logp), -1.0)
                grads = backward(g, loss, leaves=actor_params.values())
            named = {k: grads[p].data for k, p in actor_params.items()}
            clip_grads_(named, grad_clip)
            if step < warmup:
                cur_lr = lr * (step + 1) / warmup
            else:
                frac = (step - warmup) / max(1, total_steps - warmup)
                cur_lr = lr * (final_lr_frac + (1 - final_lr_frac)
                               * 0.5 * (1 + np.cos(np.pi * frac)))
            adam_step(actor_params, named, adam, cur_lr)
            step += 1
        acc = imitation_accuracy(state, holdout if holdout is not None else dataset)
        curve.append(acc)
        if progress is not None:
            progress(epoch, acc)
    return curve


def imitation_accuracy(state: PolicyState, dataset, batch_windows: int = 128) -> float:
    graph = AgentGraph(dataset.num_aps, dataset.num_ues)
    hits = 0
    for lo in range(0, dataset.count, batch_windows):
        hi = min(lo + batch_windows, dataset.count)
        obs = Observations(dataset.history[lo:hi].reshape(-1, dataset.history_len),
                           dataset.current[lo:hi].reshape(-1))
        probs = forward_actor(state, obs, graph, batch=hi - lo).data
        pred = (probs[:, 1] > probs[:, 0]).astype(np.uint8)
        hits += int((pred == dataset.labels[lo:hi].reshape(-1)).sum())
    return hits / (dataset.count * graph.num_agents)


# ---------------------------------------------------------------------------
# Rollout collection (shared by the GNN trainers)
# ---------------------------------------------------------------------------

@dataclass
class Rollout:
    history: np.ndarray     # (T+1, B, N, H) observations, last row is bootstrap
    current: np.ndarray     # (T+1, B, N)
    actions: np.ndarray     # (T, B, N)
    logp: np.ndarray        # (T, B, N)
    rewards: np.ndarray     # (T, B, N)
    costs: np.ndarray       # (T, B, N)
    dones: np.ndarray       # (T, B)
    ue_costs: np.ndarray    # (T, B, K) each UE counted once
    ue_avg_se: np.ndarray   # (T, B, K)
    active_aps: np.ndarray  # (T, B)

    @property
    def steps(self) -> int:
        return self.actions.shape[0] * self.actions.shape[1]


def collect_rollout(envs: list[CellFreeEnv], obs_list: list[Observations],
                    state: PolicyState, config: TrainConfig,
                    rng: np.random.Generator,
                    reward_fn=None) -> tuple[Rollout, list[Observations]]:
    """Step every environment rollout_length windows with sampled actions.

    `reward_fn(feedback, env) -> per-agent rewards` overrides the default
    activation reward (used by the single-reward ablation).
    """
    graph = envs[0].graph
    b = len(envs)
    n = graph.num_agents
    k = graph.num_ues
    t_len = config.rollout_length
    h = envs[0].scenario.history_len

    out = Rollout(
        history=np.empty((t_len + 1, b, n, h)),
        current=np.empty((t_len + 1, b, n)),
        actions=np.empty((t_len, b, n), dtype=np.int8),
        logp=np.empty((t_len, b, n)),
        rewards=np.empty((t_len, b, n)),
        costs=np.empty((t_len, b, n)),
        dones=np.zeros((t_len, b)),
        ue_costs=np.empty((t_len, b, k)),
        ue_avg_se=np.empty((t_len, b, k)),
        active_aps=np.empty((t_len, b)),
    )

    for t in range(t_len):
        hist = np.stack([o.history for o in obs_list])          # (B, N, H)
        cur = np.stack([o.current for o in obs_list])
        out.history[t] = hist
        out.current[t] = cur
        obs = Observations(hist.reshape(b * n, h), cur.reshape(b * n))
        probs = forward_actor(state, obs, graph, batch=b).data
        u = rng.random(b * n)
        acts = (u < probs[:, 1]).astype(np.int8)
        taken = np.where(acts == 1, probs[:, 1], probs[:, 0])
        out.actions[t] = acts.reshape(b, n)
        out.logp[t] = np.log(np.maximum(taken, 1e-300)).reshape(b, n)
        for i, env in enumerate(envs):
            feedback, nxt, done = env.step(out.actions[t, i])
            reward = feedback.reward if reward_fn is None else reward_fn(feedback, env)
            out.rewards[t, i] = reward
            out.costs[t, i] = feedback.cost
            out.ue_costs[t, i] = env.scenario.se_target - feedback.ue_avg_se
            out.ue_avg_se[t, i] = feedback.ue_avg_se
            out.active_aps[t, i] = feedback.active_ap_count
            out.dones[t, i] = float(done)
            obs_list[i] = env.reset() if done else nxt

    out.history[t_len] = np.stack([o.history for o in obs_list])
    out.current[t_len] = np.stack([o.current for o in obs_list])
    return out, obs_list


def _batched_values(state: PolicyState, rollout: Rollout, graph: AgentGraph,
                    which=("rcritic", "ccritic")) -> list[np.ndarray]:
    t1, b, n, h = rollout.history.shape
    obs = Observations(rollout.history.reshape(t1 * b * n, h),
                       rollout.current.reshape(t1 * b * n))
    outs = forward_critics(state, obs, graph, batch=t1 * b, which=which)
    return [v.data.reshape(t1, b, n) for v in outs]


def _dump_diagnostics(path, state_params, extra: dict):
    payload = {"params": {k: {"norm": float(np.linalg.norm(p.data)),
                              "max": float(np.abs(p.data).max())}
                          for k, p in state_params.items()}}
    payload.update(extra)
    with open(path, "w") as f:
        json.dump(payload, f, indent=1, default=float)


# ---------------------------------------------------------------------------
# MAPPO-Lagrangian (shared graph policy)
# ---------------------------------------------------------------------------

@dataclass
class TrainerHooks:
    """Callbacks the harness uses for CSV logging and checkpoints."""

    on_iteration: callable = None      # fn(row dict)
    on_checkpoint: callable = None     # fn(trainer_state dict)
    should_stop: callable = None       # fn(env_steps) -> bool


@dataclass
class MappoTrainer:
    """Constrained multi-agent PPO with a projected dual variable.

    `constrained=False` drops the cost critic and the dual update
    (single-reward ablation); `reward_fn` then supplies the reward.
    """

    config: TrainConfig
    state: PolicyState
    envs: list[CellFreeEnv]
    rng: np.random.Generator
    constrained: bool = True
    reward_fn: callable = None
    lmbda: float = None
    iteration: int = 0
    env_steps: int = 0
    adam: dict = None
    obs_list: list = None
    lambda_trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.lmbda is None:
            self.lmbda = self.config.initial_lambda
        if self.adam is None:
            nets = ("actor", "rcritic", "ccritic") if self.constrained else ("actor", "rcritic")
            self.adam = {net: AdamState(self.state.network_params(net)) for net in nets}
        if self.obs_list is None:
            self.obs_list = [env.reset() for env in self.envs]

    def run(self, hooks: TrainerHooks | None = None):
        hooks = hooks or TrainerHooks()
        cfg = self.config
        while self.env_steps < cfg.total_env_steps:
            if hooks.should_stop is not None and hooks.should_stop(self.env_steps):
                break
            row = self.train_iteration()
            if hooks.on_iteration is not None:
                hooks.on_iteration(row)
            if (hooks.on_checkpoint is not None and cfg.checkpoint_every > 0
                    and self.iteration % cfg.checkpoint_every == 0):
                hooks.on_checkpoint(self.trainer_state())
        return self.state

    def train_iteration(self) -> dict:
        cfg = self.config
        graph = self.envs[0].graph
        started = time.time()
        rollout, self.obs_list = collect_rollout(self.envs, self.obs_list, self.state,
                                                 cfg, self.rng, reward_fn=self.reward_fn)
        try:
            row = self._update(rollout, graph)
        except AutodiffError as exc:
            dump = f"divergence_dump_iter{self.iteration}.json"
            _dump_diagnostics(dump, self.state.params, {
                "lambda": self.lmbda, "iteration": self.iteration, "error": str(exc)})
            raise TrainingDiverged(f"non-finite loss at iteration {self.iteration}; "
                                   f"diagnostics in {dump}") from exc
        self.iteration += 1
        self.env_steps += rollout.steps
        row.update(iteration=self.iteration, env_steps=self.env_steps,
                   wallclock_s=round(time.time() - started, 3))
        return row

    def _update(self, rollout: Rollout, graph: AgentGraph) -> dict:
        cfg = self.config
        t_len, b, n = rollout.actions.shape
        critics = ("rcritic", "ccritic") if self.constrained else ("rcritic",)
        values = _batched_values(self.state, rollout, graph, which=critics)

        adv_r, targets_r = compute_gae(rollout.rewards, values[0][:-1], values[0][-1],
                                       cfg.discount, cfg.gae_lambda, rollout.dones[:, :, None])
        adv = standardize(adv_r)
        if self.constrained:
            adv_c, targets_c = compute_gae(rollout.costs, values[1][:-1], values[1][-1],
                                           cfg.discount, cfg.gae_lambda, rollout.dones[:, :, None])
            adv = adv - self.lmbda * adv_c

        h = rollout.history.shape[-1]
        obs = Observations(rollout.history[:-1].reshape(t_len * b * n, h),
                           rollout.current[:-1].reshape(t_len * b * n))
        actions = rollout.actions.reshape(-1)
        logp_old = rollout.logp.reshape(-1)
        adv_flat = adv.reshape(-1)

        actor_params = self.state.network_params("actor")
        actor_loss = entropy_val = None
        for epoch in range(cfg.ppo_update_iterations):
            with Graph() as g:
                probs = forward_actor(self.state, obs, graph, batch=t_len * b)
                logp_new = _select_logp(probs, actions)
                if epoch == 0:
                    drift = float(np.abs(logp_new.data - logp_old).max())
                    if drift > 1e-10:
                        raise TrainingError(
                            f"behavior-policy mismatch before first epoch: {drift:.3e}")
                surr = ppo_surrogate(logp_new, logp_old, adv_flat, cfg.clip_epsilon)
                ent = _entropy(probs)
                loss = T.sub(T.scale(surr, -1.0), T.scale(ent, cfg.entropy_coef))
                grads = backward(g, loss, leaves=actor_params.values())
            named = {k: grads[p].data for k, p in actor_params.items()}
            clip_grads_(named, cfg.grad_clip)
            adam_step(actor_params, named, self.adam["actor"], cfg.learning_rate)
            actor_loss = loss.item()
            entropy_val = ent.item()

            for net, targets in (("rcritic", targets_r),) + (
                    (("ccritic", targets_c),) if self.constrained else ()):
                self._critic_epoch(net, obs, graph, t_len * b, targets.reshape(-1, 1))

        critic_losses = {net: self._critic_loss_value(net, obs, graph, t_len * b,
                                                      tgt.reshape(-1, 1))
                         for net, tgt in (("rcritic", targets_r),) + (
                             (("ccritic", targets_c),) if self.constrained else ())}

        if self.constrained:
            self.lmbda = dual_update(self.lmbda, rollout.ue_costs, cfg.lambda_lr)
        self.lambda_trace.append(self.lmbda)

        return {
            "mean_reward": float(rollout.rewards.mean()),
            "mean_cost": float(rollout.ue_costs.mean()),
            "lambda": self.lmbda,
            "mean_active_aps": float(rollout.active_aps.mean()),
            "mean_se": float(rollout.ue_avg_se.mean()),
            "actor_loss": actor_loss,
            "reward_critic_loss": critic_losses.get("rcritic"),
            "cost_critic_loss": critic_losses.get("ccritic", float("nan")),
            "entropy": entropy_val,
        }

    def _critic_epoch(self, net: str, obs, graph, batch, targets):
        params = self.state.network_params(net)
        with Graph() as g:
            (v,) = forward_critics(self.state, obs, graph, batch=batch, which=(net,))
            d = T.sub(v, Tensor(targets))
            loss = T.reduce_mean(T.mul(d, d))
            grads = backward(g, loss, leaves=params.values())
        named = {k: grads[p].data for k, p in params.items()}
        clip_grads_(named, self.config.grad_clip)
        adam_step(params, named, self.adam[net], self.config.learning_rate)

    def _critic_loss_value(self, net, obs, graph, batch, targets) -> float:
        (v,) = forward_critics(self.state, obs, graph, batch=batch, which=(net,))
        return float(((v.data - targets) ** 2).mean())

    # -- resume support ------------------------------------------------------

    def trainer_state(self) -> dict:
        from .seeding import rng_state
        arrays = {}
        for net, st in self.adam.items():
            for k in st.m:
                arrays[f"adam.{net}.m.{k}"] = st.m[k].copy()
                arrays[f"adam.{net}.v.{k}"] = st.v[k].copy()
        env_snaps = []
        for i, env in enumerate(self.envs):
            snap = env.get_snapshot()
            for aname, arr in snap.pop("arrays").items():
                arrays[f"env{i}.{aname}"] = arr
            env_snaps.append(snap)
        return {
            "lambda": self.lmbda,
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "adam_t": {net: st.t for net, st in self.adam.items()},
            "rng": rng_state(self.rng),
            "envs": env_snaps,
            "constrained": self.constrained,
            "arrays": arrays,
        }

    def restore(self, ts: dict) -> None:
        from .seeding import restore_rng
        arrays = ts["arrays"]
        self.lmbda = float(ts["lambda"])
        self.iteration = int(ts["iteration"])
        self.env_steps = int(ts["env_steps"])
        self.rng = restore_rng(ts["rng"])
        for net, st in self.adam.items():
            st.t = int(ts["adam_t"][net])
            for k in st.m:
                st.m[k] = arrays[f"adam.{net}.m.{k}"].copy()
                st.v[k] = arrays[f"adam.{net}.v.{k}"].copy()
        for i, env in enumerate(self.envs):
            snap = dict(ts["envs"][i])
            snap["arrays"] = {aname.split(".", 1)[1]: arr
                              for aname, arr in arrays.items()
                              if aname.startswith(f"env{i}.")}
            env.set_snapshot(snap)
        self.obs_list = [env._observations() for env in self.envs]


def mappo_lagrangian_train(config: TrainConfig, env_factory, state: PolicyState,
                           rng: np.random.Generator, hooks: TrainerHooks | None = None):
    """Full constrained training loop; returns (state, lambda trace, rows)."""
    envs = [env_factory(i) for i in range(config.num_parallel_envs)]
    trainer = MappoTrainer(config=config, state=state, envs=envs, rng=rng)
    rows = []
    merged = TrainerHooks(
        on_iteration=lambda row: (rows.append(row),
                                  hooks.on_iteration(row) if hooks and hooks.on_iteration else None),
        on_checkpoint=hooks.on_checkpoint if hooks else None,
        should_stop=hooks.should_stop if hooks else None,
    )
    trainer.run(merged)
    return trainer.state, trainer.lambda_trace, rows


def unconstrained_reward_fn(eta: float):
    """Single scalar reward for the ablation: the spectral-efficiency term
    saturates at the target while activation carries a unit penalty; eta
    weights the SE term against the penalty."""

    def fn(feedback, env):
        kappa = env.scenario.se_target
        k = env.scenario.num_ues
        se_term = np.minimum(feedback.ue_avg_se / kappa, 1.0)
        active_agent = feedback.reward < 0  # reuses the activation indicator
        return eta * np.tile(se_term, env.scenario.num_aps) - active_agent.astype(float)

    return fn


def train_unconstrained_ablation(config: TrainConfig, eta: float, env_factory,
                                 state: PolicyState, rng: np.random.Generator,
                                 hooks: TrainerHooks | None = None):
    """Single-reward PPO: no cost critic, no dual update."""
    if eta < 0:
        raise TrainingError("eta must be >= 0")
    envs = [env_factory(i) for i in range(config.num_parallel_envs)]
    trainer = MappoTrainer(config=config, state=state, envs=envs, rng=rng,
                           constrained=False, reward_fn=unconstrained_reward_fn(eta))
    rows = []
    merged = TrainerHooks(
        on_iteration=lambda row: (rows.append(row),
                                  hooks.on_iteration(row) if hooks and hooks.on_iteration else None),
        on_checkpoint=hooks.on_checkpoint if hooks else None,
        should_stop=hooks.should_stop if hooks else None,
    )
    trainer.run(merged)
    return trainer.state, rows


# ---------------------------------------------------------------------------
# Single-agent PPO-Lagrangian baseline
# ---------------------------------------------------------------------------

@dataclass
class PpoLagrTrainer:
    """Monolithic policy over the whole association matrix; identical
    PPO-Lagrangian loop with network-average reward and cost."""

    config: TrainConfig
    state: MlpState
    envs: list[CellFreeEnv]
    rng: np.random.Generator
    lmbda: float = None
    iteration: int = 0
    env_steps: int = 0
    adam: dict = None
    obs_list: list = None
    lambda_trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.lmbda is None:
            self.lmbda = self.config.initial_lambda
        if self.adam is None:
            self.adam = {net: AdamState(self.state.network_params(net))
                         for net in ("actor", "rcritic", "ccritic")}
        if self.obs_list is None:
            self.obs_list = [env.reset() for env in self.envs]

    def run(self, hooks: TrainerHooks | None = None):
        hooks = hooks or TrainerHooks()
        cfg = self.config
        while self.env_steps < cfg.total_env_steps:
            if hooks.should_stop is not None and hooks.should_stop(self.env_steps):
                break
            row = self.train_iteration()
            if hooks.on_iteration is not None:
                hooks.on_iteration(row)
            if (hooks.on_checkpoint is not None and cfg.checkpoint_every > 0
                    and self.iteration % cfg.checkpoint_every == 0):
                hooks.on_checkpoint(self.trainer_state())
        return self.state

    def train_iteration(self) -> dict:
        cfg = self.config
        started = time.time()
        b = len(self.envs)
        t_len = cfg.rollout_length
        heads = self.state.spec.num_heads

        obs_seq = np.empty((t_len + 1, b, heads))
        actions = np.empty((t_len, b, heads), dtype=np.int8)
        logp = np.empty((t_len, b))
        rewards = np.empty((t_len, b))
        costs = np.empty((t_len, b))
        dones = np.zeros((t_len, b))
        ue_costs = np.empty((t_len, b, self.envs[0].scenario.num_ues))
        active = np.empty((t_len, b))
        mean_se = np.empty((t_len, b))

        for t in range(t_len):
            vecs = np.stack([o.current for o in self.obs_list])
            obs_seq[t] = vecs
            probs = mlp_forward_actor(self.state, vecs).data  # (B, heads, 2)
            u = self.rng.random((b, heads))
            acts = (u < probs[:, :, 1]).astype(np.int8)
            taken = np.where(acts == 1, probs[:, :, 1], probs[:, :, 0])
            actions[t] = acts
            logp[t] = np.log(np.maximum(taken, 1e-300)).sum(axis=1)
            for i, env in enumerate(self.envs):
                feedback, nxt, done = env.step(acts[i])
                rewards[t, i] = feedback.reward.mean()
                kcost = env.scenario.se_target - feedback.ue_avg_se
                costs[t, i] = kcost.mean()
                ue_costs[t, i] = kcost
                active[t, i] = feedback.active_ap_count
                mean_se[t, i] = feedback.ue_avg_se.mean()
                dones[t, i] = float(done)
                self.obs_list[i] = env.reset() if done else nxt
        obs_seq[t_len] = np.stack([o.current for o in self.obs_list])

        try:
            row = self._update(obs_seq, actions, logp, rewards, costs, dones)
        except AutodiffError as exc:
            dump = f"divergence_dump_ppolagr_iter{self.iteration}.json"
            _dump_diagnostics(dump, self.state.params, {
                "lambda": self.lmbda, "iteration": self.iteration, "error": str(exc)})
            raise TrainingDiverged(f"non-finite loss at iteration {self.iteration}; "
                                   f"diagnostics in {dump}") from exc

        self.lmbda = dual_update(self.lmbda, ue_costs, cfg.lambda_lr)
        self.lambda_trace.append(self.lmbda)
        self.iteration += 1
        self.env_steps += t_len * b
        row.update(iteration=self.iteration, env_steps=self.env_steps,
                   **{"lambda": self.lmbda},
                   mean_active_aps=float(active.mean()), mean_se=float(mean_se.mean()),
                   mean_reward=float(rewards.mean()), mean_cost=float(ue_costs.mean()),
                   wallclock_s=round(time.time() - started, 3))
        return row

    def _update(self, obs_seq, actions, logp_old, rewards, costs, dones):
        cfg = self.config
        t_len, b, heads = actions.shape
        flat_all = obs_seq.reshape((t_len + 1) * b, heads)
        vr, vc = mlp_forward_critics(self.state, flat_all)
        vr = vr.data.reshape(t_len + 1, b)
        vc = vc.data.reshape(t_len + 1, b)
        adv_r, targets_r = compute_gae(rewards, vr[:-1], vr[-1], cfg.discount,
                                       cfg.gae_lambda, dones)
        adv_c, targets_c = compute_gae(costs, vc[:-1], vc[-1], cfg.discount,
                                       cfg.gae_lambda, dones)
        adv = standardize(adv_r) - self.lmbda * adv_c

        obs_flat = obs_seq[:-1].reshape(t_len * b, heads)
        act_flat = actions.reshape(t_len * b, heads)
        logp_flat = logp_old.reshape(-1)
        adv_flat = adv.reshape(-1)

        actor_params = self.state.network_params("actor")
        actor_loss = entropy_val = None
        for epoch in range(cfg.ppo_update_iterations):
            with Graph() as g:
                probs = mlp_forward_actor(self.state, obs_flat)  # (S, heads, 2)
                s = probs.data.shape[0]
                onehot = np.zeros(probs.data.shape)
                rows_idx = np.repeat(np.arange(s), heads)
                cols_idx = np.tile(np.arange(heads), s)
                onehot[rows_idx, cols_idx, act_flat.reshape(-1)] = 1.0
                eps = Tensor(np.full(probs.data.shape, 1e-300))
                logp_all = T.log(T.add(probs, eps))
                logp_new = T.reduce_sum(T.reduce_sum(T.mul(logp_all, Tensor(onehot)), axis=2), axis=1)
                if epoch == 0:
                    drift = float(np.abs(logp_new.data - logp_flat).max())
                    if drift > 1e-10:
                        raise TrainingError(
                            f"behavior-policy mismatch before first epoch: {drift:.3e}")
                surr = ppo_surrogate(logp_new, logp_flat, adv_flat, cfg.clip_epsilon)
                ent = T.scale(T.reduce_mean(T.reduce_sum(T.reduce_sum(
                    T.mul(probs, logp_all), axis=2), axis=1)), -1.0)
                loss = T.sub(T.scale(surr, -1.0), T.scale(ent, cfg.entropy_coef))
                grads = backward(g, loss, leaves=actor_params.values())
            named = {k: grads[p].data for k, p in actor_params.items()}
            clip_grads_(named, cfg.grad_clip)
            adam_step(actor_params, named, self.adam["actor"], cfg.learning_rate)
            actor_loss = loss.item()
            entropy_val = ent.item()

            for net, tgt in (("rcritic", targets_r), ("ccritic", targets_c)):
                params = self.state.network_params(net)
                with Graph() as g:
                    (v,) = mlp_forward_critics(self.state, obs_flat, which=(net,))
                    d = T.sub(v, Tensor(tgt.reshape(-1, 1)))
                    closs = T.reduce_mean(T.mul(d, d))
                    grads = backward(g, closs, leaves=params.values())
                named = {k: grads[p].data for k, p in params.items()}
                clip_grads_(named, cfg.grad_clip)
                adam_step(params, named, self.adam[net], cfg.learning_rate)

        losses = {}
        for net, tgt in (("rcritic", targets_r), ("ccritic", targets_c)):
            (v,) = mlp_forward_critics(self.state, obs_flat, which=(net,))
            losses[net] = float(((v.data - tgt.reshape(-1, 1)) ** 2).mean())
        return {"actor_loss": actor_loss, "entropy": entropy_val,
                "reward_critic_loss": losses["rcritic"],
                "cost_critic_loss": losses["ccritic"]}

    def trainer_state(self) -> dict:
        from .seeding import rng_state
        arrays = {}
        for net, st in self.adam.items():
            for k in st.m:
                arrays[f"adam.{net}.m.{k}"] = st.m[k].copy()
                arrays[f"adam.{net}.v.{k}"] = st.v[k].copy()
        env_snaps = []
        for i, env in enumerate(self.envs):
            snap = env.get_snapshot()
            for aname, arr in snap.pop("arrays").items():
                arrays[f"env{i}.{aname}"] = arr
            env_snaps.append(snap)
        return {"lambda": self.lmbda, "iteration": self.iteration,
                "env_steps": self.env_steps,
                "adam_t": {net: st.t for net, st in self.adam.items()},
                "rng": rng_state(self.rng), "envs": env_snaps, "arrays": arrays}

    def restore(self, ts: dict) -> None:
        from .seeding import restore_rng
        arrays = ts["arrays"]
        self.lmbda = float(ts["lambda"])
        self.iteration = int(ts["iteration"])
        self.env_steps = int(ts["env_steps"])
        self.rng = restore_rng(ts["rng"])
        for net, st in self.adam.items():
            st.t = int(ts["adam_t"][net])
            for k in st.m:
                st.m[k] = arrays[f"adam.{net}.m.{k}"].copy()
                st.v[k] = arrays[f"adam.{net}.v.{k}"].copy()
        for i, env in enumerate(self.envs):
            snap = dict(ts["envs"][i])
            snap["arrays"] = {aname.split(".", 1)[1]: arr
                              for aname, arr in arrays.items()
                              if aname.startswith(f"env{i}.")}
            env.set_snapshot(snap)
        self.obs_list = [env._observations() for env in self.envs]


def train_ppo_lagr_single_agent(config: TrainConfig, env_factory, state: MlpState,
                                rng: np.random.Generator, hooks: TrainerHooks | None = None):
    envs = [env_factory(i) for i in range(config.num_parallel_envs)]
    trainer = PpoLagrTrainer(config=config, state=state, envs=envs, rng=rng)
    rows = []
    merged = TrainerHooks(
        on_iteration=lambda row: (rows.append(row),
                                  hooks.on_iteration(row) if hooks and hooks.on_iteration else None),
        on_checkpoint=hooks.on_checkpoint if hooks else None,
        should_stop=hooks.should_stop if hooks else None,
    )
    trainer.run(merged)
    return trainer.state, trainer.lambda_trace, rows
