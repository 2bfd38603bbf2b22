import numpy as np
import pytest

from cfaps.autodiff import Tensor
from cfaps.baselines import generate_pretraining_dataset, PretrainDataset
from cfaps.env import CellFreeEnv, evaluate_policy
from cfaps.mlp import MlpSpec, init_mlp_state, mlp_forward_actor, mlp_greedy_policy
from cfaps.phy import PhyParams
from cfaps.policy import PolicySpec, init_policy_state
from cfaps.scenario import ScenarioConfig
from cfaps.seeding import derive_rng
from cfaps.training import (
    MappoTrainer,
    TrainConfig,
    TrainingError,
    compute_gae,
    dual_update,
    imitation_accuracy,
    ppo_surrogate,
    pretrain_imitation,
    train_ppo_lagr_single_agent,
    unconstrained_reward_fn,
)


def scenario(m=4, k=2, seed=3, **kw):
    base = dict(num_aps=m, num_ues=k, se_target=1.0, rng_seed=seed,
                obs_probe_samples=100, episode_windows=50)
    base.update(kw)
    return ScenarioConfig(**base)


def env_factory(cfg, seed):
    def factory(i):
        return CellFreeEnv(cfg, phy=PhyParams(rho_d=1e13), rng=derive_rng(seed, i))
    return factory


# --- GAE -------------------------------------------------------------------

def test_gae_gamma_zero_collapses():
    rng = np.random.default_rng(0)
    r = rng.normal(size=(6, 3))
    v = rng.normal(size=(6, 3))
    adv, targets = compute_gae(r, v, rng.normal(size=3), gamma=0.0, lam=0.7)
    np.testing.assert_allclose(adv, r - v, atol=1e-12)
    np.testing.assert_allclose(targets, adv + v, atol=1e-12)


def test_gae_constant_reward_fixed_point():
    gamma = 0.9
    r = np.full((8, 2), 0.5)
    v = np.full((8, 2), 0.5 / (1 - gamma))
    adv, _ = compute_gae(r, v, v[0], gamma=gamma, lam=0.95)
    np.testing.assert_allclose(adv, 0.0, atol=1e-12)


def test_gae_matches_bruteforce_discounted_sum():
    rng = np.random.default_rng(1)
    t_len = 10
    r = rng.normal(size=(t_len,))
    v = rng.normal(size=(t_len,))
    boot = rng.normal()
    gamma, lam = 0.37, 0.81
    adv, _ = compute_gae(r, v, np.array(boot), gamma, lam)
    v_ext = np.append(v, boot)
    delta = r + gamma * v_ext[1:] - v_ext[:-1]
    for t in range(t_len):
        expected = sum((gamma * lam) ** (j - t) * delta[j] for j in range(t, t_len))
        assert abs(adv[t] - expected) < 1e-10


def test_gae_respects_done_boundaries():
    r = np.array([1.0, 1.0, 1.0])
    v = np.zeros(3)
    dones = np.array([0.0, 1.0, 0.0])
    adv, _ = compute_gae(r, v, np.array(5.0), gamma=0.5, lam=1.0, dones=dones)
    # episode break after t=1: nothing from t=2 or the bootstrap leaks back
    assert adv[1] == pytest.approx(1.0)
    assert adv[0] == pytest.approx(1.0 + 0.5 * 1.0)
    assert adv[2] == pytest.approx(1.0 + 0.5 * 5.0)


def test_gae_shape_mismatch():
    with pytest.raises(TrainingError):
        compute_gae(np.zeros((3, 2)), np.zeros((4, 2)), np.zeros(2), 0.9, 0.95)


# --- dual update -------------------------------------------------------------

def test_dual_update_linear_accumulation():
    lam = 0.0
    for s in range(1, 6):
        lam = dual_update(lam, np.array([0.3, 0.3, 0.3]), lambda_lr=2.0)
        assert lam == pytest.approx(s * 2.0 * 0.3)


def test_dual_update_projection():
    lam = 0.0
    for _ in range(5):
        lam = dual_update(lam, np.array([-1.0, -2.0]), lambda_lr=2.0)
        assert lam == 0.0
    lam = dual_update(1.0, np.array([-10.0]), lambda_lr=2.0)
    assert lam == 0.0


# --- PPO surrogate ------------------------------------------------------------

def test_surrogate_equals_advantage_at_ratio_one():
    rng = np.random.default_rng(2)
    logp = rng.normal(size=20) - 1.0
    adv = rng.normal(size=20)
    val = ppo_surrogate(Tensor(logp), logp, adv, 0.1).item()
    assert val == pytest.approx(adv.mean(), abs=1e-12)


def test_clipping_bites_on_large_positive_ratio():
    # rho = 2 > 1 + eps with positive advantage: clipped branch wins
    logp_old = np.zeros(4) - 1.0
    logp_new = logp_old + np.log(2.0)
    adv = np.ones(4)
    val = ppo_surrogate(Tensor(logp_new), logp_old, adv, 0.1).item()
    assert val == pytest.approx(1.1, abs=1e-12)
    # negative advantage with small ratio clips at 1 - eps
    logp_new2 = logp_old + np.log(0.5)
    val2 = ppo_surrogate(Tensor(logp_new2), logp_old, -np.ones(4), 0.1).item()
    assert val2 == pytest.approx(-0.9, abs=1e-12)


# --- imitation pretraining -----------------------------------------------------

def small_policy(seed=0, **kw):
    return init_policy_state(PolicySpec(embed_dim=16, gru_hidden=16, **kw),
                             derive_rng(seed, 99))


def test_pretrain_empty_dataset_error():
    ds = PretrainDataset(2, 2, 10, 1,
                         np.empty((0, 4, 10), np.float32),
                         np.empty((0, 4), np.float32),
                         np.empty((0, 4), np.uint8))
    with pytest.raises(TrainingError, match="empty"):
        pretrain_imitation(small_policy(), ds, 1, 1e-3, derive_rng(0, 1))


def test_pretrain_lr_zero_keeps_params():
    env = CellFreeEnv(scenario(), phy=PhyParams(rho_d=1e13))
    ds = generate_pretraining_dataset(env, 8, 2)
    state = small_policy()
    before = {k: p.data.copy() for k, p in state.params.items()}
    pretrain_imitation(state, ds, 1, 0.0, derive_rng(0, 2), batch_windows=4)
    for k, p in state.params.items():
        np.testing.assert_array_equal(p.data, before[k])


def test_pretrain_random_labels_hits_label_prior():
    # labels independent of observations: best achievable is the majority rate
    rng = np.random.default_rng(3)
    count, m, k = 60, 3, 2
    n = m * k
    hist = rng.normal(size=(count, n, 10)).astype(np.float32)
    labels = (rng.random((count, n)) < 0.25).astype(np.uint8)
    ds = PretrainDataset(m, k, 10, 1, hist, hist[:, :, -1].copy(), labels)
    state = small_policy()
    curve = pretrain_imitation(state, ds, 8, 1e-3, derive_rng(0, 3), batch_windows=16)
    prior = max(labels.mean(), 1 - labels.mean())
    assert curve[-1] <= prior + 0.08
    assert curve[-1] >= prior - 0.12


def test_pretrain_learns_k_strongest_quickly():
    env = CellFreeEnv(scenario(m=5, k=2, seed=6), phy=PhyParams(rho_d=1e13))
    ds = generate_pretraining_dataset(env, 300, 2)
    holdout_env = CellFreeEnv(scenario(m=5, k=2, seed=7), phy=PhyParams(rho_d=1e13))
    holdout = generate_pretraining_dataset(holdout_env, 60, 2)
    state = small_policy()
    curve = pretrain_imitation(state, ds, 6, 3e-3, derive_rng(0, 4),
                               batch_windows=32, holdout=holdout)
    assert curve[-1] > 0.9
    assert imitation_accuracy(state, holdout) == curve[-1]


# --- trainers ------------------------------------------------------------------

def test_mappo_training_reproducible_bitwise():
    cfg = scenario()

    def run():
        tc = TrainConfig(total_env_steps=32, num_parallel_envs=2, rollout_length=4,
                         ppo_update_iterations=2)
        state = small_policy(seed=5)
        envs = [env_factory(cfg, 11)(i) for i in range(2)]
        tr = MappoTrainer(config=tc, state=state, envs=envs, rng=derive_rng(11, 10_000))
        rows = [tr.train_iteration() for _ in range(4)]
        return rows, {k: p.data.copy() for k, p in state.params.items()}

    rows_a, params_a = run()
    rows_b, params_b = run()
    for ra, rb in zip(rows_a, rows_b):
        ra.pop("wallclock_s"), rb.pop("wallclock_s")
        assert ra == rb
    for k in params_a:
        assert np.array_equal(params_a[k], params_b[k])


def test_mappo_trainer_snapshot_resume_bitwise():
    cfg = scenario()
    tc = TrainConfig(total_env_steps=1000, num_parallel_envs=2, rollout_length=4,
                     ppo_update_iterations=2)

    state = small_policy(seed=8)
    envs = [env_factory(cfg, 13)(i) for i in range(2)]
    tr = MappoTrainer(config=tc, state=state, envs=envs, rng=derive_rng(13, 10_000))
    tr.train_iteration()
    tr.train_iteration()
    snap = tr.trainer_state()
    params_snap = {k: p.data.copy() for k, p in state.params.items()}
    expected = [tr.train_iteration(), tr.train_iteration()]

    state2 = small_policy(seed=999)  # arbitrary init, overwritten below
    for k, p in state2.params.items():
        p.data[:] = params_snap[k]
    envs2 = [env_factory(cfg, 13)(i) for i in range(2)]
    for e in envs2:
        e.reset()
    tr2 = MappoTrainer(config=tc, state=state2, envs=envs2, rng=derive_rng(13, 10_000))
    tr2.restore(snap)
    resumed = [tr2.train_iteration(), tr2.train_iteration()]
    for ra, rb in zip(expected, resumed):
        ra.pop("wallclock_s"), rb.pop("wallclock_s")
        assert ra == rb


def test_unconstrained_reward_values():
    fn = unconstrained_reward_fn(eta=2.0)

    class FakeEnv:
        scenario = scenario(m=2, k=2)

    class FakeFeedback:
        ue_avg_se = np.array([1.0, 0.0])      # UE0 at target, UE1 at zero
        reward = np.array([0.0, 0.0, -1.0, -1.0])  # AP1 active

    r = fn(FakeFeedback, FakeEnv)
    # agent (0,0): SE term 1, inactive -> eta * 1
    assert r[0] == pytest.approx(2.0)
    # agent (0,1): SE term 0, inactive -> 0
    assert r[1] == pytest.approx(0.0)
    # agent (1,0): SE term 1, active -> eta - 1
    assert r[2] == pytest.approx(1.0)
    # agent (1,1): SE term 0, active -> -1
    assert r[3] == pytest.approx(-1.0)


def test_unconstrained_se_term_saturates():
    fn = unconstrained_reward_fn(eta=1.0)

    class FakeEnv:
        scenario = scenario(m=1, k=1)

    class FakeFeedback:
        ue_avg_se = np.array([5.0])   # far above target
        reward = np.array([0.0])

    assert fn(FakeFeedback, FakeEnv)[0] == pytest.approx(1.0)


def test_ppo_lagr_head_count_and_training_step():
    spec = MlpSpec(num_aps=3, num_ues=2, hidden=32)
    state = init_mlp_state(spec, derive_rng(0, 5))
    probs = mlp_forward_actor(state, np.zeros((4, 6))).data
    assert probs.shape == (4, 6, 2)
    np.testing.assert_allclose(probs.sum(axis=2), 1.0, atol=1e-12)

    cfg = scenario(m=3, k=2)
    tc = TrainConfig(total_env_steps=16, num_parallel_envs=2, rollout_length=4,
                     ppo_update_iterations=2)
    trained, lam_trace, rows = train_ppo_lagr_single_agent(
        tc, env_factory(cfg, 21), state, derive_rng(21, 10_000))
    assert len(rows) == 2
    assert all(lam >= 0 for lam in lam_trace)


@pytest.mark.slow
def test_ppo_lagr_toy_learns_to_deactivate():
    # 4 APs x 1 UE with a small SE target: one AP is enough (exhaustive
    # check below), so a trained policy should reach the target with two
    # or fewer active APs within the window budget.
    from cfaps.experiment import train_with_periodic_eval
    from cfaps.training import PpoLagrTrainer

    kappa = 0.5
    cfg = scenario(m=4, k=1, seed=17, se_target=kappa, episode_windows=100)
    state = init_mlp_state(MlpSpec(num_aps=4, num_ues=1, hidden=64), derive_rng(17, 50))
    tc = TrainConfig(total_env_steps=20_000, num_parallel_envs=8, rollout_length=32)
    envs = [env_factory(cfg, 17)(i) for i in range(8)]
    trainer = PpoLagrTrainer(config=tc, state=state, envs=envs,
                             rng=derive_rng(17, 10_000))

    def make_eval_env():
        return CellFreeEnv(scenario(m=4, k=1, seed=18, se_target=kappa),
                           phy=PhyParams(rho_d=1e13), rng=derive_rng(18, 0))

    # exhaustive policy enumeration: the best single association already
    # meets the target, so the learned policy has no excuse above 2 APs
    probe = make_eval_env()
    probe.reset()
    best_act = None
    for bits in range(16):
        fixed = np.array([(bits >> i) & 1 for i in range(4)])
        env2 = make_eval_env()
        _, summary = evaluate_policy(env2, lambda o, g: fixed, 1, 50)
        if summary["mean_se"][0] >= kappa:
            count = int(fixed.sum())
            best_act = count if best_act is None else min(best_act, count)
    assert best_act == 1

    result = train_with_periodic_eval(
        trainer, make_eval_env, mlp_greedy_policy,
        eval_every_iters=5, eval_windows=50, max_env_steps=20_000,
        feasible=lambda p: p.mean_se >= 0.9 * kappa,
        better=lambda a, b: a.mean_active_aps < b.mean_active_aps,
        stop_on_feasible_evals=0,
    )
    assert result.best_point is not None, "never reached the SE target"
    assert result.best_point.mean_active_aps <= 2.0
    # the selected snapshot reproduces the recorded operating point
    _, summary = evaluate_policy(make_eval_env(), mlp_greedy_policy(trainer.state), 1, 50)
    assert summary["mean_se"][0] >= 0.9 * kappa
    assert summary["active_aps"][0] <= 2.0
