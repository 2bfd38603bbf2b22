"""Two-timescale constrained multi-agent environment.

One agent per AP-UE pair. Every environment step covers one association
window: the binary action matrix is held fixed while the simulator runs
slots_per_window slots of mobility, channel, MRT precoding, and SINR/SE
accounting. Feedback is local: agents sharing an AP see that AP's
activation penalty as reward, agents sharing a UE see that UE's SE
shortfall as cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import PropagationParams, build_channel_matrix
from .phy import PhyParams, count_active_aps, slot_metrics
from .scenario import MobilityState, ScenarioConfig, place_nodes, step_mobility, ue_positions_3d


class EnvError(Exception):
    pass


@dataclass
class AgentGraph:
    """Agent coordination topology for an M x K network.

    Node ids are m * K + k. Two edge types: nodes sharing a UE column and
    nodes sharing an AP row.
    """

    num_aps: int
    num_ues: int

    @property
    def num_agents(self) -> int:
        return self.num_aps * self.num_ues

    def node(self, m: int, k: int) -> int:
        return m * self.num_ues + k

    def same_ue_neighbors(self, i: int) -> np.ndarray:
        k = i % self.num_ues
        nodes = np.arange(self.num_aps) * self.num_ues + k
        return nodes[nodes != i]

    def same_ap_neighbors(self, i: int) -> np.ndarray:
        m = i // self.num_ues
        nodes = m * self.num_ues + np.arange(self.num_ues)
        return nodes[nodes != i]

    def edge_pairs(self, edge_type: str) -> np.ndarray:
        """Symmetric edge set as unordered (i, j) pairs with i < j."""
        pairs = []
        for i in range(self.num_agents):
            nbrs = (self.same_ue_neighbors(i) if edge_type == "same_ue"
                    else self.same_ap_neighbors(i))
            pairs.extend((i, j) for j in nbrs if i < j)
        return np.array(pairs, dtype=np.intp).reshape(-1, 2)


@dataclass
class Observations:
    """Batched per-agent observations in node-id order.

    history[n, t]: the H most recent normalized channel magnitudes.
    current[n]: the magnitude at the decision instant (== history[:, -1]).
    """

    history: np.ndarray
    current: np.ndarray

    def copy(self) -> "Observations":
        return Observations(self.history.copy(), self.current.copy())


@dataclass
class WindowFeedback:
    reward: np.ndarray        # (N,) in {-1, 0}
    cost: np.ndarray          # (N,) SE shortfall of the agent's UE
    ue_avg_se: np.ndarray     # (K,)
    active_ap_count: int
    total_power: float


@dataclass
class ObsNormalization:
    """log10-magnitude standardization constants, frozen per environment."""

    mean: float
    std: float

    def apply(self, magnitudes: np.ndarray) -> np.ndarray:
        return (np.log10(magnitudes) - self.mean) / self.std


class CellFreeEnv:
    """Self-contained environment instance: own rng, mobility, channels."""

    def __init__(self, scenario: ScenarioConfig, propagation: PropagationParams | None = None,
                 phy: PhyParams | None = None, rng: np.random.Generator | None = None):
        self.scenario = scenario
        self.propagation = propagation or PropagationParams()
        self.phy = phy or PhyParams()
        self.rng = rng if rng is not None else np.random.default_rng(scenario.rng_seed)
        self.graph = AgentGraph(scenario.num_aps, scenario.num_ues)
        self.normalization: ObsNormalization | None = None
        self.ap_positions: np.ndarray | None = None
        self.mobility: MobilityState | None = None
        self._history: np.ndarray | None = None
        self.window_index = 0

    # -- lifecycle ---------------------------------------------------------

    def reset(self) -> Observations:
        """Fresh placement; histories warmed up with an all-zero association."""
        cfg = self.scenario
        self.ap_positions, self.mobility = place_nodes(cfg, self.rng)
        if self.normalization is None:
            self.normalization = self._probe_normalization()
        n = self.graph.num_agents
        self._history = np.zeros((n, cfg.history_len))
        for _ in range(cfg.history_len):
            step_mobility(self.mobility, cfg.slot_duration, cfg, self.rng)
            self._push_history(self._channel_magnitudes())
        self.window_index = 0
        return self._observations()

    def step(self, actions: np.ndarray):
        """Run one association window.

        Returns (feedback, next_observations, episode_done).
        """
        cfg = self.scenario
        n = self.graph.num_agents
        actions = np.asarray(actions)
        if actions.shape != (n,):
            raise EnvError(f"expected {n} actions, got shape {actions.shape}")
        alpha = actions.reshape(cfg.num_aps, cfg.num_ues).astype(int)

        se_sum = np.zeros(cfg.num_ues)
        power_sum = 0.0
        for _ in range(cfg.slots_per_window):
            step_mobility(self.mobility, cfg.slot_duration, cfg, self.rng)
            cm = self._channel_matrix()
            metrics = slot_metrics(cm.g, alpha, self.phy)
            se_sum += metrics.se
            power_sum += metrics.total_power
            self._push_history(np.abs(cm.g).reshape(-1))

        ue_avg_se = se_sum / cfg.slots_per_window
        ap_active = alpha.sum(axis=1) > 0
        reward = np.where(np.repeat(ap_active, cfg.num_ues), -1.0, 0.0)
        cost = np.tile(cfg.se_target - ue_avg_se, cfg.num_aps)
        feedback = WindowFeedback(
            reward=reward,
            cost=cost,
            ue_avg_se=ue_avg_se,
            active_ap_count=count_active_aps(alpha),
            total_power=power_sum / cfg.slots_per_window,
        )
        self.window_index += 1
        done = self.window_index >= cfg.episode_windows
        return feedback, self._observations(), done

    # -- state snapshots (training resume) -----------------------------------

    def get_snapshot(self) -> dict:
        """Everything needed to continue stepping bit-for-bit."""
        from .seeding import rng_state
        return {
            "window_index": self.window_index,
            "norm_mean": self.normalization.mean,
            "norm_std": self.normalization.std,
            "rng": rng_state(self.rng),
            "arrays": {
                "ap_positions": self.ap_positions.copy(),
                "position": self.mobility.position.copy(),
                "heading": self.mobility.heading.copy(),
                "speed": self.mobility.speed.copy(),
                "remaining_pause": self.mobility.remaining_pause.copy(),
                "waypoint_timer": self.mobility.waypoint_timer.copy(),
                "history": self._history.copy(),
            },
        }

    def set_snapshot(self, snap: dict) -> None:
        from .scenario import MobilityState
        from .seeding import restore_rng
        arrays = snap["arrays"]
        self.window_index = int(snap["window_index"])
        self.normalization = ObsNormalization(snap["norm_mean"], snap["norm_std"])
        self.rng = restore_rng(snap["rng"])
        self.ap_positions = arrays["ap_positions"].copy()
        self.mobility = MobilityState(
            position=arrays["position"].copy(),
            heading=arrays["heading"].copy(),
            speed=arrays["speed"].copy(),
            remaining_pause=arrays["remaining_pause"].copy(),
            waypoint_timer=arrays["waypoint_timer"].copy(),
            mean_speed=self.scenario.mean_speeds_ms(),
        )
        self._history = arrays["history"].copy()

    # -- internals ----------------------------------------------------------

    def _channel_matrix(self):
        ue_pos = ue_positions_3d(self.mobility, self.scenario.ue_height)
        return build_channel_matrix(self.ap_positions, ue_pos, self.propagation,
                                    slot_index=self.window_index,
                                    rng=self.rng if self.propagation.shadowing_sigma_db > 0 else None)

    def _channel_magnitudes(self) -> np.ndarray:
        return np.abs(self._channel_matrix().g).reshape(-1)

    def _push_history(self, magnitudes: np.ndarray) -> None:
        self._history[:, :-1] = self._history[:, 1:]
        self._history[:, -1] = self.normalization.apply(magnitudes)

    def _observations(self) -> Observations:
        return Observations(self._history.copy(), self._history[:, -1].copy())

    def set_normalization(self, mean: float, std: float) -> None:
        """Adopt externally fixed constants (from a checkpoint) instead of
        probing; must be called before the first reset."""
        self.normalization = ObsNormalization(mean, std)

    def _probe_normalization(self) -> ObsNormalization:
        """Standardization constants for log-magnitudes, probed once from
        scenario-level randomness (not the current placement) so every
        environment of a run agrees on them."""
        from .channel import _gain_from_distance
        from .seeding import PROBE_STREAM, derive_rng
        cfg = self.scenario
        rng = derive_rng(cfg.rng_seed, PROBE_STREAM)
        n = max(cfg.obs_probe_samples, 2)

        def disk(height):
            r = cfg.area_radius * np.sqrt(rng.random(n))
            theta = rng.random(n) * 2 * np.pi
            return np.column_stack([r * np.cos(theta), r * np.sin(theta),
                                    np.full(n, height)])

        ap = disk(cfg.ap_height)
        ue = disk(cfg.ue_height)
        d = np.linalg.norm(ap - ue, axis=1)
        logs = np.log10(np.abs(_gain_from_distance(d, self.propagation)))
        std = float(logs.std())
        return ObsNormalization(mean=float(logs.mean()), std=std if std > 0 else 1.0)


def evaluate_policy(env: CellFreeEnv, policy, episodes: int, windows_per_episode: int):
    """Roll a policy and aggregate per-window metrics.

    `policy(observations, graph) -> binary action vector`. Deterministic
    given the environment seed and a deterministic policy. Returns
    (records, summary): records is a list of per-window dicts, summary
    maps metric name to (mean, std).
    """
    records = []
    for _ in range(episodes):
        obs = env.reset()
        for _ in range(windows_per_episode):
            actions = policy(obs, env.graph)
            feedback, obs, done = env.step(actions)
            records.append({
                "active_aps": feedback.active_ap_count,
                "total_power_w": feedback.total_power,
                "ue_avg_se": feedback.ue_avg_se.copy(),
                "mean_se": float(feedback.ue_avg_se.mean()),
                "mean_cost": float(env.scenario.se_target - feedback.ue_avg_se.mean()),
            })
            if done:
                break
    summary = {}
    for key in ("active_aps", "total_power_w", "mean_se", "mean_cost"):
        vals = np.array([r[key] for r in records], dtype=float)
        summary[key] = (float(vals.mean()), float(vals.std()))
    return records, summary
