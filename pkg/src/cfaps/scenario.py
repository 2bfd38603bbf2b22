"""Node placement and the random-waypoint mobility process.

UEs move inside a disk-shaped service area: exponential speeds per
mobility class, exponential travel legs, random pauses at waypoints,
specular reflection at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KMH_TO_MS = 1000.0 / 3600.0


class ConfigError(Exception):
    pass


@dataclass
class ScenarioConfig:
    num_aps: int
    num_ues: int
    se_target: float
    rng_seed: int = 1
    area_radius: float = 500.0
    ap_height: float = 10.0
    ue_height: float = 1.5
    mobility_class: str = "pedestrian"  # one class for all UEs, or comma list of length num_ues
    pedestrian_speed_kmh: float = 1.0
    vehicular_speed_kmh: float = 35.0
    slot_duration: float = 0.005
    slots_per_window: int = 10
    travel_time_mean_s: float = 10.0
    pause_probability: float = 0.3
    pause_time_mean_s: float = 5.0
    history_len: int = 10
    episode_windows: int = 200
    obs_probe_samples: int = 1000

    def __post_init__(self):
        if self.num_aps < 1 or self.num_ues < 1:
            raise ConfigError("num_aps and num_ues must be >= 1")
        if self.area_radius <= 0:
            raise ConfigError("area_radius must be positive")
        if self.slots_per_window < 1:
            raise ConfigError("slots_per_window must be >= 1")
        if self.se_target <= 0:
            raise ConfigError("se_target must be positive")
        if self.pedestrian_speed_kmh <= 0 or self.vehicular_speed_kmh <= 0:
            raise ConfigError("mean speeds must be positive")
        if not 0.0 <= self.pause_probability <= 1.0:
            raise ConfigError("pause_probability must be in [0, 1]")

    def ue_classes(self) -> list[str]:
        parts = [p.strip() for p in self.mobility_class.split(",")]
        if len(parts) == 1:
            parts = parts * self.num_ues
        if len(parts) != self.num_ues:
            raise ConfigError(
                f"mobility_class lists {len(parts)} entries for {self.num_ues} UEs")
        for p in parts:
            if p not in ("pedestrian", "vehicular"):
                raise ConfigError(f"unknown mobility class {p!r}")
        return parts

    def mean_speeds_ms(self) -> np.ndarray:
        table = {
            "pedestrian": self.pedestrian_speed_kmh * KMH_TO_MS,
            "vehicular": self.vehicular_speed_kmh * KMH_TO_MS,
        }
        return np.array([table[c] for c in self.ue_classes()])


@dataclass
class MobilityState:
    """Per-UE kinematic state; all arrays indexed by UE."""

    position: np.ndarray        # (K, 2) meters
    heading: np.ndarray         # (K,) radians
    speed: np.ndarray           # (K,) m/s
    remaining_pause: np.ndarray  # (K,) seconds
    waypoint_timer: np.ndarray  # (K,) seconds until next waypoint
    mean_speed: np.ndarray = field(repr=False, default=None)  # (K,) m/s, per class


def _disk_uniform(n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform-by-area points in a disk centered at the origin."""
    r = radius * np.sqrt(rng.random(n))
    theta = rng.random(n) * 2.0 * np.pi
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def place_nodes(config: ScenarioConfig, rng: np.random.Generator):
    """Draw AP positions (M, 3) and a fresh MobilityState for the UEs."""
    ap_xy = _disk_uniform(config.num_aps, config.area_radius, rng)
    ap_pos = np.column_stack([ap_xy, np.full(config.num_aps, config.ap_height)])

    k = config.num_ues
    means = config.mean_speeds_ms()
    state = MobilityState(
        position=_disk_uniform(k, config.area_radius, rng),
        heading=rng.random(k) * 2.0 * np.pi,
        speed=rng.exponential(means),
        remaining_pause=np.zeros(k),
        waypoint_timer=rng.exponential(config.travel_time_mean_s, size=k),
        mean_speed=means,
    )
    return ap_pos, state


def ue_positions_3d(state: MobilityState, ue_height: float) -> np.ndarray:
    k = state.position.shape[0]
    return np.column_stack([state.position, np.full(k, ue_height)])


def step_mobility(state: MobilityState, dt: float, config: ScenarioConfig,
                  rng: np.random.Generator) -> MobilityState:
    """Advance every UE by dt seconds (in place; the state is returned).

    Paused UEs sit still and burn pause time. Moving UEs advance along
    their heading; the waypoint timer ticks only while moving. On expiry
    the UE pauses with probability pause_probability for an exponential
    duration, then continues with a fresh heading, speed, and leg timer.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    k = state.position.shape[0]
    paused = state.remaining_pause > 0.0
    moving = ~paused

    state.remaining_pause[paused] = np.maximum(state.remaining_pause[paused] - dt, 0.0)

    if moving.any():
        step = (state.speed * dt)[moving]
        state.position[moving, 0] += step * np.cos(state.heading[moving])
        state.position[moving, 1] += step * np.sin(state.heading[moving])
        _reflect_into_disk(state, config.area_radius)
        state.waypoint_timer[moving] -= dt

    # One draw per UE per step keeps the stream layout fixed and the
    # process deterministic for a given (seed, config).
    pause_draw = rng.random(k) < config.pause_probability
    pause_len = rng.exponential(config.pause_time_mean_s, size=k)
    new_heading = rng.random(k) * 2.0 * np.pi
    new_speed = rng.exponential(state.mean_speed)
    new_timer = rng.exponential(config.travel_time_mean_s, size=k)

    expired = moving & (state.waypoint_timer <= 0.0)
    if expired.any():
        goes_on_pause = expired & pause_draw
        state.remaining_pause[goes_on_pause] = pause_len[goes_on_pause]
        state.heading[expired] = new_heading[expired]
        state.speed[expired] = new_speed[expired]
        state.waypoint_timer[expired] = new_timer[expired]
    return state


def _reflect_into_disk(state: MobilityState, radius: float) -> None:
    """Specular reflection of any UE that crossed the boundary."""
    r = np.linalg.norm(state.position, axis=1)
    out = r > radius
    if not out.any():
        return
    p = state.position[out]
    rr = r[out][:, None]
    n = p / rr
    # fold the radial overshoot back inside
    state.position[out] = n * np.clip(2.0 * radius - rr, 0.0, radius)
    v = np.column_stack([np.cos(state.heading[out]), np.sin(state.heading[out])])
    v -= 2.0 * (v * n).sum(axis=1, keepdims=True) * n
    state.heading[out] = np.arctan2(v[:, 1], v[:, 0])
