"""k-Strongest association heuristic and the imitation dataset pipeline.

The dataset file is flat binary: a fixed header then one block per
window holding float32 observation histories, float32 current
magnitudes, and uint8 labels for all agents.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .env import AgentGraph, CellFreeEnv, Observations

DATASET_MAGIC = b"CFDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIQ")  # magic, version, M, K, H, k, count


class DatasetError(Exception):
    pass


def k_strongest(magnitudes: np.ndarray, k: int) -> np.ndarray:
    """Associate each UE with its k largest-magnitude APs.

    Ties break toward the lower AP index. Any monotone transform of the
    magnitudes (for example the normalized observations) selects the
    same links.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    mag = np.asarray(magnitudes)
    m, n_ue = mag.shape
    kk = min(k, m)
    # stable sort on negated magnitudes: equal entries keep low-index order
    order = np.argsort(-mag, axis=0, kind="stable")
    alpha = np.zeros((m, n_ue), dtype=np.int8)
    cols = np.arange(n_ue)
    for rank in range(kk):
        alpha[order[rank], cols] = 1
    return alpha


def k_strongest_policy(k: int):
    """Policy adapter: pick top-k APs per UE from current observations."""

    def policy(obs: Observations, graph: AgentGraph) -> np.ndarray:
        mag = obs.current.reshape(graph.num_aps, graph.num_ues)
        return k_strongest(mag, k).reshape(-1)

    return policy


@dataclass
class PretrainDataset:
    """In-memory labeled windows: observations plus heuristic actions."""

    num_aps: int
    num_ues: int
    history_len: int
    k: int
    history: np.ndarray   # (count, N, H) float32
    current: np.ndarray   # (count, N) float32
    labels: np.ndarray    # (count, N) uint8

    @property
    def count(self) -> int:
        return self.history.shape[0]


def generate_pretraining_dataset(env: CellFreeEnv, num_windows: int, k: int) -> PretrainDataset:
    """Run the environment under the k-Strongest policy and record the
    (observation, label) pair at each window start."""
    if num_windows < 0:
        raise ValueError("num_windows must be >= 0")
    graph = env.graph
    n = graph.num_agents
    h = env.scenario.history_len
    history = np.empty((num_windows, n, h), dtype=np.float32)
    current = np.empty((num_windows, n), dtype=np.float32)
    labels = np.empty((num_windows, n), dtype=np.uint8)

    policy = k_strongest_policy(k)
    obs = env.reset()
    for w in range(num_windows):
        actions = policy(obs, graph)
        history[w] = obs.history
        current[w] = obs.current
        labels[w] = actions
        _, obs, done = env.step(actions)
        if done:
            obs = env.reset()
    return PretrainDataset(graph.num_aps, graph.num_ues, h, k, history, current, labels)


def write_dataset(ds: PretrainDataset, path) -> None:
    with open(path, "wb") as f:
        f.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, ds.num_aps,
                             ds.num_ues, ds.history_len, ds.k, ds.count))
        f.write(ds.history.astype(np.float32).tobytes())
        f.write(ds.current.astype(np.float32).tobytes())
        f.write(ds.labels.astype(np.uint8).tobytes())


def read_dataset(path) -> PretrainDataset:
    with open(path, "rb") as f:
        raw = f.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise DatasetError(f"{path}: truncated header")
        magic, version, m, k_ue, h, k_sel, count = _HEADER.unpack(raw)
        if magic != DATASET_MAGIC:
            raise DatasetError(f"{path}: bad magic {magic!r}")
        if version != DATASET_VERSION:
            raise DatasetError(f"{path}: unsupported version {version}")
        n = m * k_ue
        hist = np.frombuffer(f.read(count * n * h * 4), dtype=np.float32)
        cur = np.frombuffer(f.read(count * n * 4), dtype=np.float32)
        lab = np.frombuffer(f.read(count * n), dtype=np.uint8)
        if hist.size != count * n * h or cur.size != count * n or lab.size != count * n:
            raise DatasetError(f"{path}: truncated data section")
    return PretrainDataset(m, k_ue, h, k_sel,
                           hist.reshape(count, n, h).copy(),
                           cur.reshape(count, n).copy(),
                           lab.reshape(count, n).copy())
