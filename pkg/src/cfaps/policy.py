"""Shared policy network: GRU temporal encoder, two rounds of
attention-based graph convolution over same-UE and same-AP edges, a
2-way actor head, and scalar reward/cost critic heads.

All agents share one parameter set, so a trained network transfers
across network sizes. The actor and both critics use architecturally
identical backbones with separate parameters unless tie_backbones is
set.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .autodiff import Graph, Tensor
from .autodiff import tensor as T
from .env import AgentGraph, Observations
from .layers import affine_layer_norm, grouped_attention, gru_sequence, linear, orthogonal

CHECKPOINT_MAGIC = b"CFCK"
CHECKPOINT_VERSION = 1

NETWORKS = ("actor", "rcritic", "ccritic")


class PolicyError(Exception):
    pass


class CheckpointError(Exception):
    pass


@dataclass
class PolicySpec:
    embed_dim: int = 64
    gru_hidden: int = 64
    rounds: int = 2
    use_rnn: bool = True
    include_self: bool = True
    tie_backbones: bool = False
    head_gain: float = 0.01

    def __post_init__(self):
        if self.embed_dim <= 0 or self.gru_hidden <= 0:
            raise PolicyError("embed_dim and gru_hidden must be positive")
        if self.rounds < 0:
            raise PolicyError("rounds must be >= 0")

    @property
    def feature_dim(self) -> int:
        # initial embedding + GRU embedding + one block per round per edge type
        return self.embed_dim * (1 + 2 * self.rounds) + self.gru_hidden


@dataclass
class PolicyState:
    spec: PolicySpec
    params: dict[str, Tensor]
    norm_mean: float = 0.0
    norm_std: float = 1.0
    meta: dict = field(default_factory=dict)

    def network_params(self, net: str) -> dict[str, Tensor]:
        """Parameters updated when training one network.

        With tied backbones the critics own only their heads; the shared
        backbone lives under the actor's keys.
        """
        out = {}
        for key, t in self.params.items():
            owner, name = key.split(".", 1)
            if owner == net:
                out[key] = t
            elif (self.spec.tie_backbones and net != "actor" and owner == "actor"
                  and not name.startswith("head.")):
                out[key] = t
        return out


def _init_backbone(rng, spec: PolicySpec, prefix: str, params: dict[str, Tensor]):
    e, h = spec.embed_dim, spec.gru_hidden

    def p(name, arr):
        params[f"{prefix}.{name}"] = Tensor(arr, requires_grad=True)

    if spec.use_rnn:
        p("gru.w", orthogonal(rng, (1, 3 * h)))
        p("gru.u", orthogonal(rng, (h, 3 * h)))
        p("gru.b", np.zeros((1, 3 * h)))
        p("proj.w", orthogonal(rng, (h + 1, e)))
    else:
        p("proj.w", orthogonal(rng, (1, e)))
    p("proj.b", np.zeros((1, e)))
    for r in range(spec.rounds):
        for et in ("ue", "ap"):
            for proj in ("wq", "wk", "wv"):
                p(f"round{r}.{et}.{proj}", orthogonal(rng, (e, e)))
        p(f"round{r}.comb.w", orthogonal(rng, (3 * e, e)))
        p(f"round{r}.comb.b", np.zeros((1, e)))
        p(f"round{r}.ln.gain", np.ones((1, e)))
        p(f"round{r}.ln.bias", np.zeros((1, e)))
    f = spec.feature_dim
    p("final_ln.gain", np.ones((1, f)))
    p("final_ln.bias", np.zeros((1, f)))


def init_policy_state(spec: PolicySpec, rng: np.random.Generator,
                      norm_mean: float = 0.0, norm_std: float = 1.0) -> PolicyState:
    params: dict[str, Tensor] = {}
    nets = ("actor",) if spec.tie_backbones else NETWORKS
    for net in nets:
        _init_backbone(rng, spec, net, params)
    f = spec.feature_dim
    params["actor.head.w"] = Tensor(orthogonal(rng, (f, 2), gain=spec.head_gain), requires_grad=True)
    params["actor.head.b"] = Tensor(np.zeros((1, 2)), requires_grad=True)
    for net in ("rcritic", "ccritic"):
        params[f"{net}.head.w"] = Tensor(orthogonal(rng, (f, 1), gain=spec.head_gain), requires_grad=True)
        params[f"{net}.head.b"] = Tensor(np.zeros((1, 1)), requires_grad=True)
    return PolicyState(spec=spec, params=params, norm_mean=norm_mean, norm_std=norm_std)


# ---------------------------------------------------------------------------
# Batched graph layout
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _graph_layout(m: int, k: int, batch: int):
    """Index arrays that arrange batched node features into attention
    groups. Node order is (instance, ap, ue); same-AP groups are already
    contiguous, same-UE groups need the (instance, ue, ap) permutation."""
    n = m * k
    perm_ue = np.arange(batch * n).reshape(batch, m, k).transpose(0, 2, 1).reshape(-1)
    inv_ue = np.argsort(perm_ue, kind="stable")
    return perm_ue, inv_ue


def backbone_features(state: PolicyState, net: str, obs: Observations,
                      graph: AgentGraph, batch: int = 1) -> Tensor:
    """Full feature pipeline for one network; rows are batch * agents."""
    spec = state.spec
    prefix = "actor" if (spec.tie_backbones and net != "actor") else net
    params = state.params
    m, k = graph.num_aps, graph.num_ues
    n = batch * graph.num_agents
    hist = np.asarray(obs.history, dtype=np.float64).reshape(n, -1)
    cur = np.asarray(obs.current, dtype=np.float64).reshape(n, 1)

    if spec.use_rnn:
        h_gru = gru_sequence(hist, params[f"{prefix}.gru.w"],
                             params[f"{prefix}.gru.u"], params[f"{prefix}.gru.b"])
        proj_in = T.concat([h_gru, Tensor(cur)], axis=1)
    else:
        h_gru = Tensor(np.zeros((n, spec.gru_hidden)))
        proj_in = Tensor(cur)
    h0 = linear(proj_in, params[f"{prefix}.proj.w"], params[f"{prefix}.proj.b"])

    perm_ue, inv_ue = _graph_layout(m, k, batch)
    blocks = [h0, h_gru]
    h = h0
    for r in range(spec.rounds):
        msg_ue = T.relu(grouped_attention(
            h, params[f"{prefix}.round{r}.ue.wq"], params[f"{prefix}.round{r}.ue.wk"],
            params[f"{prefix}.round{r}.ue.wv"], perm_ue, inv_ue,
            groups=batch * k, size=m, include_self=spec.include_self))
        msg_ap = T.relu(grouped_attention(
            h, params[f"{prefix}.round{r}.ap.wq"], params[f"{prefix}.round{r}.ap.wk"],
            params[f"{prefix}.round{r}.ap.wv"], None, None,
            groups=batch * m, size=k, include_self=spec.include_self))
        blocks.extend([msg_ue, msg_ap])
        # the node state carries through each round so later queries can
        # compare their own embedding against neighborhood aggregates
        combined = linear(T.concat([h, msg_ue, msg_ap], axis=1),
                          params[f"{prefix}.round{r}.comb.w"],
                          params[f"{prefix}.round{r}.comb.b"])
        h = affine_layer_norm(combined, params[f"{prefix}.round{r}.ln.gain"],
                              params[f"{prefix}.round{r}.ln.bias"])
    feats = T.concat(blocks, axis=1)
    feats = affine_layer_norm(feats, params[f"{prefix}.final_ln.gain"],
                              params[f"{prefix}.final_ln.bias"])
    return feats


def forward_actor(state: PolicyState, obs: Observations, graph: AgentGraph,
                  batch: int = 1) -> Tensor:
    """Per-agent action probabilities, shape [batch * agents, 2]."""
    feats = backbone_features(state, "actor", obs, graph, batch)
    logits = linear(feats, state.params["actor.head.w"], state.params["actor.head.b"])
    return T.softmax_lastdim(logits)


def forward_critics(state: PolicyState, obs: Observations, graph: AgentGraph,
                    batch: int = 1, which=("rcritic", "ccritic")):
    """Per-agent value estimates for the requested critic networks."""
    outs = []
    for net in which:
        feats = backbone_features(state, net, obs, graph, batch)
        v = linear(feats, state.params[f"{net}.head.w"], state.params[f"{net}.head.b"])
        outs.append(v)
    return tuple(outs)


def greedy_policy(state: PolicyState, batch: int = 1):
    """Deterministic evaluation policy: argmax of the actor output."""

    def policy(obs: Observations, graph: AgentGraph) -> np.ndarray:
        probs = forward_actor(state, obs, graph, batch)
        return (probs.data[:, 1] > probs.data[:, 0]).astype(int)

    return policy


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(state: PolicyState, path, train_state: dict | None = None,
                    kind: str = "gnn") -> None:
    """Versioned binary checkpoint: JSON header + raw float64 blocks.

    Parameters are size-agnostic for the GNN policy, so a checkpoint
    trained at one (M, K) loads and runs at any other.
    """
    names = sorted(state.params.keys())
    blocks = [state.params[n].data for n in names]
    extra_blocks = []
    ts = None
    if train_state is not None:
        ts = {k: v for k, v in train_state.items() if k != "arrays"}
        ts["array_names"] = []
        for aname, arr in sorted(train_state.get("arrays", {}).items()):
            ts["array_names"].append({"name": aname, "shape": list(arr.shape)})
            extra_blocks.append(np.asarray(arr, dtype=np.float64))
    header = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "spec": asdict(state.spec),
        "normalization": {"mean": state.norm_mean, "std": state.norm_std},
        "meta": state.meta,
        "params": [{"name": n, "shape": list(state.params[n].data.shape)} for n in names],
        "train_state": ts,
    }
    raw = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(raw)))
        f.write(raw)
        for arr in blocks + extra_blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, expected_spec: PolicySpec | None = None):
    """Load a checkpoint; returns (PolicyState, train_state dict or None).

    Raises CheckpointError on bad magic, version mismatch, truncation,
    or a spec that disagrees with `expected_spec`.
    """
    header, payload = read_checkpoint_header(path)
    if header["kind"] != "gnn":
        raise CheckpointError(f"{path}: checkpoint kind {header['kind']!r}, expected 'gnn'")
    spec = PolicySpec(**header["spec"])
    if expected_spec is not None and asdict(spec) != asdict(expected_spec):
        raise CheckpointError(
            f"{path}: checkpoint spec {asdict(spec)} does not match expected {asdict(expected_spec)}")
    params = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        chunk = payload[offset:offset + size]
        if len(chunk) < size:
            raise CheckpointError(f"{path}: truncated parameter block {entry['name']}")
        params[entry["name"]] = Tensor(
            np.frombuffer(chunk, dtype="<f8").reshape(shape).copy(), requires_grad=True)
        offset += size
    ts = header.get("train_state")
    train_state = None
    if ts is not None:
        train_state = {k: v for k, v in ts.items() if k != "array_names"}
        arrays = {}
        for entry in ts.get("array_names", []):
            shape = tuple(entry["shape"])
            size = int(np.prod(shape)) * 8
            chunk = payload[offset:offset + size]
            if len(chunk) < size:
                raise CheckpointError(f"{path}: truncated train-state block {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
            offset += size
        train_state["arrays"] = arrays
    norm = header["normalization"]
    state = PolicyState(spec=spec, params=params, norm_mean=norm["mean"],
                        norm_std=norm["std"], meta=header.get("meta", {}))
    return state, train_state


def read_checkpoint_header(path):
    """Parse and validate the common checkpoint framing."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        try:
            header = json.loads(f.read(hlen).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})")
        payload = f.read()
    return header, payload
