"""Monolithic single-agent baseline network.

The whole network state (all AP-UE channel magnitudes concatenated into
one vector) feeds an MLP actor with one independent binary head per
AP-UE pair, plus MLP reward/cost critics. Unlike the shared graph
policy, the input and output widths are tied to (M, K): changing the
network size requires retraining.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor
from .autodiff import tensor as T
from .layers import linear, orthogonal
from .policy import CheckpointError, read_checkpoint_header, save_checkpoint as _save_gnn  # noqa: F401
from . import policy as _policy


@dataclass
class MlpSpec:
    num_aps: int
    num_ues: int
    hidden: int = 256
    layers: int = 2
    head_gain: float = 0.01

    @property
    def input_dim(self) -> int:
        return self.num_aps * self.num_ues

    @property
    def num_heads(self) -> int:
        return self.num_aps * self.num_ues


@dataclass
class MlpState:
    spec: MlpSpec
    params: dict[str, Tensor]
    norm_mean: float = 0.0
    norm_std: float = 1.0

    def network_params(self, net: str) -> dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if k.startswith(net + ".")}


def init_mlp_state(spec: MlpSpec, rng: np.random.Generator,
                   norm_mean: float = 0.0, norm_std: float = 1.0) -> MlpState:
    params: dict[str, Tensor] = {}

    def backbone(prefix, out_dim, out_gain):
        dims = [spec.input_dim] + [spec.hidden] * spec.layers
        for i in range(spec.layers):
            params[f"{prefix}.l{i}.w"] = Tensor(orthogonal(rng, (dims[i], dims[i + 1])), requires_grad=True)
            params[f"{prefix}.l{i}.b"] = Tensor(np.zeros((1, dims[i + 1])), requires_grad=True)
        params[f"{prefix}.head.w"] = Tensor(orthogonal(rng, (spec.hidden, out_dim), gain=out_gain), requires_grad=True)
        params[f"{prefix}.head.b"] = Tensor(np.zeros((1, out_dim)), requires_grad=True)

    backbone("actor", 2 * spec.num_heads, spec.head_gain)
    backbone("rcritic", 1, spec.head_gain)
    backbone("ccritic", 1, spec.head_gain)
    return MlpState(spec=spec, params=params, norm_mean=norm_mean, norm_std=norm_std)


def _backbone_forward(state: MlpState, net: str, x: Tensor) -> Tensor:
    h = x
    for i in range(state.spec.layers):
        h = T.relu(linear(h, state.params[f"{net}.l{i}.w"], state.params[f"{net}.l{i}.b"]))
    return linear(h, state.params[f"{net}.head.w"], state.params[f"{net}.head.b"])


def mlp_forward_actor(state: MlpState, obs_vec: np.ndarray | Tensor) -> Tensor:
    """Per-head action probabilities, shape [batch, heads, 2]."""
    x = obs_vec if isinstance(obs_vec, Tensor) else Tensor(np.atleast_2d(obs_vec))
    logits = _backbone_forward(state, "actor", x)
    b = logits.data.shape[0]
    logits = T.reshape(logits, (b, state.spec.num_heads, 2))
    return T.softmax_lastdim(logits)


def mlp_forward_critics(state: MlpState, obs_vec: np.ndarray | Tensor,
                        which=("rcritic", "ccritic")):
    x = obs_vec if isinstance(obs_vec, Tensor) else Tensor(np.atleast_2d(obs_vec))
    return tuple(_backbone_forward(state, net, x) for net in which)


def mlp_greedy_policy(state: MlpState):
    """Evaluation adapter matching the environment policy protocol."""

    def policy(obs, graph):
        probs = mlp_forward_actor(state, obs.current.reshape(1, -1)).data[0]
        return (probs[:, 1] > probs[:, 0]).astype(int)

    return policy


def save_mlp_checkpoint(state: MlpState, path, train_state: dict | None = None) -> None:
    shim = _policy.PolicyState(
        spec=_policy.PolicySpec(),  # placeholder; real spec in meta
        params=state.params,
        norm_mean=state.norm_mean,
        norm_std=state.norm_std,
        meta={"mlp_spec": asdict(state.spec)},
    )
    _save_gnn(shim, path, train_state=train_state, kind="mlp")


def load_mlp_checkpoint(path):
    header, payload = read_checkpoint_header(path)
    if header["kind"] != "mlp":
        raise CheckpointError(f"{path}: checkpoint kind {header['kind']!r}, expected 'mlp'")
    spec = MlpSpec(**header["meta"]["mlp_spec"])
    params = {}
    offset = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        chunk = payload[offset:offset + size]
        if len(chunk) < size:
            raise CheckpointError(f"{path}: truncated parameter block {entry['name']}")
        params[entry["name"]] = Tensor(np.frombuffer(chunk, dtype="<f8").reshape(shape).copy(),
                                       requires_grad=True)
        offset += size
    ts = header.get("train_state")
    train_state = None
    if ts is not None:
        train_state = {k: v for k, v in ts.items() if k != "array_names"}
        arrays = {}
        for entry in ts.get("array_names", []):
            shape = tuple(entry["shape"])
            size = int(np.prod(shape)) * 8
            arrays[entry["name"]] = np.frombuffer(payload[offset:offset + size], dtype="<f8").reshape(shape).copy()
            offset += size
        train_state["arrays"] = arrays
    norm = header["normalization"]
    return MlpState(spec=spec, params=params, norm_mean=norm["mean"], norm_std=norm["std"]), train_state
