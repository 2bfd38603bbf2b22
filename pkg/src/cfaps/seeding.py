"""Deterministic stream splitting.

Every run draws all randomness from one manifest seed. Substreams
(environments, trainer, evaluation) come from a counter-based Philox
generator keyed by the seed: stream i starts at counter block i, so
streams never overlap and different seeds are independent.
"""

from __future__ import annotations

import numpy as np

ENV_STREAM_BASE = 0
TRAINER_STREAM = 10_000
EVAL_STREAM = 20_000
PROBE_STREAM = 30_000


def derive_rng(seed: int, stream: int) -> np.random.Generator:
    bitgen = np.random.Philox(key=np.uint64(seed), counter=[0, 0, 0, np.uint64(stream)])
    return np.random.Generator(bitgen)


def rng_state(rng: np.random.Generator) -> dict:
    """Bit-generator state as a JSON-serializable dict."""
    def convert(o):
        if isinstance(o, dict):
            return {k: convert(v) for k, v in o.items()}
        if isinstance(o, np.ndarray):
            return {"__array__": o.tolist(), "dtype": str(o.dtype)}
        if isinstance(o, np.integer):
            return int(o)
        return o

    return convert(rng.bit_generator.state)


def restore_rng(state: dict) -> np.random.Generator:
    def convert(o):
        if isinstance(o, dict):
            if "__array__" in o:
                return np.array(o["__array__"], dtype=o["dtype"])
            return {k: convert(v) for k, v in o.items()}
        return o

    state = convert(state)
    cls = getattr(np.random, state["bit_generator"])
    bitgen = cls()
    bitgen.state = state
    return np.random.Generator(bitgen)
