"""Cell-free massive MIMO access-point selection toolkit.

Simulator (mobility, LoS channels, MRT precoding, power model), a
constrained multi-agent RL environment over AP-UE link agents, the
graph-attention policy network, training procedures, heuristics, and a
CLI harness.
"""

__version__ = "0.1.0"
