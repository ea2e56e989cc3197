"""Rule-guided two-agent reinforcement learning for knowledge-graph completion."""

__version__ = "0.1.0"
