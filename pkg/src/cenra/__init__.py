"""Multi-task RL with a centralized reward agent that shares dense
knowledge rewards across sparse-reward key-door mazes."""

__version__ = "0.1.0"
