"""Safe-agent regularized RL on a Game-of-Life gridworld."""

from sarlkit._kernels import BACKEND
from sarlkit.grid import Action, Board, CellKind, TaskKind

__all__ = ["BACKEND", "Action", "Board", "CellKind", "TaskKind"]
__version__ = "0.1.0"
