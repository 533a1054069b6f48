"""crossdrive: hybrid MPC + RL speed adaptation for intersection and merge driving."""

__version__ = "0.1.0"
