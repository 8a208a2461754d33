"""Moving-object tube proposals from motion boundaries and point trajectories."""

__version__ = "0.1.0"
