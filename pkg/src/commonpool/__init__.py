"""Common-pool trust game: engine, mechanisms, learned players and planners."""

__version__ = "0.1.0"
