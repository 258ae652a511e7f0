"""Long task-sequence continual-learning simulator with a numpy learner."""

__version__ = "0.1.0"
