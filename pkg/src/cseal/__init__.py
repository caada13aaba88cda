"""Learning-path recommendation: recurrent knowledge tracing, prerequisite
graph navigation, and an actor-critic recommender, with rule-based and
data-driven learner simulators for training and evaluation."""

__version__ = "0.1.0"
