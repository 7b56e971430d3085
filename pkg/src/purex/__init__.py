"""Bag-level distant-supervision relation extraction with a Q-learning
sentence selector and a positive/unlabeled bag classifier."""

__version__ = "0.1.0"
