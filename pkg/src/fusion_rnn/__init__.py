"""Two-stream recurrent maneuver anticipation: cells, network, training, evaluation."""

__version__ = "0.1.0"
