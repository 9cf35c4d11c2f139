"""Adversarial deep hedging.

A neural hedger is trained against a recurrent path generator in a min-max
game, alongside GBM/Heston deep hedging, Black-Scholes baselines, a
one-step Gaussian stability analysis and a historical backtest pipeline.
Gradients come from the small reverse-mode tape in :mod:`advhedge.autodiff`.
"""

__version__ = "0.1.0"
