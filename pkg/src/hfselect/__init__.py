"""Stock selection from high-frequency price-volume bars.

LSTM and CNN classifiers predict quartile buckets of the next day's
open-to-close return; class probabilities become an expected return that
drives a daily-rebalance backtest.
"""
__version__ = "0.1.0"
