"""Market analytics for coordinated pump-and-dump schemes.

The package covers the whole workflow: ingesting hourly candle / tick /
announcement data, extracting the pre-pump feature set, training balanced
random forests and LASSO-regularized logit models that score pump
likelihood, evaluating them with threshold sweeps, and backtesting a
vote-proportional trading strategy.  A deterministic synthetic market
generator stands in for exchange data so every stage can be exercised
offline.
"""

__version__ = "0.1.0"
