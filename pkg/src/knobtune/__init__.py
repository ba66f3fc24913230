"""Knob tuning pipeline toolkit.

Generates OLAP/OLTP workloads against synthetic database instances, collects
promising-configuration labels with a Bayesian-optimization tuner accelerated
by a learned cost model, trains a bucket-level configuration predictor, and
recommends configurations by sampling-then-ranking. Everything is verifiable
against a deterministic synthetic environment with brute-force-computable
optima.
"""

__version__ = "0.1.0"
