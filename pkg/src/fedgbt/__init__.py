"""Federated gradient-boosted trees over additively homomorphic encryption.

Subpackages cover the Paillier layer (:mod:`fedgbt.paillier`), the
histogram-based tree core (:mod:`fedgbt.gbt`), sample- and
feature-partitioned federated training (:mod:`fedgbt.hfl`,
:mod:`fedgbt.vfl`), Gaussian-process hyperparameter search
(:mod:`fedgbt.hpo`), metrics and privacy-cost accounting
(:mod:`fedgbt.metrics`), the synthetic well-data generator
(:mod:`fedgbt.data`), and the in-process multi-party harness
(:mod:`fedgbt.transport`, :mod:`fedgbt.experiment`, :mod:`fedgbt.cli`).
"""

__version__ = "0.1.0"
