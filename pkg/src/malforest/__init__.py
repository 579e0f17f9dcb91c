"""malforest: static PE malware detection pipeline.

Featurization (EMBER-v2 compatible layout), dataset containers, train-only
scaling, dimensionality reduction (PCA or gain-based selection), from-scratch
tree ensembles, paired training with weighted soft-vote fusion, and
threshold-based evaluation.
"""

__version__ = "0.1.0"
