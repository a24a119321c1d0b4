"""habclust: stability- and survival-aware tumor habitat clustering.

Pipeline pieces: multi-modal pixel cohorts (cohort), paired-encoder
autoencoder features (fae), pixel/patient clustering with a resampling
stability loss (clustering), label-map texture features (texture),
Kaplan-Meier / log-rank risk analysis (survival), Gaussian-process
hyper-parameter search (bayesopt), and the end-to-end orchestration
(pipeline) behind the `habclust` command line (cli).
"""

__version__ = "0.1.0"
