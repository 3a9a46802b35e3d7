"""Scikit-learn style front end for the relational model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dataio import auc
from .mcmc import ChainConfig, MtmConfig, SmcConfig, run_chain
from .prior import HyperParams
from .relmodel import predict

__all__ = ["SPPRelationalModel"]


class SPPRelationalModel(BaseEstimator):
    """Patch-based Bernoulli relational model fitted by MCMC.

    Parameters mirror the chain configuration; ``fit`` takes the binary
    relation matrix (optionally with a boolean train mask) and stores
    thinned posterior samples. ``predict_proba`` scores (row, col) node
    pairs by the posterior-mean link intensity.

    >>> model = SPPRelationalModel(n_iter=200, random_state=0).fit(R)
    >>> scores = model.predict_proba(pairs)
    """

    def __init__(
        self,
        tau: float = 0.5,
        theta: float = 0.99,
        gamma: float = 0.01,
        p_birth: float = 0.5,
        n_iter: int = 500,
        n_particles: int = 5,
        smc_stages: int | None = None,
        mtm_proposals: int = 5,
        intensity_scale: float | None = None,
        burn_in: int | None = None,
        thin: int = 10,
        random_state: int = 0,
    ):
        self.tau = tau
        self.theta = theta
        self.gamma = gamma
        self.p_birth = p_birth
        self.n_iter = n_iter
        self.n_particles = n_particles
        self.smc_stages = smc_stages
        self.mtm_proposals = mtm_proposals
        self.intensity_scale = intensity_scale
        self.burn_in = burn_in
        self.thin = thin
        self.random_state = random_state

    def fit(self, X, y=None, mask=None):
        X = check_array(X, dtype=np.int8)
        if not np.isin(X, (0, 1)).all():
            raise ValueError("X must be a binary relation matrix")
        if mask is None:
            mask = np.ones(X.shape, dtype=bool)
        else:
            mask = check_array(mask, dtype=bool)
            if mask.shape != X.shape:
                raise ValueError("mask shape must match X")
        cfg = ChainConfig(
            iterations=self.n_iter,
            hp=HyperParams(self.tau, self.theta, self.gamma, self.p_birth),
            smc=SmcConfig(self.n_particles, self.smc_stages),
            mtm=MtmConfig(self.mtm_proposals),
            intensity_scale=self.intensity_scale,
            seed=self.random_state,
            burn_in=self.burn_in,
            thin=self.thin,
        )
        result = run_chain(X, mask, cfg)
        self.samples_ = result.samples
        self.trace_ = result.trace
        self.acceptance_ = result.acceptance
        self.n_rows_, self.n_cols_ = X.shape
        return self

    def predict_proba(self, pairs):
        """Posterior-mean link intensity for 0-based (row, col) pairs."""
        check_is_fitted(self, "samples_")
        return predict(self.samples_, np.asarray(pairs))

    def score(self, pairs, labels):
        """Held-out AUC of the pair scores against binary labels."""
        return auc(self.predict_proba(pairs), labels)
