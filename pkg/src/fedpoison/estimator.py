"""Scikit-learn style front end for federated NCF under attack."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .attacks import AttackParams, PoisoningAttack, make_malicious_clients, num_malicious
from .data import select_target_items
from .federation import BENIGN, ServerState, TrainConfig, init_clients, train
from .metrics import exposure, top_k_lists, utility_metrics
from .model import HyperParams, init_params, score_matrix
from .seeding import stream
from .validation import check_interactions, check_pairs


class FederatedNCF(BaseEstimator):
    """Federated NCF recommender, optionally trained with malicious clients.

    ``fit`` runs the whole federated simulation. After fitting, benign users'
    embeddings are readable through :meth:`user_embeddings`; that view is
    for evaluation only and is never given to the server or the attacker.

    Parameters
    ----------
    attack : {"none", "ra", "eb", "a_ra", "a_hum"}
    targets : array-like of int, optional
        Items to promote. Defaults to the ``num_targets`` least popular ones.
    malicious_fraction : float
        Malicious users added, as ``ceil(fraction * n_users)``.
    participation : "all" or float
        Per-round client selection; "all" makes one round an epoch.
    loss_reduction : {"mean", "sum"}
        How a benign client reduces BCE over its own pairs before
        differentiating. The server always sums client uploads.
    """

    def __init__(self, embed_dim=8, layer_dims=(8, 8), learning_rate=0.001, loss_reduction="mean",
                 epochs=30, neg_ratio=4, attack="none", targets=None, num_targets=1,
                 malicious_fraction=0.005, num_samples=10, sample_std=0.01, mining_lr=0.001,
                 mining_steps=30, poison_scale=1.0, participation="all", random_state=0):
        self.embed_dim = embed_dim
        self.layer_dims = layer_dims
        self.learning_rate = learning_rate
        self.loss_reduction = loss_reduction
        self.epochs = epochs
        self.neg_ratio = neg_ratio
        self.attack = attack
        self.targets = targets
        self.num_targets = num_targets
        self.malicious_fraction = malicious_fraction
        self.num_samples = num_samples
        self.sample_std = sample_std
        self.mining_lr = mining_lr
        self.mining_steps = mining_steps
        self.poison_scale = poison_scale
        self.participation = participation
        self.random_state = random_state

    def fit(self, X, y=None, eval_hook=None):
        """Train on ``X`` (InteractionData or ``(user, item)`` pairs); ``y`` is ignored.

        ``eval_hook(estimator, report)`` runs after every epoch.
        """
        data = check_interactions(X)
        seed = int(self.random_state)
        hyper = HyperParams(self.embed_dim, tuple(self.layer_dims), self.learning_rate)
        if self.targets is None:
            targets = select_target_items(data, self.num_targets)
        else:
            targets = np.atleast_1d(np.asarray(self.targets, dtype=np.int64))
        ap = AttackParams(
            kind=self.attack, targets=targets, num_samples=self.num_samples,
            sample_std=self.sample_std, mining_lr=self.mining_lr, mining_steps=self.mining_steps,
            poison_scale=self.poison_scale, malicious_fraction=self.malicious_fraction, seed=seed,
        )
        count = 0 if ap.kind == "none" else num_malicious(ap.malicious_fraction, data.num_users)
        if ap.kind != "none" and count < 1:
            raise ValueError("malicious_fraction yields no malicious users")

        self.data_ = data
        self.targets_ = targets
        self.n_malicious_ = count
        self.server_ = ServerState(init_params(hyper, data.num_items, stream(seed, "init")))
        self.clients_ = init_clients(data.train, hyper.embed_dim, seed) + make_malicious_clients(
            data, ap, count, seed, hyper.embed_dim
        )
        self.attack_ = PoisoningAttack(ap) if ap.kind != "none" else None
        self.history_ = []
        config = TrainConfig(self.learning_rate, self.neg_ratio, seed, self.participation, self.loss_reduction)

        def hook(params, clients, report):
            self.history_.append(report)
            if eval_hook is not None:
                eval_hook(self, report)

        train(self.server_, self.clients_, self.attack_, self.epochs, config, hook)
        return self

    @property
    def params_(self):
        check_is_fitted(self, "server_")
        return self.server_.params

    def user_embeddings(self) -> np.ndarray:
        check_is_fitted(self, "server_")
        return np.stack([c.p for c in self.clients_ if c.role == BENIGN])

    def predict(self, X) -> np.ndarray:
        """Scores for ``(user, item)`` pairs of benign users."""
        check_is_fitted(self, "server_")
        pairs = check_pairs(X, self.data_.num_users, self.data_.num_items)
        P = self.user_embeddings()
        out = np.empty(len(pairs))
        for u in np.unique(pairs[:, 0]):
            rows = pairs[:, 0] == u
            out[rows] = score_matrix(P[u], self.params_)[0, pairs[rows, 1]]
        return out

    def recommend(self, k=10, users=None) -> list[np.ndarray]:
        """Top-``k`` unseen items for each benign user (or the given subset)."""
        check_is_fitted(self, "server_")
        users = np.arange(self.data_.num_users) if users is None else np.asarray(users, dtype=np.int64)
        P = self.user_embeddings()[users]
        return top_k_lists(P, self.params_, k, [self.data_.train[u] for u in users])

    def evaluate(self, k_list=(5, 10, 20, 30), utility_k=10, epoch=0):
        """Return ``(ExposureResult, hit_ratio, ndcg)`` for the current state."""
        lists = self.recommend(max(max(k_list), utility_k))
        result = exposure(lists, self.data_.train, self.targets_, k_list, epoch)
        hr, ndcg = utility_metrics([lst[:utility_k] for lst in lists], self.data_.test, utility_k)
        return result, hr, ndcg
