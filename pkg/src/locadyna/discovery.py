"""Cluster discovery over replay data and the anomaly-aware classifier.

The pipeline: train the reward-contrastive embedding, cluster the
(embedding, standardized reward) vectors with k-means + elbow selection,
then train a classifier on (embedding, raw reward) vectors whose label set
is the cluster ids plus an "anomalous" class built from artificial
off-support rewards. The returned state carries the cluster-center
dictionary used later for matching re-discovered clusters back to their
old ids.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clustering import choose_k_elbow
from .embedding import train_embedding
from .errors import ConfigError, DatasetError
from .nets import Mlp, check_finite, softmax_ce_loss
from .serialize import load_arrays, save_arrays

ANOMALOUS = -1
ARTIFICIAL_MARGIN = 3.0   # artificial rewards span [r_min - 3, r_max + 3]


@dataclass
class ClusterCenter:
    embedding: np.ndarray
    reward: float
    radius: float           # mean member distance to the embedding center


class Classifier:
    """Small softmax net over concat(embedding, reward); last class is anomalous."""

    def __init__(self, net: Mlp, cluster_ids: list[int]):
        self.net = net
        self.cluster_ids = list(cluster_ids)

    def classify(self, features: np.ndarray) -> np.ndarray:
        logits = self.net.forward(np.atleast_2d(features))
        cls = logits.argmax(axis=1)
        ids = np.array(self.cluster_ids + [ANOMALOUS])
        return ids[cls]

    def classify_one(self, feature: np.ndarray) -> int:
        return int(self.classify(feature[None, :])[0])

    def relabel(self, mapping: dict[int, int]) -> None:
        self.cluster_ids = [mapping[c] for c in self.cluster_ids]


def _sample_artificial_rewards(rewards: np.ndarray, reward_centers: np.ndarray,
                               p: float, count: int,
                               rng: np.random.Generator) -> np.ndarray:
    lo = rewards.min() - ARTIFICIAL_MARGIN
    hi = rewards.max() + ARTIFICIAL_MARGIN
    out = np.empty(count)
    filled = 0
    while filled < count:
        cand = rng.uniform(lo, hi, size=count - filled)
        ok = np.ones(cand.size, dtype=bool)
        for c in reward_centers:
            ok &= np.abs(cand - c) >= p
        kept = cand[ok]
        out[filled:filled + kept.size] = kept
        filled += kept.size
    return out


def train_classifier(features: np.ndarray, labels: np.ndarray,
                     reward_centers: np.ndarray, p: float,
                     rng: np.random.Generator, *,
                     hidden=(32,), epochs: int = 30, batch_size: int = 128,
                     lr: float = 1e-3, anomaly_weight: float = 0.2) -> Classifier:
    """Train the anomaly-aware classifier.

    `features` are concat(embedding, raw reward) rows; `labels` are cluster
    indices 0..n-1. One artificial anomalous copy is added per real row,
    with the reward component resampled outside the +-p bands around the
    cluster reward centers. Anomalous rows get a reduced loss weight so the
    decision boundary does not creep into the tails of in-distribution
    reward noise.
    """
    n_clusters = int(labels.max()) + 1 if labels.size else 0
    if features.shape[0] == 0 or n_clusters < 1:
        raise ConfigError("classifier needs at least one labeled cluster")
    rewards = features[:, -1]
    art_rewards = _sample_artificial_rewards(rewards, reward_centers, p,
                                             features.shape[0], rng)
    art = features.copy()
    art[:, -1] = art_rewards
    X = np.concatenate([features, art])
    y = np.concatenate([labels, np.full(features.shape[0], n_clusters)])
    w = np.concatenate([np.ones(features.shape[0]),
                        np.full(features.shape[0], anomaly_weight)])

    net = Mlp([features.shape[1], *hidden, n_clusters + 1], rng,
              activation="tanh", out_activation="linear")
    idx = np.arange(X.shape[0])
    for _ in range(epochs):
        perm = rng.permutation(idx)
        for start in range(0, perm.size, batch_size):
            rows = perm[start:start + batch_size]
            cache: list = []
            logits = net.forward(X[rows], cache)
            loss, dz = softmax_ce_loss(logits, y[rows], sample_weight=w[rows])
            check_finite(loss, "classifier loss")
            net.zero_grad()
            net.backward(cache, dz)
            net.adam_step(lr)
    return Classifier(net, list(range(n_clusters)))


@dataclass
class ClusterState:
    embedding: Mlp
    centers: dict[int, ClusterCenter]
    classifier: Classifier
    n: int = field(init=False)

    def __post_init__(self):
        self.n = len(self.centers)

    def embed(self, obs: np.ndarray) -> np.ndarray:
        return self.embedding.forward(np.atleast_2d(obs))

    def classify_transition(self, obs: np.ndarray, reward: float) -> int:
        e = self.embedding.forward(obs[None, :])[0]
        return self.classifier.classify_one(np.concatenate([e, [reward]]))

    def nearest_center(self, emb_vec: np.ndarray) -> int:
        ids = sorted(self.centers)
        dists = [float(np.linalg.norm(emb_vec - self.centers[i].embedding))
                 for i in ids]
        return ids[int(np.argmin(dists))]

    def assign_batch(self, obs: np.ndarray, rewards: np.ndarray) -> np.ndarray:
        """Classify many transitions; anomalous rows fall back to the nearest center."""
        emb = self.embedding.forward(obs)
        ids = self.classifier.classify(
            np.concatenate([emb, rewards[:, None]], axis=1))
        bad = ids == ANOMALOUS
        if bad.any():
            ordered = sorted(self.centers)
            cmat = np.stack([self.centers[i].embedding for i in ordered])
            d2 = ((emb[bad][:, None, :] - cmat[None, :, :]) ** 2).sum(axis=2)
            ids[bad] = np.array(ordered)[d2.argmin(axis=1)]
        return ids

    def relabel(self, mapping: dict[int, int]) -> None:
        self.centers = {mapping[k]: v for k, v in self.centers.items()}
        self.classifier.relabel(mapping)
        self.n = len(self.centers)


@dataclass
class IcocParams:
    reward_proximity: float = 0.5
    beta: float = 10.0
    embed_epochs: int = 5
    embed_batch_size: int = 32
    embed_negatives: int = 32
    embed_lr: float = 1e-4
    embed_hidden: tuple = (32, 32)
    embed_dim: int = 16
    k_max: int = 6
    kmeans_restarts: int = 10
    elbow_threshold: float = 0.15
    classifier_hidden: tuple = (32,)
    classifier_epochs: int = 30
    classifier_lr: float = 1e-3
    anomaly_weight: float = 0.2


def icoc(obs: np.ndarray, rewards: np.ndarray, params: IcocParams,
         rng: np.random.Generator, init_embedding: Mlp | None = None) -> ClusterState:
    """Full cluster-discovery pipeline on a random-policy transition dataset.

    With `init_embedding` the embedding is fine-tuned in place, which keeps
    the embedding space aligned with previously recorded cluster centers so
    that re-discovered clusters can be matched back to their old ids.
    """
    if obs.shape[0] == 0:
        raise DatasetError("icoc needs a nonempty dataset")
    E = train_embedding(obs, rewards, p=params.reward_proximity, beta=params.beta,
                        epochs=params.embed_epochs,
                        batch_size=params.embed_batch_size,
                        n_negatives=params.embed_negatives, lr=params.embed_lr,
                        rng=rng, hidden=params.embed_hidden,
                        out_dim=params.embed_dim, init=init_embedding)
    emb = E.forward(obs)
    std = float(rewards.std())
    z = (rewards - rewards.mean()) / max(std, 1e-12)
    points = np.concatenate([emb, z[:, None]], axis=1)
    n, _, labels, _ = choose_k_elbow(points, params.k_max, rng,
                                     restarts=params.kmeans_restarts,
                                     improvement_threshold=params.elbow_threshold)
    centers: dict[int, ClusterCenter] = {}
    for j in range(n):
        members = labels == j
        center = emb[members].mean(axis=0)
        radius = float(np.linalg.norm(emb[members] - center, axis=1).mean())
        centers[j] = ClusterCenter(center, float(rewards[members].mean()), radius)

    feats = np.concatenate([emb, rewards[:, None]], axis=1)
    reward_centers = np.array([centers[j].reward for j in range(n)])
    classifier = train_classifier(
        feats, labels, reward_centers, params.reward_proximity, rng,
        hidden=params.classifier_hidden, epochs=params.classifier_epochs,
        lr=params.classifier_lr, anomaly_weight=params.anomaly_weight)
    return ClusterState(E, centers, classifier)


def reconcile(old: dict[int, ClusterCenter],
              new: dict[int, ClusterCenter]) -> dict[int, int]:
    """Map new cluster ids onto old ones by embedding-center proximity.

    Pairs are matched greedily by ascending center distance; a match must be
    closer than the median intra-cluster radius of the old clustering
    (floored at a quarter of the smallest old center separation, so exact
    re-discoveries of near-point clusters still match). Unmatched new
    clusters receive fresh ids above all old ones.
    """
    if not old or not new:
        raise ConfigError("reconcile needs nonempty cluster dictionaries")
    old_ids, new_ids = sorted(old), sorted(new)
    tau = float(np.median([old[i].radius for i in old_ids]))
    if len(old_ids) >= 2:
        sep = min(float(np.linalg.norm(old[a].embedding - old[b].embedding))
                  for ai, a in enumerate(old_ids) for b in old_ids[ai + 1:])
        tau = max(tau, 0.25 * sep)
    tau = max(tau, 1e-9)

    pairs = sorted(
        ((float(np.linalg.norm(old[o].embedding - new[nw].embedding)), o, nw)
         for o in old_ids for nw in new_ids),
        key=lambda t: (t[0], t[1], t[2]))
    mapping: dict[int, int] = {}
    used_old: set[int] = set()
    for dist, o, nw in pairs:
        if dist > tau or o in used_old or nw in mapping:
            continue
        mapping[nw] = o
        used_old.add(o)
    fresh = max(old_ids) + 1
    for nw in new_ids:
        if nw not in mapping:
            mapping[nw] = fresh
            fresh += 1
    return mapping


def save_cluster_state(path, state: ClusterState) -> None:
    ids = sorted(state.centers)
    meta = {
        "kind": "cluster_state",
        "embedding_dims": state.embedding.dims,
        "classifier_dims": state.classifier.net.dims,
        "cluster_ids": state.classifier.cluster_ids,
        "center_ids": ids,
    }
    arrays = {
        "embedding_params": state.embedding.bundle.vec,
        "classifier_params": state.classifier.net.bundle.vec,
        "emb_centers": np.stack([state.centers[i].embedding for i in ids]),
        "reward_centers": np.array([state.centers[i].reward for i in ids]),
        "radii": np.array([state.centers[i].radius for i in ids]),
    }
    save_arrays(path, meta, arrays)


def load_cluster_state(path) -> ClusterState:
    meta, arrays = load_arrays(path)
    rng = np.random.default_rng(0)
    E = Mlp(meta["embedding_dims"], rng, activation="tanh", out_activation="tanh")
    E.bundle.vec[:] = arrays["embedding_params"]
    cnet = Mlp(meta["classifier_dims"], rng, activation="tanh", out_activation="linear")
    cnet.bundle.vec[:] = arrays["classifier_params"]
    centers = {int(i): ClusterCenter(arrays["emb_centers"][k],
                                     float(arrays["reward_centers"][k]),
                                     float(arrays["radii"][k]))
               for k, i in enumerate(meta["center_ids"])}
    return ClusterState(E, centers, Classifier(cnet, meta["cluster_ids"]))
