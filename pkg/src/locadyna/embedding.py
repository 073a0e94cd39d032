"""Contrastive state embeddings keyed on reward similarity.

Trains a network E so that states observed with similar rewards land close
in embedding space. For an anchor S with reward r(S), a positive partner S'
satisfies |r(S) - r(S')| < p and a set of negatives violates it; the batch
loss is

    sum ||E(S)-E(S')||^2 + (beta - sum_neg ||E(S)-E(Sneg)||^2)^2

averaged over anchors. Pair construction works off the sorted reward array,
so positives/negatives are O(log N) per anchor.
"""
from __future__ import annotations

import numpy as np

from .errors import DatasetError
from .nets import Mlp, check_finite


def contrastive_terms(emb_anchor, emb_pos, emb_neg, has_neg, beta: float):
    """Per-anchor loss terms and gradients w.r.t. the three embedding blocks.

    emb_neg has shape (B, K, D); `has_neg` zeroes the negative term for
    anchors without any valid negative (their loss includes the full beta^2).
    """
    du = emb_anchor - emb_pos                      # (B, D)
    t1 = (du * du).sum(axis=1)
    diffs = emb_anchor[:, None, :] - emb_neg       # (B, K, D)
    sq = (diffs * diffs).sum(axis=2)
    sq *= has_neg[:, None]
    g = beta - sq.sum(axis=1)                      # (B,)
    loss = t1 + g * g

    d_anchor = 2.0 * du - 4.0 * g[:, None] * (diffs * has_neg[:, None, None]).sum(axis=1)
    d_pos = -2.0 * du
    d_neg = 4.0 * g[:, None, None] * diffs * has_neg[:, None, None]
    return loss, d_anchor, d_pos, d_neg


class PairSampler:
    """Draws reward-proximal positives and reward-distant negatives."""

    def __init__(self, rewards: np.ndarray, p: float):
        self.order = np.argsort(rewards, kind="stable")
        self.sorted_r = rewards[self.order]
        self.rank = np.empty_like(self.order)
        self.rank[self.order] = np.arange(rewards.size)
        self.lo = np.searchsorted(self.sorted_r, rewards - p, side="left")
        self.hi = np.searchsorted(self.sorted_r, rewards + p, side="right")
        self.win = self.hi - self.lo
        # An anchor needs at least one positive besides itself.
        self.valid = self.win >= 2

    def anchors(self) -> np.ndarray:
        return np.flatnonzero(self.valid)

    def sample(self, anchor_idx: np.ndarray, n_neg: int, rng: np.random.Generator):
        lo, hi, win = self.lo[anchor_idx], self.hi[anchor_idx], self.win[anchor_idx]
        rank = self.rank[anchor_idx]
        n = self.order.size

        j = lo + (rng.random(anchor_idx.size) * (win - 1)).astype(np.int64)
        j += j >= rank
        pos_idx = self.order[j]

        comp = n - win
        has_neg = comp > 0
        t = (rng.random((anchor_idx.size, n_neg))
             * np.maximum(comp, 1)[:, None]).astype(np.int64)
        spos = t + (t >= lo[:, None]) * win[:, None]
        neg_idx = self.order[np.minimum(spos, n - 1)]
        return pos_idx, neg_idx, has_neg.astype(float)


def train_embedding(obs: np.ndarray, rewards: np.ndarray, *,
                    p: float, beta: float, epochs: int, batch_size: int,
                    n_negatives: int, lr: float, rng: np.random.Generator,
                    hidden=(32, 32), out_dim: int = 16,
                    init: Mlp | None = None) -> Mlp:
    """Train (or fine-tune, when `init` is given) the embedding network."""
    if obs.shape[0] == 0:
        raise DatasetError("empty embedding dataset")
    sampler = PairSampler(rewards, p)
    anchors = sampler.anchors()
    if anchors.size == 0:
        raise DatasetError("no anchor has a reward-proximal positive pair")

    if init is not None:
        net = init
    else:
        net = Mlp([obs.shape[1], *hidden, out_dim], rng,
                  activation="tanh", out_activation="tanh")

    for _ in range(epochs):
        perm = rng.permutation(anchors)
        for start in range(0, perm.size, batch_size):
            a_idx = perm[start:start + batch_size]
            pos_idx, neg_idx, has_neg = sampler.sample(a_idx, n_negatives, rng)
            all_idx = np.concatenate([a_idx, pos_idx, neg_idx.reshape(-1)])
            uniq, inverse = np.unique(all_idx, return_inverse=True)

            cache: list = []
            emb = net.forward(obs[uniq], cache)
            b = a_idx.size
            e_a = emb[inverse[:b]]
            e_p = emb[inverse[b:2 * b]]
            e_n = emb[inverse[2 * b:]].reshape(b, n_negatives, -1)

            loss, d_a, d_p, d_n = contrastive_terms(e_a, e_p, e_n, has_neg, beta)
            check_finite(float(loss.mean()), "contrastive loss")
            demb = np.zeros_like(emb)
            grads = np.concatenate([d_a, d_p, d_n.reshape(-1, emb.shape[1])]) / b
            np.add.at(demb, inverse, grads)

            net.zero_grad()
            net.backward(cache, demb)
            net.adam_step(lr)
    return net


def embed(net: Mlp, obs: np.ndarray) -> np.ndarray:
    return net.forward(np.atleast_2d(obs))
