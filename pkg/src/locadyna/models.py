"""Learned world model: encoder, body, decoder, reward heads, termination head.

The trunk maps (state, action) to the predicted next state; reward and
termination are functions of the state being arrived at, so both heads read
the encoder's features of a next state. During training that is the stored
next state; during planning it is the decoder's prediction. All parts share
one flat parameter bundle so a single Adam step (optionally gated by a
freeze mask) updates the whole model.
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import ContractError
from .nets import (Mlp, ParamBundle, _act_forward, bce_logits_loss,
                   check_finite, mlp_param_count, mse_loss, sigmoid)


class WorldModel:
    def __init__(self, obs_dim: int, n_actions: int, n_heads: int,
                 rng: np.random.Generator,
                 enc_hidden=(32,), body_hidden=(32,), head_hidden=(16,),
                 activation: str = "tanh"):
        if n_heads < 1:
            raise ContractError("world model needs at least one reward head")
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.activation = activation
        self.enc_dims = [obs_dim, *enc_hidden]
        feat = self.enc_dims[-1]
        self.body_dims = [feat + n_actions, *body_hidden]
        self.dec_dims = [self.body_dims[-1], obs_dim]
        self.head_dims = [feat, *head_hidden, 1]
        self._eye = np.eye(n_actions)

        total = (mlp_param_count(self.enc_dims) + mlp_param_count(self.body_dims)
                 + mlp_param_count(self.dec_dims)
                 + (n_heads + 1) * mlp_param_count(self.head_dims))
        self.bundle = ParamBundle(total)
        self.groups: dict[str, slice] = {}
        self.encoder = self._build(self.enc_dims, rng, "e", out_act=activation)
        self.body = self._build(self.body_dims, rng, "nb", out_act=activation)
        self.decoder = self._build(self.dec_dims, rng, "d", out_act="linear")
        self.term_head = self._build(self.head_dims, rng, "th", out_act="linear")
        self.reward_heads = [self._build(self.head_dims, rng, f"rh{i}", out_act="linear")
                             for i in range(n_heads)]

    def _build(self, dims, rng, name, out_act) -> Mlp:
        start = self.bundle._cursor
        net = Mlp(dims, rng, activation=self.activation, out_activation=out_act,
                  bundle=self.bundle)
        self.groups[name] = slice(start, self.bundle._cursor)
        return net

    @property
    def n_heads(self) -> int:
        return len(self.reward_heads)

    def add_reward_head(self, rng: np.random.Generator) -> int:
        """Append a fresh reward head; existing parameters and moments survive."""
        extra = mlp_param_count(self.head_dims)
        self.bundle.grow(extra)
        self.groups = {}
        parts = [("e", self.encoder), ("nb", self.body), ("d", self.decoder),
                 ("th", self.term_head)]
        parts += [(f"rh{i}", h) for i, h in enumerate(self.reward_heads)]
        for name, net in parts:
            start = self.bundle._cursor
            net.rebind(self.bundle)
            self.groups[name] = slice(start, self.bundle._cursor)
        new_idx = len(self.reward_heads)
        name = f"rh{new_idx}"
        start = self.bundle._cursor
        head = Mlp(self.head_dims, rng, activation=self.activation,
                   out_activation="linear", bundle=self.bundle)
        self.groups[name] = slice(start, self.bundle._cursor)
        self.reward_heads.append(head)
        return new_idx

    def freeze_mask(self, trainable_groups) -> np.ndarray:
        """Float mask: 1.0 for parameters in `trainable_groups`, 0.0 elsewhere."""
        mask = np.zeros(self.bundle.size)
        for g in trainable_groups:
            mask[self.groups[g]] = 1.0
        return mask

    def group_checksum(self, name: str) -> str:
        return hashlib.sha256(self.bundle.vec[self.groups[name]].tobytes()).hexdigest()

    def checksums(self) -> dict[str, str]:
        return {g: self.group_checksum(g) for g in self.groups}

    def _onehot(self, actions: np.ndarray) -> np.ndarray:
        return self._eye[actions]

    def forward(self, obs: np.ndarray, action: int, head: int):
        """Single-state prediction: (next_state, reward, termination probability)."""
        if not 0 <= head < self.n_heads:
            raise ContractError(f"head {head} out of range [0, {self.n_heads})")
        obs2 = np.atleast_2d(obs)
        act = np.full(obs2.shape[0], action, dtype=np.int64)
        nxt, rew, term = self.predict(obs2, act, np.full(obs2.shape[0], head))
        return nxt[0], float(rew[0]), float(term[0])

    def predict(self, obs: np.ndarray, actions: np.ndarray, head_per_row: np.ndarray):
        """Batched planning predictions; rewards routed per-row to its head."""
        f = self.encoder.forward(obs)
        h = self.body.forward(np.concatenate([f, self._onehot(actions)], axis=1))
        nxt = self.decoder.forward(h)
        f2 = self.encoder.forward(nxt)
        rew = self._heads_apply(f2, head_per_row)
        term = sigmoid(self.term_head.forward(f2)[:, 0])
        return nxt, rew, term

    def reward_at(self, obs: np.ndarray, head: int) -> np.ndarray:
        """Predicted reward for arriving in each given state, via one head."""
        f = self.encoder.forward(np.atleast_2d(obs))
        return self.reward_heads[head].forward(f)[:, 0]

    def _heads_apply(self, feats: np.ndarray, head_per_row: np.ndarray) -> np.ndarray:
        out = np.empty(feats.shape[0])
        for h in np.unique(head_per_row):
            rows = head_per_row == h
            out[rows] = self.reward_heads[int(h)].forward(feats[rows])[:, 0]
        return out

    def compute_loss(self, obs, actions, rewards, next_obs, done, head_per_row,
                     with_grad: bool = True) -> dict[str, float]:
        """Summed next-state MSE + routed reward MSE + termination BCE.

        Gradients accumulate into the bundle when `with_grad`; callers step
        the optimizer themselves (see train_batch).
        """
        n = obs.shape[0]
        enc_cache: list = []
        f = self.encoder.forward(obs, enc_cache if with_grad else None)
        body_in = np.concatenate([f, self._onehot(actions)], axis=1)
        body_cache: list = []
        h = self.body.forward(body_in, body_cache if with_grad else None)
        dec_cache: list = []
        nxt_pred = self.decoder.forward(h, dec_cache if with_grad else None)
        loss_next, d_nxt = mse_loss(nxt_pred, next_obs)

        enc2_cache: list = []
        f2 = self.encoder.forward(next_obs, enc2_cache if with_grad else None)
        d_f2 = np.zeros_like(f2) if with_grad else None
        sq_sum = 0.0
        head_caches = []
        for hid in np.unique(head_per_row):
            rows = head_per_row == hid
            cache: list = []
            pred = self.reward_heads[int(hid)].forward(
                f2[rows], cache if with_grad else None)[:, 0]
            diff = pred - rewards[rows]
            sq_sum += float(diff @ diff)
            head_caches.append((int(hid), rows, cache, diff))
        loss_rew = sq_sum / n

        th_cache: list = []
        t_logit = self.term_head.forward(f2, th_cache if with_grad else None)
        loss_term, d_logit = bce_logits_loss(t_logit, done[:, None])

        if with_grad:
            d_h = self.decoder.backward(dec_cache, d_nxt)
            d_body_in = self.body.backward(body_cache, d_h)
            self.encoder.backward(enc_cache, d_body_in[:, :f.shape[1]])
            for hid, rows, cache, diff in head_caches:
                d_pred = (2.0 / n) * diff
                d_f2[rows] += self.reward_heads[hid].backward(cache, d_pred[:, None])
            d_f2 += self.term_head.backward(th_cache, d_logit)
            self.encoder.backward(enc2_cache, d_f2)

        total = loss_next + loss_rew + loss_term
        return {"next_state": loss_next, "reward": loss_rew,
                "termination": loss_term, "total": total}

    def train_batch(self, obs, actions, rewards, next_obs, done, head_per_row,
                    lr: float, mask: np.ndarray | None = None) -> dict[str, float]:
        """One Adam step on the summed loss; masked groups stay bit-identical."""
        if obs.shape[0] == 0:
            raise ContractError("empty training batch")
        self.bundle.zero_grad()
        losses = self.compute_loss(obs, actions, rewards, next_obs, done,
                                   head_per_row, with_grad=True)
        check_finite(losses["total"], "world-model loss")
        self.bundle.adam_step(lr, mask=mask)
        return losses


def model_grad_check(model: WorldModel, obs, actions, rewards, next_obs, done,
                     head_per_row, h: float = 1e-5) -> float:
    """Finite-difference oracle over every parameter of the composite loss."""
    from .nets import grad_check

    def loss_fn(with_grad: bool):
        losses = model.compute_loss(obs, actions, rewards, next_obs, done,
                                    head_per_row, with_grad=with_grad)
        return losses["total"]

    return grad_check(loss_fn, model.bundle, h=h)


def _mlp_kink_free(net: Mlp, x: np.ndarray, tol: float) -> bool:
    a = x
    for (W, b), kind in zip(net.weights, net.acts):
        z = a @ W + b
        if kind == "relu" and np.any(np.abs(z) < tol):
            return False
        a = _act_forward(z, kind)
    return True


def relu_kink_free(model: WorldModel, obs, actions, next_obs, tol: float = 1e-3) -> bool:
    """True when no relu pre-activation sits within `tol` of zero.

    Finite differencing across a relu kink is invalid; tests resample inputs
    until this holds.
    """
    if model.activation != "relu":
        return True
    f = model.encoder.forward(obs)
    body_in = np.concatenate([f, model._onehot(actions)], axis=1)
    h = model.body.forward(body_in)
    f2 = model.encoder.forward(next_obs)
    ok = (_mlp_kink_free(model.encoder, obs, tol)
          and _mlp_kink_free(model.body, body_in, tol)
          and _mlp_kink_free(model.decoder, h, tol)
          and _mlp_kink_free(model.encoder, next_obs, tol)
          and _mlp_kink_free(model.term_head, f2, tol))
    for head in model.reward_heads:
        ok = ok and _mlp_kink_free(head, f2, tol)
    return ok
