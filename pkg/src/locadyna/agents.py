"""Deep Dyna-Q agents: the partial-model variants and the two baselines.

All four agents run the same loop: epsilon-greedy acting, storing the
transition, a model-learning round, then Q planning updates driven purely by
world-model predictions (there is no model-free Q update from the raw
transition). They differ in storage and bookkeeping:

* reg          — one buffer, one model, one reward head; no detection.
* pm_simple    — n buffer/model pairs; phase two trains only the detected
                 pair's model.
* pm_scalable  — one buffer with n index lists and one model with n reward
                 heads; phase two freezes everything but the detected head.
* lofo         — reg plus the local-neighborhood-eviction buffer.

The partial-model agents classify each transition to a cluster via
concat(E(state), reward); a debounced run of anomalous classifications
latches the (monotone) phase flag, clears the stale cluster, gathers fresh
random-policy data, re-runs cluster discovery, and matches re-discovered
clusters back to their old ids.
"""
from __future__ import annotations

import numpy as np

from .config import ExperimentConfig
from .discovery import (ANOMALOUS, ClusterCenter, ClusterState, IcocParams,
                        Classifier, icoc, reconcile)
from .envs import EnvSession, make_env
from .errors import ConfigError, ContractError
from .lofo import LofoBuffer
from .models import WorldModel
from .nets import Mlp, clone_into
from .serialize import load_arrays, save_arrays
from .stores import Batch, ScalableStore, SimpleStore
from .transitions import Transition

PM_KINDS = ("pm_simple", "pm_scalable")


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Named independent RNG streams for one run."""
    env_ss, agent_ss, init_ss, icoc_ss = np.random.SeedSequence(seed).spawn(4)
    return {"env": np.random.default_rng(env_ss),
            "agent": np.random.default_rng(agent_ss),
            "init": np.random.default_rng(init_ss),
            "icoc": np.random.default_rng(icoc_ss)}


def eval_stream(seed: int, step: int) -> np.random.Generator:
    """Evaluation RNG keyed by (seed, step): independent of the eval schedule."""
    return np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1, step]))


class QFunction:
    """Online + target action-value networks."""

    def __init__(self, obs_dim: int, n_actions: int, hidden, rng):
        dims = [obs_dim, *hidden, n_actions]
        self.n_actions = n_actions
        self.online = Mlp(dims, rng, activation="tanh", out_activation="linear")
        self.target = Mlp(dims, rng, activation="tanh", out_activation="linear")
        clone_into(self.target, self.online)

    def values(self, obs: np.ndarray) -> np.ndarray:
        return self.online.forward(np.atleast_2d(obs))

    def act(self, obs: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
        if epsilon > 0.0 and rng.random() < epsilon:
            return int(rng.integers(self.n_actions))
        return int(np.argmax(self.values(obs)[0]))

    def greedy(self, obs: np.ndarray) -> int:
        return int(np.argmax(self.values(obs)[0]))

    def target_max(self, obs: np.ndarray) -> np.ndarray:
        return self.target.forward(np.atleast_2d(obs)).max(axis=1)

    def train_toward(self, obs, actions, targets, lr: float) -> float:
        cache: list = []
        q = self.online.forward(obs, cache)
        rows = np.arange(q.shape[0])
        diff = q[rows, actions] - targets
        loss = float(diff @ diff) / q.shape[0]
        dq = np.zeros_like(q)
        dq[rows, actions] = (2.0 / q.shape[0]) * diff
        self.online.zero_grad()
        self.online.backward(cache, dq)
        self.online.adam_step(lr)
        return loss

    def sync(self) -> None:
        clone_into(self.target, self.online)


def q_planning_update(qf: QFunction, obs, actions, pred_next, pred_reward,
                      pred_term, gamma: float, lr: float) -> float:
    """One Dyna step: fit Q(s,a) toward r + gamma * (1 - t) * max Q_target(s')."""
    targets = pred_reward + gamma * (1.0 - pred_term) * qf.target_max(pred_next)
    return qf.train_toward(obs, actions, targets, lr)


def gather_random(session: EnvSession, n_steps: int,
                  rng: np.random.Generator) -> list[Transition]:
    """Collect transitions under a uniform-random policy."""
    out = []
    n_actions = session.env.n_actions
    for _ in range(n_steps):
        if session.needs_reset:
            session.reset()
        obs = session.current_obs()
        a = int(rng.integers(n_actions))
        _, obs, _, next_obs, r, done, trunc = session.step(a)
        out.append(Transition(obs, a, r, next_obs, done, trunc))
    return out


def _stack(transitions) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    obs = np.stack([t.obs for t in transitions])
    actions = np.array([t.action for t in transitions], dtype=np.int64)
    rewards = np.array([t.reward for t in transitions])
    next_obs = np.stack([t.next_obs for t in transitions])
    done = np.array([1.0 if t.done else 0.0 for t in transitions])
    return obs, actions, rewards, next_obs, done


class DynaAgent:
    def __init__(self, cfg: ExperimentConfig, env, rngs: dict):
        self.cfg = cfg
        self.env = env
        self.rngs = rngs
        self.kind = cfg.agent
        self.qf = QFunction(env.obs_dim, env.n_actions, cfg.q_hidden, rngs["init"])

        self.cluster_state: ClusterState | None = None
        self.store = None
        self.model: WorldModel | None = None          # reg / lofo / pm_scalable
        self.models: dict[int, WorldModel] = {}       # pm_simple
        self.head_of: dict[int, int] = {}             # pm_scalable
        self.embedding: Mlp | None = None             # lofo
        self.lofo: LofoBuffer | None = None

        self.counter = 0
        self.latched = False
        self.k_req: int | None = None
        self.detect_events = 0
        self.t = 0
        self._next_sync = cfg.target_sync_period
        self._phase2_mask: np.ndarray | None = None
        self._bootstrapped = False

    # ------------------------------------------------------------------ setup

    def _icoc_params(self) -> IcocParams:
        c = self.cfg
        return IcocParams(
            reward_proximity=c.reward_proximity, beta=c.beta,
            embed_epochs=c.embed_epochs, embed_batch_size=c.embed_batch_size,
            embed_negatives=c.embed_negatives, embed_lr=c.embed_lr,
            embed_hidden=tuple(c.embed_hidden), embed_dim=c.embed_dim,
            k_max=c.k_max, kmeans_restarts=c.kmeans_restarts,
            elbow_threshold=c.elbow_threshold,
            classifier_hidden=tuple(c.classifier_hidden),
            classifier_epochs=c.classifier_epochs, classifier_lr=c.classifier_lr,
            anomaly_weight=c.anomaly_weight)

    def _new_world_model(self, n_heads: int) -> WorldModel:
        c = self.cfg
        return WorldModel(self.env.obs_dim, self.env.n_actions, n_heads,
                          self.rngs["init"], enc_hidden=tuple(c.enc_hidden),
                          body_hidden=tuple(c.body_hidden),
                          head_hidden=tuple(c.head_hidden))

    def bootstrap(self, session: EnvSession) -> list[Transition]:
        """Gather m random-policy samples, discover clusters, seed the store."""
        c = self.cfg
        if self._bootstrapped:
            raise ContractError("agent already bootstrapped")
        n_gather = max(c.bootstrap_steps, c.embed_dataset_steps or 0)
        data = gather_random(session, n_gather, self.rngs["agent"])
        obs, actions, rewards, next_obs, done = _stack(data)

        if self.kind in PM_KINDS:
            self.cluster_state = icoc(obs, rewards, self._icoc_params(),
                                      self.rngs["icoc"])
            ids = sorted(self.cluster_state.centers)
            if self.kind == "pm_scalable":
                self.store = ScalableStore(c.buffer_capacity, self.env.obs_dim, ids)
                self.model = self._new_world_model(len(ids))
                self.head_of = {k: i for i, k in enumerate(ids)}
            else:
                self.store = SimpleStore(c.buffer_capacity, self.env.obs_dim, ids)
                self.models = {k: self._new_world_model(1) for k in ids}
            assigned = self.cluster_state.assign_batch(obs, rewards)
            for tr, k in zip(data, assigned):
                self.store.assign(tr, int(k))
        elif self.kind == "reg":
            self.store = SimpleStore(c.buffer_capacity, self.env.obs_dim, [0])
            self.model = self._new_world_model(1)
            for tr in data:
                self.store.assign(tr, 0)
        elif self.kind == "lofo":
            from .embedding import train_embedding
            self.embedding = train_embedding(
                obs, rewards, p=c.reward_proximity, beta=c.beta,
                epochs=c.embed_epochs, batch_size=c.embed_batch_size,
                n_negatives=c.embed_negatives, lr=c.embed_lr,
                rng=self.rngs["icoc"], hidden=tuple(c.embed_hidden),
                out_dim=c.embed_dim)
            self.model = self._new_world_model(1)
            self.lofo = LofoBuffer(c.lofo_capacity, self.env.obs_dim,
                                   c.embed_dim, c.lofo_d_local, c.lofo_n_local)
            embs = self.embedding.forward(obs)
            for tr, e in zip(data, embs):
                self.lofo.insert(tr, e)
        else:
            raise ConfigError(f"unknown agent kind {self.kind!r}")
        self._bootstrapped = True
        return data

    # ------------------------------------------------------------ detection

    def cluster_ids(self) -> list[int]:
        if self.cluster_state is not None:
            return sorted(self.cluster_state.centers)
        return [0]

    def _on_change(self, session: EnvSession, obs: np.ndarray) -> None:
        c = self.cfg
        self.latched = True
        self.detect_events += 1
        emb = self.cluster_state.embed(obs)[0]
        self.k_req = self.cluster_state.nearest_center(emb)
        old_centers = dict(self.cluster_state.centers)
        old_req_center = old_centers[self.k_req].embedding.copy()
        self.store.clear(self.k_req)

        m2 = max(1, int(round(c.rebootstrap_fraction * c.bootstrap_steps)))
        fresh = gather_random(session, m2, self.rngs["agent"])
        parts = [_stack(fresh)]
        for k in self.cluster_ids():
            live = self.store.live_entries(k)
            if len(live):
                parts.append((live.obs, live.actions, live.rewards,
                              live.next_obs, live.done))
        all_obs = np.concatenate([p[0] for p in parts])
        all_rew = np.concatenate([p[2] for p in parts])

        new_state = icoc(all_obs, all_rew, self._icoc_params(), self.rngs["icoc"],
                         init_embedding=self.cluster_state.embedding)
        mapping = reconcile(old_centers, new_state.centers)
        new_state.relabel(mapping)

        known = set(old_centers)
        for cid in sorted(new_state.centers):
            if cid in known:
                continue
            self.store.add_cluster(cid)
            if self.kind == "pm_scalable":
                self.head_of[cid] = self.model.add_reward_head(self.rngs["init"])
            else:
                self.models[cid] = self._new_world_model(1)
        self.cluster_state = new_state
        if self.k_req not in new_state.centers:
            self.k_req = new_state.nearest_center(old_req_center)

        obs_f, _, rew_f, _, _ = _stack(fresh)
        assigned = new_state.assign_batch(obs_f, rew_f)
        for tr, k in zip(fresh, assigned):
            self.store.assign(tr, int(k))

        if self.kind == "pm_scalable":
            self._phase2_mask = self.model.freeze_mask(
                [f"rh{self.head_of[self.k_req]}"])

    # ------------------------------------------------------------- updates

    def _cluster_batches(self, batch_size: int) -> list[Batch]:
        rng = self.rngs["agent"]
        out = []
        for k in self.cluster_ids():
            b = self.store.sample_batch(k, batch_size, rng)
            if b is not None:
                out.append(b)
        return out

    def _model_update(self) -> None:
        c = self.cfg
        if self.kind in PM_KINDS and self.latched:
            b = self.store.sample_batch(self.k_req, c.model_batch_size,
                                        self.rngs["agent"])
            if b is None:
                return
            if self.kind == "pm_scalable":
                head = self.head_of[self.k_req]
                self.model.train_batch(b.obs, b.actions, b.rewards, b.next_obs,
                                       b.done, np.full(len(b), head),
                                       c.model_lr, mask=self._phase2_mask)
            else:
                self.models[self.k_req].train_batch(
                    b.obs, b.actions, b.rewards, b.next_obs, b.done,
                    np.zeros(len(b), dtype=np.int64), c.model_lr)
            return

        if self.kind == "pm_scalable":
            batches = self._cluster_batches(c.model_batch_size)
            if not batches:
                return
            obs = np.concatenate([b.obs for b in batches])
            actions = np.concatenate([b.actions for b in batches])
            rewards = np.concatenate([b.rewards for b in batches])
            next_obs = np.concatenate([b.next_obs for b in batches])
            done = np.concatenate([b.done for b in batches])
            heads = np.concatenate([np.full(len(b), self.head_of[b.cluster_id])
                                    for b in batches])
            self.model.train_batch(obs, actions, rewards, next_obs, done,
                                   heads, c.model_lr)
        elif self.kind == "pm_simple":
            for b in self._cluster_batches(c.model_batch_size):
                self.models[b.cluster_id].train_batch(
                    b.obs, b.actions, b.rewards, b.next_obs, b.done,
                    np.zeros(len(b), dtype=np.int64), c.model_lr)
        else:
            b = self._single_batch(c.model_batch_size)
            if b is not None:
                self.model.train_batch(b.obs, b.actions, b.rewards, b.next_obs,
                                       b.done, np.zeros(len(b), dtype=np.int64),
                                       c.model_lr)

    def _single_batch(self, batch_size: int) -> Batch | None:
        if self.kind == "lofo":
            return self.lofo.sample(batch_size, self.rngs["agent"])
        return self.store.sample_batch(0, batch_size, self.rngs["agent"])

    def _planning_update(self) -> None:
        c = self.cfg
        if self.kind == "pm_scalable":
            batches = self._cluster_batches(c.planning_batch_size)
            if not batches:
                return
            obs = np.concatenate([b.obs for b in batches])
            actions = np.concatenate([b.actions for b in batches])
            heads = np.concatenate([np.full(len(b), self.head_of[b.cluster_id])
                                    for b in batches])
            nxt, rew, term = self.model.predict(obs, actions, heads)
            q_planning_update(self.qf, obs, actions, nxt, rew, term,
                              c.gamma, c.value_lr)
        elif self.kind == "pm_simple":
            for b in self._cluster_batches(c.planning_batch_size):
                m = self.models[b.cluster_id]
                nxt, rew, term = m.predict(b.obs, b.actions,
                                           np.zeros(len(b), dtype=np.int64))
                q_planning_update(self.qf, b.obs, b.actions, nxt, rew, term,
                                  c.gamma, c.value_lr)
        else:
            b = self._single_batch(c.planning_batch_size)
            if b is None:
                return
            nxt, rew, term = self.model.predict(b.obs, b.actions,
                                                np.zeros(len(b), dtype=np.int64))
            q_planning_update(self.qf, b.obs, b.actions, nxt, rew, term,
                              c.gamma, c.value_lr)

    # ------------------------------------------------------------ main loop

    def train_step(self, session: EnvSession) -> int:
        """One iteration of the adaptivity loop; returns env steps consumed."""
        if not self._bootstrapped:
            raise ContractError("bootstrap the agent before training")
        c = self.cfg
        t0 = session.steps_taken
        if session.needs_reset:
            session.reset()
        obs = session.current_obs()
        a = self.qf.act(obs, c.epsilon, self.rngs["agent"])
        _, obs, _, next_obs, r, done, trunc = session.step(a)
        tr = Transition(obs, a, r, next_obs, done, trunc)

        if self.kind in PM_KINDS:
            k = self.cluster_state.classify_transition(obs, r)
            if k == ANOMALOUS:
                self.counter += 1
                if not self.latched and self.counter >= c.debounce:
                    self._on_change(session, obs)
                    k = self.cluster_state.classify_transition(obs, r)
                if k == ANOMALOUS:
                    k = self.cluster_state.nearest_center(
                        self.cluster_state.embed(obs)[0])
            else:
                self.counter = 0
            self.store.assign(tr, int(k))
        elif self.kind == "reg":
            self.store.assign(tr, 0)
        else:
            self.lofo.insert(tr, self.embedding.forward(obs[None, :])[0])

        self.t += 1
        if self.t % c.update_period == 0:
            for _ in range(c.model_learning_steps):
                self._model_update()
            for _ in range(c.planning_steps):
                self._planning_update()
        if self.t >= self._next_sync:
            self.qf.sync()
            self._next_sync += c.target_sync_period
        return session.steps_taken - t0

    # ---------------------------------------------------------- diagnostics

    def reward_errors(self, rng: np.random.Generator, sample: int = 64) -> dict[int, float]:
        """Per-cluster MAE of predicted arrival reward on stored transitions."""
        out: dict[int, float] = {}
        if self.kind in PM_KINDS:
            for k in self.cluster_ids():
                b = self.store.sample_batch(k, sample, rng)
                if b is None:
                    continue
                if self.kind == "pm_scalable":
                    pred = self.model.reward_at(b.next_obs, self.head_of[k])
                else:
                    pred = self.models[k].reward_at(b.next_obs, 0)
                out[k] = float(np.mean(np.abs(pred - b.rewards)))
        else:
            b = self._single_batch(sample)
            if b is not None:
                pred = self.model.reward_at(b.next_obs, 0)
                out[0] = float(np.mean(np.abs(pred - b.rewards)))
        return out

    def store_stats(self) -> dict:
        if self.kind == "lofo":
            return {"sizes": {0: self.lofo.size}, "evictions": self.lofo.evictions,
                    "dead": 0}
        return self.store.stats()


# ------------------------------------------------------------- checkpoints

def save_agent(path, agent: DynaAgent) -> None:
    cfg = agent.cfg
    meta = {
        "kind": "agent",
        "config": cfg.to_dict(),
        "latched": agent.latched,
        "k_req": agent.k_req,
        "t": agent.t,
        "q_dims": agent.qf.online.dims,
        "head_of": sorted(agent.head_of.items()) if agent.head_of else [],
        "model_ids": sorted(agent.models) if agent.models else [],
    }
    arrays = {"q_online": agent.qf.online.bundle.vec,
              "q_target": agent.qf.target.bundle.vec}
    if agent.model is not None:
        arrays["model"] = agent.model.bundle.vec
        meta["model_heads"] = agent.model.n_heads
    for k, m in agent.models.items():
        arrays[f"model_{k}"] = m.bundle.vec
    if agent.cluster_state is not None:
        st = agent.cluster_state
        ids = sorted(st.centers)
        meta["embedding_dims"] = st.embedding.dims
        meta["classifier_dims"] = st.classifier.net.dims
        meta["cluster_ids"] = st.classifier.cluster_ids
        meta["center_ids"] = ids
        arrays["embedding"] = st.embedding.bundle.vec
        arrays["classifier"] = st.classifier.net.bundle.vec
        arrays["emb_centers"] = np.stack([st.centers[i].embedding for i in ids])
        arrays["reward_centers"] = np.array([st.centers[i].reward for i in ids])
        arrays["radii"] = np.array([st.centers[i].radius for i in ids])
    if agent.embedding is not None:
        meta["embedding_dims"] = agent.embedding.dims
        arrays["embedding"] = agent.embedding.bundle.vec
    save_arrays(path, meta, arrays)


def load_agent(path) -> tuple[DynaAgent, ExperimentConfig]:
    from .config import make_config
    meta, arrays = load_arrays(path)
    cfg_dict = dict(meta["config"])
    preset = cfg_dict.pop("preset", "grid_desk")
    cfg = make_config(preset, **cfg_dict)
    env = make_env(cfg.environment, cfg.grid_size)
    agent = DynaAgent(cfg, env, seed_streams(0))
    agent.latched = bool(meta["latched"])
    agent.k_req = meta["k_req"]
    agent.t = int(meta["t"])
    agent.qf.online.bundle.vec[:] = arrays["q_online"]
    agent.qf.target.bundle.vec[:] = arrays["q_target"]
    if "model" in arrays:
        agent.model = agent._new_world_model(int(meta.get("model_heads", 1)))
        agent.model.bundle.vec[:] = arrays["model"]
    for k in meta.get("model_ids", []):
        m = agent._new_world_model(1)
        m.bundle.vec[:] = arrays[f"model_{int(k)}"]
        agent.models[int(k)] = m
    agent.head_of = {int(k): int(v) for k, v in meta.get("head_of", [])}
    if "classifier" in arrays:
        rng = np.random.default_rng(0)
        E = Mlp(meta["embedding_dims"], rng, activation="tanh", out_activation="tanh")
        E.bundle.vec[:] = arrays["embedding"]
        cnet = Mlp(meta["classifier_dims"], rng, activation="tanh",
                   out_activation="linear")
        cnet.bundle.vec[:] = arrays["classifier"]
        centers = {int(i): ClusterCenter(arrays["emb_centers"][j],
                                         float(arrays["reward_centers"][j]),
                                         float(arrays["radii"][j]))
                   for j, i in enumerate(meta["center_ids"])}
        agent.cluster_state = ClusterState(E, centers,
                                           Classifier(cnet, meta["cluster_ids"]))
    elif "embedding" in arrays:
        rng = np.random.default_rng(0)
        E = Mlp(meta["embedding_dims"], rng, activation="tanh", out_activation="tanh")
        E.bundle.vec[:] = arrays["embedding"]
        agent.embedding = E
    agent._bootstrapped = True
    return agent, cfg
