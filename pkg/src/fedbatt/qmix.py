"""Cooperative Q-learning for the dual selection of sub-models and devices.

Every device is an agent sharing one recurrent Q-network: input MLP, GRU,
output head with one Q-value per action (train depth 1..M, or skip). A
mixing network with state-conditioned nonnegative weights combines the
chosen-action Q-values into a team value, so the team gradient can only push
individual Q-values in the direction that helps the team ("monotone mixing").
A plain-summation mixer is available behind the ``vdn`` flag for ablation.

Participant selection is Top-K over the chosen-action Q-values of all agents
that did not choose skip. The team reward trades off accuracy gain against
energy spent and round wall-clock time.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GruCellParams, Tape, Tensor

_MAGIC = b"FBQL"
_VERSION = 1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RewardWeights:
    """Trade-off weights: accuracy gain vs energy spent vs round time."""

    accuracy: float = 1000.0
    energy: float = 0.01
    time: float = 1.0


@dataclass
class QmixConfig:
    hidden_size: int = 64
    embed_size: int = 32
    mixer: str = "qmix"  # "qmix" (state-conditioned) or "vdn" (summation)
    gamma: float = 0.99
    lr: float = 5e-4
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    replay_capacity: int = 5_000  # episodes
    batch_episodes: int = 32
    target_period: int = 200  # train steps between target syncs
    warmup_episodes: int = 50
    grad_clip: float = 10.0
    reward: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        if self.mixer not in ("qmix", "vdn"):
            raise ValueError(f"mixer must be 'qmix' or 'vdn', got {self.mixer!r}")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

@dataclass
class AgentNetParams:
    """One parameter set shared by every agent: MLP -> GRU -> Q head."""

    w_in: Tensor
    b_in: Tensor
    gru: GruCellParams
    w_out: Tensor
    b_out: Tensor

    @classmethod
    def create(cls, rng: np.random.Generator, obs_dim: int, hidden: int,
               n_actions: int) -> "AgentNetParams":
        return cls(
            w_in=Tensor(ad.glorot(rng, obs_dim, hidden)),
            b_in=Tensor(np.zeros(hidden)),
            gru=GruCellParams.create(rng, hidden, hidden),
            w_out=Tensor(ad.glorot(rng, hidden, n_actions)),
            b_out=Tensor(np.zeros(n_actions)),
        )

    def tensors(self) -> list[Tensor]:
        return [self.w_in, self.b_in, *self.gru.tensors(), self.w_out, self.b_out]

    @property
    def hidden_size(self) -> int:
        return self.w_in.shape[1]


@dataclass
class MixerParams:
    """Hypernetworks producing the state-conditioned mixing weights."""

    hw1_w: Tensor  # state -> (n_agents * embed) first-layer weights
    hw1_b: Tensor
    hb1_w: Tensor  # state -> embed first-layer bias
    hb1_b: Tensor
    hw2_w: Tensor  # state -> embed second-layer weights
    hw2_b: Tensor
    v1_w: Tensor  # two-layer state value supplies the final bias
    v1_b: Tensor
    v2_w: Tensor
    v2_b: Tensor
    n_agents: int
    embed: int

    @classmethod
    def create(cls, rng: np.random.Generator, state_dim: int, n_agents: int,
               embed: int) -> "MixerParams":
        return cls(
            hw1_w=Tensor(ad.glorot(rng, state_dim, n_agents * embed)),
            hw1_b=Tensor(np.zeros(n_agents * embed)),
            hb1_w=Tensor(ad.glorot(rng, state_dim, embed)),
            hb1_b=Tensor(np.zeros(embed)),
            hw2_w=Tensor(ad.glorot(rng, state_dim, embed)),
            hw2_b=Tensor(np.zeros(embed)),
            v1_w=Tensor(ad.glorot(rng, state_dim, embed)),
            v1_b=Tensor(np.zeros(embed)),
            v2_w=Tensor(ad.glorot(rng, embed, 1)),
            v2_b=Tensor(np.zeros(1)),
            n_agents=n_agents,
            embed=embed,
        )

    def tensors(self) -> list[Tensor]:
        return [self.hw1_w, self.hw1_b, self.hb1_w, self.hb1_b, self.hw2_w,
                self.hw2_b, self.v1_w, self.v1_b, self.v2_w, self.v2_b]


def agent_q(net: AgentNetParams, obs: Tensor, hidden: Tensor) -> tuple[Tensor, Tensor]:
    """Per-agent Q-values for a batch of observation rows; evolves the GRU."""
    x = ad.relu(ad.dense(obs, net.w_in, net.b_in))
    h = ad.gru_step(x, hidden, net.gru)
    return ad.dense(h, net.w_out, net.b_out), h


def mix(mixer: MixerParams | None, q_chosen: Tensor, states: Tensor) -> Tensor:
    """Combine per-agent chosen-action Q-values into a team value, (rows, 1).

    With a mixer: Q_tot = w2(S) . elu(w1(S) q + b1(S)) + b2(S), where the
    hyper-produced weights pass through absolute value, making Q_tot
    nondecreasing in every q. Without one (``vdn``): plain summation.
    """
    rows, n = q_chosen.shape
    if mixer is None:
        ones = Tensor(np.ones((n, 1)))
        return ad.matmul(q_chosen, ones)
    if n != mixer.n_agents:
        raise ad.ShapeError(f"expected {mixer.n_agents} agent values, got {n}")
    e = mixer.embed
    w1 = ad.reshape(ad.absval(ad.dense(states, mixer.hw1_w, mixer.hw1_b)), (rows, n, e))
    b1 = ad.dense(states, mixer.hb1_w, mixer.hb1_b)
    q3 = ad.reshape(q_chosen, (rows, 1, n))
    hidden = ad.elu(ad.add(ad.reshape(ad.matmul(q3, w1), (rows, e)), b1))
    w2 = ad.absval(ad.dense(states, mixer.hw2_w, mixer.hw2_b))
    dot = ad.matmul(ad.reshape(hidden, (rows, 1, e)), ad.reshape(w2, (rows, e, 1)))
    v = ad.dense(ad.relu(ad.dense(states, mixer.v1_w, mixer.v1_b)),
                 mixer.v2_w, mixer.v2_b)
    return ad.add(ad.reshape(dot, (rows, 1)), v)


# ---------------------------------------------------------------------------
# selection and reward
# ---------------------------------------------------------------------------

def masked_argmax(q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise argmax over feasible actions; ties go to the lowest index."""
    blocked = np.where(mask, q, -np.inf)
    return np.argmax(blocked, axis=-1)


def topk_select(actions: np.ndarray, chosen_q: np.ndarray, k: int,
                skip_action: int) -> list[int]:
    """Up to ``k`` non-skip devices with the highest chosen-action Q-values.

    Ties break toward the lower device id; devices that chose skip are never
    drafted, even if the quota goes unfilled.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    candidates = [i for i in range(len(actions)) if actions[i] != skip_action]
    candidates.sort(key=lambda i: (-chosen_q[i], i))
    return candidates[:k]


def compute_reward(acc_t: float, acc_prev: float, e_all_prev: float,
                   e_all_t: float, t_all_max: float,
                   weights: RewardWeights) -> float:
    """Team reward: pay for accuracy gains, charge for energy and round time."""
    for name, a in (("acc_t", acc_t), ("acc_prev", acc_prev)):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {a}")
    if e_all_t > e_all_prev:
        raise ValueError("remaining energy cannot increase")
    return (weights.accuracy * (acc_t - acc_prev)
            - weights.energy * (e_all_prev - e_all_t)
            - weights.time * t_all_max)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass
class Episode:
    """One finished trajectory; every episode ends on a terminal step."""

    obs: np.ndarray  # (T, N, D)
    masks: np.ndarray  # (T, N, A) bool
    actions: np.ndarray  # (T, N) int
    states: np.ndarray  # (T, S)
    rewards: np.ndarray  # (T,)

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """Ring buffer of complete episodes; sampling never splits a trajectory."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._episodes: deque[Episode] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._episodes)

    def add(self, episode: Episode) -> None:
        if len(episode) == 0:
            raise ValueError("refusing to store an empty episode")
        self._episodes.append(episode)

    def sample(self, rng: np.random.Generator, k: int) -> list[Episode]:
        if len(self) == 0:
            raise ValueError("replay buffer is empty")
        replace = len(self) < k
        idx = rng.choice(len(self), size=k, replace=replace)
        return [self._episodes[i] for i in idx]


# ---------------------------------------------------------------------------
# learner
# ---------------------------------------------------------------------------

class QmixLearner:
    """Owns the shared agent net, the mixer, targets, replay, and exploration."""

    def __init__(self, n_agents: int, obs_dim: int, n_actions: int,
                 state_dim: int, config: QmixConfig,
                 init_seed: np.random.SeedSequence | int = 0,
                 explore_seed: np.random.SeedSequence | int = 1,
                 replay_seed: np.random.SeedSequence | int = 2):
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.state_dim = state_dim
        self.config = config
        rng = np.random.default_rng(init_seed)
        self.net = AgentNetParams.create(rng, obs_dim, config.hidden_size, n_actions)
        self.mixer = (MixerParams.create(rng, state_dim, n_agents, config.embed_size)
                      if config.mixer == "qmix" else None)
        self.target_net = AgentNetParams.create(rng, obs_dim, config.hidden_size,
                                                n_actions)
        self.target_mixer = (MixerParams.create(rng, state_dim, n_agents,
                                                config.embed_size)
                             if config.mixer == "qmix" else None)
        self.sync_target()
        self.optimizer = ad.Adam(self.parameters(), lr=config.lr)
        self.replay = ReplayBuffer(config.replay_capacity)
        self.explore_rng = np.random.default_rng(explore_seed)
        self.replay_rng = np.random.default_rng(replay_seed)
        self.env_steps = 0
        self.train_steps = 0
        self.hidden = np.zeros((n_agents, config.hidden_size))
        self._episode: list[tuple] = []

    # -- parameter bookkeeping ------------------------------------------------

    def parameters(self) -> list[Tensor]:
        out = self.net.tensors()
        if self.mixer is not None:
            out += self.mixer.tensors()
        return out

    def _target_parameters(self) -> list[Tensor]:
        out = self.target_net.tensors()
        if self.target_mixer is not None:
            out += self.target_mixer.tensors()
        return out

    def sync_target(self) -> None:
        """Copy online parameters into the target copy, exactly."""
        for src, dst in zip(self.parameters(), self._target_parameters()):
            dst.data = src.data.copy()

    # -- acting ---------------------------------------------------------------

    def epsilon(self) -> float:
        cfg = self.config
        if cfg.eps_decay_steps <= 0:
            return cfg.eps_end
        frac = min(1.0, self.env_steps / cfg.eps_decay_steps)
        return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)

    def begin_episode(self) -> None:
        """Reset the recurrent state and start a fresh trajectory record."""
        self.hidden = np.zeros((self.n_agents, self.config.hidden_size))
        self._episode = []

    def select_actions(self, obs: np.ndarray, masks: np.ndarray,
                       explore: bool) -> tuple[np.ndarray, np.ndarray]:
        """Pick one action per agent; returns (actions, q_values).

        Greedy takes the masked argmax with ties to the lowest index. With
        exploration on, each agent independently goes uniform-random over its
        feasible actions with probability epsilon; the decay clock advances
        one tick per exploring call.
        """
        if not masks.any(axis=1).all():
            raise ValueError("every agent needs at least one feasible action")
        q, h = agent_q(self.net, Tensor(obs), Tensor(self.hidden))
        self.hidden = h.data
        qv = q.data
        actions = masked_argmax(qv, masks)
        if explore:
            eps = self.epsilon()
            for i in range(self.n_agents):
                if self.explore_rng.uniform() < eps:
                    feasible = np.flatnonzero(masks[i])
                    actions[i] = int(self.explore_rng.choice(feasible))
            self.env_steps += 1
        return actions, qv

    def record_transition(self, obs: np.ndarray, masks: np.ndarray,
                          actions: np.ndarray, state: np.ndarray,
                          reward: float) -> None:
        self._episode.append((obs.copy(), masks.copy(), actions.copy(),
                              state.copy(), float(reward)))

    def finish_episode(self) -> None:
        """Seal the running trajectory into the replay buffer."""
        if not self._episode:
            return
        obs, masks, actions, states, rewards = zip(*self._episode)
        self.replay.add(Episode(obs=np.stack(obs), masks=np.stack(masks),
                                actions=np.stack(actions), states=np.stack(states),
                                rewards=np.array(rewards)))
        self._episode = []

    # -- training -------------------------------------------------------------

    def ready_to_train(self) -> bool:
        return len(self.replay) >= self.config.warmup_episodes

    def train_step(self, episodes: list[Episode] | None = None) -> float:
        """One TD regression step over a batch of episodes; returns the loss.

        Targets come from the target parameters: per-agent feasible maxima at
        the next step, combined by the target mixer (or summed in vdn mode).
        The last step of every episode is terminal, so its target is just r.
        """
        cfg = self.config
        if episodes is None:
            episodes = self.replay.sample(self.replay_rng, cfg.batch_episodes)
        b = len(episodes)
        t_max = max(len(e) for e in episodes)
        n, d, a = self.n_agents, self.obs_dim, self.n_actions
        obs = np.zeros((t_max, b, n, d))
        masks = np.zeros((t_max, b, n, a), dtype=bool)
        masks[..., a - 1] = True  # padding rows keep one legal action
        actions = np.full((t_max, b, n), a - 1, dtype=np.int64)
        states = np.zeros((t_max, b, self.state_dim))
        rewards = np.zeros((t_max, b))
        valid = np.zeros((t_max, b))
        last = np.zeros((t_max, b), dtype=bool)
        for j, ep in enumerate(episodes):
            t = len(ep)
            obs[:t, j] = ep.obs
            masks[:t, j] = ep.masks
            actions[:t, j] = ep.actions
            states[:t, j] = ep.states
            rewards[:t, j] = ep.rewards
            valid[:t, j] = 1.0
            last[t - 1, j] = True

        # target pass (no tape): per-agent feasible maxima at each step
        th = np.zeros((b * n, cfg.hidden_size))
        boot = np.zeros((t_max, b))
        for t in range(t_max):
            q, h = agent_q(self.target_net, Tensor(obs[t].reshape(b * n, d)),
                           Tensor(th))
            th = h.data
            best = np.max(np.where(masks[t].reshape(b * n, a), q.data, -np.inf),
                          axis=1).reshape(b, n)
            boot[t] = mix(self.target_mixer, Tensor(best),
                          Tensor(states[t])).data[:, 0]
        targets = rewards.copy()
        for t in range(t_max - 1):
            targets[t] += np.where(last[t], 0.0, cfg.gamma * boot[t + 1])

        # online pass under the tape, accumulating masked squared TD error
        count = float(valid.sum())
        with Tape() as tape:
            oh = Tensor(np.zeros((b * n, cfg.hidden_size)))
            total = Tensor(0.0)
            for t in range(t_max):
                q, oh = agent_q(self.net, Tensor(obs[t].reshape(b * n, d)), oh)
                chosen = ad.reshape(ad.take_per_row(q, actions[t].reshape(b * n)),
                                    (b, n))
                qtot = mix(self.mixer, chosen, Tensor(states[t]))
                err = ad.mul(ad.sub(qtot, Tensor(targets[t][:, None])),
                             Tensor(valid[t][:, None]))
                total = ad.add(total, ad.sum_all(ad.mul(err, err)))
            loss = ad.mul(total, Tensor(1.0 / count))
        grads = tape.gradients(loss)
        ad.clip_grad_norm(grads, self.parameters(), cfg.grad_clip)
        self.optimizer.step(grads)
        self.train_steps += 1
        if cfg.target_period > 0 and self.train_steps % cfg.target_period == 0:
            self.sync_target()
        return float(loss.data)


# ---------------------------------------------------------------------------
# learner checkpoints
# ---------------------------------------------------------------------------

_HEADER = "<4sI 6I i 8d 5Q 3Q"


def save_learner(learner: QmixLearner, path: str) -> None:
    """Binary checkpoint: scalar hyperparameters, then all parameter tensors.

    Saves online and target parameters plus optimizer moments, so training
    resumes where it left off; the replay buffer is deliberately excluded.
    """
    cfg = learner.config
    header = struct.pack(
        _HEADER, _MAGIC, _VERSION,
        learner.n_agents, learner.obs_dim, learner.n_actions, learner.state_dim,
        cfg.hidden_size, cfg.embed_size,
        1 if cfg.mixer == "vdn" else 0,
        cfg.gamma, cfg.lr, cfg.eps_start, cfg.eps_end, cfg.grad_clip,
        cfg.reward.accuracy, cfg.reward.energy, cfg.reward.time,
        cfg.eps_decay_steps, cfg.replay_capacity, cfg.batch_episodes,
        cfg.target_period, cfg.warmup_episodes,
        learner.env_steps, learner.train_steps, learner.optimizer.t)
    params = learner.parameters()
    with open(path, "wb") as f:
        f.write(header)
        for t in params + learner._target_parameters():
            f.write(t.data.astype("<f8").tobytes())
        for t in params:
            f.write(learner.optimizer._m[t].astype("<f8").tobytes())
        for t in params:
            f.write(learner.optimizer._v[t].astype("<f8").tobytes())


def load_learner(path: str) -> QmixLearner:
    with open(path, "rb") as f:
        raw = f.read(struct.calcsize(_HEADER))
        (magic, version, n_agents, obs_dim, n_actions, state_dim, hidden, embed,
         vdn_flag, gamma, lr, eps_start, eps_end, grad_clip,
         w_acc, w_energy, w_time,
         eps_decay, capacity, batch, target_period, warmup,
         env_steps, train_steps, adam_t) = struct.unpack(_HEADER, raw)
        if magic != _MAGIC:
            raise ValueError(f"not a learner checkpoint: bad magic {magic!r}")
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        cfg = QmixConfig(hidden_size=hidden, embed_size=embed,
                         mixer="vdn" if vdn_flag else "qmix", gamma=gamma, lr=lr,
                         eps_start=eps_start, eps_end=eps_end,
                         eps_decay_steps=eps_decay, replay_capacity=capacity,
                         batch_episodes=batch, target_period=target_period,
                         warmup_episodes=warmup, grad_clip=grad_clip,
                         reward=RewardWeights(w_acc, w_energy, w_time))
        learner = QmixLearner(n_agents, obs_dim, n_actions, state_dim, cfg)
        learner.env_steps = env_steps
        learner.train_steps = train_steps
        learner.optimizer.t = adam_t
        params = learner.parameters()
        for t in params + learner._target_parameters():
            t.data = _read_array(f, t.data.shape)
        for t in params:
            learner.optimizer._m[t] = _read_array(f, t.data.shape)
        for t in params:
            learner.optimizer._v[t] = _read_array(f, t.data.shape)
    return learner


def _read_array(f, shape) -> np.ndarray:
    n = int(np.prod(shape)) if shape else 1
    raw = f.read(n * 8)
    if len(raw) != n * 8:
        raise ValueError("truncated checkpoint")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
