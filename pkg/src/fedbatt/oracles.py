"""Independent brute-force oracles used to cross-check the fast paths.

These deliberately avoid the code they verify: gradients come from central
finite differences of forward passes only, and the averaging oracle is a
plain per-element loop over contributors.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor


def finite_difference_grads(
    forward: Callable[[], float],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradients of a scalar ``forward()`` w.r.t. ``params``.

    Perturbs one element at a time; ``forward`` must be deterministic and must
    read the parameter arrays afresh on every call.
    """
    grads = []
    for p in params:
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = forward()
            flat[i] = orig - step
            down = forward()
            flat[i] = orig
            g[i] = (up - down) / (2.0 * step)
        grads.append(g.reshape(p.data.shape))
    return grads


def max_relative_error(
    analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray], floor: float = 1e-8
) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor) across all pairs."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def sequential_weighted_average(
    current: Sequence[np.ndarray],
    deltas: Sequence[Sequence[np.ndarray]],
    sample_counts: Sequence[int],
) -> list[np.ndarray]:
    """Reference aggregation: ``new = old - sum_n (L_n / sum L) * delta_n``.

    One explicit accumulation loop per tensor, no shortcuts; all updates must
    cover every tensor (the homogeneous full-depth case).
    """
    total = float(sum(sample_counts))
    out = []
    for t_idx, old in enumerate(current):
        acc = np.zeros_like(old)
        for delta, count in zip(deltas, sample_counts):
            acc = acc + (count / total) * delta[t_idx]
        out.append(old - acc)
    return out


# ---------------------------------------------------------------------------
# end-to-end oracle fixtures
# ---------------------------------------------------------------------------

def matrix_game_payoffs() -> np.ndarray:
    """Two agents, two actions; only the joint action (1, 1) pays."""
    return np.array([[0.0, 0.0], [0.0, 8.0]])


def matrix_game_optimum(payoffs: np.ndarray) -> tuple[int, int]:
    """Brute-force enumeration of the best joint action."""
    best, best_value = (0, 0), -np.inf
    for a in range(payoffs.shape[0]):
        for b in range(payoffs.shape[1]):
            if payoffs[a, b] > best_value:
                best, best_value = (a, b), payoffs[a, b]
    return best


def run_matrix_game(mode: str, budget: int, seed: int,
                    eval_episodes: int = 1000):
    """Train the cooperative learner on the one-step matrix game.

    Returns (optimal-joint-action rate over greedy evaluation episodes,
    the trained learner).
    """
    from . import qmix as qx

    payoffs = matrix_game_payoffs()
    optimum = matrix_game_optimum(payoffs)
    obs = np.eye(2)
    state = obs.reshape(-1)
    masks = np.ones((2, 2), dtype=bool)
    cfg = qx.QmixConfig(hidden_size=32, embed_size=8, mixer=mode,
                        eps_end=0.3, eps_decay_steps=4000, replay_capacity=500,
                        batch_episodes=32, target_period=100, warmup_episodes=32)
    ss = np.random.SeedSequence(seed).spawn(3)
    learner = qx.QmixLearner(2, 2, 2, 4, cfg, *ss)
    while learner.train_steps < budget:
        learner.begin_episode()
        acts, _ = learner.select_actions(obs, masks, explore=True)
        learner.record_transition(obs, masks, acts, state,
                                  float(payoffs[acts[0], acts[1]]))
        learner.finish_episode()
        if learner.ready_to_train():
            learner.train_step()
    wins = 0
    for _ in range(eval_episodes):
        learner.begin_episode()
        acts, _ = learner.select_actions(obs, masks, explore=False)
        wins += int((acts[0], acts[1]) == optimum)
    return wins / eval_episodes, learner


def fedavg_trajectory_diff(rounds: int = 3, seed: int = 5) -> float:
    """Max abs difference between a full-depth homogeneous run and the
    sequential sample-weighted averaging loop replayed outside the pipeline."""
    from . import model as fm
    from . import orchestrator as orch

    cfg = orch.ExperimentConfig(
        seed=seed,
        model=orch.ModelConfig(depth=4, input_dim=6, width=8, bottleneck=5,
                               classes=3),
        data=orch.DataConfig(samples=240, alpha=1e6, validation_fraction=0.1),
        devices=orch.DeviceConfig(count=3, battery_joules=1e9,
                                  class_mix={"large": 1.0}),
        train=orch.TrainConfig(local_epochs=2, batch_size=16, lr=0.05),
        run=orch.RunConfig(scheduler="static", max_rounds=rounds, episodes=1,
                           participation=1.0),
    )
    exp = orch.Experiment(cfg)
    exp.run()

    reference = fm.LayerwiseModel(
        cfg.model.depth, cfg.model.input_dim, cfg.model.width,
        cfg.model.bottleneck, cfg.model.classes,
        np.random.default_rng(exp.streams["model-init"]))
    tensors = reference.full_view().tensors()
    current = [t.data.copy() for t in tensors]
    for rnd in range(rounds):
        for arr, t in zip(current, tensors):
            t.data = arr.copy()
        updates = [fm.local_train(
            reference.full_view(),
            exp.dataset.features[exp.plan.device_indices[dev]],
            exp.dataset.labels[exp.plan.device_indices[dev]],
            cfg.train.local_epochs, cfg.train.batch_size, cfg.train.lr,
            exp._local_rng(0, rnd, dev), device_id=dev)
            for dev in range(cfg.devices.count)]
        current = sequential_weighted_average(
            current, [u.deltas for u in updates],
            [u.sample_count for u in updates])
    worst = 0.0
    for ref, live in zip(current, exp.model.full_view().tensors()):
        worst = max(worst, float(np.max(np.abs(live.data - ref))))
    return worst


def gradcheck_max_rel_err(instances: int = 56, seed: int = 0,
                          step: float = 1e-5) -> float:
    """Worst relative error of taped gradients vs central differences.

    Instances cycle through four kinds of computation: a dense layer under a
    softmax cross-entropy loss, a GRU step, a bare cross-entropy, and the
    monotone mixing network.
    """
    from . import autodiff as ad
    from . import qmix as qx
    from .autodiff import Tape, Tensor

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(instances):
        kind = i % 4
        if kind == 0:  # dense + cross-entropy
            n, d, h, c = 3, 4, 5, 3
            x = Tensor(rng.normal(size=(n, d)))
            w1, b1 = Tensor(rng.normal(size=(d, h))), Tensor(rng.normal(size=h))
            w2, b2 = Tensor(rng.normal(size=(h, c))), Tensor(rng.normal(size=c))
            y = rng.integers(0, c, size=n)
            params = [x, w1, b1, w2, b2]

            def forward():
                hid = ad.tanh(ad.dense(x, w1, b1))
                return float(ad.softmax_cross_entropy(
                    ad.dense(hid, w2, b2), y).data)

            with Tape() as tape:
                hid = ad.tanh(ad.dense(x, w1, b1))
                loss = ad.softmax_cross_entropy(ad.dense(hid, w2, b2), y)
        elif kind == 1:  # GRU step
            n, d, h = 2, 3, 4
            x = Tensor(rng.normal(size=(n, d)))
            h0 = Tensor(rng.normal(size=(n, h)))
            cell = ad.GruCellParams.create(rng, d, h)
            params = [x, h0, *cell.tensors()]

            def forward():
                return float(ad.sum_all(
                    ad.gru_step(x, h0, cell)).data)

            with Tape() as tape:
                loss = ad.sum_all(ad.gru_step(x, h0, cell))
        elif kind == 2:  # bare softmax cross-entropy
            n, c = 4, 5
            logits = Tensor(rng.normal(size=(n, c)))
            y = rng.integers(0, c, size=n)
            params = [logits]

            def forward():
                return float(ad.softmax_cross_entropy(logits, y).data)

            with Tape() as tape:
                loss = ad.softmax_cross_entropy(logits, y)
        else:  # mixing network
            rows, agents, sdim, embed = 2, 3, 4, 5
            mixer = qx.MixerParams.create(rng, sdim, agents, embed)
            q = Tensor(rng.normal(size=(rows, agents)))
            s = Tensor(rng.normal(size=(rows, sdim)))
            params = mixer.tensors() + [q, s]

            def forward():
                return float(ad.sum_all(qx.mix(mixer, q, s)).data)

            with Tape() as tape:
                loss = ad.sum_all(qx.mix(mixer, q, s))
        grads = tape.gradients(loss)
        numeric = finite_difference_grads(forward, params, step=step)
        for p, num in zip(params, numeric):
            worst = max(worst, max_relative_error(grads[p], num))
    return worst
