"""The federated round loop, schedulers, termination, and metrics records.

Each round runs a fixed five-step pipeline: collect device observations;
fold the previous round's updates into the global model and measure
validation accuracy; pick per-device actions and the participant set
(scheduler); dispatch depth-limited views; train locally, charge batteries,
and score the round. Updates therefore land one round after they are
produced; whatever is still pending when the run stops is folded in before
the final evaluation.

An episode is one complete federated run (fresh model and batteries). The
learning scheduler keeps its networks, replay, and exploration schedule
across episodes within a single invocation, so later episodes benefit from
earlier ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import data as dg
from . import devices as dv
from . import model as fm
from . import qmix as qx

SCHEDULERS = ("dr-fl", "greedy", "random", "static")

STATIC_DEPTH_BY_CLASS = {"small": 1, "medium": 2, "large": 4}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    depth: int = 4
    input_dim: int = 32
    width: int = 64
    bottleneck: int = 32
    classes: int = 10


@dataclass
class DataConfig:
    samples: int = 4000
    alpha: float = 1.0
    validation_fraction: float = 0.04


@dataclass
class DeviceConfig:
    count: int = 40
    battery_joules: float = 7560.0
    class_mix: dict | None = None
    class_params: dict | None = None  # overrides for compute/bandwidth/power
    depth_scaling: str = "params"  # "params": time scales with sub-model size; "flat": no scaling


@dataclass
class TrainConfig:
    local_epochs: int = 5
    batch_size: int = 32
    lr: float = 0.05


@dataclass
class RunConfig:
    scheduler: str = "dr-fl"
    max_rounds: int = 150
    episodes: int = 1
    participation: float = 0.10  # fraction of devices drafted per round
    energy_budget: float | None = None  # total joules the run may consume
    patience: int | None = None  # stop after this many rounds without improvement
    final_episode_greedy: bool = False  # last episode acts without exploration


@dataclass
class ExperimentConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    devices: DeviceConfig = field(default_factory=DeviceConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunConfig = field(default_factory=RunConfig)
    marl: qx.QmixConfig = field(default_factory=qx.QmixConfig)

    def validate(self) -> None:
        checks = [
            ("run.scheduler", self.run.scheduler in SCHEDULERS,
             f"must be one of {SCHEDULERS}"),
            ("run.max_rounds", self.run.max_rounds >= 1, "must be >= 1"),
            ("run.episodes", self.run.episodes >= 1, "must be >= 1"),
            ("run.participation", 0 < self.run.participation <= 1,
             "must be in (0, 1]"),
            ("run.energy_budget", self.run.energy_budget is None
             or self.run.energy_budget >= 0, "must be >= 0"),
            ("run.patience", self.run.patience is None or self.run.patience >= 1,
             "must be >= 1"),
            ("data.alpha", self.data.alpha > 0, "must be > 0"),
            ("data.validation_fraction",
             0 <= self.data.validation_fraction < 1, "must be in [0, 1)"),
            ("data.samples", self.data.samples >= self.model.classes,
             "must cover every class"),
            ("model.depth", self.model.depth >= 1, "must be >= 1"),
            ("model.classes", self.model.classes >= 2, "must be >= 2"),
            ("train.local_epochs", self.train.local_epochs >= 1, "must be >= 1"),
            ("train.batch_size", self.train.batch_size >= 1, "must be >= 1"),
            ("train.lr", self.train.lr >= 0, "must be >= 0"),
            ("devices.count", self.devices.count >= 1, "must be >= 1"),
            ("devices.battery_joules", self.devices.battery_joules > 0,
             "must be > 0"),
            ("devices.depth_scaling",
             self.devices.depth_scaling in ("params", "flat"),
             "must be 'params' or 'flat'"),
        ]
        for key, ok, why in checks:
            if not ok:
                raise ConfigError(f"{key}: {why}")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the dotted key."""


STREAM_NAMES = ("data", "model-init", "learner-init", "exploration", "replay",
                "baseline", "local-train")


def seed_streams(seed: int) -> dict[str, int]:
    """Fan one user seed out to independent named integer roots.

    Each subsystem draws from its own root, so adding draws in one place
    never shifts the randomness of another.
    """
    state = np.random.SeedSequence(seed).generate_state(len(STREAM_NAMES))
    return {name: int(root) for name, root in zip(STREAM_NAMES, state)}


# ---------------------------------------------------------------------------
# round records
# ---------------------------------------------------------------------------

@dataclass
class DeviceRound:
    device_id: int
    action: int  # chosen action: depth-1 index, or M for skip
    q_value: float | None  # chosen-action Q; None for baseline schedulers
    selected: bool
    e_spent: float
    t_tra: float
    t_com: float
    e_remain: float
    depleted: bool


@dataclass
class RoundReport:
    episode: int
    round_index: int
    accuracy: float  # full-depth validation accuracy measured this round
    depth_accuracy: list[float]  # per-depth sub-model validation accuracy
    devices: list[DeviceRound]
    e_all_remaining: float
    e_spent: float
    t_all: float
    reward: float
    depleted_by_class: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "type": "round",
            "episode": self.episode,
            "round": self.round_index,
            "accuracy": self.accuracy,
            "depth_accuracy": self.depth_accuracy,
            "e_all_remaining": self.e_all_remaining,
            "e_spent": self.e_spent,
            "t_all": self.t_all,
            "reward": self.reward,
            "depleted_by_class": self.depleted_by_class,
            "devices": [{
                "id": d.device_id, "action": d.action, "q": d.q_value,
                "selected": d.selected, "e_spent": d.e_spent,
                "t_tra": d.t_tra, "t_com": d.t_com,
                "e_remain": d.e_remain, "depleted": d.depleted,
            } for d in self.devices],
        }


@dataclass
class EpisodeSummary:
    episode: int
    rounds_run: int
    best_accuracy: float
    best_round: int
    final_accuracy: float
    final_e_all: float
    energy_spent: float
    stop_reason: str
    depletion_round_by_class: dict[str, int | None]
    participation_by_class: dict[str, float]

    def to_dict(self) -> dict:
        return {"type": "episode_summary", **self.__dict__}


@dataclass
class ExperimentResult:
    reports: list[RoundReport]
    episode_summaries: list[EpisodeSummary]

    def summary_dict(self) -> dict:
        last = self.episode_summaries[-1]
        return {
            "type": "summary",
            "episodes": len(self.episode_summaries),
            "best_accuracy": last.best_accuracy,
            "best_round": last.best_round,
            "final_accuracy": last.final_accuracy,
            "final_e_all": last.final_e_all,
            "rounds_run": last.rounds_run,
            "stop_reason": last.stop_reason,
            "best_accuracy_any_episode": max(s.best_accuracy
                                             for s in self.episode_summaries),
            "depletion_round_by_class": last.depletion_round_by_class,
        }


# ---------------------------------------------------------------------------
# baseline action rules
# ---------------------------------------------------------------------------

def baseline_greedy(masks: np.ndarray) -> np.ndarray:
    """Deepest affordable depth per device; skip only when nothing fits."""
    n, width = masks.shape
    skip = width - 1
    actions = np.full(n, skip, dtype=np.int64)
    for i in range(n):
        depths = np.flatnonzero(masks[i, :skip])
        if len(depths):
            actions[i] = depths[-1]
    return actions


def baseline_random(masks: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw over each device's feasible actions, skip included."""
    return np.array([int(rng.choice(np.flatnonzero(row))) for row in masks],
                    dtype=np.int64)


def baseline_static(masks: np.ndarray, class_tags: list[str]) -> np.ndarray:
    """Class-matched fixed depth (small 1, medium 2, large 4); skip if unaffordable."""
    n, width = masks.shape
    skip = width - 1
    actions = np.full(n, skip, dtype=np.int64)
    for i, tag in enumerate(class_tags):
        depth = min(STATIC_DEPTH_BY_CLASS.get(tag, width - 1), width - 1)
        if masks[i, depth - 1]:
            actions[i] = depth - 1
    return actions


def draw_participants(actions: np.ndarray, k: int, skip: int,
                      rng: np.random.Generator) -> list[int]:
    """Uniform-random K among the devices willing to train this round."""
    willing = np.flatnonzero(actions != skip)
    if len(willing) <= k:
        return willing.tolist()
    return sorted(rng.choice(willing, size=k, replace=False).tolist())


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

class Experiment:
    """Owns all mutable run state; one instance per invocation."""

    def __init__(self, config: ExperimentConfig):
        config.validate()
        self.config = config
        self.streams = seed_streams(config.seed)

        self.dataset = dg.generate_synthetic(
            config.model.classes, config.data.samples, config.model.input_dim,
            seed=self.streams["data"])
        self.plan = dg.dirichlet_partition(
            self.dataset, config.devices.count, config.data.alpha,
            config.data.validation_fraction, seed=self.streams["data"] + 1)
        self.val_x = self.dataset.features[self.plan.validation_indices]
        self.val_y = self.dataset.labels[self.plan.validation_indices]
        if len(self.val_y) == 0:
            raise ConfigError("data.validation_fraction: validation split is "
                              "empty; increase the fraction or sample count")

        self.profiles, self.states = dv.build_population(
            config.devices.count, config.devices.battery_joules,
            config.devices.class_mix, config.devices.class_params)
        for profile, shard in zip(self.profiles, self.plan.device_indices):
            profile.shard_size = len(shard)

        ref = fm.LayerwiseModel(config.model.depth, config.model.input_dim,
                                config.model.width, config.model.bottleneck,
                                config.model.classes, np.random.default_rng(0))
        self.model_bytes = ref.view_bytes()
        counts = [ref.view(m).param_count() for m in range(1, config.model.depth + 1)]
        self.multipliers = (dv.depth_multipliers(counts)
                            if config.devices.depth_scaling == "params" else None)

        self.k = max(1, math.ceil(config.run.participation * config.devices.count))
        self.skip = config.model.depth  # action index meaning "sit out"
        self.learner: qx.QmixLearner | None = None
        if config.run.scheduler == "dr-fl":
            obs_dim = 4 + config.model.depth + 1
            self.learner = qx.QmixLearner(
                config.devices.count, obs_dim, config.model.depth + 1,
                config.devices.count * obs_dim, config.marl,
                init_seed=self.streams["learner-init"],
                explore_seed=self.streams["exploration"],
                replay_seed=self.streams["replay"])

        self.l_max = max(p.shard_size for p in self.profiles)
        self.c_max = max(p.compute for p in self.profiles)

        # per-episode mutable state, set by _reset_episode
        self.model: fm.LayerwiseModel | None = None
        self.pending: list[fm.GradientUpdate] = []
        self.executed = np.full(config.devices.count, self.skip, dtype=np.int64)
        self.prev_accuracy: float | None = None
        self.episode_spent = 0.0
        self.baseline_rng = np.random.default_rng(0)

    # -- helpers --------------------------------------------------------------

    def observations(self, round_index: int) -> np.ndarray:
        """Per-device features in [0, 1]: shard, compute, battery, time, last action."""
        cfg = self.config
        n = cfg.devices.count
        obs = np.zeros((n, 4 + cfg.model.depth + 1))
        for i, (p, s) in enumerate(zip(self.profiles, self.states)):
            obs[i, 0] = p.shard_size / self.l_max
            obs[i, 1] = p.compute / self.c_max
            obs[i, 2] = s.e_remain / s.e_init
            obs[i, 3] = round_index / cfg.run.max_rounds
            obs[i, 4 + self.executed[i]] = 1.0
        return obs

    def masks(self) -> np.ndarray:
        return np.stack([
            dv.feasible_actions(p, s, self.config.train.local_epochs,
                                self.model_bytes, self.multipliers)
            for p, s in zip(self.profiles, self.states)])

    def e_all(self) -> float:
        return sum(s.e_remain for s in self.states)

    def _reset_episode(self, episode: int) -> None:
        cfg = self.config
        self.model = fm.LayerwiseModel(
            cfg.model.depth, cfg.model.input_dim, cfg.model.width,
            cfg.model.bottleneck, cfg.model.classes,
            np.random.default_rng(self.streams["model-init"]))
        for s in self.states:
            s.e_remain = s.e_init
            s.t_train_total = 0.0
            s.t_com_total = 0.0
            s.rounds_participated = 0
            s.depleted = False
        self.pending = []
        self.executed = np.full(cfg.devices.count, self.skip, dtype=np.int64)
        self.prev_accuracy = None
        self.episode_spent = 0.0
        self.baseline_rng = np.random.default_rng((self.streams["baseline"], episode))
        if self.learner is not None:
            self.learner.begin_episode()

    def _local_rng(self, episode: int, round_index: int,
                   device_id: int) -> np.random.Generator:
        return np.random.default_rng(
            (self.streams["local-train"], episode, round_index, device_id))

    def _select(self, obs: np.ndarray, masks: np.ndarray,
                explore: bool) -> tuple[np.ndarray, np.ndarray | None, list[int]]:
        """Scheduler dispatch: per-device actions plus the participant set."""
        name = self.config.run.scheduler
        if name == "dr-fl":
            actions, q = self.learner.select_actions(obs, masks, explore=explore)
            chosen_q = q[np.arange(len(actions)), actions]
            participants = qx.topk_select(actions, chosen_q, self.k, self.skip)
            return actions, chosen_q, participants
        if name == "greedy":
            actions = baseline_greedy(masks)
        elif name == "random":
            actions = baseline_random(masks, self.baseline_rng)
        else:
            actions = baseline_static(masks, [p.class_tag for p in self.profiles])
        participants = draw_participants(actions, self.k, self.skip,
                                         self.baseline_rng)
        return actions, None, participants

    def _evaluate_depths(self) -> list[float]:
        return [fm.evaluate(self.model.view(m), self.val_x, self.val_y)
                for m in range(1, self.config.model.depth + 1)]

    # -- the five-step round --------------------------------------------------

    def run_round(self, episode: int, round_index: int,
                  explore: bool) -> RoundReport:
        cfg = self.config

        # (1) information collection
        obs = self.observations(round_index)
        masks = self.masks()
        state_vec = obs.reshape(-1)

        # (2) fold in last round's updates, then measure accuracy
        if self.pending:
            fm.aggregate_layerwise(self.model, self.pending)
            self.pending = []
        depth_acc = self._evaluate_depths()
        accuracy = depth_acc[-1]
        if self.prev_accuracy is None:
            self.prev_accuracy = accuracy

        # (3) dual selection
        actions, chosen_q, participants = self._select(obs, masks, explore)

        # (4) + (5) dispatch, local training, battery charges
        e_before = self.e_all()
        cost = dv.RoundCost()
        selected = set(participants)
        for dev in sorted(selected):
            depth = int(actions[dev]) + 1
            entry = dv.round_cost_entry(self.profiles[dev], depth,
                                        cfg.train.local_epochs,
                                        self.model_bytes, self.multipliers)
            cost.entries.append(entry)
            rows = self.plan.device_indices[dev]
            update = fm.local_train(
                self.model.view(depth), self.dataset.features[rows],
                self.dataset.labels[rows], cfg.train.local_epochs,
                cfg.train.batch_size, cfg.train.lr,
                self._local_rng(episode, round_index, dev), device_id=dev)
            self.pending.append(update)
        for entry in sorted(cost.entries, key=lambda e: e.device_id):
            dv.charge_round(self.states[entry.device_id], entry)
        for p, s in zip(self.profiles, self.states):
            dv.refresh_depleted(p, s, cfg.train.local_epochs, self.model_bytes,
                                self.multipliers)

        e_after = self.e_all()
        reward = qx.compute_reward(accuracy, self.prev_accuracy, e_before,
                                   e_after, cost.t_all, cfg.marl.reward)
        if self.learner is not None:
            self.learner.record_transition(obs, masks, actions, state_vec, reward)
            if self.learner.ready_to_train():
                self.learner.train_step()

        new_executed = np.full(cfg.devices.count, self.skip, dtype=np.int64)
        for dev in selected:
            new_executed[dev] = actions[dev]
        self.executed = new_executed
        self.prev_accuracy = accuracy
        self.episode_spent += cost.total_energy

        by_entry = {e.device_id: e for e in cost.entries}
        depleted_by_class: dict[str, int] = {tag: 0 for tag in dv.CLASS_ORDER}
        for p, s in zip(self.profiles, self.states):
            if s.depleted:
                depleted_by_class[p.class_tag] = depleted_by_class.get(p.class_tag, 0) + 1
        device_rows = []
        for i, (p, s) in enumerate(zip(self.profiles, self.states)):
            entry = by_entry.get(i)
            device_rows.append(DeviceRound(
                device_id=i, action=int(actions[i]),
                q_value=None if chosen_q is None else float(chosen_q[i]),
                selected=i in selected,
                e_spent=entry.total_energy if entry else 0.0,
                t_tra=entry.t_tra if entry else 0.0,
                t_com=entry.t_com if entry else 0.0,
                e_remain=s.e_remain, depleted=s.depleted))
        return RoundReport(
            episode=episode, round_index=round_index, accuracy=accuracy,
            depth_accuracy=depth_acc, devices=device_rows,
            e_all_remaining=e_after, e_spent=e_before - e_after,
            t_all=cost.t_all, reward=reward,
            depleted_by_class=depleted_by_class)

    # -- episodes and the full experiment -------------------------------------

    def run_episode(self, episode: int,
                    on_report=None) -> tuple[list[RoundReport], EpisodeSummary]:
        cfg = self.config
        self._reset_episode(episode)
        explore = not (cfg.run.final_episode_greedy
                       and episode == cfg.run.episodes - 1)
        reports: list[RoundReport] = []
        best_acc, best_round = -1.0, -1
        patience_best, last_improve = -1.0, 0
        stop_reason = "max_rounds"
        depletion_round: dict[str, int | None] = {tag: None for tag in dv.CLASS_ORDER}

        for round_index in range(cfg.run.max_rounds):
            budget = cfg.run.energy_budget
            if budget is not None and self.episode_spent >= budget:
                stop_reason = "energy_budget"
                break
            if all(s.depleted for s in self.states):
                stop_reason = "all_depleted"
                break
            report = self.run_round(episode, round_index, explore)
            reports.append(report)
            if on_report is not None:
                on_report(report)
            if report.accuracy > best_acc + 1e-12:
                best_acc, best_round = report.accuracy, round_index
            if report.accuracy > patience_best + 1e-4:
                patience_best, last_improve = report.accuracy, round_index
            for tag in depletion_round:
                if depletion_round[tag] is None:
                    members = [s for p, s in zip(self.profiles, self.states)
                               if p.class_tag == tag]
                    if members and all(s.depleted for s in members):
                        depletion_round[tag] = round_index
            if (cfg.run.patience is not None
                    and round_index - last_improve >= cfg.run.patience):
                stop_reason = "patience"
                break

        if self.learner is not None:
            self.learner.finish_episode()
        # fold in the final round's still-pending updates before summarizing
        if self.pending:
            fm.aggregate_layerwise(self.model, self.pending)
            self.pending = []
        final_acc = fm.evaluate(self.model.full_view(), self.val_x, self.val_y)
        if final_acc > best_acc:
            best_acc, best_round = final_acc, len(reports)

        per_class_rounds: dict[str, float] = {}
        for tag in dv.CLASS_ORDER:
            members = [s.rounds_participated
                       for p, s in zip(self.profiles, self.states)
                       if p.class_tag == tag]
            per_class_rounds[tag] = float(np.mean(members)) if members else 0.0
        return reports, EpisodeSummary(
            episode=episode, rounds_run=len(reports), best_accuracy=best_acc,
            best_round=best_round, final_accuracy=final_acc,
            final_e_all=self.e_all(), energy_spent=self.episode_spent,
            stop_reason=stop_reason, depletion_round_by_class=depletion_round,
            participation_by_class=per_class_rounds)

    def run(self, on_report=None) -> ExperimentResult:
        """Run every episode; `on_report` (if given) receives each RoundReport
        and EpisodeSummary as soon as it is produced."""
        all_reports: list[RoundReport] = []
        summaries: list[EpisodeSummary] = []
        for episode in range(self.config.run.episodes):
            reports, summary = self.run_episode(episode, on_report=on_report)
            all_reports.extend(reports)
            summaries.append(summary)
            if on_report is not None:
                on_report(summary)
        return ExperimentResult(reports=all_reports, episode_summaries=summaries)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Build an experiment from config and run all its episodes."""
    return Experiment(config).run()
