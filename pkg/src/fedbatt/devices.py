"""Device population, battery accounting, and per-round time/energy costs.

Costs follow a linear model: training time is epochs * shard / compute (scaled
by a per-depth multiplier so shallower sub-models are cheaper), communication
time is payload / bandwidth, and energy is power * time for each phase.
Batteries only ever decrease; the orchestrator masks actions a device cannot
afford, so an overdraw here means a scheduler bug, not a user error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class EnergyLedgerError(RuntimeError):
    """A device was charged more energy than it holds (scheduler invariant)."""


@dataclass
class DeviceProfile:
    """Static per-device capabilities; fixed for the whole run."""

    device_id: int
    class_tag: str  # small | medium | large
    compute: float  # samples per second
    bandwidth: float  # bytes per second
    p_train: float  # watts while training
    p_com: float  # watts while communicating
    p_idle: float = 0.0  # watts while waiting on the round straggler
    shard_size: int = 0

    def __post_init__(self):
        for name in ("compute", "bandwidth", "p_train", "p_com"):
            if getattr(self, name) <= 0:
                raise ValueError(f"device {self.device_id}: {name} must be > 0")
        if self.p_idle < 0:
            raise ValueError(f"device {self.device_id}: p_idle must be >= 0")
        if self.shard_size < 0:
            raise ValueError(f"device {self.device_id}: shard_size must be >= 0")


@dataclass
class DeviceState:
    """Mutable battery and bookkeeping for one device."""

    e_init: float
    e_remain: float
    t_train_total: float = 0.0
    t_com_total: float = 0.0
    rounds_participated: int = 0
    depleted: bool = False


@dataclass
class CostEntry:
    """Time and energy charged to one selected device for one round."""

    device_id: int
    depth: int
    t_tra: float
    t_com: float
    e_tra: float
    e_com: float
    e_idle: float = 0.0

    @property
    def total_time(self) -> float:
        return self.t_tra + self.t_com

    @property
    def total_energy(self) -> float:
        return self.e_tra + self.e_com + self.e_idle


@dataclass
class RoundCost:
    """All charges for one round plus the straggler-bound aggregates."""

    entries: list[CostEntry] = field(default_factory=list)

    @property
    def t_all(self) -> float:
        """Wall-clock length of the round: the slowest device bounds everyone."""
        return max((e.total_time for e in self.entries), default=0.0)

    @property
    def total_energy(self) -> float:
        return sum(e.total_energy for e in self.entries)


# Loosely scaled edge-device classes: large is 4x the compute and 2x the power
# draw of small, medium sits at 2x / 1.5x.
DEFAULT_CLASSES: dict[str, dict[str, float]] = {
    "small": {"compute": 30.0, "bandwidth": 25_000.0, "p_train": 20.0, "p_com": 10.0},
    "medium": {"compute": 60.0, "bandwidth": 50_000.0, "p_train": 30.0, "p_com": 15.0},
    "large": {"compute": 120.0, "bandwidth": 100_000.0, "p_train": 40.0, "p_com": 20.0},
}

CLASS_ORDER = ("small", "medium", "large")


def training_time(profile: DeviceProfile, epochs: int) -> float:
    """Seconds to run ``epochs`` full passes over the local shard."""
    return epochs * profile.shard_size / profile.compute


def comm_time(model_bytes: int, bandwidth: float) -> float:
    """Seconds to upload/download a payload of ``model_bytes``."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    return model_bytes / bandwidth


def depth_multipliers(param_counts: list[int]) -> list[float]:
    """Per-depth compute scale: fraction of the full model's parameters."""
    full = param_counts[-1]
    return [c / full for c in param_counts]


def round_cost_entry(profile: DeviceProfile, depth: int, epochs: int,
                     model_bytes: list[int], multipliers: list[float] | None) -> CostEntry:
    """Cost of one device training the depth-``depth`` sub-model this round."""
    if not 1 <= depth <= len(model_bytes):
        raise ValueError(f"depth {depth} out of range [1, {len(model_bytes)}]")
    scale = 1.0 if multipliers is None else multipliers[depth - 1]
    t_tra = training_time(profile, epochs) * scale
    t_com = comm_time(model_bytes[depth - 1], profile.bandwidth)
    return CostEntry(device_id=profile.device_id, depth=depth,
                     t_tra=t_tra, t_com=t_com,
                     e_tra=profile.p_train * t_tra, e_com=profile.p_com * t_com)


def action_costs(profile: DeviceProfile, epochs: int, model_bytes: list[int],
                 multipliers: list[float] | None) -> list[float]:
    """Energy price of each non-skip action (train depth 1..M)."""
    return [round_cost_entry(profile, m, epochs, model_bytes, multipliers).total_energy
            for m in range(1, len(model_bytes) + 1)]


def feasible_actions(profile: DeviceProfile, state: DeviceState, epochs: int,
                     model_bytes: list[int], multipliers: list[float] | None) -> np.ndarray:
    """Boolean mask over actions 0..M; skip (index M) is always affordable."""
    costs = action_costs(profile, epochs, model_bytes, multipliers)
    mask = np.zeros(len(costs) + 1, dtype=bool)
    for i, c in enumerate(costs):
        mask[i] = state.e_remain >= c
    mask[-1] = True
    return mask


def refresh_depleted(profile: DeviceProfile, state: DeviceState, epochs: int,
                     model_bytes: list[int], multipliers: list[float] | None) -> bool:
    """Depleted means the battery cannot afford even the cheapest training action."""
    cheapest = min(action_costs(profile, epochs, model_bytes, multipliers))
    state.depleted = state.e_remain < cheapest
    return state.depleted


def charge_round(state: DeviceState, entry: CostEntry) -> DeviceState:
    """Subtract one round's cost from the battery and update counters."""
    spend = entry.total_energy
    if spend == 0.0 and entry.t_tra == 0.0 and entry.t_com == 0.0:
        return state
    if spend > state.e_remain + 1e-9:
        raise EnergyLedgerError(
            f"device {entry.device_id}: charge {spend:.6f} J exceeds remaining "
            f"{state.e_remain:.6f} J")
    state.e_remain -= spend
    state.t_train_total += entry.t_tra
    state.t_com_total += entry.t_com
    state.rounds_participated += 1
    return state


def build_population(num_devices: int, battery_joules: float,
                     class_mix: dict[str, float] | None = None,
                     class_params: dict[str, dict[str, float]] | None = None,
                     ) -> tuple[list[DeviceProfile], list[DeviceState]]:
    """Create ``num_devices`` profiles and fresh full batteries.

    Class counts come from ``class_mix`` fractions via largest-remainder
    rounding; devices are assigned to classes in id order, small block first.
    """
    if num_devices < 1:
        raise ValueError("num_devices must be >= 1")
    if battery_joules <= 0:
        raise ValueError("battery_joules must be > 0")
    mix = class_mix or {tag: 1 / 3 for tag in CLASS_ORDER}
    params = class_params or DEFAULT_CLASSES
    for tag in mix:
        if tag not in params:
            raise ValueError(f"unknown device class {tag!r}")
    total = sum(mix.values())
    shares = {tag: mix[tag] / total for tag in mix}
    counts = {tag: int(math.floor(shares[tag] * num_devices)) for tag in mix}
    leftovers = sorted(mix, key=lambda tag: (counts[tag] - shares[tag] * num_devices,
                                             CLASS_ORDER.index(tag)))
    for tag in leftovers[: num_devices - sum(counts.values())]:
        counts[tag] += 1
    profiles: list[DeviceProfile] = []
    device_id = 0
    for tag in CLASS_ORDER:
        for _ in range(counts.get(tag, 0)):
            spec = params[tag]
            profiles.append(DeviceProfile(
                device_id=device_id, class_tag=tag,
                compute=spec["compute"], bandwidth=spec["bandwidth"],
                p_train=spec["p_train"], p_com=spec["p_com"],
                p_idle=spec.get("p_idle", 0.0)))
            device_id += 1
    states = [DeviceState(e_init=battery_joules, e_remain=battery_joules)
              for _ in profiles]
    return profiles, states
