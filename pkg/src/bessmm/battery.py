"""Battery physics shared by every layer: state-of-charge updates and cycle ageing cost."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market_data import Timeline

_EPS = 1e-9


class InfeasibleActionError(ValueError):
    def __init__(self, bound: str, value: float, limit: float):
        super().__init__(f"{bound} violated: {value:.6g} vs limit {limit:.6g}")
        self.bound = bound
        self.value = value
        self.limit = limit


@dataclass(frozen=True)
class BatterySpec:
    """Asset parameters. Defaults: 10 MW / 10 MWh, 95 % each way, 4 EUR/MWh ageing."""

    p_max: float = 10.0
    e_max: float = 10.0
    eta_c: float = 0.95
    eta_d: float = 0.95
    deg_cost: float = 4.0
    dod_exponent: float = 1.5

    def __post_init__(self):
        if not (self.p_max > 0 and self.e_max > 0):
            raise ValueError("p_max and e_max must be positive")
        if not (0 < self.eta_c <= 1 and 0 < self.eta_d <= 1):
            raise ValueError("efficiencies must lie in (0, 1]")
        if self.deg_cost < 0:
            raise ValueError("deg_cost must be nonnegative")
        if self.dod_exponent < 1:
            raise ValueError("dod_exponent must be >= 1")

    @property
    def eta_rt(self) -> float:
        return self.eta_c * self.eta_d

    def with_power(self, p_max: float) -> "BatterySpec":
        return BatterySpec(p_max, self.e_max, self.eta_c, self.eta_d, self.deg_cost, self.dod_exponent)


def soc_delta(delta, dt: float, spec: BatterySpec):
    """Change in SoC fraction for grid-side power ``delta`` (MW, + = discharge)."""
    delta = np.asarray(delta, dtype=float)
    return np.where(
        delta >= 0,
        -delta * dt / (spec.eta_d * spec.e_max),
        -delta * dt * spec.eta_c / spec.e_max,
    )


def apply_action(soc: float, delta: float, dt: float, spec: BatterySpec,
                 soc_min: float = 0.0, soc_max: float = 1.0) -> float:
    """SoC after holding grid-side power ``delta`` for ``dt`` hours."""
    if abs(delta) > spec.p_max * (1 + _EPS):
        raise InfeasibleActionError("power", abs(delta), spec.p_max)
    if delta >= 0:
        nxt = soc - delta * dt / (spec.eta_d * spec.e_max)
    else:
        nxt = soc - delta * dt * spec.eta_c / spec.e_max
    if nxt < soc_min - _EPS:
        raise InfeasibleActionError("soc_min", nxt, soc_min)
    if nxt > soc_max + _EPS:
        raise InfeasibleActionError("soc_max", nxt, soc_max)
    return float(min(max(nxt, soc_min), soc_max)) if delta else float(soc)


@dataclass(frozen=True, eq=False)
class SocTrajectory:
    """SoC (fraction of ``e_max``) at every slot boundary: ``timeline.length + 1`` values."""

    timeline: Timeline
    soc: np.ndarray

    def __post_init__(self):
        soc = np.array(self.soc, dtype=float)
        if soc.size != self.timeline.length + 1:
            raise ValueError("trajectory needs one value per slot boundary")
        if np.any(soc < -_EPS) or np.any(soc > 1 + _EPS):
            raise ValueError("soc outside [0, 1]")
        soc.setflags(write=False)
        object.__setattr__(self, "soc", soc)

    def check_power(self, spec: BatterySpec) -> bool:
        """True when every step is reachable within ``p_max``."""
        d = np.diff(self.soc) * spec.e_max
        dt = self.timeline.dt_hours
        up = d[d > 0] / spec.eta_c
        down = -d[d < 0] * spec.eta_d
        lim = spec.p_max * dt * (1 + 1e-9)
        return bool(np.all(up <= lim) and np.all(down <= lim))


def turning_points(x) -> np.ndarray:
    """Reversal points of a sequence, endpoints included, plateaus collapsed."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x
    keep = [x[0]]
    direction = 0
    for v in x[1:]:
        if v == keep[-1]:
            continue
        d = 1 if v > keep[-1] else -1
        if d == direction:
            keep[-1] = v
        else:
            keep.append(v)
            direction = d
    return np.array(keep)


def _merge_halves(cycles: list[tuple[float, float]]) -> list[tuple[float, float]]:
    full = [c for c in cycles if c[1] == 1.0]
    halves: dict[float, int] = {}
    for depth, _ in (c for c in cycles if c[1] == 0.5):
        halves[depth] = halves.get(depth, 0) + 1
    for depth, n in halves.items():
        full.extend([(depth, 1.0)] * (n // 2))
        if n % 2:
            full.append((depth, 0.5))
    return full


def rainflow_cycles(traj: SocTrajectory | np.ndarray) -> list[tuple[float, float]]:
    """Four-point rainflow count of an SoC path.

    Returns ``(depth, weight)`` pairs; unclosed residue ranges are half cycles.
    Half cycles of identical depth are reported as one full cycle.
    """
    soc = traj.soc if isinstance(traj, SocTrajectory) else np.asarray(traj, dtype=float)
    if soc.size < 2:
        raise ValueError("trajectory needs at least two points")
    stack: list[float] = []
    cycles: list[tuple[float, float]] = []
    for p in turning_points(soc):
        stack.append(float(p))
        while len(stack) >= 4:
            s1, s2, s3, s4 = stack[-4:]
            inner = abs(s3 - s2)
            if inner <= abs(s2 - s1) and inner <= abs(s4 - s3):
                cycles.append((inner, 1.0))
                del stack[-3:-1]
            else:
                break
    for a, b in zip(stack[:-1], stack[1:]):
        cycles.append((abs(b - a), 0.5))
    return _merge_halves([c for c in cycles if c[0] > 0])


def degradation_cost(cycles, spec: BatterySpec) -> float:
    """EUR: sum of weight * deg_cost * e_max * depth ** dod_exponent."""
    if not cycles:
        return 0.0
    d = np.array([c[0] for c in cycles], dtype=float)
    w = np.array([c[1] for c in cycles], dtype=float)
    return float(np.sum(w * spec.deg_cost * spec.e_max * d ** spec.dod_exponent))


def equivalent_cycles(traj: SocTrajectory) -> float:
    """Stored energy withdrawn per day, in units of full capacity."""
    drops = -np.diff(traj.soc)
    days = traj.timeline.length * traj.timeline.dt_hours / 24.0
    if days <= 0:
        raise ValueError("empty trajectory")
    return float(np.sum(drops[drops > 0]) / days)
