"""Virtual two-beam nonlinearity experiment.

Each measurement cycle records three integration windows in a fixed order:
beam A alone, beam B alone, then both beams together (AB).  Dark counts are
present in every phase.  A rate level is measured for ``repetitions``
cycles and reduced to a :class:`NonlinearityPoint` (mean nonlinearity and its
standard error).
"""

from dataclasses import dataclass, field, replace
from enum import Enum
import math

import numpy as np

from .errors import ParameterDomainError, SchemaError
from .models import delta_from_rates, inverse_response, response
from .sim import derive_seed, simulate_detected_rate

__all__ = [
    "Phase",
    "MeasurementRecord",
    "NonlinearityPoint",
    "MeasurementPlan",
    "Drift",
    "run_cycle",
    "estimate_point",
    "optimal_allocation",
    "simulate_records",
    "sweep",
    "synthetic_points",
]


class Phase(str, Enum):
    A = "A"
    B = "B"
    AB = "AB"

    def __str__(self):
        return self.value


PHASES = (Phase.A, Phase.B, Phase.AB)


@dataclass(frozen=True)
class MeasurementRecord:
    cycle_index: int
    phase: Phase
    integration_time: float
    counts: int

    def __post_init__(self):
        try:
            object.__setattr__(self, "phase", Phase(self.phase))
        except ValueError:
            raise SchemaError(f"unknown phase {self.phase!r}") from None
        if int(self.cycle_index) < 0:
            raise SchemaError("cycle_index must be non-negative")
        if int(self.counts) < 0:
            raise SchemaError("counts must be non-negative")
        t = float(self.integration_time)
        if not (t > 0 and math.isfinite(t)):
            raise SchemaError("integration_time must be positive")
        object.__setattr__(self, "cycle_index", int(self.cycle_index))
        object.__setattr__(self, "counts", int(self.counts))
        object.__setattr__(self, "integration_time", t)

    @property
    def detected_rate(self):
        return self.counts / self.integration_time


@dataclass(frozen=True)
class NonlinearityPoint:
    """Mean nonlinearity at one illumination level.

    ``delta_sem`` is the standard error of the mean; it is 0 (and
    ``sem_available`` False) for a single repetition.
    """

    detected_rate_ab: float
    delta_mean: float
    delta_sem: float
    repetitions: int

    def __post_init__(self):
        if int(self.repetitions) < 1:
            raise ParameterDomainError("repetitions must be at least 1")
        if not self.delta_sem >= 0:
            raise ParameterDomainError("delta_sem must be non-negative")

    @property
    def sem_available(self):
        return self.repetitions >= 2


@dataclass(frozen=True)
class MeasurementPlan:
    total_time_per_sample: float
    t_a: float
    t_b: float
    t_ab: float
    repetitions: int
    rate_grid: tuple = field(default=())

    def __post_init__(self):
        times = (self.total_time_per_sample, self.t_a, self.t_b, self.t_ab)
        if not all(t > 0 and math.isfinite(t) for t in times):
            raise ParameterDomainError("plan times must be positive and finite")
        if not math.isclose(self.t_a + self.t_b + self.t_ab, self.total_time_per_sample,
                            rel_tol=1e-9):
            raise ParameterDomainError("t_a + t_b + t_ab must equal total_time_per_sample")
        if int(self.repetitions) < 1:
            raise ParameterDomainError("repetitions must be at least 1")
        grid = tuple(float(r) for r in self.rate_grid)
        object.__setattr__(self, "rate_grid", grid)
        object.__setattr__(self, "repetitions", int(self.repetitions))

    @classmethod
    def equal_times(cls, phase_time, repetitions, rate_grid=()):
        """Same integration time for every phase."""
        return cls(3 * phase_time, phase_time, phase_time, phase_time, repetitions, rate_grid)

    @classmethod
    def optimal(cls, total_time, repetitions, rate_grid=(), expected_delta=0.0):
        t_a, t_b, t_ab = optimal_allocation(total_time, expected_delta)
        return cls(total_time, t_a, t_b, t_ab, repetitions, rate_grid)

    def phase_time(self, phase):
        return {Phase.A: self.t_a, Phase.B: self.t_b, Phase.AB: self.t_ab}[Phase(phase)]


@dataclass(frozen=True)
class Drift:
    """Slow multiplicative drift of the source intensity.

    ``kind`` is ``"sine"`` (``1 + amplitude sin(2 pi t / period)``) or
    ``"random_walk"`` (``1 + amplitude W(t / period)`` with ``W`` a unit-step
    Gaussian random walk drawn from ``seed``).
    """

    kind: str = "sine"
    amplitude: float = 0.0
    period: float = 3600.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("sine", "random_walk"):
            raise ParameterDomainError(f"unknown drift kind {self.kind!r}")
        if not self.period > 0:
            raise ParameterDomainError("drift period must be positive")

    def factor(self, t):
        if self.kind == "sine":
            f = 1.0 + self.amplitude * math.sin(2.0 * math.pi * t / self.period)
        else:
            k = int(t // self.period)
            steps = np.random.default_rng(self.seed).standard_normal(k + 1)
            f = 1.0 + self.amplitude * float(np.sum(steps[:k]))
        return max(f, 0.0)


def _check_split(split_fraction):
    if not 0 < split_fraction < 1:
        raise ParameterDomainError(f"split_fraction must lie in (0, 1), got {split_fraction!r}")


def run_cycle(incident_rate_ab, split_fraction, plan, config, cycle_index=0,
              point_index=0, drift=None):
    """Simulate one A, B, AB cycle and return its three records.

    ``config`` is a :class:`~twobeam.sim.SimConfig` template; its incident
    rate and duration are replaced per phase and the phase seeds are derived
    from ``config.seed``, ``point_index`` and ``cycle_index``.
    """
    _check_split(split_fraction)
    if not incident_rate_ab >= 0:
        raise ParameterDomainError("incident_rate_ab must be non-negative")
    rates = {Phase.A: split_fraction * incident_rate_ab,
             Phase.B: (1.0 - split_fraction) * incident_rate_ab,
             Phase.AB: incident_rate_ab}
    clock = cycle_index * plan.total_time_per_sample
    records = []
    for k, phase in enumerate(PHASES):
        t = plan.phase_time(phase)
        rate = rates[phase]
        if drift is not None:
            rate *= drift.factor(clock + 0.5 * t)
        clock += t
        cfg = replace(config, incident_rate=rate, duration=t,
                      seed=derive_seed(config.seed, point_index, cycle_index, k))
        _, counts = simulate_detected_rate(cfg)
        records.append(MeasurementRecord(cycle_index, phase, t, counts))
    return records


def _group_cycles(records):
    cycles = {}
    for rec in records:
        slot = cycles.setdefault(rec.cycle_index, {})
        if rec.phase in slot:
            raise SchemaError(f"cycle {rec.cycle_index} has duplicate phase {rec.phase}")
        slot[rec.phase] = rec
    incomplete = sorted(c for c, slot in cycles.items() if len(slot) != 3)
    if incomplete:
        raise SchemaError(f"incomplete A/B/AB triples for cycles {incomplete}")
    return [cycles[c] for c in sorted(cycles)]


def estimate_point(records):
    """Reduce complete A/B/AB triples to a :class:`NonlinearityPoint`."""
    records = list(records)
    if not records:
        raise SchemaError("no records")
    cycles = _group_cycles(records)
    rate_a = np.array([c[Phase.A].detected_rate for c in cycles])
    rate_b = np.array([c[Phase.B].detected_rate for c in cycles])
    rate_ab = np.array([c[Phase.AB].detected_rate for c in cycles])
    deltas = np.atleast_1d(delta_from_rates(rate_a, rate_b, rate_ab))
    n = deltas.size
    sem = float(np.std(deltas, ddof=1) / math.sqrt(n)) if n >= 2 else 0.0
    return NonlinearityPoint(float(np.mean(rate_ab)), float(np.mean(deltas)), sem, n)


def optimal_allocation(total_time, expected_delta=0.0):
    """Split ``total_time`` over the A, B and AB phases to minimise sigma(Delta).

    Returns ``(t_a, t_b, t_ab)`` with ``t_ab = T / (1 + sqrt(2 / (1 + Delta)))``
    and the rest shared equally by the single-beam phases.
    """
    if not (total_time > 0 and math.isfinite(total_time)):
        raise ParameterDomainError("total_time must be positive")
    if not expected_delta > -1:
        raise ParameterDomainError("expected_delta must be greater than -1")
    t_ab = total_time / (1.0 + math.sqrt(2.0 / (1.0 + expected_delta)))
    t_single = 0.5 * (total_time - t_ab)
    return t_single, t_single, t_ab


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ParameterDomainError("rate_grid is empty")
    if not np.all(np.isfinite(grid)) or np.any(grid <= 0):
        raise ParameterDomainError("rate_grid entries must be positive and finite")
    if np.any(np.diff(grid) < 0):
        raise ParameterDomainError("rate_grid must be sorted")
    return grid


def simulate_records(plan, config, split_fraction=0.5, drift=None):
    """Records for every grid rate; one list of ``3 * repetitions`` per rate.

    Cycle indices restart at 0 for each rate level.
    """
    _check_split(split_fraction)
    grid = _check_grid(plan.rate_grid)
    out = []
    for i, rate in enumerate(grid):
        recs = []
        for c in range(plan.repetitions):
            recs.extend(run_cycle(rate, split_fraction, plan, config, cycle_index=c,
                                  point_index=i, drift=drift))
        out.append(recs)
    return out


def sweep(plan, config, split_fraction=0.5, drift=None):
    """Measure a full nonlinearity curve over ``plan.rate_grid`` (incident rates)."""
    return [estimate_point(recs)
            for recs in simulate_records(plan, config, split_fraction, drift)]


def synthetic_points(model, detected_rates_ab, integration_time, repetitions, rng,
                     split_fraction=0.5):
    """Fast synthetic data set with Poisson-distributed phase counts.

    Phase counts are drawn as Poisson variables around the closed-form
    detected rates of ``model``, skipping the event-level simulation.  Used
    for fit-recovery and chi-square calibration studies.
    """
    _check_split(split_fraction)
    y = _check_grid(detected_rates_ab)
    n = int(repetitions)
    r_ab = np.asarray(inverse_response(model, y))
    means = [np.asarray(response(model, split_fraction * r_ab)),
             np.asarray(response(model, (1.0 - split_fraction) * r_ab)),
             np.asarray(response(model, r_ab))]
    t = float(integration_time)
    counts = [rng.poisson(m[:, None] * t, size=(y.size, n)) for m in means]
    points = []
    for i in range(y.size):
        recs = []
        for c in range(n):
            for phase, cnt in zip(PHASES, counts):
                recs.append(MeasurementRecord(c, phase, t, int(cnt[i, c])))
        points.append(estimate_point(recs))
    return points
