"""Event-level Monte Carlo of a photon-counting detector.

Photon and dark arrivals are homogeneous Poisson processes generated from
exponential inter-arrival times.  A dead-time rule is then applied to the
merged, time-ordered arrivals:

* ``NP``: an arrival registers when at least ``tau`` has passed since the last
  *registered* detection.
* ``P``: an arrival registers when at least ``tau`` has passed since the last
  *arrival* of any kind.

With ``mean_afterpulses > 0`` (NP only) every registered detection spawns a
Poisson number of afterpulse arrivals.  Each afterpulse is released when the
detector recovers, ``tau`` after the parent detection, plus an exponentially
distributed delay with time constant ``afterpulse_delay_tau``.  Afterpulses go
back into the arrival queue and obey the same dead-time rule.  By default an
afterpulse does not spawn further afterpulses (``afterpulse_cascade``).

Long runs never hold the whole arrival stream in memory: arrivals are produced
in chunks and fed through a compiled scanner that carries the detector state
across chunk boundaries.
"""

from dataclasses import dataclass, field, replace
import math

import numba
import numpy as np

from .errors import ParameterDomainError
from .models import DetectorParams, ModelKind, ResponseModel

__all__ = [
    "EventStream",
    "SimConfig",
    "derive_seed",
    "generate_arrivals",
    "apply_detector",
    "simulate_detected_rate",
    "empirical_rate_std",
    "write_event_stream",
]

_CHUNK = 1 << 21
_POOL = 1 << 16
_PENDING_CAPACITY = 4096

# scanner status codes
_DONE, _REFILL, _FULL = 0, 1, 2

ORIGIN_ARRIVAL = 0
ORIGIN_AFTERPULSE = 1


def derive_seed(seed, *keys):
    """Deterministic 64-bit child seed for ``seed`` and integer ``keys``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def _rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream,)))


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ParameterDomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


@dataclass(frozen=True, eq=False)
class EventStream:
    """Ordered event timestamps on ``[0, duration]``.

    ``origin`` and ``afterpulses_spawned`` are filled for detector output:
    the former marks each detection as a photon/dark arrival (0) or an
    afterpulse (1), the latter counts the afterpulses each detection spawned.
    """

    timestamps: np.ndarray
    duration: float
    seed: int
    origin: np.ndarray = None
    afterpulses_spawned: np.ndarray = None

    def __post_init__(self):
        ts = np.ascontiguousarray(self.timestamps, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        if not self.duration > 0 or not math.isfinite(self.duration):
            raise ParameterDomainError("duration must be positive and finite")
        if ts.size:
            if ts[0] < 0 or ts[-1] > self.duration:
                raise ParameterDomainError("timestamps must lie within [0, duration]")
            if np.any(np.diff(ts) <= 0):
                raise ParameterDomainError("timestamps must be strictly increasing")

    def __len__(self):
        return self.timestamps.size

    @property
    def rate(self):
        return self.timestamps.size / self.duration


@dataclass(frozen=True)
class SimConfig:
    incident_rate: float
    params: DetectorParams = field(default_factory=DetectorParams)
    model_kind: ModelKind = ModelKind.NP
    afterpulse_delay_tau: float = 0.0
    duration: float = 1.0
    seed: int = 0
    afterpulse_cascade: bool = False

    def __post_init__(self):
        try:
            kind = ModelKind(self.model_kind)
        except ValueError:
            raise ParameterDomainError(f"unknown model kind {self.model_kind!r}") from None
        if kind not in (ModelKind.NP, ModelKind.P):
            raise ParameterDomainError(f"the simulator supports NP and P detectors, not {kind}")
        object.__setattr__(self, "model_kind", kind)
        object.__setattr__(self, "seed", _check_seed(self.seed))
        for name in ("incident_rate", "afterpulse_delay_tau", "duration"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ParameterDomainError(f"{name} must be finite and non-negative")
            object.__setattr__(self, name, value)
        if not self.duration > 0:
            raise ParameterDomainError("duration must be positive")
        p = self.params
        if p.twilight_alpha != 0:
            raise ParameterDomainError("twilight pulses are not simulated; set twilight_alpha=0")
        if kind is ModelKind.NP:
            if p.dead_time_p != 0:
                raise ParameterDomainError("dead_time_p must be zero for an NP detector")
            if p.mean_afterpulses > 0 and not p.dead_time_np > 0:
                raise ParameterDomainError("afterpulsing requires a positive dead time")
        else:
            if p.dead_time_np != 0 or p.mean_afterpulses != 0:
                raise ParameterDomainError(
                    "a P detector uses only dark_rate and dead_time_p")

    @property
    def dead_time(self):
        if self.model_kind is ModelKind.NP:
            return self.params.dead_time_np
        return self.params.dead_time_p

    def response_model(self):
        """Closed-form model whose rate law this configuration realises."""
        p = self.params
        if self.model_kind is ModelKind.P:
            return ResponseModel.p(p.dark_rate, p.dead_time_p)
        if p.mean_afterpulses > 0:
            return ResponseModel(ModelKind.AP, p)
        return ResponseModel.np(p.dark_rate, p.dead_time_np)


@numba.njit(cache=True, nogil=True)
def _scan(arr, start, horizon_only, is_np, tau, ap_on, cascade, tau_ap, state,
          pend, pend_spawns, npend, counts, ci, delays, di,
          record, out_t, out_o, out_s, nout):
    """Run the dead-time rule over ``arr[start:]``.

    Stops early with ``_REFILL`` when the afterpulse pools run dry and with
    ``_FULL`` when the output buffer is full; no event is half-processed, so
    the caller can top up and call again from the returned index.  With
    ``horizon_only`` the single element of ``arr`` is a time horizon: pending
    afterpulses up to it are processed and nothing else.
    """
    n = arr.shape[0]
    i = start
    while True:
        t_next = arr[i] if i < n else np.inf
        # earliest pending afterpulse
        jmin = -1
        for j in range(npend):
            if jmin < 0 or pend[j] < pend[jmin]:
                jmin = j
        from_pending = jmin >= 0 and pend[jmin] <= t_next
        if not from_pending:
            if i >= n or horizon_only:
                return i, npend, ci, di, nout, _DONE
            t = t_next
            spawns = True
        else:
            t = pend[jmin]
            spawns = pend_spawns[jmin]

        if is_np:
            registered = t - state[0] >= tau
        else:
            registered = t - state[1] >= tau

        k = 0
        if registered:
            if ap_on and spawns:
                if ci >= counts.shape[0]:
                    return i, npend, ci, di, nout, _REFILL
                k = counts[ci]
                if di + k > delays.shape[0]:
                    return i, npend, ci, di, nout, _REFILL
                if npend + k > pend.shape[0]:
                    raise RuntimeError("afterpulse queue overflow")
            if record and nout >= out_t.shape[0]:
                return i, npend, ci, di, nout, _FULL

        # commit
        if from_pending:
            npend -= 1
            pend[jmin] = pend[npend]
            pend_spawns[jmin] = pend_spawns[npend]
        else:
            i += 1
        state[1] = t
        if registered:
            state[0] = t
            if record:
                out_t[nout] = t
                out_o[nout] = 1 if from_pending else 0
                out_s[nout] = k
            nout += 1
            if ap_on and spawns:
                ci += 1
                release = t + tau
                # rounding must not put the recovery instant inside the dead time
                while release - t < tau:
                    release = np.nextafter(release, np.inf)
                for _ in range(k):
                    pend[npend] = release + delays[di] * tau_ap
                    pend_spawns[npend] = cascade
                    npend += 1
                    di += 1


class _Detector:
    """Stateful driver feeding arrival chunks through :func:`_scan`."""

    def __init__(self, config, ap_rng, record):
        self.is_np = config.model_kind is ModelKind.NP
        self.tau = config.dead_time
        self.n_ap = config.params.mean_afterpulses
        self.ap_on = self.n_ap > 0
        self.cascade = bool(config.afterpulse_cascade)
        self.tau_ap = config.afterpulse_delay_tau
        self.ap_rng = ap_rng
        self.state = np.array([-np.inf, -np.inf])
        self.pend = np.empty(_PENDING_CAPACITY)
        self.pend_spawns = np.zeros(_PENDING_CAPACITY, dtype=np.bool_)
        self.npend = 0
        if self.ap_on:
            self.counts = ap_rng.poisson(self.n_ap, _POOL).astype(np.int64)
            self.delays = ap_rng.standard_exponential(_POOL)
        else:
            self.counts = np.zeros(0, dtype=np.int64)
            self.delays = np.zeros(0)
        self.ci = 0
        self.di = 0
        self.record = record
        size = 1024 if record else 0
        self.out_t = np.empty(size)
        self.out_o = np.empty(size, dtype=np.int8)
        self.out_s = np.empty(size, dtype=np.int64)
        self.nout = 0

    def _refill(self):
        self.counts = np.concatenate(
            [self.counts[self.ci:], self.ap_rng.poisson(self.n_ap, _POOL).astype(np.int64)])
        self.delays = np.concatenate(
            [self.delays[self.di:], self.ap_rng.standard_exponential(_POOL)])
        self.ci = 0
        self.di = 0

    def _grow(self):
        size = 2 * self.out_t.size
        self.out_t = np.resize(self.out_t, size)
        self.out_o = np.resize(self.out_o, size)
        self.out_s = np.resize(self.out_s, size)

    def _run(self, arr, horizon_only):
        start = 0
        while True:
            start, self.npend, self.ci, self.di, self.nout, status = _scan(
                arr, start, horizon_only, self.is_np, self.tau, self.ap_on,
                self.cascade, self.tau_ap, self.state, self.pend, self.pend_spawns,
                self.npend, self.counts, self.ci, self.delays, self.di,
                self.record, self.out_t, self.out_o, self.out_s, self.nout)
            if status == _DONE:
                return
            if status == _REFILL:
                self._refill()
            else:
                self._grow()

    def feed(self, arrivals):
        self._run(np.ascontiguousarray(arrivals, dtype=float), False)

    def finish(self, duration):
        self._run(np.array([float(duration)]), True)

    def output(self):
        n = self.nout
        return self.out_t[:n].copy(), self.out_o[:n].copy(), self.out_s[:n].copy()


def _arrival_chunks(rate, duration, rng):
    """Yield sorted arrival-time chunks of a Poisson process on ``[0, duration]``."""
    if rate == 0:
        return
    scale = 1.0 / rate
    offset = 0.0
    while True:
        # expected remaining events plus a wide margin, capped at one chunk
        mean = rate * (duration - offset)
        size = int(min(_CHUNK, mean + 8.0 * math.sqrt(mean) + 64))
        ts = np.cumsum(rng.exponential(scale, size))
        ts += offset
        if ts[-1] > duration:
            yield ts[:np.searchsorted(ts, duration, side="right")]
            return
        offset = ts[-1]
        yield ts


def _strictly_increasing(ts):
    """Nudge floating-point ties forward by one ulp."""
    bad = np.flatnonzero(np.diff(ts) <= 0)
    while bad.size:
        idx = bad + 1
        ts[idx] = np.nextafter(ts[bad], np.inf)
        bad = np.flatnonzero(np.diff(ts) <= 0)
    return ts


def _check_rate_duration(rate, duration):
    rate, duration = float(rate), float(duration)
    if not (math.isfinite(rate) and math.isfinite(duration)):
        raise ParameterDomainError("rate and duration must be finite")
    if rate < 0:
        raise ParameterDomainError("rate must be non-negative")
    if not duration > 0:
        raise ParameterDomainError("duration must be positive")
    return rate, duration


def generate_arrivals(rate, duration, seed):
    """Realise a homogeneous Poisson process with ``rate`` events/s."""
    rate, duration = _check_rate_duration(rate, duration)
    seed = _check_seed(seed)
    chunks = list(_arrival_chunks(rate, duration, _rng(seed, 0)))
    ts = np.concatenate(chunks) if chunks else np.zeros(0)
    ts = _strictly_increasing(ts)
    # nudging can in principle push the last event past the end
    ts = ts[ts <= duration]
    return EventStream(ts, duration, seed)


def apply_detector(arrivals, dark, config):
    """Registered detections for the merged signal and dark arrival streams."""
    if not isinstance(config, SimConfig):
        raise ParameterDomainError("config must be a SimConfig")
    duration = max(arrivals.duration, dark.duration)
    merged = np.concatenate([arrivals.timestamps, dark.timestamps])
    merged.sort(kind="mergesort")
    merged = _strictly_increasing(merged)
    det = _Detector(config, _rng(config.seed, 1), record=True)
    det.feed(merged)
    det.finish(duration)
    t, origin, spawned = det.output()
    keep = t <= duration
    return EventStream(t[keep], duration, config.seed, origin[keep], spawned[keep])


def simulate_detected_rate(config):
    """Simulate one integration window; return ``(detected_rate, count)``.

    Signal and dark arrivals are generated together as a single Poisson
    process of rate ``incident_rate + dark_rate`` (the superposition of two
    independent Poisson processes), streamed chunk by chunk.
    """
    total = config.incident_rate + config.params.dark_rate
    det = _Detector(config, _rng(config.seed, 1), record=False)
    for chunk in _arrival_chunks(total, config.duration, _rng(config.seed, 0)):
        det.feed(chunk)
    det.finish(config.duration)
    return det.nout / config.duration, det.nout


def empirical_rate_std(config, repetitions):
    """Sample standard deviation of the detected rate over independent seeds."""
    repetitions = int(repetitions)
    if repetitions < 2:
        raise ParameterDomainError("repetitions must be at least 2")
    rates = [simulate_detected_rate(replace(config, seed=derive_seed(config.seed, i)))[0]
             for i in range(repetitions)]
    return float(np.std(rates, ddof=1))


def write_event_stream(stream, path, binary=False):
    """Dump timestamps for debugging: text (one float per line) or raw float64."""
    if binary:
        stream.timestamps.astype("<f8").tofile(path)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in stream.timestamps:
            fh.write(repr(float(t)) + "\n")
