import math

import numpy as np
import pytest
from scipy import stats as sps

from twobeam.errors import ParameterDomainError
from twobeam.models import DetectorParams, ModelKind, response
from twobeam.sim import (ORIGIN_AFTERPULSE, ORIGIN_ARRIVAL, EventStream, SimConfig,
                         apply_detector, derive_seed, empirical_rate_std, generate_arrivals,
                         simulate_detected_rate, write_event_stream)


def detect(config):
    arr = generate_arrivals(config.incident_rate, config.duration, derive_seed(config.seed, 0))
    dark = generate_arrivals(config.params.dark_rate, config.duration,
                             derive_seed(config.seed, 1))
    return apply_detector(arr, dark, config)


def test_zero_rate_gives_empty_stream():
    s = generate_arrivals(0.0, 5.0, 1)
    assert len(s) == 0 and s.duration == 5.0
    assert simulate_detected_rate(SimConfig(0.0, duration=2.0)) == (0.0, 0)


def test_invalid_inputs():
    with pytest.raises(ParameterDomainError):
        generate_arrivals(-1.0, 1.0, 0)
    with pytest.raises(ParameterDomainError):
        generate_arrivals(1.0, 0.0, 0)
    with pytest.raises(ParameterDomainError):
        generate_arrivals(1.0, 1.0, -3)
    with pytest.raises(ParameterDomainError):
        SimConfig(1.0, model_kind="NP-P")
    with pytest.raises(ParameterDomainError):
        SimConfig(1.0, DetectorParams(dead_time_np=1e-8, twilight_alpha=1e-9))
    with pytest.raises(ParameterDomainError):
        SimConfig(1.0, DetectorParams(mean_afterpulses=0.1))
    with pytest.raises(ParameterDomainError):
        EventStream(np.array([0.2, 0.1]), 1.0, 0)


def test_counts_concentrate_on_rate():
    # 1e5 /s over 20 s, 100 seeds: count within 3 sqrt(N) of N
    n = 2e6
    misses = sum(abs(len(generate_arrivals(1e5, 20.0, s)) - n) > 3 * math.sqrt(n)
                 for s in range(100))
    assert misses <= 1


def test_interarrivals_are_exponential():
    ts = generate_arrivals(1e4, 1.0, 3).timestamps
    gaps = np.diff(np.concatenate([[0.0], ts]))
    assert sps.kstest(gaps, "expon", args=(0, 1e-4)).pvalue > 0.01


def test_streams_are_ordered_and_in_range():
    s = generate_arrivals(1e6, 0.5, 9)
    assert np.all(np.diff(s.timestamps) > 0)
    assert s.timestamps[0] >= 0 and s.timestamps[-1] <= 0.5


def test_determinism_bit_exact():
    a = generate_arrivals(3e5, 2.0, 42).timestamps
    b = generate_arrivals(3e5, 2.0, 42).timestamps
    assert a.tobytes() == b.tobytes()
    cfg = SimConfig(2e6, DetectorParams(100.0, 50e-9, 0.0, 0.2), afterpulse_delay_tau=1e-7,
                    seed=5)
    assert detect(cfg).timestamps.tobytes() == detect(cfg).timestamps.tobytes()
    assert simulate_detected_rate(cfg) == simulate_detected_rate(cfg)
    other = generate_arrivals(3e5, 2.0, 43).timestamps
    assert other.size != a.size or not np.array_equal(other, a)


@pytest.mark.parametrize("kind", ["NP", "P"])
def test_dead_time_floor(kind):
    tau = 100e-9
    if kind == "NP":
        cfg = SimConfig(5e6, DetectorParams(500.0, tau), duration=0.2, seed=1)
    else:
        cfg = SimConfig(5e6, DetectorParams(500.0, 0.0, tau), model_kind="P",
                        duration=0.2, seed=1)
    out = detect(cfg)
    assert len(out) > 1000
    assert np.min(np.diff(out.timestamps)) >= tau


def test_dead_time_floor_with_afterpulses():
    tau = 60e-9
    cfg = SimConfig(3e6, DetectorParams(50.0, tau, 0.0, 0.5), afterpulse_delay_tau=0.0,
                    duration=0.2, seed=2, afterpulse_cascade=True)
    out = detect(cfg)
    assert np.any(out.origin == ORIGIN_AFTERPULSE)
    assert np.min(np.diff(out.timestamps)) >= tau


def test_p_detector_does_not_register_inside_extended_dead_time():
    tau = 1e-6
    arr = EventStream(np.array([1e-6 * k for k in (1, 1.5, 2.2, 4.0, 4.5)]), 1e-5, 0)
    empty = EventStream(np.zeros(0), 1e-5, 0)
    cfg = SimConfig(0.0, DetectorParams(0.0, 0.0, tau), model_kind="P", duration=1e-5)
    # 1.5 and 2.2 extend the dead period: only 1.0 and 4.0 register
    np.testing.assert_allclose(apply_detector(arr, empty, cfg).timestamps, [1e-6, 4e-6])
    cfg = SimConfig(0.0, DetectorParams(0.0, tau), duration=1e-5)
    np.testing.assert_allclose(apply_detector(arr, empty, cfg).timestamps,
                               [1e-6, 2.2e-6, 4.0e-6])


@pytest.mark.parametrize("kind, incident", [("NP", 1e6), ("NP", 2e7), ("P", 5e6), ("P", 4e7)])
def test_mean_rate_matches_closed_form(kind, incident):
    if kind == "NP":
        cfg = SimConfig(incident, DetectorParams(83.0, 36.7e-9), duration=2.0, seed=11)
    else:
        cfg = SimConfig(incident, DetectorParams(83.0, 0.0, 30e-9), model_kind="P",
                        duration=2.0, seed=11)
    rate, count = simulate_detected_rate(cfg)
    expected = response(cfg.response_model(), incident)
    assert abs(rate - expected) <= 4 * math.sqrt(expected / cfg.duration)
    assert count == round(rate * cfg.duration)


def test_det1_example_rate():
    cfg = SimConfig(1e6, DetectorParams(100.0, 36.7e-9), duration=20.0, seed=12)
    rate, _ = simulate_detected_rate(cfg)
    assert abs(rate - 9.647e5) <= 3 * math.sqrt(9.647e5 / 20.0)


def test_streamed_and_materialized_paths_agree_statistically():
    cfg = SimConfig(1e6, DetectorParams(200.0, 40e-9), duration=1.0, seed=4)
    a = detect(cfg).rate
    b = simulate_detected_rate(cfg)[0]
    assert abs(a - b) <= 5 * math.sqrt(2 * b / cfg.duration)


def test_afterpulse_counts_are_poisson():
    n_ap = 0.4
    cfg = SimConfig(2e5, DetectorParams(0.0, 40e-9, 0.0, n_ap), afterpulse_delay_tau=1e-7,
                    duration=1.0, seed=8, afterpulse_cascade=True)
    spawned = detect(cfg).afterpulses_spawned
    k = np.arange(5)
    observed = np.array([np.sum(spawned == v) for v in k[:-1]] + [np.sum(spawned >= 4)])
    probs = sps.poisson.pmf(k[:-1], n_ap)
    probs = np.append(probs, 1 - probs.sum())
    assert sps.chisquare(observed, probs * spawned.size).pvalue > 0.001


def test_afterpulses_only_spawned_by_arrivals_without_cascade():
    cfg = SimConfig(1e6, DetectorParams(0.0, 40e-9, 0.0, 0.5), duration=0.1, seed=3)
    out = detect(cfg)
    assert np.all(out.afterpulses_spawned[out.origin == ORIGIN_AFTERPULSE] == 0)
    assert np.any(out.afterpulses_spawned[out.origin == ORIGIN_ARRIVAL] > 0)


def test_cascade_realises_afterpulse_model():
    cfg = SimConfig(5e6, DetectorParams(100.0, 50e-9, 0.0, 0.3), duration=1.0, seed=21,
                    afterpulse_cascade=True)
    rate, _ = simulate_detected_rate(cfg)
    expected = response(cfg.response_model(), cfg.incident_rate)
    assert cfg.response_model().kind is ModelKind.AP
    assert abs(rate - expected) <= 4 * math.sqrt(expected / cfg.duration)


def test_small_afterpulse_probability_close_to_model():
    cfg = SimConfig(2e6, DetectorParams(100.0, 36.7e-9, 0.0, 0.001), afterpulse_delay_tau=1e-9,
                    duration=5.0, seed=2)
    rate, _ = simulate_detected_rate(cfg)
    expected = response(cfg.response_model(), cfg.incident_rate)
    assert abs(rate - expected) <= 4 * math.sqrt(expected / cfg.duration)


def test_empirical_std_sub_poissonian():
    tau = 500e-9
    cfg = SimConfig(1.5e6, DetectorParams(0.0, tau), duration=0.02, seed=1)
    std = empirical_rate_std(cfg, 200)
    y = response(cfg.response_model(), cfg.incident_rate)
    assert std < math.sqrt(y / cfg.duration)
    assert std == pytest.approx((1 - tau * y) * math.sqrt(y / cfg.duration), rel=0.2)
    with pytest.raises(ParameterDomainError):
        empirical_rate_std(cfg, 1)


def test_empirical_std_poisson_without_dead_time():
    cfg = SimConfig(2e4, DetectorParams(), duration=0.5, seed=13)
    std = empirical_rate_std(cfg, 1000)
    assert std == pytest.approx(math.sqrt(2e4 / 0.5), rel=0.15)


def test_write_event_stream(tmp_path):
    s = generate_arrivals(1e3, 1.0, 6)
    write_event_stream(s, tmp_path / "ev.txt")
    back = np.array([float(v) for v in (tmp_path / "ev.txt").read_text().split()])
    assert back.tobytes() == s.timestamps.tobytes()
    write_event_stream(s, tmp_path / "ev.bin", binary=True)
    assert np.fromfile(tmp_path / "ev.bin", "<f8").tobytes() == s.timestamps.tobytes()


def test_derive_seed_distinct():
    seeds = {derive_seed(7, i, j) for i in range(20) for j in range(20)}
    assert len(seeds) == 400
    assert derive_seed(7, 1) == derive_seed(7, 1)
