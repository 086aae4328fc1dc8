import time

import pytest

from trident.bench import MIN_ITERATIONS, benchmark_latency
from trident.errors import TridentError


class SleepySystem:
    name = 'stub:sleep'

    def __init__(self, seconds=0.005):
        self.seconds = seconds

    def detect(self, sample, clock=None):
        with clock.stage('model_forward'):
            time.sleep(self.seconds)
        return sample


def test_constant_cost_stub():
    report = benchmark_latency(SleepySystem(), [0, 1, 2], iterations=40, warmup=5)
    assert 4.5 <= report.end_to_end.mean_ms <= 6.5
    assert report.end_to_end.p50_ms <= report.end_to_end.p95_ms
    assert set(report.stages) == {'model_forward'}
    assert report.stages['model_forward'].mean_ms <= report.end_to_end.mean_ms
    assert report.iterations == 40 and report.warmup == 5
    assert report.single_lane


def test_doubling_iterations_is_stable():
    short = benchmark_latency(SleepySystem(), [0], iterations=30, warmup=5)
    long = benchmark_latency(SleepySystem(), [0], iterations=60, warmup=5)
    assert abs(long.end_to_end.mean_ms - short.end_to_end.mean_ms) < 0.2 * short.end_to_end.mean_ms


def test_report_text():
    report = benchmark_latency(SleepySystem(0.001), [0], iterations=MIN_ITERATIONS, warmup=5, lane=False)
    text = report.to_text()
    assert text.startswith('# wall-clock latency')
    assert '[latency stub:sleep]' in text
    assert 'model_forward: mean' in text
    assert report.to_dict()['end_to_end']['p95_ms'] >= report.to_dict()['end_to_end']['p50_ms']


def test_benchmark_errors():
    with pytest.raises(TridentError, match='too few iterations'):
        benchmark_latency(SleepySystem(), [0], iterations=29)
    with pytest.raises(TridentError, match='too few warmup iterations'):
        benchmark_latency(SleepySystem(), [0], warmup=4)
    with pytest.raises(TridentError, match='no samples'):
        benchmark_latency(SleepySystem(), [])
