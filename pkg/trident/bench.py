"""
Wall-clock latency of per-sample detection, stage by stage. Feature stages
include reading their inputs from disk when a sample still points at its
source frames; the model-forward and fusion stages work on tensors already
in memory.
"""
import contextlib
import dataclasses
import logging
import time
from typing import Dict, Sequence

import numpy as np
from tqdm import tqdm

from luna import Aggregator, memory_mb, single_lane
from trident.errors import TridentError

logger = logging.getLogger(__name__)

MIN_ITERATIONS = 30
MIN_WARMUP = 5
TIMING_NOTE = ('wall-clock latency on one execution lane, monotonic clock; feature stages include '
               'file reads, model forward and fusion stages exclude them; energy is not measured')


class Clock:
    """Collects stage durations in milliseconds, one record per `tick`."""

    def __init__(self):
        self.samples = Aggregator()
        self._current: Dict[str, float] = {}

    @contextlib.contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self._current[name] = self._current.get(name, 0.0) + (time.perf_counter() - start) * 1e3

    def tick(self, total_ms):
        for name, value in self._current.items():
            self.samples.aggregate((name, value))
        self.samples.aggregate(('end_to_end', total_ms))
        self._current = {}

    def discard(self):
        self._current = {}


@dataclasses.dataclass
class StageStats:
    mean_ms: float
    p50_ms: float
    p95_ms: float

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=np.float64)
        return cls(float(values.mean()), float(np.percentile(values, 50)), float(np.percentile(values, 95)))


@dataclasses.dataclass
class LatencyReport:
    system: str
    end_to_end: StageStats
    stages: Dict[str, StageStats]
    iterations: int
    warmup: int
    single_lane: bool
    memory_mb: float
    note: str = TIMING_NOTE

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_text(self):
        lines = [f'# {self.note}', f'[latency {self.system}]',
                 f'iterations: {self.iterations}', f'warmup: {self.warmup}',
                 f'single_lane: {str(self.single_lane).lower()}', f'memory_mb: {self.memory_mb:.1f}']
        for name, stats in [('end_to_end', self.end_to_end)] + sorted(self.stages.items()):
            lines.append(f'{name}: mean {stats.mean_ms:.3f} ms, p50 {stats.p50_ms:.3f} ms, '
                         f'p95 {stats.p95_ms:.3f} ms')
        return '\n'.join(lines) + '\n'


def benchmark_latency(system, samples: Sequence, iterations=MIN_ITERATIONS, warmup=MIN_WARMUP,
                      lane=True) -> LatencyReport:
    """
    Times `system.detect(sample, clock)` one sample at a time, cycling over
    `samples`. Warmup calls are run and discarded.
    """
    if iterations < MIN_ITERATIONS:
        raise TridentError(f'too few iterations: {iterations}, need at least {MIN_ITERATIONS}')
    if warmup < MIN_WARMUP:
        raise TridentError(f'too few warmup iterations: {warmup}, need at least {MIN_WARMUP}')
    if not samples:
        raise TridentError('no samples to benchmark')
    clock = Clock()
    with single_lane(lane):
        for i in range(warmup):
            system.detect(samples[i % len(samples)], clock)
            clock.discard()
        for i in tqdm(range(iterations), desc='benchmark', leave=False):
            start = time.perf_counter()
            system.detect(samples[i % len(samples)], clock)
            clock.tick((time.perf_counter() - start) * 1e3)
    stages = {name: StageStats.of(clock.samples.list(name))
              for name in clock.samples.keys if name != 'end_to_end'}
    report = LatencyReport(system=getattr(system, 'name', type(system).__name__),
                           end_to_end=StageStats.of(clock.samples.list('end_to_end')),
                           stages=stages, iterations=iterations, warmup=warmup,
                           single_lane=bool(lane), memory_mb=memory_mb())
    logger.info('%s: %.3f ms per detection (p95 %.3f ms)', report.system,
                report.end_to_end.mean_ms, report.end_to_end.p95_ms)
    return report
