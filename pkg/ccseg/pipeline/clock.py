import time
from contextlib import contextmanager
from typing import Dict, Iterator

STAGES = ("backbone", "attention", "fpn", "heads", "nms", "assembly")


class StageClock:
    """Accumulates wall time per pipeline stage."""

    def __init__(self):
        self.seconds: Dict[str, float] = {stage: 0.0 for stage in STAGES}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - start

    def merge(self, other: "StageClock") -> None:
        for name, value in other.seconds.items():
            self.seconds[name] = self.seconds.get(name, 0.0) + value


class NullClock(StageClock):
    """Clock that records nothing."""

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        yield
