import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import wraps
from typing import Callable, Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy import stats  # type: ignore

from leb.deloc import TrialFunction, TrialRecord, Validation
from leb.deloc.ensembles import trial_rng

__all__ = [
    "LogProgress",
    "Processor",
    "Summary",
    "TrialRunner",
    "summarize",
    "violation_frequency",
    "wilson_interval",
]

log = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


class Processor(Protocol):
    """A callable invoked with every trial record, in trial order.

    Processors run on the orchestrating thread after a record is available, whatever the number
    of worker threads. Any results should be stored within the Processor instance because the
    Callable does not return a value.

    """

    def __call__(self, runner: "TrialRunner", record: Optional[TrialRecord] = None) -> None:
        """Processes a trial record."""


def process(step: Callable[["TrialRunner", int], TrialRecord]):
    @wraps(step)
    def wrapper(self: "TrialRunner", trial: int) -> TrialRecord:
        record = step(self, trial)
        self.post_process(record)
        return record

    return wrapper


@dataclass
class TrialRunner(Validation):
    """Evaluates a trial function over trials 0, ..., trials - 1.

    Trial t receives the random stream `trial_rng(seed, t)`, so its record depends only on
    (seed, t). With threads > 1 the trials are evaluated on a thread pool; records are still
    returned and post-processed in trial order.

    Attributes
    ----------
    trial_fn: TrialFunction
    trials: int
    seed: int
    threads: int
    post_processors: Optional[Sequence[Processor]]

    """

    trial_fn: TrialFunction
    trials: int
    seed: int = 0
    threads: int = 1
    post_processors: Optional[Sequence[Processor]] = None

    def __post_init__(self):
        if self.post_processors is None:
            self.post_processors = []
        super().__post_init__()

    def validate_trials(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("trials must be greater than zero")
        return int(value)

    def validate_seed(self, value: int, **_) -> int:
        if not 0 <= value < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return int(value)

    def validate_threads(self, value: int, **_) -> int:
        if value < 1:
            raise ValueError("threads must be greater than zero")
        return int(value)

    def evaluate(self, trial: int) -> TrialRecord:
        return self.trial_fn(trial, trial_rng(self.seed, trial))

    @process
    def step(self, trial: int) -> TrialRecord:
        return self.evaluate(trial)

    def post_process(self, record: TrialRecord) -> None:
        assert self.post_processors is not None
        for processor in self.post_processors:
            processor(self, record=record)

    def run(self) -> List[TrialRecord]:
        if self.threads == 1:
            return [self.step(trial) for trial in range(self.trials)]

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            records = list(pool.map(self.evaluate, range(self.trials)))
        for record in records:
            self.post_process(record)
        return records


@dataclass
class LogProgress:
    """Logs a progress line every `every` records."""

    label: str = "trials"
    every: int = 100
    count: int = field(default=0, init=False)
    violations: int = field(default=0, init=False)

    def __call__(self, runner: TrialRunner, record: Optional[TrialRecord] = None) -> None:
        if record is None:
            return
        self.count += 1
        self.violations += int(record.violated)
        if self.count % self.every == 0 or self.count == runner.trials:
            log.info(
                "%s: %d/%d done, %d violation(s)",
                self.label,
                self.count,
                runner.trials,
                self.violations,
            )


@dataclass(frozen=True)
class Summary:
    count: int
    mean: float
    std: float
    minimum: float
    maximum: float
    quantiles: Dict[float, float]

    def quantile(self, q: float) -> float:
        return self.quantiles[q]


def summarize(values: Iterable[float], quantiles: Sequence[float] = DEFAULT_QUANTILES) -> Summary:
    """Summarizes the finite values; the mean is a compensated sum."""
    data = np.asarray([v for v in values if math.isfinite(v)], dtype=float)
    if data.size == 0:
        nan = float("nan")
        return Summary(0, nan, nan, nan, nan, {q: nan for q in quantiles})

    mean = math.fsum(data) / data.size
    std = math.sqrt(math.fsum((data - mean) ** 2) / (data.size - 1)) if data.size > 1 else 0.0
    return Summary(
        int(data.size),
        mean,
        std,
        float(data.min()),
        float(data.max()),
        {q: float(np.quantile(data, q)) for q in quantiles},
    )


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    """The Wilson score interval of a binomial proportion."""
    if trials < 1:
        raise ValueError("trials must be greater than zero")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")

    z = stats.norm.ppf(0.5 + confidence / 2)
    p = successes / trials
    denominator = 1 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denominator
    half_width = z * math.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denominator
    return max(0.0, center - half_width), min(1.0, center + half_width)


def violation_frequency(records: Sequence[TrialRecord]) -> float:
    if not records:
        return 0.0
    return sum(record.violated for record in records) / len(records)
