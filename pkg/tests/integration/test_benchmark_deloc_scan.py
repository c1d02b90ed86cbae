"""Benchmark: delocalization scan of real Gaussian matrices"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from leb.deloc import CalibrationConstants
from leb.deloc.ensembles import DistributionSpec, Kind
from leb.deloc.experiments import DelocalizationReport, eigenvector_deloc_scan


@dataclass(frozen=True)
class Parameters:
    n_list: Tuple[int, ...] = (32, 64, 128)
    trials: int = 20
    t: float = 2.0
    seed: int = 0


def new_scan(threads: int = 1) -> DelocalizationReport:
    return eigenvector_deloc_scan(
        Parameters.n_list,
        DistributionSpec(Kind.GAUSSIAN),
        Parameters.trials,
        Parameters.t,
        Parameters.seed,
        CalibrationConstants("gaussian"),
        threads,
    )


def test_gaussian_deloc_scan(benchmark):
    report = benchmark(new_scan)

    assert len(report.records) == len(Parameters.n_list) * Parameters.trials
    for n in Parameters.n_list:
        statistics = report.statistics(n)
        # A unit vector has sqrt(n) ||v||_inf between 1 and sqrt(n).
        assert np.all(statistics >= 1 - 1e-12)
        assert np.all(statistics <= np.sqrt(n) + 1e-12)


if __name__ == "__main__":
    from pathlib import Path

    from viztracer import VizTracer  # type: ignore

    filename = Path(__file__).stem + "_result.json"

    with VizTracer(max_stack_depth=10, tracer_entries=1000000, output_file=filename) as tracer:
        new_scan()
