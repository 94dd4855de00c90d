"""Simulation benchmark with covariate and concept shift.

Data generating processes, with theta = (1, 1/2, ..., 1/6) and
eps ~ N(0, 0.25):

    sources:  X ~ N(1_6, I_6)
              Y1 = sin(3 theta'X) + 1 + eps
              Y2 = cos(3 theta'X) + 1 + eps
    target:   X ~ N(0_6, 0.25 I_6)
              Y0 = sin(3 theta'X) / 3 - 3 + eps

Three training regimes are compared on fresh target-law test data:
target_only fits on the n0 target rows, oracle fits on target-law data
of the pooled size n0 + 2 n_k, and augmented fits on the pipeline
output with weighted loss.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, replace

import numpy as np

from .data import DomainDataset, RngStream, _splitmix64
from .learners import (WeightedTrainingSet, cross_validate, default_krr_grid,
                       default_mlp_grid, evaluate_mse, fit_learner)
from .pipeline import PipelineConfig, run_augmentation

THETA = np.array([1.0, 1 / 2, 1 / 3, 1 / 4, 1 / 5, 1 / 6])
REGIMES = ("target_only", "oracle", "augmented")
TEST_SIZE = 2000


def target_regression(x: np.ndarray) -> np.ndarray:
    return np.sin(3.0 * (x @ THETA)) / 3.0 - 3.0


def source_regression(k: int, x: np.ndarray) -> np.ndarray:
    inner = 3.0 * (x @ THETA)
    if k == 1:
        return np.sin(inner) + 1.0
    if k == 2:
        return np.cos(inner) + 1.0
    raise ValueError(f"source index must be 1 or 2, got {k}")


@dataclass(frozen=True)
class SimScenario:
    """Scenario sizes; the data laws themselves are fixed."""

    n0: int
    ratio: float
    noise_sd: float = 0.5
    d: int = 6

    def __post_init__(self):
        if self.n0 < 2:
            raise ValueError("n0 must be at least 2")
        if self.ratio < 1:
            raise ValueError("ratio must be at least 1")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        if self.d != THETA.size:
            raise ValueError(f"d is fixed at {THETA.size}")

    @property
    def n_source(self) -> int:
        return round(self.ratio * self.n0)


def _draw_target_law(gen: np.random.Generator, n: int,
                     noise_sd: float, domain_id: int) -> DomainDataset:
    x = gen.normal(0.0, 0.5, size=(n, THETA.size))
    y = target_regression(x) + gen.normal(0.0, noise_sd, size=n)
    return DomainDataset(x, y, domain_id)


def generate_scenario(scenario: SimScenario, rng: RngStream):
    """Draw (target, [source1, source2], oracle, test) datasets.

    The oracle set follows the target law with the pooled sample size
    n0 + 2 n_source; the test set holds 2000 fresh target-law rows.
    """
    gen = rng.generator()
    n_k = scenario.n_source
    target = _draw_target_law(gen, scenario.n0, scenario.noise_sd, 0)
    sources = []
    for k in (1, 2):
        x = gen.normal(1.0, 1.0, size=(n_k, THETA.size))
        y = source_regression(k, x) + gen.normal(0.0, scenario.noise_sd, size=n_k)
        sources.append(DomainDataset(x, y, k))
    oracle = _draw_target_law(gen, scenario.n0 + 2 * n_k, scenario.noise_sd, 0)
    test = _draw_target_law(gen, TEST_SIZE, scenario.noise_sd, 0)
    return target, sources, oracle, test


@dataclass(frozen=True)
class BenchResult:
    """Per-repetition MSE rows plus failure log.

    rows holds (repetition, learner, regime, n0, ratio, mse) tuples.
    """

    rows: tuple
    failures: tuple

    def summarize(self) -> list[tuple]:
        """(learner, regime, n0, ratio, mean mse, sd mse, repetitions),
        sample standard deviation, grouped in first-seen order."""
        groups: dict = {}
        for rep, learner, regime, n0, ratio, mse in self.rows:
            groups.setdefault((learner, regime, n0, ratio), []).append(mse)
        out = []
        for (learner, regime, n0, ratio), mses in groups.items():
            arr = np.asarray(mses)
            sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            out.append((learner, regime, n0, ratio, float(arr.mean()), sd,
                        int(arr.size)))
        return out

    def save_rows_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["repetition", "learner", "regime", "n0", "ratio", "mse"])
            for rep, learner, regime, n0, ratio, mse in self.rows:
                writer.writerow([rep, learner, regime, n0, repr(float(ratio)),
                                 repr(float(mse))])

    def save_summary_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["learner", "regime", "n0", "ratio", "mean_mse",
                             "sd_mse", "repetitions"])
            for learner, regime, n0, ratio, mean, sd, reps in self.summarize():
                writer.writerow([learner, regime, n0, repr(float(ratio)),
                                 repr(mean), repr(sd), reps])


def _grid_for(learner: str, n: int) -> list[dict]:
    return default_krr_grid(n) if learner == "krr" else default_mlp_grid()


def _krr_grid_from_alphas(alphas: tuple, n: int) -> list[dict]:
    # alphas are effective dual ridges N*penalty, the convention of the
    # default grid
    return [{"penalty": a / n} for a in alphas]


def _static_grid(grid: tuple, n: int) -> list[dict]:
    return [dict(c) for c in grid]


def make_krr_grid(alphas) -> "functools.partial":
    """Grid factory from effective dual ridge values, picklable for
    process pools."""
    return functools.partial(_krr_grid_from_alphas, tuple(float(a) for a in alphas))


def make_static_grid(grid: list[dict]) -> "functools.partial":
    return functools.partial(_static_grid, tuple(grid))


def _fit_and_score(training: WeightedTrainingSet, learner: str,
                   test: DomainDataset, rng: RngStream,
                   grids: dict | None) -> float:
    if grids and learner in grids:
        grid = grids[learner](training.n)
    else:
        grid = _grid_for(learner, training.n)
    report = cross_validate(training, learner, grid, folds=5,
                            rng=rng.substream(0))
    model = fit_learner(training, learner, report.chosen, rng.substream(1))
    return evaluate_mse(model, test)


def run_repetition(scenario: SimScenario, learners: list[str],
                   config: PipelineConfig, rep: int, rng: RngStream,
                   grids: dict | None = None) -> list[tuple]:
    """All (learner, regime) scores for one fresh scenario draw."""
    target, sources, oracle, test = generate_scenario(scenario, rng.substream(0))
    rep_config = replace(config, seed=_splitmix64(_splitmix64(config.seed) + rep))
    augmented, _, _ = run_augmentation(target, sources, rep_config)
    training_sets = {
        "target_only": WeightedTrainingSet(target.features, target.responses,
                                           np.ones(target.n)),
        "oracle": WeightedTrainingSet(oracle.features, oracle.responses,
                                      np.ones(oracle.n)),
        "augmented": augmented.to_weighted_training_set(),
    }
    rows = []
    for li, learner in enumerate(learners):
        for ri, regime in enumerate(REGIMES):
            score_rng = rng.substream(1 + li * len(REGIMES) + ri)
            mse = _fit_and_score(training_sets[regime], learner, test,
                                 score_rng, grids)
            rows.append((rep, learner, regime, scenario.n0, scenario.ratio, mse))
    return rows


def run_benchmark(scenarios: list[SimScenario], learners: list[str],
                  repetitions: int, config: PipelineConfig,
                  rng: RngStream, n_jobs: int = 1,
                  grids: dict | None = None) -> BenchResult:
    """Monte Carlo over repetitions and scenarios.

    A failed repetition is logged and skipped; more than 10% failures
    aborts with the collected messages. Results are deterministic given
    rng and independent of n_jobs.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    if not scenarios or not learners:
        raise ValueError("need at least one scenario and one learner")
    tasks = [(si, scenario, rep)
             for si, scenario in enumerate(scenarios)
             for rep in range(repetitions)]
    max_failures = 0.10 * len(tasks)
    rows: list[tuple] = []
    failures: list[tuple] = []

    def _abort_check():
        if len(failures) > max_failures:
            detail = "; ".join(f"scenario {si} rep {rep}: {msg}"
                               for si, rep, msg in failures)
            raise RuntimeError(
                f"{len(failures)}/{len(tasks)} repetitions failed "
                f"(above the 10% budget): {detail}")

    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [(si, rep, pool.submit(
                run_repetition, scenario, learners, config, rep,
                rng.substream(si * repetitions + rep), grids))
                for si, scenario, rep in tasks]
            for si, rep, future in futures:
                try:
                    rows.extend(future.result())
                except Exception as exc:
                    failures.append((si, rep, str(exc)))
                    _abort_check()
    else:
        for si, scenario, rep in tasks:
            try:
                rows.extend(run_repetition(scenario, learners, config, rep,
                                           rng.substream(si * repetitions + rep),
                                           grids))
            except Exception as exc:
                failures.append((si, rep, str(exc)))
                _abort_check()

    rows.sort(key=lambda r: (r[3], r[4], r[0], r[1], REGIMES.index(r[2])))
    return BenchResult(rows=tuple(rows), failures=tuple(failures))
