"""
Executable correctness oracles.

Each suite draws random instances, compares an implementation against an
independent reference and returns an OracleResult. The CLI `oracles`
subcommand runs all of them and exits non-zero on any failure.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from core.model import ModelParams, backward, forward_batch, init_params
from memory.bank import MemoryBank
from objectives import (
    BaseObjective,
    BatchContext,
    IMObjective,
    ProCalObjective,
    aad_loss,
    calibrate,
    cross_entropy_batch,
)
from objectives import procal as procal_module
from theory.fixed_point import run_fixed_point_trials

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
FD_FLOOR = 1e-5
FD_TOL = 1e-4
EQUIVALENCE_TOL = 1e-12
SIMPLEX_TOL = 1e-12
STATIONARITY_TOL = 1e-10


@dataclass
class OracleResult:
    """Outcome of one oracle suite."""

    name: str
    trials: int
    passed: bool
    worst: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""


@dataclass
class GradientInstance:
    """A random small model plus everything a loss may read for one batch."""

    params: ModelParams
    inputs: NDArray[np.float64]
    indices: NDArray[np.int64]
    labels: NDArray[np.int64]
    bank: MemoryBank
    backgrounds: List[NDArray[np.int64]]
    gamma: float
    beta: float
    lambda2: float


LossFn = Callable[[NDArray[np.float64], GradientInstance], Tuple[float, NDArray[np.float64]]]


def _objective_case(objective: BaseObjective) -> LossFn:
    def loss_fn(probs: NDArray[np.float64], inst: GradientInstance) -> Tuple[float, NDArray[np.float64]]:
        result = objective.evaluate(probs, BatchContext(inst.indices, inst.bank, inst.gamma, inst.beta))
        return result.loss.total, result.logit_grads

    return loss_fn


def _aad_case(probs: NDArray[np.float64], inst: GradientInstance) -> Tuple[float, NDArray[np.float64]]:
    loss, grads = aad_loss(probs, inst.indices, inst.bank, None, inst.backgrounds, inst.lambda2)
    return loss.total, BaseObjective.finish(loss, probs, grads).logit_grads


def _cross_entropy_case(probs: NDArray[np.float64], inst: GradientInstance) -> Tuple[float, NDArray[np.float64]]:
    return cross_entropy_batch(probs, inst.labels, smoothing=0.1)


def gradient_cases() -> Dict[str, LossFn]:
    return {
        "procal": _objective_case(ProCalObjective()),
        "soft_only": _objective_case(ProCalObjective(include_div=False, name="soft_only")),
        "div_only": _objective_case(ProCalObjective(include_soft=False, name="div_only")),
        "im": _objective_case(IMObjective()),
        "aad": _aad_case,
        "cross_entropy": _cross_entropy_case,
    }


def random_gradient_instance(rng: np.random.Generator) -> GradientInstance:
    """At most 200 parameters, C <= 5 and a batch of at most 8."""
    d = int(rng.integers(2, 5))
    C = int(rng.integers(2, 6))
    hidden = int(rng.integers(3, 7))
    h = int(rng.integers(2, 5))
    params = init_params(d, C, hidden_sizes=(hidden,), feature_dim=h, seed=int(rng.integers(2**31)))
    for layer in params.layers:
        layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)

    N = int(rng.integers(10, 17))
    k = int(rng.integers(1, 4))
    bank = MemoryBank(rng.normal(size=(N, h)), rng.dirichlet(np.ones(C), size=N), k)
    bank.freeze_priors(rng.dirichlet(np.ones(C), size=N))
    n = int(rng.integers(1, 9))
    indices = rng.choice(N, size=n, replace=False).astype(np.int64)
    backgrounds = []
    for i in indices:
        allowed = np.setdiff1d(np.arange(N), np.append(bank.neighbor_lists[i], i))
        backgrounds.append(rng.choice(allowed, size=min(3, allowed.size), replace=False))
    return GradientInstance(
        params=params,
        inputs=rng.normal(size=(n, d)),
        indices=indices,
        labels=rng.integers(0, C, size=n),
        bank=bank,
        backgrounds=backgrounds,
        gamma=float(rng.uniform(0.1, 2.0)),
        beta=float(rng.uniform(0.1, 2.0)),
        lambda2=float(rng.uniform(0.1, 2.0)),
    )


def gradcheck(loss_fn: LossFn, inst: GradientInstance, step: float = FD_STEP) -> float:
    """
    Worst relative error between analytic and central-difference parameter gradients.

    The relative error of each entry is |a - n| / max(|a|, |n|, 1e-5).
    """
    params = inst.params

    def total_loss(p: ModelParams) -> float:
        _, _, probs, _ = forward_batch(p, inst.inputs)
        return loss_fn(probs, inst)[0]

    _, _, probs, cache = forward_batch(params, inst.inputs)
    _, logit_grads = loss_fn(probs, inst)
    analytic = backward(params, inst.inputs, logit_grads, cache)

    perturbed = params.copy()
    worst = 0.0
    for tensor, grad in zip(perturbed.arrays(), analytic.arrays()):
        for idx in np.ndindex(tensor.shape):
            original = tensor[idx]
            tensor[idx] = original + step
            plus = total_loss(perturbed)
            tensor[idx] = original - step
            minus = total_loss(perturbed)
            tensor[idx] = original
            numeric = (plus - minus) / (2.0 * step)
            a = float(grad[idx])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), FD_FLOOR))
    return worst


def run_gradient_suite(trials: int = 20, seed: int = 0, cases: Optional[Dict[str, LossFn]] = None) -> List[OracleResult]:
    """One result per objective; every objective sees the same random instances."""
    cases = cases if cases is not None else gradient_cases()
    results = []
    for name, loss_fn in cases.items():
        rng = np.random.default_rng(seed)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(trials):
            worst = max(worst, gradcheck(loss_fn, random_gradient_instance(rng)))
        results.append(
            OracleResult(f"gradient/{name}", trials, worst <= FD_TOL, worst, FD_TOL, time.perf_counter() - start)
        )
    return results


def run_soft_gradient_equivalence(trials: int = 1000, seed: int = 0) -> OracleResult:
    """
    The composed calibrate + soft_loss gradient against -(q + 2 gamma p) / n
    with q = p_N + gamma * p_s built independently.
    """
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(trials):
        C = int(rng.integers(2, 7))
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, 6))
        gamma = float(rng.uniform(0.0, 5.0))
        p_N = rng.dirichlet(np.ones(C), size=(n, k)).sum(axis=1)
        p = rng.dirichlet(np.ones(C), size=n)
        p_s = rng.dirichlet(np.ones(C), size=n)
        _, grads = procal_module.soft_loss(calibrate(p_N, p, p_s, gamma), p)
        q = p_N + gamma * p_s
        expected = -(q + 2.0 * gamma * p) / n
        worst = max(worst, float(np.max(np.abs(grads - expected))))
    return OracleResult(
        "soft-gradient closed form", trials, worst <= EQUIVALENCE_TOL, worst, EQUIVALENCE_TOL, time.perf_counter() - start
    )


def run_fixed_point_suite(trials: int = 10000, seed: int = 0) -> OracleResult:
    start = time.perf_counter()
    rows = run_fixed_point_trials(trials, seed)
    simplex = max(r["simplex_residual"] for r in rows)
    stationarity = max(r["stationarity_residual"] for r in rows)
    lam = max(r["lambda_residual"] for r in rows)
    passed = simplex <= SIMPLEX_TOL and stationarity <= STATIONARITY_TOL and lam <= SIMPLEX_TOL
    infeasible = sum(1 for r in rows if not r["feasible"])
    return OracleResult(
        "fixed point",
        trials,
        passed,
        stationarity,
        STATIONARITY_TOL,
        time.perf_counter() - start,
        f"simplex {simplex:.1e}, lambda {lam:.1e}, {infeasible} infeasible",
    )


def brute_force_ranking(features: NDArray[np.float64], i: int) -> List[int]:
    """Full scan, one pair at a time: descending similarity, lower index first on ties."""
    scored = []
    for j in range(features.shape[0]):
        if j == i:
            continue
        scored.append((-float(np.sum(features[j] * features[i])), j))
    scored.sort()
    return [j for _, j in scored]


def run_knn_suite(trials: int = 100, seed: int = 0) -> OracleResult:
    """Random banks with N <= 200 and h <= 16; every other bank is drawn on a coarse grid to force ties."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    mismatches = 0
    for trial in range(trials):
        N = int(rng.integers(2, 201))
        h = int(rng.integers(1, 17))
        C = int(rng.integers(2, 6))
        if trial % 2:
            features = rng.integers(1, 3, size=(N, h)).astype(np.float64)
        else:
            features = rng.normal(size=(N, h))
        bank = MemoryBank(features, rng.dirichlet(np.ones(C), size=N), int(rng.integers(1, N)))
        k = int(rng.integers(1, N))
        for i in range(N):
            ranking = brute_force_ranking(bank.features, i)
            if list(bank.neighbor_lists[i]) != ranking[: bank.k]:
                mismatches += 1
            if list(bank.top_k_neighbors(i, k)) != ranking[:k]:
                mismatches += 1
    return OracleResult("k-NN brute force", trials, mismatches == 0, float(mismatches), 0.0, time.perf_counter() - start)


def run_all_oracles(trials: int = 10000, seed: int = 0) -> List[OracleResult]:
    """
    Run every suite.

    `trials` is the fixed-point draw count; the other suites scale with it from
    20 gradient instances, 1000 closed-form checks and 100 banks at 10000.
    """
    scale = max(trials, 1) / 10000

    def scaled(base: int) -> int:
        return max(1, round(base * scale))

    results = run_gradient_suite(scaled(20), seed)
    results.append(run_soft_gradient_equivalence(scaled(1000), seed))
    results.append(run_fixed_point_suite(max(trials, 1), seed))
    results.append(run_knn_suite(scaled(100), seed))
    for r in results:
        log = logger.info if r.passed else logger.error
        log("%s: %s (worst %.3e, tol %.1e, %d trials)", r.name, "pass" if r.passed else "FAIL", r.worst, r.tolerance, r.trials)
    return results
