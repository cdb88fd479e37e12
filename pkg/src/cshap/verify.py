"""Oracle suites: Shapley axioms, PELT against exhaustive DP, backprop against finite differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .changepoint import CpdParams, grid_edges, penalized_objective, pelt, rbf_kernel, resolve_bandwidth
from .explain import shapley_by_permutations, shapley_from_values
from .model.base import softmax
from .model.convnet import ConvNetConfig, forward, init_params, loss_and_grads
from .signal import N_CONCEPTS


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def optimal_partition(x, p: CpdParams, bandwidth: float | None = None) -> tuple[float, list[int]]:
    """Unpruned O(m^2) optimal-partition DP on the breakpoint grid.

    Segment costs come from an integral image of the explicit N x N Gram
    matrix, independent of the block tables PELT uses.
    """
    x = np.asarray(x, dtype=np.float64)
    bw = resolve_bandwidth(x, p) if bandwidth is None else bandwidth
    edges = grid_edges(len(x), p.subsample)
    integral = np.zeros((len(x) + 1, len(x) + 1))
    integral[1:, 1:] = rbf_kernel(x, x, bw).cumsum(0).cumsum(1)
    m = len(edges) - 1
    f = np.full(m + 1, np.inf)
    f[0] = -p.penalty
    last = np.zeros(m + 1, dtype=int)
    for t in range(1, m + 1):
        for s in range(t):
            a, b = edges[s], edges[t]
            if b - a < p.min_size or not np.isfinite(f[s]):
                continue
            n = b - a
            block = integral[b, b] - integral[a, b] - integral[b, a] + integral[a, a]
            c = 0.0 if n == 1 else n - block / n
            v = f[s] + c + p.penalty
            if v < f[t]:
                f[t], last[t] = v, s
    cps, t = [], m
    while t > 0 and np.isfinite(f[t]):
        s = last[t]
        if s > 0:
            cps.append(int(edges[s]))
        t = s
    return float(f[m]), sorted(cps)


def check_pelt(n_cases: int = 50, seed: int = 0, tol: float = 1e-9, max_grid: int = 200) -> CheckResult:
    """PELT objective against the unpruned DP on signals of at most ``max_grid`` grid blocks."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        sub = int(rng.integers(1, 9))
        m = int(rng.integers(10, max_grid + 1))
        n = sub * m + int(rng.integers(0, sub))
        k = int(rng.integers(1, 5))
        steps = np.repeat(rng.normal(0, 3, size=k), int(np.ceil(n / k)))[:n]
        x = steps + rng.normal(0, 1, size=n)
        p = CpdParams(subsample=sub, penalty=float(rng.uniform(0.5, 20)), min_segment_length=int(rng.integers(1, 4)))
        cps = pelt(x, p)
        best, _ = optimal_partition(x, p)
        got = penalized_objective(x, cps, p) if np.isfinite(best) else np.inf
        gap = abs(got - best) if np.isfinite(best) else 0.0
        worst = max(worst, gap)
    return CheckResult("pelt-vs-exhaustive-dp", worst <= tol, f"max objective gap {worst:.3e} over {n_cases} signals")


def check_shapley(n_cases: int = 20, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    n = N_CONCEPTS
    worst = 0.0
    for _ in range(n_cases):
        v = rng.random((1 << n, 3))
        a, b = shapley_from_values(v), shapley_by_permutations(v)
        worst = max(worst, float(np.max(np.abs(a - b))), float(np.max(np.abs(a.sum(0) - (v[-1] - v[0])))))
    # dummy
    const = shapley_from_values(np.full((1 << n, 3), 0.3))
    worst_dummy = float(np.max(np.abs(const)))
    # linearity: additive game
    w = rng.normal(size=n)
    add = np.array([sum(w[i] for i in range(n) if s >> i & 1) for s in range(1 << n)])
    worst_lin = float(np.max(np.abs(shapley_from_values(add) - w)))
    ok = worst <= tol and worst_dummy <= 1e-12 and worst_lin <= tol
    return CheckResult("shapley-axioms", ok,
                       f"perm/eff gap {worst:.1e}, dummy {worst_dummy:.1e}, linearity {worst_lin:.1e}")


def _loss_and_pattern(params, cfg, x, y):
    logits, (cache, _, _, z1, _) = forward(params, cfg, x, keep_cache=True)
    p = softmax(logits)
    loss = float(-np.mean(np.log(p[np.arange(len(y)), y])))
    pattern = np.concatenate([(z > 0).ravel() for _, z, _ in cache] + [(z1 > 0).ravel()])
    return loss, pattern


def numeric_gradient(params, cfg, x, y, h: float = 1e-3):
    """Central differences, plus a mask of coordinates whose +-h probe flips a ReLU.

    Finite differences across a ReLU kink measure the kink, not the gradient,
    so flagged coordinates are excluded from the comparison.
    """
    _, base = _loss_and_pattern(params, cfg, x, y)
    grads, smooth = {}, {}
    for k, v in params.items():
        g = np.zeros_like(v)
        ok = np.ones(v.shape, dtype=bool)
        flat, gflat, okflat = v.reshape(-1), g.reshape(-1), ok.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, pp = _loss_and_pattern(params, cfg, x, y)
            flat[i] = old - h
            lm, pm = _loss_and_pattern(params, cfg, x, y)
            flat[i] = old
            gflat[i] = (lp - lm) / (2 * h)
            okflat[i] = np.array_equal(pp, base) and np.array_equal(pm, base)
        grads[k], smooth[k] = g, ok
    return grads, smooth


def gradient_relative_error(seed: int, window_size: int = 8, batch: int = 4, h: float = 1e-3) -> tuple[float, float]:
    """Relative error ||analytic - numeric|| / max(norms) on a desk-config net.

    Returns (relative error over kink-free coordinates, fraction of coordinates kept).
    """
    cfg = ConvNetConfig(window_size=window_size, seed=seed)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    for k in params:
        if k.endswith(".b"):
            params[k] = rng.normal(0, 0.1, size=params[k].shape)
    x = rng.normal(size=(batch, cfg.in_channels, window_size))
    y = rng.integers(0, cfg.n_classes, size=batch)
    _, ga = loss_and_grads(params, cfg, x, y)
    gn, smooth = numeric_gradient(params, cfg, x, y, h)
    keep = np.concatenate([smooth[k].ravel() for k in params])
    a = np.concatenate([ga[k].ravel() for k in params])[keep]
    b = np.concatenate([gn[k].ravel() for k in params])[keep]
    err = float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))
    return err, float(keep.mean())


def check_gradients(seeds=range(5), tol: float = 1e-4, min_kept: float = 0.9) -> CheckResult:
    res = [gradient_relative_error(s) for s in seeds]
    ok = all(e < tol and kept >= min_kept for e, kept in res)
    return CheckResult("backprop-vs-finite-differences", ok,
                       "relative errors " + ", ".join(f"{e:.1e} ({kept:.1%} kink-free)" for e, kept in res))


def run_all(seed: int = 0) -> list[CheckResult]:
    return [check_shapley(seed=seed), check_pelt(seed=seed), check_gradients()]
