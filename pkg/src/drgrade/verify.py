"""Built-in self-verification suites for the `verify` CLI command.

Each suite checks an implementation against an independent oracle written
here with naive loops (or against a stated property), so a fresh build can
be validated without the test harness. The QWK suite accepts an injectable
weight exponent so its own sensitivity can be demonstrated: anything other
than 2.0 must make the suite fail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grading, imgproc, nnet
from .rng import Xoshiro256StarStar


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


# ---------------------------------------------------------------------------
# oracles (independent, loop-based)


def naive_qwk(truth, pred, k: int, weight_exponent: float = 2.0) -> float:
    n = len(truth)
    observed = [[0.0] * k for _ in range(k)]
    for t, p in zip(truth, pred):
        observed[t][p] += 1.0
    hist_t = [0.0] * k
    hist_p = [0.0] * k
    for t in truth:
        hist_t[t] += 1.0
    for p in pred:
        hist_p[p] += 1.0
    num = 0.0
    den = 0.0
    for i in range(k):
        for j in range(k):
            w = (abs(i - j) ** weight_exponent) / float((k - 1) ** weight_exponent)
            num += w * observed[i][j]
            den += w * hist_t[i] * hist_p[j] / n
    if den == 0.0:
        raise grading.DegenerateAgreementError("degenerate oracle case")
    return 1.0 - num / den


def naive_median_filter(img: np.ndarray, kernel: int) -> np.ndarray:
    h, w = img.shape
    r = kernel // 2
    out = np.empty_like(img)
    for y in range(h):
        for x in range(w):
            window = []
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    window.append(int(img[yy, xx]))
            window.sort()
            out[y, x] = window[len(window) // 2]
    return out


def global_hist_equalize(img: np.ndarray) -> np.ndarray:
    hist = np.bincount(img.ravel(), minlength=256).astype(np.float64)
    cdf = np.cumsum(hist) / img.size
    mapping = np.floor(255.0 * cdf + 0.5).astype(np.uint8)
    return mapping[img]


# ---------------------------------------------------------------------------
# suites


def check_qwk_oracle(n_cases: int = 300, seed: int = 9001,
                     weight_exponent: float = 2.0) -> CheckResult:
    rng = Xoshiro256StarStar(seed)
    worst = 0.0
    done = 0
    while done < n_cases:
        k = 2 + rng.randint_below(5)
        n = 2 + rng.randint_below(199)
        truth = [rng.randint_below(k) for _ in range(n)]
        pred = [rng.randint_below(k) for _ in range(n)]
        try:
            expected = naive_qwk(truth, pred, k, weight_exponent)
        except grading.DegenerateAgreementError:
            continue
        got = grading.qwk(grading.confusion(truth, pred, k)).qwk
        worst = max(worst, abs(got - expected))
        done += 1
    passed = worst <= 1e-12
    return CheckResult("qwk-oracle-equivalence", passed,
                       f"{n_cases} cases, max |diff| = {worst:.2e} (tol 1e-12, "
                       f"oracle exponent {weight_exponent})")


def check_median_oracle(n_images: int = 20, seed: int = 9002) -> CheckResult:
    rng = Xoshiro256StarStar(seed)
    for i in range(n_images):
        h = 4 + rng.randint_below(29)
        w = 4 + rng.randint_below(29)
        img = (rng.u64_array(h * w) % np.uint64(256)).astype(np.uint8).reshape(h, w)
        for kernel in (3, 5):
            got = imgproc.median_filter(img, kernel)
            want = naive_median_filter(img, kernel)
            if not np.array_equal(got, want):
                return CheckResult("median-filter-oracle", False,
                                   f"mismatch on image {i}, kernel {kernel}")
    return CheckResult("median-filter-oracle", True,
                       f"{n_images} images x kernels (3, 5), exact match")


def check_clahe(seed: int = 9003) -> CheckResult:
    rng = Xoshiro256StarStar(seed)
    problems = []
    # constant image stays constant within one level
    const = np.full((40, 40), 77, dtype=np.uint8)
    out = imgproc.clahe(const, tiles=4, clip=2.0)
    if int(out.max()) - int(out.min()) > 1:
        problems.append("constant image spread > 1")
    # tiles=1, clip=inf reduces to global histogram equalization
    img = (rng.u64_array(48 * 40) % np.uint64(256)).astype(np.uint8).reshape(48, 40)
    if not np.array_equal(imgproc.clahe(img, tiles=1, clip=float("inf")),
                          global_hist_equalize(img)):
        problems.append("tiles=1/clip=inf differs from global equalization")
    # every per-tile mapping is monotone non-decreasing
    for _ in range(10):
        rimg = (rng.u64_array(40 * 40) % np.uint64(256)).astype(np.uint8).reshape(40, 40)
        maps = imgproc.clahe_mappings(rimg, tiles=4, clip=2.0)
        if (np.diff(maps, axis=-1) < 0).any():
            problems.append("non-monotone tile mapping")
            break
    # a compressed-range gradient gains contrast (sawtooth with period below
    # the tile size, so every tile sees the whole compressed range)
    grad = np.tile(np.floor(np.linspace(100, 140, 16) + 0.5).astype(np.uint8), (64, 4))
    if float(np.std(imgproc.clahe(grad, tiles=8, clip=2.0))) <= float(np.std(grad)):
        problems.append("no contrast gain on low-contrast gradient")
    if problems:
        return CheckResult("clahe-properties", False, "; ".join(problems))
    return CheckResult("clahe-properties", True,
                       "constant/global-HE/monotonicity/contrast checks hold")


def _loss_of(layer, x, proj, train_rng_seed=None):
    rng = Xoshiro256StarStar(train_rng_seed) if train_rng_seed is not None else None
    out = layer.forward(x, train=train_rng_seed is not None, rng=rng)
    return float((out * proj).sum())


def _fd_check_layer(layer, x: np.ndarray, seed: int, rel_tol: float = 1e-4,
                    train_rng_seed: int | None = None) -> float:
    """Max relative error between analytic and central-difference gradients
    over the layer's parameters and its input."""
    rng = np.random.RandomState(seed)
    out = layer.forward(x, train=train_rng_seed is not None,
                        rng=Xoshiro256StarStar(train_rng_seed) if train_rng_seed is not None else None)
    proj = rng.standard_normal(out.shape)
    dx, grads = layer.backward(proj.copy(), need_dx=True)
    targets = [(x, dx)]
    if grads is not None:
        for p, g in zip(layer.params(), grads):
            targets.append((p, g))
    h = 1e-4
    worst = 0.0
    for arr, analytic in targets:
        flat = arr.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = _loss_of(layer, x, proj, train_rng_seed)
            flat[i] = orig - h
            lm = _loss_of(layer, x, proj, train_rng_seed)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(aflat[i]), 1e-6)
            worst = max(worst, abs(fd - aflat[i]) / denom)
    return worst


def _spread_values(rng: np.random.RandomState, shape) -> np.ndarray:
    """Random values with distinct spacing so max-pool/relu stay away from
    ties and kinks at the finite-difference step size."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n).astype(np.float64) - n / 2.0) * 0.01
    vals += np.where(vals >= 0, 0.005, -0.005)
    rng.shuffle(vals)
    return vals.reshape(shape)


def check_gradients(seed: int = 9004, rel_tol: float = 1e-4) -> CheckResult:
    rng = np.random.RandomState(seed)
    worst = {}
    for trial in range(3):
        x = rng.standard_normal((2, 3, 6, 6))
        conv = nnet.Conv2d(rng.standard_normal((4, 3, 3, 3)) * 0.5,
                           rng.standard_normal(4) * 0.1, stride=1 + trial % 2)
        worst["conv2d"] = max(worst.get("conv2d", 0.0), _fd_check_layer(conv, x, seed + trial))
        xr = _spread_values(rng, (2, 3, 5, 5))
        worst["relu"] = max(worst.get("relu", 0.0), _fd_check_layer(nnet.Relu(), xr, seed + trial))
        xp = _spread_values(rng, (2, 2, 6, 6))
        pool = nnet.MaxPool2d(2, 2)
        worst["maxpool2d"] = max(worst.get("maxpool2d", 0.0), _fd_check_layer(pool, xp, seed + trial))
        xf = rng.standard_normal((2, 3, 4, 4))
        worst["flatten"] = max(worst.get("flatten", 0.0), _fd_check_layer(nnet.Flatten(), xf, seed + trial))
        xd = rng.standard_normal((3, 7))
        dense = nnet.Dense(rng.standard_normal((4, 7)) * 0.5, rng.standard_normal(4) * 0.1)
        worst["dense"] = max(worst.get("dense", 0.0), _fd_check_layer(dense, xd, seed + trial))
        xo = rng.standard_normal((2, 9)) + 3.0
        drop = nnet.Dropout(0.3)
        worst["dropout"] = max(worst.get("dropout", 0.0),
                               _fd_check_layer(drop, xo, seed + trial, train_rng_seed=77 + trial))
    bad = {k: v for k, v in worst.items() if v >= rel_tol}
    detail = ", ".join(f"{k}={v:.1e}" for k, v in sorted(worst.items()))
    if bad:
        return CheckResult("gradient-checks", False, f"rel error too large: {detail}")
    return CheckResult("gradient-checks", True, f"max rel errors: {detail} (tol {rel_tol})")


def run_verification(weight_exponent: float = 2.0, seed: int = 2024) -> list[CheckResult]:
    return [
        check_qwk_oracle(seed=seed, weight_exponent=weight_exponent),
        check_median_oracle(seed=seed + 1),
        check_clahe(seed=seed + 2),
        check_gradients(seed=seed + 3),
    ]
