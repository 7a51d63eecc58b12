"""Self-contained numerical verification suites with fixed internal seeds."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .gradcheck import analytic_and_numeric, gradient_check
from .norm import (
    BackpropScheme, BatchNormState, Mode, Permutation, adain, batch_norm, channel_stats, instance_norm,
    padain_swap, sample_permutation, verify_bn_interaction,
)
from .tensor import Tensor, backward, fresh_tape, no_grad


@dataclass
class Check:
    suite: str
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.value < self.tol) and not math.isnan(self.value)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.suite}/{self.name}: {self.value:.3e} (tol {self.tol:.0e})"


def _t(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def grad_suite(seed: int = 0) -> list[Check]:
    """Central differences vs the tape for every op, on float64 tensors."""
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 3, 6, 6))
    w = _t(r.standard_normal((4, 3, 3, 3)))
    b = _t(r.standard_normal(4))
    wt = _t(r.standard_normal((3, 2, 4, 4)))
    lw = _t(r.standard_normal((5, 3 * 36)))
    lb = _t(r.standard_normal(5))
    other = _t(r.standard_normal((2, 3, 6, 6)))
    pc = _t(r.uniform(0.5, 2.0, (2, 3, 1, 1)))
    labels = np.array([1, 3])
    bn = BatchNormState.create(3, dtype=np.float64)
    bn.gamma.data[...] = r.uniform(0.5, 1.5, 3)
    bn.beta.data[...] = r.standard_normal(3)
    bn_eval = BatchNormState.create(3, dtype=np.float64)
    bn_eval.running_mean[...] = r.standard_normal(3)
    bn_eval.running_var[...] = r.uniform(0.5, 2, 3)
    perm = Permutation([1, 0])
    cw = _t(r.standard_normal((4, 3, 3, 3)))
    cl = _t(r.standard_normal((5, 4 * 9)))

    def chain(t):
        h = ops.relu(ops.conv2d(t, cw, None, stride=2, padding=1))
        return ops.linear(ops.flatten(h), cl)

    x5 = r.standard_normal((2, 2, 5, 5))
    cw2 = _t(r.standard_normal((3, 2, 3, 3)))
    cl2 = _t(r.standard_normal((4, 3 * 9)))

    def chain5(t):
        return ops.linear(ops.flatten(ops.relu(ops.conv2d(t, cw2, None))), cl2)

    cases: list[tuple[str, Callable, np.ndarray]] = [
        ("add", lambda t: ops.add(t, other), x),
        ("sub_per_channel", lambda t: ops.sub(t, pc), x),
        ("mul", lambda t: ops.mul(t, other), x),
        ("div_per_channel", lambda t: ops.div(t, pc), x),
        ("square", ops.square, x),
        ("sqrt", ops.sqrt, np.abs(x) + 0.5),
        ("relu", ops.relu, x),
        ("sigmoid", ops.sigmoid, x),
        ("sum", ops.sum, x),
        ("mean", ops.mean, x),
        ("spatial_mean", ops.spatial_mean, x),
        ("take", lambda t: ops.take(t, [1, 1, 0]), x),
        ("conv2d", lambda t: ops.conv2d(t, w, b, stride=2, padding=1), x),
        ("conv_transpose2d", lambda t: ops.conv_transpose2d(t, wt, None, stride=2, padding=1), x),
        ("max_pool2d", lambda t: ops.max_pool2d(t, 2), x),
        ("avg_pool2d", lambda t: ops.avg_pool2d(t, 3, 1), x),
        ("linear", lambda t: ops.linear(ops.flatten(t), lw, lb), x),
        ("softmax_cross_entropy", lambda t: ops.softmax_cross_entropy(t, labels), r.standard_normal((2, 5))),
        ("mse_loss", lambda t: ops.mse_loss(t, other), x),
        ("batch_norm_train", lambda t: batch_norm(t, bn, Mode.TRAIN), x),
        ("batch_norm_eval", lambda t: batch_norm(t, bn_eval, Mode.EVAL), x),
        ("instance_norm", lambda t: instance_norm(t, 2.0, 3.0, 1e-5), x),
        ("adain", lambda t: adain(t, other, 1e-5), x),
        ("conv_relu_linear", chain5, x5),
        ("conv_relu_linear_strided", chain, x),
    ]
    for scheme in BackpropScheme:
        cases.append((f"padain_{scheme.value}", lambda t, s=scheme: padain_swap(t, perm, 1e-5, s), x))
    return [Check("grad", name, gradient_check(f, inp, eps=1e-5), 1e-6) for name, f, inp in cases]


def stats_suite(trials: int = 100, seed: int = 1) -> list[Check]:
    r = np.random.default_rng(seed)
    mu_err = sig_err = sig_eps_err = 0.0
    for _ in range(trials):
        x = Tensor((r.standard_normal((4, 3, 5, 5)) * r.uniform(0.5, 2, (4, 3, 1, 1))
                    + r.standard_normal((4, 3, 1, 1))).astype(np.float32))
        perm = sample_permutation(4, r)
        with no_grad():
            # eps = 0: the swap is exact, so compare against the donor directly
            out = padain_swap(x, perm, eps=0.0)
            mo, so = channel_stats(out, 0.0).arrays()
            mx, sx = channel_stats(x, 0.0).arrays()
            mu_err = max(mu_err, float(np.abs(mo - mx[perm.map]).max()))
            sig_err = max(sig_err, float(np.abs(so - sx[perm.map]).max()))
            # eps > 0: the output's std is sqrt(s_d^2 v/(v+eps) + eps); remove that known shift
            eps = 1e-5
            out = padain_swap(x, perm, eps=eps)
            _, so = channel_stats(out, eps).arrays()
            sx64 = np.sqrt(x.data.astype(np.float64).var(axis=(2, 3)) + eps)
            v_own = sx64 ** 2 - eps
            expected = np.sqrt(sx64[perm.map] ** 2 * v_own / (v_own + eps) + eps)
            sig_eps_err = max(sig_eps_err, float(np.abs(so - expected).max()))

    # own-stats normalization gives mu 0, sigma 1
    x = Tensor(r.standard_normal((3, 4, 5, 5)).astype(np.float32))
    with no_grad():
        mo, so = channel_stats(instance_norm(x, 1.0, 0.0, 1e-5), 1e-5).arrays()

    # AdaIN(a, a) = a: exact at eps = 0 and, via the s/s = 1 form, also at eps > 0
    a = Tensor(r.standard_normal((2, 3, 4, 4)).astype(np.float32))
    with no_grad():
        self0 = float(np.abs(adain(a, a, 0.0).data - a.data).max())
        self1 = float(np.abs(adain(a, a, 1e-5).data - a.data).max())
    return [
        Check("stats", "swap_mean_vs_donor", mu_err, 1e-5),
        Check("stats", "swap_std_vs_donor_eps0", sig_err, 1e-5),
        Check("stats", "swap_std_vs_donor_eps1e-5", sig_eps_err, 1e-5),
        Check("stats", "instance_norm_mu", float(np.abs(mo).max()), 1e-4),
        Check("stats", "instance_norm_sigma", float(np.abs(so - 1).max()), 1e-4),
        Check("stats", "adain_self_eps0", self0, 1e-12),
        Check("stats", "adain_self_eps1e-5", self1, 1e-12),
    ]


def stop_gradient_suite(seed: int = 2) -> list[Check]:
    """d out_i / d x_pi(i) must vanish under the default scheme, numerically and on the tape."""
    r = np.random.default_rng(seed)
    x = r.standard_normal((4, 3, 5, 5))
    perm = Permutation([1, 2, 3, 0])

    def f(t):
        return ops.take(padain_swap(t, perm, 1e-5), [0])

    analytic, numeric = analytic_and_numeric(f, x, eps=1e-5)
    donor = perm.map[0]
    others = [j for j in range(4) if j != 0]
    with fresh_tape():
        xt = Tensor(x.copy(), requires_grad=True)
        backward(ops.sum(ops.take(padain_swap(xt, perm, 1e-5), [0])))
        tape_block = float(np.abs(xt.grad[others]).max())
    return [
        Check("stats", "stopgrad_numeric_donor", float(np.abs(numeric[donor]).max()), 1e-6),
        Check("stats", "stopgrad_tape_offdiagonal", tape_block, 1e-300),
        Check("stats", "stopgrad_own_path_relerr",
              gradient_check(f, x, eps=1e-5), 1e-6),
    ]


def bn_suite(trials: int = 100, seed: int = 3) -> list[Check]:
    r = np.random.default_rng(seed)
    mu_res = sig_res = 0.0
    for _ in range(trials):
        x = (r.standard_normal((4, 3, 6, 6)) * r.uniform(0.5, 2, (4, 3, 1, 1))
             + r.standard_normal((4, 3, 1, 1))).astype(np.float32)
        perm = sample_permutation(4, r)
        res = verify_bn_interaction(x, perm, r.uniform(0.5, 1.5, 3), r.standard_normal(3))
        mu_res = max(mu_res, res["mu_residual"])
        sig_res = max(sig_res, res["sigma_residual"])
    x = r.standard_normal((4, 3, 6, 6)).astype(np.float32)
    ident = verify_bn_interaction(x, Permutation.identity(4), np.ones(3), np.zeros(3))
    same = np.repeat(r.standard_normal((1, 3, 6, 6)), 4, axis=0).astype(np.float32)
    deg = verify_bn_interaction(same, sample_permutation(4, r), np.ones(3), np.zeros(3))
    return [
        Check("bn-interaction", "mean_residual_100_trials", mu_res, 1e-4),
        Check("bn-interaction", "std_residual_100_trials", sig_res, 1e-4),
        Check("bn-interaction", "identity_perm", max(ident.values()), 1e-4),
        Check("bn-interaction", "identical_samples", max(deg.values()), 1e-4),
    ]


def perm_suite(seed: int = 4) -> list[Check]:
    """Each of the n! permutations appears with frequency 1/n! within 3 sigma."""
    from itertools import permutations

    r = np.random.default_rng(seed)
    out = []
    for n in (2, 3, 4):
        perms = {p: i for i, p in enumerate(permutations(range(n)))}
        k = len(perms)
        draws = 10_000 * k
        counts = np.zeros(k)
        for _ in range(draws):
            counts[perms[tuple(sample_permutation(n, r).map.tolist())]] += 1
        pr = 1 / k
        sigma = math.sqrt(draws * pr * (1 - pr))
        z = float(np.abs(counts - draws * pr).max() / sigma)
        out.append(Check("perm", f"uniform_n{n}_max_z", z, 3.0))
    return out


SUITES = {
    "grad": grad_suite,
    "stats": lambda: stats_suite() + stop_gradient_suite(),
    "bn-interaction": bn_suite,
    "perm": perm_suite,
}


def run(suite: str = "all") -> list[Check]:
    names = list(SUITES) if suite == "all" else [suite]
    checks = []
    for name in names:
        checks += SUITES[name]()
    return checks
