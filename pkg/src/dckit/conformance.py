"""Self-checks for the diffusion kernels, reported as ``{name: {pass, max_abs_error}}``."""

from __future__ import annotations

from typing import Callable, Dict, Optional, Tuple

import numpy as np

from dckit import diffusion as dk

CheckFn = Callable[[np.random.Generator, dk.ScheduleTable], Tuple[bool, float]]

#: name -> check; every kernel invariant has exactly one entry
KERNEL_INVARIANTS: Dict[str, CheckFn] = {}


def _check(name: str):
    def register(fn: CheckFn) -> CheckFn:
        KERNEL_INVARIANTS[name] = fn
        return fn

    return register


@_check("schedule_alpha_bar_decreasing")
def _schedule_decreasing(rng, sched):
    steps = np.diff(sched.alpha_bars)
    worst = float(max(steps.max(initial=-np.inf), 0.0)) if steps.size else 0.0
    ok = bool(np.all(steps < 0) and np.all((sched.alpha_bars > 0) & (sched.alpha_bars <= 1)))
    return ok, worst


@_check("schedule_product_consistency")
def _schedule_product(rng, sched):
    err = float(np.max(np.abs(dk.sequential_alpha_bars(sched.betas) - sched.alpha_bars)))
    return err <= 1e-12, err


@_check("noise_predict_roundtrip")
def _noise_roundtrip(rng, sched):
    x0 = rng.normal(size=(3, 4, 4))
    worst = 0.0
    for t in range(1, sched.T + 1):
        eps = rng.normal(size=x0.shape)
        xt = dk.forward_noise(x0, t, eps, sched)
        back = dk.predict_x0(xt, eps, t, sched)
        again = dk.forward_noise(back, t, eps, sched)
        worst = max(worst, float(np.max(np.abs(back - x0))), float(np.max(np.abs(again - xt))))
    return worst <= 1e-9, worst


def _oracle_trajectory(rng, sched):
    x0 = rng.normal(size=(3, 16, 16))
    eps = rng.normal(size=x0.shape)
    steps = min(dk.DDIM_STEPS, sched.T)
    ts = dk.ddim_timesteps(sched.T, steps)
    x_start = dk.forward_noise(x0, ts[0], eps, sched)
    return x0, dk.ddim_sample(x_start, lambda x, t: eps, sched, timesteps=ts)


@_check("ddim_determinism")
def _ddim_determinism(rng, sched):
    state = rng.bit_generator.state
    _, a = _oracle_trajectory(rng, sched)
    rng.bit_generator.state = state
    _, b = _oracle_trajectory(rng, sched)
    same = a.tobytes() == b.tobytes()
    return same, float(np.max(np.abs(a - b)))


@_check("ddim_oracle_roundtrip")
def _ddim_roundtrip(rng, sched):
    x0, out = _oracle_trajectory(rng, sched)
    err = float(np.max(np.abs(out - x0)))
    return err <= 1e-6, err


def _triples(rng, n=100, dim=16):
    for _ in range(n):
        yield rng.normal(size=dim), rng.normal(size=dim), rng.normal(size=dim)


@_check("id_loss_endpoint_naive1")
def _id_loss_t_max(rng, sched):
    T = sched.T
    err = max(abs(dk.id_loss(a, b, c, T, T) - dk.l_naive1(a, c)) for a, b, c in _triples(rng))
    return err <= 1e-12, float(err)


@_check("id_loss_endpoint_naive2")
def _id_loss_t_zero(rng, sched):
    T = sched.T
    err = max(abs(dk.id_loss(a, b, c, 0, T) - dk.l_naive2(b, c)) for a, b, c in _triples(rng))
    return err <= 1e-12, float(err)


def _style_fixture(rng, k=3, c=4, size=9):
    fmap = rng.normal(size=(c, size, size))
    return fmap, dk.StyleExtractorWeights.from_seed(c, k, seed=int(rng.integers(2**31)))


@_check("style_within_patch_permutation")
def _style_permutation(rng, sched):
    k = 3
    fmap, w = _style_fixture(rng, k)
    base = dk.extract_style(fmap, k, w).vectors
    perm = fmap.copy()
    r0, r1 = dk.patch_bounds(fmap.shape[1], k)[1]
    c0, c1 = dk.patch_bounds(fmap.shape[2], k)[2]
    block = perm[:, r0:r1, c0:c1].reshape(fmap.shape[0], -1)
    order = rng.permutation(block.shape[1])
    perm[:, r0:r1, c0:c1] = block[:, order].reshape(fmap.shape[0], r1 - r0, c1 - c0)
    err = float(np.max(np.abs(dk.extract_style(perm, k, w).vectors - base)))
    return err == 0.0, err


@_check("style_cross_patch_swap")
def _style_swap(rng, sched):
    # passes when swapping pixels between two patches changes the output; the error
    # reported is 0 on success, else 1
    k = 3
    fmap, w = _style_fixture(rng, k)
    base = dk.extract_style(fmap, k, w).vectors
    swapped = fmap.copy()
    swapped[:, 0, 0], swapped[:, 8, 8] = fmap[:, 8, 8].copy(), fmap[:, 0, 0].copy()
    changed = float(np.max(np.abs(dk.extract_style(swapped, k, w).vectors - base))) > 0
    return changed, 0.0 if changed else 1.0


@_check("style_output_shape")
def _style_shape(rng, sched):
    c = 4
    fmap = rng.normal(size=(c, 7, 7))
    bad = 0
    for k in (1, 3, 5, 7):
        out = dk.extract_style(fmap, k, dk.StyleExtractorWeights.from_seed(c, k, seed=k))
        bad += out.vectors.shape != (k * k + 1, c)
    return bad == 0, float(bad)


def _attn_fixture(rng, n=3, d=4, m=5):
    ws = [rng.normal(size=(d, d)) for _ in range(3)]
    return rng.normal(size=(n, d)), rng.normal(size=(m, d)), ws


@_check("cross_attention_empty_condition")
def _attn_empty(rng, sched):
    q, _, ws = _attn_fixture(rng)
    cross = dk.cross_attention(q, q, np.empty((0, q.shape[1])), *ws)
    plain = dk.attention(q, q, *ws)
    err = float(np.max(np.abs(cross - plain)))
    return err <= 1e-12, err


@_check("attention_rows_stochastic")
def _attn_rows(rng, sched):
    q, cond, ws = _attn_fixture(rng)
    _, weights = dk.cross_attention(q, q, cond, *ws, return_weights=True)
    err = float(np.max(np.abs(weights.sum(axis=1) - 1.0)))
    return bool(err <= 1e-9 and np.all(weights >= 0)), err


@_check("interp_style_linear")
def _interp_linear(rng, sched):
    k, c = 2, 4
    s1 = dk.StyleVectorSet(k, rng.normal(size=(k * k + 1, c)))
    s2 = dk.StyleVectorSet(k, rng.normal(size=(k * k + 1, c)))
    err = 0.0
    for alpha in np.linspace(0, 1, 11):
        total = dk.interp_style(s1, s2, alpha).vectors + dk.interp_style(s1, s2, 1 - alpha).vectors
        err = max(err, float(np.max(np.abs(total - (s1.vectors + s2.vectors)))))
    return err <= 1e-12, err


def run_kernel_checks(seed: int = 0, schedule: Optional[dk.ScheduleTable] = None) -> Dict[str, dict]:
    """Run every registered check with its own seeded generator.

    A check that raises counts as failed with ``max_abs_error`` null.
    """
    sched = schedule if schedule is not None else dk.make_schedule()
    report = {}
    for i, (name, fn) in enumerate(KERNEL_INVARIANTS.items()):
        rng = np.random.default_rng([seed, i])
        try:
            ok, err = fn(rng, sched)
            report[name] = {"pass": bool(ok), "max_abs_error": float(err)}
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failed check
            report[name] = {"pass": False, "max_abs_error": None, "error": f"{type(exc).__name__}: {exc}"}
    return report


def corrupted_schedule(T: int = 1000) -> dk.ScheduleTable:
    """A table whose alpha-bar rises once; used to exercise the failure path."""
    good = dk.make_schedule(T)
    alpha_bars = good.alpha_bars.copy()
    alpha_bars[T // 2] = alpha_bars[T // 2 - 2]
    return dk.ScheduleTable.unchecked(good.betas, alpha_bars)
