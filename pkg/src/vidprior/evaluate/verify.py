"""Named verification suites for the numerical core.

Each suite returns a list of :class:`Check` results holding the measured
value next to the tolerance it was held to. ``run_suites`` renders them as
a plain-text report.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from decimal import Decimal, getcontext
from typing import Callable

import numpy as np

from .. import tensor as tt
from ..net import INJECTION_MODES, UNet3D, UNetConfig, spade_inject
from ..net.layers import Conv2d, initialize
from ..prior import AppearancePrior, make_rng, make_training_noise, q_sample, shift_noise
from ..sampler import GaussianOracle, SamplerConfig, sample
from ..schedule import linear_schedule
from ..tensor.gradcheck import check_gradients


@dataclass
class Check:
    suite: str
    name: str
    measured: float
    tolerance: float
    passed: bool
    relation: str = "<="

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.suite}.{self.name}: measured={self.measured:.6g} {self.relation} {self.tolerance:.6g}"


def _check(suite, name, measured, tol, relation="<=") -> Check:
    measured = float(measured)
    ok = measured <= tol if relation == "<=" else measured < tol
    return Check(suite, name, measured, float(tol), bool(ok), relation)


# ---------------------------------------------------------------------------
# gradients

GRAD_TOL = 1e-4


def _shapes(rng, n, ndim, lo=1, hi=4):
    return [tuple(int(s) for s in rng.integers(lo, hi + 1, ndim)) for _ in range(n)]


def _rand(rng, shape, scale=1.0):
    return tt.Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _weighted(out: tt.Tensor, rng) -> tt.Tensor:
    """Scalar loss with a fixed random weighting so every output element matters."""
    w = tt.Tensor(rng.standard_normal(out.shape), dtype=np.float64)
    return tt.sum_all(tt.mul(out, w))


def primitive_cases(rng, per_op: int = 10) -> dict:
    """op name -> list of (fn, inputs) pairs on random shapes."""
    cases = {}

    def add_case(name, fn, inputs):
        cases.setdefault(name, []).append((fn, inputs))

    for shape in _shapes(rng, per_op, 3):
        w1 = tt.Tensor(rng.standard_normal(shape), dtype=np.float64)
        add_case("add", lambda a, b, w=w1: tt.sum_all(tt.mul(tt.add(a, b), w)), [_rand(rng, shape), _rand(rng, shape)])
        add_case("sub", lambda a, b, w=w1: tt.sum_all(tt.mul(tt.sub(a, b), w)), [_rand(rng, shape), _rand(rng, shape)])
        bshape = (1,) + shape[1:]
        add_case("mul", lambda a, b, w=w1: tt.sum_all(tt.mul(tt.mul(a, b), w)), [_rand(rng, shape), _rand(rng, bshape)])
        c = float(rng.normal())
        add_case("scalar_mul", lambda a, w=w1, c=c: tt.sum_all(tt.mul(tt.scalar_mul(a, c), w)), [_rand(rng, shape)])
        add_case("silu", lambda a, w=w1: tt.sum_all(tt.mul(tt.silu(a), w)), [_rand(rng, shape)])
        perm = tuple(int(i) for i in rng.permutation(3))
        wp = tt.Tensor(rng.standard_normal(tuple(shape[i] for i in perm)), dtype=np.float64)
        add_case("permute", lambda a, w=wp, p=perm: tt.sum_all(tt.mul(tt.permute(a, p), w)), [_rand(rng, shape)])
        wr = tt.Tensor(rng.standard_normal((int(np.prod(shape)),)), dtype=np.float64)
        add_case("reshape", lambda a, w=wr: tt.sum_all(tt.mul(tt.reshape(a, (-1,)), w)), [_rand(rng, shape)])
        axis = int(rng.integers(0, 3))
        wm = tt.Tensor(rng.standard_normal(tuple(s for i, s in enumerate(shape) if i != axis)), dtype=np.float64)
        add_case("mean", lambda a, w=wm, ax=axis: tt.sum_all(tt.mul(tt.mean(a, axis=ax), w)), [_rand(rng, shape)])
        add_case("softmax", lambda a, w=w1: tt.sum_all(tt.mul(tt.softmax(a, axis=-1), w)), [_rand(rng, shape)])
        add_case("mse", lambda a, b: tt.mse(a, b), [_rand(rng, shape), _rand(rng, shape)])
        add_case("sum", lambda a: tt.sum_all(tt.mul(a, a)), [_rand(rng, shape)])
        fin, fout = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        add_case("linear", lambda x, w, b: _weighted_fixed(tt.linear(x, w, b)),
                 [_rand(rng, shape[:2] + (fin,)), _rand(rng, (fout, fin)), _rand(rng, (fout,))])
    for i in range(per_op):
        B, C, H, W = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(3, 6)), int(rng.integers(3, 6))
        O, k = int(rng.integers(1, 4)), int(rng.choice([1, 3]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        add_case("conv2d", lambda x, w, b, s=stride, p=pad: _weighted_fixed(tt.conv2d(x, w, b, s, p)),
                 [_rand(rng, (B, C, H, W)), _rand(rng, (O, C, k, k)), _rand(rng, (O,))])
        N = int(rng.integers(3, 6))
        kt = int(rng.choice([1, 3] if N < 5 else [1, 3, 5]))
        add_case("conv1d_temporal", lambda x, w, b: _weighted_fixed(tt.conv1d_temporal(x, w, b)),
                 [_rand(rng, (B, C, N, 2, 2)), _rand(rng, (O, C, kt)), _rand(rng, (O,))])
        g = int(rng.choice([1, 2]))
        Cg = g * int(rng.integers(1, 3))
        add_case("group_norm", lambda x, w, b, g=g: _weighted_fixed(tt.group_norm(x, g, w, b)),
                 [_rand(rng, (B, Cg, 3, 3)), _rand(rng, (Cg,)), _rand(rng, (Cg,))])
        L, d = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        add_case("attention", lambda q, k_, v: _weighted_fixed(tt.attention(q, k_, v)),
                 [_rand(rng, (B, 2, L, d)), _rand(rng, (B, 2, L, d)), _rand(rng, (B, 2, L, d))])
        add_case("concat", lambda a, b: _weighted_fixed(tt.concat([a, b], axis=2)),
                 [_rand(rng, (B, C, 2, 3)), _rand(rng, (B, C, 1, 3))])
        add_case("concat_channels", lambda a, b: _weighted_fixed(tt.concat_channels([a, b])),
                 [_rand(rng, (B, C, 2, 2)), _rand(rng, (B, O, 2, 2))])
        V, E = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        ids = rng.integers(0, V, size=int(rng.integers(1, 6)))
        add_case("embedding_lookup", lambda t, ids=ids: _weighted_fixed(tt.embedding_lookup(t, ids)),
                 [_rand(rng, (V, E))])
        add_case("nearest_downsample", lambda x: _weighted_fixed(tt.nearest_downsample(x, 2)),
                 [_rand(rng, (B, C, 2 * int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3))))])
        add_case("nearest_upsample", lambda x: _weighted_fixed(tt.nearest_upsample(x, 2)),
                 [_rand(rng, (B, C, H, W))])
    return cases


_WEIGHTS = {}


def _weighted_fixed(out: tt.Tensor) -> tt.Tensor:
    """Weighted sum with weights fixed per output shape (stable across calls)."""
    key = out.shape
    if key not in _WEIGHTS:
        _WEIGHTS[key] = np.cos(np.arange(int(np.prod(key)) or 1, dtype=np.float64) * 0.7 + 0.3)[: int(np.prod(key))]
    w = tt.Tensor(_WEIGHTS[key].reshape(key), dtype=np.float64)
    return tt.sum_all(tt.mul(out, w))


def composite_case(rng):
    """conv -> group norm -> attention -> sum."""
    x = _rand(rng, (1, 2, 4, 4))
    w = _rand(rng, (4, 2, 3, 3), 0.5)
    b = _rand(rng, (4,), 0.1)

    def fn(x, w, b):
        h = tt.group_norm(tt.conv2d(x, w, b, 1, 1), 2)
        tok = tt.permute(tt.reshape(h, (1, 1, 4, 16)), (0, 1, 3, 2))  # [B, heads, L=16, d=4]
        return _weighted_fixed(tt.attention(tok, tok, tok))

    return fn, [x, w, b]


def tiny_unet_case(rng, mode: str = "add-encdec-spade"):
    """Full network forward on a tiny clip with every zero-initialized layer
    perturbed, so all paths carry gradient; checked on a parameter subset."""
    with tt.default_dtype("f64"):
        net = UNet3D(UNetConfig(in_channels=1, base_channels=4, channel_multipliers=(1, 2), attention_levels=(1,),
                                head_channels=4, num_frames=3, cond_vocab_size=2, cond_embed_dim=4,
                                injection_mode=mode, groups=2))
    for _, p in net.named_parameters():
        p.data = p.data + 0.2 * rng.standard_normal(p.shape)
    z = rng.standard_normal((1, 3, 1, 4, 4))
    zc = rng.standard_normal((1, 1, 4, 4))
    params = dict(net.named_parameters())
    keys = ("cond_table", "time_mlp1.weight", "encoder.conv_in.spatial.weight",
            "encoder.blocks.0.conv1.temporal.weight", "encoder.blocks.0.norm1.gamma_conv.bias", "dec_blocks.1.norm1.beta_conv.bias",
            "appearnet.blocks.0.conv1.spatial.bias", "dec_attns.0.temporal.attn.q.weight", "conv_out.temporal.weight")
    picked = [next(n for n in params if k in n) for k in keys]
    inputs = [params[n] for n in picked]

    def fn(*ps):
        return _weighted_fixed(net(z, [37.0], zc, [1]))

    return fn, inputs


def suite_gradients(seed: int = 0, per_op: int = 10) -> list:
    rng = make_rng(seed)
    checks = []
    with tt.default_dtype("f64"):
        for name, cases in primitive_cases(rng, per_op).items():
            worst = max(check_gradients(fn, inputs) for fn, inputs in cases)
            checks.append(_check("gradients", f"{name}[{len(cases)} shapes]", worst, GRAD_TOL, "<"))
        fn, inputs = composite_case(rng)
        checks.append(_check("gradients", "conv-groupnorm-attention", check_gradients(fn, inputs), GRAD_TOL, "<"))
        fn, inputs = tiny_unet_case(rng)
        checks.append(_check("gradients", "unet-forward", check_gradients(fn, inputs), GRAD_TOL, "<"))
    return checks


# ---------------------------------------------------------------------------
# moments


def suite_moments(seed: int = 0, draws: int = 100_000, steps=(1, 250, 500, 1000), lams=(0.0, 0.03, 0.1)) -> list:
    """Monte Carlo mean and variance of q_sample under the prior.

    Per configuration the element-averaged mean error is held to 3 standard
    errors and the element-averaged variance error to 5.
    """
    sched = linear_schedule()
    rng = make_rng(seed)
    shape = (2, 1, 2, 2)  # N, C, H, W
    z0 = np.abs(rng.standard_normal(shape)) + 0.5
    z_c = np.abs(rng.standard_normal(shape[1:])) + 0.5
    E = int(np.prod(shape))
    checks = []
    for t in steps:
        ab = sched.alpha_bar(t)
        for lam in lams:
            eps_n = rng.standard_normal((draws,) + shape)
            eps = make_training_noise(eps_n, np.broadcast_to(z_c, (draws,) + z_c.shape), lam)
            zt = q_sample(np.broadcast_to(z0, eps.shape), t, eps, sched)
            expect = math.sqrt(ab) * z0 + math.sqrt(1 - ab) * lam * z_c[None]
            var_true = 1.0 - ab
            mean_se = math.sqrt(var_true / (draws * E))
            var_se = var_true * math.sqrt(2.0 / (draws - 1)) / math.sqrt(E)
            mean_err = abs(float((zt.mean(axis=0) - expect).mean()))
            var_err = abs(float(zt.var(axis=0, ddof=1).mean() - var_true))
            checks.append(_check("moments", f"mean[t={t},lam={lam}] (in SE)", mean_err / mean_se, 3.0))
            checks.append(_check("moments", f"var[t={t},lam={lam}] (in SE)", var_err / var_se, 5.0))
    return checks


# ---------------------------------------------------------------------------
# zero-init identities


def _per_frame_reference(net: UNet3D, z, t, zc, cond) -> np.ndarray:
    """Run every frame as an independent one-frame clip with temporal layers off."""
    B, N = z.shape[:2]
    frames = z.reshape((B * N, 1) + z.shape[2:])
    with tt.no_grad():
        out = net(frames, np.repeat(t, N), np.repeat(zc, N, axis=0), np.repeat(cond, N), temporal=False)
    return out.data.reshape(z.shape)


def suite_zeroinit(seed: int = 0, inputs: int = 20, config: UNetConfig = None) -> list:
    rng = make_rng(seed)
    base = config or UNetConfig()
    checks = []
    outs = {}
    with tt.default_dtype("f64"):
        z = rng.standard_normal((inputs, base.num_frames, base.in_channels, 16, 16))
        zc = rng.standard_normal((inputs, base.in_channels, 16, 16))
        t = rng.integers(1, 1001, inputs).astype(np.float64)
        cond = rng.integers(0, base.cond_vocab_size + 1, inputs)
        for mode in INJECTION_MODES:
            cfg = UNetConfig.from_dict({**base.to_dict(), "injection_mode": mode})
            net = UNet3D(cfg)
            with tt.no_grad():
                out = net(z, t, zc, cond).data
            ref = _per_frame_reference(net, z, t, zc, cond)
            outs[mode] = out
            checks.append(_check("zeroinit", f"3d-vs-per-frame-2d[{mode}]", np.abs(out - ref).max(), 1e-6))
        checks.append(_check("zeroinit", "spade-vs-additive-at-init",
                             np.abs(outs["add-encdec-spade"] - outs["add-encdec"]).max(), 1e-6))
        # SPADE with zero projections is exactly group norm
        h = tt.Tensor(rng.standard_normal((4, 8, 5, 5)) * 3 + 1)
        f = tt.Tensor(rng.standard_normal((4, 6, 5, 5)))
        gconv, bconv = Conv2d(6, 8, 3, zero_init=True), Conv2d(6, 8, 3, zero_init=True)
        initialize(gconv, seed)
        initialize(bconv, seed)
        with tt.no_grad():
            diff = np.abs(spade_inject(h, f, gconv, bconv, 4).data - tt.group_norm(h, 4).data).max()
        checks.append(_check("zeroinit", "spade-zero-projection-equals-groupnorm", diff, 1e-12))
    return checks


# ---------------------------------------------------------------------------
# shifted initialization


def _perturbed_tiny_unet(seed: int) -> UNet3D:
    rng = make_rng(seed)
    with tt.default_dtype("f64"):
        net = UNet3D(UNetConfig(base_channels=8, channel_multipliers=(1, 2), attention_levels=(1,), head_channels=8,
                                num_frames=5, groups=4, cond_embed_dim=16))
    for _, p in net.named_parameters():
        p.data = p.data + 0.05 * rng.standard_normal(p.shape)
    return net


def suite_shifted_init(seed: int = 0, lams=(0.0, 0.03, 0.1), gammas=(0.0, 0.02, 0.05), steps: int = 4) -> list:
    """Prior-enabled sampling versus vanilla sampling from manually shifted noise."""
    net = _perturbed_tiny_unet(seed)
    sched = linear_schedule()
    z_c = make_rng(seed + 1).standard_normal((4, 16, 16))
    checks = []
    for lam in lams:
        for gamma in gammas:
            cfg = SamplerConfig(steps=steps, guidance_scale=2.0, prior=AppearancePrior(lam, gamma), seed=seed)
            with_prior = sample(net, z_c, 1, cfg, sched).latent
            vanilla = SamplerConfig(steps=steps, guidance_scale=2.0, prior=AppearancePrior(0.0, 0.0), seed=seed)
            noise = make_rng(seed).standard_normal((1, 5, 4, 16, 16))
            manual = sample(net, z_c, 1, vanilla, sched, init_noise=shift_noise(noise, z_c[None], lam + gamma)).latent
            diff = float(np.abs(with_prior - manual).max())
            ok = np.array_equal(with_prior, manual)
            checks.append(Check("shifted-init", f"bitwise[lam={lam},gamma={gamma}]", diff, 0.0, ok, "=="))
    return checks


# ---------------------------------------------------------------------------
# analytic Gaussian ODE

GAUSS_STD = 0.18


def gaussian_harness(seed: int = 0, clips: int = 10_000, steps=(200, 400), reference_steps: int = 3200,
                     lam: float = 0.03, std: float = GAUSS_STD) -> dict:
    """Sample with the closed-form optimal predictor for N(m, std^2 I) data.

    Returns the relative mean and variance errors at each step count, and
    the RMS endpoint deviation from a fine-grid solve started from the same
    noise (the discretization error of the integrator).
    """
    sched = linear_schedule()
    rng = make_rng(seed)
    shape = (3, 1, 2, 2)
    m = rng.uniform(0.5, 1.5, shape) * rng.choice([-1.0, 1.0], shape)
    z_c = rng.standard_normal(shape[1:])
    oracle = GaussianOracle(m, std, lam * z_c, sched)
    zcs = np.broadcast_to(z_c, (clips,) + z_c.shape)
    prior = AppearancePrior(lam, 0.0)
    results = {}
    for n in tuple(steps) + (reference_steps,):
        cfg = SamplerConfig(steps=n, guidance_scale=1.0, prior=prior, seed=seed + 1)
        results[n] = sample(oracle, zcs, 0, cfg, sched, num_frames=shape[0], dtype=np.float64)
    ref = results[reference_steps]
    out = {}
    for n in steps:
        z = results[n]
        out[n] = {
            "mean_rel": float(np.linalg.norm(z.mean(axis=0) - m) / np.linalg.norm(m)),
            "var_rel": float(abs(z.var(axis=0, ddof=1).mean() - std ** 2) / std ** 2),
            "discretization": float(np.sqrt(np.mean((z - ref) ** 2))),
        }
    return out


def suite_gaussian_ode(seed: int = 0) -> list:
    res = gaussian_harness(seed)
    r200, r400 = res[200], res[400]
    return [
        _check("gaussian-ode", "mean relative error @200", r200["mean_rel"], 0.01),
        _check("gaussian-ode", "variance relative error @200", r200["var_rel"], 0.05),
        _check("gaussian-ode", "error ratio 400/200 steps", r400["discretization"] / r200["discretization"], 0.6),
    ]


# ---------------------------------------------------------------------------
# schedule


def product_oracle(T: int = 1000, beta_start: float = 0.00085, beta_end: float = 0.0120) -> list:
    """alpha_bar_t by a 50-digit decimal product of 1 - beta_t."""
    getcontext().prec = 50
    betas = np.linspace(beta_start, beta_end, T)
    acc = Decimal(1)
    out = []
    for b in betas:
        acc *= Decimal(1) - Decimal(float(b))
        out.append(acc)
    return out


def suite_schedule() -> list:
    s = linear_schedule()
    checks = [
        _check("schedule", "beta_1 - 0.00085", abs(s.beta(1) - 0.00085), 0.0),
        _check("schedule", "beta_T - 0.0120", abs(s.beta(1000) - 0.0120), 1e-18),
    ]
    oracle = product_oracle()
    rel = max(abs(float((Decimal(float(a)) - o) / o)) for a, o in zip(s.alpha_bars, oracle))
    checks.append(_check("schedule", "alpha_bar vs decimal product (relative)", rel, 1e-12))
    knot = 0.0
    for t in range(1, s.T + 1):
        ab, beta = s.continuous(t / s.T)
        knot = max(knot, abs(ab - s.alpha_bars[t - 1]) + abs(beta - s.T * s.betas[t - 1]))
    checks.append(_check("schedule", "knot identity", knot, 0.0))
    mids = max(abs(s.continuous((t + 0.5) / s.T)[0] - 0.5 * (s.alpha_bars[t - 1] + s.alpha_bars[t]))
               for t in range(1, s.T))
    checks.append(_check("schedule", "midpoint interpolation", mids, 1e-15))
    xs = np.linspace(0, 1, 4001)
    ab = np.array([s.continuous(x)[0] for x in xs])
    checks.append(_check("schedule", "alpha_bar(x) increase count", int(np.sum(np.diff(ab) > 0)), 0))
    vp = float(np.max(np.abs(np.sqrt(s.alpha_bars) ** 2 + np.sqrt(1 - s.alpha_bars) ** 2 - 1)))
    checks.append(_check("schedule", "variance-preserving identity", vp, 1e-12))
    return checks


SUITES: dict = {
    "gradients": suite_gradients,
    "moments": suite_moments,
    "zeroinit": suite_zeroinit,
    "shifted-init": suite_shifted_init,
    "gaussian-ode": suite_gaussian_ode,
    "schedule": suite_schedule,
}


def run_suites(name: str, seed: int = 0, emit: Callable[[str], None] = print) -> tuple:
    """Run one suite or ``all``; returns (all passed, checks)."""
    if name != "all" and name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES) + ['all']}")
    names = list(SUITES) if name == "all" else [name]
    checks = []
    for n in names:
        t0 = time.perf_counter()
        fn = SUITES[n]
        res = fn() if n == "schedule" else fn(seed)
        for c in res:
            emit(c.line())
        emit(f"suite {n}: {sum(c.passed for c in res)}/{len(res)} passed in {time.perf_counter() - t0:.1f}s")
        checks += res
    ok = all(c.passed for c in checks)
    emit("RESULT " + ("PASS" if ok else "FAIL"))
    return ok, checks
