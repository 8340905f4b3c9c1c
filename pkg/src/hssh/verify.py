"""Property-suite runner: manifold axioms, gradient checks against central
finite differences, the scan recurrence oracle, style round trips, and
loss golden values.  ``run_all`` prints one line per suite with the
worst-case error and returns False if anything failed."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from . import encoder as encoder_mod
from . import losses as losses_mod
from . import poincare
from . import style as style_mod
from . import tensor as T
from .config import RunConfig
from .encoder import Encoder, EncoderConfig, StateEmbedding
from .losses import BatchLabels, HyperbolicEmbeddingSet
from .style import SlopeWindow
from .tensor import Tensor


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_err: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = f"{self.name}: {status} (max err {self.max_err:.3e})"
        if self.detail:
            msg += f" - {self.detail}"
        return msg


# ---------------------------------------------------------------------------
# finite-difference machinery


def numeric_gradient(f, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of a scalar function of numpy arrays."""
    grads = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = f(arrays)
            flat[j] = orig - h
            fm = f(arrays)
            flat[j] = orig
            gflat[j] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def grad_mismatch(ga: np.ndarray, gn: np.ndarray, floor: float) -> float:
    denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), floor)
    return float(np.max(np.abs(ga - gn) / denom))


def check_op_grad(build, arrays: list[np.ndarray], floor: float = 1e-2) -> float:
    """Worst relative error between the recorded gradients of
    ``build(tensors...)`` and central differences of the same function."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()
    auto = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def f(arrs):
        with T.no_grad():
            return build(*[Tensor(a) for a in arrs]).item()

    numeric = numeric_gradient(f, [a.copy() for a in arrays])
    return max(grad_mismatch(a, n, floor) for a, n in zip(auto, numeric))


# ---------------------------------------------------------------------------
# manifold suite


def _sample_ball(rng, n, dim, c, max_frac=0.95):
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = (rng.uniform(0, 1, (n, 1)) ** (1.0 / dim)) * max_frac / math.sqrt(c)
    return v * r


def manifold_suite(n_triples: int = 10_000) -> SuiteResult:
    rng = np.random.default_rng(20240)
    worst = 0.0
    detail = ""
    ok = True
    # golden values, hand-evaluated from the printed formulas
    got = poincare.mobius_add(Tensor([[0.5, 0.0]]), Tensor([[0.5, 0.0]]), 0.1)
    err = abs(got.data[0, 0] - 40.0 / 41.0) + abs(got.data[0, 1])
    worst = max(worst, err)
    if err > 1e-4:
        ok, detail = False, "mobius golden value"
    z2 = Tensor([[0.5, 0.0]])
    d = poincare.distance(Tensor([[0.0, 0.0]]), z2, 0.1)
    expected = (2.0 / math.sqrt(0.1)) * math.atanh(math.sqrt(0.1) * 0.5)
    err = abs(d.data[0] - expected)
    worst = max(worst, err)
    if err > 1e-4 or abs(expected - 1.00845) > 1e-4:
        ok, detail = False, "distance golden value"
    # exp-map golden at the origin
    e0 = poincare.exp_map_0(Tensor([[1.0, 0.0]]), 0.1)
    err = abs(e0.data[0, 0] - math.tanh(math.sqrt(0.1)) / math.sqrt(0.1))
    worst = max(worst, err)
    if err > 1e-12:
        ok, detail = False, "exp_map_0 golden value"
    ev = poincare.exp_map_v(Tensor([[0.0, 0.0]]), Tensor([[1.0, 0.0]]), 0.1)
    err = abs(ev.data[0, 0] - math.tanh(0.5 * math.sqrt(0.1)) / math.sqrt(0.1))
    worst = max(worst, err)
    if err > 1e-12:
        ok, detail = False, "exp_map_v golden value"
    for c in (0.01, 0.1, 1.0):
        x = Tensor(_sample_ball(rng, n_triples, 4, c))
        y = Tensor(_sample_ball(rng, n_triples, 4, c))
        z = Tensor(_sample_ball(rng, n_triples, 4, c))
        # identity and left inverse
        zero = Tensor(np.zeros_like(x.data))
        err = float(np.max(np.abs(poincare.mobius_add(zero, x, c).data - x.data)))
        worst = max(worst, err)
        if err > 1e-12:
            ok, detail = False, f"mobius identity c={c}"
        err = float(np.max(np.abs(poincare.mobius_add(-x, x, c).data)))
        worst = max(worst, err)
        if err > 1e-12:
            ok, detail = False, f"mobius left inverse c={c}"
        dxx = poincare.distance(x, x, c).data
        err = float(np.max(np.abs(dxx)))
        worst = max(worst, err)
        if err > 1e-12:
            ok, detail = False, f"d(x,x) c={c}"
        dxy = poincare.distance(x, y, c).data
        dyx = poincare.distance(y, x, c).data
        err = float(np.max(np.abs(dxy - dyx)))
        worst = max(worst, err)
        if err > 1e-9:
            ok, detail = False, f"symmetry c={c}"
        if np.min(dxy) < 0:
            ok, detail = False, f"negativity c={c}"
        dyz = poincare.distance(y, z, c).data
        dxz = poincare.distance(x, z, c).data
        err = float(np.max(dxz - (dxy + dyz)))
        worst = max(worst, err)
        if err > 1e-9:
            ok, detail = False, f"triangle c={c}"
    # euclidean limit
    c = 1e-8
    x = Tensor(rng.uniform(-0.5, 0.5, (2000, 4)))
    y = Tensor(rng.uniform(-0.5, 0.5, (2000, 4)))
    d = poincare.distance(x, y, c).data
    ref = 2.0 * np.linalg.norm(x.data - y.data, axis=1)
    err = float(np.max(np.abs(d - ref) / np.maximum(ref, 1e-12)))
    worst = max(worst, err)
    if err > 1e-3:
        ok, detail = False, "euclidean limit"
    # exp-map output strictly inside the ball, no projection needed
    for c in (0.01, 0.1, 1.0):
        f = Tensor(rng.standard_normal((5000, 6)) * rng.uniform(0.1, 40))
        z = poincare.exp_map_0(f, c)
        sq = c * np.sum(z.data * z.data, axis=1)
        if np.max(sq) >= 1.0:
            ok, detail = False, f"exp_map_0 ball bound c={c}"
    return SuiteResult("manifold-axioms", ok, worst, detail)


# ---------------------------------------------------------------------------
# gradient suite


def _op_cases(rng):
    def r(*shape, lo=-2.0, hi=2.0):
        return rng.uniform(lo, hi, shape)

    w34 = rng.standard_normal((3, 4))
    w234 = rng.standard_normal((2, 3, 4))
    w45 = rng.standard_normal((4, 5))
    w245 = rng.standard_normal((2, 4, 5))

    def wsum(x, w):
        return T.sum_(x * Tensor(w), axes=list(range(x.ndim)))

    b = r(3, 4)
    b = np.where(np.abs(b) < 0.3, b + 0.5 * np.sign(b + 1e-12), b)
    clamp_in = r(3, 4)
    clamp_in = np.where(np.abs(np.abs(clamp_in) - 1.0) < 0.05, clamp_in * 0.8, clamp_in)
    max_in = r(2, 3, 4) + np.arange(24).reshape(2, 3, 4) * 1e-3
    cases = [
        ("add", lambda x, y: wsum(x + y, w34), [r(3, 4), r(4)]),
        ("sub", lambda x, y: wsum(x - y, w34), [r(3, 4), r(3, 4)]),
        ("mul", lambda x, y: wsum(x * y, w234), [r(2, 3, 4), r(3, 4)]),
        ("div", lambda x, y: wsum(x / y, w34), [r(3, 4), b]),
        ("neg", lambda x: wsum(-x, w34), [r(3, 4)]),
        ("tanh", lambda x: wsum(T.tanh(x), w34), [r(3, 4)]),
        ("exp", lambda x: wsum(T.exp(x), w34), [r(3, 4)]),
        ("ln", lambda x: wsum(T.ln(x), w34), [r(3, 4, lo=0.1, hi=3.0)]),
        ("sqrt", lambda x: wsum(T.sqrt(x), w34), [r(3, 4, lo=0.1, hi=3.0)]),
        ("softplus", lambda x: wsum(T.softplus(x), w34), [r(3, 4)]),
        ("clamp", lambda x: wsum(T.clamp(x, lo=-1.0, hi=1.0), w34), [clamp_in]),
        ("matmul", lambda x, y: wsum(T.matmul(x, y), w45), [r(4, 3), r(3, 5)]),
        ("matmul-batched", lambda x, y: wsum(T.matmul(x, y), w245),
         [r(2, 4, 3), r(3, 5)]),
        ("sum", lambda x: wsum(T.sum_(x, axes=[0, 2]), rng.standard_normal(3)),
         [r(2, 3, 4)]),
        ("mean", lambda x: wsum(T.mean(x, axes=[1]), rng.standard_normal((2, 4))),
         [r(2, 3, 4)]),
        ("max", lambda x: wsum(T.max_(x, axes=[2]), rng.standard_normal((2, 3))),
         [max_in]),
        ("reshape", lambda x: wsum(T.reshape(x, (4, 6)), rng.standard_normal((4, 6))),
         [r(2, 3, 4)]),
        ("transpose", lambda x: wsum(T.transpose(x, (2, 0, 1)),
                                     rng.standard_normal((4, 2, 3))), [r(2, 3, 4)]),
        ("flip", lambda x: wsum(T.flip(x, 1), w234), [r(2, 3, 4)]),
        ("take", lambda x: wsum(T.take(x, np.array([2, 0, 2]), axis=0),
                                rng.standard_normal((3, 4))), [r(3, 4)]),
        ("norm", lambda x: wsum(T.norm(x, axis=-1), rng.standard_normal(3)),
         [r(3, 4, lo=0.3, hi=2.0)]),
    ]
    scan_inputs = [
        r(2, 5, 3),                      # u
        r(2, 5, 3, lo=0.1, hi=1.0),      # delta
        r(3, 2, lo=-1.0, hi=-0.1),       # a
        r(2, 5, 2, lo=-1.0, hi=1.0),     # bm
        r(2, 5, 2, lo=-1.0, hi=1.0),     # cm
        r(3, lo=-1.0, hi=1.0),           # d
    ]
    wy = rng.standard_normal((2, 5, 3))
    cases.append(("selective-scan",
                  lambda *xs: wsum(encoder_mod._scan_op(*xs), wy), scan_inputs))
    return cases


def _tiny_setup(seed: int = 7):
    cfg = EncoderConfig(num_classes=3, image_size=16, patch_size=2,
                        stage_channels=(2, 4, 8, 16), state_dim=2,
                        scan_directions=2)
    rng = np.random.default_rng(seed)
    enc = Encoder(cfg, rng)
    # nudge every parameter (including the zero head) off its init so the
    # objective depends on all of them
    for t in enc.parameters().values():
        t.data = t.data + rng.uniform(-0.05, 0.05, size=t.shape)
    images = Tensor(rng.uniform(0, 1, (2, 3, 16, 16)))
    labels = BatchLabels(fine=np.array([0, 1]), coarse=np.array([0, 0]))
    run = RunConfig(enable_ssh=True, enable_hmc=True)
    return enc, images, labels, run


def end_to_end_gradcheck(h: float = 1e-5) -> float:
    """Central-difference check of the full objective against every
    parameter gradient, with the sampled hallucination targets frozen
    (they are constants on the tape by construction)."""
    from .train import batch_forward

    enc, images, labels, run = _tiny_setup()
    first = batch_forward(enc, images, labels, run, SlopeWindow(),
                          np.random.default_rng(3))
    targets = first.targets

    def loss_value() -> float:
        with T.no_grad():
            out = batch_forward(enc, images, labels, run, SlopeWindow(),
                                None, targets=targets)
            return out.loss.item()

    out = batch_forward(enc, images, labels, run, SlopeWindow(),
                        None, targets=targets)
    out.loss.backward()
    worst = 0.0
    for t in enc.parameters().values():
        auto = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = auto.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = loss_value()
            flat[j] = orig - h
            fm = loss_value()
            flat[j] = orig
            num = (fp - fm) / (2.0 * h)
            denom = max(abs(gflat[j]), abs(num), 1e-3)
            worst = max(worst, abs(gflat[j] - num) / denom)
        t.grad = None
    return worst


def gradient_suite() -> SuiteResult:
    rng = np.random.default_rng(1234)
    worst = 0.0
    ok = True
    detail = ""
    for name, build, arrays in _op_cases(rng):
        err = check_op_grad(build, arrays)
        worst = max(worst, err)
        if err > 1e-4:
            ok, detail = False, f"op {name}"
    # distance through the exponential map, away from coincidence
    a0 = rng.uniform(0.2, 1.0, (3, 4))
    b0 = -rng.uniform(0.2, 1.0, (3, 4))
    wd = rng.standard_normal(3)

    def dist_build(a, b):
        z1 = poincare.exp_map_0(a, 0.1)
        z2 = poincare.exp_map_0(b, 0.1)
        return T.sum_(poincare.distance(z1, z2, 0.1) * Tensor(wd), axes=[0])

    err = check_op_grad(dist_build, [a0, b0], floor=1e-3)
    worst = max(worst, err)
    if err > 1e-3:
        ok, detail = False, "hyperbolic distance"
    err = end_to_end_gradcheck()
    worst = max(worst, err)
    if err > 1e-3:
        ok, detail = False, "end-to-end objective"
    return SuiteResult("gradient-checks", ok, worst, detail)


# ---------------------------------------------------------------------------
# scan suite


def naive_scan(u, delta, a, bm, cm, d):
    """Step-by-step recurrence, written independently of the kernels."""
    B, L, C = u.shape
    N = a.shape[1]
    y = np.zeros((B, L, C))
    for b in range(B):
        for c in range(C):
            for n in range(N):
                h = 0.0
                for t in range(L):
                    h = math.exp(delta[b, t, c] * a[c, n]) * h \
                        + delta[b, t, c] * bm[b, t, n] * u[b, t, c]
                    y[b, t, c] += cm[b, t, n] * h
            for t in range(L):
                y[b, t, c] += d[c] * u[b, t, c]
    return y


def scan_suite(n_configs: int = 100) -> SuiteResult:
    rng = np.random.default_rng(555)
    worst = 0.0
    for _ in range(n_configs):
        B = int(rng.integers(1, 4))
        L = int(rng.integers(1, 65))
        C = int(rng.integers(1, 6))
        N = int(rng.integers(1, 9))
        u = rng.uniform(-2, 2, (B, L, C))
        delta = rng.uniform(0.01, 2.0, (B, L, C))
        a = -np.exp(rng.uniform(-3, 1, (C, N)))
        bm = rng.uniform(-2, 2, (B, L, N))
        cm = rng.uniform(-2, 2, (B, L, N))
        d = rng.uniform(-2, 2, C)
        out = encoder_mod._scan_op(Tensor(u), Tensor(delta), Tensor(a),
                                   Tensor(bm), Tensor(cm), Tensor(d)).data
        ref = naive_scan(u, delta, a, bm, cm, d)
        worst = max(worst, float(np.max(np.abs(out - ref))))
    return SuiteResult("scan-oracle", worst < 1e-10, worst)


# ---------------------------------------------------------------------------
# style suite


def _live_epoch_ranges(seed: int = 11):
    """Per-stage fitted slopes of original and hallucinated clouds over a
    short real training run on a miniature dataset."""
    from .train import Tensor as _Tensor  # noqa: F401  (keep import local)
    from .train import batch_forward, batch_labels

    cfg = data_mod.SyntheticConfig(train_per_class=12, val_per_class=2,
                                   test_per_class=2, seed=seed)
    split = data_mod._build_split(cfg, 0, cfg.train_per_class, 0)
    run = RunConfig(batch_size=8, seed=seed)
    enc_cfg = EncoderConfig(num_classes=cfg.num_fine, image_size=cfg.image_size)
    enc = Encoder(enc_cfg, np.random.default_rng(seed))
    window = SlopeWindow(run.gamma_window)
    style_rng = np.random.default_rng(seed + 1)
    orig: dict[int, list[float]] = {i: [] for i in range(1, 5)}
    hall: dict[int, list[float]] = {i: [] for i in range(1, 5)}
    order = np.arange(len(split))
    with T.no_grad():
        for start in range(0, len(split), run.batch_size):
            idx = order[start:start + run.batch_size]
            images = Tensor(split.images[idx].astype(np.float64))
            out = batch_forward(enc, images, batch_labels(split, idx), run,
                                window, style_rng)
            for stage, g in out.gammas.items():
                orig[stage].append(g)
            for se in out.branch:
                if se.stage in run.stages_hallucinated:
                    mu, sg = style_mod.stats_arrays(se.f.data)
                    try:
                        hall[se.stage].append(style_mod.fit_slope_arrays(mu, sg))
                    except style_mod.DegenerateCloud:
                        pass
    return orig, hall


def style_suite() -> SuiteResult:
    rng = np.random.default_rng(77)
    worst = 0.0
    ok = True
    detail = ""
    # re-stylization round trip
    f = StateEmbedding(f=Tensor(rng.uniform(-1, 2, (4, 6, 5, 5))), stage=1)
    stats = style_mod.compute_style(f)
    target = style_mod.StyleStats(
        mu=Tensor(rng.uniform(-1, 1, (4, 6))),
        sigma=Tensor(rng.uniform(0.05, 2.0, (4, 6))),
        stage=1)
    out = style_mod.hallucinate(f, stats, target)
    got = style_mod.compute_style(out)
    err = max(float(np.max(np.abs(got.mu.data - target.mu.data))),
              float(np.max(np.abs(got.sigma.data - target.sigma.data))))
    worst = max(worst, err)
    if err > 1e-6:
        ok, detail = False, "round trip"
    # identity re-stylization
    ident = style_mod.hallucinate(f, stats, stats)
    err = float(np.max(np.abs(ident.f.data - f.f.data)))
    worst = max(worst, err)
    if err > 1e-10:
        ok, detail = False, "identity"
    # slope against the closed-form least-squares oracle
    mu = rng.uniform(-1, 1, (8, 16))
    sg = rng.uniform(0, 2, (8, 16))
    gamma = style_mod.fit_slope_arrays(mu, sg)
    ref = np.polyfit(mu.reshape(-1), sg.reshape(-1), 1)[0]
    err = abs(gamma - ref)
    worst = max(worst, err)
    if err > 1e-10:
        ok, detail = False, "slope oracle"
    # extrapolation formulas by substitution
    r = style_mod.SlopeRange(gamma_min=0.2, gamma_max=0.6)
    err = max(abs(r.gamma_min_ext - (-0.2)), abs(r.gamma_max_ext - 1.0))
    worst = max(worst, err)
    if err > 1e-12:
        ok, detail = False, "extrapolation"
    # live-run containment: hallucinated slope range strictly contains the
    # original range wherever the original range is non-degenerate
    orig, hall = _live_epoch_ranges()
    for stage in (1, 2, 3, 4):
        lo, hi = min(orig[stage]), max(orig[stage])
        # ranges below the fp-noise floor count as degenerate (the 1x1
        # last stage fits slope 0 on every batch, up to rounding)
        if hi - lo < 1e-9 or not hall[stage]:
            continue
        if not (min(hall[stage]) < lo and max(hall[stage]) > hi):
            ok, detail = False, f"containment stage {stage}"
    return SuiteResult("style-suite", ok, worst, detail)


# ---------------------------------------------------------------------------
# loss suite


def loss_suite() -> SuiteResult:
    rng = np.random.default_rng(99)
    worst = 0.0
    ok = True
    detail = ""
    # uniform logits -> ln(K)
    loss = losses_mod.cls_loss(Tensor(np.zeros((4, 8))), np.array([0, 1, 2, 3]))
    err = abs(loss.item() - math.log(8.0))
    worst = max(worst, err)
    if err > 1e-9:
        ok, detail = False, "uniform cls"
    # saturated softmax
    logits = np.zeros((1, 8))
    logits[0, 3] = 30.0
    err = losses_mod.cls_loss(Tensor(logits), np.array([3])).item()
    worst = max(worst, err)
    if err > 1e-9:
        ok, detail = False, "saturated cls"
    # direct-formula oracle
    logits = rng.uniform(-3, 3, (6, 5))
    y = rng.integers(0, 5, 6)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    ref = float(np.mean(-np.log(p[np.arange(6), y])))
    err = abs(losses_mod.cls_loss(Tensor(logits), y).item() - ref)
    worst = max(worst, err)
    if err > 1e-10:
        ok, detail = False, "cls formula"
    # brute-force pair enumeration for the consistency loss, B = 4
    c = 0.1
    stages = (1, 2, 3, 4)
    z = {s: Tensor(_sample_ball(rng, 4, 6, c)) for s in stages}
    zt = {s: Tensor(_sample_ball(rng, 4, 6, c)) for s in stages}
    labels = BatchLabels(fine=np.array([0, 1, 2, 3]),
                         coarse=np.array([0, 0, 1, 0]))
    got = losses_mod.hmc_loss(
        HyperbolicEmbeddingSet(z=z, z_tilde=zt, stages=stages), labels, c).item()
    cons = 0.0
    for s in stages:
        for i in range(4):
            cons += poincare.distance(Tensor(z[s].data[i:i + 1]),
                                      Tensor(zt[s].data[i:i + 1]), c).item()
    cons /= 4 * len(stages)
    pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)
             if labels.coarse[i] == labels.coarse[j]]
    pair = sum(poincare.distance(Tensor(z[4].data[i:i + 1]),
                                 Tensor(z[4].data[j:j + 1]), c).item()
               for i, j in pairs) / len(pairs)
    err = abs(got - (cons + pair))
    worst = max(worst, err)
    if err > 1e-9:
        ok, detail = False, "hmc brute force"
    # weighted combination arithmetic
    tot = losses_mod.total_loss(Tensor(1.0), Tensor(1.0), Tensor(2.0), 0.5)
    err = abs(tot.item() - 3.0)
    worst = max(worst, err)
    if err > 1e-12:
        ok, detail = False, "total loss"
    if RunConfig().lambda_hmc != losses_mod.DEFAULT_LAMBDA:
        ok, detail = False, "default lambda mismatch"
    return SuiteResult("loss-oracles", ok, worst, detail)


ALL_SUITES = [manifold_suite, gradient_suite, scan_suite, style_suite, loss_suite]


def run_all(print_fn=print) -> bool:
    ok = True
    for suite in ALL_SUITES:
        result = suite()
        print_fn(result.line())
        ok = ok and result.passed
    return ok
