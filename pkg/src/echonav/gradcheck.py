"""Finite-difference verification of every backward rule in the engine.

Each check pairs the engine's analytic gradient against a central-difference
estimate of an independent float64 re-implementation of the same forward
math. The float64 side shares no code with the tape engine, so a sign or
transpose bug in either forward or backward shows up as a large relative
error. Composite checks cover both 4-layer heads, the recurrent core, and
the full policy so inter-layer wiring is exercised, not just each rule in
isolation. Large tensors are checked on a seeded coordinate subset to keep
the suite fast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

FD_STEP = 1e-3
REL_TOL = 1e-3
# gradients smaller than this magnitude are compared absolutely, matching
# float32 forward-accumulation noise
REL_FLOOR = 0.05
MAX_COORDS = 48


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    passed: bool


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


PROBE_STEP = 1e-5


def fd_grad_at(f, arrays: list[np.ndarray], index: int, coords: np.ndarray,
               step: float = FD_STEP) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of scalar f(*arrays) at chosen flat coords of arrays[index].

    Returns (estimates, valid mask). Each estimate is cross-checked against a
    much smaller probe step: when the wide interval straddles a relu/clip
    kink the two disagree and the coordinate is marked invalid, because a
    central difference is not a gradient oracle across a kink. The reference
    runs in float64, so the probe step stays far above roundoff.
    """
    base = [a.astype(np.float64) for a in arrays]
    flat = base[index].reshape(-1)
    out = np.zeros(len(coords))
    valid = np.zeros(len(coords), dtype=bool)
    for j, i in enumerate(coords):
        keep = flat[i]
        estimates = []
        for h in (step, PROBE_STEP):
            flat[i] = keep + h
            hi = f(*base)
            flat[i] = keep - h
            lo = f(*base)
            estimates.append((hi - lo) / (2.0 * h))
        flat[i] = keep
        out[j] = estimates[0]
        valid[j] = abs(estimates[0] - estimates[1]) <= max(
            2e-5, 5e-4 * max(abs(estimates[0]), abs(estimates[1])))
    return out, valid


def pick_coords(size: int, rng: np.random.Generator, limit: int = MAX_COORDS) -> np.ndarray:
    if size <= limit:
        return np.arange(size)
    return rng.choice(size, size=limit, replace=False)


def engine_grads(build_loss, tensors: list[ad.Tensor]) -> list[np.ndarray]:
    """Analytic grads of build_loss(*tensors) for each tensor, via the tape."""
    for t in tensors:
        t.zero_grad()
    with ad.Tape() as tape:
        loss = build_loss(*tensors)
        tape.backward(loss)
    return [t.grad.copy() for t in tensors]


def compare(name: str, build_loss, reference, tensors: list[ad.Tensor],
            rng: np.random.Generator) -> CheckResult:
    """Worst sampled relative error between engine grads and FD of reference."""
    analytic = engine_grads(build_loss, tensors)
    arrays = [t.data for t in tensors]
    worst = 0.0
    checked = total = 0
    for i in range(len(arrays)):
        coords = pick_coords(arrays[i].size, rng)
        numeric, valid = fd_grad_at(reference, arrays, i, coords)
        checked += int(valid.sum())
        total += len(coords)
        worst = max(worst, rel_error(analytic[i].reshape(-1)[coords][valid],
                                     numeric[valid]))
    # a check dominated by kinks proves nothing; demand real coverage
    if checked < max(1, total // 2):
        return CheckResult(name, float("inf"), False)
    return CheckResult(name, worst, worst <= REL_TOL)


def check_op(name: str, build_loss, reference, shapes: list[tuple[int, ...]],
             rng: np.random.Generator) -> CheckResult:
    arrays = [rng.standard_normal(s).astype(np.float32) for s in shapes]
    tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
    return compare(name, lambda *ts: build_loss(*ts), reference, tensors, rng)


# --- float64 reference forwards (no engine code) ---------------------------


def _ref_softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _ref_cross_entropy(z, labels):
    p = _ref_softmax(z)
    return -float(np.mean(np.log(p[np.arange(z.shape[0]), labels])))


def _ref_mlp(x, layers, final_relu=False):
    h = x
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i + 1 < len(layers) or final_relu:
            h = np.maximum(h, 0.0)
    return h


def _ref_core(x, h, wx, wh, b, width=128):
    gz = x @ wx[:, :width] + h @ wh[:, :width] + b[:width]
    gr = x @ wx[:, width:2 * width] + h @ wh[:, width:2 * width] + b[width:2 * width]
    z = 1.0 / (1.0 + np.exp(-gz))
    r = 1.0 / (1.0 + np.exp(-gr))
    gc = x @ wx[:, 2 * width:] + (r * h) @ wh[:, 2 * width:] + b[2 * width:]
    return (1.0 - z) * h + z * np.tanh(gc)


def _weighted(values, weights) -> float:
    """Fixed random projection to a scalar so vector ops get a scalar loss."""
    return float((values * weights).sum())


def _wtensor(w):
    return ad.Tensor(w.astype(np.float32))


def primitive_checks(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    w45 = rng.standard_normal((4, 5))

    results.append(check_op(
        "matmul",
        lambda a, b: ad.sum_(ad.multiply(ad.matmul(a, b), _wtensor(w45))),
        lambda a, b: _weighted(a @ b, w45),
        [(4, 3), (3, 5)], rng))
    results.append(check_op(
        "add",
        lambda a, b: ad.sum_(ad.multiply(ad.add(a, b), _wtensor(w45))),
        lambda a, b: _weighted(a + b, w45),
        [(4, 5), (4, 5)], rng))
    results.append(check_op(
        "add_bias",
        lambda a, b: ad.sum_(ad.multiply(ad.add(a, b), _wtensor(w45))),
        lambda a, b: _weighted(a + b, w45),
        [(4, 5), (5,)], rng))
    results.append(check_op(
        "sub",
        lambda a, b: ad.sum_(ad.multiply(ad.sub(a, b), _wtensor(w45))),
        lambda a, b: _weighted(a - b, w45),
        [(4, 5), (4, 5)], rng))
    results.append(check_op(
        "multiply",
        lambda a, b: ad.sum_(ad.multiply(ad.multiply(a, b), _wtensor(w45))),
        lambda a, b: _weighted(a * b, w45),
        [(4, 5), (4, 5)], rng))
    results.append(check_op(
        "scale",
        lambda a: ad.sum_(ad.multiply(ad.scale(a, 0.7), _wtensor(w45))),
        lambda a: _weighted(0.7 * a, w45),
        [(4, 5)], rng))

    w49 = rng.standard_normal((4, 9))
    results.append(check_op(
        "concat",
        lambda a, b: ad.sum_(ad.multiply(ad.concat([a, b], axis=1), _wtensor(w49))),
        lambda a, b: _weighted(np.concatenate([a, b], axis=1), w49),
        [(4, 5), (4, 4)], rng))
    w42 = rng.standard_normal((4, 2))
    results.append(check_op(
        "slice",
        lambda a: ad.sum_(ad.multiply(ad.slice_(a, 1, 3, axis=1), _wtensor(w42))),
        lambda a: _weighted(a[:, 1:3], w42),
        [(4, 5)], rng))
    w54 = rng.standard_normal((5, 4))
    results.append(check_op(
        "reshape",
        lambda a: ad.sum_(ad.multiply(ad.reshape(a, (5, 4)), _wtensor(w54))),
        lambda a: _weighted(a.reshape(5, 4), w54),
        [(4, 5)], rng))

    results.append(check_op(
        "mean", lambda a: ad.mean(a), lambda a: float(a.mean()), [(4, 5)], rng))
    results.append(check_op(
        "sum", lambda a: ad.sum_(a), lambda a: float(a.sum()), [(4, 5)], rng))
    w5 = rng.standard_normal(5)
    results.append(check_op(
        "sum_axis0",
        lambda a: ad.sum_(ad.multiply(ad.sum_(a, axis=0), _wtensor(w5))),
        lambda a: _weighted(a.sum(axis=0), w5),
        [(4, 5)], rng))
    w4 = rng.standard_normal(4)
    results.append(check_op(
        "sum_axis1",
        lambda a: ad.sum_(ad.multiply(ad.sum_(a, axis=1), _wtensor(w4))),
        lambda a: _weighted(a.sum(axis=1), w4),
        [(4, 5)], rng))

    for name, op, ref in [
        ("relu", ad.relu, lambda a: np.maximum(a, 0.0)),
        ("tanh", ad.tanh, np.tanh),
        ("sigmoid", ad.sigmoid, lambda a: 1.0 / (1.0 + np.exp(-a))),
        ("exp", ad.exp, np.exp),
    ]:
        results.append(check_op(
            name,
            lambda a, op=op: ad.sum_(ad.multiply(op(a), _wtensor(w45))),
            lambda a, ref=ref: _weighted(ref(a), w45),
            [(4, 5)], rng))

    results.append(check_op(
        "log",
        lambda a: ad.sum_(ad.multiply(
            ad.log(ad.add(ad.multiply(a, a), ad.Tensor(np.ones((4, 5), np.float32)))),
            _wtensor(w45))),
        lambda a: _weighted(np.log(a * a + 1.0), w45),
        [(4, 5)], rng))
    results.append(check_op(
        "softmax",
        lambda a: ad.sum_(ad.multiply(ad.softmax(a), _wtensor(w45))),
        lambda a: _weighted(_ref_softmax(a), w45),
        [(4, 5)], rng))
    results.append(check_op(
        "log_softmax",
        lambda a: ad.sum_(ad.multiply(ad.log_softmax(a), _wtensor(w45))),
        lambda a: _weighted(np.log(_ref_softmax(a)), w45),
        [(4, 5)], rng))
    results.append(check_op(
        "clip",
        lambda a: ad.sum_(ad.multiply(ad.clip(a, -0.5, 0.5), _wtensor(w45))),
        lambda a: _weighted(np.clip(a, -0.5, 0.5), w45),
        [(4, 5)], rng))
    results.append(check_op(
        "minimum",
        lambda a, b: ad.sum_(ad.multiply(ad.minimum(a, b), _wtensor(w45))),
        lambda a, b: _weighted(np.minimum(a, b), w45),
        [(4, 5), (4, 5)], rng))

    labels = np.asarray(rng.integers(0, 5, size=4))
    results.append(check_op(
        "cross_entropy",
        lambda a: ad.cross_entropy(a, labels),
        lambda a: _ref_cross_entropy(a, labels),
        [(4, 5)], rng))
    tgt = rng.standard_normal((4, 5)).astype(np.float32)
    results.append(check_op(
        "mse",
        lambda a: ad.mse(a, ad.Tensor(tgt)),
        lambda a: float(((a - tgt.astype(np.float64)) ** 2).mean()),
        [(4, 5)], rng))
    return results


def head_checks(rng: np.random.Generator) -> list[CheckResult]:
    """Gradcheck the two 4-layer heads and the recurrent core at build size."""
    from .policy import PolicyNetwork

    net = PolicyNetwork(num_heard=4, freq_bins=4, time_frames=4, ray_count=5,
                        init_seed=int(rng.integers(1 << 31)))
    results = []
    batch = 3

    feat = (rng.standard_normal((batch, 64)) * 0.5).astype(np.float32)
    labels = np.asarray(rng.integers(0, 4, size=batch))
    ac_names, ac_tensors = zip(*net.group_items("audio_classifier"))

    def ref_ac(*arrs):
        return _ref_cross_entropy(_ref_mlp(feat.astype(np.float64), _pairs(arrs)), labels)

    results.append(compare(
        "audio_classifier_head",
        lambda *ts: ad.cross_entropy(net.classify(ad.Tensor(feat)), labels),
        ref_ac, list(ac_tensors), rng))

    core_feat = (rng.standard_normal((batch, 128)) * 0.5).astype(np.float32)
    target = rng.standard_normal((batch, 4)).astype(np.float32)
    lp_names, lp_tensors = zip(*net.group_items("location_predictor"))

    def ref_lp(*arrs):
        out = _ref_mlp(core_feat.astype(np.float64), _pairs(arrs))
        return float(((out - target.astype(np.float64)) ** 2).mean())

    results.append(compare(
        "location_predictor_head",
        lambda *ts: ad.mse(net.predict_direction(ad.Tensor(core_feat)), ad.Tensor(target)),
        ref_lp, list(lp_tensors), rng))

    x = (rng.standard_normal((batch, net.fused_dim)) * 0.5).astype(np.float32)
    h = (0.5 * np.tanh(rng.standard_normal((batch, 128)))).astype(np.float32)
    wproj = rng.standard_normal((batch, 128))
    core_names, core_tensors = zip(*net.group_items("core"))

    def ref_core_loss(wx, wh, b):
        return _weighted(_ref_core(x.astype(np.float64), h.astype(np.float64), wx, wh, b), wproj)

    results.append(compare(
        "recurrent_core",
        lambda *ts: ad.sum_(ad.multiply(net.core_step(ad.Tensor(x), ad.Tensor(h)),
                                        _wtensor(wproj))),
        ref_core_loss, list(core_tensors), rng))
    return results


def full_policy_check(rng: np.random.Generator) -> CheckResult:
    """End-to-end gradcheck: composite loss through every parameter group."""
    from .policy import PolicyNetwork

    net = PolicyNetwork(num_heard=4, freq_bins=4, time_frames=4, ray_count=5,
                        init_seed=int(rng.integers(1 << 31)))
    batch = 2
    adv = 0.7
    depth = rng.uniform(0.5, 5.0, size=(batch, 5)).astype(np.float32)
    audio = rng.uniform(0.1, 1.0, size=(batch, 2 * 4 * 4)).astype(np.float32)
    prev = np.zeros((batch, 4), dtype=np.float32)
    prev[:, 1] = 1.0
    hidden = (0.3 * np.tanh(rng.standard_normal((batch, 128)))).astype(np.float32)
    labels = np.asarray(rng.integers(0, 4, size=batch))
    angle_target = rng.standard_normal((batch, 4)).astype(np.float32)
    actions = np.asarray(rng.integers(0, 4, size=batch))
    wv = rng.standard_normal(batch)
    onehot = np.zeros((batch, 4), dtype=np.float32)
    onehot[np.arange(batch), actions] = 1.0

    def build_loss(*ts):
        out = net.forward(depth, audio, prev, ad.Tensor(hidden), adversary_weight=adv)
        logp = ad.log_softmax(out.action_logits)
        picked = ad.sum_(ad.multiply(logp, ad.Tensor(onehot)), axis=1)
        actor = ad.sum_(ad.multiply(picked, _wtensor(wv)))
        value = ad.sum_(ad.multiply(out.value, _wtensor(wv)))
        lc = ad.cross_entropy(out.class_logits, labels)
        lp = ad.mse(out.angle_pred, ad.Tensor(angle_target))
        return ad.add(ad.add(actor, value), ad.add(lc, lp))

    items = net.parameter_items()
    names = [n for n, _ in items]
    params = [t for _, t in items]
    analytic = engine_grads(build_loss, params)
    arrays = [p.data for p in params]

    def _encode(vals):
        ea = _ref_mlp(audio.astype(np.float64),
                      [(vals["audio_encoder.w0"], vals["audio_encoder.b0"]),
                       (vals["audio_encoder.w1"], vals["audio_encoder.b1"])], final_relu=True)
        return ea

    def ref_loss(*arrs):
        vals = dict(zip(names, [a.astype(np.float64) for a in arrs]))
        ea = _encode(vals)
        ev = _ref_mlp(depth.astype(np.float64),
                      [(vals["visual_encoder.w0"], vals["visual_encoder.b0"]),
                       (vals["visual_encoder.w1"], vals["visual_encoder.b1"])], final_relu=True)
        x = np.concatenate([ea, ev, prev.astype(np.float64)], axis=1)
        core = _ref_core(x, hidden.astype(np.float64), vals["core.wx"], vals["core.wh"], vals["core.b"])
        logits = core @ vals["actor.w"] + vals["actor.b"]
        value = (core @ vals["critic.w"] + vals["critic.b"])[:, 0]
        logp = np.log(_ref_softmax(logits))
        total = float((logp[np.arange(batch), actions] * wv).sum())
        total += float((value * wv).sum())
        ac_layers = [(vals[f"audio_classifier.w{i}"], vals[f"audio_classifier.b{i}"]) for i in range(4)]
        total += _ref_cross_entropy(_ref_mlp(ea, ac_layers), labels)
        lp_layers = [(vals[f"location_predictor.w{i}"], vals[f"location_predictor.b{i}"]) for i in range(4)]
        pred = _ref_mlp(core, lp_layers)
        total += float(((pred - angle_target.astype(np.float64)) ** 2).mean())
        return total

    def ref_lc_only(*arrs):
        vals = dict(zip(names, [a.astype(np.float64) for a in arrs]))
        ac_layers = [(vals[f"audio_classifier.w{i}"], vals[f"audio_classifier.b{i}"]) for i in range(4)]
        return _ref_cross_entropy(_ref_mlp(_encode(vals), ac_layers), labels)

    worst = 0.0
    checked = total = 0
    for i, name in enumerate(names):
        coords = pick_coords(arrays[i].size, rng)
        numeric, valid = fd_grad_at(ref_loss, arrays, i, coords)
        if name.startswith("audio_encoder."):
            # reference has no reversal layer: remove the +1 classifier
            # contribution and apply the engine's -adv scaling instead
            lc_grad, lc_valid = fd_grad_at(ref_lc_only, arrays, i, coords)
            numeric = numeric - lc_grad - adv * lc_grad
            valid &= lc_valid
        checked += int(valid.sum())
        total += len(coords)
        worst = max(worst, rel_error(analytic[i].reshape(-1)[coords][valid],
                                     numeric[valid]))
    if checked < max(1, total // 2):
        return CheckResult("full_policy", float("inf"), False)
    return CheckResult("full_policy", worst, worst <= REL_TOL)


def grad_reverse_identity_check(rng: np.random.Generator) -> CheckResult:
    """Exact -strength scaling: bit-identical to scaling the plain gradient."""
    worst = 0.0
    for strength in (0.0, 0.5, 1.0, 2.3):
        x = ad.Tensor(rng.standard_normal((3, 4)).astype(np.float32), requires_grad=True)
        w = ad.Tensor(rng.standard_normal((4, 4)).astype(np.float32))

        def graph(t):
            h = ad.tanh(ad.matmul(t, w))
            return ad.sum_(ad.multiply(h, h))

        plain = engine_grads(graph, [x])[0]
        through = engine_grads(lambda t: graph(ad.grad_reverse(t, strength)), [x])[0]
        expected = np.float32(-strength) * plain
        if not np.array_equal(through, expected):
            worst = max(worst, float(np.abs(through - expected).max()) + 1.0)
    return CheckResult("grad_reverse_exact", worst, worst == 0.0)


def run_all(seed: int = 0) -> list[CheckResult]:
    rng = np.random.Generator(np.random.PCG64(seed))
    results = primitive_checks(rng)
    results.extend(head_checks(rng))
    results.append(full_policy_check(rng))
    results.append(grad_reverse_identity_check(rng))
    return results


def _pairs(arrays):
    it = iter(a.astype(np.float64) for a in arrays)
    return list(zip(it, it))
