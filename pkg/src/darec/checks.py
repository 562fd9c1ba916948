"""Finite-difference self checks for every trainable loss in the package.

Used by the ``gradcheck`` subcommand and by the test-suite. Each check builds
a small random instance (embedding size <= 16, rating dimensions <= 20) from
the given seed so repeated runs give identical numbers.
"""

from __future__ import annotations

import copy

import numpy as np

from .adaptation import DARecNet, LossWeights, SampleBatch, darec_loss
from .autorec import AutoRec, autorec_loss
from .nncore import grad_check, rng_stream, zero_grads

TOLERANCE = 1e-4
COMPONENTS = ("autorec", "udarec", "idarec", "grl_reference")


def random_ratings(rng, n: int, d: int, density: float = 0.5):
    # unit-scale targets keep the loss small, so central differences keep
    # enough significant digits for small gradient coordinates
    values = rng.normal(0.0, 1.0, (n, d))
    mask = (rng.random((n, d)) < density).astype(np.float64)
    # unobserved slots carry junk so masking bugs show up
    values = np.where(mask > 0, values, rng.normal(0.0, 3.0, (n, d)))
    return values, mask


def random_batch(rng, n: int, k: int, d_source: int, d_target: int) -> SampleBatch:
    label = rng.integers(0, 2, n).astype(np.float64)
    sv, sm = random_ratings(rng, n, d_source)
    tv, tm = random_ratings(rng, n, d_target)
    sm[label == 1] = 0.0
    tm[label == 0] = 0.0
    return SampleBatch(rng.normal(0.0, 1.0, (n, k)), label, sv, sm, tv, tm)


def random_network(rng, variant: str, mu: float, k: int, d_source: int, d_target: int,
                   width: int = 8) -> DARecNet:
    return DARecNet(k, d_source, d_target, variant=variant, mu=mu, extractor_width=width,
                    std=0.4, seed=rng)


def _corrupt(params, on: bool) -> None:
    if on:
        params[0].grad *= 1.5


def check_autorec(seed: int = 0, corrupt: bool = False, h: float = 1e-5) -> float:
    rng = rng_stream(seed, "check.autorec")
    d, k = int(rng.integers(3, 21)), int(rng.integers(2, 17))
    p = AutoRec(d, k, std=0.4, seed=rng)
    values, mask = random_ratings(rng, 4, d)
    alpha = float(rng.uniform(0.01, 1.0))

    def loss():
        zero_grads(p.params())
        out = autorec_loss(p, values, mask, alpha, backward=True)
        _corrupt(p.params(), corrupt)
        return out

    return grad_check(loss, p.params(), h)


def _dims(rng):
    return int(rng.integers(2, 17)), int(rng.integers(3, 21)), int(rng.integers(3, 21))


def check_darec(variant: str, seed: int = 0, corrupt: bool = False, h: float = 1e-5) -> float:
    """For ``"I"`` the analytic gradient is that of the total loss.

    For ``"U"`` no single scalar has the reversal-layer gradient, so each
    parameter group is checked against the scalar whose derivative it should
    follow: the extractor against prediction + norm penalty - mu * BCE, every
    other group against the total.
    """
    rng = rng_stream(seed, f"check.darec.{variant}")
    k, ds, dt = _dims(rng)
    mu = float(rng.uniform(0.2, 3.0))
    net = random_network(rng, variant, mu, k, ds, dt)
    w = LossWeights(beta=float(rng.uniform(0.1, 2.0)), mu=mu, lam=float(rng.uniform(1e-3, 0.1)))
    batch = random_batch(rng, 4, k, ds, dt)
    params = net.params()

    def evaluate(extractor_view: bool):
        zero_grads(params)
        parts = darec_loss(net, batch, w, backward=True)
        _corrupt(params, corrupt)
        if extractor_view:
            return parts.pred_source + parts.pred_target + parts.reg - mu * parts.classifier
        return parts.total

    if variant == "I":
        return grad_check(lambda: evaluate(False), params, h)
    ext = net.extractor.params()
    rest = [p for p in params if all(p is not q for q in ext)]
    return max(grad_check(lambda: evaluate(True), ext, h),
               grad_check(lambda: evaluate(False), rest, h))


def adversarial_reference(net: DARecNet, batch: SampleBatch, w: LossWeights) -> dict[str, np.ndarray]:
    """Gradients of a two-player update, assembled without any reversal layer.

    Pass one: prediction loss and norm penalty, no classifier term. Pass two:
    plain BCE back-propagated through classifier and extractor. The classifier
    descends BCE while the extractor ascends it scaled by ``mu``.
    """
    def run(variant_mu, batch_, weights):
        twin = copy.deepcopy(net)
        twin.variant, twin.mu = "I", variant_mu
        zero_grads(twin.params())
        darec_loss(twin, batch_, weights, backward=True)
        return {p.name: p.grad.copy() for p in twin.params()}

    g_pred = run(0.0, batch, LossWeights(w.beta, 0.0, w.lam))
    unmasked = SampleBatch(batch.emb, batch.label, batch.src_values, np.zeros_like(batch.src_mask),
                           batch.tgt_values, np.zeros_like(batch.tgt_mask))
    g_bce = run(1.0, unmasked, LossWeights(w.beta, 1.0, 0.0))
    sign = {"extractor": -w.mu, "classifier": 1.0}
    return {name: g + sign.get(name.split(".")[0], 0.0) * g_bce[name]
            for name, g in g_pred.items()}


def check_grl_reference(seed: int = 0, corrupt: bool = False) -> float:
    """Largest absolute gap between reversal-layer gradients and the reference."""
    rng = rng_stream(seed, "check.grl")
    k, ds, dt = _dims(rng)
    mu = float(rng.uniform(0.2, 3.0))
    net = random_network(rng, "U", mu, k, ds, dt)
    w = LossWeights(beta=float(rng.uniform(0.1, 2.0)), mu=mu, lam=float(rng.uniform(1e-3, 0.1)))
    batch = random_batch(rng, 4, k, ds, dt)
    ref = adversarial_reference(net, batch, w)
    zero_grads(net.params())
    darec_loss(net, batch, w, backward=True)
    _corrupt(net.params(), corrupt)
    return max(float(np.max(np.abs(p.grad - ref[p.name]))) for p in net.params())


def run_all(seed: int = 0, corrupt: str | None = None) -> dict[str, float]:
    """Max error per component; each must stay below ``TOLERANCE``."""
    if corrupt is not None and corrupt not in COMPONENTS:
        raise ValueError(f"unknown component {corrupt!r}; expected one of {COMPONENTS}")
    return {
        "autorec": check_autorec(seed, corrupt == "autorec"),
        "udarec": check_darec("U", seed, corrupt == "udarec"),
        "idarec": check_darec("I", seed, corrupt == "idarec"),
        "grl_reference": check_grl_reference(seed, corrupt == "grl_reference"),
    }
