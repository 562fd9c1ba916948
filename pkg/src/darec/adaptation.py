"""Domain-adaptation network on top of frozen AutoRec embeddings.

The network has a shared rating-pattern extractor, one rating-predictor head
per domain and a domain classifier. Two training regimes are supported:

* ``"U"`` (user-oriented): a gradient reversal layer sits between the
  extractor and the classifier. A single optimizer then pushes the classifier
  to tell domains apart while the extractor is pushed to confuse it.
* ``"I"`` (item-oriented): no reversal; the classifier loss is minimised
  jointly with the prediction loss so domain-specific patterns separate.

Domain labels: 0 = source, 1 = target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .nncore import (AdamState, MLP, adam_step, add_l2_grad, load_into, params_to_tensors,
                     rng_stream, squared_norm, zero_grads)
from .ratings import RatingMatrix

VARIANTS = ("U", "I")
PROB_CLAMP = 1e-12


def grl(x: np.ndarray, mu: float) -> np.ndarray:
    """Forward pass of the gradient reversal layer: the identity."""
    return x


def grl_backward(grad: np.ndarray, mu: float) -> np.ndarray:
    """Backward pass of the gradient reversal layer: ``-mu`` times the upstream gradient."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    return (-mu) * grad


def pyramid_widths(width: int, out_dim: int, n_layers: int = 3) -> list[int]:
    """Layer output widths interpolated geometrically from ``width`` to ``out_dim``."""
    ratio = out_dim / width
    sizes = [max(1, int(round(width * ratio ** (j / n_layers)))) for j in range(1, n_layers)]
    return sizes + [out_dim]


@dataclass
class LossWeights:
    beta: float = 1.0
    mu: float = 1.0
    lam: float = 1e-4

    def __post_init__(self):
        for name in ("beta", "mu", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


class DARecNet:
    """Extractor, two predictor heads and a domain classifier."""

    def __init__(self, k: int, d_source: int, d_target: int, variant: str = "U",
                 mu: float = 1.0, extractor_width: int = 100, extractor_layers: int = 1,
                 head_layers: int = 3, share_heads: bool = False, std: float = 0.01, seed=0):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if mu < 0:
            raise ValueError("mu must be non-negative")
        rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed, "darec.init")
        w = extractor_width
        self.variant = variant
        self.mu = float(mu)
        self.extractor = MLP.build([k] + [w] * extractor_layers, ["sigmoid"] * extractor_layers,
                                   std=std, seed=rng, name="extractor")
        hidden = ["sigmoid"] * (head_layers - 1) + ["identity"]
        self.head_source = MLP.build([w] + pyramid_widths(w, d_source, head_layers), hidden,
                                     std=std, seed=rng, name="head_source")
        if share_heads:
            # item vectors of both domains are indexed by the same users
            if d_source != d_target:
                raise ValueError("shared heads need equal source and target output widths")
            self.head_target = self.head_source
        else:
            self.head_target = MLP.build([w] + pyramid_widths(w, d_target, head_layers), hidden,
                                         std=std, seed=rng, name="head_target")
        self.share_heads = share_heads
        self.classifier = MLP.build([w, max(1, w // 2), 1], ["sigmoid", "sigmoid"],
                                    std=std, seed=rng, name="classifier")

    @property
    def k(self) -> int:
        return self.extractor.n_in

    def subnets(self) -> dict[str, MLP]:
        return {"extractor": self.extractor, "head_source": self.head_source,
                "head_target": self.head_target, "classifier": self.classifier}

    def params(self):
        seen, out = set(), []
        for net in self.subnets().values():
            if id(net) not in seen:
                seen.add(id(net))
                out.extend(net.params())
        return out

    def tensors(self) -> dict[str, np.ndarray]:
        return params_to_tensors(self.params())

    def load(self, tensors) -> None:
        load_into(self.params(), tensors)

    def head(self, domain: str) -> MLP:
        if domain == "source":
            return self.head_source
        if domain == "target":
            return self.head_target
        raise ValueError(f"unknown domain {domain!r}")

    def manifest(self) -> dict:
        return {"variant": self.variant, "k": self.k, "mu": self.mu, "share_heads": self.share_heads,
                "subnets": {name: {"widths": net.widths,
                                   "activations": [l.activation for l in net.layers],
                                   "tensors": [p.name for p in net.params()]}
                            for name, net in self.subnets().items()}}


@dataclass
class Sample:
    """One training example: an embedding plus the rating vector(s) it must reconstruct.

    ``values``/``mask`` are the entity's ratings in its own domain. For shared
    users, ``cross_values``/``cross_mask`` may carry the same user's ratings in
    the other domain.
    """

    embedding: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    label: int
    entity: int = -1
    cross_values: np.ndarray | None = None
    cross_mask: np.ndarray | None = None


@dataclass
class SampleBatch:
    emb: np.ndarray
    label: np.ndarray
    src_values: np.ndarray
    src_mask: np.ndarray
    tgt_values: np.ndarray
    tgt_mask: np.ndarray

    @classmethod
    def stack(cls, samples: Sequence[Sample], d_source: int, d_target: int) -> "SampleBatch":
        if not samples:
            raise ValueError("empty sample list")
        n = len(samples)
        out = cls(np.vstack([s.embedding for s in samples]),
                  np.array([s.label for s in samples], dtype=np.float64),
                  np.zeros((n, d_source)), np.zeros((n, d_source)),
                  np.zeros((n, d_target)), np.zeros((n, d_target)))
        for j, s in enumerate(samples):
            if s.label not in (0, 1):
                raise ValueError("domain label must be 0 or 1")
            own_v, own_m = (out.src_values, out.src_mask) if s.label == 0 else (out.tgt_values, out.tgt_mask)
            own_v[j], own_m[j] = s.values, s.mask
            if s.cross_mask is not None:
                oth_v, oth_m = (out.tgt_values, out.tgt_mask) if s.label == 0 else (out.src_values, out.src_mask)
                oth_v[j], oth_m[j] = s.cross_values, s.cross_mask
        return out

    def __len__(self) -> int:
        return self.emb.shape[0]


class Outputs(NamedTuple):
    y_source: np.ndarray
    y_target: np.ndarray
    c_hat: np.ndarray
    caches: dict


def forward(net: DARecNet, emb: np.ndarray) -> Outputs:
    emb = np.asarray(emb, dtype=np.float64)
    if emb.shape[-1] != net.k:
        raise ValueError(f"embedding length {emb.shape[-1]} != extractor input {net.k}")
    feats, c_f = net.extractor.forward(emb)
    ys, c_s = net.head_source.forward(feats)
    yt, c_t = net.head_target.forward(feats)
    cls_in = grl(feats, net.mu) if net.variant == "U" else feats
    c_hat, c_c = net.classifier.forward(cls_in)
    return Outputs(ys, yt, c_hat[..., 0], {"extractor": c_f, "head_source": c_s,
                                          "head_target": c_t, "classifier": c_c})


class LossParts(NamedTuple):
    pred_source: float
    pred_target: float
    classifier: float
    reg: float

    @property
    def total(self) -> float:
        return self.pred_source + self.pred_target + self.classifier + self.reg


def bce(c_hat: np.ndarray, c: np.ndarray) -> np.ndarray:
    p = np.clip(c_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(c * np.log(p) + (1.0 - c) * np.log(1.0 - p))


def classifier_weight(variant: str, mu: float) -> float:
    """Weight of the BCE term in the scalar objective.

    With reversal the coefficient lives in the GRL, so the classifier itself
    descends plain BCE; without it, ``mu`` scales the term directly.
    """
    return 1.0 if variant == "U" else mu


def darec_loss(net: DARecNet, batch: SampleBatch, w: LossWeights, backward: bool = False,
               outputs: Outputs | None = None) -> LossParts:
    """Masked squared error of both heads (target weighted by ``beta``), the domain
    classifier's cross-entropy and ``lam`` times the squared parameter norm.

    A head contributes only where its mask is set, so a sample without ratings
    in a domain leaves that head untouched. With ``backward=True`` gradients
    are accumulated into the parameters; for variant ``"U"`` the extractor
    receives the classifier gradient through the reversal layer.
    """
    out = outputs if outputs is not None else forward(net, batch.emb)
    xs = np.where(batch.src_mask > 0, batch.src_values, 0.0)
    xt = np.where(batch.tgt_mask > 0, batch.tgt_values, 0.0)
    rs = (out.y_source - xs) * batch.src_mask
    rt = (out.y_target - xt) * batch.tgt_mask
    cw = classifier_weight(net.variant, w.mu)
    parts = LossParts(float(np.sum(rs * rs)), w.beta * float(np.sum(rt * rt)),
                      cw * float(np.sum(bce(out.c_hat, batch.label))),
                      w.lam * squared_norm(net.params()))
    if backward:
        g_feat = net.head_source.backward(out.caches["head_source"], 2.0 * rs)
        g_feat = g_feat + net.head_target.backward(out.caches["head_target"], 2.0 * w.beta * rt)
        p = out.c_hat
        inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
        safe = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
        g_c = cw * np.where(inside, (safe - batch.label) / (safe * (1.0 - safe)), 0.0)
        g_cls_in = net.classifier.backward(out.caches["classifier"], g_c[..., None])
        g_feat = g_feat + (grl_backward(g_cls_in, net.mu) if net.variant == "U" else g_cls_in)
        net.extractor.backward(out.caches["extractor"], g_feat)
        add_l2_grad(net.params(), w.lam)
    return parts


def interleave(src: Sequence, tgt: Sequence, seed) -> list:
    """Alternate shuffled source and target items, S, T, S, T, ...

    The shorter list is cycled with a fresh shuffle on each wrap until the
    longer one is used up, so the longer list appears exactly once.
    """
    if len(src) == 0 or len(tgt) == 0:
        raise ValueError("interleave needs two non-empty lists")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = max(len(src), len(tgt))

    def cycled(items):
        out = []
        while len(out) < n:
            out.extend(items[j] for j in rng.permutation(len(items)))
        return out[:n]

    a, b = cycled(list(src)), cycled(list(tgt))
    stream = []
    for x, y in zip(a, b):
        stream.append(x)
        stream.append(y)
    return stream


@dataclass
class DomainSamples:
    """All training entities of one domain, addressed by row ordinal.

    ``own`` holds the rows' ratings in this domain; ``cross`` (optional) the
    same entities' ratings in the other domain, which exists only when the
    entities are shared users.
    """

    embeddings: np.ndarray
    label: int
    own: RatingMatrix
    cross: RatingMatrix | None = None

    def __post_init__(self):
        if self.embeddings.shape[0] != self.own.n_users:
            raise ValueError("one embedding row per rating row required")
        if self.cross is not None and self.cross.n_users != self.own.n_users:
            raise ValueError("cross-domain rows must align with own rows")

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    def sample(self, e: int) -> Sample:
        v, m = self.own.rows_dense([e])
        cv = cm = None
        if self.cross is not None:
            cv, cm = self.cross.rows_dense([e])
            cv, cm = cv[0], cm[0]
        return Sample(self.embeddings[e], v[0], m[0], self.label, e, cv, cm)


def gather_batch(source: DomainSamples, target: DomainSamples,
                 picks: Sequence[tuple[int, int]]) -> SampleBatch:
    """Dense batch for a list of (label, entity) picks, preserving their order."""
    d_s = source.own.n_items
    d_t = target.own.n_items
    n = len(picks)
    labels = np.array([c for c, _ in picks], dtype=np.float64)
    ents = np.array([e for _, e in picks], dtype=np.int64)
    batch = SampleBatch(np.empty((n, source.embeddings.shape[1])), labels,
                        np.zeros((n, d_s)), np.zeros((n, d_s)),
                        np.zeros((n, d_t)), np.zeros((n, d_t)))
    for dom, c in ((source, 0), (target, 1)):
        sel = np.flatnonzero(labels == c)
        if len(sel) == 0:
            continue
        rows = ents[sel]
        batch.emb[sel] = dom.embeddings[rows]
        own_v, own_m = dom.own.rows_dense(rows)
        if c == 0:
            batch.src_values[sel], batch.src_mask[sel] = own_v, own_m
        else:
            batch.tgt_values[sel], batch.tgt_mask[sel] = own_v, own_m
        if dom.cross is not None:
            cv, cm = dom.cross.rows_dense(rows)
            if c == 0:
                batch.tgt_values[sel], batch.tgt_mask[sel] = cv, cm
            else:
                batch.src_values[sel], batch.src_mask[sel] = cv, cm
    return batch


@dataclass
class DARecHistory:
    loss: list[float] = field(default_factory=list)
    classifier_loss: list[float] = field(default_factory=list)
    val_rmse: list[tuple[int, float]] = field(default_factory=list)
    best_epoch: int | None = None


def train_darec(net: DARecNet, source: DomainSamples, target: DomainSamples, w: LossWeights,
                lr: float = 1e-3, batch_size: int = 64, epochs: int = 100, seed: int = 0,
                val_fn: Callable[[DARecNet], float] | None = None, eval_every: int = 10,
                patience: int | None = None) -> DARecHistory:
    """Mini-batch Adam over the interleaved source/target stream.

    One optimizer updates every parameter; for variant ``"U"`` the adversarial
    behaviour comes entirely from the reversal layer. ``val_fn`` (lower is
    better) enables best-checkpoint selection every ``eval_every`` epochs.
    """
    if net.mu != w.mu:
        raise ValueError("network GRL coefficient and loss weights disagree on mu")
    hist = DARecHistory()
    if epochs <= 0:
        return hist
    rng = rng_stream(seed, "darec.interleave")
    state = AdamState(lr=lr)
    params = net.params()
    src_ids = [(0, e) for e in range(len(source))]
    tgt_ids = [(1, e) for e in range(len(target))]
    best, best_score, stale = None, np.inf, 0
    for epoch in range(epochs):
        stream = interleave(src_ids, tgt_ids, rng)
        total = cls_total = 0.0
        for start in range(0, len(stream), batch_size):
            batch = gather_batch(source, target, stream[start:start + batch_size])
            zero_grads(params)
            parts = darec_loss(net, batch, w, backward=True)
            adam_step(params, state)
            total += parts.total
            cls_total += parts.classifier
        if not np.isfinite(total):
            raise FloatingPointError(f"DARec loss diverged at epoch {epoch}")
        hist.loss.append(total)
        hist.classifier_loss.append(cls_total)
        if val_fn is not None and ((epoch + 1) % eval_every == 0 or epoch + 1 == epochs):
            score = val_fn(net)
            hist.val_rmse.append((epoch + 1, score))
            if score < best_score:
                best_score, stale = score, 0
                best = {k: v.copy() for k, v in net.tensors().items()}
                hist.best_epoch = epoch + 1
            else:
                stale += 1
                if patience is not None and stale >= patience:
                    break
    if best is not None:
        net.load(best)
    return hist


def train_udarec(net: DARecNet, source: DomainSamples, target: DomainSamples,
                 w: LossWeights, **kw) -> DARecHistory:
    if net.variant != "U":
        raise ValueError("train_udarec needs a variant 'U' network")
    return train_darec(net, source, target, w, **kw)


def train_idarec(net: DARecNet, source: DomainSamples, target: DomainSamples,
                 w: LossWeights, **kw) -> DARecHistory:
    if net.variant != "I":
        raise ValueError("train_idarec needs a variant 'I' network")
    return train_darec(net, source, target, w, **kw)


def predict(net: DARecNet, emb: np.ndarray, domain: str,
            clip: tuple[float, float] | None = (1.0, 5.0)) -> np.ndarray:
    """Output of the ``domain`` head for the given embedding(s), clipped to the rating scale."""
    head = net.head(domain)
    y = head(net.extractor(np.asarray(emb, dtype=np.float64)))
    return np.clip(y, *clip) if clip is not None else y


def classifier_scores(net: DARecNet, emb: np.ndarray) -> np.ndarray:
    return net.classifier(net.extractor(np.asarray(emb, dtype=np.float64)))[..., 0]


def classifier_accuracy(net: DARecNet, emb: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of samples whose rounded classifier output equals the label (0.5 rounds to 0)."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("no samples to score")
    pred = (classifier_scores(net, emb) > 0.5).astype(int)
    return float(np.mean(pred == labels))
