"""Experiment orchestration: synthetic data, the train/evaluate pipeline, sweeps."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autorec as ar
from .adaptation import (DARecNet, DomainSamples, LossWeights, classifier_accuracy,
                         predict, train_darec)
from .config import SynthConfig, TrainConfig
from .nncore import rng_stream
from .ratings import AlignedDataset, RatingMatrix, Split, split

log = logging.getLogger(__name__)


def rmse(pairs) -> float:
    """Root mean squared residual over (prediction, truth) pairs."""
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("rmse of an empty list")
    arr = arr.reshape(-1, 2)
    return float(np.sqrt(np.mean((arr[:, 0] - arr[:, 1]) ** 2)))


def round_half(x: np.ndarray) -> np.ndarray:
    return np.floor(x * 2.0 + 0.5) / 2.0


def synth_generate(cfg: SynthConfig) -> AlignedDataset:
    """Two item domains over one user set with correlated user tastes.

    Source ratings come from user factors ``u``; target ratings from
    ``rho * u + sqrt(1 - rho**2) * u'`` with ``u'`` independent. Factors are
    scaled so the bilinear signal has unit variance around 3, then noise is
    added and ratings are rounded to halves and clipped to [1, 5]. A user left
    without ratings in a domain receives one uniformly chosen rating.
    """
    rng = rng_stream(cfg.seed, "synth")
    scale = cfg.rank ** -0.25
    users = rng.normal(0.0, scale, (cfg.n_users, cfg.rank))
    other = rng.normal(0.0, scale, (cfg.n_users, cfg.rank))
    users_t = cfg.rho * users + np.sqrt(1.0 - cfg.rho ** 2) * other
    mats = []
    for name, n_items, density, uf in (("s", cfg.n_items_src, cfg.density_src, users),
                                       ("t", cfg.n_items_tgt, cfg.density_tgt, users_t)):
        items = rng.normal(0.0, scale, (n_items, cfg.rank))
        full = 3.0 + uf @ items.T + cfg.noise * rng.standard_normal((cfg.n_users, n_items))
        full = np.clip(round_half(full), 1.0, 5.0)
        observed = rng.random((cfg.n_users, n_items)) < density
        empty = np.flatnonzero(~observed.any(axis=1))
        if len(empty):
            log.info("synth: %d users had no %s-domain ratings; gave each one", len(empty), name)
            observed[empty, rng.integers(0, n_items, len(empty))] = True
        r, c = np.nonzero(observed)
        mats.append(RatingMatrix.from_entries(
            r, c, full[r, c], [f"u{j}" for j in range(cfg.n_users)],
            [f"{name}{j}" for j in range(n_items)]))
    return AlignedDataset(mats[0], mats[1])


@dataclass
class Report:
    variant: str
    config: dict
    rmse_target: float
    rmse_source: float
    classifier_accuracy: float
    baseline_rmse_target: float
    baseline_rmse_source: float
    test_users: int
    test_items: int
    epochs: int
    wall_seconds: float
    curves: dict = field(default_factory=dict)

    @property
    def gain(self) -> float:
        """Relative target RMSE reduction over the AutoRec-only baseline."""
        return 1.0 - self.rmse_target / self.baseline_rmse_target


@dataclass
class Prepared:
    """Split data oriented for one variant, plus trained AutoRec stages."""

    split: Split
    train: dict
    val: dict
    test: dict
    autorecs: dict
    embeddings: dict
    baselines: dict
    curves: dict


def _parts(data: AlignedDataset, sp: Split, orientation: str):
    out = {"train": {}, "val": {}, "test": {}}
    for dom in ("source", "target"):
        m = data.domain(dom)
        ds = sp.domain(dom)
        for part in out:
            sub = m.subset(getattr(ds, part))
            out[part][dom] = sub if orientation == "user" else sub.transpose()
    return out["train"], out["val"], out["test"]


def check_disjoint(sp: Split) -> None:
    """Watchdog: test entries must never overlap training or validation entries."""
    for dom in ("source", "target"):
        d = sp.domain(dom)
        if np.intersect1d(d.test, np.concatenate([d.train, d.val])).size:
            raise AssertionError(f"{dom}: test entries overlap training/validation entries")


def _autorec(cfg: TrainConfig, m: RatingMatrix, val: RatingMatrix, seed_tag: int,
             extra=None):
    return ar.train_autorec(m, cfg.k, alpha=cfg.alpha, lr=cfg.autorec_lr,
                            batch_size=cfg.autorec_batch, epochs=cfg.autorec_epochs,
                            seed=cfg.seed * 1000 + seed_tag, val=val, eval_every=cfg.eval_every,
                            patience=cfg.patience or None, extra=extra)


def prepare(cfg: TrainConfig, data: AlignedDataset) -> Prepared:
    """Split, train one AutoRec per domain (or a shared one) and extract embeddings."""
    sp = split(data, cfg.train_frac, cfg.val_frac, cfg.seed)
    check_disjoint(sp)
    train, val, test = _parts(data, sp, cfg.orientation)
    autorecs, curves, baselines = {}, {}, {}
    for tag, dom in enumerate(("source", "target")):
        autorecs[dom], hist = _autorec(cfg, train[dom], val[dom], tag)
        curves[f"autorec_{dom}"] = hist.loss
        baselines[dom] = evaluate_autorec(autorecs[dom], train[dom], test[dom])
    # item vectors of both domains live in the same user space, so one
    # autoencoder can be fitted on the union of items
    if cfg.shared_autorec and cfg.orientation == "item":
        shared, hist = _autorec(cfg, train["target"], val["target"], 2, extra=[train["source"]])
        curves["autorec_shared"] = hist.loss
        autorecs = {"source": shared, "target": shared}
    emb = {dom: ar.extract_embeddings(autorecs[dom], train[dom], dom, cfg.orientation)
           for dom in ("source", "target")}
    return Prepared(sp, train, val, test, autorecs, emb, baselines, curves)


def evaluate_autorec(p: ar.AutoRec, train: RatingMatrix, test: RatingMatrix) -> float:
    r, c, v = test.entries()
    if len(v) == 0:
        return float("nan")
    return rmse(np.column_stack([ar.predict_entries(p, train, r, c), v]))


def domain_samples(cfg: TrainConfig, prep: Prepared) -> tuple[DomainSamples, DomainSamples]:
    cross = cfg.variant == "U" and cfg.cross_domain
    tr = prep.train
    src = DomainSamples(prep.embeddings["source"].vectors, 0, tr["source"],
                        tr["target"] if cross else None)
    tgt = DomainSamples(prep.embeddings["target"].vectors, 1, tr["target"],
                        tr["source"] if cross else None)
    return src, tgt


def predict_entries(net: DARecNet, cfg: TrainConfig, prep: Prepared, domain: str,
                    rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Predicted ratings at (row, col) of the oriented ``domain`` matrix.

    For shared users the prediction may come from the user's own-domain
    embedding, the other domain's embedding, or the mean of both.
    """
    other = "target" if domain == "source" else "source"
    uniq, inv = np.unique(rows, return_inverse=True)
    sources = [domain]
    if cfg.variant == "U":
        sources = {"own": [domain], "cross": [other], "both": [domain, other]}[cfg.predict_from]
    head_out = np.mean([predict(net, prep.embeddings[s].vectors[uniq], domain, clip=None)
                        for s in sources], axis=0)
    return np.clip(head_out[inv, cols], 1.0, 5.0)


def evaluate_darec(net: DARecNet, cfg: TrainConfig, prep: Prepared, domain: str,
                   part: str = "test") -> float:
    m = getattr(prep, part)[domain]
    r, c, v = m.entries()
    if len(v) == 0:
        return float("nan")
    return rmse(np.column_stack([predict_entries(net, cfg, prep, domain, r, c), v]))


def build_network(cfg: TrainConfig, prep: Prepared) -> DARecNet:
    return DARecNet(cfg.k, prep.train["source"].n_items, prep.train["target"].n_items,
                    variant=cfg.variant, mu=cfg.mu, extractor_width=cfg.extractor_width,
                    share_heads=cfg.share_heads and cfg.orientation == "item",
                    seed=cfg.seed * 1000 + 7)


def fit_darec(cfg: TrainConfig, prep: Prepared):
    src, tgt = domain_samples(cfg, prep)
    net = build_network(cfg, prep)
    weights = LossWeights(cfg.beta, cfg.mu, cfg.lam)
    val_fn = None
    if prep.val["target"].nnz:
        val_fn = lambda n: evaluate_darec(n, cfg, prep, "target", "val")  # noqa: E731
    hist = train_darec(net, src, tgt, weights, lr=cfg.lr, batch_size=cfg.batch_size,
                       epochs=cfg.epochs, seed=cfg.seed * 1000 + 8, val_fn=val_fn,
                       eval_every=cfg.eval_every, patience=cfg.patience or None)
    return net, hist


def domain_accuracy(net: DARecNet, prep: Prepared) -> float:
    es, et = prep.embeddings["source"].vectors, prep.embeddings["target"].vectors
    labels = np.concatenate([np.zeros(len(es), int), np.ones(len(et), int)])
    return classifier_accuracy(net, np.vstack([es, et]), labels)


def run_experiment(cfg: TrainConfig, data: AlignedDataset, prep: Prepared | None = None) -> Report:
    """Split, embed, adapt, then score held-out target and source entries."""
    t0 = time.perf_counter()
    if prep is None:
        prep = prepare(cfg, data)
    net, hist = fit_darec(cfg, prep)
    check_disjoint(prep.split)
    test_t = prep.test["target"]
    r, c, _ = test_t.entries()
    users, items = (r, c) if cfg.orientation == "user" else (c, r)
    curves = dict(prep.curves)
    curves["darec_loss"] = hist.loss
    curves["darec_classifier_loss"] = hist.classifier_loss
    curves["darec_val_rmse"] = hist.val_rmse
    report = Report(
        variant=cfg.variant, config=asdict(cfg),
        rmse_target=evaluate_darec(net, cfg, prep, "target"),
        rmse_source=evaluate_darec(net, cfg, prep, "source"),
        classifier_accuracy=domain_accuracy(net, prep),
        baseline_rmse_target=prep.baselines["target"],
        baseline_rmse_source=prep.baselines["source"],
        test_users=len(np.unique(users)), test_items=len(np.unique(items)),
        epochs=len(hist.loss), wall_seconds=time.perf_counter() - t0, curves=curves)
    report.network = net  # not serialised; kept for checkpointing by callers
    return report


def sweep(cfg: TrainConfig, data: AlignedDataset, axis: str, values) -> list[Report]:
    """One independent, fully seeded experiment per value of ``axis``."""
    return [run_experiment(cfg.with_(**{axis: v}), data) for v in values]


def multi_seed(cfg: TrainConfig, synth: SynthConfig, seeds) -> list[Report]:
    """Fresh synthetic data and training seed per repeat."""
    out = []
    for s in seeds:
        data = synth_generate(SynthConfig(**{**asdict(synth), "seed": s}))
        out.append(run_experiment(cfg.with_(seed=s), data))
    return out


CSV_COLUMNS = ("variant", "k", "alpha", "beta", "mu", "lambda", "seed", "rmse_target",
               "rmse_source", "classifier_accuracy", "epochs", "wall_seconds")


def report_row(r: Report) -> dict:
    c = r.config
    return {"variant": r.variant, "k": c["k"], "alpha": c["alpha"], "beta": c["beta"],
            "mu": c["mu"], "lambda": c["lam"], "seed": c["seed"],
            "rmse_target": round(r.rmse_target, 6), "rmse_source": round(r.rmse_source, 6),
            "classifier_accuracy": round(r.classifier_accuracy, 6), "epochs": r.epochs,
            "wall_seconds": round(r.wall_seconds, 3)}


def format_report(r: Report) -> str:
    c = r.config
    return "\n".join([
        f"{r.variant}-DARec  seed={c['seed']}  k={c['k']}  mu={c['mu']:g}  beta={c['beta']:g}  "
        f"lambda={c['lam']:g}",
        f"  target RMSE      {r.rmse_target:.4f}   (AutoRec only {r.baseline_rmse_target:.4f}, "
        f"gain {100 * r.gain:+.2f}%)",
        f"  source RMSE      {r.rmse_source:.4f}   (AutoRec only {r.baseline_rmse_source:.4f})",
        f"  domain accuracy  {r.classifier_accuracy:.3f}",
        f"  test set         M={r.test_users} users, N={r.test_items} items",
        f"  epochs {r.epochs}, {r.wall_seconds:.1f}s",
    ])
