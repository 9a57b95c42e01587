"""End-to-end training loop, Adam with step decay, inductive evaluation
protocol, and the ablation / sweep / benchmark harnesses."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import datamodel as dm
from . import evalkit
from . import gnn
from . import graph as pg
from . import numerics as nm
from . import objective as obj


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class RunConfig:
    seed: int
    embed_dim: int = 128
    heads: int = 2
    encoder_hidden: int | None = None
    gnn_layers: int = 2
    sparsity_rate: float = 0.6
    dropout: float = 0.1
    lam: float = 0.1
    learning_rate: float = 3.2e-4
    epochs: int = 200
    lr_decay: float = 0.8
    decay_every: int = 20
    precision: str = "f64"  # f64 | f32
    range_checked: bool = False
    no_pmmha: bool = False
    no_gnn: bool = False
    no_edge_feature: bool = False
    no_kl: bool = False

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if self.precision not in ("f64", "f32"):
            raise ConfigError("precision must be f64 or f32")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if not (0.0 <= self.sparsity_rate < 1.0):
            raise ConfigError("sparsity_rate must be in [0, 1)")
        if not self.no_pmmha and self.embed_dim % self.heads != 0:
            raise ConfigError("head count must divide embedding dimension")
        if self.range_checked:
            if self.embed_dim not in (128, 256):
                raise ConfigError("embed_dim must be 128 or 256 in checked mode")
            if self.heads not in (1, 2, 4, 8):
                raise ConfigError("heads must be in {1,2,4,8} in checked mode")
            if not (0.50 <= self.sparsity_rate <= 0.95):
                raise ConfigError("sparsity_rate outside [0.50, 0.95]")
            if not (0.0 <= self.dropout <= 0.3):
                raise ConfigError("dropout outside [0, 0.3]")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def learning_rate_at(config, epoch):
    return config.learning_rate * config.lr_decay ** (epoch // config.decay_every)


@dataclass
class AdamState:
    """First/second moments per parameter with the optimizer's conventional
    constants (beta1 0.9, beta2 0.999, eps 1e-8)."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, values):
        return cls(m={k: np.zeros_like(a) for k, a in values.items()},
                   v={k: np.zeros_like(a) for k, a in values.items()})


def adam_step(values, grads, state, lr):
    """Standard bias-corrected Adam update; mutates values and state in place."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name!r}")
        g = g.astype(values[name].dtype, copy=False)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * (g * g)
        m_hat = state.m[name] / (1 - state.beta1 ** t)
        v_hat = state.v[name] / (1 - state.beta2 ** t)
        values[name] = values[name] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return values, state


class LabelGuard:
    """Label access instrumentation: reads outside the allowed index set are
    counted as violations (and raise in strict mode)."""

    def __init__(self, labels, allowed, strict=True):
        self._labels = np.asarray(labels)
        self._allowed = set(int(i) for i in np.asarray(allowed).ravel())
        self.reads = 0
        self.violations = 0
        self.strict = strict

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        self.reads += len(idx)
        bad = [int(i) for i in idx if int(i) not in self._allowed]
        if bad:
            self.violations += len(bad)
            if self.strict:
                raise RuntimeError(f"read of out-of-split label index {bad[:3]}")
        return self._labels[idx]


@dataclass
class TrainReport:
    loss_log: list = field(default_factory=list)  # (epoch, ce, kl, total, lr)
    train_seconds: float = 0.0
    config: dict = field(default_factory=dict)
    train_label_reads: int = 0
    label_violations: int = 0
    crossing_edges_in_train_view: int = 0
    final_train_metrics: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class TrainedModel:
    values: dict
    config: RunConfig
    feature_dims: list
    n_classes: int
    report: TrainReport

    def build(self):
        """Reinstantiate the parameter registry with the trained values."""
        params = gnn.init_model(self.feature_dims, self.n_classes, self.config,
                                np.random.default_rng(0))
        _cast_params(params.graph, self.config.dtype)
        params.graph.set_values(self.values)
        return params


def _cast_params(compute_graph, dtype):
    for p in compute_graph.params.values():
        p.data = p.data.astype(dtype)


def _count_crossing(g, tags, train_side):
    is_train = np.isin(tags, train_side)
    if len(g.edges) == 0:
        return 0
    return int((is_train[g.edges[:, 0]] != is_train[g.edges[:, 1]]).sum())


def train(ds, config, split_assignment, train_side=(dm.TRAIN, dm.VAL)):
    """Full training per the inductive protocol.

    The graph is built once; the training view drops every edge crossing to
    the test side. The input-space pair distribution P is fixed; Q is
    recomputed from the current fused embeddings each epoch.
    """
    dtype = config.dtype
    rng = np.random.default_rng(config.seed)

    sims = pg.pairwise_similarity(ds)
    g = pg.build_graph(ds, sims, config.sparsity_rate)
    g.split_tags = split_assignment.tags
    g_train = pg.inductive_filter(g, "train", sims=sims, train_side=train_side)
    view = gnn.GraphView.from_graph(g_train,
                                    edge_features_on=not config.no_edge_feature)

    train_idx = split_assignment.indices(*train_side)
    guard = LabelGuard(ds.labels, allowed=train_idx)
    y_train = guard.take(train_idx)

    lam = 0.0 if config.no_kl else config.lam
    p_mat = valid = None
    if lam > 0:
        p_mat, valid = obj.build_P(sims, train_idx)

    params = gnn.init_model([x.shape[1] for x in ds.modalities], ds.class_count,
                            config, rng)
    _cast_params(params.graph, dtype)
    mods = [x.astype(dtype) for x in ds.modalities]
    values = params.graph.values()
    adam = AdamState.for_params(values)

    report = TrainReport(config=config.to_dict())
    report.crossing_edges_in_train_view = _count_crossing(
        g_train, split_assignment.tags, train_side)

    started = time.perf_counter()
    for epoch in range(config.epochs):
        lr = learning_rate_at(config, epoch)
        logits, _, z_fused, _ = gnn.forward(params, mods, ds.mask, view, config,
                                            rng=rng, training=True)
        logits_train = nm.select_rows(logits, train_idx)
        ce = obj.ce_loss(logits_train, y_train)
        if lam > 0:
            z_tr = nm.select_rows(z_fused, train_idx)
            kl = obj.kl_alignment_loss(z_tr, p_mat.astype(dtype), valid)
            total = obj.total_loss(ce, kl, lam)
            kl_val = float(kl.data)
        else:
            total = ce
            kl_val = 0.0
        total_val = float(total.data)
        if not np.isfinite(total_val):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        grads = params.graph.backward(total)
        values, adam = adam_step(values, grads, adam, lr)
        params.graph.set_values(values)
        report.loss_log.append((epoch, float(ce.data), kl_val, total_val, lr))
    report.train_seconds = time.perf_counter() - started
    report.train_label_reads = guard.reads
    report.label_violations = guard.violations

    trained = TrainedModel(values={k: v.copy() for k, v in values.items()},
                           config=config,
                           feature_dims=[x.shape[1] for x in ds.modalities],
                           n_classes=ds.class_count, report=report)
    report.final_train_metrics = evaluate(trained, ds, split_assignment,
                                          dm.TRAIN)["metrics"]
    return trained, report


def evaluate(trained, ds, split_assignment, split_name,
             train_side=(dm.TRAIN, dm.VAL)):
    """Metrics on one split using the full-mode graph (crossing edges restored)
    so held-out nodes receive neighborhood messages. Dropout disabled."""
    config = trained.config
    if split_name == dm.TRAIN:
        idx = split_assignment.indices(*train_side)
    elif split_name == dm.VAL:
        idx = split_assignment.validation
    elif split_name == dm.TEST:
        idx = split_assignment.test
    else:
        raise ConfigError(f"unknown split {split_name!r}")
    if len(idx) == 0:
        raise ConfigError(f"split {split_name!r} is empty")

    sims = pg.pairwise_similarity(ds)
    g = pg.build_graph(ds, sims, config.sparsity_rate)
    view = gnn.GraphView.from_graph(g, edge_features_on=not config.no_edge_feature)
    params = trained.build()
    mods = [x.astype(config.dtype) for x in ds.modalities]
    logits, state, _, z_final = gnn.forward(params, mods, ds.mask, view, config,
                                            training=False)
    lg = logits.data[idx]
    shifted = lg - lg.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    preds = np.argmax(lg, axis=1)
    y = ds.labels[idx]
    metrics = evalkit.full_bundle(y, preds, probs, z_final.data[idx],
                                  ds.class_count)
    return {"metrics": metrics, "fusion_state": state,
            "embeddings": z_final.data, "logits": logits.data,
            "graph": g, "indices": idx}


# ---------------------------------------------------------------------------
# harnesses


ABLATIONS = {
    "full": {},
    "A1": {"no_pmmha": True},
    "A2": {"no_gnn": True},
    "A3": {"no_edge_feature": True},
    "A4": {"no_kl": True},
}


def run_ablation(ds, config, split_assignment):
    """Train the full model and the four component-removal variants under the
    same seed and split; returns per-variant metrics and loss logs."""
    results = {}
    for name, overrides in ABLATIONS.items():
        cfg = replace(config, **overrides)
        trained, report = train(ds, cfg, split_assignment)
        test = evaluate(trained, ds, split_assignment, dm.TEST)["metrics"]
        results[name] = {
            "test_metrics": test,
            "final_loss": report.loss_log[-1][3] if report.loss_log else None,
            "loss_log": report.loss_log,
            "param_count": sum(v.size for v in trained.values.values()),
        }
    return results


def _prepare(ds, seed, preprocess_kwargs=None):
    assignment = dm.split(ds, seed=seed)
    prepped = dm.preprocess(ds, split=assignment, **(preprocess_kwargs or {}))
    return prepped, assignment


def run_scenario_sweep(base_ds, kind, levels, repeats, config,
                       intact_modality=0, metric="macro_f1"):
    """Missingness curve: per level and repeat, mask, split, train, and score
    the test set. Returns row dicts (level, repeat, metric columns)."""
    rows = []
    for level in levels:
        for rep in range(repeats):
            seed = int(config.seed + 1000 * rep)
            spec = dm.ScenarioSpec(kind=kind if level > 0 else "none",
                                   intact_modality=intact_modality,
                                   ratio=float(level), seed=seed)
            masked = dm.apply_scenario(base_ds, spec)
            prepped, assignment = _prepare(masked, seed)
            cfg = replace(config, seed=seed)
            trained, _ = train(prepped, cfg, assignment)
            m = evaluate(trained, prepped, assignment, dm.TEST)["metrics"]
            row = {"level": float(level), "repeat": rep}
            row.update({k: v for k, v in m.items() if v is not None})
            rows.append(row)
    return rows


def summarize_sweep(rows, metric="macro_f1"):
    levels = sorted({r["level"] for r in rows})
    out = []
    for level in levels:
        vals = [r[metric] for r in rows if r["level"] == level and metric in r]
        out.append({"level": level, "mean": float(np.mean(vals)),
                    "sd": float(np.std(vals)), "n": len(vals)})
    return out


def run_scalability_bench(config, m_values=range(2, 11), mask_p=0.5, repeats=5,
                          n=500, features_per_modality=1000):
    """Wall-clock training time per modality count, plus a linear fit."""
    rows = []
    for m in m_values:
        for rep in range(repeats):
            seed = int(config.seed + 1000 * rep + m)
            ds = dm.gen_scalability(n=n, modalities=int(m),
                                    features_per_modality=features_per_modality,
                                    seed=seed)
            spec = dm.ScenarioSpec(kind="random_mask", ratio=mask_p, seed=seed)
            masked = dm.apply_scenario(ds, spec)
            prepped, assignment = _prepare(masked, seed)
            cfg = replace(config, seed=seed)
            _, report = train(prepped, cfg, assignment)
            rows.append({"M": int(m), "repeat": rep,
                         "seconds": report.train_seconds})
    fit = linear_fit([r["M"] for r in rows], [r["seconds"] for r in rows])
    return rows, fit


def linear_fit(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}


def run_lambda_sweep(ds, config, split_assignment, lam_values=(0.0, 0.05, 0.1,
                                                               0.25, 0.5, 1.0)):
    """Validation metrics per lambda, trained on the training set only so the
    validation set stays held out."""
    rows = []
    for lam in lam_values:
        cfg = replace(config, lam=float(lam), no_kl=False)
        trained, _ = train(ds, cfg, split_assignment, train_side=(dm.TRAIN,))
        m = evaluate(trained, ds, split_assignment, dm.VAL,
                     train_side=(dm.TRAIN,))["metrics"]
        row = {"lambda": float(lam)}
        row.update({k: v for k, v in m.items() if v is not None})
        rows.append(row)
    return rows


def run_sparsity_sweep(ds, config, split_assignment,
                       rates=(0.5, 0.6, 0.7, 0.8, 0.9)):
    """Validation metrics per graph sparsity rate (graph rebuilt per point)."""
    rows = []
    for rate in rates:
        cfg = replace(config, sparsity_rate=float(rate))
        trained, _ = train(ds, cfg, split_assignment, train_side=(dm.TRAIN,))
        m = evaluate(trained, ds, split_assignment, dm.VAL,
                     train_side=(dm.TRAIN,))["metrics"]
        row = {"sparsity_rate": float(rate)}
        row.update({k: v for k, v in m.items() if v is not None})
        rows.append(row)
    return rows
