"""Modality encoders and patient-modality multi-head attention fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm


class FusionError(ValueError):
    pass


@dataclass
class FusionState:
    """Forward artifacts kept for export: stacked embeddings, per-head
    attention, and the fused embedding (all plain arrays)."""

    H: np.ndarray            # N x M x d
    attention: list          # K arrays of N x M
    Z: np.ndarray            # N x d


def init_encoder_params(graph, feature_dims, hidden_dim, embed_dim, rng,
                        prefix="enc"):
    """Two-layer ReLU MLP per modality, He-style uniform fan-in init."""
    params = []
    for i, d_in in enumerate(feature_dims):
        w1 = graph.add_parameter(f"{prefix}{i}.w1", _he_uniform(rng, d_in, hidden_dim))
        b1 = graph.add_parameter(f"{prefix}{i}.b1", np.zeros(hidden_dim))
        w2 = graph.add_parameter(f"{prefix}{i}.w2", _he_uniform(rng, hidden_dim, embed_dim))
        b2 = graph.add_parameter(f"{prefix}{i}.b2", np.zeros(embed_dim))
        params.append((w1, b1, w2, b2))
    return params


def init_attention_params(graph, embed_dim, heads, rng, prefix="att"):
    """W_lin, per-head attention vectors (zero-initialized so epoch-0
    attention is uniform over available modalities), and a near-identity
    output projection."""
    if embed_dim % heads != 0:
        raise FusionError(f"head count {heads} does not divide dim {embed_dim}")
    d_h = embed_dim // heads
    w_lin = graph.add_parameter(f"{prefix}.w_lin", _he_uniform(rng, embed_dim, embed_dim))
    w_att = [graph.add_parameter(f"{prefix}.w_att{k}", np.zeros((d_h, 1)))
             for k in range(heads)]
    w_out = graph.add_parameter(
        f"{prefix}.w_out",
        np.eye(embed_dim) + rng.normal(0.0, 0.01, size=(embed_dim, embed_dim)))
    return {"w_lin": w_lin, "w_att": w_att, "w_out": w_out,
            "heads": heads, "d_h": d_h}


def _he_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def encode(modalities, enc_params):
    """Run each modality through its MLP encoder; returns a list of N x d tensors.

    Rows of patients missing a modality are computed on the zero
    placeholders but are zeroed out of every downstream quantity by the
    attention mask.
    """
    hs = []
    for x, (w1, b1, w2, b2) in zip(modalities, enc_params):
        x_t = x if isinstance(x, nm.Tensor) else nm.constant(x)
        h = nm.relu(nm.add(nm.matmul(x_t, w1), b1))
        hs.append(nm.add(nm.matmul(h, w2), b2))
    return hs


def _head_fuse(transformed, mask, w_att, lo, hi):
    """Single attention head over channel slice [lo, hi) of the transformed
    embeddings; returns (A tensor N x M, fused tensor N x d_h)."""
    cols = []
    slices = []
    for t in transformed:
        t_k = nm.slice_last_dim(t, lo, hi)
        slices.append(t_k)
        cols.append(nm.matmul(t_k, w_att))
    logits = nm.concat_last_dim(cols)
    att = nm.masked_softmax(logits, mask)
    fused = None
    for i, t_k in enumerate(slices):
        term = nm.rowwise_scale(t_k, nm.slice_last_dim(att, i, i + 1))
        fused = term if fused is None else nm.add(fused, term)
    return att, fused


def fuse_single_head(h_list, mask, w_lin, w_att):
    """Masked single-head attention fusion over W_lin-transformed embeddings."""
    _check_mask(mask, len(h_list))
    transformed = [nm.matmul(h, w_lin) for h in h_list]
    d = transformed[0].shape[1]
    return _head_fuse(transformed, mask, w_att, 0, d)


def fuse_multi_head(h_list, mask, att_params):
    """Multi-head fusion: W_lin transform, contiguous channel split across
    heads, per-head masked attention, concat, output projection.

    Returns (list of per-head attention tensors, fused N x d tensor).
    """
    _check_mask(mask, len(h_list))
    heads, d_h = att_params["heads"], att_params["d_h"]
    transformed = [nm.matmul(h, att_params["w_lin"]) for h in h_list]
    atts, fused = [], []
    for k in range(heads):
        a, z = _head_fuse(transformed, mask, att_params["w_att"][k],
                          k * d_h, (k + 1) * d_h)
        atts.append(a)
        fused.append(z)
    z = nm.concat_last_dim(fused) if heads > 1 else fused[0]
    return atts, nm.matmul(z, att_params["w_out"])


def equal_weight_fuse(h_list, mask):
    """Fusion ablation: plain mean of the available modality embeddings."""
    _check_mask(mask, len(h_list))
    m = np.asarray(mask, dtype=float)
    weights = m / m.sum(axis=1, keepdims=True)
    z = None
    for i, h in enumerate(h_list):
        term = nm.rowwise_scale(h, nm.constant(weights[:, i]))
        z = term if z is None else nm.add(z, term)
    return z


def _check_mask(mask, n_modalities):
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.shape[1] != n_modalities:
        raise FusionError("mask shape does not match modality count")
    if np.any(mask.sum(axis=1) < 1):
        raise FusionError("patient with all modalities missing")


def export_attention(state, patient_ids=None, modality_names=None):
    """Flatten attention weights to (patient_id, head, modality, weight) rows.

    Missing modalities are reported with weight 0.
    """
    n, m = state.attention[0].shape
    pids = patient_ids if patient_ids is not None else [f"p{j}" for j in range(n)]
    mods = modality_names if modality_names is not None else list(range(m))
    rows = []
    for k, att in enumerate(state.attention):
        for j in range(n):
            for i in range(m):
                rows.append((pids[j], k, mods[i], float(att[j, i])))
    return rows


def write_attention_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("patient_id,head,modality,weight\n")
        for pid, head, mod, w in rows:
            fh.write(f"{pid},{head},{mod},{w:.6f}\n")
