"""GraphSAGE message passing with scalar edge features, and the MLP decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fusion as fu
from . import numerics as nm


class ModelError(ValueError):
    pass


@dataclass
class GraphView:
    """Precomputed sparse operators for one graph: a row selector gathering
    per-edge source embeddings and a per-target averaging matrix. Nodes with
    empty neighborhoods aggregate to the zero vector."""

    n_nodes: int
    gather: object       # E x N sparse
    average: object      # N x E sparse
    edge_feats: np.ndarray  # E x 1

    @classmethod
    def from_graph(cls, g, edge_features_on=True):
        src, dst, feat = g.directed()
        if not edge_features_on:
            feat = np.zeros_like(feat)
        return cls(
            n_nodes=g.n_nodes,
            gather=nm.row_selector_matrix(g.n_nodes, src),
            average=nm.edge_average_matrix(g.n_nodes, dst),
            edge_feats=feat.reshape(-1, 1),
        )


def init_sage_params(graph, d_in, d_out, layer, rng, prefix="sage"):
    w_root = graph.add_parameter(f"{prefix}{layer}.w_root",
                                 fu._he_uniform(rng, d_in, d_out))
    w_msg = graph.add_parameter(f"{prefix}{layer}.w_msg",
                                fu._he_uniform(rng, d_in + 1, d_out))
    w_agg = graph.add_parameter(f"{prefix}{layer}.w_agg",
                                fu._he_uniform(rng, d_out, d_out))
    return {"w_root": w_root, "w_msg": w_msg, "w_agg": w_agg}


def init_decoder_params(graph, d_in, hidden, n_classes, rng, prefix="dec"):
    return {
        "w1": graph.add_parameter(f"{prefix}.w1", fu._he_uniform(rng, d_in, hidden)),
        "b1": graph.add_parameter(f"{prefix}.b1", np.zeros(hidden)),
        "w2": graph.add_parameter(f"{prefix}.w2", fu._he_uniform(rng, hidden, n_classes)),
        "b2": graph.add_parameter(f"{prefix}.b2", np.zeros(n_classes)),
    }


def sage_layer(z, view, params):
    """One GraphSAGE step: ReLU(W_root z_u + W_agg Mean(W_msg [z_v || e_uv]))."""
    if z.shape[0] != view.n_nodes:
        raise ModelError("embedding row count does not match graph")
    gathered = nm.sparse_matmul_const(view.gather, z)
    msgs_in = nm.concat_last_dim([gathered, nm.constant(view.edge_feats)])
    msgs = nm.matmul(msgs_in, params["w_msg"])
    agg = nm.matmul(nm.sparse_matmul_const(view.average, msgs), params["w_agg"])
    root = nm.matmul(z, params["w_root"])
    return nm.relu(nm.add(root, agg))


def decode(z, dec_params):
    h = nm.relu(nm.add(nm.matmul(z, dec_params["w1"]), dec_params["b1"]))
    return nm.add(nm.matmul(h, dec_params["w2"]), dec_params["b2"])


def decoder_only_forward(z, dec_params):
    """Ablation path: decoder applied directly to the fused embedding."""
    return decode(z, dec_params)


@dataclass
class ModelParams:
    """All learnable pieces plus their registry."""

    graph: nm.ComputeGraph
    encoders: list
    attention: dict | None
    sage: list
    decoder: dict


def init_model(feature_dims, n_classes, config, rng):
    """Build the parameter registry for the full pipeline under a RunConfig."""
    g = nm.ComputeGraph()
    hidden = config.encoder_hidden or config.embed_dim
    encoders = fu.init_encoder_params(g, feature_dims, hidden, config.embed_dim, rng)
    attention = None
    if not config.no_pmmha:
        attention = fu.init_attention_params(g, config.embed_dim, config.heads, rng)
    sage = []
    if not config.no_gnn:
        for layer in range(config.gnn_layers):
            sage.append(init_sage_params(g, config.embed_dim, config.embed_dim,
                                         layer, rng))
    decoder = init_decoder_params(g, config.embed_dim,
                                  max(2, config.embed_dim // 2), n_classes, rng)
    return ModelParams(graph=g, encoders=encoders, attention=attention,
                       sage=sage, decoder=decoder)


def forward(params, modalities, mask, view, config, rng=None, training=False):
    """Full pipeline: encode, fuse, message-pass, decode.

    Returns (logits tensor, FusionState, fused embedding tensor, final
    embedding tensor).
    """
    drop = config.dropout if training else 0.0
    hs = fu.encode(modalities, params.encoders)
    if drop > 0:
        hs = [nm.dropout(h, drop, rng) for h in hs]
    if params.attention is None:
        atts, z = [], fu.equal_weight_fuse(hs, mask)
    else:
        atts, z = fu.fuse_multi_head(hs, mask, params.attention)
    state = fu.FusionState(
        H=np.stack([h.data for h in hs], axis=1),
        attention=[a.data for a in atts],
        Z=z.data,
    )
    z_out = z
    for layer_params in params.sage:
        z_out = sage_layer(z_out, view, layer_params)
        if drop > 0:
            z_out = nm.dropout(z_out, drop, rng)
    logits = decode(z_out, params.decoder)
    return logits, state, z, z_out
