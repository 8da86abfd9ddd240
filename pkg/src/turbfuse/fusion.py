"""Dual-branch feature fusion: nested cross/self-attention with a residual.

Each face contributes a single 512-d (desk scale: 64-d) vector, so attention
runs over length-1 token sequences; batch items never attend to each other.
The default path (cross-attention first, role variant ``d``, depth 1,
residual on) computes

    fused_hq = SA1(CA1(query=hq, kv=lq))
    fused_lq = SA2(CA2(query=lq, kv=hq))
    fusion   = FFN(CA3(query=fused_hq, kv=fused_lq))
    out      = lq + fusion

where lq is the frozen-branch feature and hq the trainable-branch feature.
Variants ``a``/``b`` use a single cross-attention (CA3) directly on the raw
features; ``c`` swaps CA3's query/key-value roles; ``self_first`` applies
the self-attention blocks to each branch before the stage-one crosses.
Cascading feeds the stage output back as the lq-side input (hq fixed); all
stages share one parameter bundle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

ROLE_VARIANTS = ("a", "b", "c", "d")
ATTENTION_ORDERS = ("cross_first", "self_first")

_NORM_BLOCKS = ("ca1", "ca2", "ca3", "sa1", "sa2", "ffn")


@dataclass
class FusionConfig:
    """Architectural switches of the fusion structure (all ablatable)."""

    d_model: int = 512
    n_heads: int = 8
    ffn_hidden: int | None = None  # default 4*d_model
    attention_order: str = "cross_first"
    role_variant: str = "d"
    cascade_depth: int = 1
    use_residual: bool = True
    block_norm: bool = True
    normalize_inputs: bool = False
    dropout: float = 0.0

    def __post_init__(self):
        if self.ffn_hidden is None:
            self.ffn_hidden = 4 * self.d_model
        if self.d_model <= 0 or self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.ffn_hidden <= 0:
            raise ConfigError("ffn_hidden must be positive")
        if self.attention_order not in ATTENTION_ORDERS:
            raise ConfigError(f"attention_order must be one of {ATTENTION_ORDERS}")
        if self.role_variant not in ROLE_VARIANTS:
            raise ConfigError(f"role_variant must be one of {ROLE_VARIANTS}")
        if self.cascade_depth < 1:
            raise ConfigError("cascade_depth must be >= 1")
        if self.dropout != 0.0:
            raise ConfigError("dropout is fixed at 0.0")


@dataclass
class MhaParams:
    """Weights of one multi-head attention instance (bias=True throughout)."""

    n_heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor
    dropout: float = 0.0

    @classmethod
    def init(cls, rng, d_model, n_heads, dtype=np.float32, trainable=True):
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        scale = 1.0 / np.sqrt(d_model)

        def w():
            return Tensor(rng.uniform(-scale, scale, (d_model, d_model)), requires_grad=trainable, dtype=dtype)

        def b():
            return Tensor(np.zeros(d_model), requires_grad=trainable, dtype=dtype)

        return cls(n_heads, w(), w(), w(), w(), b(), b(), b(), b())

    @property
    def d_model(self):
        return self.wq.shape[0]

    def tensors(self, prefix=""):
        names = ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")
        return {prefix + n: getattr(self, n) for n in names}


@dataclass
class FusionParams:
    """All trainable state of the fusion structure.

    CA1/CA2 and SA1/SA2 are independent instances with identical shapes;
    norms holds (gamma, beta) pairs per block when block_norm is on.
    """

    ca1: MhaParams
    ca2: MhaParams
    ca3: MhaParams
    sa1: MhaParams
    sa2: MhaParams
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    norms: dict = field(default_factory=dict)

    @classmethod
    def init(cls, rng, cfg: FusionConfig, dtype=np.float32, trainable=True):
        d, h = cfg.d_model, cfg.n_heads
        mha = lambda: MhaParams.init(rng, d, h, dtype=dtype, trainable=trainable)
        s1 = 1.0 / np.sqrt(d)
        s2 = 1.0 / np.sqrt(cfg.ffn_hidden)
        params = cls(
            ca1=mha(),
            ca2=mha(),
            ca3=mha(),
            sa1=mha(),
            sa2=mha(),
            ffn_w1=Tensor(rng.uniform(-s1, s1, (d, cfg.ffn_hidden)), requires_grad=trainable, dtype=dtype),
            ffn_b1=Tensor(np.zeros(cfg.ffn_hidden), requires_grad=trainable, dtype=dtype),
            ffn_w2=Tensor(rng.uniform(-s2, s2, (cfg.ffn_hidden, d)), requires_grad=trainable, dtype=dtype),
            ffn_b2=Tensor(np.zeros(d), requires_grad=trainable, dtype=dtype),
        )
        if cfg.block_norm:
            for name in _NORM_BLOCKS:
                gamma = Tensor(np.ones(d), requires_grad=trainable, dtype=dtype)
                beta = Tensor(np.zeros(d), requires_grad=trainable, dtype=dtype)
                params.norms[name] = (gamma, beta)
        return params

    def tensors(self, prefix=""):
        out = {}
        for name in ("ca1", "ca2", "ca3", "sa1", "sa2"):
            out.update(getattr(self, name).tensors(prefix + name + "."))
        for name in ("ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
            out[prefix + name] = getattr(self, name)
        for block, (gamma, beta) in self.norms.items():
            out[prefix + "norm." + block + ".gamma"] = gamma
            out[prefix + "norm." + block + ".beta"] = beta
        return out


def _check_token(x, d_model):
    if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != d_model:
        raise ShapeError(f"expected (B, 1, {d_model}) tokens, got {x.shape}")


def multi_head_attention(q_in, k_in, v_in, p: MhaParams, return_weights=False):
    """Scaled dot-product attention over (B, S, D) token sequences.

    Scale is 1/sqrt(d_model/n_heads); heads are concatenated through the
    output projection. With sequence length 1 the softmax weight over the
    single key is exactly 1 and the output reduces to the value/output
    projection composition.
    """
    d = p.d_model
    for x in (q_in, k_in, v_in):
        if x.ndim != 3 or x.shape[-1] != d:
            raise ShapeError(f"attention inputs must be (B, S, {d}), got {x.shape}")
    if q_in.shape[0] != k_in.shape[0] or k_in.shape != v_in.shape:
        raise ShapeError("query/key/value batch shapes are inconsistent")
    bsz, sq, _ = q_in.shape
    sk = k_in.shape[1]
    h = p.n_heads
    dh = d // h

    def split(x, s):
        x = T.reshape(x, (bsz, s, h, dh))
        return T.transpose(x, (0, 2, 1, 3))  # (B, H, S, dh)

    q = split(T.linear(q_in, p.wq, p.bq), sq)
    k = split(T.linear(k_in, p.wk, p.bk), sk)
    v = split(T.linear(v_in, p.wv, p.bv), sk)

    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    weights = T.softmax(scores, axis=-1)  # (B, H, Sq, Sk)
    ctx = T.matmul(weights, v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (bsz, sq, d))
    out = T.linear(ctx, p.wo, p.bo)
    if return_weights:
        return out, weights.data
    return out


def _post(x_res, branch, p: FusionParams, cfg: FusionConfig, block):
    y = T.add(x_res, branch)
    if cfg.block_norm:
        gamma, beta = p.norms[block]
        y = T.layer_norm(y, gamma, beta)
    return y


def cross_attention_block(x_q, x_kv, mha: MhaParams, p: FusionParams, cfg: FusionConfig, block):
    """attn(x_q, x_kv) + residual on the query side, optional post-norm."""
    attn = multi_head_attention(x_q, x_kv, x_kv, mha)
    return _post(x_q, attn, p, cfg, block)


def self_attention_block(x, mha: MhaParams, p: FusionParams, cfg: FusionConfig, block):
    return cross_attention_block(x, x, mha, p, cfg, block)


def feed_forward(x, p: FusionParams, cfg: FusionConfig):
    """dense -> ReLU -> dense with residual add and optional post-norm."""
    h = T.relu(T.linear(x, p.ffn_w1, p.ffn_b1))
    y = T.linear(h, p.ffn_w2, p.ffn_b2)
    return _post(x, y, p, cfg, "ffn")


def _final_cross(x_q, x_kv, p: FusionParams, cfg: FusionConfig):
    """CA3 as bare attention (no query-side residual), optional post-norm.

    Keeping the final cross-attention residual-free makes the fusion branch
    vanish exactly when its output projection and the FFN are zeroed, which
    is what guarantees the frozen-baseline lower bound.
    """
    attn = multi_head_attention(x_q, x_kv, x_kv, p.ca3)
    if cfg.block_norm:
        gamma, beta = p.norms["ca3"]
        attn = T.layer_norm(attn, gamma, beta)
    return attn


def _l2norm_rows(x):
    sq = T.tensor_sum(T.mul(x, x), axis=-1, keepdims=True)
    return T.mul(x, T.power(sq, -0.5))


def _fusion_stage(x_f, x_a, p: FusionParams, cfg: FusionConfig):
    """One full fusion stage on (B, 1, D) tokens; returns the stage output."""
    if cfg.role_variant in ("a", "b"):
        q, kv = (x_f, x_a) if cfg.role_variant == "a" else (x_a, x_f)
        return feed_forward(_final_cross(q, kv, p, cfg), p, cfg)

    if cfg.attention_order == "cross_first":
        f_aff = self_attention_block(cross_attention_block(x_a, x_f, p.ca1, p, cfg, "ca1"), p.sa1, p, cfg, "sa1")
        f_faa = self_attention_block(cross_attention_block(x_f, x_a, p.ca2, p, cfg, "ca2"), p.sa2, p, cfg, "sa2")
    else:  # self_first: each branch self-attends before the stage-one crosses
        a_sa = self_attention_block(x_a, p.sa1, p, cfg, "sa1")
        f_sa = self_attention_block(x_f, p.sa2, p, cfg, "sa2")
        f_aff = cross_attention_block(a_sa, f_sa, p.ca1, p, cfg, "ca1")
        f_faa = cross_attention_block(f_sa, a_sa, p.ca2, p, cfg, "ca2")

    if cfg.role_variant == "d":
        fused = _final_cross(f_aff, f_faa, p, cfg)
    else:  # variant c: fused-lq features drive the query
        fused = _final_cross(f_faa, f_aff, p, cfg)
    return feed_forward(fused, p, cfg)


def fuse(f_f, f_a, p: FusionParams, cfg: FusionConfig):
    """Fuse frozen-branch and trainable-branch features into one embedding.

    f_f, f_a: (B, D). Returns (B, D): the residual-combined feature when
    cfg.use_residual, otherwise the raw fusion output. cascade_depth > 1
    repeats the stage, feeding each output back as the f_f-side input.
    """
    if f_f.ndim != 2 or f_f.shape != f_a.shape:
        raise ShapeError(f"fuse expects matching (B, D) inputs, got {f_f.shape} and {f_a.shape}")
    if f_f.shape[1] != cfg.d_model:
        raise ConfigError(f"inputs have dim {f_f.shape[1]} but config d_model={cfg.d_model}")
    bsz, d = f_f.shape
    x_f = T.reshape(f_f, (bsz, 1, d))
    x_a = T.reshape(f_a, (bsz, 1, d))
    if cfg.normalize_inputs:
        x_f = _l2norm_rows(x_f)
        x_a = _l2norm_rows(x_a)

    out = None
    for _ in range(cfg.cascade_depth):
        fusion = _fusion_stage(x_f, x_a, p, cfg)
        out = T.add(x_f, fusion) if cfg.use_residual else fusion
        x_f = out
    return T.reshape(out, (bsz, d))


def zero_fusion_output(p: FusionParams):
    """Force the fusion branch to emit exactly zero (lower-bound contract).

    Zeroes CA3's output projection/bias, both FFN layers, and (when
    present) the ca3/ffn norm affine pairs, so the stage output is
    identically zero and ``fuse`` returns f_f unchanged with the residual
    on, for every role variant and cascade depth.
    """
    for t in (p.ca3.wo, p.ca3.bo, p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2):
        t.data[...] = 0.0
    for block in ("ca3", "ffn"):
        if block in p.norms:
            gamma, beta = p.norms[block]
            gamma.data[...] = 0.0
            beta.data[...] = 0.0
