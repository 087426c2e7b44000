"""Post-layer-norm Transformer encoder in numpy with hand-written backprop.

Parameters live in a flat ``dict[str, np.ndarray]``. Layer ``j`` in the
names counts from the bottom (``layer0`` sits on the embeddings); the
fine-tuning schedule converts that to depth-from-top where needed.

Weight matrices are stored ``[in, out]`` so every projection is ``x @ W``.
The classifier head is the exception, ``head.weight`` is ``[K, d]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

LN_EPS = 1e-12
INIT_STD = 0.02
_NEG = -1e30


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        for name in ("vocab_size", "n_layers", "d_model", "n_heads", "d_ff", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def _truncated_normal(rng: np.random.Generator, shape, std=INIT_STD, dtype=np.float32):
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return (x * std).astype(dtype)


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes = {
        "embed.token": (cfg.vocab_size, d),
        "embed.position": (cfg.max_len, d),
        "embed.ln.gamma": (d,),
        "embed.ln.beta": (d,),
    }
    for j in range(cfg.n_layers):
        p = f"layer{j}."
        for proj in "qkvo":
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "ln1.gamma"] = (d,)
        shapes[p + "ln1.beta"] = (d,)
        shapes[p + "ffn.in.weight"] = (d, f)
        shapes[p + "ffn.in.bias"] = (f,)
        shapes[p + "ffn.out.weight"] = (f, d)
        shapes[p + "ffn.out.bias"] = (d,)
        shapes[p + "ln2.gamma"] = (d,)
        shapes[p + "ln2.beta"] = (d,)
    return shapes


def _init_array(name: str, shape, rng, dtype) -> np.ndarray:
    if name.endswith("gamma"):
        return np.ones(shape, dtype=dtype)
    if name.endswith("beta") or name.endswith("bias"):
        return np.zeros(shape, dtype=dtype)
    return _truncated_normal(rng, shape, dtype=dtype)


def init_params(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Encoder weights plus the MLM output bias, deterministic per ``rng`` state."""
    params = {n: _init_array(n, s, rng, dtype) for n, s in param_shapes(cfg).items()}
    params["mlm.bias"] = np.zeros(cfg.vocab_size, dtype=dtype)
    return params


def init_head(params: dict, n_classes: int, rng: np.random.Generator) -> dict:
    """Return a copy of ``params`` with a fresh classifier head and no MLM bias."""
    if n_classes < 2:
        raise ValueError("classifier head needs at least two classes")
    dtype = params["embed.token"].dtype
    d = params["embed.token"].shape[1]
    out = {k: v for k, v in params.items() if not k.startswith(("mlm.", "head."))}
    out["head.weight"] = _truncated_normal(rng, (n_classes, d), dtype=dtype)
    out["head.bias"] = np.zeros(n_classes, dtype=dtype)
    return out


def config_from_params(params: dict, n_heads: int, dropout: float = 0.0) -> EncoderConfig:
    vocab, d = params["embed.token"].shape
    n_layers = sum(1 for k in params if k.endswith("ln2.gamma"))
    return EncoderConfig(
        vocab_size=vocab,
        n_layers=n_layers,
        d_model=d,
        n_heads=n_heads,
        d_ff=params["layer0.ffn.in.weight"].shape[1],
        max_len=params["embed.position"].shape[0],
        dropout=dropout,
    )


# ---------------------------------------------------------------- primitives


def _layer_norm(x, gamma, beta):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xh = xc * inv
    return xh * gamma + beta, (xh, inv)


def _layer_norm_backward(dy, gamma, cache):
    xh, inv = cache
    dgamma = (dy * xh).sum(axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    dxh = dy * gamma
    dx = inv * (dxh - dxh.mean(-1, keepdims=True) - xh * (dxh * xh).mean(-1, keepdims=True))
    return dx, dgamma, dbeta


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _normal_cdf(x):
    return 0.5 * (1.0 + erf(x * _SQRT_HALF))


def gelu(x):
    return x * _normal_cdf(x)


def gelu_grad(x, cdf=None):
    if cdf is None:
        cdf = _normal_cdf(x)
    return cdf + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _dropout(x, rate, rng):
    if rng is None or rate == 0.0:
        return x, None
    keep = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.dtype)
    keep *= x.dtype.type(1.0 / (1.0 - rate))
    return x * keep, keep


def _wgrad(x, dy):
    """Sum over batch and positions of outer(x, dy): the weight gradient."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def attention_softmax(scores, key_mask):
    s = np.where(key_mask, scores, _NEG)
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


# ------------------------------------------------------------------ forward


def _split_heads(x, n_heads):
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def _layer_forward(params, j, h, key_mask, cfg, rng):
    p = f"layer{j}."
    rate = cfg.dropout
    q = _split_heads(h @ params[p + "attn.q.weight"] + params[p + "attn.q.bias"], cfg.n_heads)
    k = _split_heads(h @ params[p + "attn.k.weight"] + params[p + "attn.k.bias"], cfg.n_heads)
    v = _split_heads(h @ params[p + "attn.v.weight"] + params[p + "attn.v.bias"], cfg.n_heads)
    scale = h.dtype.type(1.0 / math.sqrt(cfg.head_dim))
    a = attention_softmax((q @ k.transpose(0, 1, 3, 2)) * scale, key_mask)
    a_drop, keep_a = _dropout(a, rate, rng)
    ctx = _merge_heads(a_drop @ v)
    o = ctx @ params[p + "attn.o.weight"] + params[p + "attn.o.bias"]
    o, keep_o = _dropout(o, rate, rng)
    h1, ln1 = _layer_norm(h + o, params[p + "ln1.gamma"], params[p + "ln1.beta"])
    f1 = h1 @ params[p + "ffn.in.weight"] + params[p + "ffn.in.bias"]
    cdf = _normal_cdf(f1)
    g = f1 * cdf
    f2 = g @ params[p + "ffn.out.weight"] + params[p + "ffn.out.bias"]
    f2, keep_f = _dropout(f2, rate, rng)
    h2, ln2 = _layer_norm(h1 + f2, params[p + "ln2.gamma"], params[p + "ln2.beta"])
    cache = dict(h=h, q=q, k=k, v=v, a=a, a_drop=a_drop, keep_a=keep_a, ctx=ctx,
                 keep_o=keep_o, ln1=ln1, h1=h1, f1=f1, cdf=cdf, g=g, keep_f=keep_f, ln2=ln2,
                 scale=scale)
    return h2, cache


def encode_batch(params, cfg: EncoderConfig, ids, lengths, rng=None, return_attention=False):
    """Run the encoder on an ``(B, n)`` id batch with per-row non-pad ``lengths``.

    ``rng`` switches on training mode (dropout); ``None`` is inference.
    Returns ``(z, cache)`` where ``z`` is ``(B, n, d)`` and ``cache`` feeds
    :func:`encode_backward`.
    """
    ids = np.asarray(ids)
    lengths = np.asarray(lengths)
    if ids.ndim != 2:
        raise ValueError("ids must be a (batch, length) array")
    b, n = ids.shape
    if n > cfg.max_len:
        raise ValueError(f"sequence length {n} exceeds max_len {cfg.max_len}")
    if ids.size and (ids.max() >= cfg.vocab_size or ids.min() < 0):
        raise ValueError(f"token id outside [0, {cfg.vocab_size})")
    key_mask = (np.arange(n)[None, :] < lengths[:, None])[:, None, None, :]
    x = params["embed.token"][ids] + params["embed.position"][:n]
    h, ln0 = _layer_norm(x, params["embed.ln.gamma"], params["embed.ln.beta"])
    h, keep0 = _dropout(h, cfg.dropout, rng)
    layers = []
    for j in range(cfg.n_layers):
        h, c = _layer_forward(params, j, h, key_mask, cfg, rng)
        layers.append(c)
    cache = dict(ids=ids, n=n, ln0=ln0, keep0=keep0, layers=layers, key_mask=key_mask)
    if return_attention:
        cache["attention"] = [c["a"] for c in layers]
    return h, cache


def encode(params, cfg: EncoderConfig, seq, pad_mask=None):
    """Inference-mode embeddings ``(max_len, d)`` for one token sequence."""
    ids = np.asarray(getattr(seq, "ids", seq))
    if pad_mask is None:
        length = getattr(seq, "length", len(ids))
    else:
        length = int(np.count_nonzero(~np.asarray(pad_mask)))
    z, _ = encode_batch(params, cfg, ids[None, :], np.array([length]))
    return z[0]


# ----------------------------------------------------------------- backward


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def _layer_backward(params, j, dh2, c, cfg, grads):
    p = f"layer{j}."
    dx2, dg, db = _layer_norm_backward(dh2, params[p + "ln2.gamma"], c["ln2"])
    grads[p + "ln2.gamma"], grads[p + "ln2.beta"] = dg, db
    dh1 = dx2.copy()
    df2 = dx2 if c["keep_f"] is None else dx2 * c["keep_f"]
    grads[p + "ffn.out.weight"] = _wgrad(c["g"], df2)
    grads[p + "ffn.out.bias"] = df2.sum(axis=(0, 1))
    df1 = (df2 @ params[p + "ffn.out.weight"].T) * gelu_grad(c["f1"], c["cdf"])
    grads[p + "ffn.in.weight"] = _wgrad(c["h1"], df1)
    grads[p + "ffn.in.bias"] = df1.sum(axis=(0, 1))
    dh1 += df1 @ params[p + "ffn.in.weight"].T

    dx1, dg, db = _layer_norm_backward(dh1, params[p + "ln1.gamma"], c["ln1"])
    grads[p + "ln1.gamma"], grads[p + "ln1.beta"] = dg, db
    dh = dx1.copy()
    do = dx1 if c["keep_o"] is None else dx1 * c["keep_o"]
    grads[p + "attn.o.weight"] = _wgrad(c["ctx"], do)
    grads[p + "attn.o.bias"] = do.sum(axis=(0, 1))
    dctx = _split_heads(do @ params[p + "attn.o.weight"].T, cfg.n_heads)
    da = dctx @ c["v"].transpose(0, 1, 3, 2)
    dv = c["a_drop"].transpose(0, 1, 3, 2) @ dctx
    if c["keep_a"] is not None:
        da = da * c["keep_a"]
    a = c["a"]
    ds = a * (da - (da * a).sum(-1, keepdims=True)) * c["scale"]
    dq = ds @ c["k"]
    dk = ds.transpose(0, 1, 3, 2) @ c["q"]
    h = c["h"]
    for proj, dproj in (("q", dq), ("k", dk), ("v", dv)):
        dflat = _merge_heads(dproj)
        grads[p + f"attn.{proj}.weight"] = _wgrad(h, dflat)
        grads[p + f"attn.{proj}.bias"] = dflat.sum(axis=(0, 1))
        dh += dflat @ params[p + f"attn.{proj}.weight"].T
    return dh


def encode_backward(params, cfg: EncoderConfig, cache, dz, grads=None) -> dict:
    """Gradients of all encoder parameters given ``dz = dLoss/dz``.

    ``grads`` may already hold contributions (e.g. the tied MLM projection
    into ``embed.token``); encoder terms are added to them.
    """
    grads = {} if grads is None else grads
    dh = dz
    for j in reversed(range(cfg.n_layers)):
        dh = _layer_backward(params, j, dh, cache["layers"][j], cfg, grads)
    if cache["keep0"] is not None:
        dh = dh * cache["keep0"]
    dx, dg, db = _layer_norm_backward(dh, params["embed.ln.gamma"], cache["ln0"])
    grads["embed.ln.gamma"], grads["embed.ln.beta"] = dg, db
    dtok = np.zeros_like(params["embed.token"])
    np.add.at(dtok, cache["ids"].ravel(), dx.reshape(-1, dx.shape[-1]))
    _acc(grads, "embed.token", dtok)
    dpos = np.zeros_like(params["embed.position"])
    dpos[: cache["n"]] = dx.sum(0)
    grads["embed.position"] = dpos
    return grads


# ---------------------------------------------------------------- MLM head


def mlm_logits(params, z, positions):
    """Vocabulary logits at ``positions`` via the tied token embedding.

    ``z`` is ``(n, d)`` or ``(B, n, d)``; ``positions`` is an index array
    for the former, a ``(batch_idx, pos_idx)`` pair for the latter.
    """
    if z.ndim == 2:
        positions = np.asarray(positions)
        if positions.size and (positions.min() < 0 or positions.max() >= z.shape[0]):
            raise IndexError("MLM position out of range")
        zs = z[positions]
    else:
        bi, pi = positions
        if len(pi) and (np.min(pi) < 0 or np.max(pi) >= z.shape[1]):
            raise IndexError("MLM position out of range")
        zs = z[bi, pi]
    return zs @ params["embed.token"].T + params["mlm.bias"], zs


def mlm_backward(params, zs, dlogits, grads):
    grads["mlm.bias"] = dlogits.sum(0)
    _acc(grads, "embed.token", dlogits.T @ zs)
    return dlogits @ params["embed.token"]
