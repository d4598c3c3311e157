"""The two networks and their conditioning stack.

RepresentationEncoder: 1D-conv patchify -> transformer blocks -> mean pool
-> linear head, producing one representation vector per window.

VelocityNet: 1D-conv patchify -> DiT blocks conditioned through adaLN-Zero
-> modulated-norm output projection back to window shape. The modulation
heads and the output projection are zero-initialized, so an untrained net
is the zero velocity field and every block is the identity on tokens.

Conditions (representation, sinusoidal timestep, optional aux vector) are
projected to embed_dim and combined by elementwise sum. The representation
is randomly replaced by a zero vector during training (apply_dgs), which
trains the unconditional and conditional modes of one model jointly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .data import CHANNELS, WINDOW_LEN
from .tensor import Tensor


@dataclass
class EncoderConfig:
    patch_size: int = 15
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    rep_dim: int = 64
    mlp_ratio: float = 4.0

    def __post_init__(self):
        _check_dims(self)

    @property
    def num_tokens(self) -> int:
        return WINDOW_LEN // self.patch_size


@dataclass
class VelocityNetConfig:
    patch_size: int = 15
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    mlp_ratio: float = 4.0
    rep_dim: int = 64  # incoming representation width for the conditioning projection

    def __post_init__(self):
        _check_dims(self)

    @property
    def num_tokens(self) -> int:
        return WINDOW_LEN // self.patch_size


def _check_dims(cfg):
    if cfg.embed_dim % cfg.heads != 0:
        raise ValueError(f"embed_dim {cfg.embed_dim} not divisible by heads {cfg.heads}")
    if WINDOW_LEN % cfg.patch_size != 0:
        raise ValueError(f"window length {WINDOW_LEN} not divisible by patch {cfg.patch_size}")
    if cfg.embed_dim % 2 != 0:
        raise ValueError("embed_dim must be even for the sinusoidal timestep embedding")


@dataclass
class MaskPolicy:
    mask_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError(f"mask_prob must be in [0,1], got {self.mask_prob}")


@dataclass
class ConditionVector:
    values: Tensor
    sources: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# conditioning pieces
# --------------------------------------------------------------------------

def timestep_embed(t, dim: int) -> Tensor:
    """Interleaved sin/cos embedding of t in [0,1]; t is scaled by 1000 and
    frequencies are geometric with base 10000. Accepts a scalar or a [B]
    array; returns [dim] or [B, dim]."""
    arr = np.asarray(t, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if ((arr < -1e-9) | (arr > 1 + 1e-9)).any():
        raise ValueError(f"timestep outside [0,1]: {arr.min()}..{arr.max()}")
    arr = np.clip(arr, 0.0, 1.0)
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(half) / half)
    args = (1000.0 * arr)[:, None] * freqs[None, :]
    emb = np.empty((arr.size, dim))
    emb[:, 0::2] = np.sin(args)
    emb[:, 1::2] = np.cos(args)
    return Tensor(emb[0] if scalar else emb)


def fuse_condition(r_emb: Optional[Tensor], t_emb: Tensor,
                   aux: Optional[Tensor] = None) -> ConditionVector:
    """Elementwise sum of the present components; all must share t_emb's
    trailing dim. A masked representation row contributes exact zeros."""
    dim = t_emb.shape[-1]
    total = t_emb
    sources = {"timestep": True, "representation": False, "aux": False}
    for name, part in (("representation", r_emb), ("aux", aux)):
        if part is None:
            continue
        if part.shape[-1] != dim:
            raise T.ShapeError(f"fuse_condition: {name} dim {part.shape[-1]} != {dim}")
        total = T.add(total, part)
        sources[name] = True
    return ConditionVector(values=total, sources=sources)


def apply_dgs(r: Tensor, policy: MaskPolicy,
              rng: Optional[np.random.Generator] = None) -> tuple[Tensor, np.ndarray]:
    """Zero whole rows of r independently with prob mask_prob. The uniform
    draw happens at every mask_prob so seed-matched runs with different
    probabilities consume identical rng streams."""
    rng = rng if rng is not None else np.random.default_rng(policy.seed)
    n = r.shape[0]
    masked = rng.random(n) < policy.mask_prob
    keep = Tensor((~masked).astype(np.float64)[:, None])
    return T.mul(r, keep), masked


def sincos_positions(num_tokens: int, dim: int) -> np.ndarray:
    """Fixed sin/cos token-position table [1, num_tokens, dim]."""
    half = dim // 2
    freqs = 10000.0 ** (-np.arange(half) / half)
    args = np.arange(num_tokens)[:, None] * freqs[None, :]
    table = np.empty((num_tokens, dim))
    table[:, 0::2] = np.sin(args)
    table[:, 1::2] = np.cos(args)
    return table[None, :, :]


def patchify_1d(x, weight, bias, patch_size: int) -> Tensor:
    """Non-overlapping conv patchify: [B,C,L] (or [C,L]) -> [B,T,D] tokens."""
    x = T.as_tensor(x)
    if x.shape[-1] % patch_size != 0:
        raise T.ShapeError(f"patchify: length {x.shape[-1]} not divisible by {patch_size}")
    y = T.conv1d(x, weight, bias=bias, stride=patch_size)  # [B,D,T]
    if y.ndim == 2:
        return T.transpose(y, (1, 0))
    return T.transpose(y, (0, 2, 1))


# --------------------------------------------------------------------------
# parameter helpers
# --------------------------------------------------------------------------

def _linear_params(rng, fan_in, fan_out, name, params, zero=False, bias=True):
    w = np.zeros((fan_in, fan_out)) if zero else T.trunc_normal(rng, (fan_in, fan_out))
    params[f"{name}.w"] = Tensor(w, requires_grad=True)
    if bias:
        params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)


def _linear(params, name, x: Tensor) -> Tensor:
    y = T.matmul(x, params[f"{name}.w"])
    b = params.get(f"{name}.b")
    return T.add(y, b) if b is not None else y


def _attention_params(rng, dim, name, params):
    for proj in ("wq", "wk", "wv", "wo"):
        _linear_params(rng, dim, dim, f"{name}.{proj}", params)


def _attention(params, name, x: Tensor, heads: int) -> Tensor:
    B, L, D = x.shape
    dh = D // heads

    def split_heads(t):
        return T.transpose(T.reshape(t, (B, L, heads, dh)), (0, 2, 1, 3))

    q = split_heads(_linear(params, f"{name}.wq", x))
    k = split_heads(_linear(params, f"{name}.wk", x))
    v = split_heads(_linear(params, f"{name}.wv", x))
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    attn = T.softmax(scores)
    out = T.matmul(attn, v)  # [B,H,L,dh]
    out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, L, D))
    return _linear(params, f"{name}.wo", out)


def _mlp_params(rng, dim, hidden, name, params):
    _linear_params(rng, dim, hidden, f"{name}.fc1", params)
    _linear_params(rng, hidden, dim, f"{name}.fc2", params)


def _mlp(params, name, x: Tensor) -> Tensor:
    return _linear(params, f"{name}.fc2", T.gelu(_linear(params, f"{name}.fc1", x)))


def params_digest(params: dict[str, Tensor]) -> str:
    """SHA-256 over names and raw little-endian bytes, order-independent."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).astype("<f8").tobytes())
    return h.hexdigest()


def architecture_digest(*nets) -> str:
    """Structural hash: config fields plus parameter names and shapes."""
    h = hashlib.sha256()
    for net in nets:
        h.update(repr(net.cfg).encode())
        for name in sorted(net.params):
            h.update(f"{name}:{net.params[name].shape}".encode())
    return h.hexdigest()


# --------------------------------------------------------------------------
# representation encoder
# --------------------------------------------------------------------------

class RepresentationEncoder:
    """1D-ViT over patchified windows; mean-pooled tokens -> rep vector."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        p: dict[str, Tensor] = {}
        patch_w = T.trunc_normal(rng, (cfg.embed_dim, CHANNELS, cfg.patch_size))
        p["patch.w"] = Tensor(patch_w, requires_grad=True)
        p["patch.b"] = Tensor(np.zeros(cfg.embed_dim), requires_grad=True)
        hidden = int(cfg.embed_dim * cfg.mlp_ratio)
        for i in range(cfg.depth):
            for ln in (f"block{i}.ln1", f"block{i}.ln2"):
                p[f"{ln}.g"] = Tensor(np.ones(cfg.embed_dim), requires_grad=True)
                p[f"{ln}.b"] = Tensor(np.zeros(cfg.embed_dim), requires_grad=True)
            _attention_params(rng, cfg.embed_dim, f"block{i}.attn", p)
            _mlp_params(rng, cfg.embed_dim, hidden, f"block{i}.mlp", p)
        p["ln_f.g"] = Tensor(np.ones(cfg.embed_dim), requires_grad=True)
        p["ln_f.b"] = Tensor(np.zeros(cfg.embed_dim), requires_grad=True)
        _linear_params(rng, cfg.embed_dim, cfg.rep_dim, "head", p)
        self.params = p
        self.pos = Tensor(sincos_positions(cfg.num_tokens, cfg.embed_dim))

    def _affine_norm(self, name, x):
        h = T.layer_norm(x)
        return T.add(T.mul(h, self.params[f"{name}.g"]), self.params[f"{name}.b"])

    def forward(self, x) -> Tensor:
        """x: [B, C, L] -> representations [B, rep_dim]."""
        cfg = self.cfg
        tokens = patchify_1d(x, self.params["patch.w"], self.params["patch.b"], cfg.patch_size)
        tokens = T.add(tokens, self.pos)
        for i in range(cfg.depth):
            h = self._affine_norm(f"block{i}.ln1", tokens)
            tokens = T.add(tokens, _attention(self.params, f"block{i}.attn", h, cfg.heads))
            h = self._affine_norm(f"block{i}.ln2", tokens)
            tokens = T.add(tokens, _mlp(self.params, f"block{i}.mlp", h))
        pooled = T.tmean(self._affine_norm("ln_f", tokens), axis=1)
        return _linear(self.params, "head", pooled)

    __call__ = forward

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Gradient-free forward on raw arrays; [C,L] promotes to batch 1."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        with T.no_grad():
            r = self.forward(Tensor(x)).data
        return r[0] if squeeze else r


# --------------------------------------------------------------------------
# velocity field network
# --------------------------------------------------------------------------

class VelocityNet:
    """1D-DiT: tokens modulated per block by the fused condition."""

    def __init__(self, cfg: VelocityNetConfig, rng: np.random.Generator):
        self.cfg = cfg
        p: dict[str, Tensor] = {}
        patch_w = T.trunc_normal(rng, (cfg.embed_dim, CHANNELS, cfg.patch_size))
        p["patch.w"] = Tensor(patch_w, requires_grad=True)
        p["patch.b"] = Tensor(np.zeros(cfg.embed_dim), requires_grad=True)
        hidden = int(cfg.embed_dim * cfg.mlp_ratio)
        for i in range(cfg.depth):
            _attention_params(rng, cfg.embed_dim, f"block{i}.attn", p)
            _mlp_params(rng, cfg.embed_dim, hidden, f"block{i}.mlp", p)
            # adaLN-Zero head: 6 modulation vectors per block, zero-initialized
            _linear_params(rng, cfg.embed_dim, 6 * cfg.embed_dim, f"block{i}.mod", p, zero=True)
        _linear_params(rng, cfg.embed_dim, 2 * cfg.embed_dim, "final.mod", p, zero=True)
        _linear_params(rng, cfg.embed_dim, CHANNELS * cfg.patch_size, "final.out", p, zero=True)
        _linear_params(rng, cfg.rep_dim, cfg.embed_dim, "cond.proj_r", p, bias=False)
        _linear_params(rng, cfg.embed_dim, cfg.embed_dim, "cond.proj_aux", p, bias=False)
        self.params = p
        self.pos = Tensor(sincos_positions(cfg.num_tokens, cfg.embed_dim))

    def fuse(self, t, rep: Optional[Tensor] = None, aux: Optional[Tensor] = None) -> ConditionVector:
        """Project rep/aux to embed_dim and sum with the timestep embedding."""
        t_emb = timestep_embed(t, self.cfg.embed_dim)
        r_emb = None if rep is None else _linear(self.params, "cond.proj_r", rep)
        a_emb = None if aux is None else _linear(self.params, "cond.proj_aux", aux)
        return fuse_condition(r_emb, t_emb, a_emb)

    def _modulation(self, name, cond: Tensor, count: int):
        B = cond.shape[0]
        D = self.cfg.embed_dim
        raw = _linear(self.params, name, T.silu(cond))  # [B, count*D]
        return [
            T.reshape(T.slice_axis(raw, 1, i * D, (i + 1) * D), (B, 1, D))
            for i in range(count)
        ]

    def block(self, i: int, tokens: Tensor, cond: Tensor) -> Tensor:
        """One DiT block: x + gate*SubLayer(modulated LN(x)), adaLN-Zero."""
        sh_a, sc_a, g_a, sh_m, sc_m, g_m = self._modulation(f"block{i}.mod", cond, 6)
        h = T.add(T.mul(T.layer_norm(tokens), T.add(sc_a, 1.0)), sh_a)
        tokens = T.add(tokens, T.mul(g_a, _attention(self.params, f"block{i}.attn", h, self.cfg.heads)))
        h = T.add(T.mul(T.layer_norm(tokens), T.add(sc_m, 1.0)), sh_m)
        tokens = T.add(tokens, T.mul(g_m, _mlp(self.params, f"block{i}.mlp", h)))
        return tokens

    def forward(self, x_t, t, rep: Optional[Tensor] = None,
                aux: Optional[Tensor] = None) -> Tensor:
        """x_t: [B, C, L], t: scalar or [B] -> velocity [B, C, L]."""
        cfg = self.cfg
        x_t = T.as_tensor(x_t)
        B = x_t.shape[0]
        tarr = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
        cond = self.fuse(tarr, rep=rep, aux=aux).values
        tokens = patchify_1d(x_t, self.params["patch.w"], self.params["patch.b"], cfg.patch_size)
        tokens = T.add(tokens, self.pos)
        for i in range(cfg.depth):
            tokens = self.block(i, tokens, cond)
        shift, scale = self._modulation("final.mod", cond, 2)
        h = T.add(T.mul(T.layer_norm(tokens), T.add(scale, 1.0)), shift)
        out = _linear(self.params, "final.out", h)  # [B, T, C*P]
        out = T.reshape(out, (B, cfg.num_tokens, CHANNELS, cfg.patch_size))
        out = T.transpose(out, (0, 2, 1, 3))
        return T.reshape(out, (B, CHANNELS, WINDOW_LEN))

    __call__ = forward

    def predict(self, x_t: np.ndarray, t, rep: Optional[np.ndarray] = None,
                aux: Optional[np.ndarray] = None) -> np.ndarray:
        """Gradient-free forward on raw arrays (sampling path)."""
        with T.no_grad():
            r = None if rep is None else Tensor(rep)
            a = None if aux is None else Tensor(aux)
            return self.forward(Tensor(x_t), t, rep=r, aux=a).data
