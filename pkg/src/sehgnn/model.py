"""The trainable network: per-metapath projection MLPs, semantic fusion,
classifier head. All gradients are hand-derived; no autodiff framework.

Per node and metapath P, the projection block computes
``h'[P] = W2 @ drop(relu(layernorm(W1 @ x[P] + b1))) + b2``.
Transformer fusion then mixes the K per-metapath vectors of each node:
queries/keys/values are shared linear maps of h', attention is the softmax
over key metapaths of the query-key dot products (no 1/sqrt(d) scaling
unless ``attn_scale`` is set), and the fused vector is
``beta * sum_j alpha[i,j] v[j] + h'[i]`` with a single trainable scalar
beta. The K fused vectors are concatenated and classified by a second MLP
block with softmax output.

The alternative weighted-sum fusion scores each metapath with
``mean_batch(q . tanh(W h' + b))``, softmaxes the K scores into weights and
returns the weighted sum of the h' vectors (no concatenation).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

LN_EPS = 1e-5
FUSION_MODES = ("transformer", "weighted-sum")


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int
    num_classes: int
    fusion: str = "transformer"
    dropout: float = 0.5
    attn_scale: bool = False
    dtype: type = np.float64

    def __post_init__(self):
        if self.hidden_dim % 4 != 0:
            raise ValueError("hidden_dim must be divisible by 4 (attention dim = D/4)")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def attn_dim(self) -> int:
        return self.hidden_dim // 4


@dataclass
class ModelParams:
    config: ModelConfig
    path_ids: tuple[str, ...]
    in_dims: tuple[int, ...]
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config, self.path_ids, self.in_dims,
            {k: v.copy() for k, v in self.tensors.items()},
        )


def _glorot(rng, fan_in, fan_out, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(path_specs, config: ModelConfig, seed: int) -> ModelParams:
    """Seeded initialization; ``path_specs`` is a list of (path_id, input_dim)."""
    rng = np.random.default_rng(seed)
    d, da, c = config.hidden_dim, config.attn_dim, config.num_classes
    dt = config.dtype
    t: dict[str, np.ndarray] = {}
    for pid, din in path_specs:
        t[f"proj:{pid}:w1"] = _glorot(rng, din, d, (din, d), dt)
        t[f"proj:{pid}:b1"] = np.zeros(d, dt)
        t[f"proj:{pid}:ln_g"] = np.ones(d, dt)
        t[f"proj:{pid}:ln_b"] = np.zeros(d, dt)
        t[f"proj:{pid}:w2"] = _glorot(rng, d, d, (d, d), dt)
        t[f"proj:{pid}:b2"] = np.zeros(d, dt)
    if config.fusion == "transformer":
        t["fuse:wq"] = _glorot(rng, d, da, (d, da), dt)
        t["fuse:wk"] = _glorot(rng, d, da, (d, da), dt)
        t["fuse:wv"] = _glorot(rng, d, d, (d, d), dt)
        t["fuse:beta"] = np.asarray(1.0, dt)
        head_in = len(path_specs) * d
    else:
        t["fuse:wa"] = _glorot(rng, d, da, (d, da), dt)
        t["fuse:ba"] = np.zeros(da, dt)
        t["fuse:qa"] = _glorot(rng, da, 1, (da,), dt)
        head_in = d
    t["head:w1"] = _glorot(rng, head_in, d, (head_in, d), dt)
    t["head:b1"] = np.zeros(d, dt)
    t["head:ln_g"] = np.ones(d, dt)
    t["head:ln_b"] = np.zeros(d, dt)
    t["head:w2"] = _glorot(rng, d, c, (d, c), dt)
    t["head:b2"] = np.zeros(c, dt)
    return ModelParams(config, tuple(p for p, _ in path_specs), tuple(d_ for _, d_ in path_specs), t)


def _layernorm_fwd(z, g, b):
    mu = z.mean(axis=1, keepdims=True)
    xc = z - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_bwd(dn, g, ln_cache):
    xhat, inv = ln_cache
    dg = (dn * xhat).sum(axis=0)
    db = dn.sum(axis=0)
    dxhat = dn * g
    dz = inv * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dz, dg, db


def _mlp_block_fwd(x, t, prefix, train_mode, dropout, rng, cache):
    """linear -> layernorm -> relu -> dropout -> linear."""
    z = x @ t[f"{prefix}:w1"] + t[f"{prefix}:b1"]
    n, ln_cache = _layernorm_fwd(z, t[f"{prefix}:ln_g"], t[f"{prefix}:ln_b"])
    a = np.maximum(n, 0)
    if train_mode and dropout > 0.0:
        if rng is None:
            raise ValueError("training-mode forward with dropout needs an rng")
        mask = (rng.random(a.shape) >= dropout).astype(a.dtype) / (1.0 - dropout)
        dpd = a * mask
    else:
        mask = None
        dpd = a
    h = dpd @ t[f"{prefix}:w2"] + t[f"{prefix}:b2"]
    cache[prefix] = {"x": x, "ln": ln_cache, "n": n, "dpd": dpd, "mask": mask}
    return h


def _mlp_block_bwd(dh, t, prefix, cache, grads):
    c = cache[prefix]
    grads[f"{prefix}:w2"] = c["dpd"].T @ dh
    grads[f"{prefix}:b2"] = dh.sum(axis=0)
    dd = dh @ t[f"{prefix}:w2"].T
    da = dd * c["mask"] if c["mask"] is not None else dd
    dn = da * (c["n"] > 0)
    dz, dg, db = _layernorm_bwd(dn, t[f"{prefix}:ln_g"], c["ln"])
    grads[f"{prefix}:ln_g"] = dg
    grads[f"{prefix}:ln_b"] = db
    grads[f"{prefix}:w1"] = c["x"].T @ dz
    grads[f"{prefix}:b1"] = dz.sum(axis=0)
    return dz @ t[f"{prefix}:w1"].T


def fuse_transformer(params: ModelParams, h_stack: np.ndarray):
    """Mutual attention across metapaths. h_stack: (K, B, D) -> (fused, cache)."""
    t = params.tensors
    q = h_stack @ t["fuse:wq"]
    k = h_stack @ t["fuse:wk"]
    v = h_stack @ t["fuse:wv"]
    logits = np.einsum("ibd,jbd->bij", q, k)
    if params.config.attn_scale:
        logits = logits / np.sqrt(params.config.attn_dim)
    logits -= logits.max(axis=2, keepdims=True)
    e = np.exp(logits)
    alpha = e / e.sum(axis=2, keepdims=True)  # (B, K, K), rows over key metapaths
    attn = np.einsum("bij,jbd->ibd", alpha, v)
    fused = t["fuse:beta"] * attn + h_stack
    return fused, {"q": q, "k": k, "v": v, "alpha": alpha, "attn": attn, "h": h_stack}


def _fuse_transformer_bwd(dfused, params, cache, grads):
    t = params.tensors
    q, k, v, alpha, attn, h = (cache[s] for s in ("q", "k", "v", "alpha", "attn", "h"))
    beta = t["fuse:beta"]
    dh = dfused.copy()
    grads["fuse:beta"] = np.asarray((dfused * attn).sum(), dtype=beta.dtype)
    dattn = beta * dfused
    dalpha = np.einsum("ibd,jbd->bij", dattn, v)
    dv = np.einsum("bij,ibd->jbd", alpha, dattn)
    ds = alpha * (dalpha - (dalpha * alpha).sum(axis=2, keepdims=True))
    if params.config.attn_scale:
        ds = ds / np.sqrt(params.config.attn_dim)
    dq = np.einsum("bij,jbd->ibd", ds, k)
    dk = np.einsum("bij,ibd->jbd", ds, q)
    grads["fuse:wq"] = np.einsum("kbd,kbe->de", h, dq)
    grads["fuse:wk"] = np.einsum("kbd,kbe->de", h, dk)
    grads["fuse:wv"] = np.einsum("kbd,kbe->de", h, dv)
    dh += dq @ t["fuse:wq"].T + dk @ t["fuse:wk"].T + dv @ t["fuse:wv"].T
    return dh


def fuse_weighted_sum(params: ModelParams, h_stack: np.ndarray):
    """Scalar score per metapath (batch-averaged), softmax weights, weighted sum.

    h_stack: (K, B, D) -> (fused (B, D), cache).
    """
    t = params.tensors
    th = np.tanh(h_stack @ t["fuse:wa"] + t["fuse:ba"])  # (K, B, Da)
    scores = th @ t["fuse:qa"]                            # (K, B)
    w = scores.mean(axis=1)                               # (K,)
    w_shift = w - w.max()
    e = np.exp(w_shift)
    weights = e / e.sum()                                 # (K,)
    fused = np.einsum("k,kbd->bd", weights, h_stack)
    return fused, {"th": th, "weights": weights, "h": h_stack}


def _fuse_weighted_sum_bwd(dfused, params, cache, grads):
    t = params.tensors
    th, weights, h = cache["th"], cache["weights"], cache["h"]
    batch = h.shape[1]
    dweights = np.einsum("bd,kbd->k", dfused, h)
    dh = weights[:, None, None] * dfused[None, :, :]
    dw = weights * (dweights - (dweights * weights).sum())
    dscores = np.broadcast_to((dw / batch)[:, None], (h.shape[0], batch))
    grads["fuse:qa"] = np.einsum("kb,kba->a", dscores, th)
    dth = dscores[:, :, None] * t["fuse:qa"]
    dpre = dth * (1.0 - th * th)
    grads["fuse:wa"] = np.einsum("kbd,kba->da", h, dpre)
    grads["fuse:ba"] = dpre.sum(axis=(0, 1))
    dh += dpre @ t["fuse:wa"].T
    return dh


def forward(params: ModelParams, matrices, rows, train_mode: bool = False, rng=None):
    """Run the network on a batch of target-node rows.

    Returns (probabilities, cache); the cache holds every intermediate the
    backward pass needs, including dropout masks.
    """
    mats = [m.matrix if hasattr(m, "matrix") else m for m in matrices]
    ids = tuple(m.path_id for m in matrices) if all(hasattr(m, "path_id") for m in matrices) else None
    if ids is not None and ids != params.path_ids:
        raise ValueError(f"semantic matrices {ids} do not match model metapaths {params.path_ids}")
    if len(mats) != len(params.path_ids):
        raise ValueError("wrong number of semantic matrices")
    rows = np.asarray(rows, dtype=np.int64)
    dt = params.config.dtype
    cache: dict = {"rows": rows}

    hs = []
    for pid, din, mat in zip(params.path_ids, params.in_dims, mats):
        if mat.shape[1] != din:
            raise ValueError(f"{pid}: input width {mat.shape[1]} != expected {din}")
        x = np.ascontiguousarray(mat[rows], dtype=dt)
        hs.append(_mlp_block_fwd(x, params.tensors, f"proj:{pid}",
                                 train_mode, params.config.dropout, rng, cache))
    h_stack = np.stack(hs)  # (K, B, D)

    if params.config.fusion == "transformer":
        fused, fcache = fuse_transformer(params, h_stack)
        head_in = fused.transpose(1, 0, 2).reshape(rows.shape[0], -1)
    else:
        fused, fcache = fuse_weighted_sum(params, h_stack)
        head_in = fused
    cache["fuse"] = fcache

    logits = _mlp_block_fwd(head_in, params.tensors, "head",
                            train_mode, params.config.dropout, rng, cache)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    cache["probs"] = probs
    return probs, cache


def loss_and_grad(params: ModelParams, matrices, rows, labels, train_mode: bool = True, rng=None):
    """Mean cross-entropy over the batch plus exact gradients for every tensor.

    ``labels`` is the full per-target-node label vector; every batch row
    must be labeled.
    """
    rows = np.asarray(rows, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)[rows]
    if np.any(y < 0):
        raise ValueError("unlabeled row in batch")
    probs, cache = forward(params, matrices, rows, train_mode=train_mode, rng=rng)
    batch = rows.shape[0]
    loss = float(-np.log(np.maximum(probs[np.arange(batch), y], 1e-300)).mean())

    grads: dict[str, np.ndarray] = {}
    dlogits = probs.copy()
    dlogits[np.arange(batch), y] -= 1.0
    dlogits /= batch
    dhead_in = _mlp_block_bwd(dlogits, params.tensors, "head", cache, grads)

    k = len(params.path_ids)
    if params.config.fusion == "transformer":
        dfused = dhead_in.reshape(batch, k, -1).transpose(1, 0, 2)
        dh_stack = _fuse_transformer_bwd(dfused, params, cache["fuse"], grads)
    else:
        dh_stack = _fuse_weighted_sum_bwd(dhead_in, params, cache["fuse"], grads)

    for i, pid in enumerate(params.path_ids):
        _mlp_block_bwd(dh_stack[i], params.tensors, f"proj:{pid}", cache, grads)
    return loss, grads


def predict(params: ModelParams, matrices, rows):
    """Evaluation-mode class probabilities."""
    probs, _ = forward(params, matrices, rows, train_mode=False)
    return probs


@dataclass
class OptimizerState:
    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams, lr: float, weight_decay: float = 0.0):
        state = cls(lr=lr, weight_decay=weight_decay)
        for name, tensor in params.tensors.items():
            state.m[name] = np.zeros_like(tensor)
            state.v[name] = np.zeros_like(tensor)
        return state


def adam_step(params: ModelParams, grads: dict, state: OptimizerState):
    """One bias-corrected Adam update (decoupled weight decay when configured)."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.tensors.items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        upd = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if state.weight_decay:
            upd = upd + state.lr * state.weight_decay * p
        params.tensors[name] = p - upd
    return params, state


def grad_check(params: ModelParams, matrices, rows, labels, step: float = 1e-5) -> float:
    """Max over tensors of the relative gap between analytic and central
    finite-difference gradients (64-bit, dropout off)."""
    if params.config.dtype != np.float64:
        raise ValueError("grad_check requires 64-bit parameters")

    def loss_only():
        rws = np.asarray(rows, dtype=np.int64)
        y = np.asarray(labels, dtype=np.int64)[rws]
        probs, _ = forward(params, matrices, rws, train_mode=False)
        return float(-np.log(probs[np.arange(rws.shape[0]), y]).mean())

    _, analytic = loss_and_grad(params, matrices, rows, labels, train_mode=False)
    worst = 0.0
    for name, tensor in params.tensors.items():
        fd = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_only()
            flat[i] = orig - step
            down = loss_only()
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * step)
        na = float(np.linalg.norm(analytic[name]))
        nf = float(np.linalg.norm(fd))
        if na < 1e-10 and nf < 1e-10:
            continue
        rel = float(np.linalg.norm(analytic[name] - fd)) / max(na, nf)
        worst = max(worst, rel)
    return worst


CKPT_MAGIC = b"SEH1"
_CKPT_VERSION = 1


def save_checkpoint(params: ModelParams, path):
    """Versioned binary container: dims, metapath list, tensors in order."""
    cfg = params.config
    with Path(path).open("wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IBBdQQQ", _CKPT_VERSION,
                             FUSION_MODES.index(cfg.fusion), int(cfg.attn_scale),
                             cfg.dropout, cfg.hidden_dim, cfg.num_classes,
                             len(params.path_ids)))
        for pid, din in zip(params.path_ids, params.in_dims):
            raw = pid.encode()
            fh.write(struct.pack("<HQ", len(raw), din))
            fh.write(raw)
        fh.write(struct.pack("<Q", len(params.tensors)))
        for name, tensor in params.tensors.items():
            raw = name.encode()
            arr = np.ascontiguousarray(tensor, dtype="<f8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q" if arr.ndim else "<0Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path, dtype=np.float64) -> ModelParams:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    off = 4
    version, fusion_i, scale_i, dropout, d, c, n_paths = struct.unpack_from("<IBBdQQQ", buf, off)
    off += struct.calcsize("<IBBdQQQ")
    if version != _CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    cfg = ModelConfig(hidden_dim=d, num_classes=c, fusion=FUSION_MODES[fusion_i],
                      dropout=dropout, attn_scale=bool(scale_i), dtype=dtype)
    path_ids, in_dims = [], []
    for _ in range(n_paths):
        n, din = struct.unpack_from("<HQ", buf, off)
        off += struct.calcsize("<HQ")
        path_ids.append(buf[off:off + n].decode())
        off += n
        in_dims.append(int(din))
    (n_tensors,) = struct.unpack_from("<Q", buf, off)
    off += 8
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + n].decode()
        off += n
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, off) if ndim else ()
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        tensors[name] = arr.astype(dtype)
    return ModelParams(cfg, tuple(path_ids), tuple(in_dims), tensors)
