"""Toy conditional noise predictor with an exact hand-written backward pass.

Dataflow per call:

    object branch   h0 = silu(name_o W + [x_t, p_o, p_o - mean p_o] W + b)
                    h1 = h0 + selfattn(h0)
    background      voxel-pool P_b to ~N_b/4 cells, g = mlp(name_b, centroid)
    timestep        tau = mlp(sinusoid(t))
    instruction     c = linear(phi(C))
    fusion          h2 = h1 + tau + crossattn(h1, [g; tau; c])
    decoder         h3 = h2 + ff(h2);  eps_hat = h3 W + b

No positional index enters, so the output is equivariant to object point
order and invariant to background point order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from ..errors import WidthMismatch
from .conditioning import ConditionBundle
from .schedule import check_step


@dataclass(frozen=True)
class ModelConfig:
    width: int = 64
    name_width: int = 32
    text_width: int = 32
    time_width: int = 32
    ff_mult: int = 4
    pool_ratio: float = 4.0
    T: int = 100
    init_seed: int = 0

    @classmethod
    def tiny(cls, **kw) -> "ModelConfig":
        base = dict(width=8, name_width=8, text_width=8, time_width=8, ff_mult=2)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


def silu(z):
    return z / (1.0 + np.exp(-z))


def silu_grad(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def softmax_rows(s):
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def timestep_encoding(t: int, width: int) -> np.ndarray:
    half = width // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / max(half, 1))
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)])


# --- background pooling ----------------------------------------------------------

def _occupied(points, lo, size):
    keys = np.floor((points - lo) / size).astype(np.int64)
    return np.unique(keys, axis=0, return_inverse=True)


def voxel_pool(points: np.ndarray, features: np.ndarray, ratio: float = 4.0):
    """Mean-pool points and features into a uniform grid with about len/ratio cells.

    The voxel size is found by bisection on a log scale; cells are ordered by
    their integer grid key, so the result does not depend on input order.
    """
    pts = np.asarray(points, dtype=np.float64)
    m = pts.shape[0]
    if m == 0:
        return np.zeros((0, 3)), np.zeros((0, features.shape[1]))
    target = max(1, int(round(m / ratio)))
    lo = pts.min(axis=0)
    extent = float(np.max(pts.max(axis=0) - lo))
    if extent <= 0.0:
        return pts.mean(0, keepdims=True), features.mean(0, keepdims=True)
    a, b = np.log(extent * 1e-4), np.log(extent * 2.0)
    best = None
    for _ in range(40):
        mid = 0.5 * (a + b)
        keys, _ = _occupied(pts, lo, np.exp(mid))
        k = keys.shape[0]
        if best is None or abs(k - target) < abs(best[1] - target):
            best = (np.exp(mid), k)
        if k > target:
            a = mid
        elif k < target:
            b = mid
        else:
            break
    _, inv = _occupied(pts, lo, best[0])
    inv = inv.reshape(-1)
    k = int(inv.max()) + 1
    counts = np.bincount(inv, minlength=k).astype(np.float64)
    cent = np.zeros((k, 3))
    feat = np.zeros((k, features.shape[1]))
    np.add.at(cent, inv, pts)
    np.add.at(feat, inv, features)
    return cent / counts[:, None], feat / counts[:, None]


def pooled_background(cond: ConditionBundle, ratio: float):
    """Pooled cells of ``cond``'s background, memoized on the bundle itself."""
    memo = cond.__dict__.setdefault("_pooled", {})
    if ratio not in memo:
        memo[ratio] = voxel_pool(cond.background_points, cond.background_features, ratio)
    return memo[ratio]


# --- attention -----------------------------------------------------------------

def _attn_forward(p, pre, hq, hk):
    d = p[pre + "q_w"].shape[1]
    q = hq @ p[pre + "q_w"] + p[pre + "q_b"]
    k = hk @ p[pre + "k_w"]  # a key bias would shift every logit in a row equally
    v = hk @ p[pre + "v_w"] + p[pre + "v_b"]
    a = softmax_rows(q @ k.T / np.sqrt(d))
    o = a @ v
    out = o @ p[pre + "o_w"] + p[pre + "o_b"]
    return out, (hq, hk, q, k, v, a, o)


def _attn_backward(p, pre, cache, dout, g):
    hq, hk, q, k, v, a, o = cache
    d = q.shape[1]
    g[pre + "o_w"] += o.T @ dout
    g[pre + "o_b"] += dout.sum(0)
    do = dout @ p[pre + "o_w"].T
    da = do @ v.T
    dv = a.T @ do
    ds = a * (da - np.sum(da * a, axis=1, keepdims=True)) / np.sqrt(d)
    dq = ds @ k
    dk = ds.T @ q
    g[pre + "q_w"] += hq.T @ dq
    g[pre + "q_b"] += dq.sum(0)
    g[pre + "k_w"] += hk.T @ dk
    g[pre + "v_w"] += hk.T @ dv
    g[pre + "v_b"] += dv.sum(0)
    dhq = dq @ p[pre + "q_w"].T
    dhk = dk @ p[pre + "k_w"].T + dv @ p[pre + "v_w"].T
    return dhq, dhk


# --- model ---------------------------------------------------------------------

@lru_cache(maxsize=None)
def param_shapes(cfg: ModelConfig) -> tuple:
    D, F = cfg.width, cfg.width * cfg.ff_mult
    shapes = [("obj_name_w", (cfg.name_width, D)), ("obj_coord_w", (9, D)), ("obj_b", (D,))]
    shapes += _attn_shapes("sa_", D)
    shapes += [("bg_name_w", (cfg.name_width, D)), ("bg_coord_w", (3, D)), ("bg_b", (D,)),
               ("bg_out_w", (D, D)), ("bg_out_b", (D,)),
               ("time_w1", (cfg.time_width, D)), ("time_b1", (D,)),
               ("time_w2", (D, D)), ("time_b2", (D,)),
               ("text_w", (cfg.text_width, D)), ("text_b", (D,))]
    shapes += _attn_shapes("ca_", D)
    shapes += [("ff_w1", (D, F)), ("ff_b1", (F,)), ("ff_w2", (F, D)), ("ff_b2", (D,)),
               ("head_w", (D, 3)), ("head_b", (3,))]
    return tuple(shapes)


def _attn_shapes(pre, D):
    out = []
    for m in "qkvo":
        out.append((f"{pre}{m}_w", (D, D)))
        if m != "k":
            out.append((f"{pre}{m}_b", (D,)))
    return out


class NoisePredictor:
    """Parameters live in ``self.params`` (name -> float64 array) in a fixed order."""

    def __init__(self, config: ModelConfig = ModelConfig(), params: dict = None):
        self.config = config
        shapes = param_shapes(config)
        if params is None:
            rng = np.random.default_rng(config.init_seed)
            params = {}
            for name, shape in shapes:
                if len(shape) == 1:
                    params[name] = np.zeros(shape)
                else:
                    scale = 1.0 / np.sqrt(shape[0])
                    if name == "head_w":
                        scale *= 0.1
                    params[name] = rng.standard_normal(shape) * scale
        else:
            for name, shape in shapes:
                if params[name].shape != shape:
                    raise WidthMismatch(f"{name}: expected {shape}, got {params[name].shape}")
        self.params = {name: np.asarray(params[name], dtype=np.float64) for name, _ in shapes}

    @property
    def names(self) -> list:
        return [n for n, _ in param_shapes(self.config)]

    @property
    def n_params(self) -> int:
        return int(sum(np.prod(s) for _, s in param_shapes(self.config)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self.names])

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise WidthMismatch(f"expected {self.n_params} parameters, got {vec.shape}")
        off = 0
        for name, shape in param_shapes(self.config):
            n = int(np.prod(shape))
            self.params[name] = vec[off:off + n].reshape(shape).copy()
            off += n

    def copy(self) -> "NoisePredictor":
        return NoisePredictor(self.config, {k: v.copy() for k, v in self.params.items()})

    def zero_grads(self) -> dict:
        return {n: np.zeros_like(self.params[n]) for n in self.names}

    def _check(self, x_t, cond: ConditionBundle):
        cfg = self.config
        if cond.object_features.shape[1] != cfg.name_width:
            raise WidthMismatch(f"name features {cond.object_features.shape[1]} != {cfg.name_width}")
        if cond.instruction.shape[0] != cfg.text_width:
            raise WidthMismatch(f"instruction width {cond.instruction.shape[0]} != {cfg.text_width}")
        if np.shape(x_t) != cond.object_points.shape:
            raise WidthMismatch(f"noisy cloud {np.shape(x_t)} vs object {cond.object_points.shape}")

    def forward(self, x_t, cond: ConditionBundle, t: int):
        """Predicted noise and the cache needed by :meth:`backward`."""
        self._check(x_t, cond)
        check_step(t, self.config.T)
        p = self.params
        po = cond.object_points
        u = np.hstack([np.asarray(x_t, dtype=np.float64), po, po - po.mean(axis=0)])
        z0 = cond.object_features @ p["obj_name_w"] + u @ p["obj_coord_w"] + p["obj_b"]
        h0 = silu(z0)
        sa, sa_c = _attn_forward(p, "sa_", h0, h0)
        h1 = h0 + sa

        s = timestep_encoding(t, self.config.time_width)
        zt = s @ p["time_w1"] + p["time_b1"]
        tau = silu(zt) @ p["time_w2"] + p["time_b2"]
        c = cond.instruction @ p["text_w"] + p["text_b"]

        cb, fb = pooled_background(cond, self.config.pool_ratio)
        if len(cb):
            zb = fb @ p["bg_name_w"] + cb @ p["bg_coord_w"] + p["bg_b"]
            g = silu(zb) @ p["bg_out_w"] + p["bg_out_b"]
            kv = np.vstack([g, tau[None], c[None]])
        else:
            zb = g = None
            kv = np.vstack([tau[None], c[None]])
        ca, ca_c = _attn_forward(p, "ca_", h1, kv)
        h2 = h1 + tau + ca

        zf = h2 @ p["ff_w1"] + p["ff_b1"]
        h3 = h2 + silu(zf) @ p["ff_w2"] + p["ff_b2"]
        out = h3 @ p["head_w"] + p["head_b"]
        cache = dict(u=u, z0=z0, h0=h0, sa=sa_c, s=s, zt=zt, cond=cond, cb=cb, fb=fb, zb=zb,
                     ca=ca_c, h2=h2, zf=zf, h3=h3, n_bg=len(cb))
        return out, cache

    def __call__(self, x_t, cond: ConditionBundle, t: int) -> np.ndarray:
        return self.forward(x_t, cond, t)[0]

    def backward(self, cache: dict, dout: np.ndarray, grads: dict = None) -> dict:
        """Accumulate d(loss)/d(params) into ``grads`` given d(loss)/d(output)."""
        p = self.params
        g = grads if grads is not None else self.zero_grads()
        h3, h2, zf = cache["h3"], cache["h2"], cache["zf"]
        g["head_w"] += h3.T @ dout
        g["head_b"] += dout.sum(0)
        dh3 = dout @ p["head_w"].T

        af = silu(zf)
        g["ff_w2"] += af.T @ dh3
        g["ff_b2"] += dh3.sum(0)
        dzf = (dh3 @ p["ff_w2"].T) * silu_grad(zf)
        g["ff_w1"] += h2.T @ dzf
        g["ff_b1"] += dzf.sum(0)
        dh2 = dh3 + dzf @ p["ff_w1"].T

        dh1_ca, dkv = _attn_backward(p, "ca_", cache["ca"], dh2, g)
        dh1 = dh2 + dh1_ca
        dtau = dh2.sum(0) + dkv[-2]
        dc = dkv[-1]
        nb = cache["n_bg"]
        if nb:
            dg = dkv[:nb]
            zb = cache["zb"]
            g["bg_out_w"] += silu(zb).T @ dg
            g["bg_out_b"] += dg.sum(0)
            dzb = (dg @ p["bg_out_w"].T) * silu_grad(zb)
            g["bg_name_w"] += cache["fb"].T @ dzb
            g["bg_coord_w"] += cache["cb"].T @ dzb
            g["bg_b"] += dzb.sum(0)

        g["text_w"] += np.outer(cache["cond"].instruction, dc)
        g["text_b"] += dc
        zt = cache["zt"]
        g["time_w2"] += np.outer(silu(zt), dtau)
        g["time_b2"] += dtau
        dzt = (p["time_w2"] @ dtau) * silu_grad(zt)
        g["time_w1"] += np.outer(cache["s"], dzt)
        g["time_b1"] += dzt

        dq, dk = _attn_backward(p, "sa_", cache["sa"], dh1, g)
        dh0 = dh1 + dq + dk
        dz0 = dh0 * silu_grad(cache["z0"])
        g["obj_name_w"] += cache["cond"].object_features.T @ dz0
        g["obj_coord_w"] += cache["u"].T @ dz0
        g["obj_b"] += dz0.sum(0)
        return g
