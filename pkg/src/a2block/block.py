"""Double-attention block: gather globals by attention pooling, then
redistribute them per location by a second attention.

All functions take flattened feature maps (c, L). The block computes

    feats   = w_feat @ x              (m, L)
    gate    = softmax_rows(w_gather @ x)   rows normalized over locations
    select  = softmax_cols(w_distr @ x)    columns normalized over the bag
    core    = feats @ gate^T @ select      (m, L), either association
    out     = x + w_out @ core             residual insertion

Left association evaluates (feats @ gate^T) @ select through the (m, n)
bag of global descriptors; right association evaluates
feats @ (gate^T @ select) through the (L, L) relation matrix. Both give
the same output up to floating-point roundoff.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .costs import resolve_order_for
from .tensor import ShapeError, _as_matrix, _require_finite, matmul, softmax_cols, softmax_rows
from .tensorfile import load_tensor, save_tensor


class AssociationOrder(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    AUTO = "auto"


@dataclass
class DoubleAttentionParams:
    """Projection weights of one block.

    w_feat (m, c) makes the features to pool, w_gather (n, c) the gather
    attention logits, w_distr (n, c) the distribution attention logits,
    and w_out (c, m) expands the result back to c channels. Biases are
    optional and default to absent.
    """

    w_feat: np.ndarray
    w_gather: np.ndarray
    w_distr: np.ndarray
    w_out: np.ndarray
    b_feat: np.ndarray | None = None
    b_gather: np.ndarray | None = None
    b_distr: np.ndarray | None = None
    b_out: np.ndarray | None = None

    @property
    def c(self) -> int:
        return self.w_feat.shape[1]

    @property
    def m(self) -> int:
        return self.w_feat.shape[0]

    @property
    def n(self) -> int:
        return self.w_gather.shape[0]

    @property
    def has_biases(self) -> bool:
        return self.b_feat is not None

    def validate(self) -> None:
        c, m, n = self.c, self.m, self.n
        if self.w_gather.shape != (n, c):
            raise ShapeError(f"w_gather shape {self.w_gather.shape} != ({n}, {c})")
        if self.w_distr.shape != (n, c):
            raise ShapeError(f"w_distr shape {self.w_distr.shape} != ({n}, {c})")
        if self.w_out.shape != (c, m):
            raise ShapeError(f"w_out shape {self.w_out.shape} != ({c}, {m})")
        bias_shapes = {"b_feat": m, "b_gather": n, "b_distr": n, "b_out": c}
        for name, size in bias_shapes.items():
            b = getattr(self, name)
            if b is not None and b.shape != (size,):
                raise ShapeError(f"{name} shape {b.shape} != ({size},)")


def init_params(
    c: int,
    m: int | None = None,
    n: int | None = None,
    seed: int = 0,
    dtype=np.float32,
    biases: bool = False,
    w_out_init: str = "zeros",
) -> DoubleAttentionParams:
    """Fresh block parameters.

    m and n default to c // 4 (c must then be divisible by 4). Projections
    draw from N(0, 1/sqrt(c)); w_out starts at zero so an inserted block is
    an exact identity, or random when ``w_out_init="random"``.
    """
    if m is None or n is None:
        if c % 4 != 0:
            raise ValueError(f"c={c} not divisible by 4; pass m and n explicitly")
        m = m if m is not None else c // 4
        n = n if n is not None else c // 4
    rng = np.random.Generator(np.random.PCG64(seed))
    std = 1.0 / np.sqrt(c)
    w_feat = rng.normal(0.0, std, size=(m, c))
    w_gather = rng.normal(0.0, std, size=(n, c))
    w_distr = rng.normal(0.0, std, size=(n, c))
    if w_out_init == "zeros":
        w_out = np.zeros((c, m))
    elif w_out_init == "random":
        w_out = rng.normal(0.0, std, size=(c, m))
    else:
        raise ValueError(f"unknown w_out_init {w_out_init!r}")
    zeros = lambda k: np.zeros(k, dtype=dtype)
    params = DoubleAttentionParams(
        w_feat=w_feat.astype(dtype),
        w_gather=w_gather.astype(dtype),
        w_distr=w_distr.astype(dtype),
        w_out=w_out.astype(dtype),
        b_feat=zeros(m) if biases else None,
        b_gather=zeros(n) if biases else None,
        b_distr=zeros(n) if biases else None,
        b_out=zeros(c) if biases else None,
    )
    params.validate()
    return params


def gather(features: np.ndarray, attn_logits: np.ndarray) -> np.ndarray:
    """Pool features into a bag of global descriptors.

    Each of the n logit rows is softmax-normalized over the L locations
    and used to take a convex combination of the feature columns; returns
    the (m, n) bag.
    """
    features = _as_matrix("features", features)
    attn_logits = _as_matrix("attn_logits", attn_logits)
    if features.shape[1] != attn_logits.shape[1]:
        raise ShapeError(
            f"location count mismatch: features {features.shape} vs logits {attn_logits.shape}"
        )
    return matmul(features, softmax_rows(attn_logits).T)


def distribute(globals_: np.ndarray, attn_logits: np.ndarray) -> np.ndarray:
    """Assign each location its own mixture of the global descriptors.

    Logit columns are softmax-normalized over the bag dimension n; output
    column i is the resulting convex combination of the bag columns.
    """
    globals_ = _as_matrix("globals", globals_)
    attn_logits = _as_matrix("attn_logits", attn_logits)
    if globals_.shape[1] != attn_logits.shape[0]:
        raise ShapeError(
            f"bag size mismatch: globals {globals_.shape} vs logits {attn_logits.shape}"
        )
    return matmul(globals_, softmax_cols(attn_logits))


def relation_matrix(gather_logits: np.ndarray, distr_logits: np.ndarray) -> np.ndarray:
    """Explicit (L, L) pairwise relation weights of the right association.

    softmax_rows(gather_logits)^T @ softmax_cols(distr_logits); every
    column sums to 1, and features @ R equals the right-association core.
    """
    gather_logits = _as_matrix("gather_logits", gather_logits)
    distr_logits = _as_matrix("distr_logits", distr_logits)
    if gather_logits.shape[0] != distr_logits.shape[0]:
        raise ShapeError(
            f"bag size mismatch: gather logits {gather_logits.shape} "
            f"vs distribute logits {distr_logits.shape}"
        )
    return matmul(softmax_rows(gather_logits).T, softmax_cols(distr_logits))


def _project(x, w, b):
    y = w @ x
    if b is not None:
        y = y + b[:, None]
    return y


def _branches(x: np.ndarray, params: DoubleAttentionParams):
    x = _as_matrix("x", x)
    if x.shape[0] != params.c:
        raise ShapeError(f"input has {x.shape[0]} channels, parameters expect {params.c}")
    feats = _project(x, params.w_feat, params.b_feat)
    gate = softmax_rows(_project(x, params.w_gather, params.b_gather))
    select = softmax_cols(_project(x, params.w_distr, params.b_distr))
    return feats, gate, select


def resolve_order(order: AssociationOrder, m: int, n: int, locations: int) -> AssociationOrder:
    """Pin AUTO to LEFT or RIGHT via the cost model (LEFT on ties)."""
    if order != AssociationOrder.AUTO:
        return order
    return AssociationOrder(resolve_order_for(m, n, locations))


def double_attention_core(
    x: np.ndarray,
    params: DoubleAttentionParams,
    order: AssociationOrder = AssociationOrder.LEFT,
) -> np.ndarray:
    """Gather-distribute core without the output projection/residual; (m, L)."""
    feats, gate, select = _branches(x, params)
    order = resolve_order(order, params.m, params.n, x.shape[1])
    if order == AssociationOrder.LEFT:
        return matmul(matmul(feats, gate.T), select)
    return matmul(feats, matmul(gate.T, select))


def double_attention_forward(
    x: np.ndarray,
    params: DoubleAttentionParams,
    order: AssociationOrder = AssociationOrder.LEFT,
) -> np.ndarray:
    """Full block: core, channel-expanding projection, residual add; (c, L)."""
    core = double_attention_core(x, params, order)
    out = x + _project(core, params.w_out, params.b_out)
    return _require_finite("block output", out)


_TENSOR_NAMES = ("w_feat", "w_gather", "w_distr", "w_out")
_BIAS_NAMES = ("b_feat", "b_gather", "b_distr", "b_out")


def save_params(
    params: DoubleAttentionParams,
    directory: str | Path,
    order: AssociationOrder = AssociationOrder.AUTO,
) -> Path:
    """Write the weights as A2TN tensors plus a JSON manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = _TENSOR_NAMES + (_BIAS_NAMES if params.has_biases else ())
    for name in names:
        save_tensor(directory / f"{name}.a2tn", getattr(params, name))
    manifest = {
        "c": params.c,
        "m": params.m,
        "n": params.n,
        "biases": params.has_biases,
        "order": order.value,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_params(manifest_path: str | Path) -> tuple[DoubleAttentionParams, AssociationOrder]:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    directory = manifest_path.parent
    tensors = {name: load_tensor(directory / f"{name}.a2tn") for name in _TENSOR_NAMES}
    biases = {}
    if manifest.get("biases"):
        biases = {name: load_tensor(directory / f"{name}.a2tn") for name in _BIAS_NAMES}
    params = DoubleAttentionParams(**tensors, **biases)
    params.validate()
    if (params.c, params.m, params.n) != (manifest["c"], manifest["m"], manifest["n"]):
        raise ShapeError(
            f"manifest says (c={manifest['c']}, m={manifest['m']}, n={manifest['n']}) "
            f"but tensors have (c={params.c}, m={params.m}, n={params.n})"
        )
    return params, AssociationOrder(manifest.get("order", "auto"))
