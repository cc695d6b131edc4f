"""
Recurrent criss-cross attention.

For every position u = (i, j) of an (H, W) map the context set is
Omega_u = row i followed by column j without the duplicated self position,
H + W - 1 positions in total. One pass computes

    H_u = sum_{v in Omega_u} softmax_v(Q_u . K_v) V_v + Z_u

and R passes are chained (sharing projections unless configured otherwise).
The module output is Wf [X ; H^(R)] + bf + X.

Affinity layout: entries [0, W) are the row positions left to right, entries
[W, W + H - 1) are the column positions top to bottom with row i removed.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ccseg.core.errors import ContractViolation, WeightsLoadError
from ccseg.nn.tensor_kernels import channel_mix, softmax_axis
from ccseg.utils.validators import as_tensor, check_extent, check_same_shape


PROJECTION_NAMES = ("wq", "bq", "wk", "bk", "wv", "bv")
FUSION_NAMES = ("wf", "bf")


class AttentionConfig(BaseModel):
    """Hyperparameters of one criss-cross attention site."""

    model_config = ConfigDict(frozen=True)

    channels: int = Field(..., ge=1)
    reduction: int = Field(8, ge=1)
    recurrence: int = Field(2, ge=1)
    share_weights_across_recurrence: bool = True

    @property
    def qk_channels(self) -> int:
        return max(1, self.channels // self.reduction)

    @property
    def projection_sets(self) -> int:
        return 1 if self.share_weights_across_recurrence else self.recurrence


@dataclass(frozen=True)
class PassProjections:
    """Query, key and value 1x1 projections, kernels stored as (C_out, C_in)."""

    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PROJECTION_NAMES}


@dataclass(frozen=True)
class CCWeights:
    """All learnable tensors of one attention site."""

    passes: Tuple[PassProjections, ...]
    wf: np.ndarray
    bf: np.ndarray

    def projection(self, pass_index: int) -> PassProjections:
        return self.passes[0] if len(self.passes) == 1 else self.passes[pass_index]

    @property
    def wq(self) -> np.ndarray:
        return self.passes[0].wq

    @property
    def wk(self) -> np.ndarray:
        return self.passes[0].wk

    @property
    def wv(self) -> np.ndarray:
        return self.passes[0].wv

    def validate(self, cfg: AttentionConfig) -> None:
        c, cq = cfg.channels, cfg.qk_channels
        if len(self.passes) != cfg.projection_sets:
            raise ContractViolation(
                f"CCWeights carry {len(self.passes)} projection sets, config needs {cfg.projection_sets}"
            )
        expected = {"wq": (cq, c), "bq": (cq,), "wk": (cq, c), "bk": (cq,), "wv": (c, c), "bv": (c,)}
        for index, proj in enumerate(self.passes):
            for name, shape in expected.items():
                actual = getattr(proj, name).shape
                if actual != shape:
                    raise ContractViolation(f"CCWeights pass {index} '{name}' has shape {actual}, expected {shape}")
        if self.wf.shape != (c, 2 * c):
            raise ContractViolation(f"CCWeights 'wf' has shape {self.wf.shape}, expected {(c, 2 * c)}")
        if self.bf.shape != (c,):
            raise ContractViolation(f"CCWeights 'bf' has shape {self.bf.shape}, expected {(c,)}")
        for name, arr in self.to_tensors().items():
            if not np.all(np.isfinite(arr)):
                raise ContractViolation(f"CCWeights '{name}' contains non-finite values")

    @classmethod
    def initialize(cls, cfg: AttentionConfig, rng: np.random.Generator, zero_value_fusion: bool = False) -> "CCWeights":
        """He-scaled random weights; value and fusion paths zeroed on request."""
        c, cq = cfg.channels, cfg.qk_channels
        he = np.sqrt(2.0 / c)
        passes = []
        for _ in range(cfg.projection_sets):
            wv = np.zeros((c, c)) if zero_value_fusion else rng.standard_normal((c, c)) * he
            passes.append(
                PassProjections(
                    wq=rng.standard_normal((cq, c)) * he,
                    bq=np.zeros(cq),
                    wk=rng.standard_normal((cq, c)) * he,
                    bk=np.zeros(cq),
                    wv=wv,
                    bv=np.zeros(c),
                )
            )
        if zero_value_fusion:
            wf = np.zeros((c, 2 * c))
        else:
            wf = rng.standard_normal((c, 2 * c)) * np.sqrt(2.0 / (2 * c))
        return cls(passes=tuple(passes), wf=wf, bf=np.zeros(c))

    def to_tensors(self, prefix: str = "") -> Dict[str, np.ndarray]:
        """Flat name -> array view used by the weights file."""
        tensors: Dict[str, np.ndarray] = {}
        shared = len(self.passes) == 1
        for index, proj in enumerate(self.passes):
            pass_prefix = prefix if shared else f"{prefix}pass{index}."
            for name, arr in proj.arrays().items():
                tensors[f"{pass_prefix}{name}"] = arr
        tensors[f"{prefix}wf"] = self.wf
        tensors[f"{prefix}bf"] = self.bf
        return tensors

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], cfg: AttentionConfig, prefix: str = "") -> "CCWeights":
        def fetch(name: str) -> np.ndarray:
            key = f"{prefix}{name}"
            if key not in tensors:
                raise WeightsLoadError(f"Missing attention tensor '{key}'", tensor_name=key)
            return np.asarray(tensors[key], dtype=np.float64)

        passes = []
        for index in range(cfg.projection_sets):
            pass_prefix = "" if cfg.share_weights_across_recurrence else f"pass{index}."
            passes.append(PassProjections(**{name: fetch(pass_prefix + name) for name in PROJECTION_NAMES}))
        weights = cls(passes=tuple(passes), wf=fetch("wf"), bf=fetch("bf"))
        try:
            weights.validate(cfg)
        except ContractViolation as exc:
            raise WeightsLoadError(f"Attention tensors under '{prefix}' are inconsistent: {exc}") from exc
        return weights

    def zeros_like(self) -> "CCWeights":
        return CCWeights(
            passes=tuple(PassProjections(**{n: np.zeros_like(a) for n, a in p.arrays().items()}) for p in self.passes),
            wf=np.zeros_like(self.wf),
            bf=np.zeros_like(self.bf),
        )


@dataclass
class _PassCache:
    z: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attention: np.ndarray


@dataclass
class _ForwardTrace:
    output: np.ndarray
    last_hidden: np.ndarray
    passes: List[_PassCache] = field(default_factory=list)


def _column_rows(h: int) -> np.ndarray:
    """(H, H-1) table: for row i, the column rows r != i in ascending order."""
    rows = np.arange(h)
    return np.stack([np.delete(rows, i) for i in range(h)]).reshape(h, h - 1)


def _column_index(h: int, w: int) -> np.ndarray:
    return np.broadcast_to(_column_rows(h)[:, None, :], (h, w, h - 1))


def _scores(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """S[i, j, :] = a_u . b_v for v in Omega_u, in affinity layout."""
    _, h, w = a.shape
    row = a.transpose(1, 2, 0) @ b.transpose(1, 0, 2)
    col_full = (a.transpose(2, 1, 0) @ b.transpose(2, 0, 1)).transpose(1, 0, 2)
    col = np.take_along_axis(col_full, _column_index(h, w), axis=2)
    return np.concatenate([row, col], axis=2)


def _split(weights: np.ndarray, h: int, w: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row block and column block expanded to (H, W, H) with zeros on the self row."""
    row = weights[:, :, :w]
    col_full = np.zeros((h, w, h))
    np.put_along_axis(col_full, _column_index(h, w), weights[:, :, w:], axis=2)
    return row, col_full


def _gather(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    """out[:, u] = sum_{v in Omega_u} weights[u, v] values[:, v]."""
    _, h, w = values.shape
    row, col_full = _split(weights, h, w)
    from_row = (row @ values.transpose(1, 2, 0)).transpose(2, 0, 1)
    from_col = (col_full.transpose(1, 0, 2) @ values.transpose(2, 1, 0)).transpose(2, 1, 0)
    return from_row + from_col


def _scatter(weights: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Adjoint of _gather in its values argument: out[:, v] = sum_u weights[u, v] grads[:, u]."""
    _, h, w = grads.shape
    row, col_full = _split(weights, h, w)
    to_row = (row.transpose(0, 2, 1) @ grads.transpose(1, 2, 0)).transpose(2, 0, 1)
    to_col = (col_full.transpose(1, 2, 0) @ grads.transpose(2, 1, 0)).transpose(2, 1, 0)
    return to_row + to_col


def affinity_entry_count(h: int, w: int) -> int:
    """Number of affinity logits of one criss-cross pass on an (h, w) map."""
    return h * w * (h + w - 1)


def cc_affinity(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """
    Criss-cross logits.

    Args:
        q: (C', H, W) queries
        k: (C', H, W) keys

    Returns:
        (H, W, H + W - 1) logits in affinity layout
    """
    q = as_tensor(q, "queries", rank=3)
    k = as_tensor(k, "keys", rank=3)
    check_same_shape(q, k, ("queries", "keys"))
    return _scores(q, k)


def cc_aggregate(attention: np.ndarray, v: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    Weighted sum of values over each position's context set plus residual x.

    The attention weights of every position must sum to 1.
    """
    v = as_tensor(v, "values", rank=3)
    x = as_tensor(x, "residual", rank=3)
    attention = as_tensor(attention, "attention", rank=3)
    check_same_shape(v, x, ("values", "residual"))
    _, h, w = v.shape
    if attention.shape != (h, w, h + w - 1):
        raise ContractViolation(f"attention shape {attention.shape} does not match map {h}x{w}")
    deviation = np.max(np.abs(attention.sum(axis=2) - 1.0))
    if deviation > 1e-9:
        raise ContractViolation(f"attention weights are not normalized (max deviation {deviation:.3e})")
    return _gather(attention, v) + x


def _forward(x: np.ndarray, weights: CCWeights, cfg: AttentionConfig) -> _ForwardTrace:
    z = x
    caches: List[_PassCache] = []
    for index in range(cfg.recurrence):
        proj = weights.projection(index)
        q = channel_mix(proj.wq, proj.bq, z)
        k = channel_mix(proj.wk, proj.bk, z)
        v = channel_mix(proj.wv, proj.bv, z)
        attention = softmax_axis(_scores(q, k), axis=2)
        caches.append(_PassCache(z=z, q=q, k=k, v=v, attention=attention))
        z = _gather(attention, v) + z
    fused = channel_mix(weights.wf, weights.bf, np.concatenate([x, z], axis=0))
    return _ForwardTrace(output=fused + x, last_hidden=z, passes=caches)


def _check_input(x, cfg: AttentionConfig) -> np.ndarray:
    x = as_tensor(x, "attention input", rank=3)
    check_extent("attention input", "C", x.shape[0], cfg.channels)
    return x


def rcca_forward(x: np.ndarray, weights: CCWeights, cfg: AttentionConfig) -> np.ndarray:
    """
    Recurrent criss-cross attention followed by concat-and-fuse and a residual.

    Args:
        x: (C, H, W) input map
        weights: Site weights matching cfg
        cfg: Attention hyperparameters

    Returns:
        (C, H, W) refined map
    """
    x = _check_input(x, cfg)
    return _forward(x, weights, cfg).output


def rcca_backward(
    x: np.ndarray,
    weights: CCWeights,
    cfg: AttentionConfig,
    upstream: np.ndarray,
) -> Tuple[np.ndarray, CCWeights]:
    """
    Analytic gradients of rcca_forward.

    Args:
        x: Input of the forward call
        weights: Weights of the forward call
        cfg: Attention hyperparameters
        upstream: dLoss/dOutput, same shape as the forward output

    Returns:
        (dLoss/dx, dLoss/dweights) with the weights gradient shaped like weights
    """
    x = _check_input(x, cfg)
    upstream = as_tensor(upstream, "upstream gradient", rank=3)
    check_same_shape(upstream, x, ("upstream gradient", "forward output"))

    trace = _forward(x, weights, cfg)
    c = cfg.channels
    g = upstream.reshape(c, -1)

    concat = np.concatenate([x, trace.last_hidden], axis=0).reshape(2 * c, -1)
    grad_wf = g @ concat.T
    grad_bf = g.sum(axis=1)
    d_concat = (weights.wf.T @ g).reshape((2 * c,) + x.shape[1:])

    grad_x = upstream + d_concat[:c]
    d_hidden = d_concat[c:]

    grads = [{name: np.zeros_like(arr) for name, arr in p.arrays().items()} for p in weights.passes]

    for index in reversed(range(cfg.recurrence)):
        cache = trace.passes[index]
        proj = weights.projection(index)
        slot = grads[0] if len(grads) == 1 else grads[index]

        d_attention = _scores(d_hidden, cache.v)
        d_v = _scatter(cache.attention, d_hidden)
        # softmax backward along the context axis
        d_logits = cache.attention * (
            d_attention - np.sum(cache.attention * d_attention, axis=2, keepdims=True)
        )
        d_q = _gather(d_logits, cache.k)
        d_k = _scatter(d_logits, cache.q)

        z_flat = cache.z.reshape(c, -1)
        d_z = d_hidden.reshape(c, -1).copy()
        for w_name, b_name, d_proj in (("wq", "bq", d_q), ("wk", "bk", d_k), ("wv", "bv", d_v)):
            d_flat = d_proj.reshape(d_proj.shape[0], -1)
            slot[w_name] += d_flat @ z_flat.T
            slot[b_name] += d_flat.sum(axis=1)
            d_z += getattr(proj, w_name).T @ d_flat
        d_hidden = d_z.reshape(x.shape)

    grad_x = grad_x + d_hidden
    grad_weights = CCWeights(
        passes=tuple(PassProjections(**slot) for slot in grads),
        wf=grad_wf,
        bf=grad_bf,
    )
    return grad_x, grad_weights


def influence_map(
    cfg: AttentionConfig,
    weights: CCWeights,
    x: np.ndarray,
    position: Tuple[int, int],
    passes: Optional[int] = None,
    channel: int = 0,
    delta: float = 1e-3,
    tolerance: float = 1e-12,
) -> Set[Tuple[int, int]]:
    """
    Output positions whose value moves when one input element is perturbed.

    Args:
        cfg: Attention hyperparameters
        weights: Site weights
        x: (C, H, W) input map
        position: (row, column) of the perturbed input
        passes: Recurrence override, cfg.recurrence when omitted
        channel: Perturbed channel
        delta: Perturbation size
        tolerance: Absolute change treated as "moved"

    Returns:
        Set of (row, column) output positions
    """
    x = _check_input(x, cfg)
    _, h, w = x.shape
    i, j = position
    if not (0 <= i < h and 0 <= j < w):
        raise ContractViolation(f"position {position} lies outside the {h}x{w} map")
    if not 0 <= channel < cfg.channels:
        raise ContractViolation(f"channel {channel} lies outside [0, {cfg.channels})")

    run_cfg = cfg if passes is None else cfg.model_copy(update={"recurrence": passes})
    if not run_cfg.share_weights_across_recurrence and run_cfg.recurrence > len(weights.passes):
        raise ContractViolation(f"weights hold {len(weights.passes)} passes, {run_cfg.recurrence} requested")

    baseline = _forward(x, weights, run_cfg).output
    perturbed_input = x.copy()
    perturbed_input[channel, i, j] += delta
    perturbed = _forward(perturbed_input, weights, run_cfg).output

    moved = np.max(np.abs(perturbed - baseline), axis=0) > tolerance
    return {(int(r), int(c)) for r, c in zip(*np.nonzero(moved))}


def rcca_forward_reference(x: np.ndarray, weights: CCWeights, cfg: AttentionConfig) -> np.ndarray:
    """
    Brute-force oracle: dense attention over all positions with a criss-cross mask.

    Every position materializes its own context list explicitly; used to
    cross-check rcca_forward.
    """
    x = _check_input(x, cfg)
    c, h, w = x.shape
    z = x
    for index in range(cfg.recurrence):
        proj = weights.projection(index)
        q = np.einsum("oc,chw->ohw", proj.wq, z) + proj.bq[:, None, None]
        k = np.einsum("oc,chw->ohw", proj.wk, z) + proj.bk[:, None, None]
        v = np.einsum("oc,chw->ohw", proj.wv, z) + proj.bv[:, None, None]
        nxt = np.empty_like(z)
        for i in range(h):
            for j in range(w):
                context = [(r, s) for r in range(h) for s in range(w) if r == i or s == j]
                logits = np.array([q[:, i, j] @ k[:, r, s] for r, s in context])
                weights_u = np.exp(logits - logits.max())
                weights_u /= weights_u.sum()
                acc = np.zeros(c)
                for a, (r, s) in zip(weights_u, context):
                    acc += a * v[:, r, s]
                nxt[:, i, j] = acc + z[:, i, j]
        z = nxt
    fused = np.einsum("oc,chw->ohw", weights.wf, np.concatenate([x, z], axis=0)) + weights.bf[:, None, None]
    return fused + x


def gradient_check(
    cfg: AttentionConfig,
    seed: int,
    height: int = 3,
    width: int = 3,
    epsilon: float = 1e-5,
    loss: str = "random",
) -> Dict[str, float]:
    """
    Compare rcca_backward with central finite differences.

    Args:
        cfg: Attention hyperparameters (keep channels small)
        seed: Seed for input, weights and loss weighting
        height: Map height
        width: Map width
        epsilon: Finite-difference step
        loss: "sum" for sum of outputs, "random" for a seeded weighted sum

    Returns:
        Max relative error per parameter group ("x" plus every weight tensor)
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((cfg.channels, height, width))
    weights = CCWeights.initialize(cfg, rng)
    if loss == "sum":
        g = np.ones_like(x)
    else:
        g = rng.standard_normal(x.shape)

    def objective(inp: np.ndarray, w: CCWeights) -> float:
        return float(np.sum(_forward(inp, w, cfg).output * g))

    grad_x, grad_w = rcca_backward(x, weights, cfg, g)

    def relative(analytic: float, numeric: float) -> float:
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)

    report: Dict[str, float] = {}
    worst = 0.0
    for idx in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[idx] += epsilon
        minus[idx] -= epsilon
        numeric = (objective(plus, weights) - objective(minus, weights)) / (2 * epsilon)
        worst = max(worst, relative(grad_x[idx], numeric))
    report["x"] = worst

    tensors = weights.to_tensors()
    analytic_tensors = grad_w.to_tensors()
    for name, arr in tensors.items():
        worst = 0.0
        for idx in np.ndindex(arr.shape):
            numeric_parts = []
            for sign in (1.0, -1.0):
                shifted = dict(tensors)
                moved = arr.copy()
                moved[idx] += sign * epsilon
                shifted[name] = moved
                numeric_parts.append(objective(x, CCWeights.from_tensors(shifted, cfg)))
            numeric = (numeric_parts[0] - numeric_parts[1]) / (2 * epsilon)
            worst = max(worst, relative(analytic_tensors[name][idx], numeric))
        report[name] = worst
    return report
