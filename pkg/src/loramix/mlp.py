"""The neural coefficient pipeline: a scalar layer-normed ReLU MLP.

Each distance value is mapped independently through a 1 -> H -> H -> 1
network (two layer-normed ReLU blocks, linear head); the transformed row
is then softmin-normalized exactly like the attentional pipeline.  The
network trains on CPU by full-batch gradient descent on the leave-one-out
adapter reconstruction error, evaluated entirely in the N x N Gram domain
so the flattened adapters are never touched during training:

    ||W theta_all - theta_all||_F^2 = tr((W - I) G (W - I)^T)

All arithmetic is float64; forward, backward, and training are
deterministic functions of their inputs and the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensorfile
from .adapters import GramMatrix
from .coefficients import CoefficientMatrix, CoefficientVector, softmin
from .divergences import SENTINEL, AlignmentVector, DistanceMatrix
from .errors import ConvergenceError, GradCheckError, MaskError

#: Hidden width of the production-scale network.
CANONICAL_HIDDEN_DIM = 4000

PARAM_GROUPS = ("W1", "b1", "ln1.gain", "ln1.bias", "W2", "b2",
                "ln2.gain", "ln2.bias", "W3", "b3")

_ATTR_FOR_GROUP = {name: name.replace(".", "_") for name in PARAM_GROUPS}


@dataclass
class MlpParameters:
    """Weights of the 1 -> H -> H -> 1 layer-normed ReLU network."""

    W1: np.ndarray          # (H, 1)
    b1: np.ndarray          # (H,)
    ln1_gain: np.ndarray    # (H,)
    ln1_bias: np.ndarray    # (H,)
    W2: np.ndarray          # (H, H)
    b2: np.ndarray          # (H,)
    ln2_gain: np.ndarray    # (H,)
    ln2_bias: np.ndarray    # (H,)
    W3: np.ndarray          # (1, H)
    b3: np.ndarray          # (1,)
    ln_eps: float = 1e-5

    def __post_init__(self):
        h = self.W1.shape[0]
        expected = {"W1": (h, 1), "b1": (h,), "ln1_gain": (h,), "ln1_bias": (h,),
                    "W2": (h, h), "b2": (h,), "ln2_gain": (h,), "ln2_bias": (h,),
                    "W3": (1, h), "b3": (1,)}
        for attr, shape in expected.items():
            arr = np.asarray(getattr(self, attr), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{attr} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{attr} contains non-finite values")
            setattr(self, attr, arr)

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    def group(self, name: str) -> np.ndarray:
        return getattr(self, _ATTR_FOR_GROUP[name])

    def copy(self) -> "MlpParameters":
        return MlpParameters(**{_ATTR_FOR_GROUP[g]: self.group(g).copy() for g in PARAM_GROUPS},
                             ln_eps=self.ln_eps)

    def allclose(self, other: "MlpParameters", rtol=0.0, atol=0.0) -> bool:
        return all(np.allclose(self.group(g), other.group(g), rtol=rtol, atol=atol)
                   for g in PARAM_GROUPS)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings for full-batch gradient descent."""

    learning_rate: float
    epochs: int
    seed: int
    layer_norm_epsilon: float = 1e-5
    gradient_clip: float | None = None

    def __post_init__(self):
        # learning_rate 0 is allowed as a degenerate no-op schedule.
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.layer_norm_epsilon <= 0:
            raise ValueError("layer_norm_epsilon must be positive")
        if self.gradient_clip is not None and self.gradient_clip <= 0:
            raise ValueError("gradient_clip must be positive when set")


def init(hidden_dim: int, seed: int, ln_eps: float = 1e-5) -> MlpParameters:
    """Uniform +-sqrt(1/fan_in) weights, unit LN gains, zero biases."""
    if hidden_dim < 1:
        raise ValueError("hidden_dim must be >= 1")
    rng = np.random.default_rng(seed)
    bound = float(np.sqrt(1.0 / hidden_dim))
    return MlpParameters(
        W1=rng.uniform(-1.0, 1.0, size=(hidden_dim, 1)),
        b1=np.zeros(hidden_dim),
        ln1_gain=np.ones(hidden_dim),
        ln1_bias=np.zeros(hidden_dim),
        W2=rng.uniform(-bound, bound, size=(hidden_dim, hidden_dim)),
        b2=np.zeros(hidden_dim),
        ln2_gain=np.ones(hidden_dim),
        ln2_bias=np.zeros(hidden_dim),
        W3=rng.uniform(-bound, bound, size=(1, hidden_dim)),
        b3=np.zeros(1),
        ln_eps=ln_eps,
    )


def _layer_norm_forward(v: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float):
    mu = v.mean(axis=1, keepdims=True)
    var = np.square(v - mu).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (v - mu) * inv_std
    return xhat * gain + bias, xhat, inv_std


def _layer_norm_backward(dout, xhat, inv_std, gain):
    dgain = (dout * xhat).sum(axis=0)
    dbias = dout.sum(axis=0)
    dxhat = dout * gain
    dv = (dxhat - dxhat.mean(axis=1, keepdims=True)
          - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)) * inv_std
    return dv, dgain, dbias


def _forward_batch(params: MlpParameters, x: np.ndarray):
    """Run the network on a batch of scalars; returns outputs plus cache."""
    x = np.asarray(x, dtype=np.float64)
    pre1 = x[:, None] * params.W1[:, 0][None, :] + params.b1
    ln1, xhat1, inv1 = _layer_norm_forward(pre1, params.ln1_gain, params.ln1_bias, params.ln_eps)
    h = np.maximum(ln1, 0.0)
    pre2 = h @ params.W2.T + params.b2
    ln2, xhat2, inv2 = _layer_norm_forward(pre2, params.ln2_gain, params.ln2_bias, params.ln_eps)
    hhat = np.maximum(ln2, 0.0)
    y = hhat @ params.W3[0] + params.b3[0]
    cache = (x, ln1, xhat1, inv1, h, ln2, xhat2, inv2, hhat)
    return y, cache


def _backward_batch(params: MlpParameters, cache, dy: np.ndarray) -> dict[str, np.ndarray]:
    x, ln1, xhat1, inv1, h, ln2, xhat2, inv2, hhat = cache
    grads: dict[str, np.ndarray] = {}
    grads["W3"] = (dy @ hhat)[None, :]
    grads["b3"] = np.array([dy.sum()])
    dhhat = dy[:, None] * params.W3[0][None, :]
    dln2 = dhhat * (ln2 > 0)
    dpre2, dg2, dbeta2 = _layer_norm_backward(dln2, xhat2, inv2, params.ln2_gain)
    grads["ln2.gain"], grads["ln2.bias"] = dg2, dbeta2
    grads["W2"] = dpre2.T @ h
    grads["b2"] = dpre2.sum(axis=0)
    dh = dpre2 @ params.W2
    dln1 = dh * (ln1 > 0)
    dpre1, dg1, dbeta1 = _layer_norm_backward(dln1, xhat1, inv1, params.ln1_gain)
    grads["ln1.gain"], grads["ln1.bias"] = dg1, dbeta1
    grads["W1"] = (dpre1.T @ x)[:, None]
    grads["b1"] = dpre1.sum(axis=0)
    return grads


def mlp_forward(params: MlpParameters, x: float) -> float:
    """Network output for a single scalar distance value."""
    y, _ = _forward_batch(params, np.array([float(x)]))
    return float(y[0])


def neural_coefficients(params: MlpParameters, a: AlignmentVector) -> CoefficientVector:
    """Transform unmasked distances through the MLP, then softmin with the same mask."""
    n = a.values.size
    keep = np.array([k not in a.masked for k in range(n)], dtype=bool)
    if not keep.any():
        raise MaskError("neural_coefficients: all entries are masked")
    scores = np.full(n, SENTINEL, dtype=np.float64)
    scores[keep], _ = _forward_batch(params, a.values[keep])
    return softmin(scores, 1.0, a.masked, bank_ids=a.bank_ids, method="neural")


def neural_coefficient_matrix(params: MlpParameters, d: DistanceMatrix) -> CoefficientMatrix:
    """Row-wise neural coefficients over a self-masked distance matrix."""
    if not d.self_masked:
        raise MaskError("neural_coefficient_matrix requires a self-masked distance matrix")
    rows = tuple(neural_coefficients(params, d.row_alignment(i)) for i in range(d.size))
    return CoefficientMatrix(d.ids, rows)


def loss_gram(coeffs: CoefficientMatrix, gram: GramMatrix) -> float:
    """Mean squared parameter error tr((W-I) G (W-I)^T) / (N * p)."""
    if coeffs.ids != gram.ids:
        raise ValueError("coefficient and gram ids must match")
    w = coeffs.to_array()
    d = w - np.eye(len(coeffs.ids))
    return float(np.sum((d @ gram.values) * d)) / (len(coeffs.ids) * gram.total_params)


def _masked_cells(d: DistanceMatrix) -> tuple[np.ndarray, np.ndarray]:
    keep = d.values != SENTINEL
    np.fill_diagonal(keep, False)
    rows, cols = np.nonzero(keep)
    return rows, cols


def _loss_and_grads(params: MlpParameters, d: DistanceMatrix, gram: GramMatrix):
    """Fused forward/backward over the whole matrix; returns (loss, W, grads)."""
    n = d.size
    rows, cols = _masked_cells(d)
    x = d.values[rows, cols]
    scores, cache = _forward_batch(params, x)

    w = np.zeros((n, n), dtype=np.float64)
    bounds = np.searchsorted(rows, np.arange(n + 1))  # rows come out sorted
    row_slices: list[slice] = []
    for i in range(n):
        sel = slice(int(bounds[i]), int(bounds[i + 1]))
        row_slices.append(sel)
        if sel.start == sel.stop:
            raise MaskError(f"distance row {i} is fully masked")
        s = scores[sel]
        e = np.exp(-(s - s.min()))
        w[i, cols[sel]] = e / e.sum()

    delta = w - np.eye(n)
    denom = n * gram.total_params
    loss = float(np.sum((delta @ gram.values) * delta)) / denom
    dw = 2.0 * (delta @ gram.values) / denom

    ds = np.empty_like(scores)
    for i in range(n):
        sel = row_slices[i]
        wi = w[i, cols[sel]]
        gi = dw[i, cols[sel]]
        ds[sel] = -wi * (gi - float(gi @ wi))
    grads = _backward_batch(params, cache, ds)
    return loss, w, grads


def _loss_value(params: MlpParameters, d: DistanceMatrix, gram: GramMatrix) -> float:
    loss, _, _ = _loss_and_grads(params, d, gram)
    return loss


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))


def train(distances: DistanceMatrix, gram: GramMatrix, hidden_dim: int,
          cfg: TrainConfig,
          callback: Callable[[int, float], None] | None = None) -> MlpParameters:
    """Full-batch gradient descent on the Gram-domain reconstruction loss.

    Deterministic in the seed; returns the best-loss parameters seen, so
    the result never regresses past the initialization.
    """
    if not distances.self_masked:
        raise MaskError("train requires a self-masked distance matrix")
    if distances.ids != gram.ids:
        raise ValueError("distance and gram ids must match")
    params = init(hidden_dim, cfg.seed, cfg.layer_norm_epsilon)
    best_loss = np.inf
    best = params.copy()
    for epoch in range(cfg.epochs):
        loss, _, grads = _loss_and_grads(params, distances, gram)
        if not np.isfinite(loss):
            raise ConvergenceError(f"non-finite training loss at epoch {epoch}")
        if callback is not None:
            callback(epoch, loss)
        if loss < best_loss:
            best_loss = loss
            best = params.copy()
        scale = cfg.learning_rate
        if cfg.gradient_clip is not None:
            norm = _global_norm(grads)
            if norm > cfg.gradient_clip:
                scale *= cfg.gradient_clip / norm
        for name in PARAM_GROUPS:
            attr = _ATTR_FOR_GROUP[name]
            setattr(params, attr, getattr(params, attr) - scale * grads[name])
    final_loss = _loss_value(params, distances, gram)
    if not np.isfinite(final_loss):
        raise ConvergenceError(f"non-finite training loss at epoch {cfg.epochs}")
    if final_loss < best_loss:
        best = params.copy()
    return best


def grad_check(params: MlpParameters, distances: DistanceMatrix, gram: GramMatrix,
               tol: float = 1e-4, step: float = 1e-5) -> dict:
    """Compare analytic gradients against central finite differences.

    Returns a per-group report; raises GradCheckError naming the worst
    parameter when the maximum relative error exceeds ``tol``.  The
    relative-error denominator is floored at 1e-6 * max(1, |loss|): central
    differences carry ~ulp(loss)/step of cancellation noise, so gradients
    that are structurally zero would otherwise report pure noise.
    """
    loss, _, analytic = _loss_and_grads(params, distances, gram)
    floor = 1e-6 * max(1.0, abs(loss))
    report: dict = {"groups": {}, "max_rel_error": 0.0, "worst_parameter": None}
    work = params.copy()
    for name in PARAM_GROUPS:
        arr = work.group(name)
        worst = 0.0
        worst_index = None
        for index in np.ndindex(arr.shape):
            original = arr[index]
            arr[index] = original + step
            up = _loss_value(work, distances, gram)
            arr[index] = original - step
            down = _loss_value(work, distances, gram)
            arr[index] = original
            numeric = (up - down) / (2.0 * step)
            a = float(analytic[name][index])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if rel > worst:
                worst = rel
                worst_index = index
        report["groups"][name] = {"max_rel_error": worst,
                                  "worst_index": list(worst_index) if worst_index else None}
        if worst > report["max_rel_error"]:
            report["max_rel_error"] = worst
            report["worst_parameter"] = f"{name}{list(worst_index)}" if worst_index else name
    if report["max_rel_error"] > tol:
        raise GradCheckError(
            f"gradient check failed: {report['worst_parameter']} has relative error "
            f"{report['max_rel_error']:.3e} > {tol}"
        )
    return report


_CKPT_PREFIX = "mlp."


def save_mlp(params: MlpParameters, path: str | Path, train_meta: dict | None = None) -> Path:
    """Write a float32 checkpoint plus a JSON sidecar with training settings."""
    path = Path(path)
    tensors = {_CKPT_PREFIX + name: params.group(name).astype(np.float32)
               for name in PARAM_GROUPS}
    tensorfile.write_tensors(path, tensors)
    sidecar = {"H": params.hidden_dim, "layer_norm_epsilon": params.ln_eps}
    if train_meta:
        sidecar.update(train_meta)
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return path


def load_mlp(path: str | Path) -> tuple[MlpParameters, dict]:
    """Read a checkpoint written by save_mlp; values come back as float32-exact."""
    path = Path(path)
    tensors, _ = tensorfile.read_tensors(path)
    sidecar_path = Path(str(path) + ".json")
    meta = json.loads(sidecar_path.read_text(encoding="utf-8")) if sidecar_path.exists() else {}
    kwargs = {}
    for name in PARAM_GROUPS:
        key = _CKPT_PREFIX + name
        if key not in tensors:
            raise ValueError(f"{path}: checkpoint missing tensor '{key}'")
        kwargs[_ATTR_FOR_GROUP[name]] = tensors[key].astype(np.float64)
    params = MlpParameters(**kwargs, ln_eps=float(meta.get("layer_norm_epsilon", 1e-5)))
    return params, meta
