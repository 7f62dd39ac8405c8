"""Deterministic dense linear algebra, the LSTM cell, loss primitives,
initialization, and a finite-difference gradient oracle.

All public operations work on 2-D float64 arrays ("matrices"; vectors are
n-by-1 columns) and are pure: identical inputs, including generator state,
give bitwise identical outputs within a kernel backend. Reductions use a
fixed left-to-right order over the contracted index, so reproducibility is
exact regardless of array size.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericError


def as_matrix(values) -> np.ndarray:
    """Coerce to a C-contiguous 2-D float64 array."""
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got ndim={m.ndim}")
    return m


def column(values) -> np.ndarray:
    """Coerce a flat sequence to an n-by-1 column matrix."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    return as_matrix(v.reshape(-1, 1))


class RngState:
    """Deterministic random stream (PCG64). Single-owner: never share one
    instance across concurrent consumers; advance it only from its owner."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def get_state(self) -> dict:
        """Serializable snapshot of the generator state."""
        return {"seed": self.seed, "bit_generator": self._gen.bit_generator.state}

    @classmethod
    def from_state(cls, state: dict) -> "RngState":
        rng = cls(state["seed"])
        rng._gen.bit_generator.state = state["bit_generator"]
        return rng


@dataclass(frozen=True)
class LstmParams:
    """LSTM cell parameters. The 4H rows of w_x / w_h / b hold the gate
    blocks in the fixed order: input, forget, output, candidate."""

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        four_h, e = self.w_x.shape
        if four_h % 4 != 0:
            raise DimensionError(f"w_x must have 4H rows, got {four_h}")
        h = four_h // 4
        if self.w_h.shape != (four_h, h):
            raise DimensionError(
                f"w_h shape {self.w_h.shape} inconsistent with w_x {self.w_x.shape}"
            )
        if self.b.shape != (four_h, 1):
            raise DimensionError(f"b shape {self.b.shape}, expected ({four_h}, 1)")

    @property
    def hidden_size(self) -> int:
        return self.w_x.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]


@dataclass(frozen=True)
class LstmStepCache:
    """Intermediates of one lstm_cell_forward call, consumed by backward."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gate_i: np.ndarray
    gate_f: np.ndarray
    gate_o: np.ndarray
    gate_g: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    params: LstmParams


def matmul(a, b) -> np.ndarray:
    """Matrix product with deterministic left-to-right summation."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return kernels.matmul(a, b)


def softmax_cross_entropy(logits, target: int):
    """Loss -log softmax(logits)[target] and its gradient w.r.t. logits.

    Max-subtracted for stability; the gradient is softmax(logits) minus the
    one-hot of the target.
    """
    logits = as_matrix(logits)
    if logits.shape[1] != 1:
        raise DimensionError(f"logits must be a column, got {logits.shape}")
    n = logits.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range for {n} classes")
    loss, probs = kernels.softmax_xent(logits, target)
    grad = probs.copy()
    grad[target, 0] -= 1.0
    return float(loss), grad


def lstm_cell_forward(x, h_prev, c_prev, p: LstmParams):
    """One LSTM step: sigmoid gates i/f/o and tanh candidate g over
    w_x @ x + w_h @ h_prev + b; c = f*c_prev + i*g; h = o*tanh(c).

    Returns (h, c, cache) with the cache holding every intermediate needed
    by lstm_cell_backward.
    """
    x = as_matrix(x)
    h_prev = as_matrix(h_prev)
    c_prev = as_matrix(c_prev)
    hsz = p.hidden_size
    if x.shape != (p.input_size, 1):
        raise DimensionError(f"x shape {x.shape}, expected ({p.input_size}, 1)")
    if h_prev.shape != (hsz, 1) or c_prev.shape != (hsz, 1):
        raise DimensionError(
            f"state shapes {h_prev.shape}/{c_prev.shape}, expected ({hsz}, 1)"
        )
    h, c, gi, gf, go, gg, tanh_c = kernels.lstm_forward(
        x, h_prev, c_prev, p.w_x, p.w_h, p.b
    )
    cache = LstmStepCache(x, h_prev, c_prev, gi, gf, go, gg, c, tanh_c, p)
    return h, c, cache


def lstm_cell_backward(cache: LstmStepCache, dh, dc):
    """Exact gradients of one LSTM step.

    Returns (dx, dh_prev, dc_prev, d_params) where d_params is an LstmParams
    holding the weight gradients.
    """
    dh = as_matrix(dh)
    dc = as_matrix(dc)
    hsz = cache.params.hidden_size
    if dh.shape != (hsz, 1) or dc.shape != (hsz, 1):
        raise ContractError(
            f"upstream gradient shapes {dh.shape}/{dc.shape} do not match the "
            f"cached step (hidden size {hsz})"
        )
    dx, dh_prev, dc_prev, dw_x, dw_h, db = kernels.lstm_backward(
        dh,
        dc,
        cache.gate_i,
        cache.gate_f,
        cache.gate_o,
        cache.gate_g,
        cache.c_prev,
        cache.tanh_c,
        cache.x,
        cache.h_prev,
        cache.params.w_x,
        cache.params.w_h,
    )
    return dx, dh_prev, dc_prev, LstmParams(dw_x, dw_h, db)


def finite_diff_grad(loss_fn, params, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix.

    Perturbs one coordinate at a time: (f(p + eps*e) - f(p - eps*e)) / (2 eps).
    The verification oracle for every analytic gradient in the package.
    """
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    params = as_matrix(params).copy()
    grad = np.zeros_like(params)
    for i in range(params.shape[0]):
        for j in range(params.shape[1]):
            orig = params[i, j]
            params[i, j] = orig + eps
            hi = float(loss_fn(params))
            params[i, j] = orig - eps
            lo = float(loss_fn(params))
            params[i, j] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(
                    f"loss_fn returned a non-finite value at coordinate ({i}, {j})"
                )
            grad[i, j] = (hi - lo) / (2.0 * eps)
    return grad


def glorot_init(rng: RngState, rows: int, cols: int) -> np.ndarray:
    """Uniform Glorot initialization on +-sqrt(6 / (rows + cols))."""
    if rows <= 0 or cols <= 0:
        raise DimensionError(f"rows and cols must be positive, got {rows}x{cols}")
    bound = np.sqrt(6.0 / (rows + cols))
    return as_matrix(rng.uniform(-bound, bound, (rows, cols)))


def gaussian_sample(rng: RngState, mu: float, sigma: float) -> float:
    """One N(mu, sigma^2) draw via the Box-Muller transform.

    Consumes exactly two uniforms per call; sigma = 0 returns mu exactly.
    """
    if sigma < 0:
        raise ContractError(f"sigma must be nonnegative, got {sigma}")
    u1 = 1.0 - float(rng.uniform(0.0, 1.0))
    u2 = float(rng.uniform(0.0, 1.0))
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return float(mu + sigma * z)
