"""
Minimal differentiable toolkit: dense, gated-recurrent and bidirectional primitives
with hand-written backward passes, losses, momentum SGD and a gradient checker.

Forward functions return (output, cache); the matching *_backward takes the upstream
gradient and the cache. Parameter gradients are returned as dicts keyed by the full
parameter name so they can be summed into one ParamStore-shaped dict.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .. import config
from ..exceptions import NonFiniteError, ShapeMismatchError

Grads = Dict[str, np.ndarray]

GRU_GATES = ('z', 'r', 'h')


def check_finite(where: str, *arrays):
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"Non-finite values reached {where}")


def accumulate(grads: Grads, name: str, value: np.ndarray):
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = np.array(value, dtype=float)


@dataclass
class Tensor:
    """Parameter values; gradients travel separately as Grads dicts"""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim > 3:
            raise ShapeMismatchError(f"Tensors have rank <= 3, got {self.values.ndim}")
        check_finite('Tensor', self.values)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape


class ParamStore:
    """Named parameters with a reproducible initialization record"""

    def __init__(self, seed: int = 0, scheme: str = config.INIT_SCHEME):
        self.seed = seed
        self.scheme = scheme
        self._rng = np.random.default_rng(seed)
        self._params: Dict[str, Tensor] = {}

    def _register(self, name: str, values: np.ndarray) -> np.ndarray:
        if name in self._params:
            raise ValueError(f"Parameter {name} registered twice")
        self._params[name] = Tensor(values)
        return self._params[name].values

    def add_uniform(self, name: str, shape: Tuple[int, int]) -> np.ndarray:
        """Glorot uniform: U(-s, s), s = sqrt(6 / (fan_in + fan_out))"""
        fan_out, fan_in = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self._register(name, self._rng.uniform(-limit, limit, size=shape))

    def add_zeros(self, name: str, shape: Tuple[int, ...]) -> np.ndarray:
        return self._register(name, np.zeros(shape))

    def add_constant(self, name: str, shape: Tuple[int, ...], value: float) -> np.ndarray:
        return self._register(name, np.full(shape, float(value)))

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name].values

    def __setitem__(self, name: str, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != self._params[name].shape:
            raise ShapeMismatchError(
                f"{name}: shape {values.shape} != {self._params[name].shape}"
            )
        check_finite(name, values)
        self._params[name].values = values

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def values(self) -> Dict[str, np.ndarray]:
        """Live views of the parameter arrays (mutating them mutates the store)"""
        return {name: tensor.values for name, tensor in self._params.items()}

    def group(self, name: str) -> str:
        return name.split('.', 1)[0]

    def copy(self) -> 'ParamStore':
        clone = ParamStore(self.seed, self.scheme)
        for name, tensor in self._params.items():
            clone._params[name] = Tensor(tensor.values.copy())
        return clone

    def to_dict(self) -> dict:
        """Checkpoint layout: header plus name -> {shape, values}"""
        return {
            'header': {'seed': self.seed, 'scheme': self.scheme},
            'params': {
                name: {'shape': list(t.shape), 'values': t.values.reshape(-1).tolist()}
                for name, t in self._params.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ParamStore':
        header = data.get('header', {})
        store = cls(seed=int(header.get('seed', 0)), scheme=header.get('scheme', config.INIT_SCHEME))
        for name, entry in data['params'].items():
            values = np.asarray(entry['values'], dtype=float)
            store._register(name, values.reshape(entry['shape']))
        return store


# ============================================================================
# Dense layer and activations
# ============================================================================

def affine(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, tuple]:
    """y = W x + b for a vector x of shape (n,) or a batch of shape (m, n)"""
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeMismatchError(
            f"affine: x {x.shape}, W {W.shape}, b {b.shape} are incompatible"
        )
    check_finite('affine', x)
    return x @ W.T + b, (x, W)


def affine_backward(dy: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, W = cache
    dx = dy @ W
    if x.ndim == 1:
        return dx, np.outer(dy, x), dy.copy()
    return dx, dy.T @ x, dy.sum(axis=0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z)
    return shifted - np.log(np.sum(np.exp(shifted)))


def softmax_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given the gradient w.r.t. the probabilities p"""
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


# ============================================================================
# Gated recurrent cell
# ============================================================================

def add_gru(store: ParamStore, prefix: str, input_dim: int, hidden_dim: int):
    for gate in GRU_GATES:
        store.add_uniform(f"{prefix}.W{gate}", (hidden_dim, input_dim))
        store.add_uniform(f"{prefix}.U{gate}", (hidden_dim, hidden_dim))
        store.add_zeros(f"{prefix}.b{gate}", (hidden_dim,))


def recurrent_step(x: np.ndarray, h_prev: np.ndarray, params: Mapping[str, np.ndarray],
                   prefix: str) -> Tuple[np.ndarray, tuple]:
    """h = (1 - z) * h_prev + z * tanh(Wh x + Uh (r * h_prev) + bh)"""
    Wz, Uz, bz = params[f"{prefix}.Wz"], params[f"{prefix}.Uz"], params[f"{prefix}.bz"]
    Wr, Ur, br = params[f"{prefix}.Wr"], params[f"{prefix}.Ur"], params[f"{prefix}.br"]
    Wh, Uh, bh = params[f"{prefix}.Wh"], params[f"{prefix}.Uh"], params[f"{prefix}.bh"]
    if x.shape != (Wz.shape[1],) or h_prev.shape != (Uz.shape[0],):
        raise ShapeMismatchError(
            f"{prefix}: x {x.shape} / h {h_prev.shape} do not match W {Wz.shape}"
        )
    check_finite(prefix, x, h_prev)
    z = sigmoid(Wz @ x + Uz @ h_prev + bz)
    r = sigmoid(Wr @ x + Ur @ h_prev + br)
    candidate = np.tanh(Wh @ x + Uh @ (r * h_prev) + bh)
    h = (1.0 - z) * h_prev + z * candidate
    return h, (prefix, x, h_prev, z, r, candidate, params)


def recurrent_step_backward(dh: np.ndarray, cache: tuple) -> Tuple[np.ndarray, np.ndarray, Grads]:
    prefix, x, h_prev, z, r, candidate, params = cache
    Wz, Uz = params[f"{prefix}.Wz"], params[f"{prefix}.Uz"]
    Wr, Ur = params[f"{prefix}.Wr"], params[f"{prefix}.Ur"]
    Wh, Uh = params[f"{prefix}.Wh"], params[f"{prefix}.Uh"]

    dz = dh * (candidate - h_prev)
    dcandidate = dh * z
    dh_prev = dh * (1.0 - z)

    da_h = dcandidate * (1.0 - candidate ** 2)
    drh = Uh.T @ da_h
    dr = drh * h_prev
    dh_prev = dh_prev + drh * r

    da_z = dz * z * (1.0 - z)
    da_r = dr * r * (1.0 - r)

    dx = Wh.T @ da_h + Wz.T @ da_z + Wr.T @ da_r
    dh_prev = dh_prev + Uz.T @ da_z + Ur.T @ da_r

    grads = {
        f"{prefix}.Wz": np.outer(da_z, x), f"{prefix}.Uz": np.outer(da_z, h_prev), f"{prefix}.bz": da_z,
        f"{prefix}.Wr": np.outer(da_r, x), f"{prefix}.Ur": np.outer(da_r, h_prev), f"{prefix}.br": da_r,
        f"{prefix}.Wh": np.outer(da_h, x), f"{prefix}.Uh": np.outer(da_h, r * h_prev), f"{prefix}.bh": da_h,
    }
    return dx, dh_prev, grads


def bidirectional_encode(xs: np.ndarray, params: Mapping[str, np.ndarray],
                         prefix: str) -> Tuple[np.ndarray, tuple]:
    """Run {prefix}.fwd left-to-right and {prefix}.bwd right-to-left; g_j = [h->_j, h<-_j]"""
    k = xs.shape[0]
    if k < 1:
        raise ShapeMismatchError("bidirectional_encode needs at least one slot")
    hidden = params[f"{prefix}.fwd.Uz"].shape[0]

    forward_states, forward_caches = [], []
    h = np.zeros(hidden)
    for j in range(k):
        h, cache = recurrent_step(xs[j], h, params, f"{prefix}.fwd")
        forward_states.append(h)
        forward_caches.append(cache)

    backward_states: List[Optional[np.ndarray]] = [None] * k
    backward_caches: List[Optional[tuple]] = [None] * k
    h = np.zeros(hidden)
    for j in reversed(range(k)):
        h, cache = recurrent_step(xs[j], h, params, f"{prefix}.bwd")
        backward_states[j] = h
        backward_caches[j] = cache

    G = np.concatenate([np.stack(forward_states), np.stack(backward_states)], axis=1)
    return G, (hidden, forward_caches, backward_caches)


def bidirectional_encode_backward(dG: np.ndarray, cache: tuple) -> Tuple[np.ndarray, Grads]:
    hidden, forward_caches, backward_caches = cache
    k = dG.shape[0]
    dxs = [None] * k
    grads: Grads = {}

    carry = np.zeros(hidden)
    for j in reversed(range(k)):
        dx, carry, step_grads = recurrent_step_backward(dG[j, :hidden] + carry, forward_caches[j])
        dxs[j] = dx
        for name, value in step_grads.items():
            accumulate(grads, name, value)

    carry = np.zeros(hidden)
    for j in range(k):
        dx, carry, step_grads = recurrent_step_backward(dG[j, hidden:] + carry, backward_caches[j])
        dxs[j] = dxs[j] + dx
        for name, value in step_grads.items():
            accumulate(grads, name, value)

    return np.stack(dxs), grads


# ============================================================================
# Losses
# ============================================================================

def softmax_xent(logits: np.ndarray, target: int) -> Tuple[float, np.ndarray]:
    """-log softmax(logits)[target] and its gradient softmax - one_hot"""
    if logits.shape[0] < 2:
        raise ShapeMismatchError("softmax_xent needs at least two logits")
    if not 0 <= int(target) < logits.shape[0]:
        raise IndexError(f"Target {target} out of range for {logits.shape[0]} classes")
    check_finite('softmax_xent', logits)
    loss = -float(log_softmax(logits)[int(target)])
    grad = softmax(logits)
    grad[int(target)] -= 1.0
    return loss, grad


def sigmoid_bce(logits: np.ndarray, mask: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean binary cross-entropy over cells and its gradient (sigmoid - mask) / N"""
    if logits.shape != mask.shape:
        raise ShapeMismatchError(f"logits {logits.shape} vs mask {mask.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("Mask values must be 0 or 1")
    check_finite('sigmoid_bce', logits)
    n = logits.size
    loss = float(np.mean(np.logaddexp(0.0, logits) - mask * logits))
    return loss, (sigmoid(logits) - mask) / n


# ============================================================================
# Optimizer
# ============================================================================

@dataclass
class OptimState:
    learning_rate: float = config.LEARNING_RATE
    momentum: float = config.MOMENTUM
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)


def sgd_update(params: ParamStore, grads: Mapping[str, np.ndarray], state: OptimState,
               frozen: Iterable[str] = ()) -> OptimState:
    """v <- mu v + g;  p <- p - lr v.  Parameters in frozen groups are skipped."""
    frozen = set(frozen)
    for name in params.names():
        if name not in grads or params.group(name) in frozen:
            continue
        grad = np.asarray(grads[name], dtype=float)
        if grad.shape != params[name].shape:
            raise ShapeMismatchError(f"{name}: grad {grad.shape} != param {params[name].shape}")
        check_finite(f"gradient of {name}", grad)
        velocity = state.velocity.get(name)
        velocity = grad.copy() if velocity is None else state.momentum * velocity + grad
        state.velocity[name] = velocity
        params[name] = params[name] - state.learning_rate * velocity
    return state


# ============================================================================
# Gradient checking
# ============================================================================

def grad_check(fn: Callable[[], float], params: Mapping[str, np.ndarray],
               grads: Mapping[str, np.ndarray], eps: float = config.GRAD_CHECK_EPS,
               max_coords: int = 20, seed: int = 0, floor: float = 1e-4) -> float:
    """Max relative error between analytic grads and central differences

    fn re-evaluates the scalar loss reading the arrays in params, which are perturbed in
    place and restored. Up to max_coords coordinates per parameter are sampled.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(grads):
        array = params[name]
        analytic = np.asarray(grads[name])
        flat_size = array.size
        if flat_size <= max_coords:
            coords = np.arange(flat_size)
        else:
            coords = rng.choice(flat_size, size=max_coords, replace=False)
        for flat_index in coords:
            index = np.unravel_index(int(flat_index), array.shape)
            original = array[index]
            array[index] = original + eps
            plus = fn()
            array[index] = original - eps
            minus = fn()
            array[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            exact = float(analytic[index])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            worst = max(worst, error)
    return worst
