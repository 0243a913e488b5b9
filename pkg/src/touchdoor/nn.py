"""Dense network kernel: MLP forward/backward, Adam, Polyak blending, checkpoints.

The policy and both critics are plain fully-connected stacks with rectifier
hidden units and either a tanh or identity output. Everything here is float64
numpy, and every operation is a pure function of its arguments: no hidden
state, so repeated calls are bit-identical and parameter structures can be
handed between threads by reference.

Shapes follow the row-vector convention: weights[l] has shape
(layer_dims[l], layer_dims[l+1]) and a forward pass is x @ W + b. `forward`
and `backward` accept a single vector or a (batch, dim) matrix; batched
`backward` sums parameter gradients over rows, so a mean loss is expressed by
dividing the output gradient by the batch size at the call site.

Checkpoint format (little-endian): magic b"TDNN", u32 version, u32 number of
layer dims, u32 layer dims, u8 hidden activation tag, u8 output activation
tag, then every weight matrix in layer order (row-major f64), then every bias
vector. Save/load round trips are byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, TrainingDiverged

RELU = "relu"
TANH = "tanh"
IDENTITY = "identity"

_ACT_CODES = {IDENTITY: 0, RELU: 1, TANH: 2}
_ACT_NAMES = {code: name for name, code in _ACT_CODES.items()}

_MAGIC = b"TDNN"
_FORMAT_VERSION = 1


@dataclass
class MlpParams:
    """Parameters of one MLP. Also reused as the container for gradients."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = RELU
    output_activation: str = TANH

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def copy(self) -> "MlpParams":
        return MlpParams(
            layer_dims=tuple(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            hidden_activation=self.hidden_activation,
            output_activation=self.output_activation,
        )


def _check_params(params: MlpParams) -> None:
    dims = params.layer_dims
    if len(dims) < 2:
        raise ContractError(f"need at least input and output dims, got {dims}")
    if len(params.weights) != len(dims) - 1 or len(params.biases) != len(dims) - 1:
        raise ContractError(
            f"{len(dims) - 1} layers implied by dims {dims}, got "
            f"{len(params.weights)} weights / {len(params.biases)} biases"
        )
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (dims[l], dims[l + 1]):
            raise ContractError(f"layer {l}: weight shape {w.shape}, expected {(dims[l], dims[l + 1])}")
        if b.shape != (dims[l + 1],):
            raise ContractError(f"layer {l}: bias shape {b.shape}, expected {(dims[l + 1],)}")
    if params.output_activation not in (TANH, IDENTITY):
        raise ContractError(f"unknown output activation {params.output_activation!r}")
    if params.hidden_activation != RELU:
        raise ContractError(f"unknown hidden activation {params.hidden_activation!r}")


def init_params(
    layer_dims: tuple[int, ...],
    output_activation: str,
    rng: np.random.Generator,
) -> MlpParams:
    """Uniform +-1/sqrt(fan_in) weights, zero biases."""
    weights = []
    biases = []
    for l in range(len(layer_dims) - 1):
        bound = 1.0 / np.sqrt(layer_dims[l])
        weights.append(rng.uniform(-bound, bound, size=(layer_dims[l], layer_dims[l + 1])))
        biases.append(np.zeros(layer_dims[l + 1]))
    params = MlpParams(tuple(int(d) for d in layer_dims), weights, biases, RELU, output_activation)
    _check_params(params)
    return params


def _as_batch(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        single = True
    elif x.ndim == 2:
        single = False
    else:
        raise ContractError(f"input must be a vector or a batch matrix, got ndim={x.ndim}")
    if x.shape[1] != params.layer_dims[0]:
        raise ContractError(f"input dim {x.shape[1]}, expected {params.layer_dims[0]}")
    return x, single


def _forward_activations(params: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    """Post-activation values per layer; acts[0] is the input, acts[-1] the output."""
    acts = [x]
    h = x
    last = params.n_layers - 1
    for l in range(params.n_layers):
        z = h @ params.weights[l] + params.biases[l]
        if l < last:
            h = np.maximum(z, 0.0)
        elif params.output_activation == TANH:
            h = np.tanh(z)
        else:
            h = z
        acts.append(h)
    return acts


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network. Vector in, vector out (or batch in, batch out)."""
    xb, single = _as_batch(params, x)
    y = _forward_activations(params, xb)[-1]
    return y[0] if single else y


def backward(params: MlpParams, x: np.ndarray, output_grad: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Exact reverse-mode gradients for output_grad . d(output)/d(params, input).

    Returns (param_grads, input_grad). param_grads is MlpParams-shaped. For a
    batch, parameter gradients are summed over rows and input_grad is
    row-per-row.
    """
    xb, single = _as_batch(params, x)
    gy = np.asarray(output_grad, dtype=np.float64)
    if single:
        if gy.ndim != 1:
            raise ContractError(f"output_grad ndim {gy.ndim} does not match vector input")
        gy = gy[None, :]
    if gy.shape != (xb.shape[0], params.layer_dims[-1]):
        raise ContractError(
            f"output_grad shape {gy.shape}, expected {(xb.shape[0], params.layer_dims[-1])}"
        )

    acts = _forward_activations(params, xb)
    last = params.n_layers - 1
    if params.output_activation == TANH:
        delta = gy * (1.0 - acts[-1] ** 2)
    else:
        delta = gy.copy()

    grad_w: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * params.n_layers  # type: ignore[list-item]
    for l in range(last, -1, -1):
        grad_w[l] = acts[l].T @ delta
        grad_b[l] = delta.sum(axis=0)
        delta = delta @ params.weights[l].T
        if l > 0:
            delta = delta * (acts[l] > 0.0)  # rectifier mask; dead units pass nothing
    input_grad = delta[0] if single else delta
    grads = MlpParams(params.layer_dims, grad_w, grad_b, params.hidden_activation, params.output_activation)
    return grads, input_grad


@dataclass
class OptState:
    """Adam accumulator state paired with one MlpParams."""

    step_size: float
    decay1: float
    decay2: float
    epsilon: float
    step_count: int
    m_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_w: list[np.ndarray]
    v_b: list[np.ndarray]


def init_opt_state(
    params: MlpParams,
    step_size: float = 3e-4,
    decay1: float = 0.9,
    decay2: float = 0.999,
    epsilon: float = 1e-8,
) -> OptState:
    return OptState(
        step_size=step_size,
        decay1=decay1,
        decay2=decay2,
        epsilon=epsilon,
        step_count=0,
        m_w=[np.zeros_like(w) for w in params.weights],
        m_b=[np.zeros_like(b) for b in params.biases],
        v_w=[np.zeros_like(w) for w in params.weights],
        v_b=[np.zeros_like(b) for b in params.biases],
    )


def _adam_update(p, g, m, v, state, t):
    m_new = state.decay1 * m + (1.0 - state.decay1) * g
    v_new = state.decay2 * v + (1.0 - state.decay2) * g * g
    m_hat = m_new / (1.0 - state.decay1**t)
    v_hat = v_new / (1.0 - state.decay2**t)
    p_new = p - state.step_size * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return p_new, m_new, v_new


def optimizer_step(params: MlpParams, grads: MlpParams, state: OptState) -> tuple[MlpParams, OptState]:
    """One Adam update. Pure: returns fresh params and state.

    Non-finite gradient entries abort training with the iteration, layer and
    flat index of the first offender.
    """
    t = state.step_count + 1
    for l, g in enumerate(list(grads.weights) + list(grads.biases)):
        bad = ~np.isfinite(g)
        if bad.any():
            idx = int(np.flatnonzero(bad.ravel())[0])
            kind = "weight" if l < len(grads.weights) else "bias"
            layer = l if l < len(grads.weights) else l - len(grads.weights)
            raise TrainingDiverged(
                f"non-finite gradient at update {t}, {kind} layer {layer}, flat index {idx}"
            )
    new_w, new_b = [], []
    m_w, m_b, v_w, v_b = [], [], [], []
    for l in range(params.n_layers):
        p, m, v = _adam_update(params.weights[l], grads.weights[l], state.m_w[l], state.v_w[l], state, t)
        new_w.append(p)
        m_w.append(m)
        v_w.append(v)
        p, m, v = _adam_update(params.biases[l], grads.biases[l], state.m_b[l], state.v_b[l], state, t)
        new_b.append(p)
        m_b.append(m)
        v_b.append(v)
    new_params = MlpParams(params.layer_dims, new_w, new_b, params.hidden_activation, params.output_activation)
    new_state = replace(state, step_count=t, m_w=m_w, m_b=m_b, v_w=v_w, v_b=v_b)
    return new_params, new_state


def polyak_blend(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """tau * online + (1 - tau) * target, elementwise.

    The two-product form keeps tau=0 and tau=1 exact.
    """
    if target.layer_dims != online.layer_dims:
        raise ContractError(f"dims differ: target {target.layer_dims} vs online {online.layer_dims}")
    if not 0.0 <= tau <= 1.0:
        raise ContractError(f"tau must be in [0, 1], got {tau}")
    w = [tau * ow + (1.0 - tau) * tw for tw, ow in zip(target.weights, online.weights)]
    b = [tau * ob + (1.0 - tau) * tb for tb, ob in zip(target.biases, online.biases)]
    return MlpParams(target.layer_dims, w, b, target.hidden_activation, target.output_activation)


def save_params(params: MlpParams, path) -> None:
    """Write the binary checkpoint format described in the module docstring."""
    _check_params(params)
    parts = [_MAGIC, struct.pack("<I", _FORMAT_VERSION)]
    parts.append(struct.pack("<I", len(params.layer_dims)))
    parts.append(struct.pack(f"<{len(params.layer_dims)}I", *params.layer_dims))
    parts.append(struct.pack("<BB", _ACT_CODES[params.hidden_activation], _ACT_CODES[params.output_activation]))
    for w in params.weights:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    for b in params.biases:
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_params(path) -> MlpParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ContractError(f"bad magic {blob[:4]!r} in {path}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _FORMAT_VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    (n_dims,) = struct.unpack_from("<I", blob, 8)
    dims = struct.unpack_from(f"<{n_dims}I", blob, 12)
    off = 12 + 4 * n_dims
    hid_code, out_code = struct.unpack_from("<BB", blob, off)
    off += 2
    weights, biases = [], []
    for l in range(n_dims - 1):
        count = dims[l] * dims[l + 1]
        weights.append(
            np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(dims[l], dims[l + 1]).copy()
        )
        off += 8 * count
    for l in range(n_dims - 1):
        biases.append(np.frombuffer(blob, dtype="<f8", count=dims[l + 1], offset=off).copy())
        off += 8 * dims[l + 1]
    if off != len(blob):
        raise ContractError(f"trailing bytes in {path}: expected {off}, file has {len(blob)}")
    params = MlpParams(tuple(int(d) for d in dims), weights, biases, _ACT_NAMES[hid_code], _ACT_NAMES[out_code])
    _check_params(params)
    return params
