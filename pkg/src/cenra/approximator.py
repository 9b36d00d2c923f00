"""Small numpy MLPs with hand-written gradients, Adam, and a tanh-squashed
Gaussian head.

Parameters live in one flat float64 vector. ``layout(spec)`` says where each
layer's weight matrix and bias sit inside it, so optimisers and checkpoints
only ever deal with a single array.
"""
from __future__ import annotations

import functools
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, UsageError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)
CKPT_HEADER = "cenra-ckpt v1"
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(d < 1 for d in dims):
            raise ConfigurationError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @functools.cached_property
    def n_params(self) -> int:
        d = self.dims
        return sum(d[i] * d[i + 1] + d[i + 1] for i in range(len(d) - 1))


@dataclass(frozen=True)
class LayerSlice:
    w: slice
    w_shape: tuple[int, int]
    b: slice


@functools.lru_cache(maxsize=None)
def layout(spec: NetSpec) -> tuple[LayerSlice, ...]:
    out, pos = [], 0
    d = spec.dims
    for i in range(len(d) - 1):
        n_w = d[i] * d[i + 1]
        out.append(LayerSlice(slice(pos, pos + n_w), (d[i], d[i + 1]), slice(pos + n_w, pos + n_w + d[i + 1])))
        pos += n_w + d[i + 1]
    return tuple(out)


def unpack(spec: NetSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` per layer; ``W`` has shape (fan_in, fan_out)."""
    if params.shape != (spec.n_params,):
        raise UsageError(f"expected {spec.n_params} parameters, got shape {params.shape}")
    return [(params[ls.w].reshape(ls.w_shape), params[ls.b]) for ls in layout(spec)]


def init_params(spec: NetSpec, rng: np.random.Generator) -> np.ndarray:
    params = np.empty(spec.n_params)
    for ls in layout(spec):
        bound = 1.0 / math.sqrt(ls.w_shape[0])
        params[ls.w] = rng.uniform(-bound, bound, ls.w.stop - ls.w.start)
        params[ls.b] = rng.uniform(-bound, bound, ls.b.stop - ls.b.start)
    return params


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name: str, h: np.ndarray) -> np.ndarray:
    # expressed in terms of the activation output
    return (h > 0.0).astype(h.dtype) if name == "relu" else 1.0 - h * h


def _as_batch(spec: NetSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise UsageError(f"input of shape {x.shape} does not match input_dim={spec.input_dim}")
    return x, single


def forward_trace(spec: NetSpec, params: np.ndarray, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass that also returns every layer input.

    ``trace[0]`` is the input, ``trace[-1]`` the last hidden activation. Shapes
    are always batched here.
    """
    h, _ = _as_batch(spec, x)
    trace = [h]
    layers = unpack(spec, params)
    for W, b in layers[:-1]:
        h = _act(spec.activation, h @ W + b)
        trace.append(h)
    W, b = layers[-1]
    return h @ W + b, trace


def forward(spec: NetSpec, params: np.ndarray, x) -> np.ndarray:
    xb, single = _as_batch(spec, x)
    out, _ = forward_trace(spec, params, xb)
    return out[0] if single else out


def backward_trace(spec: NetSpec, params: np.ndarray, trace: list[np.ndarray],
                   upstream: np.ndarray, input_grad: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
    layers = unpack(spec, params)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (trace[0].shape[0], spec.output_dim):
        raise UsageError(f"upstream grad shape {g.shape} does not match output")
    grad = np.empty(spec.n_params)
    slices = layout(spec)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h_in = trace[i]
        grad[slices[i].w] = (h_in.T @ g).ravel()
        grad[slices[i].b] = g.sum(axis=0)
        if i > 0:
            g = (g @ W.T) * _act_grad(spec.activation, h_in)
        elif input_grad:
            g = g @ W.T
        else:
            g = None
    return grad, g


def backward(spec: NetSpec, params: np.ndarray, x, upstream_grad) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream_grad * forward(x))``.

    Returns ``(param_grad, input_grad)``; ``input_grad`` matches the shape of
    ``x`` (1-D in, 1-D out).
    """
    xb, single = _as_batch(spec, x)
    g = np.asarray(upstream_grad, dtype=np.float64)
    if single:
        g = g[None, :] if g.ndim == 1 else g
    _, trace = forward_trace(spec, params, xb)
    pgrad, xgrad = backward_trace(spec, params, trace, g)
    return pgrad, (xgrad[0] if single else xgrad)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray, lr: float) -> tuple[np.ndarray, AdamState]:
    if state.m.shape != params.shape or grad.shape != params.shape:
        raise UsageError("Adam state, params and grad must share one shape")
    if not np.isfinite(grad.sum()):
        bad = np.flatnonzero(~np.isfinite(grad))
        if bad.size:
            raise NumericError("non-finite gradient entry", int(bad[0]))
    t = state.t + 1
    m = ADAM_BETA1 * state.m
    m += (1.0 - ADAM_BETA1) * grad
    v = grad * grad
    v *= 1.0 - ADAM_BETA2
    v += ADAM_BETA2 * state.v
    denom = np.sqrt(v * (1.0 / (1.0 - ADAM_BETA2 ** t)))
    denom += ADAM_EPS
    step = m * (lr / (1.0 - ADAM_BETA1 ** t))
    step /= denom
    return params - step, AdamState(m, v, t)


def soft_update(target: np.ndarray, source: np.ndarray, tau: float) -> np.ndarray:
    return (1.0 - tau) * target + tau * source


# -- squashed Gaussian head -------------------------------------------------

@dataclass(frozen=True)
class RewardSpace:
    r_min: float = -1.0
    r_max: float = 1.0

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ConfigurationError(f"reward space needs r_min < r_max, got [{self.r_min}, {self.r_max}]")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.r_max - self.r_min)

    def rescale(self, y):
        """Map ``y`` in [-1, 1] onto [r_min, r_max]."""
        return np.clip(self.r_min + (y + 1.0) * self.half_width, self.r_min, self.r_max)


@dataclass
class GaussianHeadOutput:
    mean: np.ndarray
    log_std: np.ndarray
    # 1 where the raw log_std was inside the clamp, 0 where clamping zeroed its gradient
    log_std_live: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "GaussianHeadOutput":
        raw = np.asarray(raw, dtype=np.float64)
        mean, raw_log_std = raw[..., 0], raw[..., 1]
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        live = ((raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)).astype(np.float64)
        return cls(mean, log_std, live)


def _log1m_tanh_sq(u):
    # log(1 - tanh(u)^2) without cancellation for large |u|
    return 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_sample_and_logprob(head: GaussianHeadOutput, bounds: RewardSpace, noise) -> tuple[np.ndarray, np.ndarray]:
    """Reparameterised draw ``value = rescale(tanh(mean + std * noise))``.

    ``log_density`` is the density of ``value`` on [r_min, r_max], including
    the tanh Jacobian and the affine rescale.
    """
    noise = np.asarray(noise, dtype=np.float64)
    std = np.exp(head.log_std)
    u = head.mean + std * noise
    value = bounds.rescale(np.tanh(u))
    logp = -0.5 * noise * noise - head.log_std - _HALF_LOG_2PI - _log1m_tanh_sq(u) - math.log(bounds.half_width)
    return value, logp


def gaussian_logprob_grad(head: GaussianHeadOutput, noise) -> tuple[np.ndarray, np.ndarray]:
    """d log_density / d(raw mean, raw log_std) with the noise held fixed."""
    noise = np.asarray(noise, dtype=np.float64)
    std = np.exp(head.log_std)
    y = np.tanh(head.mean + std * noise)
    d_mean = 2.0 * y
    live = 1.0 if head.log_std_live is None else head.log_std_live
    d_log_std = (-1.0 + 2.0 * y * std * noise) * live
    return d_mean, d_log_std


def gaussian_log_density_at(head: GaussianHeadOutput, bounds: RewardSpace, value) -> np.ndarray:
    """Log density of an arbitrary point strictly inside the reward space."""
    y = (np.asarray(value, dtype=np.float64) - bounds.r_min) / bounds.half_width - 1.0
    u = np.arctanh(y)
    std = np.exp(head.log_std)
    z = (u - head.mean) / std
    return -0.5 * z * z - head.log_std - _HALF_LOG_2PI - _log1m_tanh_sq(u) - math.log(bounds.half_width)


def gaussian_mean_value(head: GaussianHeadOutput, bounds: RewardSpace) -> np.ndarray:
    return bounds.rescale(np.tanh(head.mean))


# -- checkpoints --------------------------------------------------------------

def _spec_line(name: str, spec: NetSpec) -> str:
    hidden = ",".join(str(h) for h in spec.hidden) or "-"
    return f"net {name} {spec.input_dim} {hidden} {spec.output_dim} {spec.activation} {spec.n_params}"


def write_checkpoint(dest: str | Path | BinaryIO, nets: Sequence[tuple[str, NetSpec, np.ndarray]],
                     meta: dict[str, str] | None = None) -> None:
    """Write named networks: text header, then float64 LE params in order."""
    lines = [CKPT_HEADER]
    for k, v in (meta or {}).items():
        if any(ch.isspace() for ch in f"{k}{v}"):
            raise UsageError(f"checkpoint metadata must not contain whitespace: {k}={v}")
        lines.append(f"meta {k} {v}")
    for name, spec, params in nets:
        if params.shape != (spec.n_params,):
            raise UsageError(f"net {name}: params do not match spec")
        lines.append(_spec_line(name, spec))
    lines.append("end")
    blob = ("\n".join(lines) + "\n").encode("ascii")
    blob += b"".join(np.asarray(p, dtype="<f8").tobytes() for _, _, p in nets)
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(blob)
    else:
        dest.write(blob)


def read_checkpoint(src: str | Path | bytes) -> tuple[dict[str, tuple[NetSpec, np.ndarray]], dict[str, str]]:
    data = Path(src).read_bytes() if isinstance(src, (str, Path)) else bytes(src)
    stream = io.BytesIO(data)
    header = stream.readline().decode("ascii", "replace").strip()
    if header != CKPT_HEADER:
        raise ConfigurationError(f"not a checkpoint (header {header!r})")
    specs: list[tuple[str, NetSpec]] = []
    meta: dict[str, str] = {}
    while True:
        raw = stream.readline()
        if not raw:
            raise ConfigurationError("truncated checkpoint header")
        parts = raw.decode("ascii").split()
        if parts == ["end"]:
            break
        if parts[0] == "meta" and len(parts) == 3:
            meta[parts[1]] = parts[2]
            continue
        if parts[0] != "net" or len(parts) != 7:
            raise ConfigurationError(f"bad checkpoint line {raw!r}")
        _, name, d_in, hidden, d_out, act, count = parts
        spec = NetSpec(int(d_in), tuple(int(h) for h in hidden.split(",") if h and h != "-"), int(d_out), act)
        if spec.n_params != int(count):
            raise ConfigurationError(f"net {name}: parameter count mismatch")
        specs.append((name, spec))
    nets = {}
    for name, spec in specs:
        buf = stream.read(8 * spec.n_params)
        if len(buf) != 8 * spec.n_params:
            raise ConfigurationError(f"net {name}: truncated parameter block")
        nets[name] = (spec, np.frombuffer(buf, dtype="<f8").astype(np.float64))
    if stream.read(1):
        raise ConfigurationError("trailing bytes after checkpoint")
    return nets, meta
