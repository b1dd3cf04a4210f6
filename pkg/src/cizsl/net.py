"""Feed-forward networks with exact reverse-mode gradients, including the
second-order sweep needed by the Lipschitz gradient penalty, plus the binary
checkpoint format.

Shape conventions: batches are row-major, weights are (out, in), and the flat
parameter view of a network concatenates each layer's weights (row-major)
followed by its bias, in layer order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DatasetFormatError, InvalidInputError, InvalidStateError
from .numerics import RngStream

ACTIVATIONS = ("identity", "relu", "leaky_relu", "sigmoid")
_ACT_TAGS = {name: i for i, name in enumerate(ACTIVATIONS)}


def _act(name: str, z: np.ndarray, slope: float) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0.0, z, slope * z)
    if name == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    raise InvalidInputError(f"unknown activation {name!r}")


def _act_d(name: str, z: np.ndarray, slope: float) -> np.ndarray:
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "leaky_relu":
        return np.where(z > 0.0, 1.0, slope)
    if name == "sigmoid":
        s = _act("sigmoid", z, slope)
        return s * (1.0 - s)
    raise InvalidInputError(f"unknown activation {name!r}")


def _act_dd(name: str, z: np.ndarray, slope: float) -> np.ndarray:
    # relu / leaky_relu second derivative is zero almost everywhere; the
    # measure-zero kink is deliberately ignored (standard penalty practice).
    if name in ("identity", "relu", "leaky_relu"):
        return np.zeros_like(z)
    if name == "sigmoid":
        s = _act("sigmoid", z, slope)
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    raise InvalidInputError(f"unknown activation {name!r}")


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    slope: float = 0.0

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise InvalidInputError(
                f"layer shape mismatch: weight {self.weight.shape}, bias {self.bias.shape}")


@dataclass
class MlpCache:
    """Forward activations remembered for the backward pass."""

    x: np.ndarray
    zs: list[np.ndarray]
    hs: list[np.ndarray]
    version: int


class MlpNetwork:
    """A plain fully-connected network over float64 rows."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise InvalidInputError("network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise InvalidInputError(
                    f"layer dims do not chain: {a.weight.shape} -> {b.weight.shape}")
        self.layers = layers
        self._version = 0

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def n_params(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def param_vector(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias])
                               for l in self.layers])

    def set_param_vector(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise InvalidInputError(
                f"parameter vector has {theta.size} entries, network expects {self.n_params}")
        i = 0
        for l in self.layers:
            w = l.weight.size
            l.weight = theta[i:i + w].reshape(l.weight.shape).copy()
            i += w
            b = l.bias.size
            l.bias = theta[i:i + b].copy()
            i += b
        self._version += 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)[0]

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.in_dim:
            raise InvalidInputError(
                f"input has dim {h.shape[1]}, network expects {self.in_dim}")
        zs, hs = [], [h]
        for l in self.layers:
            z = h @ l.weight.T + l.bias
            h = _act(l.activation, z, l.slope)
            zs.append(z)
            hs.append(h)
        cache = MlpCache(x=hs[0], zs=zs, hs=hs, version=self._version)
        return (h[0] if squeeze else h), cache

    def _check_cache(self, cache: MlpCache) -> None:
        if cache.version != self._version:
            raise InvalidStateError(
                "forward cache is stale: parameters changed since the forward pass")
        if len(cache.zs) != len(self.layers):
            raise InvalidStateError("forward cache does not match this network")

    def backward(self, cache: MlpCache, d_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact gradients of sum(d_out * output) w.r.t. parameters and input."""
        self._check_cache(cache)
        d = np.atleast_2d(np.asarray(d_out, dtype=np.float64))
        if d.shape != cache.hs[-1].shape:
            raise InvalidStateError(
                f"output gradient shape {d.shape} does not match cached output "
                f"{cache.hs[-1].shape}")
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            l = self.layers[i]
            dz = d * _act_d(l.activation, cache.zs[i], l.slope)
            grads[i] = (dz.T @ cache.hs[i], dz.sum(axis=0))
            d = dz @ l.weight
        flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
        d_in = d[0] if np.asarray(d_out).ndim == 1 else d
        return flat, d_in

    def input_grad_rows(self, cache: MlpCache, select: np.ndarray) -> np.ndarray:
        """Per-row gradient of <select, output> w.r.t. the input rows."""
        self._check_cache(cache)
        u = np.broadcast_to(select, cache.hs[-1].shape)
        for i in range(len(self.layers) - 1, -1, -1):
            l = self.layers[i]
            u = (u * _act_d(l.activation, cache.zs[i], l.slope)) @ l.weight
        return u

    def grad_of_input_grad(self, cache: MlpCache, select: np.ndarray,
                           v: np.ndarray) -> np.ndarray:
        """Parameter gradient of sum_rows <v_row, d(<select, output>)/d input_row>.

        Implements forward-over-reverse: the tangent pass pushes v through the
        linearized network, then a reverse sweep accumulates adjoints of both
        primal and tangent quantities. Second derivatives of the activations
        enter through the primal adjoint; they vanish for piecewise-linear
        activations and are exact for sigmoid.
        """
        self._check_cache(cache)
        L = len(self.layers)
        h_dot = [np.atleast_2d(np.asarray(v, dtype=np.float64))]
        z_dot = []
        for i, l in enumerate(self.layers):
            zd = h_dot[-1] @ l.weight.T
            z_dot.append(zd)
            h_dot.append(_act_d(l.activation, cache.zs[i], l.slope) * zd)
        bar_hdot = np.broadcast_to(select, cache.hs[-1].shape).astype(np.float64)
        bar_h = np.zeros_like(bar_hdot)
        grads = [None] * L
        for i in range(L - 1, -1, -1):
            l = self.layers[i]
            d1 = _act_d(l.activation, cache.zs[i], l.slope)
            d2 = _act_dd(l.activation, cache.zs[i], l.slope)
            bar_zdot = d1 * bar_hdot
            bar_z = d2 * z_dot[i] * bar_hdot + d1 * bar_h
            gw = bar_zdot.T @ h_dot[i] + bar_z.T @ cache.hs[i]
            gb = bar_z.sum(axis=0)
            grads[i] = (gw, gb)
            bar_hdot = bar_zdot @ l.weight
            bar_h = bar_z @ l.weight
        return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def glorot_layer(rng: RngStream, in_dim: int, out_dim: int,
                 activation: str, slope: float = 0.0) -> Layer:
    """Uniform [-s, s] init with s = sqrt(6 / (fan_in + fan_out))."""
    s = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniform(-s, s, (out_dim, in_dim))
    return Layer(weight=w, bias=np.zeros(out_dim), activation=activation, slope=slope)


# --------------------------------------------------------------------------
# Generator: semantic descriptor -> noise-suppressing embed layer -> concat
# with Gaussian noise -> trunk -> visual feature vector.
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorArch:
    text_dim: int
    noise_dim: int
    output_dim: int
    embed_dim: int = 64
    hidden_dims: tuple[int, ...] = (128,)
    hidden_slope: float = 0.2
    output_activation: str = "relu"

    def validate(self) -> "GeneratorArch":
        dims = (self.text_dim, self.output_dim, self.embed_dim, *self.hidden_dims)
        if any(d < 1 for d in dims) or self.noise_dim < 0:
            raise InvalidInputError(f"generator dims must be positive: {self}")
        return self


@dataclass
class GeneratorCache:
    embed: MlpCache
    trunk: MlpCache
    n_rows: int


class Generator:
    """Conditional feature generator x = G(t, z)."""

    def __init__(self, embed: MlpNetwork, trunk: MlpNetwork, noise_dim: int):
        if embed.out_dim + noise_dim != trunk.in_dim:
            raise InvalidInputError(
                f"embed out {embed.out_dim} + noise {noise_dim} != trunk in {trunk.in_dim}")
        self.embed = embed
        self.trunk = trunk
        self.noise_dim = noise_dim

    @property
    def text_dim(self) -> int:
        return self.embed.in_dim

    @property
    def output_dim(self) -> int:
        return self.trunk.out_dim

    @property
    def n_params(self) -> int:
        return self.embed.n_params + self.trunk.n_params

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.embed.param_vector(), self.trunk.param_vector()])

    def set_param_vector(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise InvalidInputError(
                f"parameter vector has {theta.size} entries, generator expects {self.n_params}")
        ne = self.embed.n_params
        self.embed.set_param_vector(theta[:ne])
        self.trunk.set_param_vector(theta[ne:])

    def forward(self, t: np.ndarray, z: np.ndarray) -> np.ndarray:
        return self.forward_cached(t, z)[0]

    def forward_cached(self, t: np.ndarray, z: np.ndarray):
        t = np.asarray(t, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        squeeze = t.ndim == 1
        t2, z2 = np.atleast_2d(t), np.atleast_2d(z)
        if z2.shape != (t2.shape[0], self.noise_dim):
            raise InvalidInputError(
                f"noise shape {z.shape} does not match batch {t2.shape[0]} x {self.noise_dim}")
        e, e_cache = self.embed.forward_cached(t2)
        h = np.concatenate([e, z2], axis=1)
        x, t_cache = self.trunk.forward_cached(h)
        cache = GeneratorCache(embed=e_cache, trunk=t_cache, n_rows=t2.shape[0])
        return (x[0] if squeeze else x), cache

    def backward(self, cache: GeneratorCache, d_out: np.ndarray):
        """Gradients of sum(d_out * output): (flat params, d_t, d_z)."""
        d = np.atleast_2d(np.asarray(d_out, dtype=np.float64))
        g_trunk, d_h = self.trunk.backward(cache.trunk, d)
        e_dim = self.embed.out_dim
        g_embed, d_t = self.embed.backward(cache.embed, d_h[:, :e_dim])
        d_z = d_h[:, e_dim:]
        return np.concatenate([g_embed, g_trunk]), d_t, d_z


def build_generator(arch: GeneratorArch, rng: RngStream) -> Generator:
    arch.validate()
    embed = MlpNetwork([glorot_layer(rng, arch.text_dim, arch.embed_dim,
                                     "leaky_relu", arch.hidden_slope)])
    dims = (arch.embed_dim + arch.noise_dim, *arch.hidden_dims, arch.output_dim)
    layers = []
    for i in range(len(dims) - 1):
        last = i == len(dims) - 2
        layers.append(glorot_layer(rng, dims[i], dims[i + 1],
                                   arch.output_activation if last else "leaky_relu",
                                   0.0 if last else arch.hidden_slope))
    return Generator(embed=embed, trunk=MlpNetwork(layers), noise_dim=arch.noise_dim)


# --------------------------------------------------------------------------
# Discriminator: shared trunk, then one linear layer holding both heads:
# column 0 is the raw critic score, the rest are seen-class logits.
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscriminatorArch:
    input_dim: int
    n_classes: int
    hidden_dims: tuple[int, ...] = (128,)
    hidden_slope: float = 0.2

    def validate(self) -> "DiscriminatorArch":
        if self.input_dim < 1 or any(d < 1 for d in self.hidden_dims):
            raise InvalidInputError(f"discriminator dims must be positive: {self}")
        if self.n_classes < 2:
            raise InvalidInputError(f"need at least 2 seen classes, got {self.n_classes}")
        return self


class Discriminator:
    """Two-headed critic: raw realness score plus seen-class logits."""

    def __init__(self, net: MlpNetwork, n_classes: int):
        if net.out_dim != 1 + n_classes:
            raise InvalidInputError(
                f"head layer width {net.out_dim} != 1 + {n_classes} classes")
        self.net = net
        self.n_classes = n_classes
        # selects the critic unit when differentiating w.r.t. the input
        self._real_select = np.zeros(net.out_dim)
        self._real_select[0] = 1.0

    @property
    def input_dim(self) -> int:
        return self.net.in_dim

    @property
    def n_params(self) -> int:
        return self.net.n_params

    def param_vector(self) -> np.ndarray:
        return self.net.param_vector()

    def set_param_vector(self, theta: np.ndarray) -> None:
        self.net.set_param_vector(theta)

    def forward(self, x: np.ndarray):
        return self.forward_cached(x)[0]

    def forward_cached(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        out, cache = self.net.forward_cached(np.atleast_2d(x))
        real, logits = out[:, 0], out[:, 1:]
        if squeeze:
            return (float(real[0]), logits[0]), cache
        return (real, logits), cache

    def backward(self, cache: MlpCache, d_real: np.ndarray, d_logits: np.ndarray):
        """Gradients of sum(d_real * real + d_logits * logits): (flat, d_x)."""
        d_real = np.atleast_1d(np.asarray(d_real, dtype=np.float64))
        d_logits = np.atleast_2d(np.asarray(d_logits, dtype=np.float64))
        d_out = np.concatenate([d_real[:, None], d_logits], axis=1)
        return self.net.backward(cache, d_out)

    def real_input_grad(self, x: np.ndarray) -> np.ndarray:
        """Rows of the critic-score gradient w.r.t. each input row."""
        _, cache = self.net.forward_cached(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return self.net.input_grad_rows(cache, self._real_select)


def build_discriminator(arch: DiscriminatorArch, rng: RngStream) -> Discriminator:
    arch.validate()
    dims = (arch.input_dim, *arch.hidden_dims)
    layers = [glorot_layer(rng, dims[i], dims[i + 1], "leaky_relu", arch.hidden_slope)
              for i in range(len(dims) - 1)]
    layers.append(glorot_layer(rng, dims[-1], 1 + arch.n_classes, "identity"))
    return Discriminator(net=MlpNetwork(layers), n_classes=arch.n_classes)


def gradient_penalty(disc: Discriminator, x_hat: np.ndarray):
    """Mean Lipschitz penalty (||grad_x critic||_2 - 1)^2 over rows of x_hat,
    with its exact gradient w.r.t. the discriminator parameters.

    Returns (mean penalty, flat parameter gradient, per-row penalties).
    If a row's input gradient vanishes exactly, its penalty is 1 and the norm
    term's gradient is taken as zero there (documented subgradient choice).
    """
    x = np.atleast_2d(np.asarray(x_hat, dtype=np.float64))
    n = x.shape[0]
    _, cache = disc.net.forward_cached(x)
    g = disc.net.input_grad_rows(cache, disc._real_select)
    norms = np.linalg.norm(g, axis=1)
    penalties = (norms - 1.0) ** 2
    scale = np.zeros(n)
    nonzero = norms > 0.0
    scale[nonzero] = 2.0 * (norms[nonzero] - 1.0) / norms[nonzero] / n
    v = g * scale[:, None]
    grad = disc.net.grad_of_input_grad(cache, disc._real_select, v)
    return float(penalties.mean()), grad, penalties


def input_grad_penalty_grad(disc: Discriminator, x_hat: np.ndarray):
    """Single-point Lipschitz penalty and its discriminator-parameter gradient."""
    x = np.asarray(x_hat, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError("expected a single feature vector")
    penalty, grad, _ = gradient_penalty(disc, x[None, :])
    return penalty, grad


# --------------------------------------------------------------------------
# Checkpoint format: magic "CZSL", version u16, u32 network count, then per
# network a u32 layer count and per layer u32 in, u32 out, u8 activation tag,
# f64 slope; all parameters follow as little-endian f64 in flat order.
# Networks are stored in the fixed order (generator embed, generator trunk,
# discriminator); the generator noise dim is recovered from the dims.
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"CZSL"
CHECKPOINT_VERSION = 1


def _net_header(net: MlpNetwork) -> bytes:
    parts = [struct.pack("<I", len(net.layers))]
    for l in net.layers:
        parts.append(struct.pack("<IIBd", l.weight.shape[1], l.weight.shape[0],
                                 _ACT_TAGS[l.activation], l.slope))
    return b"".join(parts)


def save_checkpoint(path, gen: Generator, disc: Discriminator) -> None:
    nets = [gen.embed, gen.trunk, disc.net]
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(nets)))
        f.write(struct.pack("<I", gen.noise_dim))
        for net in nets:
            f.write(_net_header(net))
        for net in nets:
            f.write(net.param_vector().astype("<f8").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DatasetFormatError(f"checkpoint truncated while reading {what}")
    return data


def load_checkpoint(path) -> tuple[Generator, Discriminator]:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise DatasetFormatError(
                f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != CHECKPOINT_VERSION:
            raise DatasetFormatError(
                f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        (n_nets,) = struct.unpack("<I", _read_exact(f, 4, "network count"))
        if n_nets != 3:
            raise DatasetFormatError(f"expected 3 stored networks, found {n_nets}")
        (noise_dim,) = struct.unpack("<I", _read_exact(f, 4, "noise dim"))
        nets = []
        for _ in range(n_nets):
            (n_layers,) = struct.unpack("<I", _read_exact(f, 4, "layer count"))
            layers = []
            for _ in range(n_layers):
                in_dim, out_dim, tag, slope = struct.unpack(
                    "<IIBd", _read_exact(f, 17, "layer header"))
                if tag >= len(ACTIVATIONS):
                    raise DatasetFormatError(f"unknown activation tag {tag}")
                layers.append(Layer(weight=np.zeros((out_dim, in_dim)),
                                    bias=np.zeros(out_dim),
                                    activation=ACTIVATIONS[tag], slope=slope))
            nets.append(MlpNetwork(layers))
        for net in nets:
            raw = _read_exact(f, 8 * net.n_params, "parameters")
            net.set_param_vector(np.frombuffer(raw, dtype="<f8"))
        trailing = f.read(1)
        if trailing:
            raise DatasetFormatError("checkpoint has trailing bytes")
    embed, trunk, d_net = nets
    gen = Generator(embed=embed, trunk=trunk, noise_dim=noise_dim)
    disc = Discriminator(net=d_net, n_classes=d_net.out_dim - 1)
    return gen, disc
