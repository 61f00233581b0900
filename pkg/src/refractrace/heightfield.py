"""Neural height field ``z = H(x, y)``.

A frequency-encoded MLP with Leaky ReLU hidden layers and a linear scalar
output, evaluated in batches with a hand-written backward pass::

    z = z0 + scale * mlp(encode(x, y))

Inputs are mapped to ``[-1, 1]`` through the domain rectangle and clamped
there before encoding.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class VersionMismatchError(CheckpointError):
    pass


class CorruptPayloadError(CheckpointError):
    pass


@dataclass
class HeightFieldNet:
    weights: list[np.ndarray]  # each (fan_in, fan_out)
    biases: list[np.ndarray]
    bands: int = 6
    slope: float = 0.01
    domain: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)  # xmin, xmax, ymin, ymax
    z0: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.bands < 0:
            raise ValueError("bands must be >= 0")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.weights[0].shape[0] != encoding_size(self.bands):
            raise ValueError("first layer does not match the encoding size")
        for w, b, w_next in zip(self.weights, self.biases, self.weights[1:] + [None]):
            if b.shape != (w.shape[1],):
                raise ValueError("bias shape mismatch")
            if w_next is not None and w_next.shape[0] != w.shape[1]:
                raise ValueError("layer sizes are inconsistent")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("output layer must have one unit")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (weights then bias, per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "HeightFieldNet":
        return HeightFieldNet([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                              self.bands, self.slope, tuple(self.domain), self.z0, self.scale)


@dataclass
class NetTape:
    """Activations cached by :func:`height` for one backward call."""

    xy: np.ndarray
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each hidden layer
    inside: np.ndarray  # (n, 2) True where the coordinate was not clamped
    consumed: bool = field(default=False)


def encoding_size(bands: int) -> int:
    return 4 * bands + 2


def _normalize(xy, domain):
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    xmin, xmax, ymin, ymax = domain
    lo = np.array([xmin, ymin])
    span = np.array([xmax - xmin, ymax - ymin])
    u = 2.0 * (xy - lo) / span - 1.0
    inside = (u > -1.0) & (u < 1.0)
    return np.clip(u, -1.0, 1.0), inside, 2.0 / span


def freq_encode(xy, bands: int = 6, domain=(-1.0, 1.0, -1.0, 1.0)) -> np.ndarray:
    """Positional encoding of 2D points, shape ``(n, 4*bands + 2)``.

    Layout per point: ``x, y`` followed, for each band ``k``, by
    ``sin(2^k pi x), cos(2^k pi x), sin(2^k pi y), cos(2^k pi y)`` where
    ``x, y`` are the normalised coordinates.
    """
    u, _, _ = _normalize(xy, domain)
    return _encode(u, bands)


def _encode(u, bands):
    cols = [u[:, 0], u[:, 1]]
    for k in range(bands):
        f = (2.0**k) * np.pi
        for c in (0, 1):
            cols += [np.sin(f * u[:, c]), np.cos(f * u[:, c])]
    return np.stack(cols, axis=1)


def _encode_backward(u, bands, g):
    """Gradient of the encoding wrt the normalised coordinates."""
    du = g[:, 0:2].copy()
    col = 2
    for k in range(bands):
        f = (2.0**k) * np.pi
        for c in (0, 1):
            du[:, c] += g[:, col] * f * np.cos(f * u[:, c]) - g[:, col + 1] * f * np.sin(f * u[:, c])
            col += 2
    return du


def height(net: HeightFieldNet, xy) -> tuple[np.ndarray, NetTape]:
    """Heights for ``(n, 2)`` points, plus the tape for :func:`height_backward`."""
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    u, inside, _ = _normalize(xy, net.domain)
    a = _encode(u, net.bands)
    inputs, pre = [], []
    n_hidden = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ w + b
        if i < n_hidden:
            pre.append(z)
            a = np.where(z > 0, z, net.slope * z)
        else:
            a = z
    z = net.z0 + net.scale * a[:, 0]
    return z, NetTape(xy, inputs, pre, inside)


def height_only(net: HeightFieldNet, xy) -> np.ndarray:
    return height(net, xy)[0]


def height_backward(net: HeightFieldNet, tape: NetTape, dL_dz):
    """Backpropagate ``dL_dz`` (shape ``(n,)``) through the network.

    Returns ``(grads, dL_dxy)`` where ``grads`` follows :meth:`HeightFieldNet.params`
    ordering and ``dL_dxy`` has shape ``(n, 2)`` (zero where inputs were clamped).
    """
    if tape.consumed:
        raise RuntimeError("tape already consumed by a backward call")
    tape.consumed = True
    g = (net.scale * np.asarray(dL_dz, dtype=np.float64)).reshape(-1, 1)
    n_layers = len(net.weights)
    grads: list[np.ndarray] = [None] * (2 * n_layers)
    for i in range(n_layers - 1, -1, -1):
        grads[2 * i] = tape.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i].T
        if i > 0:
            g = np.where(tape.pre[i - 1] > 0, g, net.slope * g)
    u, _, du_dxy = _normalize(tape.xy, net.domain)
    dxy = _encode_backward(u, net.bands, g) * du_dxy * tape.inside
    return grads, dxy


def init_flat(domain, z0: float, scale: float, seed: int, hidden: int = 256, depth: int = 6,
              bands: int = 6, slope: float = 0.01) -> HeightFieldNet:
    """He-initialised hidden layers and a zero output layer, so ``H == z0`` at start."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    sizes = [encoding_size(bands)] + [hidden] * depth
    weights, biases = [], []
    gain = np.sqrt(2.0 / (1.0 + slope**2))
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    weights.append(np.zeros((sizes[-1], 1)))
    biases.append(np.zeros(1))
    return HeightFieldNet(weights, biases, bands, slope, tuple(float(v) for v in domain), float(z0), float(scale))


def save_net(path, net: HeightFieldNet) -> None:
    """Write a versioned ``.npz``: a JSON header plus one array per parameter."""
    header = {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": net.layer_sizes,
        "bands": net.bands,
        "slope": net.slope,
        "domain": list(net.domain),
        "z0": net.z0,
        "scale": net.scale,
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_net(path) -> HeightFieldNet:
    try:
        with np.load(path) as data:
            header = json.loads(bytes(data["header"]).decode())
            version = header.get("version")
            if version != CHECKPOINT_VERSION:
                raise VersionMismatchError(
                    f"height-field checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
            n = len(header["layer_sizes"]) - 1
            weights = [data[f"w{i}"] for i in range(n)]
            biases = [data[f"b{i}"] for i in range(n)]
    except CheckpointError:
        raise
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as exc:
        raise CorruptPayloadError(f"corrupt height-field checkpoint {path}: {exc}") from exc
    return HeightFieldNet(weights, biases, header["bands"], header["slope"], tuple(header["domain"]),
                          header["z0"], header["scale"])
