"""Building blocks with explicit reverse passes.

Every layer keeps its parameters in ``self.params`` (name -> float array) and
exposes ``forward(...) -> (out, cache)`` and ``backward(cache, grad_out) ->
(grad_in, grads)``. Caches are plain tuples so the same layer can be used for
several independent forward calls before their backward passes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from ..numerics import (SpectrumBlock, compact_weights, irfft2_modes,
                        irfft2_modes_adjoint, rfft2_modes, spectral_conv,
                        spectral_conv_backward)

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class Layer:
    params: dict[str, np.ndarray]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


class PointwiseMLP(Layer):
    """Per-point MLP over the channel axis with GELU between layers."""

    def __init__(self, widths, rng: np.random.Generator, final_activation: bool = False):
        self.widths = tuple(widths)
        self.final_activation = final_activation
        self.params = {}
        for k, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            self.params[f"W{k}"] = _glorot(rng, a, b)
            self.params[f"b{k}"] = np.zeros(b)

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def forward(self, x):
        acts, pre = [x], []
        h = x
        for k in range(self.depth):
            z = h @ self.params[f"W{k}"] + self.params[f"b{k}"]
            pre.append(z)
            h = gelu(z) if (k < self.depth - 1 or self.final_activation) else z
            acts.append(h)
        return h, (acts, pre)

    def backward(self, cache, g):
        acts, pre = cache
        grads = {}
        for k in reversed(range(self.depth)):
            if k < self.depth - 1 or self.final_activation:
                g = g * gelu_grad(pre[k])
            a = acts[k]
            grads[f"W{k}"] = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[f"b{k}"] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ self.params[f"W{k}"].T
        return g, grads


class FourierLayer(Layer):
    """Plain FNO layer ``sigma(W v + b + K v)`` on ``(B, H, W, C)`` fields."""

    def __init__(self, channels: int, modes: int, rng: np.random.Generator, activation: bool = True):
        self.channels = channels
        self.modes = modes
        self.activation = activation
        self.params = {
            "W": _glorot(rng, channels, channels),
            "b": np.zeros(channels),
            "P": SpectrumBlock.random(rng, modes, modes, channels, channels).weights,
        }

    @property
    def block(self) -> SpectrumBlock:
        return SpectrumBlock(self.params["P"])

    def forward(self, v):
        z = v @ self.params["W"] + self.params["b"] + spectral_conv(v, self.block)
        out = gelu(z) if self.activation else z
        return out, (v, z)

    def backward(self, cache, g):
        v, z = cache
        if self.activation:
            g = g * gelu_grad(z)
        C = self.channels
        grads = {"W": v.reshape(-1, C).T @ g.reshape(-1, C), "b": g.reshape(-1, C).sum(axis=0)}
        gv_spec, grads["P"] = spectral_conv_backward(v, self.block, g)
        return g @ self.params["W"].T + gv_spec, grads


class MaskedFourierLayer(Layer):
    """Obstacle-masked Fourier layer.

    Computes ``sigma(W v + b + (K v)(x))`` with the masked nonlocal term
    ``(K v)(x) = chi(x) * sum_y chi(y) K(x - y) (v(y) - v(x))``, expanded as
    ``chi * K(chi v) - chi * M v`` where ``M(x) = sum_y K(x - y) chi(y)`` is a
    ``Cin x Cout`` matrix field. ``M`` is never stored whole; it is rebuilt in
    chunks of input channels in both passes.
    """

    def __init__(self, channels: int, modes: int, rng: np.random.Generator,
                 activation: bool = True, chunk: int = 4):
        self.channels = channels
        self.modes = modes
        self.activation = activation
        self.chunk = chunk
        self.params = {
            "W": _glorot(rng, channels, channels),
            "b": np.zeros(channels),
            "P": SpectrumBlock.random(rng, modes, modes, channels, channels).weights,
        }

    @property
    def block(self) -> SpectrumBlock:
        return SpectrumBlock(self.params["P"])

    def _matrix_field(self, chi_hat, Pc, sl, shape):
        """``M[..., i, o]`` for input channels ``sl``: shape ``(B, H, W, ci, Cout)``."""
        Z = chi_hat[..., None, None] * Pc[:, :, sl, :]
        B = Z.shape[0]
        Zf = Z.reshape(Z.shape[:3] + (-1,))
        M = irfft2_modes(Zf, shape)
        return M.reshape((B,) + shape + Z.shape[-2:])

    def nonlocal_term(self, v, chi, cache: bool = False):
        B, H, W, C = v.shape
        block = self.block
        block.check_fits(H, W)
        my = mx = self.modes
        Pc = compact_weights(block)
        chi3 = chi[..., None]
        u = chi3 * v
        U = rfft2_modes(u, my, mx)
        s = irfft2_modes(np.einsum("bxyi,xyio->bxyo", U, Pc), (H, W))
        chi_hat = rfft2_modes(chi[..., None], my, mx)[..., 0]
        T = np.zeros_like(v)
        for start in range(0, C, self.chunk):
            sl = slice(start, min(start + self.chunk, C))
            M = self._matrix_field(chi_hat, Pc, sl, (H, W))
            T += np.einsum("bhwi,bhwio->bhwo", v[..., sl], M)
        out = chi3 * (s - T)
        return (out, (U, chi_hat)) if cache else out

    def forward(self, v, chi):
        nl, (U, chi_hat) = self.nonlocal_term(v, chi, cache=True)
        z = v @ self.params["W"] + self.params["b"] + nl
        out = gelu(z) if self.activation else z
        return out, (v, chi, z, U, chi_hat)

    def backward(self, cache, g):
        v, chi, z, U, chi_hat = cache
        if self.activation:
            g = g * gelu_grad(z)
        B, H, W, C = v.shape
        my = mx = self.modes
        block = self.block
        Pc = compact_weights(block)
        grads = {"W": v.reshape(-1, C).T @ g.reshape(-1, C), "b": g.reshape(-1, C).sum(axis=0)}
        gv = g @ self.params["W"].T
        chi3 = chi[..., None]
        gs = chi3 * g
        # first convolution: s = K(chi v)
        gu, gP = spectral_conv_backward(chi3 * v, block, gs, spec_v=U)
        gv += chi3 * gu
        gPc = gP[..., 0] + 1j * gP[..., 1]
        gPc = gPc.reshape(Pc.shape)
        # second term: T = M v, with M = K chi
        gT = -gs
        for start in range(0, C, self.chunk):
            sl = slice(start, min(start + self.chunk, C))
            M = self._matrix_field(chi_hat, Pc, sl, (H, W))
            gv[..., sl] += np.einsum("bhwio,bhwo->bhwi", M, gT)
            gM = v[..., sl, None] * gT[..., None, :]
            gZ = irfft2_modes_adjoint(gM.reshape((B, H, W, -1)), my, mx)
            gZ = gZ.reshape(gZ.shape[:3] + gM.shape[-2:])
            gPc[:, :, sl, :] += np.einsum("bxy,bxyio->xyio", chi_hat.conj(), gZ)
        gPc = gPc.reshape(block.weights.shape[:-1])
        grads["P"] = np.stack([gPc.real, gPc.imag], axis=-1)
        return gv, grads


class DeepNormHead(Layer):
    """Convex, positively homogeneous map ``f(u) >= 0`` on difference vectors.

    ``h1 = relu(u U0)``, ``h2 = relu(h1 softplus(A1) + u U1)``,
    ``f = h2 . softplus(a2)``. No biases, so ``f(0) = 0`` and
    ``f(a u) = a f(u)`` for ``a >= 0``; together with convexity this gives
    ``f(u + v) <= f(u) + f(v)``. ``U0``/``U1`` act on the raw input and stay
    unconstrained; every weight applied to a hidden activation is nonnegative.
    """

    def __init__(self, widths, rng: np.random.Generator):
        d, h1, h2 = widths[0], widths[1], widths[2]
        self.widths = (d, h1, h2, 1)
        self.params = {
            "U0": _glorot(rng, d, h1),
            "A1": rng.normal(np.log(1.0 / h1), 0.5, size=(h1, h2)),
            "U1": _glorot(rng, d, h2),
            "a2": rng.normal(np.log(1.0 / h2), 0.5, size=h2),
        }

    def effective_weights(self):
        return softplus(self.params["A1"]), softplus(self.params["a2"])

    def forward(self, u):
        A1p, a2p = self.effective_weights()
        z1 = u @ self.params["U0"]
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ A1p + u @ self.params["U1"]
        h2 = np.maximum(z2, 0.0)
        return h2 @ a2p, (u, z1, h1, z2, h2)

    def backward(self, cache, g):
        u, z1, h1, z2, h2 = cache
        A1p, a2p = self.effective_weights()
        d = u.shape[-1]
        uf = u.reshape(-1, d)
        gf = g.reshape(-1)
        grads = {}
        grads["a2"] = (h2.reshape(-1, h2.shape[-1]).T @ gf) * sigmoid(self.params["a2"])
        g2 = (g[..., None] * a2p) * (z2 > 0)
        g2f = g2.reshape(-1, g2.shape[-1])
        grads["A1"] = (h1.reshape(-1, h1.shape[-1]).T @ g2f) * sigmoid(self.params["A1"])
        grads["U1"] = uf.T @ g2f
        g1 = (g2 @ A1p.T) * (z1 > 0)
        grads["U0"] = uf.T @ g1.reshape(-1, g1.shape[-1])
        gu = g1 @ self.params["U0"].T + g2 @ self.params["U1"].T
        return gu, grads
