"""FFT helpers, truncated spectral convolution and finite differences.

FFT convention: forward transforms are unnormalized, inverse transforms divide
by ``H * W``. Fields are channels-last, ``(..., H, W, C)``.

A :class:`SpectrumBlock` keeps ``modes_y`` positive and ``modes_y`` negative
row frequencies and the first ``modes_x`` column frequencies of the real
half-spectrum. Its weights are stored as a real array of shape
``(2, modes_y, modes_x, C_in, C_out, 2)``, last axis ``(re, im)``; axis 0
selects the non-negative (0) or negative (1) row block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .grid import ScalarField


def rfft2(field: np.ndarray) -> np.ndarray:
    """Per-channel 2D real FFT of an ``(..., H, W, C)`` array."""
    if field.ndim < 3:
        raise ValueError("expected (..., H, W, C)")
    H, W = field.shape[-3:-1]
    if H < 2 or W < 2:
        raise ValueError("spatial dims must be >= 2")
    return sfft.rfft2(field, axes=(-3, -2))


def irfft2(spec: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return sfft.irfft2(spec, s=shape, axes=(-3, -2))


def _column_weights(W: int, ncols: int) -> np.ndarray:
    """Hermitian multiplicity of each kept half-spectrum column (1 or 2)."""
    c = np.full(ncols, 2.0)
    c[0] = 1.0
    if W % 2 == 0 and ncols > W // 2:
        c[W // 2] = 1.0
    return c


def irfft2_adjoint(grad_out: np.ndarray, ncols: int) -> np.ndarray:
    """Gradient w.r.t. the half-spectrum input of :func:`irfft2`.

    Complex gradients follow the ``dL/dRe + i dL/dIm`` convention.
    """
    H, W = grad_out.shape[-3:-1]
    g = rfft2(grad_out)[..., :ncols, :]
    return g * (_column_weights(W, ncols)[:, None] / (H * W))


def rfft2_adjoint(grad_spec: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Gradient w.r.t. the real input of :func:`rfft2`."""
    H, W = shape
    ncols = grad_spec.shape[-2]
    return (H * W) * irfft2(grad_spec / _column_weights(W, ncols)[:, None], shape)


@dataclass
class SpectrumBlock:
    """Learnable complex multipliers ``P_k`` on the retained Fourier modes."""

    weights: np.ndarray  # (2, my, mx, cin, cout, 2)

    @property
    def modes_y(self) -> int:
        return self.weights.shape[1]

    @property
    def modes_x(self) -> int:
        return self.weights.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[3]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[4]

    @property
    def complex(self) -> np.ndarray:
        return self.weights[..., 0] + 1j * self.weights[..., 1]

    @classmethod
    def zeros(cls, modes_y, modes_x, cin, cout):
        return cls(np.zeros((2, modes_y, modes_x, cin, cout, 2)))

    @classmethod
    def identity(cls, modes_y, modes_x, channels):
        w = np.zeros((2, modes_y, modes_x, channels, channels, 2))
        w[..., 0] = np.eye(channels)
        return cls(w)

    @classmethod
    def random(cls, rng: np.random.Generator, modes_y, modes_x, cin, cout, scale=None):
        scale = 1.0 / (cin * cout) if scale is None else scale
        return cls(scale * rng.uniform(-1.0, 1.0, size=(2, modes_y, modes_x, cin, cout, 2)))

    def check_fits(self, H: int, W: int) -> None:
        if self.modes_x > W // 2 + 1 or 2 * self.modes_y > H:
            raise ValueError(
                f"{self.modes_y}x{self.modes_x} modes do not fit a {H}x{W} grid")


def rfft2_modes(v: np.ndarray, my: int, mx: int) -> np.ndarray:
    """Retained modes of ``rfft2(v)`` in compact ``(..., 2*my, mx, C)`` layout.

    Rows ``0..my-1`` hold frequencies ``0..my-1``, rows ``my..2my-1`` hold
    ``-my..-1``.
    """
    H = v.shape[-3]
    t = sfft.rfft(v, axis=-2)[..., :mx, :]
    t = sfft.fft(t, axis=-3)
    return np.concatenate([t[..., :my, :, :], t[..., H - my:, :, :]], axis=-3)


def irfft2_modes(Z: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Real field whose half-spectrum is ``Z`` on the retained modes and zero elsewhere."""
    H, W = shape
    my = Z.shape[-3] // 2
    full = np.zeros(Z.shape[:-3] + (H,) + Z.shape[-2:], dtype=complex)
    full[..., :my, :, :] = Z[..., :my, :, :]
    full[..., H - my:, :, :] = Z[..., my:, :, :]
    return sfft.irfft(sfft.ifft(full, axis=-3), n=W, axis=-2)


def irfft2_modes_adjoint(grad_out: np.ndarray, my: int, mx: int) -> np.ndarray:
    H, W = grad_out.shape[-3:-1]
    return rfft2_modes(grad_out, my, mx) * (_column_weights(W, mx)[:, None] / (H * W))


def rfft2_modes_adjoint(grad_spec: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    H, W = shape
    mx = grad_spec.shape[-2]
    return (H * W) * irfft2_modes(grad_spec / _column_weights(W, mx)[:, None], shape)


def compact_weights(block: "SpectrumBlock") -> np.ndarray:
    """Complex ``(2*my, mx, Cin, Cout)`` multipliers matching the compact mode layout."""
    P = block.complex
    return P.reshape((-1,) + P.shape[2:])


def spectral_conv(v: np.ndarray, block: SpectrumBlock) -> np.ndarray:
    """Truncated-mode convolution ``irfft2(P_k * rfft2(v))``; ``v`` is ``(..., H, W, Cin)``."""
    H, W = v.shape[-3:-1]
    if v.shape[-1] != block.in_channels:
        raise ValueError(f"expected {block.in_channels} channels, got {v.shape[-1]}")
    block.check_fits(H, W)
    X = rfft2_modes(v, block.modes_y, block.modes_x)
    Z = np.einsum("...xyi,xyio->...xyo", X, compact_weights(block))
    return irfft2_modes(Z, (H, W))


def spectral_conv_backward(v: np.ndarray, block: SpectrumBlock, grad_out: np.ndarray,
                           spec_v: np.ndarray | None = None):
    """Gradients of :func:`spectral_conv` w.r.t. the input and the block weights.

    Returns ``(grad_v, grad_weights)`` with ``grad_weights`` shaped like
    ``block.weights``. ``spec_v`` may carry ``rfft2_modes(v)`` from the forward pass.
    """
    H, W = v.shape[-3:-1]
    my, mx = block.modes_y, block.modes_x
    X = rfft2_modes(v, my, mx) if spec_v is None else spec_v
    gZ = irfft2_modes_adjoint(grad_out, my, mx)
    Xf = X.reshape((-1,) + X.shape[-3:])
    gZf = gZ.reshape((-1,) + gZ.shape[-3:])
    gP = np.einsum("bxyi,bxyo->xyio", Xf.conj(), gZf)
    gX = np.einsum("...xyo,xyio->...xyi", gZ, compact_weights(block).conj())
    grad_v = rfft2_modes_adjoint(gX, (H, W))
    gP = gP.reshape(block.weights.shape[:-1])
    return grad_v, np.stack([gP.real, gP.imag], axis=-1)


def kernel_values(block: SpectrumBlock, H: int, W: int, dr: np.ndarray, dc: np.ndarray) -> np.ndarray:
    """Evaluate the real trigonometric kernel ``K(d)`` at lattice offsets.

    Direct cosine/sine sums (no FFT), normalized so that
    ``spectral_conv(v)(x) = sum_y K(x - y) v(y)``. Returns ``dr.shape + (Cin, Cout)``.
    """
    P = block.complex
    my, mx = block.modes_y, block.modes_x
    cw = _column_weights(W, mx)
    out = np.zeros(np.shape(dr) + P.shape[-2:])
    dr = np.asarray(dr, dtype=float)[..., None, None]
    dc = np.asarray(dc, dtype=float)[..., None, None]
    for blk in (0, 1):
        for a in range(my):
            ky = a if blk == 0 else a - my
            for b in range(mx):
                phase = 2 * np.pi * (ky * dr / H + b * dc / W)
                Pk = P[blk, a, b]
                out += cw[b] * (Pk.real * np.cos(phase) - Pk.imag * np.sin(phase))
    return out / (H * W)


# --------------------------------------------------------------------------

def central_gradient(field: ScalarField, safe: np.ndarray | None = None):
    """Per-axis derivatives ``(d/dx, d/dy)`` (x = columns, y = rows).

    Central differences in the interior, one-sided at borders. Non-finite or
    non-``safe`` neighbours are skipped (one-sided difference towards the
    valid side); cells outside ``safe`` copy the gradient of the nearest valid
    cell.
    """
    from scipy import ndimage

    V = np.asarray(field.values, dtype=float)
    h = field.cell_size
    valid = np.isfinite(V)
    if safe is not None:
        valid &= safe
    Vz = np.where(valid, V, 0.0)

    def axis_diff(axis):
        n = V.shape[axis]
        fwd = np.zeros_like(V)
        bwd = np.zeros_like(V)
        fwd_ok = np.zeros(V.shape, dtype=bool)
        bwd_ok = np.zeros(V.shape, dtype=bool)
        sl = [slice(None)] * 2
        lo, hi = list(sl), list(sl)
        lo[axis], hi[axis] = slice(0, n - 1), slice(1, n)
        lo, hi = tuple(lo), tuple(hi)
        ok = valid[lo] & valid[hi]
        d = np.where(ok, Vz[hi] - Vz[lo], 0.0) / h
        fwd[lo], fwd_ok[lo] = d, ok
        bwd[hi], bwd_ok[hi] = d, ok
        both = fwd_ok & bwd_ok
        return np.where(both, 0.5 * (fwd + bwd), np.where(fwd_ok, fwd, np.where(bwd_ok, bwd, 0.0)))

    gx, gy = axis_diff(1), axis_diff(0)
    if not valid.all() and valid.any():
        _, (ri, ci) = ndimage.distance_transform_edt(~valid, return_indices=True)
        gx, gy = gx[ri, ci], gy[ri, ci]
    return (ScalarField(gx, h, "heuristic"), ScalarField(gy, h, "heuristic"))


def bilinear(values: np.ndarray, point, cell_size: float) -> float:
    """Bilinear interpolation at a continuous ``(row, col)`` point between cell centers."""
    H, W = values.shape
    fr = min(max(point[0] / cell_size - 0.5, 0.0), H - 1.0)
    fc = min(max(point[1] / cell_size - 0.5, 0.0), W - 1.0)
    r0, c0 = min(int(fr), H - 2), min(int(fc), W - 2)
    tr, tc = fr - r0, fc - c0
    v = values
    return float((1 - tr) * ((1 - tc) * v[r0, c0] + tc * v[r0, c0 + 1])
                 + tr * ((1 - tc) * v[r0 + 1, c0] + tc * v[r0 + 1, c0 + 1]))
