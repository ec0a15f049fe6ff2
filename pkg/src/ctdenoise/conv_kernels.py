"""Raw 2-D cross-correlation kernels (forward + the two adjoints).

All three kernels realize the same trilinear form
    T(x, w, g) = sum_{b,co,i,j} g[b,co,i,j] * (x * w)[b,co,i,j]
so each one is the partial adjoint of the others; the autodiff layer
exploits that closure to differentiate them against each other.

Layout is NCHW at the interface. Internally stride-1 convolutions run as
an implicit GEMM: the padded input is viewed as a flat [B*Hp*Wp, Cin]
matrix and each of the k*k kernel taps becomes one BLAS dgemm accumulated
(beta=1) into a flat output buffer at a constant row offset. This avoids
im2col materialization entirely, which matters on memory-bound hosts.
Strided convolutions fall back to per-tap strided-slice GEMMs.
"""

import numpy as np
from scipy.linalg.blas import dgemm


def same_padding(size: int, k: int, stride: int):
    """(before, after) zero padding so that out = ceil(size / stride)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    before = total // 2
    return before, total - before


def resolve_padding(h, w, k, stride, padding):
    if padding == "same":
        pt, pb = same_padding(h, k, stride)
        pl, pr = same_padding(w, k, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    return pt, pb, pl, pr


def out_size(size, k, stride, before, after):
    return (size + before + after - k) // stride + 1


def _pad_nhwc(x, pt, pb, pl, pr):
    """NCHW input -> zero-padded NHWC buffer (single fused copy)."""
    b, c, h, w = x.shape
    buf = np.zeros((b, h + pt + pb, w + pl + pr, c))
    buf[:, pt : pt + h, pl : pl + w, :] = x.transpose(0, 2, 3, 1)
    return buf


def conv2d_forward(x, w, stride=1, padding="same", bias=None):
    """Cross-correlation of x[B,Cin,H,W] with w[Cout,Cin,k,k] -> [B,Cout,Ho,Wo].

    An optional per-output-channel bias is seeded into the accumulation
    buffer, saving a separate broadcast pass.
    """
    bsz, cin, h, ww = x.shape
    cout, cin_w, k, k2 = w.shape
    if k != k2:
        raise ValueError(f"only square kernels supported, got {k}x{k2}")
    if cin_w != cin:
        raise ValueError(f"input channels {cin} do not match kernel channels {cin_w}")
    pt, pb, pl, pr = resolve_padding(h, ww, k, stride, padding)
    ho = out_size(h, k, stride, pt, pb)
    wo = out_size(ww, k, stride, pl, pr)

    if k == 1 and stride == 1 and (pt, pb, pl, pr) == (0, 0, 0, 0):
        # 1x1 fast path: batched GEMM, stays NCHW
        out = np.matmul(w[:, :, 0, 0][None], x.reshape(bsz, cin, h * ww))
        if bias is not None:
            out += bias[None, :, None]
        return np.ascontiguousarray(out.reshape(bsz, cout, h, ww))

    xn = _pad_nhwc(x, pt, pb, pl, pr)
    hp, wp = xn.shape[1], xn.shape[2]
    wmat = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # [k,k,Cin,Cout]

    if stride == 1:
        flat = xn.reshape(bsz * hp * wp, cin)
        base = (k - 1) * wp + (k - 1)
        n = bsz * hp * wp
        obuf = np.empty((base + n, cout))
        seeded = bias is not None
        if seeded:
            obuf[base : base + n] = bias[None, :]
        first = True
        for dy in range(k):
            for dx in range(k):
                c = obuf[base - dy * wp - dx : base - dy * wp - dx + n]
                dgemm(1.0, wmat[dy, dx].T, flat.T,
                      beta=1.0 if (seeded or not first) else 0.0,
                      c=c.T, overwrite_c=1)
                first = False
        out = obuf[base : base + n].reshape(bsz, hp, wp, cout)[:, :ho, :wo, :]
    else:
        out2d = np.empty((bsz * ho * wo, cout))
        out2d[:] = 0.0 if bias is None else bias[None, :]
        for dy in range(k):
            for dx in range(k):
                sl = xn[:, dy : dy + stride * (ho - 1) + 1 : stride,
                        dx : dx + stride * (wo - 1) + 1 : stride, :]
                out2d += sl.reshape(-1, cin) @ wmat[dy, dx]
        out = out2d.reshape(bsz, ho, wo, cout)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_input_grad(g, w, in_hw, stride=1, padding="same"):
    """Adjoint of conv2d_forward w.r.t. its input.

    g: [B,Cout,Ho,Wo] upstream gradient; returns [B,Cin,H,W].
    """
    bsz, cout, ho, wo = g.shape
    cout_w, cin, k, _ = w.shape
    if cout_w != cout:
        raise ValueError(f"gradient channels {cout} do not match kernel count {cout_w}")
    h, ww = in_hw
    pt, pb, pl, pr = resolve_padding(h, ww, k, stride, padding)
    hp, wp = h + pt + pb, ww + pl + pr

    if k == 1 and stride == 1 and (pt, pb, pl, pr) == (0, 0, 0, 0):
        gx = np.matmul(w[:, :, 0, 0].T[None], g.reshape(bsz, cout, ho * wo))
        return np.ascontiguousarray(gx.reshape(bsz, cin, h, ww))

    wmat = np.ascontiguousarray(w.transpose(2, 3, 0, 1))  # [k,k,Cout,Cin]

    if stride == 1:
        # embed g into an Hp x Wp zero canvas so tap offsets become constant
        gf = np.zeros((bsz, hp, wp, cout))
        gf[:, :ho, :wo, :] = g.transpose(0, 2, 3, 1)
        flat = gf.reshape(bsz * hp * wp, cout)
        n = bsz * hp * wp
        gbuf = np.empty((n + (k - 1) * wp + (k - 1), cin))
        first = True
        for dy in range(k):
            for dx in range(k):
                c = gbuf[dy * wp + dx : dy * wp + dx + n]
                dgemm(1.0, wmat[dy, dx].T, flat.T,
                      beta=0.0 if first else 1.0, c=c.T, overwrite_c=1)
                first = False
        gxp = gbuf[:n].reshape(bsz, hp, wp, cin)
    else:
        gxp = np.zeros((bsz, hp, wp, cin))
        g2d = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        for dy in range(k):
            for dx in range(k):
                contrib = (g2d @ wmat[dy, dx]).reshape(bsz, ho, wo, cin)
                gxp[:, dy : dy + stride * (ho - 1) + 1 : stride,
                    dx : dx + stride * (wo - 1) + 1 : stride, :] += contrib
    gx = gxp[:, pt : pt + h, pl : pl + ww, :]
    return np.ascontiguousarray(gx.transpose(0, 3, 1, 2))


def conv2d_weight_grad(x, g, k, stride=1, padding="same"):
    """Adjoint of conv2d_forward w.r.t. its kernel.

    x: [B,Cin,H,W] forward input, g: [B,Cout,Ho,Wo]; returns [Cout,Cin,k,k].
    """
    bsz, cin, h, ww = x.shape
    _, cout, ho, wo = g.shape
    pt, pb, pl, pr = resolve_padding(h, ww, k, stride, padding)

    if k == 1 and stride == 1 and (pt, pb, pl, pr) == (0, 0, 0, 0):
        gw = np.matmul(g.reshape(bsz, cout, ho * wo),
                       x.reshape(bsz, cin, h * ww).transpose(0, 2, 1)).sum(axis=0)
        return np.ascontiguousarray(gw[:, :, None, None])

    xn = _pad_nhwc(x, pt, pb, pl, pr)
    hp, wp = xn.shape[1], xn.shape[2]
    gw = np.empty((k, k, cin, cout))

    if stride == 1:
        gf = np.zeros((bsz, hp, wp, cout))
        gf[:, :ho, :wo, :] = g.transpose(0, 2, 3, 1)
        gflat = gf.reshape(bsz * hp * wp, cout)
        xflat = xn.reshape(bsz * hp * wp, cin)
        n = bsz * hp * wp
        for dy in range(k):
            for dx in range(k):
                off = dy * wp + dx
                gw[dy, dx] = xflat[off:n].T @ gflat[: n - off]
    else:
        g2d = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        for dy in range(k):
            for dx in range(k):
                sl = xn[:, dy : dy + stride * (ho - 1) + 1 : stride,
                        dx : dx + stride * (wo - 1) + 1 : stride, :]
                gw[dy, dx] = sl.reshape(-1, cin).T @ g2d
    return np.ascontiguousarray(gw.transpose(3, 2, 0, 1))
