"""Convolution, pooling and batch normalization on channel-last tensors.

All three accept any number of leading batch axes in front of ``H x W x C``.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Function, Tensor


class Conv2d(Function):
    """3x3 cross-correlation, stride 1, zero padding 1."""

    def forward(self, x, kernels, bias):
        if kernels.ndim != 4 or kernels.shape[1:3] != (3, 3):
            raise ValueError(f"kernels must be Co x 3 x 3 x Cin, got {kernels.shape}")
        cin = kernels.shape[3]
        if x.shape[-1] != cin:
            raise ValueError(f"channel mismatch: input has {x.shape[-1]}, kernels expect {cin}")
        if bias.shape != (kernels.shape[0],):
            raise ValueError("bias must have one entry per output channel")
        lead = x.shape[:-3]
        h, w = x.shape[-3], x.shape[-2]
        x4 = x.reshape((-1, h, w, cin))
        xp = np.pad(x4, ((0, 0), (1, 1), (1, 1), (0, 0)))
        # (N, H, W, Cin, 3, 3) -> (N, H, W, 3, 3, Cin)
        win = sliding_window_view(xp, (3, 3), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
        cols = win.reshape(-1, 9 * cin)
        wmat = kernels.reshape(kernels.shape[0], 9 * cin).T
        self.cols, self.wmat = cols, wmat
        self.dims = (x4.shape[0], h, w, cin, lead, kernels.shape)
        out = cols @ wmat + bias
        return out.reshape(lead + (h, w, kernels.shape[0]))

    def backward(self, grad):
        n, h, w, cin, lead, kshape = self.dims
        co = kshape[0]
        g2 = grad.reshape(-1, co)
        gk = gb = gx = None
        if self.needs_input_grad[1]:
            gk = (self.cols.T @ g2).T.reshape(kshape)
        if self.needs_input_grad[2]:
            gb = g2.sum(axis=0)
        if self.needs_input_grad[0]:
            gcols = (g2 @ self.wmat.T).reshape(n, h, w, 3, 3, cin)
            gxp = np.zeros((n, h + 2, w + 2, cin))
            for di in range(3):
                for dj in range(3):
                    gxp[:, di:di + h, dj:dj + w, :] += gcols[:, :, :, di, dj, :]
            gx = gxp[:, 1:-1, 1:-1, :].reshape(lead + (h, w, cin))
        return gx, gk, gb


class MaxPool2d(Function):
    """Non-overlapping max pooling; trailing remainders are truncated."""

    def forward(self, x, pool_h=1, pool_w=1):
        h, w, c = x.shape[-3:]
        if pool_h < 1 or pool_w < 1 or pool_h > h or pool_w > w:
            raise ValueError(f"pool {pool_h}x{pool_w} exceeds input {h}x{w}")
        ho, wo = h // pool_h, w // pool_w
        lead = x.shape[:-3]
        xt = x.reshape((-1, h, w, c))[:, : ho * pool_h, : wo * pool_w, :]
        n = xt.shape[0]
        win = xt.reshape(n, ho, pool_h, wo, pool_w, c).transpose(0, 1, 3, 5, 2, 4)
        win = win.reshape(n, ho, wo, c, pool_h * pool_w)
        arg = win.argmax(axis=-1)  # first occurrence on ties
        self.arg = arg
        self.dims = (x.shape, n, h, w, c, ho, wo, pool_h, pool_w)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        return out.reshape(lead + (ho, wo, c))

    def backward(self, grad):
        shape, n, h, w, c, ho, wo, ph, pw = self.dims
        gwin = np.zeros((n, ho, wo, c, ph * pw))
        np.put_along_axis(gwin, self.arg[..., None], grad.reshape(n, ho, wo, c)[..., None], axis=-1)
        gwin = gwin.reshape(n, ho, wo, c, ph, pw).transpose(0, 1, 4, 2, 5, 3)
        gx = np.zeros((n, h, w, c))
        gx[:, : ho * ph, : wo * pw, :] = gwin.reshape(n, ho * ph, wo * pw, c)
        return (gx.reshape(shape),)


@dataclass
class BatchNormStats:
    """Running statistics for one batch-norm layer."""

    channels: int
    momentum: float = 0.9
    eps: float = 1e-5
    mean: np.ndarray = field(default=None)
    var: np.ndarray = field(default=None)
    initialized: bool = False

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.channels)
        if self.var is None:
            self.var = np.ones(self.channels)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        if not self.initialized:
            self.mean = batch_mean.copy()
            self.var = batch_var.copy()
            self.initialized = True
        else:
            m = self.momentum
            self.mean = m * self.mean + (1.0 - m) * batch_mean
            self.var = m * self.var + (1.0 - m) * batch_var


class BatchNorm(Function):
    def forward(self, x, gamma, beta, mode="train", stats=None):
        c = x.shape[-1]
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ValueError("gamma/beta must have one entry per channel")
        axes = tuple(range(x.ndim - 1))
        if mode == "train":
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            if stats is not None:
                stats.update(mu, var)
        elif mode == "eval":
            if stats is None or not stats.initialized:
                raise RuntimeError("batchnorm eval mode requires running statistics from training")
            mu, var = stats.mean, stats.var
        else:
            raise ValueError(f"unknown batchnorm mode {mode!r}")
        eps = stats.eps if stats is not None else 1e-5
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mu) * self.inv_std
        self.gamma = gamma
        self.mode = mode
        self.axes = axes
        return self.xhat * gamma + beta

    def backward(self, grad):
        axes = self.axes
        gg = (grad * self.xhat).sum(axis=axes) if self.needs_input_grad[1] else None
        gbeta = grad.sum(axis=axes) if self.needs_input_grad[2] else None
        gx = None
        if self.needs_input_grad[0]:
            dxhat = grad * self.gamma
            if self.mode == "eval":
                gx = dxhat * self.inv_std
            else:
                n = grad.size // grad.shape[-1]
                gx = (self.inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=axes) - self.xhat * (dxhat * self.xhat).sum(axis=axes)
                )
        return gx, gg, gbeta


def conv2d(x, kernels, bias) -> Tensor:
    return Conv2d.apply(x, kernels, bias)


def maxpool2d(x, pool_h: int, pool_w: int) -> Tensor:
    return MaxPool2d.apply(x, pool_h=pool_h, pool_w=pool_w)


def batchnorm(x, gamma, beta, mode: str = "train", stats: BatchNormStats = None) -> Tensor:
    return BatchNorm.apply(x, gamma, beta, mode=mode, stats=stats)
