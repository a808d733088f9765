"""Finite-difference verification suite over every differentiable op."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .model import rope_rotate
from .tensor import Tensor, gradcheck


def _rand(shape, seed, lo=-1.5, hi=1.5):
    return np.random.default_rng(seed).uniform(lo, hi, shape).astype(np.float32)


def _proj(shape, seed):
    return Tensor(_rand(shape, seed, 0.5, 1.5))


def gradient_suite(tol: float = 1e-3):
    """Run gradcheck on each op; returns [(name, GradcheckReport), ...]."""
    results = []

    def check(name, fn, x, h=1e-3, **kw):
        results.append((name, gradcheck(fn, x, h=h, tol=tol, **kw)))

    v = lambda seed, shape=(7,), lo=-1.5, hi=1.5: Tensor(_rand(shape, seed, lo, hi), requires_grad=True)

    other = Tensor(_rand((7,), 100))
    check("add", lambda t: T.mul(T.add(t, other), _proj((7,), 101)).sum(), v(1))
    check("sub", lambda t: T.mul(T.sub(t, other), _proj((7,), 102)).sum(), v(2))
    check("mul", lambda t: T.mul(T.mul(t, other), _proj((7,), 103)).sum(), v(3))
    check("div", lambda t: T.mul(T.div(t, Tensor(np.full((7,), 1.7, np.float32))), _proj((7,), 104)).sum(), v(4))
    check("neg", lambda t: T.mul(T.neg(t), _proj((7,), 105)).sum(), v(5))
    check("relu", lambda t: T.mul(T.relu(t), _proj((7,), 106)).sum(), v(6, lo=0.2, hi=1.5))
    check("gelu", lambda t: T.mul(T.gelu(t), _proj((7,), 107)).sum(), v(7))
    check("tanh", lambda t: T.mul(T.tanh(t), _proj((7,), 108)).sum(), v(8, lo=-1.2, hi=1.2))
    check("exp", lambda t: T.mul(T.exp(t), _proj((7,), 109)).sum(), v(9, lo=-1.0, hi=1.0))
    check("log", lambda t: T.mul(T.log(t), _proj((7,), 110)).sum(), v(10, lo=0.5, hi=2.0))
    check("abs", lambda t: T.mul(T.absolute(t), _proj((7,), 111)).sum(), v(11, lo=0.2, hi=1.5))
    check("sqrt", lambda t: T.mul(T.sqrt(t), _proj((7,), 112)).sum(), v(12, lo=0.5, hi=2.0))
    check("scale", lambda t: T.mul(T.scale(t, 0.37), _proj((7,), 113)).sum(), v(13))
    check("sin", lambda t: T.mul(T.sin(t), _proj((7,), 114)).sum(), v(14))

    b = Tensor(_rand((4, 3), 120))
    check("matmul.lhs", lambda t: T.matmul(t, b).sum(), v(21, (2, 4)))
    a = Tensor(_rand((2, 4), 121))
    check("matmul.rhs", lambda t: T.matmul(a, t).sum(), v(22, (4, 3)))

    check("sum", lambda t: t.sum(), v(23, (3, 5)))
    check("mean", lambda t: t.mean(), v(24, (3, 5)))
    check("sum.axis", lambda t: T.mul(t.sum(axis=1), _proj((3,), 122)).sum(), v(25, (3, 5)))
    check("max", lambda t: t.max(), v(26, (3, 5)))
    check("max.axis", lambda t: T.mul(t.max(axis=0), _proj((5,), 123)).sum(), v(27, (3, 5)))

    gain = Tensor(_rand((8,), 130, 0.5, 1.5))
    bias = Tensor(_rand((8,), 131))
    check("layer_norm.x", lambda t: T.mul(T.layer_norm(t, gain, bias), _proj((2, 8), 132)).sum(), v(28, (2, 8)))
    x_ln = Tensor(_rand((2, 8), 133))
    check("layer_norm.gain", lambda t: T.layer_norm(x_ln, t, bias).sum(),
          Tensor(_rand((8,), 134, 0.5, 1.5), requires_grad=True))
    check("softmax", lambda t: T.mul(T.softmax(t, axis=-1), _proj((2, 5), 135)).sum(), v(29, (2, 5)))

    check("reshape", lambda t: T.mul(t.reshape(3, 4), _proj((3, 4), 140)).sum(), v(30, (2, 6)))
    check("transpose", lambda t: T.mul(T.transpose(t, (1, 0)), _proj((6, 2), 141)).sum(), v(31, (2, 6)))
    check("narrow", lambda t: T.narrow(t, 1, 2, 3).sum(), v(32, (2, 6)))
    check("concat", lambda t: T.mul(T.concat(T.split(t, [2, 4], axis=1), axis=1), _proj((2, 6), 142)).sum(),
          v(33, (2, 6)))

    idx = np.array([[0, 1, 2], [2, 3, 0]])
    check("take", lambda t: T.mul(T.take(t, idx), _proj((2, 2, 3), 143)).sum(), v(34, (2, 8)))
    check("overlap_add", lambda t: T.mul(T.overlap_add(t, 2, 8), _proj((2, 8), 144)).sum(), v(35, (2, 3, 4)))

    # linear transforms: a larger step keeps the difference above float32 noise
    check("rfft", lambda t: T.mul(T.rfft_pack(t), _proj((9, 2), 145)).sum(), v(36, (16,)), h=3e-2)
    check("irfft", lambda t: T.mul(T.irfft_pack(t, 16), _proj((16,), 146)).sum(), v(37, (9, 2)), h=3e-2)
    check("complex_abs", lambda t: T.mul(T.complex_abs(t), _proj((5,), 147)).sum(), v(38, (5, 2), lo=0.3, hi=1.5))
    check("rope_rotate", lambda t: T.mul(rope_rotate(t), _proj((2, 4, 6), 148)).sum(), v(39, (2, 4, 6)))

    return results
