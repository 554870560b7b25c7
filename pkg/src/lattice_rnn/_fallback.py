"""Pure-numpy kernels with the same fixed accumulation order as the compiled ones.

Each product is accumulated one inner index at a time, so every output
element is ``((0 + a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...``, matching a naive
triple loop exactly.  numpy never fuses the multiply and the add here.
"""
import numpy as np


def matmul(a, b):
    p, q = a.shape
    out = np.zeros((p, b.shape[1]))
    tmp = np.empty_like(out)
    for k in range(q):
        np.multiply(a[:, k : k + 1], b[k : k + 1, :], out=tmp)
        out += tmp
    return out


def matmul_acc(a, b, out):
    out += matmul(a, b)


def affine_pair(w, a, u, b, bias):
    out = matmul(w, a)
    out += matmul(u, b)
    out += bias
    return out
