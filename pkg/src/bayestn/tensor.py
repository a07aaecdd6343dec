"""Dense tensor primitives.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 stored in C
(row-major) order. The helpers here add the argument checking that the rest of
the package relies on; the arithmetic itself is delegated to numpy.
"""
import numpy as np

__all__ = ["as_tensor", "contract", "norm_l1_slices", "norm_l2_slices", "max_abs_slices"]


def as_tensor(values, shape=None):
    """Return ``values`` as a contiguous float64 array, optionally reshaped.

    Raises ValueError if the element count does not match ``shape`` or if the
    result would have zero-sized axes.
    """
    t = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape, dtype=np.int64)) != t.size:
            raise ValueError(f"cannot reshape {t.size} values into shape {shape}")
        t = t.reshape(shape)
    if any(s < 1 for s in t.shape):
        raise ValueError(f"all axis dimensions must be positive, got {t.shape}")
    return t


def _check_axes(axes, ndim, name):
    axes = [int(a) for a in axes]
    for a in axes:
        if not 0 <= a < ndim:
            raise IndexError(f"axis {a} out of range for order-{ndim} tensor {name}")
    if len(set(axes)) != len(axes):
        raise ValueError(f"duplicate axes {axes} for tensor {name}")
    return axes


def contract(a, b, axes_a, axes_b):
    """Sum products of ``a`` and ``b`` over paired axes.

    The output axes are the uncontracted axes of ``a`` followed by those of
    ``b``, each in their original order.

    >>> contract(np.eye(2), np.array([[1., 2.], [3., 4.]]), [1], [0])
    array([[1., 2.],
           [3., 4.]])
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    axes_a = _check_axes(axes_a, a.ndim, "a")
    axes_b = _check_axes(axes_b, b.ndim, "b")
    if len(axes_a) != len(axes_b):
        raise ValueError("axes_a and axes_b must have the same length")
    for i, j in zip(axes_a, axes_b):
        if a.shape[i] != b.shape[j]:
            raise ValueError(
                f"dimension mismatch: a axis {i} has {a.shape[i]}, b axis {j} has {b.shape[j]}"
            )
    return np.tensordot(a, b, axes=(axes_a, axes_b))


def _reduce(t, axis, fn):
    t = np.asarray(t, dtype=np.float64)
    (axis,) = _check_axes([axis], t.ndim, "t")
    return fn(t, axis)


def norm_l1_slices(t, axis):
    """L1 norm of every 1-d slice of ``t`` taken along ``axis``."""
    return _reduce(t, axis, lambda x, ax: np.abs(x).sum(axis=ax))


def norm_l2_slices(t, axis):
    """Euclidean norm of every 1-d slice of ``t`` taken along ``axis``."""
    return _reduce(t, axis, lambda x, ax: np.sqrt((x * x).sum(axis=ax)))


def max_abs_slices(t, axis):
    return _reduce(t, axis, lambda x, ax: np.abs(x).max(axis=ax))
