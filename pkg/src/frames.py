# Homogeneous transform helpers built on symbolic matrices.
# Transforms are 4x4 MatrixExpr; entries may be plain or extended expressions.

import math
from typing import Sequence

import numpy as np

from src.errors import DimensionMismatch
from src.symexpr import MatrixExpr, ONE, ZERO, as_expr, cos, sigmoid, sin

DEFAULT_SHARPNESS = 100.0


def _entry(value):
    return value if hasattr(type(value), 'apply_op') else as_expr(value)


def translation(x, y, z) -> MatrixExpr:
    return MatrixExpr.from_rows([
        [ONE, ZERO, ZERO, _entry(x)],
        [ZERO, ONE, ZERO, _entry(y)],
        [ZERO, ZERO, ONE, _entry(z)],
        [ZERO, ZERO, ZERO, ONE],
    ])


def rotation3(axis: Sequence, angle) -> MatrixExpr:
    """
    Right-handed rotation by ``angle`` about the unit vector ``axis`` (Rodrigues form).
    The axis must have unit norm at every admissible assignment.
    """
    if len(axis) != 3:
        raise DimensionMismatch(f'rotation axis needs 3 components, got {len(axis)}')
    k = [_entry(a) for a in axis]
    c = cos(angle)
    s = sin(angle)
    one_minus_c = 1.0 - c
    rows = []
    for i in range(3):
        row = []
        for j in range(3):
            if i == j:
                if _is_const(k[i]):
                    alpha = k[i].value * k[i].value
                    row.append(alpha + (1.0 - alpha) * c)
                else:
                    row.append(c + k[i] * k[i] * one_minus_c)
                continue
            # cross-product matrix entry for (i, j)
            m = 3 - i - j
            sign = 1.0 if (i, j) in ((2, 1), (0, 2), (1, 0)) else -1.0
            row.append(k[i] * k[j] * one_minus_c + sign * k[m] * s)
        rows.append(row)
    return MatrixExpr.from_rows(rows)


def rotation(axis: Sequence, angle) -> MatrixExpr:
    """4x4 homogeneous rotation about ``axis`` through the origin."""
    return homogeneous(rotation3(axis, angle), (ZERO, ZERO, ZERO))


def homogeneous(rotation_block: MatrixExpr, position: Sequence) -> MatrixExpr:
    if rotation_block.shape != (3, 3):
        raise DimensionMismatch(f'rotation block must be 3x3, got {rotation_block.shape}')
    rows = [list(rotation_block.row_entries(i)) + [_entry(position[i])] for i in range(3)]
    rows.append([ZERO, ZERO, ZERO, ONE])
    return MatrixExpr.from_rows(rows)


def _is_const(value) -> bool:
    return getattr(value, 'op', None) == 'c'


def compose(a: MatrixExpr, b: MatrixExpr) -> MatrixExpr:
    if a.shape != (4, 4) or b.shape != (4, 4):
        raise DimensionMismatch(f'compose expects 4x4 transforms, got {a.shape} and {b.shape}')
    return a @ b


def position_of(transform: MatrixExpr) -> MatrixExpr:
    if transform.shape != (4, 4):
        raise DimensionMismatch(f'expected a 4x4 transform, got {transform.shape}')
    return transform.block(0, 3, 3, 4)


def rotation_of(transform: MatrixExpr) -> MatrixExpr:
    if transform.shape != (4, 4):
        raise DimensionMismatch(f'expected a 4x4 transform, got {transform.shape}')
    return transform.block(0, 3, 0, 3)


def transform_point(transform: MatrixExpr, point: Sequence) -> MatrixExpr:
    """World coordinates (3x1) of a point given in the transform's local frame."""
    if len(point) != 3:
        raise DimensionMismatch(f'points have 3 coordinates, got {len(point)}')
    return (transform @ MatrixExpr.column(list(point) + [1.0])).block(0, 3, 0, 1)


def rpy_rotation(roll: float, pitch: float, yaw: float) -> MatrixExpr:
    """Fixed-axis XYZ roll-pitch-yaw as used by URDF origins: Rz(yaw) Ry(pitch) Rx(roll)."""
    return compose(compose(rotation((0, 0, 1), yaw), rotation((0, 1, 0), pitch)), rotation((1, 0, 0), roll))


def origin_transform(xyz: Sequence[float], rpy: Sequence[float]) -> MatrixExpr:
    return compose(translation(*xyz), rpy_rotation(*rpy))


def from_numpy(array) -> MatrixExpr:
    array = np.asarray(array, dtype=float)
    if array.shape != (4, 4):
        raise DimensionMismatch(f'expected a 4x4 array, got {array.shape}')
    return MatrixExpr.from_rows(array.tolist())


def softstep_lt(x, t, k: float = DEFAULT_SHARPNESS):
    """Smooth indicator of x < t: sigmoid(k (t - x)), 0.5 at x == t."""
    if not k > 0:
        raise ValueError(f'softstep sharpness must be positive, got {k}')
    return sigmoid(k * (_entry(t) - _entry(x)))


def unit_axis(axis: Sequence[float], tolerance: float = 1e-9) -> tuple:
    norm = math.sqrt(sum(float(a) * float(a) for a in axis))
    if norm <= tolerance:
        raise ValueError(f'axis {tuple(axis)} has (near) zero norm')
    return tuple(float(a) / norm for a in axis)
