from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import directed_hausdorff


class Vec2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class ObstacleDisc:
    center: Vec2
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"obstacle radius must be positive, got {self.radius}")


# Candidate target cells, x-major order; a cell index is a stable key for featurization.
GRID_POINTS: Tuple[Vec2, ...] = tuple(Vec2(float(x), float(y)) for x in (-8, 0, 8) for y in (-8, 0, 8))


def grid_index(point: Sequence[float]) -> int | None:
    """
    The grid_index function returns the index of the candidate cell located at point.
    Coordinates are compared after rounding to one decimal place.

    :param point: Sequence[float]: A 2D point
    :return: The cell index in GRID_POINTS, or None when the point is not a grid cell
    """
    key = (round(float(point[0]), 1), round(float(point[1]), 1))
    for index, cell in enumerate(GRID_POINTS):
        if (cell.x, cell.y) == key:
            return index
    return None


def as_points(points) -> np.ndarray:
    array = np.asarray(points, dtype=float)
    if array.size == 0:
        return array.reshape(0, 2)
    if array.ndim == 1 and array.size == 2:
        array = array.reshape(1, 2)
    if array.ndim != 2 or array.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) point set, got shape {array.shape}")
    return array


def hausdorff(a, b) -> float:
    """
    The hausdorff function computes the symmetric Hausdorff distance between two planar
    point sets: max(sup_a inf_b d, sup_b inf_a d).

    :param a: First point set, shape (n, 2)
    :param b: Second point set, shape (m, 2)
    :return: The distance in meters
    """
    first, second = as_points(a), as_points(b)
    if len(first) == 0 or len(second) == 0:
        raise ValueError("hausdorff distance is undefined for an empty point set")
    return float(max(directed_hausdorff(first, second)[0], directed_hausdorff(second, first)[0]))
