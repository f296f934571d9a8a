import math

import numpy as np
import pytest

from cbgl.grid_map import FREE, OCCUPIED, OccupancyGrid
from cbgl.pose import Pose

RES = 0.05


def room_grid(width_m=4.0, height_m=4.0, res=RES, wall=1):
    """Rectangular room: free interior ``[0, width] x [0, height]`` with a ``wall``-cell border."""
    w, h = int(round(width_m / res)), int(round(height_m / res))
    state = np.full((h + 2 * wall, w + 2 * wall), OCCUPIED, dtype=np.int8)
    state[wall:wall + h, wall:wall + w] = FREE
    return OccupancyGrid(state, res, Pose(-wall * res, -wall * res, 0.0))


def convex_room(width_m=5.0, height_m=4.0, chamfer_m=1.5, res=RES):
    """Rectangle with one corner cut off: convex and without rotational symmetry."""
    g = room_grid(width_m, height_m, res)
    state = np.array(g.state)
    rows, cols = np.mgrid[0:state.shape[0], 0:state.shape[1]]
    # cell centres in metres relative to the interior's lower-left corner
    x = (cols - 1 + 0.5) * res
    y = (rows - 1 + 0.5) * res
    state[(x + y < chamfer_m) & (state == FREE)] = OCCUPIED
    return OccupancyGrid(state, res, g.origin)


def random_grid(rng, shape=(40, 50), res=0.1, p_block=0.15):
    """Blocks scattered at random, a solid border and a guaranteed free centre."""
    state = np.where(rng.random(shape) < p_block, OCCUPIED, FREE).astype(np.int8)
    state[0, :] = state[-1, :] = OCCUPIED
    state[:, 0] = state[:, -1] = OCCUPIED
    state[shape[0] // 2, shape[1] // 2] = FREE
    return OccupancyGrid(state, res, Pose(rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0))


@pytest.fixture
def square_room():
    return room_grid()


@pytest.fixture
def centre():
    return Pose(2.0, 2.0, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TWO_PI = 2 * math.pi


# PASS/FAIL lines from test_acceptance, repeated at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
