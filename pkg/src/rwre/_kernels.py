"""Hot inner loops, jitted with numba.

The walk kernel is a pure state machine: it consumes pre-drawn uniforms
and a realized slice of the environment, and returns control whenever it
needs more of either.  Keeping all randomness in numpy generators on the
Python side makes every run replayable bit for bit.
"""
import numba
import numpy as np

HIT = 1
NEED_UNIFORMS = 2
NEED_LEFT = 3
NEED_RIGHT = 4
CAPPED = 5


@numba.njit(cache=True, nogil=True)
def step_walk(state, omega, left_counts, lo, uniforms, start, target, max_steps):
    """Advance a nearest-neighbour walk.

    state = [position, steps taken, minimum position]; omega[i] is the
    right-jump probability of site lo + i and left_counts[i] accumulates
    jumps from that site to its left neighbour.  Consumes uniforms from
    index ``start``; returns (status, next cursor).
    """
    x = state[0]
    steps = state[1]
    min_x = state[2]
    n_u = uniforms.shape[0]
    width = omega.shape[0]
    i = start
    while True:
        if x == target:
            status = HIT
            break
        if steps >= max_steps:
            status = CAPPED
            break
        idx = x - lo
        if idx < 0:
            status = NEED_LEFT
            break
        if idx >= width:
            status = NEED_RIGHT
            break
        if i >= n_u:
            status = NEED_UNIFORMS
            break
        if uniforms[i] < omega[idx]:
            x += 1
        else:
            left_counts[idx] += 1
            x -= 1
            if x < min_x:
                min_x = x
        i += 1
        steps += 1
    state[0] = x
    state[1] = steps
    state[2] = min_x
    return status, i
