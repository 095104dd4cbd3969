import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from resilient_stencil.routing import Direction, Hop, astar_next_hop, naive_next_hop, needs_astar
from resilient_stencil.simnet import create_world
from resilient_stencil.topology import cart_create

from oracles import bfs_dist, step_coords


def make_topo(dims, periods):
    return cart_create(create_world(int(np.prod(dims))), 0, dims, periods)


def apply(topo, coords, step):
    return step_coords(topo.dims, topo.periods, coords, step)


def test_naive_examples():
    t33 = make_topo([3, 3], [False, False])
    assert naive_next_hop(t33, (0, 0), (2, 0)) == Direction(0, 1)
    assert naive_next_hop(t33, (1, 1), (1, 1)) is Hop.ARRIVED
    t44 = make_topo([4, 4], [True, True])
    assert naive_next_hop(t44, (0, 0), (0, 3)) == Direction(1, -1)
    # tie on an even ring goes the + way
    assert naive_next_hop(t44, (0, 0), (2, 0)) == Direction(0, 1)


def test_detour_over_blocked_bottom_row():
    # 3x3 open grid, x along dim 0, y along dim 1; bottom row is y == 0
    topo = make_topo([3, 3], [False, False])
    failed = {3}  # coords (1, 0), the middle of the bottom row
    cur, dest = (0, 0), (2, 0)
    assert needs_astar(topo, failed, cur, dest)
    assert astar_next_hop(topo, failed, cur, dest) == Direction(1, 1)


def test_astar_without_failures_is_manhattan_optimal():
    topo = make_topo([6, 5], [False, False])
    cur, dest = (0, 0), (4, 3)
    hops = 0
    while (step := astar_next_hop(topo, set(), cur, dest)) is not Hop.ARRIVED:
        cur = apply(topo, cur, step)
        hops += 1
    assert cur == dest and hops == 7


def test_astar_dest_failed_is_unreachable():
    topo = make_topo([4, 4], [True, True])
    assert astar_next_hop(topo, {5}, (0, 0), (1, 1)) is Hop.UNREACHABLE


def test_astar_walled_off_is_unreachable():
    topo = make_topo([3, 3], [False, False])
    # corner (0,0) is fenced in by (0,1) and (1,0)
    assert astar_next_hop(topo, {1, 3}, (2, 2), (0, 0)) is Hop.UNREACHABLE


def test_needs_astar_examples():
    topo = make_topo([8, 8], [True, True])
    assert not needs_astar(topo, set(), (0, 0), (5, 5))
    # failure at (6, 6) is outside the box from (0,0) to (2,2)
    assert not needs_astar(topo, {6 * 8 + 6}, (0, 0), (2, 2))
    assert needs_astar(topo, {1 * 8 + 1}, (0, 0), (2, 2))
    # the short way from x=1 to x=7 wraps through x=0
    assert needs_astar(topo, {0 * 8 + 3}, (1, 3), (7, 3))
    assert not needs_astar(topo, {4 * 8 + 3}, (1, 3), (7, 3))


grid_case = st.tuples(
    st.lists(st.integers(2, 6), min_size=2, max_size=2),
    st.lists(st.booleans(), min_size=2, max_size=2),
)


@settings(max_examples=300, deadline=None)
@given(grid_case, st.data())
def test_astar_agrees_with_bfs(case, data):
    dims, periods = case
    topo = make_topo(dims, periods)
    n = topo.size
    failed = data.draw(st.sets(st.integers(0, n - 1), max_size=min(10, n - 1)))
    live = [r for r in range(n) if r not in failed]
    cur = tuple(int(x) for x in np.unravel_index(data.draw(st.sampled_from(live)), dims))
    dest = tuple(int(x) for x in np.unravel_index(data.draw(st.integers(0, n - 1)), dims))
    dist = bfs_dist(dims, periods, failed, dest)
    step = astar_next_hop(topo, failed, cur, dest)
    if cur not in dist:
        assert step is Hop.UNREACHABLE
    elif cur == dest:
        assert step is Hop.ARRIVED
    else:
        nxt = apply(topo, cur, step)
        assert dist.get(nxt) == dist[cur] - 1
        # following the steps arrives in exactly the BFS distance
        hops, pos = 0, cur
        while (s := astar_next_hop(topo, failed, pos, dest)) is not Hop.ARRIVED:
            pos = apply(topo, pos, s)
            hops += 1
        assert hops == dist[cur]


@settings(max_examples=200, deadline=None)
@given(grid_case, st.data())
def test_naive_iteration_and_needs_astar_soundness(case, data):
    dims, periods = case
    topo = make_topo(dims, periods)
    n = topo.size
    failed = data.draw(st.sets(st.integers(0, n - 1), max_size=n // 3))
    live = [r for r in range(n) if r not in failed]
    if len(live) < 2:
        return
    cur = tuple(int(x) for x in np.unravel_index(data.draw(st.sampled_from(live)), dims))
    dest = tuple(int(x) for x in np.unravel_index(data.draw(st.sampled_from(live)), dims))
    trigger = needs_astar(topo, failed, cur, dest)
    manhattan = bfs_dist(dims, periods, set(), dest)[cur]
    pos, hops, visited = cur, 0, []
    while (s := naive_next_hop(topo, pos, dest)) is not Hop.ARRIVED:
        pos = apply(topo, pos, s)
        visited.append(int(np.ravel_multi_index(pos, dims)))
        hops += 1
    assert hops == manhattan
    if not trigger:
        assert not failed.intersection(visited)
    if not failed:
        assert not trigger
