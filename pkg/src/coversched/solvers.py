"""Reference solvers: exact dynamic programming, exhaustive enumeration,
nearest-neighbor construction, 2-opt improvement, and the asymmetric-to-
symmetric TSP reduction.

The scheduling decision space per area is (4 corners) x (p patterns); a
composite state id packs (area, corner, pattern) as (area*4+corner)*p+z.
The exact solver is a Held-Karp dynamic program over (visited set, last
state), generalized with a first-entry-corner axis so closed tours charge
the correct return edge. The brute-force enumerator evaluates every
permutation and state combination by vectorized table lookups and exists
purely to cross-check the DP.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import MatrixOverflow, ParseError, TooLarge
from .geometry import (
    Decision,
    Pattern,
    Schedule,
    build_schedule,
    default_patterns,
    pattern_exit_point,
    pattern_path_length,
)

EXACT_MAX_AREAS = 12
BRUTE_MAX_AREAS = 5
HELD_KARP_MAX_NODES = 16


@dataclass
class EdgeWeightMatrix:
    """Inter-area travel costs, optionally scaled/rounded and symmetrized."""

    matrix: np.ndarray
    scaled: bool = False
    symmetrized: bool = False
    scale_factor: float = 1.0
    big_m: float | None = None
    forbidden: float | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass
class StateTables:
    """Per-composite-state geometry caches shared by all solvers."""

    entry: np.ndarray        # (S, 2) entry corner coordinates
    exit: np.ndarray         # (S, 2) pattern exit coordinates
    length: np.ndarray       # (S,) intra-area path lengths
    area_of: np.ndarray      # (S,) owning area index
    corner_of: np.ndarray    # (S,) entry corner index
    pattern_of: np.ndarray   # (S,) pattern index
    per_area: int            # states per area
    travel: np.ndarray       # (S, S) dist(exit_i, entry_j)
    step_cost: np.ndarray    # (S, S) travel + lambda * length[j]

    def states_of(self, area: int) -> slice:
        return slice(area * self.per_area, (area + 1) * self.per_area)


def build_state_tables(
    area_map,
    lambda_intra: float,
    patterns: Sequence[Pattern],
    fixed_choices: Sequence[tuple[int, int]] | None = None,
) -> StateTables:
    """Tabulate entry/exit points, lengths, and pairwise transition costs.

    With `fixed_choices` each area contributes exactly one state (its fixed
    corner and pattern); otherwise all 4 * len(patterns) combinations.
    """
    areas = area_map.areas
    n = len(areas)
    p = len(patterns)
    if fixed_choices is not None:
        combos = [[fc] for fc in fixed_choices]
    else:
        combos = [[(c, z) for c in range(4) for z in range(p)]] * n
    per_area = len(combos[0])

    entry, exits, length, area_of, corner_of, pattern_of = [], [], [], [], [], []
    for a in range(n):
        for c, z in combos[a]:
            entry.append(areas[a].corner(c))
            exits.append(pattern_exit_point(areas[a], c, patterns[z]))
            length.append(pattern_path_length(areas[a], c, patterns[z]))
            area_of.append(a)
            corner_of.append(c)
            pattern_of.append(z)
    entry = np.array(entry)
    exits = np.array(exits)
    length = np.array(length)
    diff = exits[:, None, :] - entry[None, :, :]
    travel = np.sqrt((diff * diff).sum(axis=-1))
    step_cost = travel + lambda_intra * length[None, :]
    return StateTables(
        entry=entry,
        exit=exits,
        length=length,
        area_of=np.array(area_of),
        corner_of=np.array(corner_of),
        pattern_of=np.array(pattern_of),
        per_area=per_area,
        travel=travel,
        step_cost=step_cost,
    )


def _masks_by_popcount(n: int, require_bit0: bool) -> list[int]:
    masks = [m for m in range(1, 1 << n) if not require_bit0 or (m & 1)]
    masks.sort(key=lambda m: (bin(m).count("1"), m))
    return masks


def _decisions_from_states(tables: StateTables, states: Sequence[int]) -> list[Decision]:
    return [
        Decision(
            int(tables.area_of[s]), int(tables.corner_of[s]), int(tables.pattern_of[s])
        )
        for s in states
    ]


def exact_schedule(
    area_map,
    lambda_intra: float = 0.0,
    lanes: int = 5,
    closed: bool = True,
    patterns: Sequence[Pattern] | None = None,
    fixed_choices: Sequence[tuple[int, int]] | None = None,
) -> tuple[Schedule, float]:
    """Globally optimal schedule over order x corners x patterns.

    Held-Karp dynamic program on (visited set, last composite state); for
    closed tours area 0 is fixed first (closed cost is rotation invariant)
    and a first-entry-corner axis carries what the return edge needs. Ties
    resolve toward the lowest composite state id.

    Raises:
        TooLarge: when the map has more than 12 areas.
    """
    n = area_map.n
    if n > EXACT_MAX_AREAS:
        raise TooLarge(f"exact solver handles n <= {EXACT_MAX_AREAS}, got {n}")
    patterns = default_patterns(lanes) if patterns is None else patterns
    tables = build_state_tables(area_map, lambda_intra, patterns, fixed_choices)
    S = len(tables.length)
    T = tables.step_cost
    INF = np.inf

    if closed:
        first_states = np.arange(S)[tables.area_of == 0]
        groups = sorted(set(int(tables.corner_of[s]) for s in first_states))
        G = len(groups)
        dp = np.full((G, 1 << n, S), INF)
        for gi, corner in enumerate(groups):
            for s in first_states:
                if tables.corner_of[s] == corner:
                    dp[gi, 1, s] = lambda_intra * tables.length[s]
        masks = _masks_by_popcount(n, require_bit0=True)
    else:
        G = 1
        dp = np.full((1, 1 << n, S), INF)
        for a in range(n):
            sl = tables.states_of(a)
            dp[0, 1 << a, sl] = lambda_intra * tables.length[sl]
        masks = _masks_by_popcount(n, require_bit0=False)

    full = (1 << n) - 1
    for mask in masks:
        if mask == full:
            continue
        layer = dp[:, mask, :]
        if not np.isfinite(layer).any():
            continue
        best_to = (layer[:, :, None] + T[None, :, :]).min(axis=1)  # (G, S)
        for a in range(n):
            if mask & (1 << a):
                continue
            sl = tables.states_of(a)
            nxt = mask | (1 << a)
            np.minimum(dp[:, nxt, sl], best_to[:, sl], out=dp[:, nxt, sl])

    if closed:
        entry0 = np.array([area_map.areas[0].corner(c) for c in groups])  # (G, 2)
        close = np.sqrt(((tables.exit[None, :, :] - entry0[:, None, :]) ** 2).sum(-1))
        totals = dp[:, full, :] + close  # (G, S)
    else:
        totals = dp[:, full, :]

    flat = int(np.argmin(totals))
    g_best, s_best = divmod(flat, S)
    best_cost = float(totals[g_best, s_best])

    # backward reconstruction; sums recompute bit-identically, so exact
    # equality against the dp table is safe
    states = [s_best]
    mask = full
    s = s_best
    while True:
        a = int(tables.area_of[s])
        prev_mask = mask & ~(1 << a)
        if prev_mask == 0:
            break
        target = dp[g_best, mask, s]
        prev_layer = dp[g_best, prev_mask, :]
        cand = prev_layer + T[:, s]
        matches = np.flatnonzero(cand == target)
        if matches.size == 0:  # guard against pathological float behavior
            matches = np.array([int(np.argmin(cand))])
        s = int(matches[0])
        states.append(s)
        mask = prev_mask
    states.reverse()

    schedule = build_schedule(
        area_map,
        _decisions_from_states(tables, states),
        lambda_intra=lambda_intra,
        closed=closed,
        patterns=patterns,
    )
    assert abs(schedule.total_cost - best_cost) < 1e-6
    return schedule, schedule.total_cost


def brute_force_candidate_count(n: int, p: int = 3) -> int:
    """Size of the full decision space: n! orders times (4p)^n state picks."""
    return math.factorial(n) * (4 * p) ** n


def brute_force_enumerate(
    area_map,
    lambda_intra: float = 0.0,
    lanes: int = 5,
    closed: bool = True,
    patterns: Sequence[Pattern] | None = None,
) -> tuple[Schedule, float]:
    """Exhaustive minimum over permutations and per-area state choices.

    Independent of the dynamic program: costs come from vectorized table
    lookups over the full cartesian state grid per permutation. Closed
    tours enumerate permutations with area 0 first, which covers the whole
    space because closed costs are rotation invariant.

    Raises:
        TooLarge: when the map has more than 5 areas.
    """
    n = area_map.n
    if n > BRUTE_MAX_AREAS:
        raise TooLarge(f"brute force handles n <= {BRUTE_MAX_AREAS}, got {n}")
    patterns = default_patterns(lanes) if patterns is None else patterns
    tables = build_state_tables(area_map, lambda_intra, patterns)
    K = tables.per_area
    T = tables.step_cost
    D = tables.travel

    if n == 1:
        # no ordering freedom; pick the best single state directly
        costs = lambda_intra * tables.length.copy()
        if closed:
            costs = costs + np.sqrt(((tables.exit - tables.entry) ** 2).sum(-1))
        s = int(np.argmin(costs))
        sched = build_schedule(
            area_map, _decisions_from_states(tables, [s]),
            lambda_intra=lambda_intra, closed=closed, patterns=patterns,
        )
        return sched, sched.total_cost

    grid = np.indices((K,) * n).reshape(n, -1)  # (n, K^n)
    pair_idx = [grid[t] * K + grid[t + 1] for t in range(n - 1)]
    close_idx = grid[n - 1] * K + grid[0]

    if closed:
        perms = [(0,) + rest for rest in itertools.permutations(range(1, n))]
    else:
        perms = list(itertools.permutations(range(n)))

    best = (np.inf, None, None)
    for perm in perms:
        blocks = [
            T[tables.states_of(perm[t]), tables.states_of(perm[t + 1])].ravel()
            for t in range(n - 1)
        ]
        cost = lambda_intra * tables.length[tables.states_of(perm[0])][grid[0]]
        cost = cost.astype(np.float64, copy=True)
        for t in range(n - 1):
            cost += blocks[t][pair_idx[t]]
        if closed:
            cb = D[tables.states_of(perm[n - 1]), tables.states_of(perm[0])].ravel()
            cost += cb[close_idx]
        k = int(np.argmin(cost))
        if cost[k] < best[0]:
            best = (float(cost[k]), perm, grid[:, k].copy())

    _, perm, combo = best
    states = [perm[t] * K + int(combo[t]) for t in range(n)]
    schedule = build_schedule(
        area_map,
        _decisions_from_states(tables, states),
        lambda_intra=lambda_intra,
        closed=closed,
        patterns=patterns,
    )
    return schedule, schedule.total_cost


def nearest_neighbor(
    area_map,
    start: int = 0,
    rule: str = "greedy",
    lambda_intra: float = 0.0,
    closed: bool = True,
    patterns: Sequence[Pattern] | None = None,
) -> Schedule:
    """Greedy construction from `start`: repeatedly take the cheapest
    (area, corner, pattern) extension among unvisited areas.

    The only selection rule is "greedy": area, corner, and pattern are
    chosen jointly by minimal incremental cost. The first decision
    minimizes the intra-area term alone (there is no incoming edge yet);
    all ties resolve to the lowest composite state id.
    """
    if rule != "greedy":
        raise ValueError(f"unknown selection rule: {rule!r}")
    patterns = default_patterns() if patterns is None else patterns
    tables = build_state_tables(area_map, lambda_intra, patterns)
    n = area_map.n
    K = tables.per_area

    sl = tables.states_of(start)
    first = start * K + int(np.argmin(lambda_intra * tables.length[sl]))
    states = [first]
    visited = {start}
    while len(states) < n:
        last = states[-1]
        costs = tables.step_cost[last].copy()
        for a in visited:
            costs[tables.states_of(a)] = np.inf
        nxt = int(np.argmin(costs))
        states.append(nxt)
        visited.add(int(tables.area_of[nxt]))
    return build_schedule(
        area_map,
        _decisions_from_states(tables, states),
        lambda_intra=lambda_intra,
        closed=closed,
        patterns=patterns,
    )


def _chain_cost(states: list[int], tables: StateTables, lam: float, closed: bool) -> float:
    cost = lam * tables.length[states[0]]
    for a, b in zip(states[:-1], states[1:]):
        cost += tables.step_cost[a, b]
    if closed:
        cost += float(
            np.sqrt(((tables.exit[states[-1]] - tables.entry[states[0]]) ** 2).sum())
        )
    return float(cost)


def _best_state_at(
    states: list[int], pos: int, tables: StateTables, lam: float, closed: bool
) -> int:
    """Cheapest composite state for `pos` with every other position fixed."""
    area = int(tables.area_of[states[pos]])
    sl = tables.states_of(area)
    candidates = range(sl.start, sl.stop)
    best_s, best_c = states[pos], np.inf
    for s in candidates:
        trial = states.copy()
        trial[pos] = s
        c = _chain_cost(trial, tables, lam, closed)
        if c < best_c:
            best_s, best_c = s, c
    return best_s


def two_opt(
    area_map,
    schedule: Schedule,
    lambda_intra: float = 0.0,
    closed: bool = True,
    max_passes: int = 1000,
    patterns: Sequence[Pattern] | None = None,
) -> Schedule:
    """Best-improvement 2-opt on the visit order.

    Each candidate move reverses a segment of the order and re-optimizes
    the corner/pattern of the two segment endpoints by local enumeration
    (jointly when the endpoints are cyclically adjacent). The single best
    strictly improving move is applied per pass until none exists or
    `max_passes` moves were taken; cost never increases.
    """
    patterns = default_patterns() if patterns is None else patterns
    tables = build_state_tables(area_map, lambda_intra, patterns)
    K = tables.per_area
    states = [
        d.area * K + d.corner * len(patterns) + d.pattern for d in schedule.decisions
    ]
    n = len(states)
    cur_cost = _chain_cost(states, tables, lambda_intra, closed)

    for _ in range(max_passes):
        best_move = None
        best_cost = cur_cost
        for i in range(n - 1):
            for j in range(i + 1, n):
                trial = states[:i] + states[i : j + 1][::-1] + states[j + 1 :]
                adjacent = (j - i) == 1 or (closed and i == 0 and j == n - 1)
                if adjacent and i != j:
                    area_i = int(tables.area_of[trial[i]])
                    area_j = int(tables.area_of[trial[j]])
                    sl_i = tables.states_of(area_i)
                    sl_j = tables.states_of(area_j)
                    for si in range(sl_i.start, sl_i.stop):
                        for sj in range(sl_j.start, sl_j.stop):
                            cand = trial.copy()
                            cand[i], cand[j] = si, sj
                            c = _chain_cost(cand, tables, lambda_intra, closed)
                            if c < best_cost - 1e-12:
                                best_cost, best_move = c, cand
                else:
                    trial[i] = _best_state_at(trial, i, tables, lambda_intra, closed)
                    trial[j] = _best_state_at(trial, j, tables, lambda_intra, closed)
                    c = _chain_cost(trial, tables, lambda_intra, closed)
                    if c < best_cost - 1e-12:
                        best_cost, best_move = c, trial
        if best_move is None:
            break
        states, cur_cost = best_move, best_cost

    return build_schedule(
        area_map,
        _decisions_from_states(tables, states),
        lambda_intra=lambda_intra,
        closed=closed,
        patterns=patterns,
    )


# ---------------------------------------------------------------------------
# fixed-point matrices and the symmetric reduction


def build_edge_matrix(
    area_map,
    choices: Sequence[tuple[int, int]],
    patterns: Sequence[Pattern] | None = None,
) -> EdgeWeightMatrix:
    """Asymmetric inter-area matrix a_ij = dist(exit_i, entry_j), zero diagonal."""
    patterns = default_patterns() if patterns is None else patterns
    tables = build_state_tables(area_map, 0.0, patterns, fixed_choices=list(choices))
    m = tables.travel.copy()
    np.fill_diagonal(m, 0.0)
    return EdgeWeightMatrix(matrix=m)


def symmetrize(
    edge: EdgeWeightMatrix, round_to_int: bool = True, scale: float = 100.0
) -> EdgeWeightMatrix:
    """Node-doubling reduction to a symmetric matrix of twice the size.

    Entries are scaled (x100 by default) and optionally rounded; each city
    gains a ghost node linked to it by -M_hat (M_hat exceeds any tour), and
    ghost->real entries carry the original directed costs. Same-type pairs
    get a large forbidden weight. Optimal symmetric tours then alternate
    real/ghost and map one-to-one onto optimal asymmetric tours with cost
    shifted by exactly n * M_hat.

    Raises:
        MatrixOverflow: if scaled entries leave exact-integer float range.
    """
    if edge.symmetrized:
        raise ValueError("matrix is already symmetrized")
    C = edge.matrix * scale
    if round_to_int:
        C = np.round(C)
    if np.any(np.abs(C) > 2.0**53):
        raise MatrixOverflow("scaled entries exceed exact integer range")
    n = C.shape[0]
    m_hat = float(C.sum()) + 1.0
    if round_to_int:
        m_hat = float(np.ceil(m_hat))
    forbidden = (2.0 * n + 2.0) * m_hat

    linked = C.copy()
    np.fill_diagonal(linked, -m_hat)
    B = np.full((2 * n, 2 * n), forbidden)
    np.fill_diagonal(B, 0.0)
    B[n:, :n] = linked
    B[:n, n:] = linked.T
    return EdgeWeightMatrix(
        matrix=B,
        scaled=True,
        symmetrized=True,
        scale_factor=scale,
        big_m=m_hat,
        forbidden=forbidden,
    )


def held_karp_tsp(matrix: np.ndarray, closed: bool = True) -> tuple[list[int], float]:
    """Exact tour on an arbitrary square cost matrix (negatives allowed).

    Closed tours fix node 0 first; open paths may start anywhere. Returns
    (visit order, cost) with ties broken toward lower node indices.

    Raises:
        TooLarge: above 16 nodes.
    """
    C = np.asarray(matrix, dtype=np.float64)
    m = C.shape[0]
    if m > HELD_KARP_MAX_NODES:
        raise TooLarge(f"held_karp_tsp handles <= {HELD_KARP_MAX_NODES} nodes, got {m}")
    if m == 1:
        return [0], 0.0

    INF = np.inf
    dp = np.full((1 << m, m), INF)
    if closed:
        dp[1, 0] = 0.0
        masks = _masks_by_popcount(m, require_bit0=True)
    else:
        for v in range(m):
            dp[1 << v, v] = 0.0
        masks = _masks_by_popcount(m, require_bit0=False)

    full = (1 << m) - 1
    for mask in masks:
        if mask == full:
            continue
        row = dp[mask]
        if not np.isfinite(row).any():
            continue
        best_to = (row[:, None] + C).min(axis=0)  # (m,)
        for v in range(m):
            if mask & (1 << v):
                continue
            nxt = mask | (1 << v)
            if best_to[v] < dp[nxt, v]:
                dp[nxt, v] = best_to[v]

    if closed:
        totals = dp[full] + C[:, 0]
    else:
        totals = dp[full]
    last = int(np.argmin(totals))
    cost = float(totals[last])

    order = [last]
    mask = full
    v = last
    while True:
        prev_mask = mask & ~(1 << v)
        if prev_mask == 0:
            break
        cand = dp[prev_mask] + C[:, v]
        matches = np.flatnonzero(cand == dp[mask, v])
        if matches.size == 0:
            matches = np.array([int(np.argmin(cand))])
        v = int(matches[0])
        order.append(v)
        mask = prev_mask
    order.reverse()
    return order, cost


def brute_force_tsp(matrix: np.ndarray, closed: bool = True) -> tuple[list[int], float]:
    """Literal permutation enumeration; the independent check for small n.

    Raises:
        TooLarge: above 8 nodes.
    """
    C = np.asarray(matrix, dtype=np.float64)
    m = C.shape[0]
    if m > 8:
        raise TooLarge(f"brute_force_tsp handles <= 8 nodes, got {m}")
    if closed:
        perms = [(0,) + rest for rest in itertools.permutations(range(1, m))]
    else:
        perms = list(itertools.permutations(range(m)))
    best_order, best_cost = None, np.inf
    for perm in perms:
        c = sum(C[perm[t], perm[t + 1]] for t in range(m - 1))
        if closed:
            c += C[perm[-1], perm[0]]
        if c < best_cost:
            best_cost, best_order = float(c), list(perm)
    return best_order, best_cost


def extract_asymmetric_order(sym_order: Sequence[int], n: int) -> list[int]:
    """Read the real-city visit order out of a symmetric doubled tour.

    The tour alternates real and ghost nodes; the direction in which city
    0 is immediately followed by its own ghost is the forward direction of
    the original asymmetric tour.
    """
    order = list(sym_order)
    m = len(order)
    pos = order.index(0)
    nxt = order[(pos + 1) % m]
    prv = order[(pos - 1) % m]
    if nxt == n:
        step = 1
    elif prv == n:
        step = -1
    else:
        raise ValueError("tour does not pair city 0 with its ghost")
    result = []
    for k in range(m):
        node = order[(pos + step * k) % m]
        if node < n:
            result.append(node)
    return result


# ---------------------------------------------------------------------------
# TSPLIB-style explicit matrix text


def to_tsplib(edge: EdgeWeightMatrix, name: str = "coversched") -> str:
    """EXPLICIT FULL_MATRIX text for interop with external TSP solvers."""
    m = edge.matrix
    if not np.allclose(m, np.round(m)):
        raise ValueError("TSPLIB export requires an integral matrix")
    lines = [
        f"NAME: {name}",
        "TYPE: TSP",
        f"COMMENT: scale={edge.scale_factor} symmetrized={edge.symmetrized}",
        f"DIMENSION: {edge.n}",
        "EDGE_WEIGHT_TYPE: EXPLICIT",
        "EDGE_WEIGHT_FORMAT: FULL_MATRIX",
        "EDGE_WEIGHT_SECTION",
    ]
    for row in np.round(m).astype(np.int64):
        lines.append(" ".join(str(int(v)) for v in row))
    lines.append("EOF")
    return "\n".join(lines) + "\n"


def parse_tsplib(text: str) -> EdgeWeightMatrix:
    """Parse the FULL_MATRIX subset emitted by to_tsplib."""
    dim = None
    rows: list[list[int]] = []
    in_section = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line == "EOF":
            in_section = False
            continue
        if in_section:
            try:
                rows.append([int(tok) for tok in line.split()])
            except ValueError:
                raise ParseError(lineno, f"bad matrix row: {line!r}") from None
            continue
        if line.startswith("DIMENSION"):
            try:
                dim = int(line.split(":")[1])
            except (IndexError, ValueError):
                raise ParseError(lineno, "unreadable DIMENSION") from None
        elif line == "EDGE_WEIGHT_SECTION":
            in_section = True
    if dim is None:
        raise ParseError(0, "missing DIMENSION header")
    if len(rows) != dim or any(len(r) != dim for r in rows):
        raise ParseError(0, f"matrix is not {dim}x{dim}")
    mat = np.array(rows, dtype=np.float64)
    return EdgeWeightMatrix(matrix=mat, scaled=True, symmetrized=bool(np.array_equal(mat, mat.T)))
