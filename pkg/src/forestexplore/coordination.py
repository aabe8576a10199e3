"""Decentralized multi-robot layer: range-limited exchange, map sync, and the
team cost that shapes target selection.

Communication is strictly pairwise within comm_range — no relaying, no
latency, no loss. While a pair stays connected they trade incremental map
deltas; after a gap they re-synchronize with a full merge in both directions.
The team cost combines a leader-follower attraction (an Explorer ignores its
Collector followers; everyone else is pulled toward peers to preserve
connectivity) with a short-range repulsion on both current positions and
chosen goals that pushs agents toward splitting the map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid_map import GridMismatchError
from .planner import Mode

# The first repulsion branch is constant below d_c and does not meet the
# middle branch at d_c — the plateau is intentionally kept verbatim, the
# discontinuity included.


@dataclass(frozen=True)
class CoordinationParams:
    comm_range: float = 50.0
    k_a: float = 0.05          # attraction slope, per meter
    k_r: float = 1.0           # repulsion scale
    d_0: float = 5.0           # repulsion outer radius, meters
    d_c: float = 2.0           # repulsion plateau radius, meters
    w_f: float = 1.0           # team-cost weight as seen by the planner
    sync_period: float = 1.0   # seconds between exchange barriers
    verbatim_attraction: bool = False  # evaluate attraction at x_R instead of x_c

    def __post_init__(self):
        if self.comm_range <= 0:
            raise ValueError("comm_range must be positive")
        if not self.d_c < self.d_0:
            raise ValueError(f"d_c must be < d_0, got {self.d_c} >= {self.d_0}")
        if self.k_a < 0 or self.k_r < 0:
            raise ValueError("gains must be non-negative")


@dataclass
class PeerInfo:
    id: int
    position: tuple[float, float, float]
    mode: Mode
    goal: tuple[float, float, float] | None
    last_seen: float
    map_revision_seen: int = -1


@dataclass
class TeamContext:
    self_id: int
    peers: list[PeerInfo] = field(default_factory=list)


def connectivity(positions: dict[int, np.ndarray], comm_range: float
                 ) -> set[tuple[int, int]]:
    """All pairs (i, k), i < k, within comm_range of each other."""
    ids = sorted(positions)
    out = set()
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, k = ids[a], ids[b]
            d = float(np.linalg.norm(np.asarray(positions[i], dtype=float)
                                     - np.asarray(positions[k], dtype=float)))
            if d <= comm_range:
                out.add((i, k))
    return out


def indicator(mode_i: Mode, mode_k: Mode) -> int:
    """0 iff self is an Explorer looking at a Collector peer (the leader
    ignores its follower); 1 in every other combination."""
    return 0 if (mode_i == Mode.EXPLORER and mode_k == Mode.COLLECTOR) else 1


def attraction_cost(eval_point, self_mode: Mode, peers: list[PeerInfo],
                    k_a: float) -> float:
    """Sum over peers of indicator * 0.5 * k_a * distance(eval_point, peer)."""
    total = 0.0
    for p in peers:
        if indicator(self_mode, p.mode) == 0:
            continue
        dx = eval_point[0] - p.position[0]
        dy = eval_point[1] - p.position[1]
        dz = eval_point[2] - p.position[2]
        total += 0.5 * k_a * math.sqrt(dx * dx + dy * dy + dz * dz)
    return total


def repulsion_pair(d_ab: float, k_r: float, d_0: float, d_c: float) -> float:
    """Piecewise repulsion: constant plateau below d_c, quadratic falloff to
    zero at d_0, zero beyond."""
    if d_ab <= d_c:
        return k_r * (d_c - d_0) ** 2 * (d_c * d_0) / (d_0 - d_c)
    if d_ab <= d_0:
        return k_r * (d_ab - d_0) ** 2
    return 0.0


def team_cost(candidate, robot, team: TeamContext,
              params: CoordinationParams) -> float:
    """Full team term for one candidate viewpoint.

    Attraction is evaluated at the candidate position by default (so the
    term can actually steer the choice); set verbatim_attraction to price it
    at the robot's current position instead. Repulsion adds a position-pair
    and a goal-pair term per peer; peers with no known goal contribute the
    position term only.
    """
    if not team.peers:
        return 0.0
    cand_pos = candidate.position if hasattr(candidate, "position") else candidate
    eval_point = robot.position if params.verbatim_attraction else cand_pos
    cost = attraction_cost(eval_point, robot.mode, team.peers, params.k_a)
    for p in team.peers:
        d_pos = math.dist(tuple(robot.position), tuple(p.position))
        cost += repulsion_pair(d_pos, params.k_r, params.d_0, params.d_c)
        if p.goal is not None:
            d_goal = math.dist(tuple(cand_pos), tuple(p.goal))
            cost += repulsion_pair(d_goal, params.k_r, params.d_0, params.d_c)
    return cost


def exchange_and_sync(agents: list, params: CoordinationParams, now: float,
                      message_log: list | None = None) -> set[tuple[int, int]]:
    """One synchronous exchange barrier.

    Each agent in `agents` must expose .id, .state (.position/.mode), .goal
    (a 3-tuple or None), .grid, .peers (dict id -> PeerInfo), and .connected
    (set of ids from the previous barrier). For every connected pair the
    agents swap odometry/mode/goal and map data: incremental deltas while
    continuously connected, full-map merges on reconnection. All outgoing map
    data is snapshotted before anything is applied, so within one barrier
    information travels exactly one hop, as if all messages were sent
    simultaneously. Returns the connected pair set.
    """
    by_id = {a.id: a for a in agents}
    positions = {a.id: a.state.position for a in agents}
    pairs = connectivity(positions, params.comm_range)

    # phase 1: snapshot outgoing payloads from pre-barrier state
    sends = []  # (src, dst, kind, payload)
    for i, k in sorted(pairs):
        for src, dst in ((i, k), (k, i)):
            a, b = by_id[src], by_id[dst]
            reconnect = src not in b.connected
            if reconnect:
                sends.append((src, dst, "full_map",
                              {"cells": a.grid.cells.copy(),
                               "revision": a.grid.revision}))
            else:
                seen = b.peers[src].map_revision_seen
                try:
                    idx, states = a.grid.changes_since(seen)
                    sends.append((src, dst, "map_delta",
                                  {"idx": idx, "states": states,
                                   "revision": a.grid.revision}))
                except GridMismatchError:
                    sends.append((src, dst, "full_map",
                                  {"cells": a.grid.cells.copy(),
                                   "revision": a.grid.revision}))
            sends.append((src, dst, "odom", {"position": tuple(a.state.position)}))
            sends.append((src, dst, "mode", {"mode": a.state.mode.value}))
            sends.append((src, dst, "goal", {"goal": a.goal}))

    # phase 2: apply everything
    for src, dst, kind, payload in sends:
        b = by_id[dst]
        if kind == "full_map":
            b.apply_map_update(*_merge_full(b.grid, payload["cells"]))
            if message_log is not None:
                message_log.append({"t": now, "from": src, "to": dst,
                                    "kind": "full_map",
                                    "payload": {"revision": payload["revision"]}})
        elif kind == "map_delta":
            b.apply_map_update(payload["idx"], payload["states"])
            if message_log is not None:
                message_log.append({"t": now, "from": src, "to": dst,
                                    "kind": "map_delta",
                                    "payload": {"revision": payload["revision"],
                                                "n_cells": int(len(payload["idx"]))}})
        else:
            if message_log is not None:
                message_log.append({"t": now, "from": src, "to": dst,
                                    "kind": kind, "payload": _loggable(payload)})
        if kind in ("full_map", "map_delta"):
            peer = b.peers.get(src)
            a = by_id[src]
            info = PeerInfo(id=src, position=tuple(a.state.position),
                            mode=a.state.mode, goal=a.goal, last_seen=now,
                            map_revision_seen=payload["revision"])
            if peer is not None:
                info.map_revision_seen = max(peer.map_revision_seen,
                                             payload["revision"])
            b.peers[src] = info

    # phase 3: update connectivity memory and prune change logs
    for a in agents:
        a.connected = {k for i, k in pairs if i == a.id} | \
                      {i for i, k in pairs if k == a.id}
        if not a.connected:
            a.grid.prune_log(a.grid.revision)
            continue
        seen_by_peers = [by_id[p].peers[a.id].map_revision_seen
                         for p in a.connected if a.id in by_id[p].peers]
        if seen_by_peers:
            a.grid.prune_log(min(seen_by_peers))
    return pairs


def _merge_full(grid, cells: np.ndarray):
    mask = cells > grid.cells
    idx = np.flatnonzero(mask.reshape(-1)).astype(np.int64)
    return idx, cells.reshape(-1)[idx]


def _loggable(payload: dict) -> dict:
    out = {}
    for k, v in payload.items():
        if isinstance(v, tuple):
            out[k] = [float(x) for x in v]
        elif v is None or isinstance(v, (str, int, float, bool)):
            out[k] = v
        else:
            out[k] = str(v)
    return out


def team_context(agent, now: float) -> TeamContext:
    """Context of currently-connected peers only."""
    return TeamContext(self_id=agent.id,
                       peers=[agent.peers[i] for i in sorted(agent.connected)
                              if i in agent.peers])
