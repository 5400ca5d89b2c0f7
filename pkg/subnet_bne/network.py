"""
network.py - Time-varying digraph schedules for the two subnetworks

Edges are (sender, receiver) pairs, 0-based in memory and 1-based on the wire. Self-loops
of the within-subnetwork graphs are implicit and never stored.
"""

import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Tuple

import networkx as nx
import numpy as np

from subnet_bne.errors import DomainError
from subnet_bne.game import check_side

log = logging.getLogger(__name__)

Edge = Tuple[int, int]
EDGE_KINDS = ("within_1", "within_2", "cross_12", "cross_21")


@dataclass(frozen=True)
class Frame:
    within_1: FrozenSet[Edge] = frozenset()
    within_2: FrozenSet[Edge] = frozenset()
    cross_12: FrozenSet[Edge] = frozenset()  # sender on side 1, receiver on side 2
    cross_21: FrozenSet[Edge] = frozenset()

    def within(self, side: int) -> FrozenSet[Edge]:
        return (self.within_1, self.within_2)[check_side(side)]

    def cross_into(self, side: int) -> FrozenSet[Edge]:
        """Cross edges whose receiver is on `side`"""
        return (self.cross_21, self.cross_12)[check_side(side)]


@dataclass(frozen=True)
class NetworkSchedule:
    n: Tuple[int, int]
    frames: Tuple[Frame, ...]
    R0: int = 2
    S0: int = 2

    def __post_init__(self):
        if not self.frames:
            raise DomainError(0, (1, "inf"), what="period")
        if self.R0 < 1 or self.S0 < 1:
            raise DomainError((self.R0, self.S0), ("R0 >= 1", "S0 >= 1"), what="windows")
        limits = {
            "within_1": (self.n[0], self.n[0]),
            "within_2": (self.n[1], self.n[1]),
            "cross_12": (self.n[0], self.n[1]),
            "cross_21": (self.n[1], self.n[0]),
        }
        for f, frame in enumerate(self.frames):
            for kind, (n_send, n_recv) in limits.items():
                for sender, receiver in getattr(frame, kind):
                    if not (0 <= sender < n_send and 0 <= receiver < n_recv):
                        raise DomainError((sender + 1, receiver + 1), (n_send, n_recv), what=f"frame {f} {kind} edge")
                    if kind.startswith("within") and sender == receiver:
                        raise DomainError((sender + 1, receiver + 1), (), what=f"frame {f} {kind} self-loop")

    @property
    def period(self) -> int:
        return len(self.frames)

    def frame_at(self, t: int) -> Frame:
        return self.frames[t % self.period]

    def window(self, start: int, length: int) -> List[Frame]:
        return [self.frame_at(start + r) for r in range(length)]

    def to_dict(self) -> Dict:
        return {
            "kind": "frames",
            "R0": self.R0,
            "S0": self.S0,
            "frames": [
                {kind: [[s + 1, r + 1] for s, r in sorted(getattr(frame, kind))] for kind in EDGE_KINDS}
                for frame in self.frames
            ],
        }

    @classmethod
    def from_dict(cls, n: Tuple[int, int], data: Dict) -> "NetworkSchedule":
        frames = []
        for frame in data["frames"]:
            edges = {kind: frozenset((int(s) - 1, int(r) - 1) for s, r in frame.get(kind, [])) for kind in EDGE_KINDS}
            frames.append(Frame(**edges))
        return cls(tuple(n), tuple(frames), int(data.get("R0", 2)), int(data.get("S0", 2)))


def union_graph(n: int, edge_sets: Iterable[Iterable[Edge]]) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(range(n))
    for edges in edge_sets:
        graph.add_edges_from(edges)
    return graph


def strongly_connected(n: int, edge_sets: Iterable[Iterable[Edge]]) -> bool:
    return n == 1 or nx.is_strongly_connected(union_graph(n, edge_sets))


def verify_joint_connectivity(sched: NetworkSchedule, side: int, R0: int) -> bool:
    """Every window of R0 consecutive frames has a strongly connected within-union"""
    n = sched.n[check_side(side)]
    for start in range(sched.period):
        if not strongly_connected(n, (f.within(side) for f in sched.window(start, R0))):
            log.debug("side %d: window starting at frame %d is not strongly connected", side, start)
            return False
    return True


def covered(receivers: int, edge_sets: Iterable[Iterable[Edge]]) -> bool:
    reached = {r for edges in edge_sets for _, r in edges}
    return len(reached) == receivers


def cross_coverage(sched: NetworkSchedule, side: int, S0: int) -> bool:
    """Every agent of `side` hears from the rival side within every S0-frame window"""
    n = sched.n[check_side(side)]
    return all(covered(n, (f.cross_into(side) for f in sched.window(start, S0))) for start in range(sched.period))


def _ring_frames(n: int, rng: np.random.Generator) -> Tuple[FrozenSet[Edge], FrozenSet[Edge]]:
    """A permuted directed ring split across two frames, plus reverse chords"""
    frames: Tuple[set, set] = (set(), set())
    if n == 1:
        return frozenset(), frozenset()
    order = [int(v) for v in rng.permutation(n)]
    for k in range(n):
        sender, receiver = order[k], order[(k + 1) % n]
        frames[k % 2].add((sender, receiver))
        if k % 3 == 0 and n > 2:
            frames[(k + 1) % 2].add((receiver, sender))
    return frozenset(frames[0]), frozenset(frames[1])


def paper_style_schedule(n1: int, n2: int, seed: int = 0, R0: int = 2, S0: int = 2) -> NetworkSchedule:
    """Period-2 schedule: rings alternating between frames, rotating cross edges"""
    for value in (n1, n2):
        if value < 1:
            raise DomainError(value, (1, "inf"), what="agent count")
    if R0 < 2:
        raise DomainError(R0, (2, "inf"), what="R0 of a two-frame ring schedule")
    rng = np.random.default_rng(seed)
    within_1, within_2 = _ring_frames(n1, rng), _ring_frames(n2, rng)
    frames = []
    for f in range(2):
        cross_12 = frozenset(((r + f) % n1, r) for r in range(n2))
        cross_21 = frozenset(((r + f) % n2, r) for r in range(n1))
        frames.append(Frame(within_1[f], within_2[f], cross_12, cross_21))
    sched = NetworkSchedule((n1, n2), tuple(frames), R0, S0)
    log.debug("generated schedule for n=(%d, %d) with seed %d", n1, n2, seed)
    return sched


def static_schedule(n1: int, n2: int, complete: bool = True) -> NetworkSchedule:
    """One frame with complete within graphs and all cross edges"""

    def full(n: int) -> FrozenSet[Edge]:
        return frozenset((s, r) for s in range(n) for r in range(n) if s != r) if complete else frozenset()

    cross_12 = frozenset((s, r) for s in range(n1) for r in range(n2))
    cross_21 = frozenset((s, r) for s in range(n2) for r in range(n1))
    return NetworkSchedule((n1, n2), (Frame(full(n1), full(n2), cross_12, cross_21),), R0=1, S0=1)


def edge_counts(frame: Frame) -> Dict[str, int]:
    return {kind: len(getattr(frame, kind)) for kind in EDGE_KINDS}


def validate_schedule(sched: NetworkSchedule) -> Dict[str, bool]:
    checks = {}
    for side in (1, 2):
        checks[f"side{side}_joint_connectivity"] = verify_joint_connectivity(sched, side, sched.R0)
        checks[f"side{side}_cross_coverage"] = cross_coverage(sched, side, sched.S0)
    return checks

