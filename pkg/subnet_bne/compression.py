"""
compression.py - Sparsified communication between agents

Deterministic cyclic sparsification, per-entry mixing matrices and the four-step
communication round (strategy packets within a subnetwork, estimate packets across).
Every agent of a subnetwork uses the same sparsifier, so at each tick the entries of a
side split into a transmitted group, mixed by the frame's matrices, and a silent group
whose matrices are the identity.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from subnet_bne.errors import DomainError, ProtocolError
from subnet_bne.game import check_side, other
from subnet_bne.network import Edge, Frame, NetworkSchedule, covered, strongly_connected

log = logging.getLogger(__name__)

BYTES_PER_ENTRY = 12  # 8-byte value plus 4-byte index
PACKET_KINDS = ("sigma", "surplus", "estimate")
B_ORIENTATIONS = ("column", "literal")


def sparse_indices(t: int, d: int, dim: int, R0: int) -> NDArray:
    """1-based indices selected at time t (t >= 1), ascending"""
    if not 1 <= d <= dim:
        raise DomainError(d, (1, dim), what="d")
    if t < 1 or R0 < 1:
        raise DomainError((t, R0), ("t >= 1", "R0 >= 1"), what="sparsifier time")
    q = (t - 1) // R0
    return np.sort((q * d + np.arange(d)) % dim) + 1


@dataclass(frozen=True)
class SparsePacket:
    indices: NDArray  # 1-based, strictly increasing
    values: NDArray
    origin: Tuple[int, int]  # (side, agent), agent 1-based
    tick: int
    kind: str = "sigma"
    receiver: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.kind not in PACKET_KINDS:
            raise DomainError(self.kind, PACKET_KINDS, what="packet kind")
        if len(self.indices) != len(self.values):
            raise ProtocolError(f"packet from {self.origin} has {len(self.indices)} indices for {len(self.values)} values")

    @property
    def entries(self) -> List[Tuple[int, float]]:
        return [(int(k), float(v)) for k, v in zip(self.indices, self.values)]

    @property
    def payload_bytes(self) -> int:
        return BYTES_PER_ENTRY * len(self.indices)

    def carries(self, k: int) -> bool:
        position = np.searchsorted(self.indices, k)
        return bool(position < len(self.indices) and self.indices[position] == k)

    def value(self, k: int) -> float:
        return float(self.values[np.searchsorted(self.indices, k)])

    def trace_line(self) -> str:
        receiver = self.receiver[1] if self.receiver else 0
        first = int(self.indices[0]) if len(self.indices) else 0
        return f"{self.tick}, {self.origin[0]}, {self.origin[1]}, {receiver}, {len(self.indices)}, {first}"


def sparsify(x: NDArray, t: int, d: int, R0: int, origin: Tuple[int, int] = (1, 1), kind: str = "sigma", receiver=None) -> SparsePacket:
    x = np.asarray(x, dtype=float).reshape(-1)
    indices = sparse_indices(t, d, x.size, R0)
    return SparsePacket(indices, x[indices - 1].copy(), origin, t, kind, receiver)


def effective_windows(N: Sequence[int], m: Sequence[int], d: Sequence[int], R0: int, S0: int) -> Tuple[int, int]:
    """R = max_l R0 ceil(N_l m_l / d_l) and S = max_l S0 R0 ceil(N_l m_l / d_l)"""
    values = (*N, *m, *d, R0, S0)
    if any(v < 1 for v in values):
        raise DomainError(values, ("all >= 1",), what="window inputs")
    cycles = [math.ceil(N[s] * m[s] / d[s]) for s in range(2)]
    return max(R0 * c for c in cycles), max(S0 * R0 * c for c in cycles)


def estimation_bounds(Nm: int, eps0: float, eps1: float, S: int) -> Tuple[float, float]:
    """Within- and cross-subnetwork estimation error bounds after the warm-up window"""
    root = math.sqrt(Nm)
    return root * eps0, Nm * eps0 + S * root * eps1


@dataclass(frozen=True)
class MixingMatrices:
    A: NDArray  # n_l x n_l, row-stochastic
    B: NDArray  # n_l x n_l
    C: NDArray  # n_l x n_{3-l}, rows average received cross entries or are zero

    def stacked(self) -> NDArray:
        """[[A, 0], [I - A, B]]"""
        n = self.A.shape[0]
        return np.block([[self.A, np.zeros((n, n))], [np.eye(n) - self.A, self.B]])

    @classmethod
    def silent(cls, n: int, n_rival: int) -> "MixingMatrices":
        return cls(np.eye(n), np.eye(n), np.zeros((n, n_rival)))


def _average_rows(rows: int, cols: int, members: Iterable[Tuple[int, int]]) -> NDArray:
    table = np.zeros((rows, cols))
    for i, j in members:
        table[i, j] = 1.0
    counts = table.sum(axis=1, keepdims=True)
    return np.divide(table, counts, out=np.zeros_like(table), where=counts > 0)


def mixing_from_edges(
    n: int, n_rival: int, within: Iterable[Edge], cross: Iterable[Edge], orientation: str = "column"
) -> MixingMatrices:
    """Matrices for one entry given the edges that delivered it (sender, receiver)"""
    if orientation not in B_ORIENTATIONS:
        raise DomainError(orientation, B_ORIENTATIONS, what="B orientation")
    within = list(within)
    self_loops = [(i, i) for i in range(n)]
    A = _average_rows(n, n, [(r, s) for s, r in within] + self_loops)
    if orientation == "column":
        B = _average_rows(n, n, [(s, r) for s, r in within] + self_loops).T
    else:
        B = _average_rows(n, n, list(within) + self_loops)
    C = _average_rows(n, n_rival, [(r, s) for s, r in cross])
    return MixingMatrices(A, B, C)


def build_mixing(
    frame: Frame, packets: Sequence[SparsePacket], side: int, k: int, n: Tuple[int, int], orientation: str = "column"
) -> MixingMatrices:
    """Matrices of entry k (1-based) on `side` from the packets delivered this tick.

    Strategy packets on within edges of `side` drive A and B; estimate packets on cross
    edges into `side` drive C (k then indexes the rival's vector). `n` is (n1, n2).
    """
    s = check_side(side)
    within_edges, cross_edges = frame.within(side), frame.cross_into(side)
    within, cross = [], []
    for packet in packets:
        if packet.receiver is None:
            raise ProtocolError(f"packet from {packet.origin} has no receiver")
        sender, receiver = packet.origin[1] - 1, packet.receiver[1] - 1
        if packet.receiver[0] != side:
            continue
        if packet.kind == "sigma" and packet.origin[0] == side:
            if (sender, receiver) not in within_edges:
                raise ProtocolError(f"side {side} strategy packet {sender + 1}->{receiver + 1} has no edge in this frame")
            if packet.carries(k):
                within.append((sender, receiver))
        elif packet.kind == "estimate" and packet.origin[0] == other(side):
            if (sender, receiver) not in cross_edges:
                raise ProtocolError(f"estimate packet {sender + 1}->{receiver + 1} into side {side} has no edge in this frame")
            if packet.carries(k):
                cross.append((sender, receiver))
    return mixing_from_edges(n[s], n[1 - s], within, cross, orientation)


@dataclass
class SubnetworkState:
    """Stacked agent states of one side; row i is agent i+1"""

    side: int
    sigma: NDArray
    surplus: NDArray
    sigma_hat: NDArray
    zeta_hat: NDArray

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def dim(self) -> int:
        return self.sigma.shape[1]

    def copy(self) -> "SubnetworkState":
        return SubnetworkState(self.side, self.sigma.copy(), self.surplus.copy(), self.sigma_hat.copy(), self.zeta_hat.copy())


@dataclass
class RoundResult:
    transmitted: Tuple[NDArray, NDArray]  # 0-based entry indices per side
    mixing: Tuple[MixingMatrices, MixingMatrices]  # matrices of the transmitted group
    bytes: int
    messages: Tuple[int, int]  # per side, counted by sender
    packets: List[SparsePacket] = field(default_factory=list)

    def matrices(self, side: int, k: int) -> MixingMatrices:
        """Matrices of entry k (1-based) on `side`"""
        s = check_side(side)
        if k - 1 in set(self.transmitted[s].tolist()):
            return self.mixing[s]
        n, n_rival = self.mixing[s].C.shape
        return MixingMatrices.silent(n, n_rival)


class MixingCache:
    """Frame matrices per (frame index, side) for the transmitted group"""

    def __init__(self, sched: NetworkSchedule, orientation: str = "column"):
        self.sched = sched
        self.orientation = orientation
        self._cache: Dict[Tuple[int, int], MixingMatrices] = {}

    def get(self, t: int, side: int) -> MixingMatrices:
        key = (t % self.sched.period, side)
        if key not in self._cache:
            frame = self.sched.frame_at(t)
            s = check_side(side)
            self._cache[key] = mixing_from_edges(
                self.sched.n[s], self.sched.n[1 - s], frame.within(side), frame.cross_into(side), self.orientation
            )
        return self._cache[key]


def _packets(frame: Frame, states, t: int, indices: Tuple[NDArray, NDArray]) -> List[SparsePacket]:
    packets = []
    for state in states:
        side = state.side
        k = indices[side - 1]
        for sender, receiver in sorted(frame.within(side)):
            for kind, values in (("sigma", state.sigma), ("surplus", state.surplus)):
                packets.append(SparsePacket(k + 1, values[sender, k].copy(), (side, sender + 1), t, kind, (side, receiver + 1)))
        for sender, receiver in sorted(frame.cross_into(other(side))):
            packets.append(
                SparsePacket(k + 1, state.sigma_hat[sender, k].copy(), (side, sender + 1), t, "estimate", (other(side), receiver + 1))
            )
    return packets


def message_counts(frame: Frame) -> Tuple[int, int]:
    """Packets sent by each side on one frame"""
    return tuple(2 * len(frame.within(side)) + len(frame.cross_into(other(side))) for side in (1, 2))


def communication_round(
    states: Tuple[SubnetworkState, SubnetworkState],
    frame: Frame,
    t: int,
    d: Tuple[int, int],
    R0: int,
    mixing: Optional[Tuple[MixingMatrices, MixingMatrices]] = None,
    orientation: str = "column",
    keep_packets: bool = False,
) -> RoundResult:
    """Steps 1-4 of the scheme at engine tick t (sparsifier time t+1); updates the estimates in place"""
    indices = tuple(sparse_indices(t + 1, d[s], states[s].dim, R0) - 1 for s in range(2))
    if mixing is None:
        mixing = tuple(
            mixing_from_edges(states[s].n, states[1 - s].n, frame.within(s + 1), frame.cross_into(s + 1), orientation)
            for s in range(2)
        )

    # steps 1-2: strategy entries averaged over the in-neighbors that sent them
    for s, state in enumerate(states):
        k = indices[s]
        state.sigma_hat[:] = state.sigma
        state.sigma_hat[:, k] = mixing[s].A @ state.sigma[:, k]

    # steps 3-4: estimate entries cross over; silent rows hold their last value
    for s, state in enumerate(states):
        rival = states[1 - s]
        k = indices[1 - s]
        C = mixing[s].C
        heard = np.flatnonzero(C.sum(axis=1) > 0)
        if heard.size:
            state.zeta_hat[np.ix_(heard, k)] = C[heard] @ rival.sigma_hat[:, k]

    messages = message_counts(frame)
    total = sum(BYTES_PER_ENTRY * d[s] * messages[s] for s in range(2))
    packets = _packets(frame, states, t, indices) if keep_packets else []
    return RoundResult(indices, mixing, total, messages, packets)


# Per-entry graph checks ---------------------------------------------------------------


def _sparsifier_period(dim: int, d: int, R0: int) -> int:
    return R0 * dim // math.gcd(dim, d)


def verify_entry_connectivity(sched: NetworkSchedule, side: int, dim: int, d: int, R: int) -> bool:
    """Union of the entry-k graphs over any R consecutive ticks is strongly connected, for every k"""
    s = check_side(side)
    n = sched.n[s]
    span = math.lcm(sched.period, _sparsifier_period(dim, d, sched.R0))
    sent = [set(sparse_indices(t + 1, d, dim, sched.R0).tolist()) for t in range(span + R)]
    for start in range(span):
        ticks = range(start, start + R)
        for k in range(1, dim + 1):
            edges = (sched.frame_at(t).within(side) for t in ticks if k in sent[t])
            if not strongly_connected(n, edges):
                log.debug("side %d entry %d not connected in window starting at tick %d", side, k, start)
                return False
    return True


def verify_entry_coverage(sched: NetworkSchedule, side: int, rival_dim: int, rival_d: int, S: int) -> bool:
    """Every agent of `side` receives each rival entry within any S consecutive ticks"""
    s = check_side(side)
    n = sched.n[s]
    span = math.lcm(sched.period, _sparsifier_period(rival_dim, rival_d, sched.R0))
    sent = [set(sparse_indices(t + 1, rival_d, rival_dim, sched.R0).tolist()) for t in range(span + S)]
    for start in range(span):
        ticks = range(start, start + S)
        for k in range(1, rival_dim + 1):
            if not covered(n, (sched.frame_at(t).cross_into(side) for t in ticks if k in sent[t])):
                return False
    return True
