"""
graph.py - Directed Network Topology

Weighted digraph of followers and leaders and everything derived from it: the
follower Laplacian, the partition into independent strongly connected cells,
the rank identity, the pinning condition and the grounded matrix
M = L_F + sum_j B_oj together with its diagonal scaling certificate (Psi, eta).

Edge convention: a_ij > 0 means "follower i receives from follower j". In the
networkx view information flows j -> i, so the cells that must be pinned are
the condensation components with no incoming edges.

Internally vertices are 0-based: followers 0..m-1, leaders m..N-1. Scenario
files use the 1-based labels of the model description.
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .errors import CertificateError, GraphError, SingularMatrixError

# Singular values below this fraction of the largest count as zero.
RANK_TOLERANCE = 1e-9
_ZERO_EIG_TOL = 1e-9
_PSI_SEARCH_ITERATIONS = 200
_PSI_SEARCH_FACTOR = 1.5


def _check_roles(vertex_count: int, follower_count: int) -> None:
    if follower_count < 1:
        raise GraphError("at least one follower is required")
    if vertex_count <= follower_count:
        raise GraphError("at least one leader is required (N > m)")


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DirectedNetwork:
    """
    Weighted digraph with follower and leader roles.

    Attributes:
        vertex_count: N, total number of agents.
        follower_count: m, number of followers (the first m vertices).
        adjacency: m x m array, adjacency[i, j] = a_ij >= 0.
        coupling: m x (N - m) array, coupling[i, r] = b_i,(m+r) >= 0.
    """
    vertex_count: int
    follower_count: int
    adjacency: np.ndarray
    coupling: np.ndarray

    def __post_init__(self) -> None:
        m, n = self.follower_count, self.vertex_count
        _check_roles(n, m)
        adjacency = _frozen(self.adjacency)
        coupling = _frozen(self.coupling)
        if adjacency.shape != (m, m):
            raise GraphError(f"adjacency must be {m}x{m}, got {adjacency.shape}")
        if coupling.shape != (m, n - m):
            raise GraphError(f"coupling must be {m}x{n - m}, got {coupling.shape}")
        if np.any(adjacency < 0) or np.any(coupling < 0):
            raise GraphError("edge weights must be nonnegative")
        if np.any(np.diag(adjacency) != 0):
            raise GraphError("self-loops are not allowed (a_ii must be 0)")
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "coupling", coupling)

    @property
    def leader_count(self) -> int:
        return self.vertex_count - self.follower_count

    @classmethod
    def from_edges(
        cls,
        vertex_count: int,
        follower_count: int,
        edges: Iterable[Tuple[int, int, float]],
        couplings: Iterable[Tuple[int, int, float]],
    ) -> 'DirectedNetwork':
        """
        Builds a network from 1-based edge lists.

        Args:
            vertex_count: N.
            follower_count: m.
            edges: (from, to, weight) triples, "to receives from from".
            couplings: (follower, leader, weight) triples.
        """
        m = follower_count
        _check_roles(vertex_count, m)
        adjacency = np.zeros((m, m))
        coupling = np.zeros((m, vertex_count - m))
        for src, dst, weight in edges:
            if not (1 <= src <= m and 1 <= dst <= m):
                raise GraphError(f"follower edge ({src}, {dst}) references a non-follower vertex")
            if src == dst:
                raise GraphError(f"self-loop at vertex {src}")
            adjacency[dst - 1, src - 1] = weight
        for follower, leader, weight in couplings:
            if not 1 <= follower <= m:
                raise GraphError(f"coupling references follower {follower} outside 1..{m}")
            if not m < leader <= vertex_count:
                raise GraphError(f"coupling references leader {leader} outside {m + 1}..{vertex_count}")
            coupling[follower - 1, leader - m - 1] = weight
        return cls(vertex_count, follower_count, adjacency, coupling)

    def edges(self) -> List[Tuple[int, int, float]]:
        """1-based (from, to, weight) triples, row-major order."""
        rows, cols = np.nonzero(self.adjacency)
        return [(int(j) + 1, int(i) + 1, float(self.adjacency[i, j])) for i, j in zip(rows, cols)]

    def couplings(self) -> List[Tuple[int, int, float]]:
        """1-based (follower, leader, weight) triples."""
        rows, cols = np.nonzero(self.coupling)
        m = self.follower_count
        return [(int(i) + 1, int(r) + m + 1, float(self.coupling[i, r])) for i, r in zip(rows, cols)]


@dataclass(frozen=True)
class IsccPartition:
    """Independent strongly connected cells of the follower graph (0-based)."""
    cells: Tuple[Tuple[int, ...], ...]
    non_iscc: Tuple[int, ...]

    @property
    def cell_count(self) -> int:
        return len(self.cells)


@dataclass(frozen=True)
class GroundedMatrix:
    """M = L_F + sum_j B_oj with its diagonal certificate: Psi M + M^T Psi >= eta Psi."""
    M: np.ndarray
    psi: np.ndarray
    eta: float

    @property
    def Psi(self) -> np.ndarray:
        return np.diag(self.psi)


@dataclass(frozen=True)
class BlockForm:
    """Follower Laplacian permuted so the iSCC cells come first."""
    permutation: Tuple[int, ...]
    matrix: np.ndarray
    block_sizes: Tuple[int, ...]


def laplacian(net: DirectedNetwork) -> np.ndarray:
    """Follower Laplacian L_F = D - A with D the in-degree diagonal; rows sum to zero."""
    adjacency = np.array(net.adjacency)
    return np.diag(adjacency.sum(axis=1)) - adjacency


def follower_digraph(net: DirectedNetwork) -> nx.DiGraph:
    """networkx view of the follower subgraph, edge j -> i for every a_ij > 0."""
    graph = nx.DiGraph()
    graph.add_nodes_from(range(net.follower_count))
    rows, cols = np.nonzero(net.adjacency)
    graph.add_edges_from((int(j), int(i)) for i, j in zip(rows, cols))
    return graph


def is_weakly_connected(net: DirectedNetwork) -> bool:
    return nx.is_weakly_connected(follower_digraph(net))


def iscc_partition(net: DirectedNetwork) -> IsccPartition:
    """
    Partitions the followers into iSCC cells and the remainder.

    The cells are the source components of the SCC condensation: strongly
    connected and receiving nothing from outside. Cells are ordered by their
    smallest member so the result is deterministic.
    """
    condensed = nx.condensation(follower_digraph(net))
    cells = sorted(
        tuple(sorted(condensed.nodes[c]["members"]))
        for c in condensed.nodes
        if condensed.in_degree(c) == 0
    )
    in_cells = {v for cell in cells for v in cell}
    non_iscc = tuple(v for v in range(net.follower_count) if v not in in_cells)
    return IsccPartition(tuple(cells), non_iscc)


def numerical_rank(matrix: np.ndarray, tolerance: float = RANK_TOLERANCE) -> int:
    """Rank with a scale-invariant singular-value threshold."""
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular.size == 0 or singular[0] == 0.0:
        return 0
    return int(np.sum(singular > tolerance * singular[0]))


def laplacian_rank_check(net: DirectedNetwork) -> Tuple[int, int, bool]:
    """
    Compares rank(L_F) with m - c.

    Returns:
        (rank, c, consistent) where consistent is rank == m - c.

    Raises:
        GraphError: the follower subgraph is not weakly connected.
    """
    if not is_weakly_connected(net):
        raise GraphError("follower subgraph is not weakly connected")
    rank = numerical_rank(laplacian(net))
    c = iscc_partition(net).cell_count
    return rank, c, rank == net.follower_count - c


def pinned_followers(net: DirectedNetwork) -> np.ndarray:
    """Boolean mask of followers receiving from at least one leader."""
    return net.coupling.sum(axis=1) > 0


def pinning_check(net: DirectedNetwork, partition: Optional[IsccPartition] = None) -> bool:
    """True iff every iSCC cell contains a follower coupled to some leader."""
    if partition is None:
        partition = iscc_partition(net)
    pinned = pinned_followers(net)
    return all(any(pinned[v] for v in cell) for cell in partition.cells)


def select_pinning_vertices(net: DirectedNetwork) -> List[int]:
    """
    Minimal control-vertex set: the smallest-labelled member of every iSCC cell.

    Every member of a cell reaches the same followers, so any member works;
    the smallest label keeps the choice stable. Returns 0-based indices.
    """
    return [cell[0] for cell in iscc_partition(net).cells]


def with_pinning(net: DirectedNetwork, vertices: Sequence[int], leader: int, weight: float = 1.0) -> DirectedNetwork:
    """
    Copy of `net` with follower `vertices` (0-based) coupled to `leader`
    (0-based vertex index, m <= leader < N) with the given weight.
    """
    m = net.follower_count
    if not m <= leader < net.vertex_count:
        raise GraphError(f"vertex {leader} is not a leader")
    coupling = np.array(net.coupling)
    for v in vertices:
        coupling[v, leader - m] = weight
    return DirectedNetwork(net.vertex_count, m, np.array(net.adjacency), coupling)


def leader_diagonals(net: DirectedNetwork) -> List[np.ndarray]:
    """The matrices B_oj = diag(b_1j, ..., b_mj), one per leader."""
    return [np.diag(net.coupling[:, r]) for r in range(net.leader_count)]


def diagonal_dominance(M: np.ndarray) -> Tuple[bool, List[int]]:
    """
    Row diagonal-dominance conditions.

    Returns:
        (weak, strict_rows): weak is True when |m_ii| >= sum_k |m_ik| on every
        row; strict_rows lists the rows where the inequality is strict.
    """
    diag = np.abs(np.diag(M))
    off = np.abs(M).sum(axis=1) - diag
    slack = diag - off
    scale = max(1.0, float(np.max(np.abs(M))))
    weak = bool(np.all(slack >= -1e-12 * scale))
    strict_rows = [int(i) for i in np.nonzero(slack > 1e-12 * scale)[0]]
    return weak, strict_rows


def _eta(M: np.ndarray, psi: np.ndarray) -> float:
    Psi = np.diag(psi)
    scale = np.diag(1.0 / np.sqrt(psi))
    sym = scale @ (Psi @ M + M.T @ Psi) @ scale
    return float(np.linalg.eigvalsh(sym)[0])


def _search_psi(M: np.ndarray, psi: np.ndarray) -> np.ndarray:
    best = psi.copy()
    best_eta = _eta(M, best)
    for _ in range(_PSI_SEARCH_ITERATIONS):
        improved = False
        for i in range(best.size):
            for factor in (_PSI_SEARCH_FACTOR, 1.0 / _PSI_SEARCH_FACTOR):
                trial = best.copy()
                trial[i] *= factor
                trial_eta = _eta(M, trial)
                if trial_eta > best_eta:
                    best, best_eta, improved = trial, trial_eta, True
        if best_eta > 0 or not improved:
            break
    return best


def grounded_matrix(net: DirectedNetwork) -> GroundedMatrix:
    """
    Assembles M and certifies it.

    Psi comes from the positive solutions of M v = 1 and M^T u = 1
    (psi_i = u_i / v_i). eta is the smallest eigenvalue of
    Psi^{-1/2} (Psi M + M^T Psi) Psi^{-1/2}. A coordinate-wise multiplicative
    search over psi is the fallback when that construction does not give a
    positive eta.

    Raises:
        SingularMatrixError: M is numerically singular (a cell is unpinned).
        CertificateError: some eigenvalue of M is outside the open right
            half-plane, or no positive eta was found.
    """
    m = net.follower_count
    M = laplacian(net) + sum(leader_diagonals(net))
    if numerical_rank(M) < m:
        raise SingularMatrixError("grounded matrix M is singular; some iSCC cell is not pinned")
    if np.any(np.linalg.eigvals(M).real <= 0):
        raise CertificateError("grounded matrix M has an eigenvalue outside the open right half-plane")

    ones = np.ones(m)
    v = np.linalg.solve(M, ones)
    u = np.linalg.solve(M.T, ones)
    psi = u / v if np.all(v > 0) and np.all(u > 0) else ones.copy()
    eta = _eta(M, psi)
    if eta <= 0:
        psi = _search_psi(M, psi)
        eta = _eta(M, psi)
        if eta <= 0:
            raise CertificateError(f"no diagonal Psi with positive eta found (best eta = {eta:.3e})")
    return GroundedMatrix(_frozen(M), _frozen(psi), eta)


def block_triangular_form(net: DirectedNetwork) -> BlockForm:
    """
    Permutes L_F so the iSCC cells come first and the remaining followers last.

    Each cell block has a simple zero eigenvalue; the trailing block is
    nonsingular with its spectrum in the open right half-plane (its negation
    is Hurwitz). Both facts are checked.

    Raises:
        GraphError: the follower subgraph is not weakly connected.
        CertificateError: a spectral fact fails numerically.
    """
    if not is_weakly_connected(net):
        raise GraphError("follower subgraph is not weakly connected")
    partition = iscc_partition(net)
    permutation = tuple(v for cell in partition.cells for v in cell) + partition.non_iscc
    L = laplacian(net)
    permuted = L[np.ix_(permutation, permutation)]

    sizes = [len(cell) for cell in partition.cells]
    if partition.non_iscc:
        sizes.append(len(partition.non_iscc))
    start = 0
    for index, size in enumerate(sizes):
        block = permuted[start:start + size, start:start + size]
        eigs = np.linalg.eigvals(block)
        if index < partition.cell_count:
            zeros = int(np.sum(np.abs(eigs) < _ZERO_EIG_TOL * max(1.0, float(np.max(np.abs(block))))))
            if zeros != 1:
                raise CertificateError(f"cell block {index} has {zeros} zero eigenvalues, expected 1")
        elif np.any(eigs.real <= 0):
            raise CertificateError("trailing block has an eigenvalue outside the open right half-plane")
        start += size
    return BlockForm(permutation, _frozen(permuted), tuple(sizes))
