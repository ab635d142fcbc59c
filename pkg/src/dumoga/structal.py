"""Structural graph alignment between a scene graph and a dependency tree.

Both graphs are placed side by side in one union graph (no cross-modal
edges).  Each node gets a label-free signature built from log-binned in/out
degree histograms of its hop-k neighbourhoods; a Gaussian kernel over the
signatures is factorised with landmark (Nystrom) sampling, the resulting
embedding rows are L2-normalised, split by modality, and compared with a
second Gaussian kernel to produce the object x word alignment map.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .graphs import DependencyGraph, SceneGraph

EIGEN_FLOOR = 1e-8
DEFAULT_MAX_LANDMARKS = 10


@dataclass(frozen=True)
class SignatureConfig:
    hops: int = 2
    bins: int = 6
    discount: float = 0.5
    gamma: float = 1.0

    def __post_init__(self):
        if int(self.hops) != self.hops or self.hops < 1:
            raise ValueError(f"hops must be an integer >= 1, got {self.hops}")
        if int(self.bins) != self.bins or self.bins < 1:
            raise ValueError(f"bins must be an integer >= 1, got {self.bins}")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError(f"discount must be in (0, 1], got {self.discount}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")

    @property
    def length(self) -> int:
        return 2 * self.bins * self.hops


@dataclass(frozen=True)
class UnionGraph:
    """Directed multigraph over image nodes ``0..n-1`` then text nodes ``n..n+l-1``."""

    n_image: int
    n_text: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for u, v in self.edges:
            if not (0 <= u < self.size and 0 <= v < self.size):
                raise ValueError(f"edge ({u}, {v}) outside {self.size}-node graph")

    @property
    def size(self) -> int:
        return self.n_image + self.n_text

    @classmethod
    def from_graphs(cls, scene: SceneGraph, dep: DependencyGraph) -> "UnionGraph":
        n = scene.n
        edges = [(r.subject_id, r.object_id) for r in scene.relations]
        edges += [(n + t.head, n + t.index) for t in dep.tokens if t.head >= 0]
        return cls(n, dep.l, tuple(edges))

    def degrees(self) -> tuple[np.ndarray, np.ndarray]:
        indeg = np.zeros(self.size, dtype=np.int64)
        outdeg = np.zeros(self.size, dtype=np.int64)
        for u, v in self.edges:
            outdeg[u] += 1
            indeg[v] += 1
        return indeg, outdeg

    def hop_distances(self, source: int) -> np.ndarray:
        """Undirected BFS distances from ``source``; -1 marks unreachable nodes."""
        adj = [set() for _ in range(self.size)]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        dist = np.full(self.size, -1, dtype=np.int64)
        dist[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for w in adj[u]:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist


@dataclass(frozen=True, eq=False)
class StructuralSignature:
    node_id: int
    vector: np.ndarray


@dataclass(frozen=True, eq=False)
class EmbeddingMatrices:
    P1: np.ndarray
    P2: np.ndarray

    @property
    def p(self) -> int:
        return self.P1.shape[1]


@dataclass(frozen=True, eq=False)
class AlignmentMap:
    """``alpha[j, i]`` is the structural similarity of object ``j`` and word ``i``."""

    alpha: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape


def _degree_bin(d: np.ndarray, bins: int) -> np.ndarray:
    # floor(log2(d + 1)) via integer bit length, exact for all d >= 0
    b = np.array([int(x + 1).bit_length() - 1 for x in np.asarray(d).ravel()], dtype=np.int64)
    return np.minimum(b, bins - 1)


def structural_signature(g: UnionGraph, node: int, cfg: SignatureConfig = SignatureConfig()) -> StructuralSignature:
    """Signature of one node.

    Layout is hop-major: ``[in_1, out_1, in_2, out_2, ...]`` where ``in_k`` is
    the ``B``-bin histogram of in-degrees of the nodes exactly ``k`` undirected
    hops away, each contributing ``discount**(k-1)``.
    """
    if not 0 <= node < g.size:
        raise KeyError(f"unknown node id {node} (graph has {g.size} nodes)")
    indeg, outdeg = g.degrees()
    in_bins = _degree_bin(indeg, cfg.bins)
    out_bins = _degree_bin(outdeg, cfg.bins)
    dist = g.hop_distances(node)
    vec = np.zeros(cfg.length, dtype=np.float64)
    for k in range(1, cfg.hops + 1):
        weight = cfg.discount ** (k - 1)
        at_k = np.flatnonzero(dist == k)
        base = 2 * cfg.bins * (k - 1)
        for u in at_k:
            vec[base + in_bins[u]] += weight
            vec[base + cfg.bins + out_bins[u]] += weight
    vec.setflags(write=False)
    return StructuralSignature(node, vec)


def signatures(g: UnionGraph, cfg: SignatureConfig = SignatureConfig()) -> list[StructuralSignature]:
    return [structural_signature(g, u, cfg) for u in range(g.size)]


SignatureInput = Union[Sequence[StructuralSignature], np.ndarray]


def _as_matrix(sigs: SignatureInput) -> np.ndarray:
    if isinstance(sigs, np.ndarray):
        mat = np.asarray(sigs, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError("signature matrix must be 2-D")
        return mat
    lengths = {len(s.vector) for s in sigs}
    if len(lengths) > 1:
        raise ValueError(f"signature length mismatch: {sorted(lengths)}")
    if not sigs:
        raise ValueError("no signatures given")
    return np.stack([np.asarray(s.vector, dtype=np.float64) for s in sigs])


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def gaussian_kernel(a: np.ndarray, b: np.ndarray, gamma: float = 1.0) -> np.ndarray:
    return np.exp(-gamma * _sqdist(a, b))


def similarity_matrix(sigs: SignatureInput, gamma: float = 1.0) -> np.ndarray:
    """Full Gaussian kernel ``S[u, v] = exp(-gamma * ||sig_u - sig_v||^2)``."""
    x = _as_matrix(sigs)
    return gaussian_kernel(x, x, gamma)


def landmark_embed(sigs: SignatureInput, p: int, seed: int = 42, gamma: float = 1.0) -> np.ndarray:
    """Nystrom embedding ``P`` with ``P @ P.T`` approximating the kernel matrix.

    ``p`` landmarks are drawn uniformly without replacement.  Eigenvalues of
    the landmark block below ``EIGEN_FLOOR`` are dropped; their columns are
    left as zeros so the result always has ``p`` columns.
    """
    x = _as_matrix(sigs)
    total = x.shape[0]
    if not 1 <= p <= total:
        raise ValueError(f"landmark count p={p} out of range 1..{total}")
    rng = np.random.default_rng(seed)
    landmarks = np.sort(rng.choice(total, size=p, replace=False))
    C = gaussian_kernel(x, x[landmarks], gamma)
    W = C[landmarks]
    W = 0.5 * (W + W.T)
    lam, U = np.linalg.eigh(W)
    keep = lam > EIGEN_FLOOR
    out = np.zeros((total, p), dtype=np.float64)
    k = int(keep.sum())
    out[:, :k] = (C @ U[:, keep]) / np.sqrt(lam[keep])
    return out


def normalize_split(P: np.ndarray, n: int, l: int) -> EmbeddingMatrices:  # noqa: E741
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != n + l:
        raise ValueError(f"row-count mismatch: embedding has {P.shape[0]} rows, expected n+l={n + l}")
    norms = np.linalg.norm(P, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    Q = P / safe
    return EmbeddingMatrices(Q[:n].copy(), Q[n:].copy())


def alignment_map(emb: EmbeddingMatrices) -> AlignmentMap:
    if emb.P1.shape[1] != emb.P2.shape[1]:
        raise ValueError(f"column mismatch: P1 has {emb.P1.shape[1]}, P2 has {emb.P2.shape[1]}")
    alpha = np.exp(-_sqdist(emb.P1, emb.P2))
    alpha.setflags(write=False)
    return AlignmentMap(alpha)


def greedy_match(alpha: Union[AlignmentMap, np.ndarray]) -> list[tuple[int, int]]:
    """Greedy one-to-one matching on the global maximum entry.

    Ties go to the lower object id, then the lower word index.
    """
    a = alpha.alpha if isinstance(alpha, AlignmentMap) else np.asarray(alpha)
    if a.size == 0:
        raise ValueError("empty alignment map")
    n, l = a.shape  # noqa: E741
    rows, cols = np.unravel_index(np.arange(a.size), a.shape)
    order = np.lexsort((cols, rows, -a.ravel()))
    used_r, used_c = set(), set()
    pairs = []
    for idx in order:
        j, i = int(rows[idx]), int(cols[idx])
        if j in used_r or i in used_c:
            continue
        pairs.append((j, i))
        used_r.add(j)
        used_c.add(i)
        if len(pairs) == min(n, l):
            break
    return pairs


def default_landmarks(n: int, l: int) -> int:  # noqa: E741
    return min(n + l, DEFAULT_MAX_LANDMARKS)


def align(scene: SceneGraph, dep: DependencyGraph, cfg: SignatureConfig = SignatureConfig(),
          landmarks: Optional[int] = None, seed: int = 42) -> AlignmentMap:
    """Compute the object x word alignment map for one image/query pair."""
    g = UnionGraph.from_graphs(scene, dep)
    sigs = signatures(g, cfg)
    p = default_landmarks(scene.n, dep.l) if landmarks is None else landmarks
    P = landmark_embed(sigs, p, seed=seed, gamma=cfg.gamma)
    return alignment_map(normalize_split(P, scene.n, dep.l))
