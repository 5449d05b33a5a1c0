"""Patch-affinity construction and Normalized-Cut bipartitioning.

The cut is obtained from the generalized eigenproblem (D - W) x = lambda D x,
solved through the equivalent symmetric problem on D^{-1/2} (D - W) D^{-1/2}.
Small graphs use a dense eigendecomposition; larger ones use a Lanczos
iteration on the reflected operator 2I - L_sym (whose largest eigenpairs are
L_sym's smallest, since the normalized spectrum lies in [0, 2]) with a fixed
start vector so results stay deterministic. Every solve is checked against an
explicit residual bound.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

#: Weight assigned to below-threshold affinities; keeps the graph connected.
EPSILON_WEIGHT = 1e-5

DEFAULT_TAU = 0.15


class DegeneratePartitionError(ValueError):
    """Raised when thresholding the eigenvector puts every node on one side."""


class EigenSolverError(RuntimeError):
    """Raised when the eigen residual exceeds the requested tolerance."""


@dataclass(frozen=True)
class AffinityGraph:
    """Symmetric non-negative patch-pair weights with per-node degrees."""

    weights: np.ndarray  # (n, n)
    degrees: np.ndarray  # (n,)

    @property
    def n(self):
        return self.weights.shape[0]

    def validate(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weights must be square, got {w.shape}")
        if float(np.abs(w - w.T).max()) > 1e-12:
            raise ValueError("weights not symmetric within 1e-12")
        if (np.diag(w) <= 0).any():
            raise ValueError("diagonal weights must be positive")
        if (self.degrees <= 0).any():
            raise ValueError("all degrees must be positive")
        return self


def make_graph(weights) -> AffinityGraph:
    w = np.asarray(weights, dtype=np.float64)
    return AffinityGraph(weights=w, degrees=w.sum(axis=1)).validate()


@dataclass(frozen=True)
class FiedlerResult:
    """Second-smallest generalized eigenpair of (D - W) x = lambda D x."""

    eigenvalue: float
    eigenvector: np.ndarray  # unit D-norm, largest-magnitude entry positive
    residual: float


def build_affinity(fm, tau=DEFAULT_TAU) -> AffinityGraph:
    """Cosine-similarity affinity over patch features, optionally binarized.

    Raw similarity is K_i . K_j / (|K_i| |K_j|). With tau > 0, entries >= tau
    become 1 and the rest EPSILON_WEIGHT; tau = 0 keeps the raw similarities
    (clamped below at EPSILON_WEIGHT so degrees stay positive).
    """
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must be in [0, 1), got {tau}")
    data = fm.data if hasattr(fm, "data") else np.asarray(fm, dtype=np.float64)
    feats = data.reshape(-1, data.shape[-1])
    norms = np.linalg.norm(feats, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm feature vector")
    unit = feats / norms[:, None]
    sim = unit @ unit.T
    # The gemm output is symmetric only to rounding error, so symmetrize as
    # part of thresholding/clamping rather than in a separate array pass.
    if tau > 0.0:
        weights = np.where((sim >= tau) & (sim.T >= tau), 1.0, EPSILON_WEIGHT)
    else:
        weights = np.maximum(np.maximum(sim, sim.T), EPSILON_WEIGHT)
    np.fill_diagonal(weights, 1.0)
    return make_graph(weights)


def fiedler(graph: AffinityGraph, tol=1e-8) -> FiedlerResult:
    """Solve (D - W) x = lambda D x for the second-smallest eigenpair.

    Works on the symmetric form L_sym = D^{-1/2} (D - W) D^{-1/2}; the
    returned eigenvector is scaled to unit D-norm (x^T D x = 1) and signed
    so its largest-magnitude entry is positive.
    """
    n = graph.n
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    w = graph.weights
    d = graph.degrees
    d_isqrt = 1.0 / np.sqrt(d)
    # Symmetric to 1 ulp; eigh reads one triangle and Lanczos tolerates it,
    # so no explicit re-symmetrization pass is needed.
    lap_sym = -(d_isqrt[:, None] * w * d_isqrt[None, :])
    np.fill_diagonal(lap_sym, np.diag(lap_sym) + 1.0)
    lam, vec = _second_smallest_eigenpair(lap_sym)
    x = d_isqrt * vec
    x = x / np.sqrt(x @ (d * x))
    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    residual = float(np.linalg.norm((d * x - w @ x) - lam * d * x))
    if residual > tol * float(np.linalg.norm(x)):
        raise EigenSolverError(
            f"eigen residual {residual:.3e} exceeds tolerance at n={n}"
        )
    return FiedlerResult(eigenvalue=lam, eigenvector=x, residual=residual)


#: Below this many nodes a dense solve beats the Lanczos iteration.
_DENSE_EIGEN_CUTOFF = 256


def _second_smallest_eigenpair(lap_sym):
    """Second-smallest eigenpair of a symmetric normalized Laplacian."""
    n = lap_sym.shape[0]
    if n > _DENSE_EIGEN_CUTOFF:
        reflected = scipy.sparse.linalg.LinearOperator(
            (n, n), matvec=lambda v: 2.0 * v - lap_sym @ v, dtype=np.float64
        )
        try:
            mu, vecs = scipy.sparse.linalg.eigsh(
                reflected, k=2, which="LA", v0=np.full(n, 1.0 / np.sqrt(n))
            )
        except scipy.sparse.linalg.ArpackNoConvergence:
            pass  # fall through to the dense solve
        else:
            # eigsh returns mu ascending; the smaller mu is the larger
            # Laplacian eigenvalue, i.e. the second-smallest overall.
            return 2.0 - float(mu[0]), vecs[:, 0]
    evals, evecs = scipy.linalg.eigh(lap_sym, subset_by_index=[0, 1])
    return float(evals[1]), evecs[:, 1]


def bipartition(fr: FiedlerResult, rows, cols, active=None) -> np.ndarray:
    """Threshold the eigenvector at its mean and pick the foreground side.

    The side containing the largest-magnitude entry is foreground, unless
    that side holds >= 3 of the 4 grid corners (objects rarely cover three
    corners), in which case the sides are swapped. `active` maps eigenvector
    entries to flat grid indices when only a subset of patches is in play.

    Returns a (rows, cols) boolean mask.
    """
    x = fr.eigenvector
    n = rows * cols
    if active is None:
        active = np.arange(n)
    else:
        active = np.asarray(active)
    if x.shape[0] != active.shape[0]:
        raise ValueError("eigenvector length does not match active patch count")
    if active.size and (active.min() < 0 or active.max() >= n):
        raise ValueError("active indices outside grid")
    high = x >= x.mean()
    if high.all() or not high.any():
        raise DegeneratePartitionError("degenerate partition")
    fg = high if high[np.argmax(np.abs(x))] else ~high
    corners = {0, cols - 1, n - cols, n - 1}
    fg_idx = set(active[fg].tolist())
    if len(corners & fg_idx) >= 3:
        fg = ~fg
    mask = np.zeros(n, dtype=bool)
    mask[active[fg]] = True
    return mask.reshape(rows, cols)


def ncut_value(graph: AffinityGraph, partition) -> float:
    """Normalized-Cut objective cut(A,B)/assoc(A,V) + cut(A,B)/assoc(B,V)."""
    side = np.asarray(partition).reshape(-1).astype(bool)
    if side.shape[0] != graph.n:
        raise ValueError("partition length does not match graph size")
    if side.all() or not side.any():
        raise ValueError("both sides of the partition must be non-empty")
    w = graph.weights
    cut = float(w[np.ix_(side, ~side)].sum())
    assoc_a = float(graph.degrees[side].sum())
    assoc_b = float(graph.degrees[~side].sum())
    return cut / assoc_a + cut / assoc_b
