"""Entropic optimal transport between patch sets.

Builds the pairwise cosine ground cost, runs log-domain Sinkhorn iterations
to the transport plan, and reduces the plan to its top-L flow pairs and
their partial transport cost. The log-domain formulation keeps small
regularization strengths (cost/epsilon ratios of several hundred) stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPSILON = 0.05  # on [0, 2]-scaled cosine costs
DEFAULT_ITERATIONS = 100
DEFAULT_TOP_L = 5


class SinkhornError(RuntimeError):
    """Raised when the scaling iteration produces non-finite values."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class CostMatrix:
    """Pairwise cosine distances d[i][j] between query patch i and gallery patch j."""

    d: np.ndarray  # (M, M), entries in [0, 2]

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        d.setflags(write=False)
        object.__setattr__(self, "d", d)


@dataclass(frozen=True)
class FlowMatrix:
    """Transport plan with its marginals and solver metadata.

    f is nonnegative with total mass 1; row sums approximate mu and column
    sums approximate nu to within the final marginal residual.
    """

    f: np.ndarray  # (M, M)
    mu: np.ndarray
    nu: np.ndarray
    epsilon: float
    iterations: int
    residual_history: tuple[float, ...] = ()

    def __post_init__(self):
        f = np.asarray(self.f, dtype=np.float64)
        f.setflags(write=False)
        object.__setattr__(self, "f", f)

    @property
    def marginal_residual(self) -> float:
        """L1 deviation of the plan's marginals from (mu, nu)."""
        return float(np.abs(self.f.sum(axis=1) - self.mu).sum()
                     + np.abs(self.f.sum(axis=0) - self.nu).sum())


@dataclass(frozen=True)
class FlowPair:
    i: int  # query patch index
    j: int  # gallery patch index
    flow: float  # > 0
    cost: float


def cost_matrix(q_patches: np.ndarray, g_patches: np.ndarray) -> CostMatrix:
    """Pairwise cosine distance between two patch sets of matching dim."""
    q = np.asarray(q_patches, dtype=np.float64)
    g = np.asarray(g_patches, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ValueError(f"patch sets must share the embedding dim: {q.shape} vs {g.shape}")
    qn = np.linalg.norm(q, axis=1)
    gn = np.linalg.norm(g, axis=1)
    if (qn == 0.0).any() or (gn == 0.0).any():
        raise ValueError("zero-norm patch in cost matrix input")
    d = 1.0 - (q / qn[:, None]) @ (g / gn[:, None]).T
    np.clip(d, 0.0, 2.0, out=d)
    return CostMatrix(d=d)


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    # Rows with all -inf reduce to -inf without warnings.
    m = np.max(x, axis=1)
    finite = m > -np.inf
    out = np.full(x.shape[0], -np.inf)
    if finite.any():
        xs = x[finite] - m[finite, None]
        out[finite] = m[finite] + np.log(np.exp(xs).sum(axis=1))
    return out


def sinkhorn_flow(cost: CostMatrix, mu: np.ndarray, nu: np.ndarray,
                  epsilon: float = DEFAULT_EPSILON,
                  iterations: int = DEFAULT_ITERATIONS,
                  early_exit: float | None = None) -> FlowMatrix:
    """Entropic-regularized transport plan via log-domain Sinkhorn scaling.

    Runs exactly `iterations` full sweeps (a row update then a column
    update) unless `early_exit` is set, in which case iteration stops once
    the L1 marginal residual drops below it; an early-exited plan matches
    the full run to well under the exit tolerance. The column update runs
    last, so column sums equal nu and total mass is 1 up to roundoff.
    """
    d = cost.d
    m_rows, m_cols = d.shape
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if mu.shape != (m_rows,) or nu.shape != (m_cols,):
        raise ValueError(f"marginal shapes {mu.shape}/{nu.shape} do not match cost {d.shape}")
    for name, v in (("mu", mu), ("nu", nu)):
        if (v < 0).any() or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} must be a probability vector (sum {v.sum():.3g})")
    if not np.isfinite(d).all():
        raise ValueError("cost matrix has non-finite entries")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")

    with np.errstate(divide="ignore"):  # log(0) -> -inf encodes zero-mass bins
        log_mu = np.log(mu)
        log_nu = np.log(nu)
    neg_c = -d / epsilon
    a = np.zeros(m_rows)  # scaled dual potentials u/epsilon, v/epsilon
    b = np.zeros(m_cols)
    residuals: list[float] = []
    it = 0
    for it in range(1, iterations + 1):
        a = log_mu - _logsumexp_rows(neg_c + b[None, :])
        b = log_nu - _logsumexp_rows(neg_c.T + a[None, :])
        if np.isnan(a).any() or np.isnan(b).any():
            raise SinkhornError("non-finite dual potential", it)
        plan = np.exp(neg_c + a[:, None] + b[None, :])
        res = float(np.abs(plan.sum(axis=1) - mu).sum() + np.abs(plan.sum(axis=0) - nu).sum())
        residuals.append(res)
        if early_exit is not None and res < early_exit:
            break
    plan = np.exp(neg_c + a[:, None] + b[None, :])
    if np.isnan(plan).any():
        raise SinkhornError("non-finite transport plan", it)
    return FlowMatrix(f=plan, mu=mu, nu=nu, epsilon=epsilon, iterations=it,
                      residual_history=tuple(residuals))


def top_l_flows(flow: FlowMatrix, cost: CostMatrix, L: int = DEFAULT_TOP_L) -> list[FlowPair]:
    """The L positive entries of largest flow, ties by (i, j) ascending."""
    if L < 1:
        raise ValueError("L must be >= 1")
    f = flow.f
    m_rows, m_cols = f.shape
    flat = f.ravel()
    order = np.lexsort((np.tile(np.arange(m_cols), m_rows),
                        np.repeat(np.arange(m_rows), m_cols),
                        -flat))
    pairs = []
    for idx in order:
        if len(pairs) == L:
            break
        value = float(flat[idx])
        if value <= 0.0:
            break
        i, j = divmod(int(idx), m_cols)
        pairs.append(FlowPair(i=i, j=j, flow=value, cost=float(cost.d[i, j])))
    return pairs


def emd_distance(pairs: list[FlowPair]) -> float:
    """Partial transport cost over the selected flow pairs."""
    return float(sum(p.cost * p.flow for p in pairs))


def transport_cost(flow: FlowMatrix, cost: CostMatrix) -> float:
    """Full transport plan cost sum_ij d_ij * f_ij."""
    return float((cost.d * flow.f).sum())
