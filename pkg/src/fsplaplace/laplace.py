"""Matrix-free linearized Laplace posterior under a GP prior.

Pipeline:

1. start vector ``J(C) 1`` (one forward-mode sweep over the context points),
2. Lanczos with full reorthogonalization on the context Gram matrix,
   yielding ``L`` with ``L L^T ~ K(C, C)^+``,
3. ``M = J(C)^T L`` by reverse-mode sweeps, one per column of ``L``,
4. thin SVD ``M = U_M D_M V^T`` and the projected precision
   ``A = D_M^2 + sum_i (J_i U_M)^T Lambda_i (J_i U_M)``,
5. ``S = U_M U_A D_A^{+/2}``, dropping smallest-eigenvalue columns until the
   predicted marginal variance at every context point is below the prior's.

Nothing of size P x P or (M O) x (M O) is formed, except by
:func:`null_space_diagnostic`, which is a dense check by design.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_triangular

from .errors import ConfigError, NumericalError, ShapeError
from .gp import GpPrior
from .kernels import _as_points
from .nn import MlpSpec, forward, jacobian, jvp_batch, vjp_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LanczosConfig:
    max_rank: int = 500
    tol: float = 1e-12  # breakdown threshold on beta, relative to the running norm estimate
    eps_rel: float = 1e-10  # eigenvalue cutoff relative to the largest eigenvalue
    reorth: str = "full"
    chunk: int = 64  # columns per batched Jacobian sweep

    def __post_init__(self):
        if self.max_rank < 1:
            raise ConfigError("max_rank must be at least 1")
        if not 0 < self.eps_rel < 1:
            raise ConfigError("eps_rel must lie in (0, 1)")
        if self.reorth != "full":
            raise ConfigError("only full reorthogonalization is supported")


@dataclass
class PinvFactor:
    L: np.ndarray
    ritz_values: np.ndarray
    n_iter: int
    method: str  # "ldl" or "eigh"


@dataclass
class ProjectedCurvature:
    A: np.ndarray
    U_M: np.ndarray
    D_M: np.ndarray


@dataclass
class PosteriorFactors:
    """``N(map, S S^T)`` over the flattened network weights."""

    map: np.ndarray
    S: np.ndarray
    eigenvalues: np.ndarray
    k: int
    context: np.ndarray | None = None
    projected: ProjectedCurvature | None = field(default=None, repr=False)

    @property
    def rank(self) -> int:
        return self.S.shape[1]


def lanczos_pinv_factor(matvec, v0, config: LanczosConfig = LanczosConfig()) -> PinvFactor:
    """Low-rank factor of a symmetric PSD operator's pseudo-inverse.

    Runs Lanczos with full reorthogonalization and updates the LDL^T
    factorization of the tridiagonal matrix alongside. When the Ritz spectrum
    is well conditioned (smallest above ``eps_rel`` times largest) the LDL^T
    pivots give ``L = Q L_T^{-T} D^{-1/2}``; otherwise the tridiagonal matrix
    is eigendecomposed and Ritz values below the cutoff are discarded.

    If the Krylov space becomes invariant before the operator's range is
    exhausted, the iteration restarts from a seeded vector orthogonal to the
    current basis (a zero off-diagonal entry in the tridiagonal matrix).
    """
    v0 = np.asarray(v0, dtype=np.float64)
    n = v0.shape[0]
    nrm = np.linalg.norm(v0)
    if nrm == 0 or not np.isfinite(nrm):
        raise ValueError("start vector must be finite and nonzero")
    m = min(config.max_rank, n)
    Q = np.zeros((n, m))
    alphas, betas, pivots = [], [], []
    Q[:, 0] = v0 / nrm
    beta_prev = 0.0
    norm_est = 0.0
    restart_rng = np.random.default_rng(0)
    w = None
    for j in range(m):
        if w is None:
            w = _checked_matvec(matvec, Q[:, j], j)
        alpha = float(Q[:, j] @ w)
        w = w - alpha * Q[:, j]
        if j > 0:
            w -= beta_prev * Q[:, j - 1]
        for _ in range(2):
            w -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
        beta = float(np.linalg.norm(w))
        alphas.append(alpha)
        # embedded LDL^T of the tridiagonal matrix
        if j == 0 or beta_prev == 0.0:
            pivots.append(alpha)
        else:
            pivots.append(alpha - beta_prev ** 2 / pivots[-1] if pivots[-1] != 0 else -np.inf)
        norm_est = max(norm_est, abs(alpha) + beta + beta_prev)
        if j == m - 1:
            break
        if beta > config.tol * norm_est:
            betas.append(beta)
            Q[:, j + 1] = w / beta
            beta_prev = beta
            w = None
            continue
        # invariant subspace found: restart orthogonally, stop once the operator annihilates the restart
        q = restart_rng.standard_normal(n)
        for _ in range(2):
            q -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ q)
        q /= np.linalg.norm(q)
        w = _checked_matvec(matvec, q, j + 1)
        if np.linalg.norm(w) <= config.tol * norm_est:
            break
        betas.append(0.0)
        Q[:, j + 1] = q
        beta_prev = 0.0
    k = len(alphas)
    Q = Q[:, :k]
    a = np.array(alphas)
    b = np.array(betas[:k - 1])
    theta, V = eigh_tridiagonal(a, b)
    top = theta.max()
    if top <= 0:
        return PinvFactor(np.zeros((n, 0)), np.zeros(0), k, "eigh")
    keep = theta > config.eps_rel * top
    piv = np.array(pivots)
    if keep.all() and np.all(piv > 0):
        # T = L_T D L_T^T with unit lower-bidiagonal L_T, subdiagonal b / d
        Lt = np.eye(k)
        Lt[np.arange(1, k), np.arange(k - 1)] = b / piv[:-1]
        X = solve_triangular(Lt, np.diag(1.0 / np.sqrt(piv)), lower=True, trans="T", unit_diagonal=True)
        return PinvFactor(Q @ X, theta[::-1], k, "ldl")
    theta_k, V_k = theta[keep][::-1], V[:, keep][:, ::-1]
    return PinvFactor(Q @ (V_k / np.sqrt(theta_k)), theta_k, k, "eigh")


def _checked_matvec(matvec, q, step):
    w = np.asarray(matvec(q), dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NumericalError(f"non-finite matvec output at Lanczos step {step}")
    return w


def initial_lanczos_vector(spec: MlpSpec, params, C, seed: int = 0) -> np.ndarray:
    """Normalized ``J(C) 1``; a seeded random unit vector if that is zero."""
    P = spec.n_params
    v = jvp_batch(spec, params, C, np.ones(P)).reshape(-1)
    nrm = np.linalg.norm(v)
    if not np.isfinite(nrm):
        raise NumericalError("non-finite Jacobian product for the start vector")
    if nrm == 0:
        log.warning("J(C) 1 vanished; using a random start vector (seed %d)", seed)
        v = np.random.default_rng(seed).standard_normal(v.shape[0])
        nrm = np.linalg.norm(v)
    return v / nrm


def project_jacobian(spec: MlpSpec, params, C, L, chunk: int = 64) -> np.ndarray:
    """``J(C)^T L`` via batched reverse-mode sweeps, returned as (P, r)."""
    C = _as_points(C)
    Mc, O = C.shape[0], spec.output_dim
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != Mc * O:
        raise ShapeError(f"L must have {Mc * O} rows, got shape {L.shape}")
    r = L.shape[1]
    out = np.zeros((spec.n_params, r))
    for s in range(0, r, chunk):
        cot = L[:, s:s + chunk].T.reshape(-1, Mc, O)
        out[:, s:s + chunk] = vjp_batch(spec, params, C, cot).T
    return out


def _jvp_columns(spec, params, X, cols, chunk):
    """Forward-mode products for every column of ``cols``; result (r, n, O)."""
    r = cols.shape[1]
    X = _as_points(X)
    out = np.zeros((r, X.shape[0], spec.output_dim))
    for s in range(0, r, chunk):
        out[s:s + chunk] = jvp_batch(spec, params, X, cols[:, s:s + chunk].T)
    return out


def assemble_projected_curvature(M_mat, spec: MlpSpec, params, X, likelihood, eps_rel=1e-10, chunk=64):
    """Thin SVD of ``M`` and the precision projected onto its left singular vectors."""
    M_mat = np.asarray(M_mat, dtype=np.float64)
    if not np.all(np.isfinite(M_mat)):
        raise NumericalError("projected Jacobian has non-finite entries")
    try:
        U, s, _ = np.linalg.svd(M_mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from None
    if s.size and s[0] > 0:
        keep = s > eps_rel * s[0]
    else:
        keep = np.zeros(s.shape, dtype=bool)
    U, s = U[:, keep], s[keep]
    A = np.diag(s * s)
    X = _as_points(X)
    if X.shape[0] and U.shape[1]:
        B = _jvp_columns(spec, params, X, U, chunk)
        Lam = likelihood.curvature_batch(forward(spec, params, X))
        A = A + np.einsum("rno,nop,snp->rs", B, Lam, B)
    A = 0.5 * (A + A.T)
    return ProjectedCurvature(A, U, s)


def context_variance_terms(spec, params, C, S, chunk=64):
    """Per-column contributions to ``diag(J(C) S S^T J(C)^T)``, shape (r, M*O)."""
    B = _jvp_columns(spec, params, C, S, chunk)
    return (B * B).reshape(S.shape[1], -1)


def truncate_and_factor(pc: ProjectedCurvature, prior: GpPrior, spec, params, C,
                        eps_rel=1e-10, bound_tol=1e-9, chunk=64) -> PosteriorFactors:
    """Pseudo-inverse square root of ``U_M A U_M^T`` with variance-bounded truncation.

    Eigenvalues at or below ``eps_rel * max`` are treated as zero and their
    columns dropped. Then the smallest remaining eigenvalues are removed one
    at a time until ``diag(J(C) S S^T J(C)^T) <= diag K(C, C) + bound_tol``.
    """
    C = _as_points(C)
    evals, UA = np.linalg.eigh(pc.A) if pc.A.size else (np.zeros(0), np.zeros((0, 0)))
    r = evals.size
    top = evals.max() if r else 0.0
    positive = evals > eps_rel * top if top > 0 else np.zeros(r, dtype=bool)
    inv_sqrt = np.where(positive, 1.0 / np.sqrt(np.where(positive, evals, 1.0)), 0.0)
    S_full = pc.U_M @ (UA * inv_sqrt)
    n_zero = int(r - positive.sum())

    prior_var = prior.kernel.diag(C)
    contrib = context_variance_terms(spec, params, C, S_full, chunk) if r else np.zeros((0, prior_var.size))
    # suffix[k] = variance with columns k: retained
    suffix = np.vstack([np.cumsum(contrib[::-1], axis=0)[::-1], np.zeros((1, prior_var.size))])
    ok = np.all(suffix <= prior_var + bound_tol, axis=1)
    k = int(np.argmax(ok[n_zero:])) + n_zero
    if k == r and r > n_zero:
        warnings.warn("variance bound violated for every truncation level; returning a rank-0 posterior",
                      RuntimeWarning, stacklevel=2)
    S = S_full[:, k:]
    return PosteriorFactors(np.asarray(params, dtype=np.float64).copy(), S, evals[k:].copy(), k, C, pc)


def fsp_laplace(spec: MlpSpec, params, prior: GpPrior, C, X, likelihood,
                config: LanczosConfig = LanczosConfig(), bound_tol=1e-9, seed=0) -> PosteriorFactors:
    """Run the full covariance pipeline at the MAP ``params``."""
    C = _as_points(C)
    v0 = initial_lanczos_vector(spec, params, C, seed)
    pinv = lanczos_pinv_factor(prior.kernel.operator(C), v0, config)
    M_mat = project_jacobian(spec, params, C, pinv.L, config.chunk)
    pc = assemble_projected_curvature(M_mat, spec, params, X, likelihood, config.eps_rel, config.chunk)
    return truncate_and_factor(pc, prior, spec, params, C, config.eps_rel, bound_tol, config.chunk)


def null_space_diagnostic(spec, params, X, prior, C, likelihood, config: LanczosConfig = LanczosConfig(),
                          max_params=6000, seed=0) -> float:
    """``||P0 H P0||_F / ||H||_F`` for the dense precision ``H`` and ``P0 = I - U_M U_M^T``."""
    P = spec.n_params
    if P > max_params:
        raise MemoryError(f"dense diagnostic refuses P={P} > {max_params}")
    C = _as_points(C)
    X = _as_points(X)
    K = prior.gram(C)
    w, V = np.linalg.eigh(K)
    keep = w > config.eps_rel * w.max()
    Jc = jacobian(spec, params, C)
    G = Jc.T @ V[:, keep]
    H = (G / w[keep]) @ G.T
    if X.shape[0]:
        Jx = jacobian(spec, params, X).reshape(X.shape[0], spec.output_dim, P)
        Lam = likelihood.curvature_batch(forward(spec, params, X))
        H += np.einsum("nop,noq,nqr->pr", Jx, Lam, Jx)
    H = 0.5 * (H + H.T)

    v0 = initial_lanczos_vector(spec, params, C, seed)
    pinv = lanczos_pinv_factor(prior.kernel.operator(C), v0, config)
    M_mat = project_jacobian(spec, params, C, pinv.L, config.chunk)
    U, s, _ = np.linalg.svd(M_mat, full_matrices=False)
    U = U[:, s > config.eps_rel * s[0]] if s.size and s[0] > 0 else U[:, :0]
    HU = H @ U
    UtHU = U.T @ HU
    P0HP0 = H - U @ HU.T - HU @ U.T + U @ UtHU @ U.T
    return float(np.linalg.norm(P0HP0) / np.linalg.norm(H))


def save_posterior(path, pf: PosteriorFactors) -> None:
    """JSON header line (dims, k, eigenvalues) then map and S as little-endian float64."""
    header = {
        "n_params": int(pf.map.size),
        "rank": int(pf.rank),
        "k": int(pf.k),
        "eigenvalues": [float(e) for e in pf.eigenvalues],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(pf.map.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(pf.S).astype("<f8").tobytes())


def load_posterior(path) -> PosteriorFactors:
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    h = json.loads(head.decode("utf-8"))
    vals = np.frombuffer(body, dtype="<f8").astype(np.float64)
    P, r = h["n_params"], h["rank"]
    if vals.size != P * (1 + r):
        raise ShapeError("posterior file is truncated or malformed")
    return PosteriorFactors(vals[:P].copy(), vals[P:].reshape(P, r).copy(), np.array(h["eigenvalues"]), h["k"])
