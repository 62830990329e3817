"""Feller measures and the trace Dirichlet form of a chain on a subset F.

Everything here is exact linear algebra: the Feller matrix U pairs harmonic
extensions through the energy functional, the supplementary vector V pairs
them with the escape probability, and the trace form is the Schur complement
of the killed block.  The classical identities relating these objects hold
on finite chains with equality, so they are implemented as residual checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import (
    HittingData,
    KilledBlocks,
    SubsetSpec,
    SymmetricChain,
    _freeze,
    beurling_deny,
    energy_measure,
    hitting_operator,
    split_blocks,
    validate_chain,
)
from .errors import IdentityViolation, NonMarkovTrace, NonPositiveDensity

ROUTE_RTOL = 1e-12
IDENTITY_RTOL = 1e-10


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def _rel_mat(A: np.ndarray, B: np.ndarray) -> float:
    scale = max(np.max(np.abs(A)), np.max(np.abs(B)), 1.0)
    return float(np.max(np.abs(A - B)) / scale)


@dataclass(frozen=True)
class FellerData:
    """Feller matrix U on F x F, supplementary vector V on F.

    ``U[i, j]`` is the mass the excursion measure puts on excursions from
    F[i] to F[j]; it is symmetric.  The diagonal carries the mass of
    excursions returning to their start state; the classical identities only
    ever use off-diagonal entries through squared differences, but the
    diagonal is kept for cross-checks against excursion counts.
    ``alpha_family`` maps a discount rate to its U_alpha matrix, which
    increases entrywise to U.
    """

    U: np.ndarray
    V: np.ndarray
    provenance: str = "exact"
    alpha_family: dict = None

    def u_offdiag(self) -> np.ndarray:
        out = self.U.copy()
        np.fill_diagonal(out, 0.0)
        return out


def feller_measures(blocks: KilledBlocks, hit: HittingData, alphas=()) -> FellerData:
    """Exact Feller data: U(i,j) = sum_x m(x) Q(x, F_i) H(x, F_j), etc.

    U_alpha(i,j) = alpha sum_x m(x) H_alpha(x, F_i) H(x, F_j) for each
    requested discount rate alpha.
    """
    w = blocks.m0[:, None] * blocks.Q0F
    U = w.T @ hit.H
    V = w.T @ hit.q
    family = {}
    for a in alphas:
        Ha = hit.alpha_order(a)
        family[a] = _freeze(a * (Ha * blocks.m0[:, None]).T @ hit.H)
    return FellerData(U=_freeze(U), V=_freeze(V), provenance="exact", alpha_family=family)


def feller_for(chain: SymmetricChain, F, alphas=()):
    """Convenience: blocks, hitting data and Feller data for (chain, F)."""
    blocks = split_blocks(chain, F)
    hit = hitting_operator(blocks)
    return blocks, hit, feller_measures(blocks, hit, alphas)


@dataclass(frozen=True)
class TraceDecomposition:
    """Trace Dirichlet form of the chain on F and its jump/kill data.

    ``form_matrix`` A satisfies E-trace(u, v) = u' A v and does not depend
    on the time-change weights.  ``generator`` is the Schur complement
    QFF - QF0 Q00^{-1} Q0F, the generator of the trace process run with the
    weights mF; ``time_changed_generator`` rescales it by the weights mu
    actually used for the time change.  ``jump`` and ``kill`` are the jump
    matrix and killing vector read off the form; they do not depend on mu.
    """

    F: tuple[int, ...]
    mF: np.ndarray
    mu: np.ndarray
    form_matrix: np.ndarray
    generator: np.ndarray
    time_changed_generator: np.ndarray
    jump: np.ndarray
    kill: np.ndarray
    route_residual: float

    def form(self, u, v=None) -> float:
        u = np.asarray(u, dtype=float)
        v = u if v is None else np.asarray(v, dtype=float)
        return float(u @ self.form_matrix @ v)

    def as_chain(self) -> SymmetricChain:
        """The trace process (state space F, weights mF) as a chain.

        Valid whenever the Schur complement is irreducible, which holds for
        every irreducible parent chain.  Roundoff-level negative rates are
        clipped to zero before validation.
        """
        Q = self.generator.copy()
        off = Q - np.diag(np.diag(Q))
        Q = np.maximum(off, 0.0) + np.diag(np.diag(Q))
        return validate_chain(Q, self.mF)


def trace_form(chain: SymmetricChain, F, mu=None) -> TraceDecomposition:
    """Trace form on F computed two independent ways, with agreement asserted.

    Route one evaluates the chain energy of harmonic extensions; route two
    takes the Schur complement of the killed block.  The two matrices must
    agree to ``ROUTE_RTOL`` relative, else IdentityViolation is raised.
    ``mu`` (default mF) is the strictly positive time-change weight vector.
    """
    sub = F if isinstance(F, SubsetSpec) else SubsetSpec.of(chain, F)
    blocks = split_blocks(chain, sub)
    hit = hitting_operator(blocks)
    nF = len(sub.F)
    if mu is None:
        mu = blocks.mF
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (nF,) or np.any(mu <= 0):
        raise NonPositiveDensity("time-change weights must be positive on all of F")

    # route (i): energy of harmonic extensions, Ext = [H on E0; identity on F]
    i0 = np.array(sub.E0, dtype=int)
    iF = np.array(sub.F, dtype=int)
    ext = np.zeros((chain.n, nF))
    ext[i0] = hit.H
    ext[iF] = np.eye(nF)
    G_full = chain.m[:, None] * (-chain.Q)
    A_energy = ext.T @ G_full @ ext

    # route (ii): Schur complement
    Qcheck = blocks.QFF + blocks.QF0 @ hit.H
    A_schur = blocks.mF[:, None] * (-Qcheck)

    residual = _rel_mat(A_energy, A_schur)
    if residual > ROUTE_RTOL:
        raise IdentityViolation(
            f"trace form routes disagree: max relative residual {residual:.3e}",
            residual=residual,
        )

    scale = max(np.max(np.abs(Qcheck)), 1.0)
    offdiag = Qcheck - np.diag(np.diag(Qcheck))
    if np.min(offdiag) < -1e-12 * scale:
        raise NonMarkovTrace(
            f"Schur complement has negative off-diagonal entry {np.min(offdiag):.3e}"
        )

    jump = 0.5 * blocks.mF[:, None] * Qcheck
    np.fill_diagonal(jump, 0.0)
    kill = blocks.mF * (-Qcheck.sum(axis=1))
    gen_mu = (blocks.mF / mu)[:, None] * Qcheck
    return TraceDecomposition(
        F=sub.F, mF=_freeze(blocks.mF.copy()), mu=_freeze(mu),
        form_matrix=_freeze(A_schur),
        generator=_freeze(Qcheck),
        time_changed_generator=_freeze(gen_mu),
        jump=_freeze(jump), kill=_freeze(kill),
        route_residual=residual,
    )


@dataclass(frozen=True)
class TraceJumpKill:
    """Jump matrix and killing vector of the trace process, with certificate.

    Built from Feller data as jump = U/2 off the diagonal plus the direct
    F-F jumps of the parent chain, and kill = V plus the parent killing on
    F.  ``jump_residual`` / ``kill_residual`` certify agreement with the
    Schur-complement decomposition.
    """

    jump: np.ndarray
    kill: np.ndarray
    jump_residual: float
    kill_residual: float


def trace_jump_kill(chain: SymmetricChain, F, rtol: float = IDENTITY_RTOL) -> TraceJumpKill:
    """Jump/kill data of the trace process from Feller measures, certified.

    Raises IdentityViolation if the Feller route and the Schur route differ
    beyond ``rtol``; on a valid chain this never fires.
    """
    sub = F if isinstance(F, SubsetSpec) else SubsetSpec.of(chain, F)
    blocks, hit, feller = feller_for(chain, sub)
    J, kappa = beurling_deny(chain)
    iF = np.array(sub.F, dtype=int)
    jump = 0.5 * feller.u_offdiag() + J[np.ix_(iF, iF)]
    kill = feller.V + kappa[iF]

    dec = trace_form(chain, sub)
    jr = _rel_mat(jump, dec.jump)
    kr = _rel_mat(np.atleast_2d(kill), np.atleast_2d(dec.kill))
    if max(jr, kr) > rtol:
        raise IdentityViolation(
            f"trace jump/kill identity failed: jump residual {jr:.3e}, kill residual {kr:.3e}",
            residual=max(jr, kr),
        )
    return TraceJumpKill(jump=_freeze(jump), kill=_freeze(kill),
                         jump_residual=jr, kill_residual=kr)


@dataclass(frozen=True)
class IdentityReport:
    """Relative residuals of the exact identities for one boundary vector u.

    jump_kill_balance: energy of the extension inside E0 balanced against
        Feller mass on F x F plus twice the supplementary mass.
    trace_energy: chain energy of the extension against the trace form
        assembled from U, V and the parent jump/kill data on F.
    feller_symmetry: asymmetry of U.
    alpha_monotonicity: largest violation of U_alpha increasing in alpha
        and bounded by U over the checked grid.
    """

    jump_kill_balance: float
    trace_energy: float
    feller_symmetry: float
    alpha_monotonicity: float

    def max_residual(self) -> float:
        return max(self.jump_kill_balance, self.trace_energy,
                   self.feller_symmetry, self.alpha_monotonicity)


def verify_identities(chain: SymmetricChain, F, u, alphas=None) -> IdentityReport:
    """Evaluate the exact identity suite at a boundary vector u.

    Residuals are relative to max(|lhs|, |rhs|, 1); callers and tests apply
    their own thresholds.
    """
    sub = F if isinstance(F, SubsetSpec) else SubsetSpec.of(chain, F)
    if alphas is None:
        alphas = [float(2**k) for k in range(0, 13, 2)]
    blocks, hit, feller = feller_for(chain, sub, alphas=alphas)
    u = np.asarray(u, dtype=float)
    i0 = np.array(sub.E0, dtype=int)
    iF = np.array(sub.F, dtype=int)

    hu = np.zeros(chain.n)
    hu[i0] = hit.H @ u
    hu[iF] = u

    em = energy_measure(chain, hu)
    J, kappa = beurling_deny(chain)

    # balance identity: energy measure of Hu on E0 plus boundary jump and
    # kill terms equals the Feller mass of u-differences plus twice V
    mu_e0 = float(em.jump[i0].sum() + em.kill[i0].sum())
    cross = float(2.0 * np.sum((hu[i0][:, None] - u[None, :]) ** 2 * J[np.ix_(i0, iF)]))
    kill_e0 = float(np.sum(hu[i0] ** 2 * kappa[i0]))
    lhs_a = mu_e0 + cross + kill_e0
    du2 = (u[:, None] - u[None, :]) ** 2
    rhs_a = float(np.sum(du2 * feller.U) + 2.0 * np.sum(u**2 * feller.V))
    res_a = _rel(lhs_a, rhs_a)

    # trace energy identity: E(Hu, Hu) against the assembled trace form
    lhs_b = chain.dirichlet_energy(hu)
    rhs_b = float(np.sum(du2 * (0.5 * feller.U + J[np.ix_(iF, iF)]))
                  + np.sum(u**2 * (feller.V + kappa[iF])))
    res_b = _rel(lhs_b, rhs_b)

    res_c = _rel_mat(feller.U, feller.U.T)

    # U_alpha must increase along the alpha grid and stay below U
    res_d = 0.0
    scale = max(np.max(np.abs(feller.U)), 1.0)
    prev = None
    for a in sorted(feller.alpha_family):
        ua = feller.alpha_family[a]
        if prev is not None:
            res_d = max(res_d, float(np.max(prev - ua)) / scale)
        res_d = max(res_d, float(np.max(ua - feller.U)) / scale)
        prev = ua
    res_d = max(res_d, 0.0)

    return IdentityReport(
        jump_kill_balance=res_a,
        trace_energy=res_b,
        feller_symmetry=res_c,
        alpha_monotonicity=res_d,
    )


def time_change_chain(chain: SymmetricChain, F, phi):
    """Slow the chain down off F by the density phi and recompute Feller data.

    The new chain Z carries measure phi*m on the complement of F and m on F,
    with rates scaled so that symmetry is preserved; its Feller data must
    coincide with the original (time-change invariance).  Returns
    (Z, SubsetSpec on Z, FellerData of Z).  State order is preserved.
    """
    sub = F if isinstance(F, SubsetSpec) else SubsetSpec.of(chain, F)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (len(sub.E0),) or np.any(phi <= 0):
        raise NonPositiveDensity("phi must be strictly positive on the complement of F")
    nu = chain.m.copy()
    i0 = np.array(sub.E0, dtype=int)
    nu[i0] = nu[i0] * phi
    QZ = (chain.m / nu)[:, None] * chain.Q
    Z = validate_chain(QZ, nu, labels=chain.labels)
    _, _, feller = feller_for(Z, sub.F)
    return Z, sub, feller


def hitting_time_measure(chain: SymmetricChain, F, g=None) -> np.ndarray:
    """Weights on F: mu(j) = sum_x g(x) m(x) P_x(first F state = F_j).

    States already in F hit immediately, so they contribute their own mass.
    With strictly positive g this is fully supported on F and is the
    canonical choice of a time-change measure living on F.
    """
    sub = F if isinstance(F, SubsetSpec) else SubsetSpec.of(chain, F)
    g = np.ones(chain.n) if g is None else np.asarray(g, dtype=float)
    if np.any(g <= 0):
        raise NonPositiveDensity("g must be strictly positive")
    blocks = split_blocks(chain, sub)
    hit = hitting_operator(blocks)
    i0 = np.array(sub.E0, dtype=int)
    iF = np.array(sub.F, dtype=int)
    out = g[iF] * chain.m[iF]
    out = out + hit.H.T @ (g[i0] * chain.m[i0])
    return out
