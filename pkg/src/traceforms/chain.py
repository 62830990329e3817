"""Finite symmetric Markov chains with killing: validation, killed blocks,
hitting operators, the energy functional and its zero-order potentials.

A chain is the triple (state set, symmetrizing weights m, rate matrix Q).
Off-diagonal Q entries are jump rates, diagonal entries are negative, and any
row-sum defect is a killing rate.  Detailed balance m(x) Q(x,y) = m(y) Q(y,x)
makes the chain symmetric in L2(m), which is what every identity in this
package rests on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    ChainValidationError,
    NegativeRate,
    NotExcessive,
    NotIrreducible,
    SingularKilledGenerator,
    SymmetryViolation,
)

BALANCE_RTOL = 1e-12
EXCESSIVE_RTOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SymmetricChain:
    """Validated symmetric chain.  Arrays are read-only after construction.

    Use :func:`validate_chain` to build one from raw data; constructing the
    dataclass directly skips every invariant check.
    """

    n: int
    m: np.ndarray
    Q: np.ndarray
    labels: tuple[str, ...]
    kill_rate: np.ndarray

    @property
    def conservative(self) -> bool:
        return bool(np.all(self.kill_rate <= 1e-15 * np.max(np.abs(self.Q))))

    @property
    def total_mass(self) -> float:
        return float(self.m.sum())

    def dirichlet_energy(self, f: np.ndarray, g: np.ndarray | None = None) -> float:
        """Bilinear form E(f,g) = <f, -Qg>_m of the chain."""
        f = np.asarray(f, dtype=float)
        g = f if g is None else np.asarray(g, dtype=float)
        return float(f @ (self.m * (-(self.Q @ g))))


@dataclass(frozen=True)
class SubsetSpec:
    """A nonempty proper subset F of states, with its complement cached."""

    F: tuple[int, ...]
    E0: tuple[int, ...]

    @classmethod
    def of(cls, chain: SymmetricChain, indices) -> "SubsetSpec":
        F = tuple(sorted({int(i) for i in indices}))
        if not F:
            raise ChainValidationError("trace set F must be nonempty")
        if any(i < 0 or i >= chain.n for i in F):
            raise ChainValidationError(f"F indices out of range 0..{chain.n - 1}")
        if len(F) == chain.n:
            raise ChainValidationError("F must be a proper subset of the states")
        E0 = tuple(i for i in range(chain.n) if i not in set(F))
        return cls(F=F, E0=E0)


def validate_chain(Q, m, labels=None, rtol: float = BALANCE_RTOL) -> SymmetricChain:
    """Check a raw rate table against every chain invariant.

    Raises the most specific error for the first violated invariant class,
    carrying the complete list of violations found.
    """
    Q = np.asarray(Q, dtype=float)
    m = np.asarray(m, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ChainValidationError(f"rate table must be square, got shape {Q.shape}")
    n = Q.shape[0]
    if m.shape != (n,):
        raise ChainValidationError(f"weights must have length {n}, got {m.shape}")
    if np.any(m <= 0) or not np.all(np.isfinite(m)):
        bad = np.nonzero(~((m > 0) & np.isfinite(m)))[0]
        raise ChainValidationError(f"weights must be positive and finite; bad states {bad.tolist()}")
    if labels is None:
        labels = tuple(str(i) for i in range(n))
    else:
        labels = tuple(str(x) for x in labels)
        if len(labels) != n:
            raise ChainValidationError("labels length mismatch")

    scale = max(np.max(np.abs(Q)), 1e-300)
    violations = []

    off = Q.copy()
    np.fill_diagonal(off, 0.0)
    for x, y in zip(*np.nonzero(off < 0)):
        violations.append(("negative_rate", f"Q({x},{y}) = {Q[x, y]} < 0"))
    row_sums = Q.sum(axis=1)
    for x in np.nonzero(row_sums > rtol * scale * n)[0]:
        violations.append(("negative_rate", f"row {x} sums to {row_sums[x]} > 0 (negative kill rate)"))

    mq = m[:, None] * Q
    gap = np.abs(mq - mq.T)
    tol = rtol * np.maximum(np.maximum(np.abs(mq), np.abs(mq.T)), scale * np.min(m) * 1e-3)
    np.fill_diagonal(gap, 0.0)
    bad = np.argwhere(gap > tol)
    for x, y in bad[bad[:, 0] < bad[:, 1]]:
        violations.append(
            ("symmetry", f"m({x})Q({x},{y}) = {mq[x, y]} != {mq[y, x]} = m({y})Q({y},{x})")
        )

    adj = csr_matrix((off > 0).astype(np.int8))
    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    if n_comp != 1:
        violations.append(("irreducible", f"{n_comp} strongly connected components"))

    if violations:
        # raise the most fundamental violation kind, carrying the full list
        msgs = "; ".join(v[1] for v in violations)
        kinds = {v[0] for v in violations}
        if "negative_rate" in kinds:
            raise NegativeRate(msgs, violations)
        if "symmetry" in kinds:
            raise SymmetryViolation(msgs, violations)
        raise NotIrreducible(msgs, violations)

    return SymmetricChain(n=n, m=_freeze(m), Q=_freeze(Q), labels=labels,
                          kill_rate=_freeze(np.maximum(-row_sums, 0.0)))


@dataclass(frozen=True)
class KilledBlocks:
    """Blocks of Q split along a trace set F, with the killed solver cached.

    The killed chain lives on E0 with generator Q00; its potential operator
    is (-Q00)^{-1}, realized by an LU factorization with one step of
    iterative refinement so identity residuals stay near machine precision.
    """

    F: tuple[int, ...]
    E0: tuple[int, ...]
    Q00: np.ndarray
    Q0F: np.ndarray
    QF0: np.ndarray
    QFF: np.ndarray
    m0: np.ndarray
    mF: np.ndarray
    kill0: np.ndarray
    killF: np.ndarray
    _lu: tuple = field(repr=False, default=None)

    def solve_potential(self, B: np.ndarray) -> np.ndarray:
        """X with (-Q00) X = B, refined once."""
        A = -self.Q00
        B = np.asarray(B, dtype=float)
        X = lu_solve(self._lu, B)
        X += lu_solve(self._lu, B - A @ X)
        return X

    def solve_resolvent(self, alpha: float, B: np.ndarray) -> np.ndarray:
        """X with (alpha I - Q00) X = B, refined once."""
        A = alpha * np.eye(len(self.E0)) - self.Q00
        lu = lu_factor(A)
        B = np.asarray(B, dtype=float)
        X = lu_solve(lu, B)
        X += lu_solve(lu, B - A @ X)
        return X


def split_blocks(chain: SymmetricChain, F) -> KilledBlocks:
    """Partition Q along F and factor the killed generator.

    ``F`` may be a SubsetSpec or an index iterable.
    """
    sub = F if isinstance(F, SubsetSpec) else SubsetSpec.of(chain, F)
    i0 = np.array(sub.E0, dtype=int)
    iF = np.array(sub.F, dtype=int)
    Q00 = chain.Q[np.ix_(i0, i0)]
    A = -Q00
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)
            lu = lu_factor(A)
    except np.linalg.LinAlgError as e:  # pragma: no cover - scipy raises ValueError instead
        raise SingularKilledGenerator(str(e)) from e
    diag_u = np.abs(np.diag(lu[0]))
    if diag_u.size and (np.min(diag_u) <= np.max(diag_u) * np.finfo(float).eps * len(i0)):
        raise SingularKilledGenerator(
            "killed generator block is numerically singular; "
            "F does not absorb the killed chain"
        )
    return KilledBlocks(
        F=sub.F, E0=sub.E0,
        Q00=_freeze(Q00),
        Q0F=_freeze(chain.Q[np.ix_(i0, iF)]),
        QF0=_freeze(chain.Q[np.ix_(iF, i0)]),
        QFF=_freeze(chain.Q[np.ix_(iF, iF)]),
        m0=_freeze(chain.m[i0]), mF=_freeze(chain.m[iF]),
        kill0=_freeze(chain.kill_rate[i0]), killF=_freeze(chain.kill_rate[iF]),
        _lu=lu,
    )


@dataclass(frozen=True)
class HittingData:
    """Hitting probabilities of F from E0 and escape probabilities.

    ``H[x, j]`` is the probability the chain started at E0-state x first
    meets F in state F[j]; ``q = 1 - H 1`` is the probability it never does.
    ``alpha_order(a)`` is the Laplace-discounted family, decreasing in a and
    converging to H as a drops to 0.
    """

    blocks: KilledBlocks
    H: np.ndarray
    q: np.ndarray
    alpha_family: dict

    def alpha_order(self, alpha: float) -> np.ndarray:
        if alpha == 0.0:
            return self.H
        got = self.alpha_family.get(alpha)
        if got is None:
            got = self.blocks.solve_resolvent(alpha, self.blocks.Q0F)
        return got


def hitting_operator(blocks: KilledBlocks, alphas=()) -> HittingData:
    """Hitting matrix H = (-Q00)^{-1} Q0F, escape vector, discounted family."""
    H = blocks.solve_potential(blocks.Q0F)
    q = 1.0 - H.sum(axis=1)
    family = {}
    for a in alphas:
        if a < 0:
            raise ValueError("alpha must be >= 0")
        family[a] = blocks.solve_resolvent(a, blocks.Q0F) if a > 0 else H
    if not np.all(np.isfinite(H)):
        raise SingularKilledGenerator("hitting probabilities are not finite")
    return HittingData(blocks=blocks, H=_freeze(H), q=_freeze(q), alpha_family=family)


def check_excessive(blocks: KilledBlocks, f: np.ndarray, rtol: float = EXCESSIVE_RTOL):
    """Raise NotExcessive unless Q00 f <= 0 up to a relative slack."""
    f = np.asarray(f, dtype=float)
    drift = blocks.Q00 @ f
    slack = rtol * max(np.max(np.abs(f)), 1.0) * max(np.max(np.abs(blocks.Q00)), 1.0)
    bad = np.nonzero(drift > slack)[0]
    if bad.size:
        raise NotExcessive(
            f"vector is not excessive for the killed chain at E0 positions {bad.tolist()}",
            states=[blocks.E0[i] for i in bad],
        )
    return f


def energy_functional(blocks: KilledBlocks, f, g) -> float:
    """Energy functional L(f,g) = <m0 (-Q00 f), g> for excessive f.

    On a finite chain this equals the small-time limit of
    (1/t) <f - P_t f, g>_m for the killed semigroup, with no limit needed.
    """
    f = check_excessive(blocks, f)
    g = np.asarray(g, dtype=float)
    return float((blocks.m0 * (-(blocks.Q00 @ f))) @ g)


def zero_order_potential(blocks: KilledBlocks, nu) -> np.ndarray:
    """Potential G nu of a nonnegative measure on E0, as a function on E0.

    Satisfies L(f, G nu) = sum f nu for every excessive f; exact on chains.
    """
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < 0):
        raise ValueError("nu must be nonnegative")
    return blocks.solve_potential(nu / blocks.m0)


def beurling_deny(chain: SymmetricChain):
    """Jumping matrix J(x,y) = m(x) Q(x,y) / 2 and killing vector m k.

    J is symmetric by detailed balance and carries zero diagonal; together
    they are the jump/kill part of the chain's canonical form decomposition.
    """
    J = 0.5 * chain.m[:, None] * chain.Q
    np.fill_diagonal(J, 0.0)
    kappa = chain.m * chain.kill_rate
    return J, kappa


@dataclass(frozen=True)
class EnergyMeasure:
    """Per-state energy-measure weights of a function: jump, kill, local.

    ``local`` is identically zero on a pure-jump chain; it is kept so sphere
    results and chain results decompose the same way.
    """

    jump: np.ndarray
    kill: np.ndarray
    local: np.ndarray

    def total(self) -> float:
        return float(self.jump.sum() + self.kill.sum() + self.local.sum())


def energy_measure(chain: SymmetricChain, f) -> EnergyMeasure:
    """Energy measure of f: jump(x) = m(x) sum_y Q(x,y)(f(y)-f(x))^2, etc.

    Satisfies (sum jump)/2 + sum kill = E(f,f).
    """
    f = np.asarray(f, dtype=float)
    diff2 = (f[None, :] - f[:, None]) ** 2
    off = chain.Q.copy()
    np.fill_diagonal(off, 0.0)
    jump = chain.m * np.sum(off * diff2, axis=1)
    kill = chain.m * chain.kill_rate * f**2
    return EnergyMeasure(jump=_freeze(jump), kill=_freeze(kill),
                         local=_freeze(np.zeros(chain.n)))


# -- plain-text chain files ---------------------------------------------------

def write_chain_file(path, chain: SymmetricChain, F=None):
    """Write the chain (and optionally F) in the plain-text exchange format."""
    lines = [f"states {chain.n}"]
    lines.append("m: " + " ".join(repr(float(v)) for v in chain.m))
    lines.append("Q:")
    for row in chain.Q:
        lines.append(" ".join(repr(float(v)) for v in row))
    if F is not None:
        idx = F.F if isinstance(F, SubsetSpec) else tuple(int(i) for i in F)
        lines.append("F: " + " ".join(str(i) for i in idx))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_chain_file(path):
    """Parse the plain-text format; returns (chain, SubsetSpec or None).

    Format: ``states n``, then ``m: v1 .. vn``, then ``Q:`` followed by n
    rows, then an optional ``F: i1 i2 ..``.  ``#`` starts a comment.
    """
    with open(path) as fh:
        raw = fh.read()
    tokens_by_line = []
    for line in raw.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens_by_line.append(line)
    if not tokens_by_line or not tokens_by_line[0].startswith("states"):
        raise ChainValidationError(f"{path}: expected leading 'states n' line")
    n = int(tokens_by_line[0].split()[1])
    i = 1
    if not tokens_by_line[i].startswith("m:"):
        raise ChainValidationError(f"{path}: expected 'm:' line")
    m = np.array([float(t) for t in tokens_by_line[i].split()[1:]], dtype=float)
    i += 1
    if tokens_by_line[i] != "Q:":
        raise ChainValidationError(f"{path}: expected 'Q:' line")
    i += 1
    rows = []
    for k in range(n):
        rows.append([float(t) for t in tokens_by_line[i + k].split()])
    Q = np.array(rows, dtype=float)
    i += n
    F = None
    if i < len(tokens_by_line) and tokens_by_line[i].startswith("F:"):
        F = [int(t) for t in tokens_by_line[i].split()[1:]]
    chain = validate_chain(Q, m)
    sub = SubsetSpec.of(chain, F) if F is not None else None
    return chain, sub
