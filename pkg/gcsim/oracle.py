"""
Exact blocking probabilities for the static schemes.

A cell with S channels and cutoff g is a birth-death chain on 0..S: both
streams are admitted below S - g, only handoffs between S - g and S, and every
busy channel completes at rate mu. Complete sharing (g = 0) reduces to
Erlang-B.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from gcsim.errors import DomainError
from gcsim.model import SchemeKind

logger = logging.getLogger(__name__)

# partial sums above this are divided through to keep products finite
RESCALE_AT = 1e100
NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True)
class ChainSpec:
    S: int
    g: int
    lambda_n: float
    lambda_h: float
    mu: float

    def __post_init__(self) -> None:
        if self.S < 0:
            raise DomainError(f"S must be non-negative, got {self.S}")
        if not 0 <= self.g <= self.S:
            raise DomainError(f"g={self.g} outside 0..S={self.S}")
        if self.lambda_n < 0 or self.lambda_h < 0:
            raise DomainError("arrival rates must be non-negative")
        if not self.mu > 0:
            raise DomainError(f"mu must be positive, got {self.mu}")
        if not self.lambda_n + self.lambda_h > 0:
            raise DomainError("at least one arrival stream must have a positive rate")
        if not all(math.isfinite(x) for x in (self.lambda_n, self.lambda_h, self.mu)):
            raise DomainError("rates must be finite")

    @property
    def cutoff(self) -> int:
        """Occupancy at and above which new calls are refused."""
        return self.S - self.g

    def birth_rate(self, n: int) -> float:
        if n < self.cutoff:
            return self.lambda_n + self.lambda_h
        return self.lambda_h


@dataclass(frozen=True)
class SteadyState:
    p: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.p < 0):
            raise DomainError("negative state probability")
        if abs(math.fsum(self.p) - 1.0) > NORMALIZATION_TOL:
            raise DomainError("state probabilities do not sum to one")


def erlang_b(S: int, a: float) -> float:
    """Blocking of an M/M/S/S loss system via the stable recursion."""
    if S < 0 or a < 0:
        raise DomainError(f"erlang_b needs S >= 0 and a >= 0, got S={S}, a={a}")
    B = 1.0
    for k in range(1, int(S) + 1):
        B = a * B / (k + a * B)
    return min(max(B, 0.0), 1.0)


def cutoff_steady_state(spec: ChainSpec) -> SteadyState:
    weights = [1.0]
    running = 1.0
    for n in range(spec.S):
        w = weights[n] * spec.birth_rate(n) / ((n + 1) * spec.mu)
        weights.append(w)
        running += w
        if running > RESCALE_AT:
            weights = [x / running for x in weights]
            running = 1.0
    total = math.fsum(weights)
    return SteadyState(np.array([w / total for w in weights]))


def blocking_probabilities(ss: SteadyState, spec: ChainSpec) -> tuple[float, float]:
    """(P_new, P_handoff) under PASTA."""
    p_handoff = float(ss.p[spec.S])
    p_new = math.fsum(ss.p[spec.cutoff:])
    return min(p_new, 1.0), p_handoff


def solve_chain(spec: ChainSpec) -> tuple[float, float]:
    return blocking_probabilities(cutoff_steady_state(spec), spec)


def predicted_cbs_blocking(S: int, S_R: int, r: int, lambda_n: float, lambda_h: float, mu: float) -> tuple[float, float]:
    """Borrowing with static S_R moves the new-call cutoff to S - r."""
    if not 0 <= r <= S_R <= S:
        raise DomainError(f"need 0 <= r <= S_R <= S, got r={r}, S_R={S_R}, S={S}")
    return solve_chain(ChainSpec(S, r, lambda_n, lambda_h, mu))


def predicted_blocking(
    scheme: SchemeKind,
    S: int,
    S_R: int,
    r: int,
    lambda_n: float,
    lambda_h: float,
    mu: float,
) -> tuple[float, float]:
    """Static-guard prediction for any scheme, with S_R held fixed."""
    cutoffs = {
        SchemeKind.FCA: 0,
        SchemeKind.STATIC_GC: S_R,
        SchemeKind.DYNAMIC_GC: S_R,
        SchemeKind.DGCA_CBS: min(r, S_R),
    }
    return solve_chain(ChainSpec(S, cutoffs[scheme], lambda_n, lambda_h, mu))


def generator_matrix(spec: ChainSpec) -> np.ndarray:
    size = spec.S + 1
    Q = np.zeros((size, size))
    for n in range(size):
        if n < spec.S:
            Q[n, n + 1] = spec.birth_rate(n)
        if n > 0:
            Q[n, n - 1] = n * spec.mu
        Q[n, n] = -Q[n].sum()
    return Q


def dense_steady_state(spec: ChainSpec) -> SteadyState:
    """Brute-force pi Q = 0 with sum(pi) = 1, for cross-checking small chains."""
    A = generator_matrix(spec).T
    A[-1, :] = 1.0
    b = np.zeros(spec.S + 1)
    b[-1] = 1.0
    pi = linalg.solve(A, b)
    pi = np.clip(pi, 0.0, None)
    return SteadyState(pi / math.fsum(pi))
