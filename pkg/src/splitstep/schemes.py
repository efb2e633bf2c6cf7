"""Time stepping schemes for coupled first-order systems B du/dt + A u = f(t).

Three schemes share one state/transition interface:

* ``weighted``: implicit scheme with weight sigma; every transition solves one
  coupled SPD system with the full operator B + sigma*tau*A.
* ``factorized``: alternating triangular scheme for block-diagonal B.  The
  transition operator is (B + sigma*tau*A1) B^{-1} (B + sigma*tau*A2) with
  A = A1 + A2 the mutually adjoint triangular split, so each step costs two
  substitution sweeps that only invert diagonal blocks.
* ``three_level``: factorized three-level scheme for non-diagonal B, built
  from triangular splits of both A and B with a regularization weight
  epsilon on the diagonal.  Again only diagonal blocks are inverted.

All transitions sample the forcing at t = (n + sigma) * tau.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .blockops import (
    BlockDims,
    BlockOperator,
    BlockVector,
    DimensionMismatchError,
    TriangularPair,
    lincomb,
    triangular_split,
    weighted_norm,
)
from .linsolve import (
    DiagFactorization,
    SpdFactor,
    factor_spd,
    solve_block_lower,
    solve_block_upper,
    solve_spd_full,
)

logger = logging.getLogger(__name__)


class SchemeKind(str, Enum):
    WEIGHTED = "weighted"
    FACTORIZED = "factorized"
    THREE_LEVEL = "three_level"


class SchemeInapplicableError(ValueError):
    """The chosen scheme's structural preconditions do not hold."""


_STABILITY_THRESHOLD = {
    SchemeKind.WEIGHTED: 0.5,
    SchemeKind.FACTORIZED: 0.5,
    SchemeKind.THREE_LEVEL: 1.0,
}


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme selection plus step parameters.

    ``epsilon`` is the diagonal regularization weight of the three-level
    scheme and is ignored by the two-level schemes.
    """

    kind: SchemeKind
    sigma: float
    tau: float
    n_steps: int
    epsilon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma={self.sigma} outside the admitted range [0, 1]")
        if not self.tau > 0.0:
            raise ValueError(f"tau={self.tau} must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps={self.n_steps} must be a positive integer")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon={self.epsilon} must be positive")
        if self.sigma < self.stability_threshold:
            logger.warning(
                "sigma=%g is below the stability threshold %g of the %s scheme; "
                "no stability estimate is asserted",
                self.sigma,
                self.stability_threshold,
                self.kind.value,
            )

    @property
    def stability_threshold(self) -> float:
        return _STABILITY_THRESHOLD[self.kind]

    @property
    def in_hypothesis(self) -> bool:
        """Whether sigma meets the sufficient stability condition of the kind."""
        return self.sigma >= self.stability_threshold


@dataclass(frozen=True)
class ExponentialSumForcing:
    """Forcing of the form f(t) = sum_k exp(rate_k * t) * vec_k.

    This family is closed under the exact solution flow, which is what the
    closed-form reference solver exploits.
    """

    dims: BlockDims
    terms: tuple[tuple[float, BlockVector], ...]

    def __post_init__(self):
        terms = tuple((float(rate), vec) for rate, vec in self.terms)
        for _, vec in terms:
            if vec.dims.sizes != self.dims.sizes:
                raise DimensionMismatchError(f"forcing term dims {vec.dims.sizes} != {self.dims.sizes}")
        object.__setattr__(self, "terms", terms)

    def __call__(self, t: float) -> BlockVector:
        out = BlockVector.zeros(self.dims)
        for rate, vec in self.terms:
            out = out + float(np.exp(rate * t)) * vec
        return out


def zero_forcing(dims: BlockDims) -> ExponentialSumForcing:
    return ExponentialSumForcing(dims, ())


def constant_forcing(vec: BlockVector) -> ExponentialSumForcing:
    return ExponentialSumForcing(vec.dims, ((0.0, vec),))


@dataclass(frozen=True)
class EvolutionProblem:
    """Cauchy problem B du/dt + A u = f(t), u(0) = v0, on [0, T].

    Only dimensional consistency is validated here; builders that assemble
    concrete operators are responsible for certifying symmetry and positive
    definiteness before handing them over.
    """

    A: BlockOperator
    B: BlockOperator
    forcing: Callable[[float], BlockVector]
    v0: BlockVector
    T: float

    def __post_init__(self):
        if self.A.dims.sizes != self.B.dims.sizes:
            raise DimensionMismatchError(f"A dims {self.A.dims.sizes} != B dims {self.B.dims.sizes}")
        if self.v0.dims.sizes != self.A.dims.sizes:
            raise DimensionMismatchError(f"v0 dims {self.v0.dims.sizes} != A dims {self.A.dims.sizes}")
        if not self.T > 0.0:
            raise ValueError(f"T={self.T} must be positive")

    @property
    def dims(self) -> BlockDims:
        return self.A.dims


@dataclass(frozen=True)
class SchemeState:
    """Discrete state after n transitions: y approximates u(n * tau).

    ``y_prev`` is carried only by the three-level scheme from level 1 on.
    """

    n: int
    t: float
    y: BlockVector
    y_prev: Optional[BlockVector] = None


def forcing_sample(problem: EvolutionProblem, cfg: SchemeConfig, n: int) -> BlockVector:
    """Forcing evaluated at the weighted time (n + sigma) * tau of transition n."""
    return problem.forcing((n + cfg.sigma) * cfg.tau)


# ---------------------------------------------------------------------------
# Per-configuration workspaces: factorizations shared by all transitions.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedWorkspace:
    shifted: BlockOperator
    factor: SpdFactor


@dataclass(frozen=True)
class FactorizedWorkspace:
    split: TriangularPair
    lower: BlockOperator
    upper: BlockOperator
    diag: DiagFactorization


@dataclass(frozen=True)
class ThreeLevelWorkspace:
    c1_plus: BlockOperator
    c2_plus: BlockOperator
    c1_minus: BlockOperator
    c2_minus: BlockOperator
    diag: DiagFactorization
    startup: WeightedWorkspace


Workspace = "WeightedWorkspace | FactorizedWorkspace | ThreeLevelWorkspace"


def _shifted_operator(problem: EvolutionProblem, cfg: SchemeConfig) -> BlockOperator:
    return lincomb(1.0, problem.B, cfg.sigma * cfg.tau, problem.A)


def _prepare_weighted(problem: EvolutionProblem, cfg: SchemeConfig) -> WeightedWorkspace:
    shifted = _shifted_operator(problem, cfg)
    return WeightedWorkspace(shifted, factor_spd(shifted.to_dense(), context="B + sigma*tau*A"))


def _prepare_factorized(problem: EvolutionProblem, cfg: SchemeConfig) -> FactorizedWorkspace:
    if not problem.B.is_block_diagonal():
        raise SchemeInapplicableError(
            "factorized scheme needs a block-diagonal B; "
            "use the three-level scheme for coupled time derivatives"
        )
    split = triangular_split(problem.A)
    st = cfg.sigma * cfg.tau
    lower = lincomb(1.0, problem.B, st, split.lower)
    upper = lincomb(1.0, problem.B, st, split.upper)
    # lower and upper share identical diagonal blocks B_a + (sigma*tau/2) A_aa
    diag = DiagFactorization.from_operator(lower)
    return FactorizedWorkspace(split, lower, upper, diag)


def _prepare_three_level(problem: EvolutionProblem, cfg: SchemeConfig) -> ThreeLevelWorkspace:
    a_split = triangular_split(problem.A)
    b_split = triangular_split(problem.B)
    st = cfg.sigma * cfg.tau
    c1 = lincomb(1.0, b_split.lower, st, a_split.lower)
    c2 = lincomb(1.0, b_split.upper, st, a_split.upper)
    eye = BlockOperator.identity(problem.dims)
    c1_plus = lincomb(1.0, c1, cfg.epsilon, eye)
    c2_plus = lincomb(1.0, c2, cfg.epsilon, eye)
    c1_minus = lincomb(1.0, c1, -cfg.epsilon, eye)
    c2_minus = lincomb(1.0, c2, -cfg.epsilon, eye)
    diag = DiagFactorization.from_operator(c1_plus)
    return ThreeLevelWorkspace(c1_plus, c2_plus, c1_minus, c2_minus, diag, _prepare_weighted(problem, cfg))


def prepare(problem: EvolutionProblem, cfg: SchemeConfig):
    """Build the reusable per-configuration workspace for the chosen scheme."""
    if cfg.kind is SchemeKind.WEIGHTED:
        return _prepare_weighted(problem, cfg)
    if cfg.kind is SchemeKind.FACTORIZED:
        return _prepare_factorized(problem, cfg)
    return _prepare_three_level(problem, cfg)


def _residual_rhs(problem: EvolutionProblem, cfg: SchemeConfig, state: SchemeState, phi) -> BlockVector:
    if phi is None:
        phi = forcing_sample(problem, cfg, state.n)
    return cfg.tau * (phi - problem.A.apply(state.y))


def weighted_step(
    problem: EvolutionProblem,
    cfg: SchemeConfig,
    state: SchemeState,
    workspace: Optional[WeightedWorkspace] = None,
    phi: Optional[BlockVector] = None,
) -> SchemeState:
    """One transition of the weighted scheme: (B + sigma*tau*A) dy = tau (phi - A y)."""
    if workspace is None:
        workspace = _prepare_weighted(problem, cfg)
    g = _residual_rhs(problem, cfg, state, phi)
    dy = solve_spd_full(workspace.shifted, g, factor=workspace.factor)
    return SchemeState(state.n + 1, state.t + cfg.tau, state.y + dy)


def factorized_step(
    problem: EvolutionProblem,
    cfg: SchemeConfig,
    state: SchemeState,
    workspace: Optional[FactorizedWorkspace] = None,
    phi: Optional[BlockVector] = None,
) -> SchemeState:
    """One transition of the alternating triangular scheme.

    Solves (B + sigma*tau*A1) B^{-1} (B + sigma*tau*A2) dy = tau (phi - A y)
    as a forward sweep, a multiply by B, and a backward sweep.
    """
    if workspace is None:
        workspace = _prepare_factorized(problem, cfg)
    g = _residual_rhs(problem, cfg, state, phi)
    w = solve_block_lower(workspace.lower, g, workspace.diag)
    v = problem.B.apply(w)
    dy = solve_block_upper(workspace.upper, v, workspace.diag)
    return SchemeState(state.n + 1, state.t + cfg.tau, state.y + dy)


def three_level_init(
    problem: EvolutionProblem,
    cfg: SchemeConfig,
    workspace: Optional[ThreeLevelWorkspace] = None,
) -> SchemeState:
    """Startup transition for the three-level scheme.

    The first level is produced by one weighted step with the same sigma and
    tau, which keeps the overall first-order accuracy and supplies the pair
    (y^1, y^0) the three-level transitions consume.
    """
    if workspace is None:
        workspace = _prepare_three_level(problem, cfg)
    state0 = SchemeState(0, 0.0, problem.v0)
    stepped = weighted_step(problem, cfg, state0, workspace.startup)
    return SchemeState(stepped.n, stepped.t, stepped.y, y_prev=problem.v0)


def three_level_step(
    problem: EvolutionProblem,
    cfg: SchemeConfig,
    state: SchemeState,
    workspace: Optional[ThreeLevelWorkspace] = None,
    phi: Optional[BlockVector] = None,
) -> SchemeState:
    """One transition of the three-level factorized scheme.

    (C1 + eps E)(C2 + eps E) y^{n+1} = 2 eps tau (phi - A y^n)
        + (C1 + eps E)(C2 + eps E) y^n + (C1 - eps E)(C2 - eps E)(y^n - y^{n-1})
    with C1 = B1 + sigma*tau*A1 block lower and C2 = B2 + sigma*tau*A2 block
    upper, so the left side splits into two substitution sweeps.
    """
    if workspace is None:
        workspace = _prepare_three_level(problem, cfg)
    if state.y_prev is None:
        raise ValueError("three_level_step needs the previous level; run three_level_init first")
    if phi is None:
        phi = forcing_sample(problem, cfg, state.n)
    two_eps_tau = 2.0 * cfg.epsilon * cfg.tau
    psi = two_eps_tau * (phi - problem.A.apply(state.y))
    psi = psi + workspace.c1_plus.apply(workspace.c2_plus.apply(state.y))
    diff = state.y - state.y_prev
    psi = psi + workspace.c1_minus.apply(workspace.c2_minus.apply(diff))
    half = solve_block_lower(workspace.c1_plus, psi, workspace.diag)
    y_new = solve_block_upper(workspace.c2_plus, half, workspace.diag)
    return SchemeState(state.n + 1, state.t + cfg.tau, y_new, y_prev=state.y)


class RunObserver:
    """Hook points for per-level diagnostics during a run.

    Both hooks return a mapping of extra column values merged into the
    produced records.  ``initial`` sees the first state that the scheme's
    recurrences start from (level 0 for two-level schemes, level 1 for the
    three-level scheme).
    """

    def initial(self, problem: EvolutionProblem, cfg: SchemeConfig, state: SchemeState) -> dict:
        return {}

    def transition(
        self,
        problem: EvolutionProblem,
        cfg: SchemeConfig,
        prev: SchemeState,
        new: SchemeState,
        phi: BlockVector,
    ) -> dict:
        return {}


@dataclass(frozen=True)
class RunRecord:
    n: int
    t: float
    norm_a: float
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunLog:
    config: SchemeConfig
    records: tuple[RunRecord, ...]
    states: Optional[tuple[BlockVector, ...]]

    @property
    def final_state(self) -> BlockVector:
        if self.states is not None:
            return self.states[-1]
        raise ValueError("run was executed with keep_states=False")


class RunStepError(RuntimeError):
    """A transition failed; carries the index of the failing step."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


def _step_function(kind: SchemeKind):
    if kind is SchemeKind.WEIGHTED:
        return weighted_step
    if kind is SchemeKind.FACTORIZED:
        return factorized_step
    return three_level_step


def run(
    problem: EvolutionProblem,
    cfg: SchemeConfig,
    observers: Sequence[RunObserver] = (),
    keep_states: bool = True,
) -> RunLog:
    """March cfg.n_steps transitions from u(0) and record every level 0..n_steps."""
    workspace = prepare(problem, cfg)
    records: list[RunRecord] = []
    states: list[BlockVector] = []

    def record(state: SchemeState, extras: dict):
        records.append(RunRecord(state.n, state.t, weighted_norm(problem.A, state.y), extras))
        if keep_states:
            states.append(state.y)

    state = SchemeState(0, 0.0, problem.v0)
    if cfg.kind is SchemeKind.THREE_LEVEL:
        record(state, {})
        try:
            state = three_level_init(problem, cfg, workspace)
        except Exception as err:
            raise RunStepError(f"startup transition 0 -> 1 failed: {err}", step=0) from err
        remaining = cfg.n_steps - 1
    else:
        remaining = cfg.n_steps
    extras: dict = {}
    for obs in observers:
        extras.update(obs.initial(problem, cfg, state))
    record(state, extras)

    step = _step_function(cfg.kind)
    for _ in range(remaining):
        phi = forcing_sample(problem, cfg, state.n)
        try:
            new = step(problem, cfg, state, workspace, phi=phi)
        except Exception as err:
            raise RunStepError(f"transition {state.n} -> {state.n + 1} failed: {err}", step=state.n) from err
        extras = {}
        for obs in observers:
            extras.update(obs.transition(problem, cfg, state, new, phi))
        record(new, extras)
        state = new
    return RunLog(cfg, tuple(records), tuple(states) if keep_states else None)
