"""Stability estimate checks, reference solutions, and convergence studies.

The estimate classes assemble, in dense form, exactly the weight operators
that appear in the level-wise stability bounds of each scheme and measure the
slack (bound minus achieved value) per transition.  Nonnegative slack up to
rounding is what the theory promises whenever its hypotheses hold; out of
hypothesis the same quantities can still be probed but assert nothing.

Reference solutions come from two deliberately independent routes: a
closed-form modal solution through the generalized symmetric eigenproblem,
and brute-force time stepping with a tiny step.  Tests cross-check the two
against each other rather than trusting either alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import eigh

from .blockops import BlockOperator, BlockVector, CertificateError, triangular_split, weighted_norm
from .linsolve import SpdFactor, factor_spd
from .schemes import (
    EvolutionProblem,
    ExponentialSumForcing,
    RunLog,
    RunObserver,
    SchemeConfig,
    SchemeKind,
    SchemeState,
    forcing_sample,
    prepare,
    run,
    weighted_step,
)


class UnsupportedForcingError(ValueError):
    """Closed-form reference needs an exponential-sum forcing."""


class AssemblyError(RuntimeError):
    """A derived operator lost a structural property it must have."""


def _quad(mat: np.ndarray, vec: np.ndarray) -> float:
    return float(vec @ (mat @ vec))


def _symmetrize_checked(mat: np.ndarray, context: str, tol: float = 1e-10) -> np.ndarray:
    defect = float(np.abs(mat - mat.T).max())
    scale = max(float(np.abs(mat).max()), 1e-300)
    if defect > tol * scale:
        raise AssemblyError(f"{context}: expected symmetric matrix, defect {defect:.3e}")
    return 0.5 * (mat + mat.T)


@dataclass(frozen=True)
class EnergyRecord:
    """One checked transition: achieved value, level-wise bound, and slack."""

    n: int
    t: float
    norm_a: float
    energy: Optional[float]
    bound_rhs: float
    slack: float


class TwoLevelEstimate:
    """Level-wise bound for the weighted and factorized schemes.

    The bound reads ||y^{n+1}||_A^2 <= ||y^n||_A^2 + (tau/2) (W^{-1} phi, phi)
    with W = B + (sigma - 1/2) tau A for the weighted scheme and the same
    plus sigma^2 tau^2 A1 B^{-1} A2 for the factorized one.  Constructing the
    estimate factors W, so an indefinite W (possible out of hypothesis)
    raises instead of producing meaningless numbers.
    """

    def __init__(self, problem: EvolutionProblem, cfg: SchemeConfig):
        if cfg.kind not in (SchemeKind.WEIGHTED, SchemeKind.FACTORIZED):
            raise ValueError(f"two-level estimate does not apply to kind {cfg.kind.value!r}")
        self.cfg = cfg
        self._a = problem.A.to_dense()
        bd = problem.B.to_dense()
        w = bd + (cfg.sigma - 0.5) * cfg.tau * self._a
        if cfg.kind is SchemeKind.FACTORIZED:
            split = triangular_split(problem.A)
            a1 = split.lower.to_dense()
            a2 = split.upper.to_dense()
            st = cfg.sigma * cfg.tau
            w = w + st**2 * (a1 @ np.linalg.solve(bd, a2))
        self._weight_factor = factor_spd(_symmetrize_checked(w, "estimate weight"), context="estimate weight")

    def forcing_term(self, phi: BlockVector) -> float:
        """(tau/2) (W^{-1} phi, phi)."""
        f = phi.to_flat()
        return 0.5 * self.cfg.tau * float(f @ self._weight_factor.solve(f))

    def value(self, y: BlockVector) -> float:
        return _quad(self._a, y.to_flat())

    def bound_rhs(self, y_n: BlockVector, phi: BlockVector) -> float:
        return self.value(y_n) + self.forcing_term(phi)

    def slack(self, y_n: BlockVector, y_np1: BlockVector, phi: BlockVector) -> float:
        return self.bound_rhs(y_n, phi) - self.value(y_np1)


def two_level_estimate_slack(
    problem: EvolutionProblem,
    cfg: SchemeConfig,
    y_n: BlockVector,
    y_np1: BlockVector,
    phi: BlockVector,
) -> float:
    return TwoLevelEstimate(problem, cfg).slack(y_n, y_np1, phi)


class ThreeLevelEstimate:
    """Energy bound for the three-level factorized scheme.

    With C1 = B1 + sigma*tau*A1, C2 = B2 + sigma*tau*A2, C = B + sigma*tau*A,
    D = (tau / (2 eps)) (C1 C2 + eps^2 I) and R = D - (tau^2/4) A, the energy

        E_n = ||(y^n + y^{n-1})/2||_A^2 + ||(y^n - y^{n-1})/tau||_R^2

    obeys E_{n+1} <= E_n + (tau/2) (C^{-1} phi^n, phi^n) for sigma >= 1,
    where R is positive definite.  R stays assembled for any admitted sigma
    so out-of-hypothesis behavior can be probed.
    """

    def __init__(self, problem: EvolutionProblem, cfg: SchemeConfig):
        if cfg.kind is not SchemeKind.THREE_LEVEL:
            raise ValueError(f"three-level estimate does not apply to kind {cfg.kind.value!r}")
        self.cfg = cfg
        self._a = problem.A.to_dense()
        a_split = triangular_split(problem.A)
        b_split = triangular_split(problem.B)
        st = cfg.sigma * cfg.tau
        c1 = b_split.lower.to_dense() + st * a_split.lower.to_dense()
        c2 = b_split.upper.to_dense() + st * a_split.upper.to_dense()
        n = self._a.shape[0]
        d = (cfg.tau / (2.0 * cfg.epsilon)) * (c1 @ c2 + cfg.epsilon**2 * np.eye(n))
        r = d - (cfg.tau**2 / 4.0) * self._a
        self._r = _symmetrize_checked(r, "difference weight")
        c = problem.B.to_dense() + st * self._a
        self._c_factor = factor_spd(_symmetrize_checked(c, "transition operator"), context="B + sigma*tau*A")

    def energy(self, y: BlockVector, y_prev: BlockVector) -> float:
        mean = 0.5 * (y.to_flat() + y_prev.to_flat())
        rate = (y.to_flat() - y_prev.to_flat()) / self.cfg.tau
        return _quad(self._a, mean) + _quad(self._r, rate)

    def forcing_term(self, phi: BlockVector) -> float:
        """(tau/2) (C^{-1} phi, phi)."""
        f = phi.to_flat()
        return 0.5 * self.cfg.tau * float(f @ self._c_factor.solve(f))

    def slack(self, prev: SchemeState, new: SchemeState, phi: BlockVector) -> float:
        if prev.y_prev is None or new.y_prev is None:
            raise ValueError("three-level slack needs states carrying their previous level")
        bound = self.energy(prev.y, prev.y_prev) + self.forcing_term(phi)
        return bound - self.energy(new.y, new.y_prev)

    def diff_weight(self) -> np.ndarray:
        return self._r

    def diff_weight_min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self._r)[0])


def three_level_energy(
    problem: EvolutionProblem, cfg: SchemeConfig, y: BlockVector, y_prev: BlockVector
) -> float:
    return ThreeLevelEstimate(problem, cfg).energy(y, y_prev)


def diff_weight_min_eig(problem: EvolutionProblem, cfg: SchemeConfig) -> float:
    return ThreeLevelEstimate(problem, cfg).diff_weight_min_eig()


def factorized_operator_dense(
    problem: EvolutionProblem, cfg: SchemeConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Product and expanded dense forms of the factorized transition operator.

    Product form: (B + st A1) B^{-1} (B + st A2).  Expanded form:
    B + st A + st^2 A1 B^{-1} A2, st = sigma * tau.  Their agreement is an
    exact operator identity, so any discrepancy beyond rounding is a bug.
    """
    split = triangular_split(problem.A)
    bd = problem.B.to_dense()
    a1 = split.lower.to_dense()
    a2 = split.upper.to_dense()
    st = cfg.sigma * cfg.tau
    product = (bd + st * a1) @ np.linalg.solve(bd, bd + st * a2)
    expanded = bd + st * problem.A.to_dense() + st**2 * (a1 @ np.linalg.solve(bd, a2))
    return product, expanded


def factorized_operator_identity_error(problem: EvolutionProblem, cfg: SchemeConfig) -> float:
    """Relative entrywise gap between the product and expanded forms."""
    product, expanded = factorized_operator_dense(problem, cfg)
    scale = max(float(np.abs(expanded).max()), 1e-300)
    return float(np.abs(product - expanded).max()) / scale


def factorized_operator_psd_margin(problem: EvolutionProblem, cfg: SchemeConfig) -> float:
    """Smallest eigenvalue of (transition operator) - (B + sigma*tau*A).

    The gap equals sigma^2 tau^2 A1 B^{-1} A2, which is positive semidefinite
    because A2 is the adjoint of A1, so the margin must not dip below
    rounding level.
    """
    product, _ = factorized_operator_dense(problem, cfg)
    st = cfg.sigma * cfg.tau
    gap = product - problem.B.to_dense() - st * problem.A.to_dense()
    return float(np.linalg.eigvalsh(0.5 * (gap + gap.T))[0])


class EstimateObserver(RunObserver):
    """Attaches the two-level slack to every transition of a run."""

    def __init__(self):
        self.records: list[EnergyRecord] = []
        self.min_slack = math.inf
        self._estimate: Optional[TwoLevelEstimate] = None
        self._a: Optional[BlockOperator] = None

    def initial(self, problem, cfg, state):
        self._estimate = TwoLevelEstimate(problem, cfg)
        self._a = problem.A
        return {}

    def transition(self, problem, cfg, prev, new, phi):
        est = self._estimate
        bound = est.bound_rhs(prev.y, phi)
        slack = bound - est.value(new.y)
        self.min_slack = min(self.min_slack, slack)
        self.records.append(
            EnergyRecord(new.n, new.t, weighted_norm(self._a, new.y), None, bound, slack)
        )
        return {"slack": slack}


class EnergyObserver(RunObserver):
    """Attaches the three-level energy and its slack to every transition."""

    def __init__(self):
        self.records: list[EnergyRecord] = []
        self.min_slack = math.inf
        self.initial_energy: Optional[float] = None
        self._estimate: Optional[ThreeLevelEstimate] = None
        self._a: Optional[BlockOperator] = None

    def initial(self, problem, cfg, state):
        self._estimate = ThreeLevelEstimate(problem, cfg)
        self._a = problem.A
        self.initial_energy = self._estimate.energy(state.y, state.y_prev)
        return {"energy": self.initial_energy}

    def transition(self, problem, cfg, prev, new, phi):
        est = self._estimate
        energy_new = est.energy(new.y, new.y_prev)
        bound = est.energy(prev.y, prev.y_prev) + est.forcing_term(phi)
        slack = bound - energy_new
        self.min_slack = min(self.min_slack, slack)
        self.records.append(
            EnergyRecord(new.n, new.t, weighted_norm(self._a, new.y), energy_new, bound, slack)
        )
        return {"energy": energy_new, "slack": slack}


def two_level_run_slacks(
    problem: EvolutionProblem, cfg: SchemeConfig, log: RunLog
) -> list[float]:
    """Recompute the two-level slack for every transition of a finished run.

    Works from the stored states alone, so it is an independent route to the
    same numbers the streaming observer produces.
    """
    if log.states is None:
        raise ValueError("run log carries no states; rerun with keep_states=True")
    est = TwoLevelEstimate(problem, cfg)
    slacks = []
    for n in range(len(log.states) - 1):
        phi = forcing_sample(problem, cfg, n)
        slacks.append(est.slack(log.states[n], log.states[n + 1], phi))
    return slacks


def three_level_run_slacks(
    problem: EvolutionProblem, cfg: SchemeConfig, log: RunLog
) -> list[float]:
    """Recompute the three-level energy slack for transitions from level 1 on.

    The startup transition produces level 1 by a different recurrence and has
    no energy bound of its own, so the first entry corresponds to the
    transition from (y^1, y^0) to (y^2, y^1).
    """
    if log.states is None:
        raise ValueError("run log carries no states; rerun with keep_states=True")
    est = ThreeLevelEstimate(problem, cfg)
    slacks = []
    for n in range(1, len(log.states) - 1):
        phi = forcing_sample(problem, cfg, n)
        bound = est.energy(log.states[n], log.states[n - 1]) + est.forcing_term(phi)
        slacks.append(bound - est.energy(log.states[n + 1], log.states[n]))
    return slacks


# ---------------------------------------------------------------------------
# Reference solutions.
# ---------------------------------------------------------------------------


def _phi1(s: np.ndarray) -> np.ndarray:
    """(exp(s) - 1) / s, continuous through s = 0."""
    out = np.ones_like(s)
    nz = s != 0.0
    out[nz] = np.expm1(s[nz]) / s[nz]
    return out


def reference_solution(problem: EvolutionProblem, t: float) -> BlockVector:
    """Exact solution at time t via the generalized modal decomposition.

    Eigenpairs of A v = lambda B v diagonalize the system; each modal
    coefficient evolves by exp(-lambda t) plus a Duhamel term per forcing
    rate.  Near-resonant rates (lambda + rate close to 0) go through a
    stabilized phi1 evaluation instead of the difference quotient.
    """
    forcing = problem.forcing
    if not isinstance(forcing, ExponentialSumForcing):
        raise UnsupportedForcingError(
            "closed-form reference requires an exponential-sum forcing; "
            f"got {type(forcing).__name__}"
        )
    ad = problem.A.to_dense()
    bd = problem.B.to_dense()
    lam, modes = eigh(ad, bd)
    if lam[0] <= 0.0:
        raise CertificateError(f"generalized spectrum must be positive, min is {lam[0]:.6e}")
    z = np.exp(-lam * t) * (modes.T @ (bd @ problem.v0.to_flat()))
    for rate, vec in forcing.terms:
        g = modes.T @ vec.to_flat()
        s = (lam + rate) * t
        duhamel = np.empty_like(lam)
        small = np.abs(s) < 0.5
        duhamel[small] = t * np.exp(-lam[small] * t) * _phi1(s[small])
        duhamel[~small] = (np.exp(rate * t) - np.exp(-lam[~small] * t)) / (lam[~small] + rate)
        z += duhamel * g
    return BlockVector.from_flat(problem.dims, modes @ z)


def tiny_step_reference(problem: EvolutionProblem, t: float, tau_ref: float) -> BlockVector:
    """Brute-force reference: half-weight stepping with a very small step.

    Independent of the modal route; the two must agree to the square of the
    tiny step times the solution scale.
    """
    if not t > 0.0:
        return problem.v0
    n = max(1, round(t / tau_ref))
    cfg = SchemeConfig(SchemeKind.WEIGHTED, sigma=0.5, tau=t / n, n_steps=n)
    workspace = prepare(problem, cfg)
    state = SchemeState(0, 0.0, problem.v0)
    for _ in range(n):
        state = weighted_step(problem, cfg, state, workspace)
    return state.y


# ---------------------------------------------------------------------------
# Convergence and scheme comparison studies.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    tau: float
    n_steps: int
    error_a: float
    order: Optional[float]


@dataclass(frozen=True)
class ConvergenceReport:
    kind: SchemeKind
    sigma: float
    rows: tuple[ConvergenceRow, ...]

    @property
    def finest_order(self) -> float:
        if len(self.rows) < 2 or self.rows[-1].order is None:
            raise ValueError("need at least two step sizes to report an order")
        return self.rows[-1].order


def _steps_for(T: float, tau: float) -> int:
    n = round(T / tau)
    if n < 1 or abs(n * tau - T) > 1e-9 * T:
        raise ValueError(f"tau={tau} does not divide the horizon T={T}")
    return n


def convergence_study(
    problem: EvolutionProblem,
    cfg_base: SchemeConfig,
    taus: Sequence[float],
    reference: Optional[BlockVector] = None,
) -> ConvergenceReport:
    """Final-time A-norm errors and observed orders over a ladder of steps.

    The reference defaults to the closed-form solution when the forcing
    supports it, and otherwise to tiny-step brute force well below the finest
    ladder step.
    """
    taus = sorted((float(t) for t in taus), reverse=True)
    if reference is None:
        try:
            reference = reference_solution(problem, problem.T)
        except UnsupportedForcingError:
            reference = tiny_step_reference(problem, problem.T, min(taus) / 1024.0)
    rows: list[ConvergenceRow] = []
    prev_tau = prev_err = None
    for tau in taus:
        n = _steps_for(problem.T, tau)
        log = run(problem, replace(cfg_base, tau=tau, n_steps=n), keep_states=True)
        err = weighted_norm(problem.A, log.final_state - reference)
        order = None
        if prev_err is not None and err > 0.0 and prev_err > 0.0:
            order = math.log(prev_err / err) / math.log(prev_tau / tau)
        rows.append(ConvergenceRow(tau, n, err, order))
        prev_tau, prev_err = tau, err
    return ConvergenceReport(cfg_base.kind, cfg_base.sigma, tuple(rows))


@dataclass(frozen=True)
class CompareRow:
    tau: float
    n_steps: int
    max_diff_a: float
    final_diff_a: float


@dataclass(frozen=True)
class CompareReport:
    sigma: float
    rows: tuple[CompareRow, ...]

    @property
    def max_diff_ratios(self) -> tuple[Optional[float], ...]:
        """Coarse-to-fine ratios of the max trajectory difference."""
        out = []
        for prev, cur in zip(self.rows, self.rows[1:]):
            out.append(prev.max_diff_a / cur.max_diff_a if cur.max_diff_a > 0.0 else None)
        return tuple(out)


def compare_schemes(
    problem: EvolutionProblem, cfg_base: SchemeConfig, taus: Sequence[float]
) -> CompareReport:
    """Trajectory gap between the weighted and factorized schemes per step size.

    Both schemes run from the same data with the same sigma; the per-level
    A-norm difference is maxed over the whole horizon.
    """
    taus = sorted((float(t) for t in taus), reverse=True)
    rows: list[CompareRow] = []
    for tau in taus:
        n = _steps_for(problem.T, tau)
        cfg_w = replace(cfg_base, kind=SchemeKind.WEIGHTED, tau=tau, n_steps=n)
        cfg_f = replace(cfg_base, kind=SchemeKind.FACTORIZED, tau=tau, n_steps=n)
        log_w = run(problem, cfg_w, keep_states=True)
        log_f = run(problem, cfg_f, keep_states=True)
        diffs = [
            weighted_norm(problem.A, yw - yf) for yw, yf in zip(log_w.states, log_f.states)
        ]
        rows.append(CompareRow(tau, n, max(diffs), diffs[-1]))
    return CompareReport(cfg_base.sigma, tuple(rows))
