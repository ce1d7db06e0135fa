"""
Backward Solver Service - Kolmogorov and Thiele backward equations.

Markov models are swept backward over a time grid whose nodes include every atom,
reset point and segment bound. Between nodes the linear system dV/dt = A(t) V + c(t)
is advanced either exactly (matrix exponential) or by implicit Euler; at atom nodes
the left limit is obtained from

    V(t-) (1 + dPhi) = V(t) + dB + sum_j (b^{ij}(t) + V^j(t) - V^i(t)) dLambda^{ij}.

Semi-Markov models are solved along characteristics on a uniform (time, duration) grid.
"""

import logging
import math
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy.linalg import expm

from ..exceptions import InputError, PreconditionError, RegimeError
from ..models.grid import ReserveField, TimeGrid
from ..models.insurance import CanonicalInsuranceModel
from ..models.paths import Path
from ..models.reports import DiscreteTable, ResidualInterval, ResidualReport
from .kernels import gauss_legendre, payment_value, resolve, resolve_duration
from .model_inspector import ModelInspectorService

if TYPE_CHECKING:
    from ..config import Settings

logger = logging.getLogger("thielekit.backward")

SCHEMES = ("exact", "implicit_euler")


# ===== Markov Coefficients =====


class MarkovSystem:
    """
    Coefficients of the backward system of a Markov model.

    A_ii = phi^i + sum_j mu^{ij}, A_ij = -mu^{ij}, c_i = -beta^i - sum_j b^{ij} mu^{ij}.
    Without cash flow the system is the Kolmogorov one (phi, beta and b vanish).
    """

    def __init__(
        self,
        model: CanonicalInsuranceModel,
        with_cashflow: bool = True,
        markov_only: bool = False,
    ):
        self.model = model
        self.states = list(model.labels)
        self.n = len(self.states)
        self.index = {s: k for k, s in enumerate(self.states)}
        self.with_cashflow = with_cashflow
        self.rates = []
        for i in self.states:
            for j, rate in model.row(i).items():
                if markov_only and rate.dependence != "markov":
                    continue
                payment = model.transition(i, j) if with_cashflow else None
                self.rates.append((self.index[i], self.index[j], resolve(rate), payment))
        self.interest = []
        self.sojourn = []
        if with_cashflow:
            for i in self.states:
                phi = model.interest(i)
                if not phi.is_zero:
                    self.interest.append((self.index[i], resolve(phi)))
                beta = model.sojourn(i)
                if not beta.is_zero and not (markov_only and beta.dependence != "markov"):
                    self.sojourn.append((self.index[i], resolve(beta)))
        self.atom_times = set()
        for _, _, res, _ in self.rates:
            self.atom_times.update(t for t, _ in res.atoms)
        for _, res in (*self.interest, *self.sojourn):
            self.atom_times.update(t for t, _ in res.atoms)
        self.resets = {ii: set() for ii in range(self.n)}
        for ii, _, res, _ in self.rates:
            self.resets[ii].update(res.resets)

    def breakpoints(self) -> set[float]:
        points: set[float] = set()
        for _, _, res, payment in self.rates:
            points |= res.breakpoints()
            if payment is not None:
                points.update(payment.breakpoints())
        for _, res in (*self.interest, *self.sojourn):
            points |= res.breakpoints()
        return points

    def coefficients(self, t: float, left: bool = False) -> tuple[np.ndarray, np.ndarray]:
        A = np.zeros((self.n, self.n))
        c = np.zeros(self.n)
        for ii, jj, res, payment in self.rates:
            mu = res.density(t, left)
            if mu == 0.0:
                continue
            A[ii, ii] += mu
            A[ii, jj] -= mu
            if payment is not None:
                c[ii] -= payment_value(payment, t, left=left) * mu
        for ii, res in self.interest:
            A[ii, ii] += res.density(t, left)
        for ii, res in self.sojourn:
            c[ii] -= res.density(t, left)
        return A, c

    def constant_on(self, a: float, b: float) -> tuple[bool, bool]:
        """Whether A and c are constant on the cell (a, b)."""
        a_const = all(res.is_constant_on(a, b) for _, _, res, _ in self.rates) and all(
            res.is_constant_on(a, b) for _, res in self.interest
        )
        c_const = (
            a_const
            and all(res.is_constant_on(a, b) for _, res in self.sojourn)
            and all(p is None or p.is_piecewise_constant for _, _, _, p in self.rates)
        )
        return a_const, c_const

    def averaged(self, a: float, b: float, cap: float) -> tuple[np.ndarray, np.ndarray, bool]:
        """Cell averages of A and c; pole hazards are capped at `cap` per cell."""
        h = b - a
        A = np.zeros((self.n, self.n))
        c = np.zeros(self.n)
        has_pole = False
        mid = 0.5 * (a + b)
        for ii, jj, res, payment in self.rates:
            total = res.integral(a, b)
            if any(p.is_pole and p.start < b and p.end > a for p in res.pieces):
                has_pole = True
                total = min(total, cap)
            mu = total / h
            A[ii, ii] += mu
            A[ii, jj] -= mu
            if payment is not None:
                c[ii] -= payment_value(payment, mid) * mu
        for ii, res in self.interest:
            A[ii, ii] += res.integral(a, b) / h
        for ii, res in self.sojourn:
            c[ii] -= res.integral(a, b) / h
        return A, c, has_pole

    def atom_update(self, t: float, V: np.ndarray) -> np.ndarray:
        """Left limit V(t-) from V(t) at an atom instant."""
        if t not in self.atom_times:
            return V
        num = V.copy()
        for ii, res in self.sojourn:
            num[ii] += res.atom_at(t)
        for ii, jj, res, payment in self.rates:
            mass = res.atom_at(t)
            if mass:
                num[ii] += (payment_value(payment, t) + V[jj] - V[ii]) * mass
        for ii, res in self.interest:
            num[ii] /= 1.0 + res.atom_at(t)
        return num


# ===== Service =====


class BackwardSolverService:
    """
    Service for the backward equations.

    Solvers never read the initial distribution alpha.
    """

    def __init__(self, settings: "Settings" = None):
        """Initialize the solver with optional settings injection."""
        if settings is None:
            from ..config import settings as default_settings

            settings = default_settings
        self._settings = settings
        self._inspector = ModelInspectorService(settings)
        self._expm_cache: dict[tuple, np.ndarray] = {}

    # ----- grids -----

    def build_grid(
        self,
        model: CanonicalInsuranceModel,
        h: Optional[float] = None,
        extra: Optional[list[float]] = None,
        horizon: Optional[float] = None,
    ) -> TimeGrid:
        """Grid on [0, T] with step at most h through every mandatory point."""
        h = h or self._settings.DEFAULT_STEP
        if not h > 0.0:
            raise InputError("grid step must be positive", field="h")
        T = horizon if horizon is not None else model.horizon
        points = {0.0, T, *(extra or [])}
        if self._inspector.detect_regime(model) in ("markov", "discrete"):
            points |= MarkovSystem(model).breakpoints()
        mandatory = sorted(p for p in points if 0.0 <= p <= T)
        filled: list[float] = [mandatory[0]]
        for a, b in zip(mandatory, mandatory[1:]):
            cells = max(1, math.ceil((b - a) / h - 1e-9))
            filled.extend(np.linspace(a, b, cells + 1)[1:].tolist())
            filled[-1] = b
        return TimeGrid(points=filled, step=h, mandatory=mandatory)

    def _grid_for(
        self,
        model: CanonicalInsuranceModel,
        grid: Optional[TimeGrid],
        h: Optional[float],
        horizon: Optional[float] = None,
    ) -> TimeGrid:
        if grid is None:
            return self.build_grid(model, h, horizon=horizon)
        required = self.build_grid(model, grid.step, horizon=grid.horizon).mandatory
        return grid.with_points(required)

    def _regime(self, model: CanonicalInsuranceModel, operation: str) -> str:
        regime = self._inspector.detect_regime(model)
        if regime == "path_dependent":
            raise RegimeError(
                regime, operation, hint="use the Monte Carlo estimators of the simulator"
            )
        return regime

    # ----- Markov stepping -----

    def _expm(self, M: np.ndarray, h: float) -> np.ndarray:
        key = (M.tobytes(), h)
        E = self._expm_cache.get(key)
        if E is None:
            if len(self._expm_cache) > 20000:
                self._expm_cache.clear()
            E = expm(M * h)
            self._expm_cache[key] = E
        return E

    def _augmented(self, A: np.ndarray, c: np.ndarray) -> np.ndarray:
        n = len(c)
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = -A
        M[:n, n] = -c
        return M

    def _step(
        self, system: MarkovSystem, a: float, b: float, V: np.ndarray, scheme: str
    ) -> np.ndarray:
        """Propagate V(b-) back to V(a) across an atom-free cell."""
        h = b - a
        n = system.n
        if scheme == "implicit_euler":
            A, c = system.coefficients(a)
            return np.linalg.solve(np.eye(n) + h * A, V - h * c)
        a_const, c_const = system.constant_on(a, b)
        if a_const and c_const:
            A, c = system.coefficients(a)
            E = self._expm(self._augmented(A, c), h)
            return E[:n, :n] @ V + E[:n, n]
        if a_const:
            A, _ = system.coefficients(a)
            has_pole = False
        else:
            A, c_bar, has_pole = system.averaged(a, b, self._settings.POLE_CAP)
            if has_pole:
                E = self._expm(self._augmented(A, c_bar), h)
                return E[:n, :n] @ V + E[:n, n]
        x, w = gauss_legendre(self._settings.QUADRATURE_NODES)
        out = self._expm(-A, h) @ V
        for xq, wq in zip(x, w):
            _, c = system.coefficients(b - h * float(xq))
            out -= h * float(wq) * (self._expm(-A, h * (1.0 - float(xq))) @ c)
        return out

    def _markov_sweep(
        self, system: MarkovSystem, grid: TimeGrid, terminal: np.ndarray, scheme: str
    ) -> tuple[np.ndarray, np.ndarray]:
        times = grid.points
        K = len(times)
        values = np.empty((K, system.n))
        left = np.empty((K, system.n))
        V = terminal.astype(float).copy()
        values[-1] = V
        V = system.atom_update(times[-1], V)
        left[-1] = V
        for k in range(K - 2, -1, -1):
            V = self._step(system, times[k], times[k + 1], V, scheme)
            values[k] = V
            if times[k] > 0.0:
                V = system.atom_update(times[k], V)
            left[k] = V
        return values, left

    def _attach_dense(
        self, field: ReserveField, system: MarkovSystem, scheme: str
    ) -> ReserveField:
        if scheme != "exact":
            return field
        times = field.times

        def dense(t: float) -> np.ndarray:
            k = int(np.searchsorted(times, t, side="right")) - 1
            k = min(max(k, 0), len(times) - 2)
            if t == times[k]:
                return field.values[k].copy()
            return self._step(system, t, float(times[k + 1]), field.left_values[k + 1], scheme)

        return field.attach_dense(dense)

    def _scheme(self, scheme: Optional[str]) -> str:
        scheme = scheme or self._settings.SOLVER_SCHEME
        if scheme not in SCHEMES:
            raise InputError(
                f"unknown scheme '{scheme}', expected one of {SCHEMES}", field="scheme"
            )
        return scheme

    # ----- semi-Markov stepping -----

    def _semi_checks(self, model: CanonicalInsuranceModel, operation: str) -> None:
        for key, rate in model.rates.items():
            if rate.resets or not rate.bounded:
                raise RegimeError(
                    "semi_markov", operation, hint=f"rate {key} has reset points; use Monte Carlo"
                )
            if rate.dependence == "semi_markov" and rate.atoms:
                raise RegimeError(
                    "semi_markov", operation, hint=f"rate {key} has duration atoms; use Monte Carlo"
                )
        for state, measure in model.cashflow.sojourn.items():
            if measure.dependence == "semi_markov" and measure.atoms:
                raise RegimeError(
                    "semi_markov",
                    operation,
                    hint=f"sojourn payments of state {state} have duration atoms",
                )

    def _semi_sweep(
        self,
        model: CanonicalInsuranceModel,
        horizon: float,
        h: float,
        terminal: np.ndarray,
        with_cashflow: bool,
        operation: str,
    ) -> ReserveField:
        self._semi_checks(model, operation)
        system = MarkovSystem(model, with_cashflow, markov_only=True)
        n_cells = max(1, math.ceil(horizon / h - 1e-9))
        times = np.linspace(0.0, horizon, n_cells + 1)
        durations = times.copy()
        M = len(durations)
        for t in system.atom_times:
            if 0.0 < t <= horizon and not np.any(np.abs(times - t) <= 1e-12 * max(1.0, t)):
                raise RegimeError(
                    "semi_markov",
                    operation,
                    hint=f"atom at t={t} is not on the uniform grid; choose h dividing it",
                )
        snapped = {
            t: float(times[int(np.argmin(np.abs(times - t)))]) for t in system.atom_times
        }
        atom_nodes = {v: k for k, v in snapped.items()}
        n = system.n
        index = system.index

        # pairs with their duration profiles or Markov resolutions
        pairs = []
        for i in model.labels:
            for j, rate in model.row(i).items():
                payment = model.transition(i, j) if with_cashflow else None
                if rate.dependence == "semi_markov":
                    res = resolve_duration(rate)
                    mu_u = np.array([res.density(float(u)) for u in durations])
                    pairs.append((index[i], index[j], None, mu_u, payment))
                else:
                    pairs.append((index[i], index[j], resolve(rate), None, payment))
        sojourn = []
        if with_cashflow:
            for i in model.labels:
                measure = model.sojourn(i)
                if measure.is_zero:
                    continue
                if measure.dependence == "semi_markov":
                    res = resolve_duration(measure)
                    densities = np.array([res.density(float(u)) for u in durations])
                    sojourn.append((index[i], None, densities))
                else:
                    sojourn.append((index[i], resolve(measure), None))

        def pay(payment, t: float) -> np.ndarray:
            if payment is None:
                return np.zeros(M)
            if payment.dependence == "markov" and payment.adjustment is None:
                return np.full(M, payment.value(t))
            return np.array([payment.value(t, float(u)) for u in durations])

        K = len(times)
        values = np.empty((K, n, M))
        left = np.empty((K, n, M))
        V = np.repeat(terminal.astype(float)[:, None], M, axis=1)
        values[-1] = V
        V = self._semi_atoms(system, atom_nodes.get(float(times[-1])), V, pairs, pay, times[-1])
        left[-1] = V
        shift = np.minimum(np.arange(M) + 1, M - 1)
        for k in range(K - 2, -1, -1):
            t = float(times[k])
            hk = float(times[k + 1] - times[k])
            diag = np.zeros((n, M))
            force = np.zeros((n, M))
            mu_all = []
            for ii, jj, res, mu_u, payment in pairs:
                mu = mu_u if mu_u is not None else np.full(M, res.density(t))
                b = pay(payment, t)
                diag[ii] += mu
                force[ii] += mu * b
                mu_all.append((ii, jj, mu))
            for ii, res in system.interest:
                diag[ii] += res.density(t)
            for ii, res, beta_u in sojourn:
                force[ii] += beta_u if beta_u is not None else res.density(t)
            ahead = V[:, shift]
            # duration-0 values couple all states
            system_matrix = np.eye(n) + hk * np.diag(diag[:, 0])
            for ii, jj, mu in mu_all:
                system_matrix[ii, jj] -= hk * mu[0]
            V0 = np.linalg.solve(system_matrix, ahead[:, 0] + hk * force[:, 0])
            inflow = np.zeros((n, M))
            for ii, jj, mu in mu_all:
                inflow[ii] += mu * V0[jj]
            V = (ahead + hk * (force + inflow)) / (1.0 + hk * diag)
            V[:, 0] = V0
            values[k] = V
            if t > 0.0:
                V = self._semi_atoms(system, atom_nodes.get(t), V, pairs, pay, t)
            left[k] = V
        return ReserveField(
            regime="semi_markov",
            states=list(model.labels),
            times=times,
            values=values,
            left_values=left,
            durations=durations,
            terminal=terminal.tolist(),
            scheme="implicit_euler",
        )

    def _semi_atoms(self, system, atom_time, V, pairs, pay, t) -> np.ndarray:
        if atom_time is None:
            return V
        num = V.copy()
        for ii, res in system.sojourn:
            num[ii] += res.atom_at(atom_time)
        for ii, jj, res, _, payment in pairs:
            if res is None:
                continue
            mass = res.atom_at(atom_time)
            if mass:
                num[ii] += (pay(payment, t) + V[jj, 0] - V[ii]) * mass
        for ii, res in system.interest:
            num[ii] /= 1.0 + res.atom_at(atom_time)
        return num

    # ===== Public Solvers =====

    def thiele_solve(
        self,
        model: CanonicalInsuranceModel,
        grid: Optional[TimeGrid] = None,
        h: Optional[float] = None,
        scheme: Optional[str] = None,
    ) -> ReserveField:
        """State-wise prospective reserves V^i with terminal value 0."""
        regime = self._regime(model, "thiele_solve")
        if model.cashflow.reserve_dependence is not None:
            raise PreconditionError(
                "thiele_solve",
                "reserve-dependent payments must be resolved first (transform_reserve_dependent)",
            )
        terminal = np.zeros(len(model.states))
        if regime == "semi_markov":
            step = grid.step if grid is not None else (h or self._settings.DEFAULT_STEP)
            field = self._semi_sweep(model, model.horizon, step, terminal, True, "thiele_solve")
            logger.info(
                "semi-Markov Thiele solve on %d x %d nodes", len(field.times), len(field.durations)
            )
            return field
        scheme = self._scheme(scheme)
        grid = self._grid_for(model, grid, h)
        system = MarkovSystem(model)
        values, left = self._markov_sweep(system, grid, terminal, scheme)
        field = ReserveField(
            regime="markov",
            states=list(model.labels),
            times=grid.array,
            values=values,
            left_values=left,
            terminal=terminal.tolist(),
            scheme=scheme,
        )
        logger.info("Thiele solve (%s) on %d grid points", scheme, len(grid))
        return self._attach_dense(field, system, scheme)

    def kolmogorov_solve(
        self,
        model: CanonicalInsuranceModel,
        target: int,
        horizon: Optional[float] = None,
        grid: Optional[TimeGrid] = None,
        h: Optional[float] = None,
        scheme: Optional[str] = None,
    ) -> ReserveField:
        """Probabilities P^i(t) = P(Z(T) = target | Z(t) = i) on a grid over [0, T]."""
        regime = self._regime(model, "kolmogorov_solve")
        if target not in model.states:
            raise InputError(f"target state {target} is not in the state space", field="target")
        T = horizon if horizon is not None else model.horizon
        if not 0.0 <= T <= model.horizon:
            raise InputError("target time must lie in [0, horizon]", field="horizon")
        terminal = np.zeros(len(model.states))
        terminal[model.states.index(target)] = 1.0
        if regime == "semi_markov":
            step = grid.step if grid is not None else (h or self._settings.DEFAULT_STEP)
            field = self._semi_sweep(model, T, step, terminal, False, "kolmogorov_solve")
            return field.model_copy(update={"kind": "kolmogorov", "target": target})
        if T == 0.0:
            states = list(model.labels)
            return ReserveField(
                regime="markov",
                kind="kolmogorov",
                states=states,
                times=np.array([0.0]),
                values=terminal[None, :],
                left_values=terminal[None, :].copy(),
                target=target,
                terminal=terminal.tolist(),
            )
        scheme = self._scheme(scheme)
        grid = self._grid_for(model, grid, h, horizon=T)
        system = MarkovSystem(model, with_cashflow=False)
        values, left = self._markov_sweep(system, grid, terminal, scheme)
        field = ReserveField(
            regime="markov",
            kind="kolmogorov",
            states=list(model.labels),
            times=grid.array,
            values=values,
            left_values=left,
            target=target,
            terminal=terminal.tolist(),
            scheme=scheme,
        )
        return self._attach_dense(field, system, scheme)

    def kolmogorov_solve_all(
        self,
        model: CanonicalInsuranceModel,
        horizon: Optional[float] = None,
        grid: Optional[TimeGrid] = None,
        h: Optional[float] = None,
        scheme: Optional[str] = None,
    ) -> dict[int, ReserveField]:
        """Transition probabilities into every target state; rows sum to one."""
        return {
            k: self.kolmogorov_solve(model, k, horizon=horizon, grid=grid, h=h, scheme=scheme)
            for k in model.labels
        }

    # ----- discrete recursions -----

    def _discrete_system(
        self, model: CanonicalInsuranceModel, horizon: Optional[float], operation: str,
        with_cashflow: bool,
    ) -> tuple[MarkovSystem, int]:
        regime = self._inspector.detect_regime(model)
        if regime != "discrete":
            raise RegimeError(
                regime, operation, hint="jumps and payments must sit on integer times"
            )
        N = model.horizon if horizon is None else horizon
        if not float(N).is_integer() or N < 0 or N > model.horizon:
            raise InputError("discrete horizon must be an integer in [0, horizon]", field="horizon")
        return MarkovSystem(model, with_cashflow), int(N)

    def kolmogorov_discrete_recursion(
        self, model: CanonicalInsuranceModel, target: int, horizon: Optional[int] = None
    ) -> DiscreteTable:
        """Table of P(Z(N) = target | Z(n) = i) for n = 0..N."""
        system, N = self._discrete_system(model, horizon, "kolmogorov_discrete_recursion", False)
        P = np.zeros(system.n)
        P[system.index[target]] = 1.0
        rows = [P]
        for n in range(N, 0, -1):
            P = system.atom_update(float(n), P)
            rows.append(P)
        rows.reverse()
        return DiscreteTable(
            horizon=N,
            target=target,
            states=list(model.labels),
            values=[[float(v) for v in row] for row in rows],
        )

    def thiele_discrete_recursion(
        self, model: CanonicalInsuranceModel, horizon: Optional[int] = None
    ) -> ReserveField:
        """Exact period recursion of the reserves on integer times 0..N."""
        if model.cashflow.reserve_dependence is not None:
            raise PreconditionError(
                "thiele_discrete_recursion",
                "reserve-dependent payments must be resolved first (transform_reserve_dependent)",
            )
        system, N = self._discrete_system(model, horizon, "thiele_discrete_recursion", True)
        values = np.zeros((N + 1, system.n))
        left = np.zeros((N + 1, system.n))
        V = np.zeros(system.n)
        for n in range(N, 0, -1):
            values[n] = V
            V = system.atom_update(float(n), V)
            left[n] = V
        values[0] = V
        left[0] = V
        return ReserveField(
            regime="discrete",
            states=list(model.labels),
            times=np.arange(N + 1, dtype=float),
            values=values,
            left_values=left,
            terminal=[0.0] * system.n,
            scheme="recursion",
        )

    # ===== Path-wise Residual =====

    def thiele_residual(
        self, model: CanonicalInsuranceModel, candidate: ReserveField, path: Path
    ) -> ResidualReport:
        """
        Thiele residual measure of a candidate along one path.

        Each inter-jump interval accumulates V(dt) + B(dt) - V(t-) Phi(dt)
        + sum_j (b + V^j - V^i) Lambda(dt) over the grid cells it covers completely,
        plus the exact residual at atom nodes. Reserve-dependent payments are expanded
        with the candidate. Cells ending at a reset point are measure-null.
        """
        if candidate.regime == "semi_markov":
            return self._semi_residual(model, candidate, path)
        if self._inspector.detect_regime(model) not in ("markov", "discrete"):
            raise RegimeError(
                self._inspector.detect_regime(model),
                "thiele_residual",
                hint="Markov candidates need a Markov model",
            )
        table = _ResidualTable(model, candidate)
        T = min(model.horizon, candidate.horizon)
        report = ResidualReport()
        for state, a, b, _ in path.sojourns(0.0, T):
            report.intervals.append(table.interval(state, a, b))
        return report

    def _semi_residual(
        self, model: CanonicalInsuranceModel, candidate: ReserveField, path: Path
    ) -> ResidualReport:
        times = candidate.times
        T = min(model.horizon, candidate.horizon)
        report = ResidualReport()
        for state, a, b, entry in path.sojourns(0.0, T):
            ctx = self._inspector.context_at(path, entry, state)
            row = {j: resolve(rate, ctx) for j, rate in model.row(state).items()}
            interest = resolve(model.interest(state))
            sojourn = resolve(model.sojourn(state), ctx)

            def own(t: float, left: bool = False) -> float:
                return candidate.value(state, t, t - entry, left=left)

            def flow(t: float, left: bool) -> float:
                v = own(t, left)
                total = sojourn.density(t, left) - v * interest.density(t, left)
                for j, res in row.items():
                    mu = res.density(t, left)
                    if mu:
                        pay = payment_value(model.transition(state, j), t, entry, left)
                        total += (pay + candidate.value(j, t, 0.0) - v) * mu
                return total

            nodes = [float(t) for t in times if a <= t <= b]
            events = []
            for t0, t1 in zip(nodes, nodes[1:]):
                cell = own(t1, left=True) - own(t0) + 0.5 * (t1 - t0) * (
                    flow(t0, False) + flow(t1, True)
                )
                events.append((t1, 0, cell))
            atom_times = sorted(
                {t for res in (*row.values(), interest, sojourn) for t, _ in res.atoms_in(a, b)}
            )
            for t in atom_times:
                v, v_left = own(t), own(t, left=True)
                r = v - v_left * (1.0 + interest.atom_at(t)) + sojourn.atom_at(t)
                for j, res in row.items():
                    mass = res.atom_at(t)
                    if mass:
                        pay = payment_value(model.transition(state, j), t, entry)
                        r += (pay + candidate.value(j, t, 0.0) - v) * mass
                events.append((t, 1, r))
            events.sort(key=lambda e: (e[0], e[1]))
            report.intervals.append(_interval(state, a, b, [e[2] for e in events]))
        return report


def _interval(state: int, a: float, b: float, contributions) -> ResidualInterval:
    if len(contributions):
        running = np.cumsum(np.asarray(contributions, dtype=float))
    else:
        running = np.zeros(1)
    max_abs = float(np.max(np.abs(running)))
    return ResidualInterval(
        state=state,
        start=a,
        end=b,
        accumulated=float(running[-1]),
        max_abs=max_abs,
        per_unit_time=max_abs / max(b - a, 1.0),
    )


class _ResidualTable:
    """Residual densities and atom residuals of a Markov candidate at its grid nodes."""

    def __init__(self, model: CanonicalInsuranceModel, candidate: ReserveField):
        system = MarkovSystem(model)
        self.times = np.asarray(candidate.times, dtype=float)
        self.index = {s: candidate.index(s) for s in model.labels}
        V = np.asarray(candidate.values, dtype=float)
        VL = np.asarray(candidate.left_values, dtype=float)
        K, n = V.shape
        col = [self.index[s] for s in system.states]
        V, VL = V[:, col], VL[:, col]
        self.V, self.VL = V, VL

        links = {}
        soj_links = []
        dep = model.cashflow.reserve_dependence
        if dep is not None:
            for link in dep.transitions:
                links[(system.index[link.source], system.index[link.target])] = link
            for link in dep.sojourns:
                soj_links.append(
                    (system.index[link.state], resolve(link.base), resolve(link.loading))
                )

        F_right = np.zeros((K, n))
        F_left = np.zeros((K, n))
        G = np.zeros((K, n))
        null_cell = np.zeros((K, n), dtype=bool)
        for k, t in enumerate(self.times):
            t = float(t)
            for side, F in ((False, F_right), (True, F_left)):
                if side and k == 0:
                    continue
                vk = VL[k] if side else V[k]
                for ii, res in system.sojourn:
                    F[k, ii] += res.density(t, side)
                for ii, res in system.interest:
                    F[k, ii] -= vk[ii] * res.density(t, side)
                for ii, base, loading in soj_links:
                    F[k, ii] += base.density(t, side) + vk[ii] * loading.density(t, side)
                for ii, jj, res, payment in system.rates:
                    mu = res.density(t, side)
                    if mu == 0.0:
                        continue
                    if math.isinf(mu):
                        null_cell[k, ii] = True
                        continue
                    pay = payment_value(payment, t, left=side)
                    link = links.get((ii, jj))
                    if link is not None:
                        pay += link.a0 + link.a1 * (vk[ii] - vk[jj])
                    F[k, ii] += (pay + vk[jj] - vk[ii]) * mu
            if t > 0.0:
                G[k] = V[k] - VL[k]
                for ii, res in system.interest:
                    G[k, ii] -= VL[k, ii] * res.atom_at(t)
                for ii, res in system.sojourn:
                    G[k, ii] += res.atom_at(t)
                for ii, base, loading in soj_links:
                    G[k, ii] += base.atom_at(t) + VL[k, ii] * loading.atom_at(t)
                for ii, jj, res, payment in system.rates:
                    mass = res.atom_at(t)
                    if mass:
                        pay = payment_value(payment, t)
                        link = links.get((ii, jj))
                        if link is not None:
                            pay += link.a0 + link.a1 * (V[k, ii] - V[k, jj])
                        G[k, ii] += (pay + V[k, jj] - V[k, ii]) * mass
        for ii, resets in system.resets.items():
            for r in resets:
                k = int(np.searchsorted(self.times, r))
                if k < K and self.times[k] == r:
                    null_cell[k, ii] = True
        h = np.diff(self.times)
        cell = VL[1:] - V[:-1] + 0.5 * h[:, None] * (F_right[:-1] + F_left[1:])
        cell[null_cell[1:]] = 0.0
        self.cell = cell
        self.G = G
        self.system = system

    def interval(self, state: int, a: float, b: float) -> ResidualInterval:
        ii = self.system.index[state]
        ka = int(np.searchsorted(self.times, a, side="left"))
        kb = int(np.searchsorted(self.times, b, side="right")) - 1
        if kb <= ka:
            first = [self.G[ka, ii]] if ka == kb and self.times[ka] > a else []
            return _interval(state, a, b, first)
        contributions = np.empty(2 * (kb - ka) + 1)
        contributions[0] = self.G[ka, ii] if self.times[ka] > a else 0.0
        contributions[1::2] = self.cell[ka:kb, ii]
        contributions[2::2] = self.G[ka + 1 : kb + 1, ii]
        return _interval(state, a, b, contributions)


# Type alias for cleaner imports
BackwardSolver = BackwardSolverService
