"""Loss-reduction bounds of subset vs full gradient steps, checked on quadratics.

For L(w) = 1/2 w^T A w - b^T w with A symmetric positive definite, the
gradient is A w - b and the gradient is exactly L-smooth with
L = lambda_max(A). One gradient step of size eta on all coordinates, or on a
subset S of coordinate layers with the rest frozen, must then satisfy

    Delta_all >= eta * |g|^2 * (1 - eta L / 2)
    Delta_S   >= eta * (|g|^2 - delta) * (1 - eta L / 2)

with delta = |g|^2 - |g_S|^2. The difference of the two right-hand sides,
-eta * delta * (1 - eta L / 2), turns non-negative exactly when eta L >= 2.
"""

import itertools
import logging
import math

import numpy as np

from pydantic import BaseModel, ConfigDict, Field, model_validator

from fedtlu.common.errors import ConvergenceError
from fedtlu.common.utils import derive_seed


logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
BOUND_RTOL = 1e-9
POWER_TOL = 1e-10
POWER_MAX_ITER = 10000
RIDGE = 0.1


class QuadraticProblem(BaseModel):
    """L(w) = 1/2 w^T A w - b^T w with coordinates grouped into layers."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    a: np.ndarray = Field(description='Symmetric positive-definite matrix A.')
    b: np.ndarray = Field(description='Linear term b.')
    coordinate_layers: list[list[int]]

    @model_validator(mode='after')
    def check_problem(self) -> 'QuadraticProblem':
        dim = self.b.shape[0]
        if self.a.shape != (dim, dim):
            raise ValueError(f'A has shape {self.a.shape}, expected ({dim}, {dim})')
        if not np.allclose(self.a, self.a.T, rtol=0.0, atol=SYMMETRY_TOL):
            raise ValueError('A is not symmetric')
        try:
            np.linalg.cholesky(self.a)
        except np.linalg.LinAlgError as e:
            raise ValueError('A is not positive definite') from e
        covered = sorted(i for layer in self.coordinate_layers for i in layer)
        if covered != list(range(dim)):
            raise ValueError('coordinate_layers must partition 0..dim-1')
        return self

    @property
    def dim(self) -> int:
        return int(self.b.shape[0])

    @property
    def num_layers(self) -> int:
        return len(self.coordinate_layers)


class BoundReport(BaseModel):
    """Actual vs bounded loss reduction for one (point, subset, eta)."""

    eta: float
    eta_l: float
    lipschitz_L: float
    subset: list[int]
    grad_norm_sq: float = Field(ge=0.0)
    delta: float = Field(ge=0.0)
    delta_full: float
    delta_subset: float
    bound_full: float
    bound_subset: float
    full_holds: bool
    subset_holds: bool
    crossover_term: float


class TheoryReport(BaseModel):
    """Outcome of a sweep of bound checks."""

    reports: list[BoundReport]
    total: int
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def summary_line(self) -> str:
        status = 'PASS' if self.passed else 'FAIL'
        return f'{status}: {self.total - self.failures}/{self.total} bound checks hold'


def make_quadratic(dim: int, num_layers: int, seed: int) -> QuadraticProblem:
    """A = M^T M + 0.1 I and b from the seeded PRNG; contiguous layers."""
    if not dim >= num_layers >= 1:
        raise ValueError(f'Need dim >= num_layers >= 1, got {dim}, {num_layers}')
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((dim, dim)) / math.sqrt(dim)
    a = m.T @ m + RIDGE * np.eye(dim)
    a = 0.5 * (a + a.T)
    b = rng.standard_normal(dim)
    layers = [chunk.tolist() for chunk in np.array_split(np.arange(dim), num_layers)]
    return QuadraticProblem(a=a, b=b, coordinate_layers=layers)


def loss_value(problem: QuadraticProblem, w: np.ndarray) -> float:
    return float(0.5 * w @ problem.a @ w - problem.b @ w)


def gradient(problem: QuadraticProblem, w: np.ndarray) -> np.ndarray:
    return problem.a @ w - problem.b


def lipschitz(
    problem: QuadraticProblem,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
) -> float:
    """lambda_max(A) by power iteration.

    Stops once the eigen-residual |A v - lambda v| is within ``tol`` of
    lambda, relative.
    """
    v = np.random.default_rng(0).standard_normal(problem.dim)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        av = problem.a @ v
        lam = float(v @ av)
        if np.linalg.norm(av - lam * v) <= tol * abs(lam):
            return lam
        v = av / np.linalg.norm(av)
    raise ConvergenceError(
        f'Power iteration did not converge in {max_iter} iterations'
    )


def subset_coordinates(problem: QuadraticProblem, subset) -> np.ndarray:
    coords = sorted(i for layer in subset for i in problem.coordinate_layers[layer])
    return np.array(coords, dtype=np.int64)


def delta_gap(problem: QuadraticProblem, w: np.ndarray, subset) -> float:
    """delta = |grad|^2 - |grad_S|^2, the tight value of the assumption."""
    subset = list(subset)
    if not subset:
        raise ValueError('subset must not be empty')
    g = gradient(problem, w)
    frozen = np.ones(problem.dim, dtype=bool)
    frozen[subset_coordinates(problem, subset)] = False
    # sum over the frozen coordinates keeps delta >= 0 exactly
    return float(g[frozen] @ g[frozen])


def smoothness_slack(
    problem: QuadraticProblem, w: np.ndarray, w_new: np.ndarray, lipschitz_l: float
) -> float:
    """Upper model minus actual loss at w_new; >= 0 for an L-smooth loss."""
    step = w_new - w
    upper = (
        loss_value(problem, w)
        + float(gradient(problem, w) @ step)
        + 0.5 * lipschitz_l * float(step @ step)
    )
    return upper - loss_value(problem, w_new)


def _holds(actual: float, bound: float) -> bool:
    return actual >= bound - BOUND_RTOL * max(1.0, abs(bound))


def verify_bounds(
    problem: QuadraticProblem,
    w: np.ndarray,
    subset,
    eta: float,
    lipschitz_l: float | None = None,
) -> BoundReport:
    """Measure the full and subset step reductions against their bounds."""
    if eta <= 0:
        raise ValueError(f'eta must be > 0, got {eta}')
    subset = sorted(subset)
    if lipschitz_l is None:
        lipschitz_l = lipschitz(problem)
    g = gradient(problem, w)
    grad_norm_sq = float(g @ g)
    delta = delta_gap(problem, w, subset)
    before = loss_value(problem, w)

    w_full = w - eta * g
    w_subset = w.copy()
    coords = subset_coordinates(problem, subset)
    w_subset[coords] = w[coords] - eta * g[coords]

    factor = 1.0 - eta * lipschitz_l / 2.0
    delta_full = before - loss_value(problem, w_full)
    delta_subset = before - loss_value(problem, w_subset)
    bound_full = eta * grad_norm_sq * factor
    bound_subset = eta * (grad_norm_sq - delta) * factor
    return BoundReport(
        eta=eta,
        eta_l=eta * lipschitz_l,
        lipschitz_L=lipschitz_l,
        subset=subset,
        grad_norm_sq=grad_norm_sq,
        delta=delta,
        delta_full=delta_full,
        delta_subset=delta_subset,
        bound_full=bound_full,
        bound_subset=bound_subset,
        full_holds=_holds(delta_full, bound_full),
        subset_holds=_holds(delta_subset, bound_subset),
        crossover_term=-eta * delta * factor,
    )


def crossover_scan(
    problem: QuadraticProblem, w: np.ndarray, subset, eta_grid
) -> list[BoundReport]:
    """verify_bounds across a grid of step sizes."""
    eta_grid = list(eta_grid)
    if not eta_grid or any(eta <= 0 for eta in eta_grid):
        raise ValueError('eta_grid must be non-empty and positive')
    lipschitz_l = lipschitz(problem)
    return [
        verify_bounds(problem, w, subset, eta, lipschitz_l=lipschitz_l)
        for eta in eta_grid
    ]


def proper_subsets(num_layers: int) -> list[tuple[int, ...]]:
    """Every non-empty proper subset of layer ids."""
    return [
        combo
        for size in range(1, num_layers)
        for combo in itertools.combinations(range(num_layers), size)
    ]


def _summarize(reports: list[BoundReport]) -> TheoryReport:
    failures = sum(1 for r in reports if not (r.full_holds and r.subset_holds))
    return TheoryReport(reports=reports, total=len(reports), failures=failures)


def sweep(
    num_problems: int,
    points_per_problem: int,
    eta_l_grid,
    seed: int = 0,
    dim: int = 6,
    num_layers: int = 3,
) -> TheoryReport:
    """Bounds over problems x points x all proper subsets x eta*L grid."""
    reports = []
    for p in range(num_problems):
        problem = make_quadratic(dim, num_layers, derive_seed(seed, 'problem', p))
        lipschitz_l = lipschitz(problem)
        rng = np.random.default_rng(derive_seed(seed, 'points', p))
        for _ in range(points_per_problem):
            w = rng.standard_normal(dim)
            for subset in proper_subsets(num_layers):
                for eta_l in eta_l_grid:
                    reports.append(
                        verify_bounds(
                            problem, w, subset, eta_l / lipschitz_l, lipschitz_l
                        )
                    )
    result = _summarize(reports)
    logger.info(result.summary_line())
    return result


def scan_problems(
    num_problems: int,
    eta_l_grid,
    seed: int = 0,
    dim: int = 6,
    num_layers: int = 3,
) -> TheoryReport:
    """One seeded point and proper subset per problem, scanned over eta*L."""
    subsets = proper_subsets(num_layers)
    if not subsets:
        raise ValueError('num_layers must be >= 2 to form a proper subset')
    reports = []
    for p in range(num_problems):
        problem = make_quadratic(dim, num_layers, derive_seed(seed, 'problem', p))
        lipschitz_l = lipschitz(problem)
        rng = np.random.default_rng(derive_seed(seed, 'points', p))
        w = rng.standard_normal(dim)
        subset = subsets[int(rng.integers(len(subsets)))]
        etas = [eta_l / lipschitz_l for eta_l in eta_l_grid]
        reports.extend(
            verify_bounds(problem, w, subset, eta, lipschitz_l) for eta in etas
        )
    result = _summarize(reports)
    logger.info(result.summary_line())
    return result
