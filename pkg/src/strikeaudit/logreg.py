"""Ridge-stabilized logistic regression on a fixed support.

Damped Newton with step-halving, overflow-safe likelihood, Wald inference.
The penalized objective is strictly convex whenever ridge > 0, so a converged
fit is the unique global optimum on its support.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CollinearityError
from .dataset import FeatureMatrix

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 100


@dataclass(frozen=True)
class FitSettings:
    """Knobs for the Newton fit.

    ridge of None means 1/n, resolved against the training matrix at fit
    time; it vanishes asymptotically but keeps coefficients finite under
    perfect separation.
    """

    ridge: float | None = None
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self):
        if self.ridge is not None and self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")

    def resolve_ridge(self, n: int) -> float:
        return 1.0 / n if self.ridge is None else self.ridge


@dataclass
class FitDiagnostics:
    final_nll: float
    iterations: int
    converged: bool
    max_abs_gradient: float
    trace: tuple[float, ...] | None = None


@dataclass
class LogisticModel:
    """p(struck) = sigmoid(intercept + beta . x[support])."""

    support: tuple[int, ...]
    beta: np.ndarray
    intercept: float
    ridge: float
    diagnostics: FitDiagnostics

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.shape != (len(self.support),):
            raise ValueError("beta length must match support size")


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ez = np.exp(eta[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _nll_raw(eta: np.ndarray, y: np.ndarray) -> float:
    # log(1 + exp(eta)) - y*eta, evaluated as log1p(exp(-|eta|)) + max(eta, 0) - y*eta
    return float(np.sum(np.log1p(np.exp(-np.abs(eta))) + np.maximum(eta, 0.0) - y * eta))


def _design(m: FeatureMatrix, support) -> np.ndarray:
    support = tuple(support)
    for j in support:
        if not 0 <= j < m.p:
            raise ValueError(f"support index {j} out of range for {m.p} columns")
    return m.x[:, support]


def nll(model: LogisticModel, m: FeatureMatrix) -> float:
    """Penalized negative log-likelihood of the model on matrix ``m``."""
    xs = _design(m, model.support)
    eta = model.intercept + xs @ model.beta
    penalty = 0.5 * model.ridge * float(model.beta @ model.beta)
    return _nll_raw(eta, m.y.astype(float)) + penalty


def gradient(model: LogisticModel, m: FeatureMatrix) -> np.ndarray:
    """Gradient of ``nll`` in (intercept, beta); intercept component first."""
    xs = _design(m, model.support)
    eta = model.intercept + xs @ model.beta
    resid = _sigmoid(eta) - m.y
    g = np.empty(len(model.support) + 1)
    g[0] = resid.sum()
    g[1:] = xs.T @ resid + model.ridge * model.beta
    return g


def predict_proba(model: LogisticModel, m: FeatureMatrix) -> np.ndarray:
    xs = _design(m, model.support)
    return _sigmoid(model.intercept + xs @ model.beta)


def fit(
    m: FeatureMatrix,
    support,
    settings: FitSettings = FitSettings(),
    init: np.ndarray | None = None,
    record_trace: bool = False,
) -> LogisticModel:
    """Damped Newton on the ridge-penalized likelihood over ``support``.

    Starts from the zero vector (``init`` lets a caller warm-start the solve;
    with ridge > 0 the optimum is unique so the result is unchanged).
    Separable data with ridge = 0 comes back with converged=False rather
    than diverging.
    """
    support = tuple(support)
    xs = _design(m, support)
    y = m.y.astype(float)
    n, k = xs.shape
    ridge = settings.resolve_ridge(n)

    theta = np.zeros(k + 1) if init is None else np.asarray(init, dtype=float).copy()
    penalty_mask = np.ones(k + 1)
    penalty_mask[0] = 0.0  # intercept unpenalized

    def objective(t):
        eta = t[0] + xs @ t[1:]
        return _nll_raw(eta, y) + 0.5 * ridge * float(t[1:] @ t[1:])

    def grad_at(t):
        resid = _sigmoid(t[0] + xs @ t[1:]) - y
        g = np.empty(k + 1)
        g[0] = resid.sum()
        g[1:] = xs.T @ resid + ridge * t[1:]
        return g

    current = objective(theta)
    trace = [current] if record_trace else None
    iterations = 0
    converged = False
    gmax = math.inf
    for iterations in range(1, settings.max_iterations + 1):
        eta = theta[0] + xs @ theta[1:]
        p = _sigmoid(eta)
        g = grad_at(theta)
        gmax = float(np.max(np.abs(g)))
        if gmax <= settings.tolerance:
            converged = True
            iterations -= 1
            break
        w = p * (1.0 - p)
        h = np.empty((k + 1, k + 1))
        h[0, 0] = w.sum()
        h[0, 1:] = h[1:, 0] = xs.T @ w
        h[1:, 1:] = (xs * w[:, None]).T @ xs + ridge * np.eye(k)
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, g, rcond=None)[0]
        # Step-halving line search on the objective. Near the optimum the
        # remaining descent is below double precision, so a step whose value
        # is flat to a few ulp is still accepted when it strictly shrinks the
        # gradient (that rule cannot cycle).
        scale = 1.0
        improved = False
        slack = 8.0 * np.finfo(float).eps * max(1.0, abs(current))
        for _ in range(60):
            candidate = theta - scale * step
            value = objective(candidate)
            if value < current:
                theta, current = candidate, value
                improved = True
                break
            if value <= current + slack and float(
                np.max(np.abs(grad_at(candidate)))
            ) < gmax:
                theta, current = candidate, value
                improved = True
                break
            scale *= 0.5
        if record_trace:
            trace.append(current)
        if not improved:
            break
    else:
        iterations = settings.max_iterations

    # Final gradient for diagnostics (theta may have moved since last check).
    eta = theta[0] + xs @ theta[1:]
    resid = _sigmoid(eta) - y
    g = np.empty(k + 1)
    g[0] = resid.sum()
    g[1:] = xs.T @ resid + ridge * theta[1:]
    gmax = float(np.max(np.abs(g)))
    # With ridge = 0 and every row classified with positive margin, the data
    # is separated by the fitted hyperplane and the optimum sits at infinity;
    # the small gradient is an artifact of the divergence path.
    separated = ridge == 0.0 and bool(np.all((2.0 * y - 1.0) * eta > 0.0))
    converged = gmax <= settings.tolerance and not separated

    diag = FitDiagnostics(
        final_nll=current,
        iterations=iterations,
        converged=converged,
        max_abs_gradient=gmax,
        trace=tuple(trace) if record_trace else None,
    )
    return LogisticModel(
        support=support,
        beta=theta[1:],
        intercept=float(theta[0]),
        ridge=ridge,
        diagnostics=diag,
    )


def _dependent_columns(design: np.ndarray, names) -> list[str]:
    """Names of columns linearly dependent on the ones before them."""
    deps = []
    basis: list[int] = []
    tol = 1e-8
    for j in range(design.shape[1]):
        col = design[:, j]
        norm = np.linalg.norm(col)
        if basis:
            b = design[:, basis]
            coef, *_ = np.linalg.lstsq(b, col, rcond=None)
            if np.linalg.norm(col - b @ coef) <= tol * max(1.0, norm):
                deps.append(names[j])
                continue
        if norm <= tol:
            deps.append(names[j])
            continue
        basis.append(j)
    return deps


def wald_pvalues(model: LogisticModel, m: FeatureMatrix) -> dict[str, float]:
    """Two-sided Wald p-values per coefficient, keyed by column name.

    Standard errors come from the inverse observed information at the fit.
    Textbook inference assumes ridge = 0; with ridge > 0 the penalty enters
    the information matrix and the result is flagged approximate.
    """
    if not model.diagnostics.converged:
        raise ValueError("Wald inference requires a converged fit")
    if model.ridge > 0:
        warnings.warn(
            "Wald p-values are approximate when ridge > 0", stacklevel=2
        )
    xs = _design(m, model.support)
    names = ["intercept"] + [m.columns[j] for j in model.support]
    design = np.column_stack([np.ones(m.n), xs])
    eta = design @ np.concatenate([[model.intercept], model.beta])
    p = _sigmoid(eta)
    w = p * (1.0 - p)
    info = (design * w[:, None]).T @ design
    if model.ridge > 0:
        reg = model.ridge * np.eye(len(names))
        reg[0, 0] = 0.0
        info = info + reg
    eigvals = np.linalg.eigvalsh(info)
    if eigvals[0] <= 1e-10 * max(eigvals[-1], 1.0):
        raise CollinearityError(_dependent_columns(design, names) or names)
    cov = np.linalg.inv(info)
    se = np.sqrt(np.diag(cov))
    theta = np.concatenate([[model.intercept], model.beta])
    pvals = {}
    for name, coef, s in zip(names, theta, se):
        z = coef / s
        pvals[name] = math.erfc(abs(z) / math.sqrt(2.0))
    return pvals


def model_to_json(model: LogisticModel, columns) -> dict:
    return {
        "support": [columns[j] for j in model.support],
        "beta": [float(b) for b in model.beta],
        "intercept": model.intercept,
        "ridge": model.ridge,
        "diagnostics": {
            "final_nll": model.diagnostics.final_nll,
            "iterations": model.diagnostics.iterations,
            "converged": model.diagnostics.converged,
            "max_abs_gradient": model.diagnostics.max_abs_gradient,
        },
    }


def model_from_json(obj: dict, columns) -> LogisticModel:
    index = {name: j for j, name in enumerate(columns)}
    try:
        support = tuple(index[name] for name in obj["support"])
    except KeyError as exc:
        raise ValueError(f"unknown column in serialized model: {exc}") from None
    d = obj["diagnostics"]
    diag = FitDiagnostics(
        final_nll=d["final_nll"],
        iterations=d["iterations"],
        converged=d["converged"],
        max_abs_gradient=d["max_abs_gradient"],
    )
    return LogisticModel(
        support=support,
        beta=np.asarray(obj["beta"], dtype=float),
        intercept=float(obj["intercept"]),
        ridge=float(obj["ridge"]),
        diagnostics=diag,
    )
