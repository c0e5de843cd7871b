"""Four training schemes for the L1 objective, plus a bound verifier.

Two schemes fold a regularizer gradient into Adam: the piecewise sign
subgradient (``adam_pw``) or the per-array Frobenius-norm surrogate
(``adam_f``). Two are proximal: plain proximal gradient (``pg``) and its
momentum-accelerated variant (``apg``), both built on soft-thresholding.
The classical convergence rates of the proximal schemes hold for convex
composites; ``verify_theorem_bounds`` checks them empirically on lasso
instances whose optimum comes from an unrelated coordinate-descent solver.

All steps operate on named parameter dicts so the same code drives both
the neural model and single-vector convex instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tape import ShapeError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
FNORM_EPS = 1e-12

STEP_KINDS = ("adam_pw", "adam_f", "pg", "apg")


def soft_threshold(v, kappa: float) -> np.ndarray:
    """Componentwise shrinkage: v-k above k, 0 within [-k, k], v+k below."""
    if kappa < 0:
        raise ValueError(f"threshold must be >= 0, got {kappa}")
    v = np.asarray(v, dtype=np.float64)
    return np.where(v > kappa, v - kappa,
                    np.where(v < -kappa, v + kappa, 0.0))


def l1_subgradient(theta) -> np.ndarray:
    """Piecewise derivative of the absolute value: -1, 0 at zero, +1."""
    return np.sign(np.asarray(theta, dtype=np.float64))


def fnorm_gradient(theta, eps_guard: float = FNORM_EPS) -> np.ndarray:
    """Gradient of the Frobenius norm, guarded at the origin."""
    if not eps_guard > 0:
        raise ValueError(f"eps_guard must be positive, got {eps_guard}")
    theta = np.asarray(theta, dtype=np.float64)
    norm = float(np.sqrt((theta * theta).sum()))
    return theta / max(norm, eps_guard)


@dataclass
class OptimizerState:
    """Mutable per-run state: step size, sparsity weight, moments, memory.

    ``k`` counts completed steps. Adam moments exist only for the adam
    kinds; ``prev`` holds the second-to-last iterate for apg momentum.
    """

    kind: str
    lr: float
    beta: float
    k: int = 0
    m: dict | None = None
    v: dict | None = None
    prev: dict | None = None

    @classmethod
    def create(cls, kind: str, params: dict, lr: float, beta: float
               ) -> "OptimizerState":
        if kind not in STEP_KINDS:
            raise ValueError(f"unknown optimizer kind {kind!r}; choose from "
                             f"{STEP_KINDS}")
        if not lr > 0:
            raise ValueError(f"lr must be positive, got {lr}")
        if beta < 0:
            raise ValueError(f"beta must be >= 0, got {beta}")
        state = cls(kind=kind, lr=float(lr), beta=float(beta))
        if kind.startswith("adam"):
            state.m = {k: np.zeros_like(v) for k, v in params.items()}
            state.v = {k: np.zeros_like(v) for k, v in params.items()}
        if kind == "apg":
            state.prev = {k: np.array(v) for k, v in params.items()}
        return state


def _check_grads(params: dict, grads: dict) -> None:
    for name, theta in params.items():
        if name not in grads:
            raise ShapeError(f"missing gradient for parameter {name!r}")
        if np.shape(grads[name]) != np.shape(theta):
            raise ShapeError(f"gradient for {name!r} has shape "
                             f"{np.shape(grads[name])}, expected {np.shape(theta)}")


def adam_reg_step(state: OptimizerState, params: dict, smooth_grads: dict,
                  reg: str) -> dict:
    """Adam update on the smooth gradient plus the chosen regularizer term.

    ``pw`` adds beta times the sign subgradient, ``f`` beta times the
    per-array Frobenius-norm gradient. With beta = 0 the step is plain
    Adam, bit for bit.
    """
    if reg not in ("pw", "f"):
        raise ValueError(f"reg must be 'pw' or 'f', got {reg!r}")
    if state.kind != ("adam_pw" if reg == "pw" else "adam_f"):
        raise ValueError(f"state kind {state.kind!r} does not match reg {reg!r}")
    _check_grads(params, smooth_grads)
    state.k += 1
    c1 = 1.0 - ADAM_BETA1 ** state.k
    c2 = 1.0 - ADAM_BETA2 ** state.k
    out = {}
    for name, theta in params.items():
        g = np.asarray(smooth_grads[name], dtype=np.float64)
        if state.beta > 0:
            reg_grad = (l1_subgradient(theta) if reg == "pw"
                        else fnorm_gradient(theta))
            g = g + state.beta * reg_grad
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        out[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return out


def pg_step(state: OptimizerState, params: dict, smooth_grads: dict) -> dict:
    """Proximal gradient step: descend on the smooth loss, then shrink."""
    if state.kind != "pg":
        raise ValueError(f"state kind {state.kind!r} is not 'pg'")
    _check_grads(params, smooth_grads)
    state.k += 1
    kappa = state.beta * state.lr
    return {name: soft_threshold(theta - state.lr
                                 * np.asarray(smooth_grads[name], dtype=np.float64),
                                 kappa)
            for name, theta in params.items()}


def apg_step(state: OptimizerState, params: dict, params_prev: dict,
             smooth_grad_at) -> dict:
    """Accelerated proximal step: extrapolate, descend at the lookahead
    point, then shrink.

    ``params`` is the latest iterate, ``params_prev`` the one before it
    (equal on the first step); ``smooth_grad_at(point)`` returns the smooth
    gradients evaluated at the extrapolated point.
    """
    if state.kind != "apg":
        raise ValueError(f"state kind {state.kind!r} is not 'apg'")
    state.k += 1
    coeff = (state.k - 2) / (state.k + 1)
    look = {name: theta + coeff * (theta - params_prev[name])
            for name, theta in params.items()}
    grads = smooth_grad_at(look)
    _check_grads(params, grads)
    kappa = state.beta * state.lr
    return {name: soft_threshold(look[name] - state.lr
                                 * np.asarray(grads[name], dtype=np.float64),
                                 kappa)
            for name, theta in params.items()}


# ---------------------------------------------------------------------------
# convex lasso instances and the rate verifier
# ---------------------------------------------------------------------------

def _cd_lasso(A: np.ndarray, b: np.ndarray, beta: float, tol: float,
              max_sweeps: int = 200_000) -> np.ndarray:
    """Cyclic coordinate descent for 0.5 ||A theta - b||^2 + beta ||theta||_1.

    Residual-maintained updates; runs until the KKT residual drops below
    ``tol``. Chosen as an oracle precisely because it shares no machinery
    with the proximal steps under test.
    """
    n = A.shape[1]
    col_sq = (A * A).sum(axis=0)
    theta = np.zeros(n)
    resid = b.copy()  # b - A theta
    for _ in range(max_sweeps):
        for j in range(n):
            if col_sq[j] == 0.0:
                continue
            resid += A[:, j] * theta[j]
            rho = A[:, j] @ resid
            theta[j] = soft_threshold(rho, beta) / col_sq[j]
            resid -= A[:, j] * theta[j]
        if _kkt_residual(A, b, beta, theta) <= tol:
            return theta
    raise RuntimeError(f"coordinate descent did not reach stationarity {tol} "
                       f"within {max_sweeps} sweeps")


def _kkt_residual(A, b, beta, theta) -> float:
    g = A.T @ (A @ theta - b)
    active = theta != 0
    res = np.where(active, np.abs(g + beta * np.sign(theta)),
                   np.maximum(np.abs(g) - beta, 0.0))
    return float(res.max())


@dataclass
class ConvexLassoInstance:
    """A lasso problem with known smoothness constant and oracle optimum."""

    A: np.ndarray
    b: np.ndarray
    beta: float
    L: float
    theta_star: np.ndarray
    loss_star: float

    @classmethod
    def build(cls, A, b, beta: float, tol: float = 1e-12) -> "ConvexLassoInstance":
        A = np.asarray(A, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0]:
            raise ShapeError(f"matrix {A.shape} incompatible with vector {b.shape}")
        if beta < 0:
            raise ValueError(f"beta must be >= 0, got {beta}")
        L = float(np.linalg.eigvalsh(A.T @ A).max())
        if not L > 0:
            raise ValueError("smooth part has zero curvature; L must be > 0")
        theta_star = _cd_lasso(A, b, beta, tol)
        inst = cls(A=A, b=b, beta=float(beta), L=L, theta_star=theta_star,
                   loss_star=0.0)
        inst.loss_star = inst.value(theta_star)
        return inst

    def smooth_grad(self, theta) -> np.ndarray:
        return self.A.T @ (self.A @ theta - self.b)

    def value(self, theta) -> float:
        r = self.A @ theta - self.b
        return float(0.5 * (r @ r) + self.beta * np.abs(theta).sum())

    def kkt_residual(self, theta) -> float:
        return _kkt_residual(self.A, self.b, self.beta, theta)


def random_instance(seed: int, n: int, beta: float = 0.1) -> ConvexLassoInstance:
    """Random instance with singular values in [0.2, 2] (condition 10).

    Mild enough for fast oracle convergence, but slow enough that plain
    and accelerated proximal iterates are still far from the optimum at
    a few dozen steps, keeping rate comparisons meaningful.
    """
    rng = np.random.default_rng(seed)
    qu, _ = np.linalg.qr(rng.normal(size=(n, n)))
    qv, _ = np.linalg.qr(rng.normal(size=(n, n)))
    s = np.linspace(0.2, 2.0, n) if n > 1 else np.array([1.0])
    A = qu @ np.diag(s) @ qv.T
    b = rng.normal(size=n)
    return ConvexLassoInstance.build(A, b, beta)


@dataclass
class BoundReport:
    """Per-iteration inequality check of a convergence rate bound."""

    method: str
    t: float
    rows: list = field(default_factory=list)  # (k, lhs, rhs, margin)
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def format(self) -> str:
        lines = ["k\tlhs\trhs\tmargin"]
        for k, lhs, rhs, margin in self.rows:
            lines.append(f"{k}\t{lhs!r}\t{rhs!r}\t{margin!r}")
        return "\n".join(lines) + "\n"


def verify_theorem_bounds(instance: ConvexLassoInstance, method: str,
                          t: float, k_max: int) -> BoundReport:
    """Run pg or apg from zero and check its rate bound at every iteration.

    pg must satisfy (value(k) - optimum) <= ||start - optimum||^2 / (2 t k);
    apg the same with bound 2 ||start - optimum||^2 / (t (k+1)^2). Both
    require the step size hypothesis t < 1/L, which is enforced. Margins
    carry a relative float slack of 1e-9 when flagging violations.
    """
    if method not in ("pg", "apg"):
        raise ValueError(f"method must be 'pg' or 'apg', got {method!r}")
    if not t > 0:
        raise ValueError(f"step size must be positive, got {t}")
    if t >= 1.0 / instance.L:
        raise ValueError(f"step size t={t} violates the rate hypothesis "
                         f"t < 1/L = {1.0 / instance.L}")
    if not isinstance(k_max, int) or k_max < 1:
        raise ValueError(f"k_max must be a positive integer, got {k_max!r}")

    theta0 = np.zeros_like(instance.theta_star)
    dist_sq = float(((theta0 - instance.theta_star) ** 2).sum())
    slack = 1e-9 * max(1.0, abs(instance.loss_star))
    state = OptimizerState.create(method, {"theta": theta0}, lr=t,
                                  beta=instance.beta)
    report = BoundReport(method=method, t=t)
    theta, theta_prev = theta0, theta0
    for k in range(1, k_max + 1):
        if method == "pg":
            grads = {"theta": instance.smooth_grad(theta)}
            theta_next = pg_step(state, {"theta": theta}, grads)["theta"]
        else:
            theta_next = apg_step(
                state, {"theta": theta}, {"theta": theta_prev},
                lambda look: {"theta": instance.smooth_grad(look["theta"])},
            )["theta"]
        theta_prev, theta = theta, theta_next
        lhs = instance.value(theta) - instance.loss_star
        if method == "pg":
            rhs = dist_sq / (2.0 * t * k)
        else:
            rhs = 2.0 * dist_sq / (t * (k + 1) ** 2)
        report.rows.append((k, lhs, rhs, rhs - lhs))
        if lhs > rhs + slack:
            report.violations.append(k)
    return report
