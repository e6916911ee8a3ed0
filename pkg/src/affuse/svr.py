"""Epsilon-support-vector regression with an RBF kernel, solved by SMO.

The dual is optimized in the doubled variable vector z = (alpha, alpha*),
both halves box-constrained to [0, C] and tied by sum(alpha - alpha*) = 0.
Working sets of size two are picked by maximal violating pair with a
second-order partner heuristic; the stopping criterion bounds every KKT
violation by the configured tolerance.

``qp_oracle`` solves the same dual by projected gradient descent with an
exact projection onto the box/hyperplane intersection. It shares no code
path with the SMO solver and exists to cross-check it.

The kernel uses the standard negative exponent exp(-gamma * ||xi - xj||^2);
a positive exponent would be unbounded and cannot define a similarity.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError
from .metrics import ccc

_TAU = 1e-12
_SV_CUTOFF = 1e-12

#: Penalty and kernel-width grids explored by the fusion tuning helper.
C_GRID = (1e-2, 1.0, 1e2, 2e2, 3e2)
GAMMA_GRID = (1e-2, 1e-1, 1.0, 10.0, 1e2)


@dataclass(frozen=True)
class SvrConfig:
    """Regression hyper-parameters; defaults are the tuned fusion values."""

    c: float = 200.0
    gamma: float = 0.1
    epsilon: float = 0.01
    tolerance: float = 1e-4
    max_passes: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.c <= 0 or self.gamma <= 0:
            raise ValueError("c and gamma must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.tolerance <= 0 or self.max_passes < 1:
            raise ValueError("tolerance must be positive and max_passes >= 1")


@dataclass
class SvrModel:
    """Trained model: support vectors, dual coefficients beta, bias."""

    support_vectors: np.ndarray  # (m, d)
    dual_coeffs: np.ndarray  # (m,)
    bias: float
    config: SvrConfig
    converged: bool = True
    n_iter: int = 0
    objective: float = 0.0

    def __post_init__(self):
        self.support_vectors = np.atleast_2d(np.asarray(self.support_vectors, dtype=np.float64))
        self.dual_coeffs = np.asarray(self.dual_coeffs, dtype=np.float64).ravel()


def rbf_kernel(xi, xj, gamma: float) -> float:
    """RBF similarity exp(-gamma * ||xi - xj||^2), in (0, 1]."""
    a = np.asarray(xi, dtype=np.float64).ravel()
    b = np.asarray(xj, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatchError(f"vector dimensions differ: {a.shape} vs {b.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = a - b
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(x1: np.ndarray, x2: np.ndarray, gamma: float) -> np.ndarray:
    """Pairwise RBF kernel matrix between the rows of x1 and x2."""
    a = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    b = np.atleast_2d(np.asarray(x2, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(
            f"point dimensions differ: {a.shape[1]} vs {b.shape[1]}"
        )
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _validate_points(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] != y.shape[0] or x.shape[0] < 1:
        raise ValueError(f"need matching non-empty x ({x.shape}) and y ({y.shape})")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("training points must be finite")
    return x, y


def _dual_objective(kmat: np.ndarray, y: np.ndarray, z: np.ndarray, epsilon: float) -> float:
    """Maximization-form dual value for z = (alpha, alpha*)."""
    n = y.size
    beta = z[:n] - z[n:]
    return float(-0.5 * beta @ (kmat @ beta) - epsilon * z.sum() + y @ beta)


def _bias_interval(g: np.ndarray, y: np.ndarray, z: np.ndarray, c: float, epsilon: float):
    """Feasible bias interval [lo, hi] from the complementarity conditions."""
    n = y.size
    alpha, alpha_star = z[:n], z[n:]
    low_est = y - g - epsilon  # b >= this when alpha_i == 0, <= when alpha_i == C
    high_est = y - g + epsilon  # b <= this when alpha*_i == 0, >= when alpha*_i == C
    at_c = c * (1.0 - 1e-9)
    lo_candidates = np.concatenate([low_est[alpha <= at_c], high_est[alpha_star > at_c]])
    hi_candidates = np.concatenate([high_est[alpha_star <= at_c], low_est[alpha > at_c]])
    lo = np.max(lo_candidates) if lo_candidates.size else -np.inf
    hi = np.min(hi_candidates) if hi_candidates.size else np.inf
    return lo, hi


def _compute_bias(g: np.ndarray, y: np.ndarray, z: np.ndarray, cfg: SvrConfig) -> float:
    """Average of free-support-vector estimates; tube midpoint as fallback."""
    n = y.size
    c = cfg.c
    margin = 1e-8 * c
    alpha, alpha_star = z[:n], z[n:]
    estimates = []
    free_a = (alpha > margin) & (alpha < c - margin)
    free_s = (alpha_star > margin) & (alpha_star < c - margin)
    if np.any(free_a):
        estimates.append(y[free_a] - g[free_a] - cfg.epsilon)
    if np.any(free_s):
        estimates.append(y[free_s] - g[free_s] + cfg.epsilon)
    if estimates:
        return float(np.mean(np.concatenate(estimates)))
    lo, hi = _bias_interval(g, y, z, c, cfg.epsilon)
    if not np.isfinite(lo):
        return float(hi)
    if not np.isfinite(hi):
        return float(lo)
    return float(0.5 * (lo + hi))


def train_svr(x, y, cfg: SvrConfig | None = None) -> SvrModel:
    """Fit epsilon-SVR by sequential minimal optimization.

    The iteration budget is ``max_passes`` sweeps of n pair updates each.
    If the duality-style stopping gap is still above tolerance when the
    budget runs out, the best-so-far model is returned with
    ``converged=False``.
    """
    cfg = cfg or SvrConfig()
    x, y = _validate_points(x, y)
    n = y.size
    c = cfg.c
    kmat = rbf_gram(x, x, cfg.gamma)
    diag = np.diag(kmat)

    z = np.zeros(2 * n)
    g = np.zeros(n)  # g = K @ beta
    # Per-component scores F: alpha block y - g - eps, alpha* block y - g + eps.
    rng = np.random.default_rng(cfg.seed)
    budget = cfg.max_passes * n
    it = 0
    gap = np.inf

    while it < budget:
        f_a = y - g - cfg.epsilon
        f_s = y - g + cfg.epsilon
        f_all = np.concatenate([f_a, f_s])
        up_mask = np.concatenate([z[:n] < c, z[n:] > 0.0])
        low_mask = np.concatenate([z[:n] > 0.0, z[n:] < c])
        if not up_mask.any() or not low_mask.any():
            gap = 0.0
            break
        f_up = np.where(up_mask, f_all, -np.inf)
        i = int(np.argmax(f_up))
        m_val = f_up[i]
        f_low = np.where(low_mask, f_all, np.inf)
        m_low = float(np.min(f_low))
        gap = m_val - m_low
        if gap <= cfg.tolerance:
            break

        # Second-order partner choice among sufficiently violating candidates.
        bi = i % n
        cand = low_mask & (f_all < m_val)
        if not cand.any():
            break
        base = np.arange(2 * n) % n
        eta = diag[bi] + diag[base] - 2.0 * kmat[bi, base]
        bvals = m_val - f_all
        score = np.where(cand, -(bvals * bvals) / np.maximum(eta, _TAU), np.inf)
        j = int(np.argmin(score))
        if not np.isfinite(score[j]):
            j = int(rng.choice(np.flatnonzero(cand)))
        bj = j % n

        a_i = 1.0 if i < n else -1.0
        a_j = 1.0 if j < n else -1.0
        eta_ij = max(diag[bi] + diag[bj] - 2.0 * kmat[bi, bj], _TAU)
        step = (m_val - f_all[j]) / eta_ij
        # Box limits for z_i + a_i*s and z_j - a_j*s in [0, C].
        lo_i, hi_i = (-z[i], c - z[i]) if a_i > 0 else (z[i] - c, z[i])
        lo_j, hi_j = (z[j] - c, z[j]) if a_j > 0 else (-z[j], c - z[j])
        s = float(np.clip(step, max(lo_i, lo_j), min(hi_i, hi_j)))
        if s == 0.0:
            break
        z[i] += a_i * s
        z[j] -= a_j * s
        z[i] = min(max(z[i], 0.0), c)
        z[j] = min(max(z[j], 0.0), c)
        g += (kmat[:, bi] - kmat[:, bj]) * s
        it += 1

    beta = z[:n] - z[n:]
    bias = _compute_bias(g, y, z, cfg)
    objective = _dual_objective(kmat, y, z, cfg.epsilon)
    keep = np.abs(beta) > _SV_CUTOFF
    return SvrModel(
        support_vectors=x[keep],
        dual_coeffs=beta[keep],
        bias=bias,
        config=cfg,
        converged=bool(gap <= cfg.tolerance),
        n_iter=it,
        objective=objective,
    )


def predict_svr(model: SvrModel, x) -> float | np.ndarray:
    """Evaluate f(x) = sum_i beta_i K(sv_i, x) + bias.

    Accepts a single point (d,) or a batch (k, d); returns a float for a
    single point.
    """
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if model.dual_coeffs.size == 0:
        out = np.full(pts.shape[0], model.bias)
    else:
        if pts.shape[1] != model.support_vectors.shape[1]:
            raise DimensionMismatchError(
                f"model expects dimension {model.support_vectors.shape[1]}, "
                f"got {pts.shape[1]}"
            )
        kvals = rbf_gram(pts, model.support_vectors, model.config.gamma)
        out = kvals @ model.dual_coeffs + model.bias
    return float(out[0]) if single else out


def kkt_violation(model: SvrModel, x, y) -> float:
    """Largest complementarity violation of the trained model on (x, y).

    Residuals are measured against the epsilon tube: bound-free duals must
    sit exactly on the tube, zero duals inside it, and duals at C outside
    or on it.
    """
    x, y = _validate_points(x, y)
    cfg = model.config
    c, eps = cfg.c, cfg.epsilon
    f = np.atleast_1d(predict_svr(model, x))
    # Recover per-point beta; points absent from the SV set have beta 0.
    beta = np.zeros(y.size)
    if model.dual_coeffs.size:
        sv = model.support_vectors
        for i in range(y.size):
            match = np.flatnonzero(np.all(np.isclose(sv, x[i], atol=1e-12), axis=1))
            if match.size:
                beta[i] = model.dual_coeffs[match[0]]
    margin = 1e-8 * c
    worst = 0.0
    for i in range(y.size):
        r = y[i] - f[i]
        b = beta[i]
        if b > margin:  # alpha side active
            if b < c - margin:
                worst = max(worst, abs(r - eps))
            else:
                worst = max(worst, max(0.0, eps - r))
        elif b < -margin:  # alpha* side active
            if b > -c + margin:
                worst = max(worst, abs(-r - eps))
            else:
                worst = max(worst, max(0.0, eps + r))
        else:
            worst = max(worst, abs(r) - eps)
    return float(max(worst, 0.0))


# --- independent dense QP oracle -------------------------------------------------


@dataclass
class OracleSolution:
    alpha: np.ndarray
    alpha_star: np.ndarray
    beta: np.ndarray
    bias: float
    objective: float
    iterations: int


def _project_box_hyperplane(v: np.ndarray, c: float) -> np.ndarray:
    """Exact Euclidean projection onto {z in [0,C]^2n : sum(a*z) = 0}.

    The multiplier search exploits that phi(lam) = a' clip(v - lam*a) is
    piecewise linear and non-increasing; the root is interpolated between
    bracketing breakpoints.
    """
    n = v.size // 2
    va, vs = v[:n], v[n:]

    def phi(lam):
        lam = np.atleast_1d(lam)
        za = np.clip(va[None, :] - lam[:, None], 0.0, c).sum(axis=1)
        zs = np.clip(vs[None, :] + lam[:, None], 0.0, c).sum(axis=1)
        return za - zs

    breaks = np.unique(np.concatenate([va, va - c, -vs, c - vs]))
    vals = phi(breaks)
    if vals[0] <= 0.0:
        lam = breaks[0]
    elif vals[-1] >= 0.0:
        lam = breaks[-1]
    else:
        k = int(np.searchsorted(-vals, 0.0, side="left"))
        k = min(max(k, 1), breaks.size - 1)
        lo, hi = breaks[k - 1], breaks[k]
        flo, fhi = vals[k - 1], vals[k]
        lam = lo if flo == fhi else lo + (hi - lo) * flo / (flo - fhi)
    za = np.clip(va - lam, 0.0, c)
    zs = np.clip(vs + lam, 0.0, c)
    return np.concatenate([za, zs])


def qp_oracle(x, y, cfg: SvrConfig | None = None, max_iter: int = 2_000_000) -> OracleSolution:
    """Dense projected-gradient solution of the epsilon-SVR dual.

    Step size 1 / lambda_max(Q) with exact projection each iteration; exits
    early when the iterate stops moving at machine precision. Intended for
    small instances (<= 50 points) as an independent check of the SMO path.
    """
    cfg = cfg or SvrConfig()
    x, y = _validate_points(x, y)
    n = y.size
    if n > 50:
        raise ValueError("qp_oracle is a dense method limited to 50 points")
    kmat = rbf_gram(x, x, cfg.gamma)
    lam_max = float(np.linalg.eigvalsh(kmat)[-1])
    step = 1.0 / max(2.0 * lam_max, _TAU)
    p = np.concatenate([cfg.epsilon - y, cfg.epsilon + y])

    z = np.zeros(2 * n)
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        beta = z[:n] - z[n:]
        g = kmat @ beta
        grad = np.concatenate([g, -g]) + p
        z_new = _project_box_hyperplane(z - step * grad, cfg.c)
        move = float(np.max(np.abs(z_new - z)))
        z = z_new
        if move < 1e-15 * max(1.0, cfg.c):
            stall += 1
            if stall >= 50:
                break
        else:
            stall = 0

    beta = z[:n] - z[n:]
    g = kmat @ beta
    bias = _compute_bias(g, y, z, cfg)
    return OracleSolution(
        alpha=z[:n].copy(),
        alpha_star=z[n:].copy(),
        beta=beta,
        bias=bias,
        objective=_dual_objective(kmat, y, z, cfg.epsilon),
        iterations=it,
    )


def oracle_predict(solution: OracleSolution, x_train, x, gamma: float) -> np.ndarray:
    """Predictions induced by an oracle solution."""
    kvals = rbf_gram(np.atleast_2d(x), np.atleast_2d(x_train), gamma)
    return kvals @ solution.beta + solution.bias


# --- persistence and tuning ------------------------------------------------------


def save_svr(path, model: SvrModel) -> None:
    """Serialize a model as JSON (floats keep full precision via repr)."""
    payload = {
        "format": "affuse-svr",
        "version": 1,
        "config": asdict(model.config),
        "support_vectors": model.support_vectors.tolist(),
        "dual_coeffs": model.dual_coeffs.tolist(),
        "bias": model.bias,
        "converged": model.converged,
        "n_iter": model.n_iter,
        "objective": model.objective,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=1))


def load_svr(path) -> SvrModel:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "affuse-svr":
        raise ValueError(f"{path}: not an affuse SVR model file")
    return SvrModel(
        support_vectors=np.asarray(payload["support_vectors"], dtype=np.float64),
        dual_coeffs=np.asarray(payload["dual_coeffs"], dtype=np.float64),
        bias=float(payload["bias"]),
        config=SvrConfig(**payload["config"]),
        converged=bool(payload["converged"]),
        n_iter=int(payload["n_iter"]),
        objective=float(payload["objective"]),
    )


def grid_search_svr(
    x_train,
    y_train,
    x_val,
    y_val,
    base_cfg: SvrConfig | None = None,
    c_grid=C_GRID,
    gamma_grid=GAMMA_GRID,
):
    """Linear search over (C, gamma) scored by validation CCC.

    Returns (best config, list of (c, gamma, score) rows in search order).
    Ties keep the earliest grid entry.
    """
    base_cfg = base_cfg or SvrConfig()
    results = []
    best_cfg, best_score = None, -np.inf
    for c in c_grid:
        for gamma in gamma_grid:
            cfg = SvrConfig(
                c=c,
                gamma=gamma,
                epsilon=base_cfg.epsilon,
                tolerance=base_cfg.tolerance,
                max_passes=base_cfg.max_passes,
                seed=base_cfg.seed,
            )
            model = train_svr(x_train, y_train, cfg)
            preds = np.atleast_1d(predict_svr(model, x_val))
            score = ccc(preds, y_val)
            results.append((float(c), float(gamma), float(score)))
            if score > best_score:
                best_cfg, best_score = cfg, score
    return best_cfg, results
