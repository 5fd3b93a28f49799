"""Self-contained interior-point solver for block-LMI trace maximization.

Solves   maximize c'x   subject to   F0_b + sum_k x_k F_k_b <= 0   per block,
with an infeasible-start primal-dual path-following method on the homogeneous
self-dual embedding, Nesterov-Todd scaling, Mehrotra predictor-corrector
steps, and dense Schur-complement normal equations.  Infeasible problems are
detected through an improving-ray certificate (Z >= 0 blockwise with
<F_k, Z> = 0 for every k and <F0, Z> > 0), which is verified against the
original problem data before the status is reported.

The embedded solver is deterministic: identical inputs and configuration
produce identical iterates.  A backend registry lets an external conic
solver be substituted behind the same (problem, config) -> solution contract.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .lmi import SdpProblem

__all__ = [
    "SolverConfig",
    "SdpSolution",
    "BlockFeasibilityReport",
    "solve",
    "kkt_residuals",
    "check_block_feasibility",
    "register_backend",
    "available_backends",
]


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration limits for the embedded solver.

    ``objective_box`` caps c'x from above through a hidden scalar block so
    that problems with unbounded objective still terminate cleanly; set it
    to None to disable.  ``equilibrate`` applies Ruiz-style block scaling
    (fixed 10 sweeps) before solving.
    """

    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 200
    step_fraction: float = 0.98
    objective_box: float | None = 1e8
    equilibrate: bool = True
    log_csv: str | None = None

    def __post_init__(self):
        if self.feas_tol <= 0 or self.gap_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not (0.0 < self.step_fraction < 1.0):
            raise ValueError("step_fraction must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SdpSolution:
    """Solver output.

    ``status`` is one of Optimal, Infeasible, NumericalFailure, IterLimit.
    At Optimal, ``x`` is the maximizing decision vector and ``Z`` holds one
    PSD dual matrix per block.  At Infeasible, ``Z`` holds the normalized
    improving-ray certificate (<F0, Z> = 1).
    """

    status: str
    x: np.ndarray
    Z: list
    objective: float
    primal_residual: float
    dual_residual: float
    duality_gap: float
    iters: int
    message: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == "Optimal"


@dataclass(frozen=True)
class BlockFeasibilityReport:
    """Per-block max eigenvalue of F0 + sum x_k F_k at a candidate point."""

    lambda_max: tuple
    tol: float

    @property
    def feasible(self) -> bool:
        return all(lam <= self.tol for lam in self.lambda_max)


# --------------------------------------------------------------------------
# public entry points
# --------------------------------------------------------------------------

_BACKENDS: dict = {}


def register_backend(name: str, fn) -> None:
    """Register an alternative (problem, config) -> SdpSolution backend."""
    _BACKENDS[name] = fn


def available_backends() -> list[str]:
    return ["embedded"] + sorted(_BACKENDS)


def solve(problem: SdpProblem, config: SolverConfig | None = None,
          backend: str = "embedded") -> SdpSolution:
    """Solve the block-LMI maximization.  See module docstring for the contract."""
    if config is None:
        config = SolverConfig()
    if backend != "embedded":
        try:
            fn = _BACKENDS[backend]
        except KeyError:
            raise ValueError(f"unknown backend {backend!r}; have {available_backends()}")
        return fn(problem, config)
    return _solve_embedded(problem, config)


def check_block_feasibility(problem: SdpProblem, x: np.ndarray, tol: float) -> BlockFeasibilityReport:
    """Evaluate lambda_max of every block at x; feasible iff all <= tol."""
    x = np.asarray(x, dtype=float).reshape(-1)
    lams = []
    for blk in problem.blocks:
        M = blk.evaluate(x)
        lams.append(float(np.linalg.eigvalsh((M + M.T) / 2.0)[-1]))
    return BlockFeasibilityReport(lambda_max=tuple(lams), tol=float(tol))


def kkt_residuals(problem: SdpProblem, solution: SdpSolution) -> tuple[float, float, float]:
    """Recompute (primal, dual, gap) residuals from problem data alone.

    Uses the same normalizations the solver reports, but none of its
    internal bookkeeping:

      primal = max_b max(0, lambda_max(F(x)_b)) / (1 + |F0_b|_F)
      dual   = |sum_b <F_k, Z_b> - c|_inf / (1 + |c|_inf)
      gap    = |c'x - <-F0, Z>| / (1 + |c'x| + |<-F0, Z>|)
    """
    x = np.asarray(solution.x, dtype=float).reshape(-1)
    primal = 0.0
    dual_vec = -problem.c.astype(float).copy()
    dual_obj = 0.0
    for blk, Z in zip(problem.blocks, solution.Z):
        M = blk.evaluate(x)
        lam = float(np.linalg.eigvalsh((M + M.T) / 2.0)[-1])
        primal = max(primal, max(0.0, lam) / (1.0 + float(np.linalg.norm(blk.F0, "fro"))))
        dual_vec += np.einsum("kst,st->k", blk.F, Z)
        dual_obj += float(np.sum(-blk.F0 * Z))
    dual = float(np.max(np.abs(dual_vec))) / (1.0 + float(np.max(np.abs(problem.c), initial=0.0)))
    p_obj = float(problem.c @ x)
    gap = abs(p_obj - dual_obj) / (1.0 + abs(p_obj) + abs(dual_obj))
    return primal, dual, gap


# --------------------------------------------------------------------------
# embedded solver internals
# --------------------------------------------------------------------------


class _Block:
    """Scaled data and per-iteration NT quantities for one LMI block."""

    __slots__ = ("F0", "F", "C", "size", "sv_i", "sv_j", "sv_scale",
                 "X", "S", "G", "Ginv", "lam", "Usv", "Csv")

    def __init__(self, F0: np.ndarray, F: np.ndarray):
        self.F0 = F0
        self.F = F
        self.C = -F0
        s = F0.shape[0]
        self.size = s
        iu = np.triu_indices(s)
        order = np.lexsort((iu[0], iu[1]))
        self.sv_i = iu[0][order]
        self.sv_j = iu[1][order]
        self.sv_scale = np.where(self.sv_i == self.sv_j, 1.0, np.sqrt(2.0))
        self.X = np.eye(s)
        self.S = np.eye(s)

    def svec(self, M: np.ndarray) -> np.ndarray:
        return M[..., self.sv_i, self.sv_j] * self.sv_scale


def _sym(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2.0


def _ruiz_equilibrate(blocks, c, sweeps: int = 10):
    """Ruiz-style scaling: variable scales gamma and block scales beta."""
    d = c.shape[0]
    gamma = np.ones(d)
    beta = np.ones(len(blocks))
    F0s = [F0.copy() for F0, _ in blocks]
    Fs = [F.copy() for _, F in blocks]
    for _ in range(sweeps):
        r = np.zeros(d)
        for F in Fs:
            r = np.maximum(r, np.abs(F).max(axis=(1, 2)))
        g = 1.0 / np.sqrt(np.where(r > 0, r, 1.0))
        for F in Fs:
            F *= g[:, None, None]
        gamma *= g
        for b in range(len(Fs)):
            s = max(float(np.abs(F0s[b]).max()), float(np.abs(Fs[b]).max()))
            sb = 1.0 / np.sqrt(s) if s > 0 else 1.0
            F0s[b] *= sb
            Fs[b] *= sb
            beta[b] *= sb
    return F0s, Fs, gamma, beta


def _solve_embedded(problem: SdpProblem, config: SolverConfig) -> SdpSolution:
    d = problem.d
    c = np.asarray(problem.c, dtype=float).reshape(-1)
    raw_blocks = [(np.asarray(blk.F0, dtype=float), np.asarray(blk.F, dtype=float))
                  for blk in problem.blocks]
    for F0, F in raw_blocks:
        if F.shape != (d, F0.shape[0], F0.shape[0]):
            raise ValueError("malformed problem: F stack shape mismatch")
        if not np.allclose(F0, F0.T, atol=0, rtol=0):
            raise ValueError("malformed problem: F0 not symmetric")

    if config.equilibrate:
        F0s, Fs, gamma, beta = _ruiz_equilibrate(raw_blocks, c)
    else:
        F0s = [F0.copy() for F0, _ in raw_blocks]
        Fs = [F.copy() for _, F in raw_blocks]
        gamma = np.ones(d)
        beta = np.ones(len(raw_blocks))

    c_sc = gamma * c
    s_obj = 1.0 / max(1.0, float(np.max(np.abs(c_sc), initial=0.0)))
    c_sc = c_sc * s_obj

    n_user = len(F0s)
    if config.objective_box is not None:
        # hidden cap c'x <= objective_box, in scaled variables, row-normalized
        boxval = s_obj * config.objective_box
        rownorm = max(1.0, float(np.max(np.abs(c_sc), initial=0.0)), abs(boxval))
        F0s.append(np.array([[-boxval / rownorm]]))
        Fs.append((c_sc / rownorm).reshape(d, 1, 1))

    blocks = [_Block(F0, F) for F0, F in zip(F0s, Fs)]
    b_vec = c_sc
    nu = sum(blk.size for blk in blocks)

    f0_norms = [float(np.linalg.norm(F0, "fro")) for F0, _ in raw_blocks]
    c_absmax = float(np.max(np.abs(c), initial=0.0))

    y = np.zeros(d)
    tau, kappa = 1.0, 1.0

    logger = _IterLog(config.log_csv)
    status, message = "IterLimit", ""
    x_best = np.zeros(d)
    Z_best = [np.zeros_like(F0) for F0, _ in raw_blocks]
    resid_best = (np.inf, np.inf, np.inf)
    obj_best = float("nan")
    obj_max_seen = -np.inf
    iters_done = 0

    def unscale_report(Rd):
        """Original-space (x, Z, residuals, objective) for the current iterate."""
        x_orig = gamma * (y / tau)
        Zs, primal = [], 0.0
        dual_vec = -c.copy()
        dual_obj = 0.0
        for bi in range(n_user):
            blk = blocks[bi]
            Zb = beta[bi] * blk.X / (tau * s_obj)
            Zs.append(Zb)
            Fx = (Rd[bi] - blk.S) / (tau * beta[bi])
            lam = float(np.linalg.eigvalsh(_sym(Fx))[-1])
            primal = max(primal, max(0.0, lam) / (1.0 + f0_norms[bi]))
            dual_vec += np.einsum("kst,st->k", raw_blocks[bi][1], Zb)
            dual_obj += float(np.sum(-raw_blocks[bi][0] * Zb))
        dual = float(np.max(np.abs(dual_vec))) / (1.0 + c_absmax)
        p_obj = float(c @ x_orig)
        gap = abs(p_obj - dual_obj) / (1.0 + abs(p_obj) + abs(dual_obj))
        return x_orig, Zs, (primal, dual, gap), p_obj

    for it in range(config.max_iters):
        iters_done = it + 1
        # The homogeneous model is invariant under positive scaling of the
        # whole iterate; renormalize when it drifts (infeasible problems push
        # the ray components to grow while tau -> 0).
        big = max(tau, kappa, max(float(np.abs(blk.X).max()) for blk in blocks),
                  max(float(np.abs(blk.S).max()) for blk in blocks),
                  float(np.max(np.abs(y), initial=0.0)))
        if big > 1e4:
            y /= big
            tau /= big
            kappa /= big
            for blk in blocks:
                blk.X = blk.X / big
                blk.S = blk.S / big

        AX = np.zeros(d)
        for blk in blocks:
            AX += blk.F.reshape(d, -1) @ blk.X.reshape(-1)
        Rp = AX - b_vec * tau
        Rd = [np.einsum("k,kst->st", y, blk.F) + blk.S - blk.C * tau for blk in blocks]
        CX = sum(float(np.sum(blk.C * blk.X)) for blk in blocks)
        Rg = CX - float(b_vec @ y) + kappa
        mu = (sum(float(np.sum(blk.X * blk.S)) for blk in blocks) + tau * kappa) / (nu + 1)

        ray_ok, ray_Z, ray_q = _ray_certificate(raw_blocks, c, blocks, beta, n_user,
                                                config.feas_tol)
        if ray_ok:
            status = "Infeasible"
            message = f"improving ray with max |<F_k, Z>| = {ray_q:.2e}"
            Z_best = ray_Z
            resid_best, obj_best = (0.0, 0.0, 0.0), float("nan")
            break

        iterate_scale = max(float(np.abs(blk.X).max()) for blk in blocks)
        if tau > 1e-14 * max(1.0, iterate_scale):
            x_orig, Zs, resid, p_obj = unscale_report(Rd)
            if np.isfinite(p_obj):
                obj_max_seen = max(obj_max_seen, p_obj)
            if (resid[0] <= config.feas_tol and resid[1] <= config.feas_tol
                    and resid[2] <= config.gap_tol):
                status, message = "Optimal", ""
                x_best, Z_best, resid_best, obj_best = x_orig, Zs, resid, p_obj
                break
            if max(resid) < max(resid_best):
                x_best, Z_best, resid_best, obj_best = x_orig, Zs, resid, p_obj
        else:
            resid = resid_best

        # Nesterov-Todd scaling point per block
        try:
            for blk in blocks:
                Lx = np.linalg.cholesky(blk.X)
                Ls = np.linalg.cholesky(blk.S)
                U, sv, Vt = np.linalg.svd(Ls.T @ Lx)
                if sv[-1] <= 0 or not np.all(np.isfinite(sv)):
                    raise np.linalg.LinAlgError("degenerate NT scaling")
                blk.G = Lx @ (Vt.T / np.sqrt(sv))
                blk.Ginv = (U.T @ Ls.T) / np.sqrt(sv)[:, None]
                blk.lam = sv
                Asc = np.matmul(blk.G.T, np.matmul(blk.F, blk.G))
                blk.Usv = blk.svec(Asc)
                blk.Csv = blk.svec(blk.G.T @ blk.C @ blk.G)
        except np.linalg.LinAlgError as exc:
            status, message = "NumericalFailure", f"NT scaling failed: {exc}"
            break

        M = np.zeros((d, d))
        g_vec = np.zeros(d)
        q_cc = 0.0
        for blk in blocks:
            M += blk.Usv @ blk.Usv.T
            g_vec += blk.Usv @ blk.Csv
            q_cc += float(blk.Csv @ blk.Csv)
        factor = None
        ridge = 0.0
        for _ in range(3):
            try:
                factor = cho_factor(M if ridge == 0 else M + ridge * np.eye(d), lower=True)
                break
            except np.linalg.LinAlgError:
                ridge = max(ridge * 100.0, 1e-14 * max(1.0, float(np.trace(M)) / d))
        if factor is None:
            status, message = "NumericalFailure", "Schur complement not positive definite"
            break
        u_dir = cho_solve(factor, g_vec + b_vec)
        # equals (q_cc - g'M^-1 g) + b'M^-1 b, nonnegative in exact arithmetic;
        # clamp away the cancellation noise that appears at convergence
        denom_const = max(q_cc - float((g_vec - b_vec) @ u_dir), 0.0)

        def newton(eta, sigma_mu, corr_blocks, r_tk):
            """One Newton solve of the reduced system; None on breakdown."""
            Qhats = []
            anorm = np.zeros(d)
            cdot = 0.0
            for bi, blk in enumerate(blocks):
                lam = blk.lam
                Rhat = -np.diag(lam ** 2)
                if sigma_mu:
                    Rhat = Rhat + sigma_mu * np.eye(blk.size)
                if corr_blocks is not None:
                    Rhat = Rhat - corr_blocks[bi]
                Qhat = Rhat / ((lam[:, None] + lam[None, :]) / 2.0)
                Qhats.append(Qhat)
                Rdt = blk.G.T @ Rd[bi] @ blk.G
                anorm += blk.Usv @ (blk.svec(Qhat) + eta * blk.svec(Rdt))
                cdot += float(blk.Csv @ (blk.svec(Qhat) + eta * blk.svec(Rdt)))
            v_dir = cho_solve(factor, -eta * Rp - anorm)
            denominator = kappa + tau * denom_const
            if denominator <= 0 or not np.isfinite(denominator):
                return None
            dtau = (r_tk - tau * (-eta * Rg - cdot - float((g_vec - b_vec) @ v_dir))) / denominator
            dy = v_dir + u_dir * dtau
            dkappa = (r_tk - kappa * dtau) / tau
            dS, dX, dXh, dSh = [], [], [], []
            for bi, blk in enumerate(blocks):
                dSb = _sym(-eta * Rd[bi] - np.einsum("k,kst->st", dy, blk.F) + blk.C * dtau)
                dSh_b = _sym(blk.G.T @ dSb @ blk.G)
                dXh_b = _sym(Qhats[bi] - dSh_b)
                dXb = _sym(blk.G @ dXh_b @ blk.G.T)
                dS.append(dSb)
                dX.append(dXb)
                dXh.append(dXh_b)
                dSh.append(dSh_b)
            return dy, dS, dX, dXh, dSh, dtau, dkappa

        def max_step(dXh, dSh, dtau, dkappa):
            amax = np.inf
            for bi, blk in enumerate(blocks):
                lam_h = 1.0 / np.sqrt(blk.lam)
                Tx = lam_h[:, None] * dXh[bi] * lam_h[None, :]
                Ts = lam_h[:, None] * dSh[bi] * lam_h[None, :]
                wx = float(np.linalg.eigvalsh(Tx)[0])
                ws = float(np.linalg.eigvalsh(Ts)[0])
                if wx < 0:
                    amax = min(amax, -1.0 / wx)
                if ws < 0:
                    amax = min(amax, -1.0 / ws)
            if dtau < 0:
                amax = min(amax, -tau / dtau)
            if dkappa < 0:
                amax = min(amax, -kappa / dkappa)
            return amax

        aff = newton(1.0, 0.0, None, -tau * kappa)
        if aff is None:
            status, message = "NumericalFailure", "singular reduced system (predictor)"
            break
        _, dS_a, dX_a, dXh_a, dSh_a, dtau_a, dkap_a = aff
        a_aff = min(1.0, max_step(dXh_a, dSh_a, dtau_a, dkap_a))
        ip = sum(float(np.sum((blk.X + a_aff * dX_a[bi]) * (blk.S + a_aff * dS_a[bi])))
                 for bi, blk in enumerate(blocks))
        mu_aff = (ip + (tau + a_aff * dtau_a) * (kappa + a_aff * dkap_a)) / (nu + 1)
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        corr = [_sym(dXh_a[bi] @ dSh_a[bi]) for bi in range(len(blocks))]
        r_tk = sigma * mu - tau * kappa - dtau_a * dkap_a
        comb = newton(1.0 - sigma, sigma * mu, corr, r_tk)
        if comb is None:
            status, message = "NumericalFailure", "singular reduced system (corrector)"
            break
        dy_c, dS_c, dX_c, dXh_c, dSh_c, dtau_c, dkap_c = comb
        alpha = min(1.0, config.step_fraction * max_step(dXh_c, dSh_c, dtau_c, dkap_c))
        if alpha < 1e-13 or not np.isfinite(alpha):
            status, message = "NumericalFailure", "step length collapsed"
            break

        y = y + alpha * dy_c
        tau += alpha * dtau_c
        kappa += alpha * dkap_c
        for bi, blk in enumerate(blocks):
            blk.X = _sym(blk.X + alpha * dX_c[bi])
            blk.S = _sym(blk.S + alpha * dS_c[bi])
        if not (np.isfinite(tau) and tau > 0 and np.isfinite(kappa) and kappa > 0):
            status, message = "NumericalFailure", "tau/kappa left the cone"
            break
        logger.write(it, mu, resid[0], resid[1], alpha)

    logger.close()
    if status == "IterLimit":
        message = f"no convergence in {config.max_iters} iterations"
    if (status in ("IterLimit", "NumericalFailure") and config.objective_box is not None
            and np.isfinite(obj_max_seen) and obj_max_seen >= 0.5 * config.objective_box):
        message += ("; objective reached the internal objective_box cap "
                    "(problem unbounded above?)")
    objective = obj_best if status != "Infeasible" else float("nan")
    return SdpSolution(
        status=status,
        x=x_best,
        Z=Z_best,
        objective=objective,
        primal_residual=resid_best[0],
        dual_residual=resid_best[1],
        duality_gap=resid_best[2],
        iters=iters_done,
        message=message,
    )


def _ray_certificate(raw_blocks, c, blocks, beta, n_user, tol):
    """Test the current iterate as an improving-ray certificate.

    The candidate ray is normalized to unit total trace, then checked on the
    original data:  eta = max_k |sum_b <F_k, Z_b>|  must be below ``tol`` and
    below a fixed fraction of  phi = sum_b <F0_b, Z_b> >= 1e-10.  Such a
    certificate proves there is no feasible point with |x|_1 < phi/eta, so
    the ratio guard (1e-5) rules out false positives for any problem whose
    feasible set lives at sane magnitudes.
    """
    Zs = [beta[bi] * blocks[bi].X for bi in range(n_user)]
    total = sum(float(np.trace(Z)) for Z in Zs)
    if not np.isfinite(total) or total <= 0:
        return False, None, np.inf
    Zs = [Z / total for Z in Zs]
    phi = sum(float(np.sum(raw_blocks[bi][0] * Zs[bi])) for bi in range(n_user))
    if not np.isfinite(phi) or phi < 1e-10:
        return False, None, np.inf
    Ag = np.zeros_like(c)
    for bi in range(n_user):
        Ag += np.einsum("kst,st->k", raw_blocks[bi][1], Zs[bi])
    eta = float(np.max(np.abs(Ag), initial=0.0))
    if eta <= tol * max(1.0, float(np.max(np.abs(c), initial=0.0))) and eta <= 1e-5 * phi:
        return True, Zs, eta
    return False, None, eta


class _IterLog:
    def __init__(self, path: str | None):
        self._fh = open(path, "w", newline="") if path else None
        self._writer = csv.writer(self._fh) if self._fh else None
        if self._writer:
            self._writer.writerow(["iter", "mu", "primal_res", "dual_res", "step"])

    def write(self, it, mu, pres, dres, step):
        if self._writer:
            self._writer.writerow([it, f"{mu:.17g}", f"{pres:.17g}", f"{dres:.17g}", f"{step:.17g}"])

    def close(self):
        if self._fh:
            self._fh.close()
