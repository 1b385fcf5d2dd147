"""Smallest singular values, Psi scans and bound sweeps.

Psi(H) = inf over real shifts lambda of sigma_min(H - i*lambda), computed in
the euclidean or star metric. sigma_min(lambda) is 1-Lipschitz in lambda, so a
coarse scan of spacing h brackets the infimum to within h before refinement.

Two sigma_min paths are kept deliberately independent: dense LAPACK SVD for
small problems, and inverse iteration on the normal equations using a banded
LU of the shifted operator for large ones. The iterative path falls back to
dense (and flags the result) if it stalls.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .spectral import (
    ConfigurationError,
    FourierGrid,
    ModeParams,
    OperatorMatrix,
    ResolventQuery,
    StarMetric,
    assemble_L_lambda,
    assemble_mode_operators,
    assemble_N_lambda,
    build_grid,
)

DENSE_SVD_MAX = 256
ITER_TOL = 1e-10
ITER_MAX = 200


@dataclass(frozen=True)
class PsiQuery:
    """Scan interval, coarse resolution and refinement tolerance for Psi."""

    lam_lo: float
    lam_hi: float
    scan_count: int = 256
    refine_rtol: float = 1e-3
    metric: str = "euclidean"  # or "star"

    def __post_init__(self):
        if not self.lam_lo < self.lam_hi:
            raise ConfigurationError("lam_lo must be < lam_hi")
        if self.scan_count < 16:
            raise ConfigurationError("scan count must be >= 16")
        if self.metric not in ("euclidean", "star"):
            raise ConfigurationError(f"unknown metric {self.metric!r}")


@dataclass
class PsiResult:
    psi: float
    lam_star: float
    lam_grid: np.ndarray
    sigma_grid: np.ndarray
    converged: bool
    scan_error: float  # Lipschitz bound on psi - inf over the interval
    flags: list[str] = field(default_factory=list)

    def as_record(self) -> dict:
        return {
            "psi": self.psi,
            "lam_star": self.lam_star,
            "converged": self.converged,
            "scan_error": self.scan_error,
            "flags": list(self.flags),
        }


@dataclass
class PseudospectrumField:
    re: np.ndarray
    im: np.ndarray
    sigma: np.ndarray  # sigma[i, j] = sigma_min(A - (re[j] + i*im[i]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re", "im", "sigma_min"])
            for i, b in enumerate(self.im):
                for j, a in enumerate(self.re):
                    w.writerow([repr(a), repr(b), repr(self.sigma[i, j])])


@dataclass
class EmpiricalConstants:
    """Fitted constants with the sweep that produced them."""

    name: str
    value: float
    sweep: list[dict]
    decade_ratio: float | None = None

    def as_record(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "decade_ratio": self.decade_ratio,
            "n_points": len(self.sweep),
        }


# ---------------------------------------------------------------------------
# sigma_min
# ---------------------------------------------------------------------------

def _banded_storage(diags: dict[int, np.ndarray], n: int, kl: int, ku: int) -> np.ndarray:
    """LAPACK general-band storage with kl extra rows for the LU fill-in."""
    ab = np.zeros((2 * kl + ku + 1, n), dtype=complex)
    for k, v in diags.items():
        j = np.arange(n - abs(k))
        cols = j + k if k >= 0 else j
        ab[kl + ku - k, cols] = v
    return ab


def _sigma_min_banded(op: OperatorMatrix, rng_seed: int = 0x5EED,
                      block: int = 3) -> tuple[float, bool]:
    """sigma_min via block inverse iteration with (M^*M)^(-1) = M^(-1) M^(-*).

    One banded LU of M serves both solves per iteration (zgbtrs supports the
    conjugate-transpose triangles of the same factorization). A small block
    rides through the near-degenerate singular pairs the lambda=0 symmetry
    produces; sigma_min is the smallest Ritz value of M on the block.
    """
    n = op.n
    bw = max((abs(k) for k in op.diags), default=0)
    kl = ku = max(bw, 1)
    ab = _banded_storage(op.diags, n, kl, ku)
    lu, ipiv, info = lapack.zgbtrf(ab, kl, ku)
    if info != 0:
        # exactly singular shifted operator: sigma_min is zero
        return 0.0, True
    rng = np.random.default_rng(rng_seed)
    b = min(block, n)
    v = rng.standard_normal((n, b)) + 1j * rng.standard_normal((n, b))
    v, _ = np.linalg.qr(v)

    def ritz_sigma(vblock):
        w = np.column_stack([op.matvec(vblock[:, j]) for j in range(vblock.shape[1])])
        gram = w.conj().T @ w
        return float(np.sqrt(max(np.linalg.eigvalsh(gram)[0], 0.0)))

    sigma_prev = np.inf
    converged = False
    sigma = np.inf
    for _ in range(ITER_MAX):
        y, info1 = lapack.zgbtrs(lu, kl, ku, v, ipiv, trans=2)   # M^(-*) V
        x, info2 = lapack.zgbtrs(lu, kl, ku, y, ipiv, trans=0)   # M^(-1) Y
        if info1 != 0 or info2 != 0 or not np.all(np.isfinite(x)):
            return 0.0, False
        v, _ = np.linalg.qr(x)
        sigma = ritz_sigma(v)
        if abs(sigma - sigma_prev) <= ITER_TOL * max(sigma, 1e-300):
            converged = True
            break
        sigma_prev = sigma
    if not converged:
        # densely clustered bottom singular values (e.g. |lambda| > 1, where
        # the multiplication part dominates): polish with a Lanczos pass on
        # the same factorization before anyone pays for a dense SVD
        sigma_l, ok = _sigma_min_lanczos(op, lu, ipiv, kl, ku, rng_seed)
        if ok:
            return sigma_l, True
        sigma = min(sigma, sigma_l)
    return sigma, converged


def _sigma_min_lanczos(op: OperatorMatrix, lu, ipiv, kl: int, ku: int,
                       rng_seed: int, m_max: int = 400) -> tuple[float, bool]:
    """Largest eigenvalue of (M^*M)^(-1) by Lanczos with full reorthogonalization;
    sigma_min(M) = 1/sqrt(mu_max). Uses the banded LU already computed."""
    n = op.n
    rng = np.random.default_rng(rng_seed ^ 0xA5A5)
    q = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    q /= np.linalg.norm(q)
    basis = [q]
    alphas: list[float] = []
    betas: list[float] = []
    mu = np.nan
    for j in range(min(m_max, n)):
        y, i1 = lapack.zgbtrs(lu, kl, ku, basis[-1][:, None], ipiv, trans=2)
        w, i2 = lapack.zgbtrs(lu, kl, ku, y, ipiv, trans=0)
        if i1 != 0 or i2 != 0 or not np.all(np.isfinite(w)):
            return np.inf, False
        w = w[:, 0]
        a = float(np.real(np.vdot(basis[-1], w)))
        alphas.append(a)
        # full reorthogonalization keeps the clustered top clean
        for b in basis:
            w -= np.vdot(b, w) * b
        for b in basis:
            w -= np.vdot(b, w) * b
        nb = np.linalg.norm(w)
        t = np.diag(alphas)
        if betas:
            off = np.array(betas)
            t += np.diag(off, 1) + np.diag(off, -1)
        evals, evecs = np.linalg.eigh(t)
        mu = evals[-1]
        resid = nb * abs(evecs[-1, -1])
        if mu > 0 and resid <= 1e-10 * mu:
            return 1.0 / np.sqrt(mu), True
        if nb == 0.0:
            return (1.0 / np.sqrt(mu), True) if mu > 0 else (np.inf, False)
        betas.append(float(nb))
        basis.append(w / nb)
    if mu > 0:
        return 1.0 / np.sqrt(mu), False
    return np.inf, False


def smallest_singular_value(op: OperatorMatrix, lam: float = 0.0,
                            metric: StarMetric | None = None,
                            method: str = "auto") -> float:
    """sigma_min of (A - i*lam) in the given metric.

    With a metric W this is sigma_min(W^(1/2) (A - i*lam) W^(-1/2)); the
    similarity is exact because W is diagonal. `method` is one of
    "auto" | "dense" | "banded".
    """
    shifted = op.shifted(lam)
    if metric is not None:
        if metric.keep is not None:
            shifted = shifted.restricted(metric.keep)
        shifted = shifted.scaled_similarity(metric.sqrt_weights())
    if method == "dense" or (method == "auto" and shifted.n <= DENSE_SVD_MAX):
        return float(np.linalg.svd(shifted.dense(), compute_uv=False)[-1])
    sigma, ok = _sigma_min_banded(shifted)
    if not ok:
        if method == "banded":
            warnings.warn("banded sigma_min did not converge; returning last iterate")
            return sigma
        warnings.warn("banded sigma_min did not converge; falling back to dense")
        return float(np.linalg.svd(shifted.dense(), compute_uv=False)[-1])
    return sigma


def _column_norm_bound(op: OperatorMatrix, lam: float) -> float:
    """min_j ||(A - i*lam) e_j||: an upper bound for sigma_min."""
    a = op.shifted(lam)
    sq = np.zeros(a.n)
    for k, v in a.diags.items():
        j = np.arange(a.n - abs(k))
        cols = j + k if k >= 0 else j
        sq[cols] += np.abs(v) ** 2
    return float(np.sqrt(sq.min()))


# ---------------------------------------------------------------------------
# Psi
# ---------------------------------------------------------------------------

def _golden_refine(f, a: float, b: float, rtol: float, max_iter: int = 120):
    """Golden-section minimization of f on [a, b]; returns (x, f(x), width)."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= rtol * max(abs(a), abs(b), 1.0):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    if fc < fd:
        return c, fc, b - a
    return d, fd, b - a


def default_psi_query(params: ModeParams, margin: float = 0.5, **kw) -> PsiQuery:
    """Scan +-1.5*|shear|*(1+margin): the skew numerical range is +-|shear|."""
    half = 1.5 * abs(params.shear) * (1.0 + margin)
    if half == 0.0:
        half = 1.0
    return PsiQuery(lam_lo=-half, lam_hi=half, **kw)


def compute_psi(op: OperatorMatrix, query: PsiQuery,
                metric: StarMetric | None = None,
                extra_lams: np.ndarray | None = None) -> PsiResult:
    """Coarse scan + golden-section refinement of all interior local minima."""
    if query.metric == "star" and metric is None:
        raise ConfigurationError("star metric requested but none supplied")
    if query.metric == "euclidean":
        metric = None
    flags: list[str] = []
    lam_grid = np.linspace(query.lam_lo, query.lam_hi, query.scan_count)
    if extra_lams is not None and len(extra_lams):
        lam_grid = np.unique(np.concatenate([lam_grid, np.asarray(extra_lams, float)]))
    sig = np.array([smallest_singular_value(op, lam, metric) for lam in lam_grid])

    # sanity: sigma_min never exceeds the smallest column norm
    for i in range(0, len(lam_grid), max(1, len(lam_grid) // 8)):
        bound = _column_norm_bound(op, lam_grid[i])
        if sig[i] > bound * (1 + 1e-8):
            flags.append(f"column-bound violation at lam={lam_grid[i]:.6g}")

    h = np.diff(lam_grid).max()
    best_lam, best_sig = lam_grid[np.argmin(sig)], sig.min()
    interior_min = []
    for i in range(1, len(lam_grid) - 1):
        if sig[i] <= sig[i - 1] and sig[i] <= sig[i + 1]:
            interior_min.append(i)
    width = h
    for i in interior_min:
        lam, s, width_i = _golden_refine(
            lambda x: smallest_singular_value(op, x, metric),
            lam_grid[i - 1], lam_grid[i + 1], query.refine_rtol)
        if s < best_sig:
            best_sig, best_lam = s, lam
            width = width_i
    boundary = np.argmin(sig) in (0, len(lam_grid) - 1)
    if boundary:
        flags.append("minimum at scan boundary; widen the interval")
    return PsiResult(
        psi=float(best_sig),
        lam_star=float(best_lam),
        lam_grid=lam_grid,
        sigma_grid=sig,
        converged=not boundary,
        scan_error=float(width),
        flags=flags,
    )


def pseudospectrum_grid(op: OperatorMatrix, rect: tuple[float, float, float, float],
                        resolution: tuple[int, int]) -> PseudospectrumField:
    """sigma_min(A - z) over a complex rectangle (re_lo, re_hi, im_lo, im_hi)."""
    nx, ny = resolution
    if nx < 8 or ny < 8:
        raise ConfigurationError("pseudospectrum resolution must be >= 8x8")
    re = np.linspace(rect[0], rect[1], nx)
    im = np.linspace(rect[2], rect[3], ny)
    sigma = np.empty((ny, nx))
    for i, b in enumerate(im):
        for j, a in enumerate(re):
            shifted = op.shifted(b)  # A - i b
            diags = {k: v.copy() for k, v in shifted.diags.items()}
            diags[0] = diags.get(0, np.zeros(op.n, dtype=complex)) - a
            m = OperatorMatrix(op.kind, op.n, diags, dict(op.meta))
            sigma[i, j] = smallest_singular_value(m, 0.0)
    return PseudospectrumField(re=re, im=im, sigma=sigma)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _pick_n(delta: float, n_min: int = 64, n_max: int = 4096) -> int:
    n = n_min
    while n < 8.0 / delta and n < n_max:
        n *= 2
    return n


def _decade_key(alpha: float) -> int:
    return int(np.floor(np.log10(abs(alpha)) + 1e-12))


def resolvent_bound_sweep(kind: str, nus, alphas, lams, betas=None,
                          n_max: int = 4096) -> tuple[EmpiricalConstants, list[dict]]:
    """Normalized resolvent lower-bound table over a (nu, alpha, lambda[, beta]) sweep.

    For each point computes r = sigma_min / (sqrt|alpha| * factor), factor
    being (1 - beta^(-2)) for the w-form nonlocal operator and 1 otherwise.
    C_hat is the smallest r over adequately resolved points; decade stability
    is max/min of the per-alpha-decade lower envelopes.
    """
    if kind not in ("Nlambda", "Llambda", "Lu-form"):
        raise ConfigurationError(f"unknown sweep kind {kind!r}")
    if kind != "Nlambda" and not betas:
        raise ConfigurationError("beta list required for the nonlocal sweeps")
    rows: list[dict] = []
    beta_list = [None] if kind == "Nlambda" else list(betas)
    for nu in nus:
        for alpha in alphas:
            if abs(alpha) < 100.0 * nu**2:
                rows.append({"kind": kind, "nu": nu, "alpha": alpha,
                             "flag": "regime", "ratio": np.nan})
                continue
            params = ModeParams(nu=nu, gamma=max(abs(alpha), 1.0), k_f=1.0, k1=1, k3=0)
            delta = abs(alpha) ** -0.25 * np.sqrt(nu)
            n = _pick_n(delta, n_max=n_max)
            grid = build_grid(n, params, alpha=alpha)
            inadequate = not grid.adequate
            for beta in beta_list:
                for lam in lams:
                    if kind == "Nlambda":
                        op = assemble_N_lambda(params, lam, grid, alpha=alpha)
                        factor = 1.0
                    elif kind == "Llambda":
                        q = ResolventQuery(lam=lam, beta_tilde=np.sqrt(beta**2 - 1.0))
                        op = assemble_L_lambda(params, q, grid, alpha=alpha, beta=beta)
                        factor = 1.0 - beta**-2
                    else:
                        q = ResolventQuery(lam=lam, beta_tilde=np.sqrt(beta**2 - 1.0))
                        op = assemble_L_lambda(params, q, grid, alpha=alpha, beta=beta,
                                               u_form=True)
                        factor = 1.0
                    sigma = smallest_singular_value(op)
                    row = {
                        "kind": kind, "nu": nu, "alpha": alpha, "lam": lam,
                        "beta": beta, "n": n, "sigma_min": sigma,
                        "ratio": sigma / (np.sqrt(abs(alpha)) * factor),
                        "flag": "inadequate" if inadequate else "",
                    }
                    rows.append(row)
    good = [r for r in rows if r.get("flag") == ""]
    if not good:
        raise ConfigurationError("no adequately resolved sweep points")
    per_decade: dict[int, float] = {}
    for r in good:
        d = _decade_key(r["alpha"])
        per_decade[d] = min(per_decade.get(d, np.inf), r["ratio"])
    envelope = list(per_decade.values())
    decade_ratio = max(envelope) / min(envelope)
    c_hat = EmpiricalConstants(
        name=f"C_hat[{kind}]",
        value=min(r["ratio"] for r in good),
        sweep=good,
        decade_ratio=float(decade_ratio),
    )
    return c_hat, rows


def psi_for_params(params: ModeParams, which: str, n: int | None = None,
                   scan_count: int = 128, refine_rtol: float = 1e-3) -> PsiResult:
    """Psi of one mode operator; which in {"H", "L", "Q1L"}.

    "H" uses the euclidean metric; "L" the beta>1 star metric; "Q1L" the
    alpha=1 mean-zero star metric.
    """
    alpha_res = params.k1 * params.gamma / params.k_f**4  # resolvent-scale alpha
    delta = abs(alpha_res) ** -0.25 * np.sqrt(params.nu)
    if n is None:
        n = _pick_n(delta)
    grid = build_grid(n, params, alpha=alpha_res)
    mode_l, mode_h = assemble_mode_operators(params, grid)
    query = default_psi_query(params, scan_count=scan_count, refine_rtol=refine_rtol,
                              metric="euclidean" if which == "H" else "star")
    if which == "H":
        return compute_psi(mode_h, query)
    if which == "L":
        metric = StarMetric.for_beta(params.beta, grid)
        return compute_psi(mode_l, query, metric=metric)
    if which == "Q1L":
        if params.beta != 1.0:
            raise ConfigurationError("Q1L path requires k1^2+k3^2 = k_f^2 = 1")
        metric = StarMetric.for_alpha1(grid)
        return compute_psi(mode_l, query, metric=metric)
    raise ConfigurationError(f"unknown operator selector {which!r}")


def psi_bound_sweep(sweep_params: list[ModeParams], which: str = "H",
                    n: int | None = None, scan_count: int = 128
                    ) -> tuple[EmpiricalConstants, list[dict]]:
    """Psi_hat / (sqrt|k1 gamma| * factor) table; c_hat := min over the sweep."""
    rows = []
    for p in sweep_params:
        res = psi_for_params(p, which, n=n, scan_count=scan_count)
        factor = (1.0 - p.beta**-2) if which == "L" else 1.0
        denom = np.sqrt(abs(p.k1 * p.gamma)) * factor
        rows.append({
            "which": which, "nu": p.nu, "gamma": p.gamma, "k_f": p.k_f,
            "k1": p.k1, "k3": p.k3, "alpha": p.alpha, "beta": p.beta,
            "psi": res.psi, "lam_star": res.lam_star,
            "ratio": res.psi / denom,
            "flag": "" if res.converged else "boundary",
        })
    good = [r for r in rows if r["flag"] == ""]
    if not good:
        raise ConfigurationError("every sweep point hit a scan boundary")
    ratios = [r["ratio"] for r in good]
    c_hat = EmpiricalConstants(
        name=f"c_hat[{which}]",
        value=min(ratios),
        sweep=good,
        decade_ratio=float(max(ratios) / min(ratios)),
    )
    return c_hat, rows


def write_sweep_csv(rows: list[dict], path, header_lines: list[str] | None = None) -> None:
    cols = ["kind", "which", "nu", "gamma", "k_f", "k1", "k3", "alpha", "beta",
            "lam", "lam_star", "n", "sigma_min", "psi", "ratio", "flag"]
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "")
                        for c in cols])
