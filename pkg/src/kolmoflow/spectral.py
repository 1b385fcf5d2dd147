"""Fourier-Galerkin building blocks on the 2*pi torus.

Everything downstream works with the basis e^{i n y}, n = -N/2 .. N/2-1,
stored in monotone order so that multiplication by sin(y) or cos(y) is an
exact coupling between adjacent coefficients and every operator here is
banded. Transforms wrap numpy's FFT with the reordering applied.

The L2 inner product on the torus is <f,g> = int f conj(g) dy
= 2*pi * sum_n c_n conj(d_n), and the same convention is used for grid
values via the quadrature weight 2*pi/N.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

#: kind tags an OperatorMatrix may carry ("Generic" wraps externally
#: supplied matrices, e.g. small closed-form test fixtures)
OPERATOR_KINDS = ("Nlambda", "Llambda", "ModeL", "ModeH", "L1", "HelmholtzInv",
                  "QProj", "Generic")

#: operationalization of the asymptotic regime condition "amplitude >> nu^2"
REGIME_FACTOR = 100.0


class ConfigurationError(ValueError):
    """Invalid grid/parameter configuration."""


@dataclass(frozen=True)
class ModeParams:
    """Physical and spectral parameters of one horizontal Fourier mode.

    Parameters
    ----------
    nu : viscosity, > 0.
    gamma : forcing amplitude.
    k_f : forcing wavenumber, in (0, 1].
    k1, k3 : integer horizontal wavenumbers.

    Derived quantities: alpha = beta = sqrt(k1^2+k3^2)/k_f (positive root)
    and the shear coefficient s = k1*gamma/(nu*k_f^2).
    """

    nu: float
    gamma: float
    k_f: float
    k1: int
    k3: int

    def __post_init__(self):
        if self.nu <= 0:
            raise ConfigurationError(f"nu must be positive, got {self.nu}")
        if not (0 < self.k_f <= 1):
            raise ConfigurationError(f"k_f must be in (0, 1], got {self.k_f}")
        if int(self.k1) != self.k1 or int(self.k3) != self.k3:
            raise ConfigurationError("k1, k3 must be integers")
        if not self.regime_valid:
            warnings.warn(
                f"|gamma|={abs(self.gamma):.3g} is not >> nu^2 "
                f"(threshold {REGIME_FACTOR}*nu^2={REGIME_FACTOR * self.nu**2:.3g}); "
                "fitted bounds may degrade",
                stacklevel=3,
            )

    @property
    def alpha(self) -> float:
        """Positive root of (k1^2+k3^2)/k_f^2; requires (k1,k3) != (0,0)."""
        k2 = self.k1**2 + self.k3**2
        if k2 == 0:
            raise ConfigurationError("alpha undefined for (k1,k3)=(0,0)")
        return np.sqrt(k2) / self.k_f

    @property
    def beta(self) -> float:
        return self.alpha

    @property
    def shear(self) -> float:
        """Skew-part scale k1*gamma/(nu*k_f^2); the numerical range of the
        imaginary part of the mode operators is +- |shear|."""
        return self.k1 * self.gamma / (self.nu * self.k_f**2)

    @property
    def regime_valid(self) -> bool:
        return abs(self.gamma) >= REGIME_FACTOR * self.nu**2

    def layer_scale(self, alpha: float | None = None) -> float:
        """Critical-layer width delta = |alpha|^(-1/4) nu^(1/2)."""
        a = self.alpha if alpha is None else alpha
        return abs(a) ** -0.25 * np.sqrt(self.nu)


@dataclass(frozen=True)
class ResolventQuery:
    """Spectral shift and reduced wavenumber for the u-form resolvent."""

    lam: float
    beta_tilde: float

    @classmethod
    def from_params(cls, params: ModeParams, lam: float) -> "ResolventQuery":
        beta = params.beta
        if beta <= 1:
            raise ConfigurationError(f"beta_tilde requires beta > 1, got beta={beta}")
        return cls(lam=lam, beta_tilde=np.sqrt(beta**2 - 1.0))


@dataclass(frozen=True)
class FourierGrid:
    """Uniform collocation grid y_j = 2*pi*j/N with monotone wavenumbers.

    `delta` is the critical-layer scale |alpha|^(-1/4) nu^(1/2) of the
    parameters the grid was built for; `adequate` records the resolution
    rule N >= 8/delta.
    """

    n: int
    delta: float
    y: np.ndarray = field(repr=False)
    wavenumbers: np.ndarray = field(repr=False)

    @property
    def adequate(self) -> bool:
        return self.n >= 8.0 / self.delta

    # -- transforms -------------------------------------------------------
    def to_coeffs(self, values: np.ndarray) -> np.ndarray:
        """Grid values -> coefficients of e^{i n y}, monotone n order."""
        return np.fft.fftshift(np.fft.fft(values)) / self.n

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients (monotone order) -> grid values."""
        return np.fft.ifft(np.fft.ifftshift(coeffs)) * self.n

    # -- inner products ---------------------------------------------------
    def inner_coeffs(self, c: np.ndarray, d: np.ndarray) -> complex:
        return TWO_PI * np.vdot(d, c)

    def norm_coeffs(self, c: np.ndarray) -> float:
        return np.sqrt(TWO_PI) * np.linalg.norm(c)

    def norm_grid(self, values: np.ndarray) -> float:
        return np.sqrt(TWO_PI / self.n) * np.linalg.norm(values)

    def l1_norm_grid(self, values: np.ndarray) -> float:
        return (TWO_PI / self.n) * np.sum(np.abs(values))

    def random_coeffs(self, rng: np.random.Generator, mean_zero: bool = False) -> np.ndarray:
        """Band-limited (|n| <= N/2-2) complex Gaussian coefficients.

        Band-limiting keeps sin/cos products inside the Galerkin truncation,
        so collocation oracles are exact to round-off.
        """
        c = rng.standard_normal(self.n) + 1j * rng.standard_normal(self.n)
        n = self.wavenumbers
        c[np.abs(n) > self.n // 2 - 2] = 0.0
        if mean_zero:
            c[n == 0] = 0.0
        return c


def build_grid(n: int, params: ModeParams, alpha: float | None = None) -> FourierGrid:
    """Build a FourierGrid; `alpha` overrides params.alpha for delta."""
    if n % 2 != 0 or n < 16:
        raise ConfigurationError(f"grid size must be even and >= 16, got {n}")
    y = TWO_PI * np.arange(n) / n
    wavenumbers = np.arange(-n // 2, n // 2)
    return FourierGrid(n=n, delta=params.layer_scale(alpha), y=y, wavenumbers=wavenumbers)


@dataclass
class OperatorMatrix:
    """Banded complex operator in the monotone Fourier basis.

    `diags` maps offset k to the entries of that diagonal, scipy.sparse.diags
    convention: offset k >= 0 holds A[j, j+k], offset k < 0 holds A[j-k, j],
    always length n - |k|. Instances are treated as immutable after assembly
    and are safe to share across workers.
    """

    kind: str
    n: int
    diags: dict[int, np.ndarray]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ConfigurationError(f"unknown operator kind {self.kind!r}")
        for k, v in self.diags.items():
            if len(v) != self.n - abs(k):
                raise ConfigurationError(f"diagonal {k} has wrong length")

    @property
    def bandwidth(self) -> int:
        live = [abs(k) for k, v in self.diags.items() if np.any(v != 0)]
        return max(live, default=0)

    def dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=complex)
        for k, v in self.diags.items():
            idx = np.arange(self.n - abs(k))
            if k >= 0:
                a[idx, idx + k] = v
            else:
                a[idx - k, idx] = v
        return a

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n, dtype=complex)
        for k, v in self.diags.items():
            if k >= 0:
                out[: self.n - k] += v * x[k:]
            else:
                out[-k:] += v * x[: self.n + k]
        return out

    def shifted(self, lam: float) -> "OperatorMatrix":
        """Return A - i*lam*I (the pseudospectral shift)."""
        diags = {k: v.copy() for k, v in self.diags.items()}
        main = diags.get(0, np.zeros(self.n, dtype=complex))
        diags[0] = main - 1j * lam
        return OperatorMatrix(self.kind, self.n, diags, dict(self.meta))

    def scaled_similarity(self, w_sqrt: np.ndarray) -> "OperatorMatrix":
        """Return W^(1/2) A W^(-1/2) for diagonal weights (w_sqrt = W^(1/2))."""
        diags = {}
        for k, v in self.diags.items():
            j = np.arange(self.n - abs(k))
            if k >= 0:
                rows, cols = j, j + k
            else:
                rows, cols = j - k, j
            diags[k] = v * w_sqrt[rows] / w_sqrt[cols]
        return OperatorMatrix(self.kind, self.n, diags, dict(self.meta))

    def restricted(self, keep: np.ndarray) -> "OperatorMatrix":
        """Restrict to the index subset `keep` (boolean mask)."""
        a = self.dense()[np.ix_(keep, keep)]
        return OperatorMatrix.from_dense(a, self.kind, dict(self.meta))

    @classmethod
    def from_dense(cls, a: np.ndarray, kind: str = "Generic",
                   meta: dict | None = None) -> "OperatorMatrix":
        a = np.asarray(a, dtype=complex)
        m = a.shape[0]
        diags = {}
        for k in range(-(m - 1), m):
            v = np.diagonal(a, offset=k)
            if np.any(v != 0) or k == 0:
                diags[k] = np.ascontiguousarray(v)
        return cls(kind, m, diags, meta or {})


def multiplication_matrix(which: str, n: int) -> dict[int, np.ndarray]:
    """Diagonals of multiplication by sin(y) or cos(y) in the Fourier basis.

    sin(y): (Sw)_n = -i/2 w_{n-1} + i/2 w_{n+1};  cos(y): 1/2 (w_{n-1}+w_{n+1}).
    """
    m = n - 1
    if which == "sin":
        return {-1: np.full(m, -0.5j), 1: np.full(m, 0.5j)}
    if which == "cos":
        return {-1: np.full(m, 0.5 + 0j), 1: np.full(m, 0.5 + 0j)}
    raise ConfigurationError(f"unknown multiplier {which!r}")


def _scale_columns(diags: dict[int, np.ndarray], col_scale: np.ndarray, n: int) -> dict[int, np.ndarray]:
    out = {}
    for k, v in diags.items():
        j = np.arange(n - abs(k))
        cols = j + k if k >= 0 else j
        out[k] = v * col_scale[cols]
    return out


def _add_diags(*many: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    for d in many:
        for k, v in d.items():
            out[k] = out.get(k, 0) + v.astype(complex)
    return out


def helmholtz_inverse(beta: float, grid: FourierGrid) -> OperatorMatrix:
    """(beta^2 - d^2/dy^2)^(-1): exactly diagonal 1/(beta^2+n^2)."""
    if beta <= 0:
        raise ConfigurationError("helmholtz_inverse requires beta > 0")
    n = grid.wavenumbers
    return OperatorMatrix("HelmholtzInv", grid.n, {0: (1.0 / (beta**2 + n**2)).astype(complex)})


def assemble_N_lambda(params: ModeParams, lam: float, grid: FourierGrid,
                      alpha: float | None = None) -> OperatorMatrix:
    """N_lambda w = i(alpha/nu)(sin y - lambda) w - nu w''."""
    a = params.alpha if alpha is None else alpha
    nu = params.nu
    n = grid.wavenumbers
    sin_d = multiplication_matrix("sin", grid.n)
    diags = _add_diags(
        {0: (1j * a / nu) * (-lam) + nu * n.astype(complex) ** 2},
        {k: (1j * a / nu) * v for k, v in sin_d.items()},
    )
    return OperatorMatrix("Nlambda", grid.n, diags,
                          {"alpha": a, "nu": nu, "lam": lam})


def assemble_L_lambda(params: ModeParams, query: ResolventQuery, grid: FourierGrid,
                      alpha: float | None = None, beta: float | None = None,
                      u_form: bool = False) -> OperatorMatrix:
    """Full resolvent operator, w-form or u-form.

    w-form: L_lambda w = i(alpha/nu)[(sin y - lambda) w + sin y phi] - nu w''
    with (d^2-beta^2) phi = w, i.e. phi = -(beta^2-d^2)^(-1) w.

    u-form (same assumptions, reduced wavenumber beta_tilde):
    i(alpha/nu)[(sin y - lambda) u + lambda phi] - nu u'' with
    (d^2 - beta_tilde^2) phi = u.
    """
    a = params.alpha if alpha is None else alpha
    b = params.beta if beta is None else beta
    nu, lam = params.nu, query.lam
    n = grid.wavenumbers
    visc = {0: nu * n.astype(complex) ** 2}
    if u_form:
        bt = query.beta_tilde
        if bt <= 0:
            raise ConfigurationError("u-form requires beta_tilde > 0")
        hinv = 1.0 / (bt**2 + n**2)
        sin_d = multiplication_matrix("sin", grid.n)
        diags = _add_diags(
            visc,
            {0: (1j * a / nu) * (-lam) * (1.0 + hinv).astype(complex)},
            {k: (1j * a / nu) * v for k, v in sin_d.items()},
        )
        return OperatorMatrix("Llambda", grid.n, diags,
                              {"alpha": a, "beta_tilde": bt, "nu": nu, "lam": lam, "form": "u"})
    if b <= 0:
        raise ConfigurationError("Llambda requires beta > 0")
    one_minus_h = 1.0 - 1.0 / (b**2 + n**2)
    sin_d = multiplication_matrix("sin", grid.n)
    diags = _add_diags(
        visc,
        {0: np.full(grid.n, (1j * a / nu) * (-lam))},
        {k: (1j * a / nu) * v for k, v in _scale_columns(sin_d, one_minus_h, grid.n).items()},
    )
    return OperatorMatrix("Llambda", grid.n, diags,
                          {"alpha": a, "beta": b, "nu": nu, "lam": lam, "form": "w"})


def assemble_mode_operators(params: ModeParams, grid: FourierGrid) -> tuple[OperatorMatrix, OperatorMatrix]:
    """Per-mode operators (ModeL, ModeH) after Fourier transform in (x,z).

    ModeL = -nu k_f^2 d^2 + (i k1/k_f^2)(gamma/nu) sin y (1 - (beta^2-d^2)^(-1))
    ModeH = -nu k_f^2 d^2 + (i k1/k_f^2)(gamma/nu) sin y
    """
    if params.k1 == 0 and params.k3 == 0:
        raise ConfigurationError("mode operators need (k1,k3) != (0,0)")
    nu, kf = params.nu, params.k_f
    b = params.beta
    c = 1j * params.k1 * params.gamma / (kf**2 * nu)
    n = grid.wavenumbers
    visc = {0: nu * kf**2 * n.astype(complex) ** 2}
    sin_d = multiplication_matrix("sin", grid.n)
    mode_h = OperatorMatrix(
        "ModeH", grid.n,
        _add_diags(visc, {k: c * v for k, v in sin_d.items()}),
        {"params": params},
    )
    one_minus_h = 1.0 - 1.0 / (b**2 + n**2)
    mode_l = OperatorMatrix(
        "ModeL", grid.n,
        _add_diags(visc, {k: c * v for k, v in _scale_columns(sin_d, one_minus_h, grid.n).items()}),
        {"params": params, "beta": b},
    )
    return mode_l, mode_h


def assemble_L1(nu: float, beta: float, grid: FourierGrid) -> OperatorMatrix:
    """L1 u = nu u'' - nu u - i(beta/nu) sin y u (alpha=1 special operator)."""
    if nu <= 0 or beta == 0:
        raise ConfigurationError("assemble_L1 requires nu > 0 and beta != 0")
    n = grid.wavenumbers
    sin_d = multiplication_matrix("sin", grid.n)
    diags = _add_diags(
        {0: -nu * (n.astype(complex) ** 2 + 1.0)},
        {k: (-1j * beta / nu) * v for k, v in sin_d.items()},
    )
    return OperatorMatrix("L1", grid.n, diags, {"nu": nu, "beta": beta})


def mean_projections(grid: FourierGrid) -> tuple[OperatorMatrix, OperatorMatrix]:
    """(Q1, P1): Q1 zeroes the n=0 coefficient, P1 keeps only it."""
    q = (grid.wavenumbers != 0).astype(complex)
    return (
        OperatorMatrix("QProj", grid.n, {0: q}, {"which": "Q1"}),
        OperatorMatrix("QProj", grid.n, {0: 1.0 - q}, {"which": "P1"}),
    )


@dataclass(frozen=True)
class StarMetric:
    """Diagonal metric <f,g>_* = <f, (I-(beta^2-d^2)^(-1)) g>.

    weights[n] = 1 - 1/(beta^2+n^2). For the alpha=1 variant the metric lives
    on the mean-zero subspace; `keep` masks out n=0 there.
    """

    weights: np.ndarray
    keep: np.ndarray | None = None

    @classmethod
    def for_beta(cls, beta: float, grid: FourierGrid) -> "StarMetric":
        if beta <= 1:
            raise ConfigurationError("full-space star metric requires beta > 1")
        n = grid.wavenumbers
        return cls(weights=1.0 - 1.0 / (beta**2 + n**2))

    @classmethod
    def for_alpha1(cls, grid: FourierGrid) -> "StarMetric":
        n = grid.wavenumbers
        w = 1.0 - 1.0 / (1.0 + n.astype(float) ** 2)
        return cls(weights=w, keep=n != 0)

    def sqrt_weights(self) -> np.ndarray:
        w = self.weights if self.keep is None else self.weights[self.keep]
        return np.sqrt(w)

    def norm_coeffs(self, c: np.ndarray) -> float:
        cc = c if self.keep is None else c[self.keep]
        w = self.weights if self.keep is None else self.weights[self.keep]
        return np.sqrt(TWO_PI * np.sum(w * np.abs(cc) ** 2))

    def inner_coeffs(self, c: np.ndarray, d: np.ndarray) -> complex:
        cc, dd = (c, d) if self.keep is None else (c[self.keep], d[self.keep])
        w = self.weights if self.keep is None else self.weights[self.keep]
        return TWO_PI * np.sum(cc * np.conj(dd) * w)
