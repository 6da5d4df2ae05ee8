"""Joint log-posterior of the generalised shared component model.

For feature ``k`` over ``N`` areas::

    Y_k ~ MVN(mu_k, diag(S_k^2))
    mu_k = z Lambda_k^T + tau_k * u_k

``z`` is an ``N x L`` matrix of unit-scale shared factors, ``Lambda`` a
``K x L`` lower-triangular loading matrix with positive diagonal and ``u_k``
unit-scale residual fields (non-centred, so ``eps_k = tau_k * u_k``). Each
column of ``z`` and each ``u_k`` gets an IID, ICAR or LCAR prior.

Hyperpriors: ``N(0, loading_scale)`` on free loadings, ``Gamma(2, 3)``
(shape, rate) on ``tau``, and ``Beta(6, 2)`` on ``rho / 0.99`` and
``kappa / 0.99``.

Sampling happens on an unconstrained vector. Diagonal loadings and ``tau``
are log-transformed; ``rho`` and ``kappa`` go through ``0.99 * logistic``.
All log-Jacobians are included.

Without measurement error (``S = 0``) the true values equal the estimates, so
``u_k = (Y_k - z Lambda_k^T) / tau_k`` is determined by the other parameters.
``u`` is then dropped from the state and the residual prior acts as the
likelihood, including the ``-N log tau_k`` change-of-variables term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .errors import ConfigError, DataValidationError, DimensionMismatchError, NonFiniteDensityError
from .graph import AdjacencyGraph, PrecisionPattern, prep_precision
from .priors import LOG_2PI, RHO_MAX, PriorKind, default_soft_zero_scale

__all__ = [
    "FeaturePanel",
    "ModelConfig",
    "ModelParams",
    "ParamLayout",
    "GSCM",
    "log_posterior",
    "log_posterior_grad",
    "reconstruct_mu",
    "prior_covariance",
    "implied_covariance",
    "simulate",
    "simulate_latent",
    "simulate_draws",
]


@dataclass
class FeaturePanel:
    """Transformed estimates ``Y`` with standard deviations ``S`` (both ``N x K``)."""

    Y: np.ndarray
    S: np.ndarray
    P: np.ndarray | None = None
    area_ids: list[str] | None = None
    feature_names: list[str] | None = None
    group_labels: list[str] | None = None

    def __post_init__(self):
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        N, K = self.Y.shape
        if self.S.shape != (N, K):
            raise DimensionMismatchError(f"S has shape {self.S.shape}, Y has {(N, K)}")
        if not (np.all(np.isfinite(self.Y)) and np.all(np.isfinite(self.S))):
            raise DataValidationError("Y and S must be finite")
        if np.any(self.S < 0):
            raise DataValidationError("S must be non-negative")
        if self.P is None:
            self.P = np.ones(N)
        self.P = np.asarray(self.P, dtype=float)
        if self.P.shape != (N,):
            raise DimensionMismatchError(f"P has shape {self.P.shape}, expected ({N},)")
        if self.area_ids is None:
            self.area_ids = [str(i) for i in range(N)]
        if self.feature_names is None:
            self.feature_names = [f"feature{k + 1}" for k in range(K)]
        if self.group_labels is None:
            self.group_labels = ["all"] * N
        if len(self.area_ids) != N or len(self.group_labels) != N or len(self.feature_names) != K:
            raise DimensionMismatchError("label lengths do not match Y")

    @property
    def n_areas(self) -> int:
        return self.Y.shape[0]

    @property
    def n_features(self) -> int:
        return self.Y.shape[1]

    def reorder_features(self, order) -> "FeaturePanel":
        """Panel with feature columns permuted; ``order`` holds names or indices."""
        unknown = [o for o in order if isinstance(o, str) and o not in self.feature_names]
        if unknown:
            raise ConfigError(f"unknown feature names in order: {unknown}")
        idx = [self.feature_names.index(o) if isinstance(o, str) else int(o) for o in order]
        if sorted(idx) != list(range(self.n_features)):
            raise ConfigError(f"feature order {list(order)} is not a permutation of {self.feature_names}")
        return replace(self, Y=self.Y[:, idx], S=self.S[:, idx],
                       feature_names=[self.feature_names[i] for i in idx])


@dataclass
class ModelConfig:
    """Model structure and hyperpriors.

    ``shared_prior`` and ``residual_prior`` accept a single kind (broadcast)
    or one kind per factor / feature. With ``first_residual_iid`` the first
    feature's residual always uses an IID prior.
    """

    n_factors: int = 2
    shared_prior: object = PriorKind.LCAR
    residual_prior: object = PriorKind.LCAR
    first_residual_iid: bool = True
    measurement_error: bool = True
    loading_scale: float = 1.0
    tau_shape: float = 2.0
    tau_rate: float = 3.0
    beta_a: float = 6.0
    beta_b: float = 2.0
    soft_zero_scale: float | None = None
    prior_only: bool = False

    def shared_kinds(self) -> list[PriorKind]:
        return _broadcast_kinds(self.shared_prior, self.n_factors, "shared_prior")

    def residual_kinds(self, n_features: int) -> list[PriorKind]:
        kinds = _broadcast_kinds(self.residual_prior, n_features, "residual_prior")
        if self.first_residual_iid:
            kinds[0] = PriorKind.IID
        return kinds

    def validate(self, n_features: int) -> None:
        L, K = self.n_factors, n_features
        if not 1 <= L < K:
            raise ConfigError(f"need 1 <= n_factors < n_features, got L={L}, K={K}")
        for name in ("loading_scale", "tau_shape", "tau_rate", "beta_a", "beta_b"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        self.shared_kinds()
        self.residual_kinds(K)


def _broadcast_kinds(value, n: int, name: str) -> list[PriorKind]:
    if isinstance(value, (str, PriorKind)):
        return [PriorKind.parse(value)] * n
    kinds = [PriorKind.parse(v) for v in value]
    if len(kinds) != n:
        raise ConfigError(f"{name} has {len(kinds)} entries, expected {n}")
    return kinds


@dataclass
class ModelParams:
    """Constrained parameter values.

    ``rho`` has one entry per factor and ``kappa`` one per feature; entries
    for non-LCAR priors are ignored (kept at 0). ``u`` is ``None`` when
    measurement error is switched off.
    """

    loadings: np.ndarray
    z: np.ndarray
    u: np.ndarray | None
    tau: np.ndarray
    rho: np.ndarray
    kappa: np.ndarray

    @property
    def eps(self) -> np.ndarray | None:
        return None if self.u is None else self.u * self.tau


def _logit_capped(x):
    r = np.asarray(x, dtype=float) / RHO_MAX
    return np.log(r) - np.log1p(-r)


class ParamLayout:
    """Slices of the unconstrained vector and the pack/unpack transforms.

    Order: free loadings (row-major, diagonal stored as log), ``z`` (N x L,
    row-major), ``u`` (N x K, row-major, only with measurement error; ICAR
    columns of ``z`` and ``u`` are stored Householder-reflected),
    ``log tau``, transformed ``rho`` for LCAR factors, transformed ``kappa``
    for LCAR residuals.
    """

    def __init__(self, n_areas: int, n_features: int, config: ModelConfig):
        config.validate(n_features)
        self.N, self.K, self.L = n_areas, n_features, config.n_factors
        self.has_u = bool(config.measurement_error)
        rows, cols = [], []
        for k in range(self.K):
            for l in range(min(k + 1, self.L)):
                rows.append(k)
                cols.append(l)
        self.load_rows = np.array(rows)
        self.load_cols = np.array(cols)
        self.load_is_diag = self.load_rows == self.load_cols
        self.n_loadings = len(rows)
        self.shared_kinds = config.shared_kinds()
        self.residual_kinds = config.residual_kinds(self.K)
        self.rho_idx = np.array([l for l, k in enumerate(self.shared_kinds) if k is PriorKind.LCAR], dtype=int)
        self.kappa_idx = np.array([k for k, kd in enumerate(self.residual_kinds) if kd is PriorKind.LCAR], dtype=int)
        self.z_icar = np.array([l for l, k in enumerate(self.shared_kinds) if k is PriorKind.ICAR], dtype=int)
        self.u_icar = np.array([k for k, kd in enumerate(self.residual_kinds) if kd is PriorKind.ICAR], dtype=int)
        w = -np.full(self.N, 1.0 / math.sqrt(self.N))
        w[0] += 1.0
        self._house = w / np.linalg.norm(w)
        sizes = [
            ("loadings", self.n_loadings),
            ("z", self.N * self.L),
            ("u", self.N * self.K if self.has_u else 0),
            ("tau", self.K),
            ("rho", len(self.rho_idx)),
            ("kappa", len(self.kappa_idx)),
        ]
        self.slices: dict[str, slice] = {}
        start = 0
        for name, size in sizes:
            self.slices[name] = slice(start, start + size)
            start += size
        self.dim = start

    def reflect(self, X: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Apply the Householder map swapping ``e_1`` and ``1 / sqrt(N)`` to ``cols``.

        ICAR fields are stored reflected so that their sum (pinned by the
        soft sum-to-zero penalty) is a single coordinate the diagonal metric
        can scale. The map is an involution with unit Jacobian.
        """
        if cols.size == 0:
            return X
        X = X.copy()
        w = self._house
        X[:, cols] -= 2.0 * np.outer(w, w @ X[:, cols])
        return X

    def loading_names(self) -> list[str]:
        return [f"lambda[{k + 1},{l + 1}]" for k, l in zip(self.load_rows, self.load_cols)]

    def loadings_from_free(self, free: np.ndarray) -> np.ndarray:
        vals = np.where(self.load_is_diag, np.exp(free), free)
        Lam = np.zeros((self.K, self.L))
        Lam[self.load_rows, self.load_cols] = vals
        return Lam

    def unpack(self, theta) -> ModelParams:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DimensionMismatchError(f"state has shape {theta.shape}, expected ({self.dim},)")
        sl = self.slices
        rho = np.zeros(self.L)
        rho[self.rho_idx] = RHO_MAX * special.expit(theta[sl["rho"]])
        kappa = np.zeros(self.K)
        kappa[self.kappa_idx] = RHO_MAX * special.expit(theta[sl["kappa"]])
        return ModelParams(
            loadings=self.loadings_from_free(theta[sl["loadings"]]),
            z=self.reflect(theta[sl["z"]].reshape(self.N, self.L), self.z_icar),
            u=self.reflect(theta[sl["u"]].reshape(self.N, self.K), self.u_icar) if self.has_u else None,
            tau=np.exp(theta[sl["tau"]]),
            rho=rho,
            kappa=kappa,
        )

    def pack(self, params: ModelParams) -> np.ndarray:
        Lam = np.asarray(params.loadings, dtype=float)
        if Lam.shape != (self.K, self.L):
            raise DimensionMismatchError(f"loadings have shape {Lam.shape}, expected {(self.K, self.L)}")
        vals = Lam[self.load_rows, self.load_cols]
        if np.any(vals[self.load_is_diag] <= 0):
            raise DataValidationError("diagonal loadings must be positive")
        theta = np.empty(self.dim)
        sl = self.slices
        theta[sl["loadings"]] = np.where(self.load_is_diag, np.log(np.where(self.load_is_diag, vals, 1.0)), vals)
        z = np.asarray(params.z, dtype=float).reshape(self.N, self.L)
        theta[sl["z"]] = self.reflect(z, self.z_icar).reshape(-1)
        if self.has_u:
            u = np.asarray(params.u, dtype=float).reshape(self.N, self.K)
            theta[sl["u"]] = self.reflect(u, self.u_icar).reshape(-1)
        theta[sl["tau"]] = np.log(params.tau)
        theta[sl["rho"]] = _logit_capped(np.asarray(params.rho)[self.rho_idx])
        theta[sl["kappa"]] = _logit_capped(np.asarray(params.kappa)[self.kappa_idx])
        return theta


def _kind_groups(kinds) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return tuple(np.array([j for j, k in enumerate(kinds) if k is kind], dtype=int)
                 for kind in (PriorKind.IID, PriorKind.LCAR, PriorKind.ICAR))


class GSCM:
    """Log-posterior and gradient for one dataset; pure and picklable.

    Parameters
    ----------
    data : FeaturePanel
    config : ModelConfig
    pattern : PrecisionPattern
        Precision pattern of the area graph (same ``N`` as ``data``).
    """

    def __init__(self, data: FeaturePanel, config: ModelConfig, pattern: PrecisionPattern):
        if pattern.n_areas != data.n_areas:
            raise DimensionMismatchError(f"pattern has {pattern.n_areas} areas, data has {data.n_areas}")
        self.data = data
        self.config = config
        self.pattern = pattern
        self.layout = ParamLayout(data.n_areas, data.n_features, config)
        if config.measurement_error and np.any(data.S <= 0):
            raise DataValidationError("S must be strictly positive when measurement error is modelled")
        self.soft_zero_scale = (config.soft_zero_scale if config.soft_zero_scale is not None
                                else default_soft_zero_scale(data.n_areas))
        self._inv_var = 1.0 / data.S**2 if config.measurement_error else None
        self._ll_const = (-0.5 * LOG_2PI - np.log(data.S)) if config.measurement_error else None
        self._eig = pattern.eigenvalues
        deg = pattern.degrees.astype(float)
        self._one_minus_deg = 1.0 - deg
        self._deg = deg
        self._z_groups = _kind_groups(self.layout.shared_kinds)
        self._u_groups = _kind_groups(self.layout.residual_kinds)
        lay = self.layout
        self._hyper_const = (
            lay.n_loadings * (-0.5 * LOG_2PI - math.log(config.loading_scale))
            + lay.K * (config.tau_shape * math.log(config.tau_rate) - special.gammaln(config.tau_shape))
            - (lay.rho_idx.size + lay.kappa_idx.size) * special.betaln(config.beta_a, config.beta_b)
        )

    @property
    def dim(self) -> int:
        return self.layout.dim

    # ---- latent prior blocks -------------------------------------------------

    def _latent_prior(self, X: np.ndarray, CX: np.ndarray, groups, autocorr):
        """Sum of unit-scale prior log-densities over columns of ``X``.

        ``groups`` holds the IID, LCAR and ICAR column indices. Returns
        ``(logp, grad_X, grad_autocorr)`` where ``grad_autocorr`` is
        d logp / d rho per column (zero for non-LCAR columns).
        """
        N = X.shape[0]
        iid, lcar, icar = groups
        logp = 0.0
        grad = np.empty_like(X)
        g_ac = np.zeros(X.shape[1])
        if iid.size:
            x = X[:, iid]
            logp -= 0.5 * (N * LOG_2PI * iid.size + np.vdot(x, x))
            grad[:, iid] = -x
        if lcar.size:
            x, cx, r = X[:, lcar], CX[:, lcar], autocorr[lcar]
            ax = x - cx * r
            one_m = 1.0 - self._eig[:, None] * r
            logp -= 0.5 * (N * LOG_2PI * lcar.size - np.log(one_m).sum() + np.vdot(x, ax))
            grad[:, lcar] = -ax
            g_ac[lcar] = -0.5 * (self._eig[:, None] / one_m).sum(axis=0) + 0.5 * np.einsum("ij,ij->j", x, cx)
        if icar.size:
            x = X[:, icar]
            qx = x - CX[:, icar]  # (D - W) x == (I - C) x
            s = self.soft_zero_scale
            tot = x.sum(axis=0)
            logp -= 0.5 * (np.vdot(x, qx) + icar.size * LOG_2PI + (tot @ tot) / s**2) + icar.size * math.log(s)
            grad[:, icar] = -qx - tot / s**2
        return logp, grad, g_ac

    def _hyper(self, theta):
        """Hyperprior terms with Jacobians, in unconstrained coordinates."""
        cfg, lay = self.config, self.layout
        sl = lay.slices
        g = np.zeros(lay.dim)
        # loadings: N(0, scale) on the constrained value, log-Jacobian on the diagonal
        free = theta[sl["loadings"]]
        diag = lay.load_is_diag
        vals = np.where(diag, np.exp(free), free)
        s2 = cfg.loading_scale**2
        lp = self._hyper_const - 0.5 * (vals @ vals) / s2 + free[diag].sum()
        g[sl["loadings"]] = np.where(diag, 1.0 - vals**2 / s2, -vals / s2)
        # tau ~ Gamma(shape, rate) with log transform: (a - 1) eta + eta - b tau
        eta = theta[sl["tau"]]
        tau = np.exp(eta)
        a, b = cfg.tau_shape, cfg.tau_rate
        lp += a * eta.sum() - b * tau.sum()
        g[sl["tau"]] = a - b * tau
        # rho, kappa: Beta(a, b) on r = value / 0.99, r = logistic(eta), Jacobian r (1 - r)
        ba, bb = cfg.beta_a, cfg.beta_b
        for name in ("rho", "kappa"):
            eta = theta[sl[name]]
            if eta.size == 0:
                continue
            lp -= ba * np.logaddexp(0.0, -eta).sum() + bb * np.logaddexp(0.0, eta).sum()
            r = special.expit(eta)
            g[sl[name]] = ba * (1.0 - r) - bb * r
        return lp, g

    # ---- main entry points ---------------------------------------------------

    def logp_and_grad(self, theta) -> tuple[float, np.ndarray]:
        """Log-posterior and its gradient in unconstrained space.

        Non-finite values are returned as ``-inf`` rather than raised.
        """
        theta = np.asarray(theta, dtype=float)
        lay, cfg, data = self.layout, self.config, self.data
        if theta.shape != (lay.dim,):
            raise DimensionMismatchError(f"state has shape {theta.shape}, expected ({lay.dim},)")
        sl = lay.slices
        N, K, L = lay.N, lay.K, lay.L
        with np.errstate(all="ignore"):
            free = theta[sl["loadings"]]
            Lam = lay.loadings_from_free(free)
            Z = lay.reflect(theta[sl["z"]].reshape(N, L), lay.z_icar)
            tau = np.exp(theta[sl["tau"]])
            rho = np.zeros(L)
            rho[lay.rho_idx] = RHO_MAX * special.expit(theta[sl["rho"]])
            kappa = np.zeros(K)
            kappa[lay.kappa_idx] = RHO_MAX * special.expit(theta[sl["kappa"]])

            grad = np.zeros(lay.dim)
            lp, g_h = self._hyper(theta)
            grad += g_h

            zl = Z @ Lam.T
            if lay.has_u:
                U = lay.reflect(theta[sl["u"]].reshape(N, K), lay.u_icar)
                CX = self.pattern.c_matvec(np.hstack([Z, U]))
                CZ, CU = CX[:, :L], CX[:, L:]
            else:
                CZ = self.pattern.c_matvec(Z)
                U = (data.Y - zl) / tau
                CU = self.pattern.c_matvec(U)

            lp_z, g_z, g_rho = self._latent_prior(Z, CZ, self._z_groups, rho)
            lp_u, g_u, g_kappa = self._latent_prior(U, CU, self._u_groups, kappa)
            lp += lp_z
            g_Z = g_z
            g_Lam = np.zeros((K, L))

            if lay.has_u:
                lp += lp_u
                g_U = g_u
                g_tau = np.zeros(K)
                if not cfg.prior_only:
                    resid = data.Y - zl - U * tau
                    R = resid * self._inv_var
                    lp += np.sum(self._ll_const - 0.5 * resid * R)
                    g_Z = g_Z + R @ Lam
                    g_Lam = R.T @ Z
                    g_U = g_U + R * tau
                    g_tau = np.sum(R * U, axis=0) * tau
                grad[sl["u"]] = lay.reflect(g_U, lay.u_icar).reshape(-1)
                grad[sl["tau"]] += g_tau
            elif not cfg.prior_only:
                # residual prior doubles as the likelihood of Y given z, Lambda, tau
                lp += lp_u - N * np.sum(np.log(tau))
                G = g_u / tau
                g_Z = g_Z - G @ Lam
                g_Lam = -G.T @ Z
                grad[sl["tau"]] += -np.sum(g_u * U, axis=0) - N
            else:
                g_kappa = np.zeros(K)

            grad[sl["z"]] = lay.reflect(g_Z, lay.z_icar).reshape(-1)
            g_free = g_Lam[lay.load_rows, lay.load_cols]
            g_free = np.where(lay.load_is_diag, g_free * Lam[lay.load_rows, lay.load_cols], g_free)
            grad[sl["loadings"]] += g_free
            if lay.rho_idx.size:
                r = special.expit(theta[sl["rho"]])
                grad[sl["rho"]] += g_rho[lay.rho_idx] * RHO_MAX * r * (1.0 - r)
            if lay.kappa_idx.size:
                r = special.expit(theta[sl["kappa"]])
                grad[sl["kappa"]] += g_kappa[lay.kappa_idx] * RHO_MAX * r * (1.0 - r)

        lp = float(lp)
        if not np.isfinite(lp) or not np.all(np.isfinite(grad)):
            return -np.inf, grad
        return lp, grad

    def log_posterior(self, theta) -> float:
        return self.logp_and_grad(theta)[0]

    def __call__(self, theta):
        return self.logp_and_grad(theta)

    def unpack(self, theta) -> ModelParams:
        return self.layout.unpack(theta)

    def pack(self, params: ModelParams) -> np.ndarray:
        return self.layout.pack(params)

    def mu(self, theta) -> np.ndarray:
        return reconstruct_mu(self.unpack(theta), self.config, self.data)

    def pointwise_loglik(self, theta) -> np.ndarray:
        """Log-likelihood per observation, an ``N x K`` matrix.

        With measurement error this is ``log N(Y_nk | mu_nk, S_nk)``. Without
        it, observation ``(n, k)`` is scored by the full conditional of the
        residual field at area ``n`` given its neighbours.
        """
        p = self.unpack(theta)
        data = self.data
        if self.layout.has_u:
            resid = data.Y - (p.z @ p.loadings.T + p.u * p.tau)
            return self._ll_const - 0.5 * resid**2 * self._inv_var
        R = data.Y - p.z @ p.loadings.T
        out = np.empty_like(R)
        W_R = self.pattern.c_matvec(R) - self._one_minus_deg[:, None] * R
        for k, kind in enumerate(self.layout.residual_kinds):
            t = p.tau[k]
            if kind is PriorKind.IID:
                mean, sd = 0.0, t
            elif kind is PriorKind.LCAR:
                prec = 1.0 - p.kappa[k] * self._one_minus_deg
                mean = p.kappa[k] * W_R[:, k] / prec
                sd = t / np.sqrt(prec)
            else:
                mean = W_R[:, k] / self._deg
                sd = t / np.sqrt(self._deg)
            out[:, k] = -0.5 * LOG_2PI - np.log(sd) - 0.5 * ((R[:, k] - mean) / sd) ** 2
        return out


def log_posterior(state, data: FeaturePanel, config: ModelConfig, pattern: PrecisionPattern) -> float:
    """Joint log-posterior at an unconstrained state vector.

    Raises :class:`NonFiniteDensityError` on overflow or NaN.
    """
    lp = GSCM(data, config, pattern).log_posterior(state)
    if not np.isfinite(lp):
        raise NonFiniteDensityError("log-posterior is not finite at this state")
    return lp


def log_posterior_grad(state, data: FeaturePanel, config: ModelConfig, pattern: PrecisionPattern) -> np.ndarray:
    lp, g = GSCM(data, config, pattern).logp_and_grad(state)
    if not np.isfinite(lp):
        raise NonFiniteDensityError("log-posterior is not finite at this state")
    return g


def reconstruct_mu(params: ModelParams, config: ModelConfig, data: FeaturePanel | None = None) -> np.ndarray:
    """True values ``mu = z Lambda^T + eps``.

    Without measurement error the estimates are the true values, so ``data``
    is required and ``Y`` is returned.
    """
    if params.u is None:
        if data is None:
            raise ConfigError("data is required to reconstruct mu without measurement error")
        return data.Y.copy()
    return params.z @ np.asarray(params.loadings).T + params.u * params.tau


def prior_covariance(kind, autocorr: float, pattern: PrecisionPattern, scale: float = 1.0) -> np.ndarray:
    """Dense covariance of a prior; ICAR uses the sum-to-zero pseudo-inverse."""
    kind = PriorKind.parse(kind)
    N = pattern.n_areas
    if kind is PriorKind.IID:
        cov = np.eye(N)
    elif kind is PriorKind.LCAR:
        cov = np.linalg.inv(np.eye(N) - autocorr * pattern.dense())
    else:
        cov = np.linalg.pinv(np.eye(N) - pattern.dense(), hermitian=True)
    return scale**2 * 0.5 * (cov + cov.T)


def implied_covariance(loadings, shared_covs, residual_covs, S) -> np.ndarray:
    """Marginal covariance of ``vec(Y)`` (feature-major stacking).

    ``A bdiag(shared) A^T + bdiag(residual) + diag(S^2)`` with
    ``A = Lambda kron I_N``.
    """
    Lam = np.atleast_2d(np.asarray(loadings, dtype=float))
    K, L = Lam.shape
    shared_covs = [np.asarray(c, dtype=float) for c in shared_covs]
    residual_covs = [np.asarray(c, dtype=float) for c in residual_covs]
    S = np.asarray(S, dtype=float)
    if len(shared_covs) != L or len(residual_covs) != K:
        raise DimensionMismatchError("need one shared covariance per factor and one residual per feature")
    N = shared_covs[0].shape[0]
    if any(c.shape != (N, N) for c in shared_covs + residual_covs) or S.shape != (N, K):
        raise DimensionMismatchError("covariance blocks and S must share N")
    A = np.kron(Lam, np.eye(N))
    from scipy.linalg import block_diag

    cov = A @ block_diag(*shared_covs) @ A.T + block_diag(*residual_covs)
    cov[np.diag_indices_from(cov)] += (S.T.reshape(-1)) ** 2
    return cov


def _draw_prior(kind, autocorr, pattern, rng, size=None) -> np.ndarray:
    cov = prior_covariance(kind, autocorr, pattern)
    w, V = np.linalg.eigh(cov)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    n = 1 if size is None else size
    draws = rng.standard_normal((n, pattern.n_areas)) @ root.T
    return draws[0] if size is None else draws


def simulate_latent(config: ModelConfig, params: ModelParams, graph, seed, n_features: int | None = None,
                    size: int | None = None) -> ModelParams:
    """Draw ``z`` and ``u`` from their priors given loadings, tau, rho, kappa.

    With ``size`` the latent fields gain a leading replicate axis.
    """
    pattern = graph if isinstance(graph, PrecisionPattern) else prep_precision(graph)
    Lam = np.atleast_2d(np.asarray(params.loadings, dtype=float))
    K = Lam.shape[0] if n_features is None else n_features
    rng = np.random.default_rng(seed)
    shared = config.shared_kinds()
    resid = config.residual_kinds(K)
    rho = np.asarray(params.rho, dtype=float)
    kappa = np.asarray(params.kappa, dtype=float)
    z = np.stack([_draw_prior(kd, rho[l], pattern, rng, size) for l, kd in enumerate(shared)], axis=-1)
    u = np.stack([_draw_prior(kd, kappa[k], pattern, rng, size) for k, kd in enumerate(resid)], axis=-1)
    return ModelParams(loadings=Lam, z=z, u=u, tau=np.asarray(params.tau, dtype=float), rho=rho, kappa=kappa)


def simulate_draws(config: ModelConfig, params: ModelParams, graph, seed, S=None, size: int = 1) -> np.ndarray:
    """``size`` independent replicate panels ``Y`` as a ``(size, N, K)`` array.

    Uses the same generative steps as :func:`simulate`, vectorised over
    replicates (the random streams differ from ``simulate``).
    """
    latent_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    truth = simulate_latent(config, params, graph, latent_seed, size=size)
    n, N, K = truth.u.shape
    S = np.zeros((N, K)) if S is None else np.broadcast_to(np.asarray(S, dtype=float), (N, K))
    mu = truth.z @ truth.loadings.T + truth.u * truth.tau
    return mu + S * np.random.default_rng(noise_seed).standard_normal((n, N, K))


def simulate(config: ModelConfig, params: ModelParams, graph, seed, S=None, *, return_truth: bool = False,
             area_ids=None, feature_names=None, group_labels=None, P=None):
    """Generate a synthetic :class:`FeaturePanel` from the model.

    ``params`` supplies loadings, tau, rho and kappa; ``z`` and ``u`` are
    drawn from their priors. Measurement noise uses the given ``S`` (zeros if
    omitted). Output is a deterministic function of ``seed``.
    """
    ss = np.random.SeedSequence(seed)
    latent_seed, noise_seed = ss.spawn(2)
    truth = simulate_latent(config, params, graph, latent_seed)
    N, K = truth.u.shape
    S = np.zeros((N, K)) if S is None else np.broadcast_to(np.asarray(S, dtype=float), (N, K)).copy()
    mu = reconstruct_mu(truth, config)
    noise = np.random.default_rng(noise_seed).standard_normal((N, K))
    panel = FeaturePanel(Y=mu + S * noise, S=S, P=P, area_ids=area_ids, feature_names=feature_names,
                         group_labels=group_labels)
    return (panel, truth) if return_truth else panel
