"""Random Fourier features for the Gaussian (RBF) kernel.

``Phi(h) = M**-0.5 * (cos(w_1.h), sin(w_1.h), cos(w_2.h), sin(w_2.h), ...)``
with ``w_k ~ N(0, sigma**-2 I)``. The (cos, sin) pairs are interleaved and the
output always has unit norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RejectedParametersError, ShapeError
from .rng import standard_normal


@dataclass(frozen=True, eq=False)
class FeatureMap:
    omega: np.ndarray  # (M, d_h)
    sigma: float

    @property
    def M(self) -> int:
        return self.omega.shape[0]

    @property
    def d_in(self) -> int:
        return self.omega.shape[1]

    @property
    def d_out(self) -> int:
        return 2 * self.M

    def __call__(self, h: np.ndarray) -> np.ndarray:
        return apply(self, h)

    def to_dict(self) -> dict:
        return {"kind": "rbf", "sigma": float(self.sigma), "M": int(self.M), "omega": self.omega.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMap":
        omega = np.asarray(d["omega"], dtype=np.float64)
        if omega.ndim != 2 or omega.shape[0] != int(d["M"]):
            raise ShapeError(f"omega has shape {omega.shape}, expected ({d['M']}, d_h)")
        return cls(omega, float(d["sigma"]))


def sample_feature_map(d_h: int, M: int, sigma: float, rng: np.random.Generator) -> FeatureMap:
    """Draw ``M`` frequencies i.i.d. from ``N(0, sigma**-2 I_{d_h})``."""
    if not (isinstance(M, (int, np.integer)) and M >= 1):
        raise RejectedParametersError(f"M must be a positive integer, got {M!r}")
    if not (np.isfinite(sigma) and sigma > 0):
        raise RejectedParametersError(f"sigma must be positive, got {sigma!r}")
    if d_h < 1:
        raise RejectedParametersError(f"d_h must be positive, got {d_h!r}")
    omega = standard_normal(rng, (int(M), int(d_h))) / sigma
    omega.flags.writeable = False
    return FeatureMap(omega, float(sigma))


def apply(fmap: FeatureMap, h: np.ndarray) -> np.ndarray:
    """Feature vector(s) of ``h`` (shape ``(d_h,)`` or ``(n, d_h)``)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != fmap.d_in or h.ndim not in (1, 2):
        raise ShapeError(f"input has shape {h.shape}, expected (..., {fmap.d_in})")
    z = h @ fmap.omega.T
    out = np.empty(z.shape[:-1] + (2 * fmap.M,))
    out[..., 0::2] = np.cos(z)
    out[..., 1::2] = np.sin(z)
    out /= math.sqrt(fmap.M)
    return out


def rbf_kernel(sigma: float, h: np.ndarray, h2: np.ndarray) -> np.ndarray | float:
    """``exp(-||h - h2||**2 / (2 sigma**2))`` along the last axis."""
    d = np.asarray(h, dtype=np.float64) - np.asarray(h2, dtype=np.float64)
    val = np.exp(-np.sum(d * d, axis=-1) / (2.0 * sigma * sigma))
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class FeatureDiagnostics:
    """Observed errors of a feature map on grouped inputs.

    eps_rf : max ``|<Phi(h), Phi(h')> - psi(h, h')|`` over all input pairs.
    eps_O  : max ``|<Phi(h), Phi(h')>|`` over pairs from different groups.
    eps_S  : max ``||Phi(h) - Phi(h')||`` over pairs within a group.
    """

    eps_rf: float
    eps_O: float
    eps_S: float


def embedding_errors(groups: list[np.ndarray]) -> tuple[float, float]:
    """``(eps_O, eps_S)`` of already-embedded vectors grouped by patch (exact scan)."""
    eps_O = 0.0
    eps_S = 0.0
    groups = [np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in groups]
    for g in groups:
        if len(g) > 1:
            sq = np.sum(g * g, axis=1)
            d2 = sq[:, None] + sq[None, :] - 2.0 * g @ g.T
            eps_S = max(eps_S, float(np.sqrt(max(d2.max(), 0.0))))
    if len(groups) > 1:
        allx = np.concatenate(groups)
        owner = np.concatenate([np.full(len(g), i) for i, g in enumerate(groups)])
        gram = allx @ allx.T
        cross = owner[:, None] != owner[None, :]
        eps_O = float(np.abs(gram[cross]).max())
    return eps_O, eps_S


def measure_diagnostics(fmap: FeatureMap, inputs_by_patch: list[np.ndarray]) -> FeatureDiagnostics:
    """Push grouped pre-feature inputs through ``fmap`` and measure its errors."""
    groups = [np.atleast_2d(np.asarray(g, dtype=np.float64)) for g in inputs_by_patch]
    if any(len(g) == 0 for g in groups):
        raise ShapeError("every group needs at least one input")
    emb = [apply(fmap, g) for g in groups]
    eps_O, eps_S = embedding_errors(emb)
    H = np.concatenate(groups)
    X = np.concatenate(emb)
    sq = np.sum(H * H, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * H @ H.T, 0.0)
    psi = np.exp(-d2 / (2.0 * fmap.sigma**2))
    eps_rf = float(np.abs(X @ X.T - psi).max())
    return FeatureDiagnostics(eps_rf, eps_O, eps_S)


# ---------------------------------------------------------------------------
# schedules and calibration


def bandwidth_for(rho_tilde: float, eps_O: float) -> float:
    """Largest ``sigma`` with ``psi_sigma`` at distance ``rho_tilde`` equal to ``eps_O / 2``.

    That is ``sigma = rho_tilde / sqrt(2 log(2 / eps_O))``, so well-separated
    token clusters map to embeddings whose kernel overlap is at most ``eps_O / 2``
    (the remaining ``eps_O / 2`` is left for the random-feature error).
    """
    if not (0 < eps_O < 2):
        raise RejectedParametersError(f"eps_O must lie in (0, 2), got {eps_O}")
    return float(rho_tilde / math.sqrt(2.0 * math.log(2.0 / eps_O)))


def feature_count(d_h: int, eps_O: float, eps_S: float, rho_tilde: float, delta: float, constant: float = 1.0) -> int:
    """Feature count ``constant * d_h / e * log(d_h log(2/eps_O) / (rho_tilde**2 e delta))``,
    ``e = min(eps_O**2, eps_S**4)``.

    The shape of the sufficient width for near-orthogonal, tight patch
    embeddings; ``constant`` absorbs the unspecified universal constant and is
    meant to be set with :func:`calibrate_constant`.
    """
    e = min(eps_O**2, eps_S**4)
    arg = d_h * math.log(2.0 / eps_O) / (rho_tilde**2 * e * delta)
    return max(1, int(math.ceil(constant * d_h / e * math.log(max(arg, math.e)))))


@dataclass(frozen=True)
class Calibration:
    constant: float
    M: int
    success_rate: float
    trials: int


def onehot_patch_inputs(V: int, s: int) -> np.ndarray:
    """Concatenated one-hot inputs of all ``V**s`` patches, shape ``(V**s, s*V)``."""
    idx = np.indices((V,) * s).reshape(s, -1).T
    out = np.zeros((len(idx), s * V))
    for j in range(s):
        out[np.arange(len(idx)), j * V + idx[:, j]] = 1.0
    return out


def calibrate_constant(
    V: int,
    s: int,
    eps_O: float,
    rng: np.random.Generator,
    constants=(1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 0.2, 0.3, 0.5, 1.0),
    trials: int = 100,
    target_rate: float = 0.95,
    delta: float = 0.05,
    max_patches: int | None = None,
) -> Calibration:
    """Smallest width constant for which bottom-level one-hot patches reach ``eps_O``.

    For each candidate constant, ``trials`` maps are drawn at the width given by
    :func:`feature_count` (with ``eps_S = 1`` since one-hot inputs have no
    intracluster spread) and bandwidth :func:`bandwidth_for` at ``rho = sqrt(2)``.
    Returns the first constant whose success rate reaches ``target_rate``; the
    last one tried if none does.
    """
    H = onehot_patch_inputs(V, s)
    if max_patches is not None and len(H) > max_patches:
        H = H[rng.choice(len(H), max_patches, replace=False)]
    rho = math.sqrt(2.0)
    sigma = bandwidth_for(rho, eps_O)
    cal = None
    for c in constants:
        M = feature_count(s * V, eps_O, 1.0, rho, delta, c)
        ok = 0
        for _ in range(trials):
            fm = sample_feature_map(s * V, M, sigma, rng)
            eo, _ = embedding_errors([x[None, :] for x in apply(fm, H)])
            ok += eo <= eps_O
        cal = Calibration(float(c), M, ok / trials, trials)
        if cal.success_rate >= target_rate:
            break
    return cal
