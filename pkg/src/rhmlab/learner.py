"""Layerwise-trained convolutional learner for RHM data.

Each level ``l = L..1`` maps every patch of ``s`` token embeddings to a patch
embedding ``x = Phi(h_1 o ... o h_s)`` and then to a normalized output
``W x / <1, W x>`` that serves as the token embedding of level ``l - 1``.
Level ``L`` sees one-hot tokens and level 1 produces the label scores.

Training proceeds bottom-up (stage ``L`` first). Stage ``l`` draws fresh
samples, runs the frozen lower levels on the leaves under the first level-``l``
patch, and fits ``W`` by ridge regression of ``e_label`` on the first patch
embedding, either in closed form or by gradient descent from ``W = 0``.

Implementation notes
--------------------
* Patch embeddings are deterministic functions of the leaf tokens below the
  patch, so forward passes and the ridge statistics work on *distinct*
  subtrees (with multiplicities) rather than on every row. The weighted problem
  has the same minimizer and the same GD iterates as the per-row one.
* Gradient descent runs in the span of the embeddings (``W = Z X``) whenever the
  feature dimension exceeds the number of distinct rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import (
    DegenerateNormalizationError,
    NumericError,
    RejectedParametersError,
    ShapeError,
    StageFailureError,
    StepSizeError,
    UndefinedModelError,
)
from .features import FeatureMap, bandwidth_for, embedding_errors, feature_count, sample_feature_map
from .grammar import Dataset, RhmInstance, RhmParams, encode_patches, generate
from .oracle import TransitionStats, compute_stats
from .rng import spawn

TAU_NORM = 1e-9


# ---------------------------------------------------------------------------
# patch embedders


@dataclass(frozen=True)
class TensorProductMap:
    """``h_1 o ... o h_s -> h_1 (x) ... (x) h_s``; orthonormal on one-hot tokens."""

    V: int
    s: int

    @property
    def d_in(self) -> int:
        return self.s * self.V

    @property
    def d_out(self) -> int:
        return self.V**self.s

    def __call__(self, h: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(h, dtype=np.float64))
        if h.shape[-1] != self.d_in:
            raise ShapeError(f"input has shape {h.shape}, expected (..., {self.d_in})")
        blocks = h.reshape(len(h), self.s, self.V)
        out = blocks[:, 0, :]
        for j in range(1, self.s):
            out = (out[:, :, None] * blocks[:, j, None, :]).reshape(len(h), -1)
        return out

    def to_dict(self) -> dict:
        return {"kind": "tensor", "V": self.V, "s": self.s}


@dataclass(frozen=True, eq=False)
class ClusterTensorMap:
    """Snap each token embedding to its nearest center, then one-hot tensor product.

    ``centers[mu]`` is the canonical embedding of symbol ``mu``.
    """

    centers: np.ndarray  # (V, V)
    s: int

    @property
    def V(self) -> int:
        return self.centers.shape[0]

    @property
    def d_in(self) -> int:
        return self.s * self.centers.shape[1]

    @property
    def d_out(self) -> int:
        return self.V**self.s

    def snap(self, h: np.ndarray) -> np.ndarray:
        """Nearest-center symbol of every token, shape ``(n, s)``."""
        h = np.atleast_2d(np.asarray(h, dtype=np.float64))
        if h.shape[-1] != self.d_in:
            raise ShapeError(f"input has shape {h.shape}, expected (..., {self.d_in})")
        tok = h.reshape(len(h), self.s, -1)
        d = np.sqrt(np.sum((tok[:, :, None, :] - self.centers[None, None, :, :]) ** 2, axis=-1))
        # lowest index among (numerically) tied centers, so coinciding centers merge
        near = d <= d.min(axis=-1, keepdims=True) + 1e-12
        return np.argmax(near, axis=-1)

    def __call__(self, h: np.ndarray) -> np.ndarray:
        codes = encode_patches(self.snap(h), self.V)
        out = np.zeros((len(codes), self.d_out))
        out[np.arange(len(codes)), codes] = 1.0
        return out

    def to_dict(self) -> dict:
        return {"kind": "cluster", "s": self.s, "centers": self.centers.tolist()}


def embedder_from_dict(d: dict):
    kind = d.get("kind", "rbf")
    if kind == "rbf":
        return FeatureMap.from_dict(d)
    if kind == "tensor":
        return TensorProductMap(int(d["V"]), int(d["s"]))
    if kind == "cluster":
        return ClusterTensorMap(np.asarray(d["centers"], dtype=np.float64), int(d["s"]))
    raise ValueError(f"unknown embedder kind {kind!r}")


# ---------------------------------------------------------------------------
# configuration and model containers


@dataclass(frozen=True)
class LayerConfig:
    """Per-stage hyperparameters.

    ``lambda_W`` and ``eta`` left as ``None`` resolve to ``1/(V m)`` and
    ``2 V m / (V m + 1)``. ``solver`` is ``"gd"`` or ``"closed_form"``.
    """

    N: int
    T: int
    M: int
    sigma: float
    eta: float | None = None
    lambda_W: float | None = None
    eps_target: float = 0.1
    solver: str = "gd"

    def resolved(self, V: int, m: int) -> "LayerConfig":
        lam = self.lambda_W if self.lambda_W is not None else 1.0 / (V * m)
        eta = self.eta if self.eta is not None else 2.0 * V * m / (V * m + 1)
        return replace(self, lambda_W=lam, eta=eta)

    def check(self) -> None:
        if self.N < 1 or self.M < 1 or self.T < 0:
            raise RejectedParametersError(f"N, M must be positive and T nonnegative: {self}")
        if not self.sigma > 0 or (self.eta is not None and not self.eta > 0):
            raise RejectedParametersError(f"sigma and eta must be positive: {self}")
        if self.lambda_W is not None and not self.lambda_W > 0:
            raise RejectedParametersError(f"lambda_W must be positive: {self}")
        if self.solver not in ("gd", "closed_form"):
            raise RejectedParametersError(f"unknown solver {self.solver!r}")


@dataclass(frozen=True, eq=False)
class LayerWeights:
    W: np.ndarray  # (V, d_x)
    loss_trace: tuple | None = None
    eta_used: float | None = None


@dataclass(frozen=True, eq=False)
class TrainedLevel:
    level: int
    embedder: object
    weights: LayerWeights
    config: LayerConfig | None = None


@dataclass(eq=False)
class TrainedModel:
    """Levels stored from ``L`` (bottom) down to 1 (top)."""

    params: RhmParams
    levels: list[TrainedLevel]
    diagnostics: list[dict] = field(default_factory=list)

    def check(self) -> None:
        p = self.params
        if len(self.levels) != p.L:
            raise ShapeError(f"model has {len(self.levels)} levels, expected {p.L}")
        for lv in self.levels:
            if lv.embedder.d_in != p.s * p.V or lv.weights.W.shape != (p.V, lv.embedder.d_out):
                raise ShapeError(f"level {lv.level} has inconsistent shapes")


# ---------------------------------------------------------------------------
# single-level operations


def embed_patch(embedder, token_embeddings) -> np.ndarray:
    """Patch embedding of ``s`` token vectors (concatenate, then feature map)."""
    toks = [np.asarray(t, dtype=np.float64) for t in token_embeddings]
    h = np.concatenate(toks)
    if h.shape != (embedder.d_in,):
        raise ShapeError(f"concatenated tokens have shape {h.shape}, expected ({embedder.d_in},)")
    return embedder(h[None, :])[0]


def forward_level(W, x: np.ndarray) -> np.ndarray:
    """Normalized level output ``W x / <1, W x>`` for one or many embeddings."""
    W = W.W if isinstance(W, LayerWeights) else np.asarray(W)
    y = np.asarray(x, dtype=np.float64) @ W.T
    z = y.sum(axis=-1, keepdims=True)
    small = np.abs(z) < TAU_NORM
    if np.any(small):
        raise DegenerateNormalizationError(
            f"|<1, W x>| = {float(np.abs(z).min()):.3g} below {TAU_NORM:g} for {int(small.sum())} input(s)"
        )
    return y / z


def _normalized_weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
        raise ShapeError("weights must be nonnegative with positive sum, one per row")
    return w / w.sum()


def _check_inputs(X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or len(X) != len(Y):
        raise ShapeError(f"X {X.shape} and Y {Y.shape} must be 2-d with matching rows")
    if len(X) == 0:
        raise UndefinedModelError("no samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise NumericError("non-finite entries in the regression data")
    return X, Y


def ridge_loss(W: np.ndarray, X, Y, lambda_W: float, weights=None) -> float:
    """``0.5 * E ||y - W x||**2 + 0.5 * lambda_W * ||W||_F**2`` (weighted mean)."""
    X, Y = _check_inputs(X, Y)
    w = _normalized_weights(len(X), weights)
    R = Y - X @ W.T
    return float(0.5 * np.sum(w * np.sum(R * R, axis=1)) + 0.5 * lambda_W * np.sum(W * W))


def ridge_gradient(W: np.ndarray, X, Y, lambda_W: float, weights=None) -> np.ndarray:
    """Gradient ``W (E[x x^T] + lambda I) - E[y x^T]`` of :func:`ridge_loss`."""
    X, Y = _check_inputs(X, Y)
    w = _normalized_weights(len(X), weights)
    R = X @ W.T - Y
    return (R * w[:, None]).T @ X + lambda_W * W


def solve_closed_form(X, Y, lambda_W: float, weights=None, method: str = "auto") -> LayerWeights:
    """Ridge minimizer ``E[y x^T] (E[x x^T] + lambda I)^-1``.

    ``method="auto"`` uses the dual form ``E (G + lambda N I)^-1 X^T`` (here with
    row weights) when the feature dimension exceeds the number of rows.
    """
    if not lambda_W > 0:
        raise RejectedParametersError(f"lambda_W must be positive, got {lambda_W}")
    X, Y = _check_inputs(X, Y)
    w = _normalized_weights(len(X), weights)
    n, D = X.shape
    if method == "auto":
        method = "dual" if D > n else "primal"
    if method == "primal":
        A = (X * w[:, None]).T @ X
        A[np.diag_indices(D)] += lambda_W
        B = (Y * w[:, None]).T @ X
        W = np.linalg.solve(A, B.T).T
    elif method == "dual":
        K = w[:, None] * (X @ X.T)
        K[np.diag_indices(n)] += lambda_W
        Z = np.linalg.solve(K, Y * w[:, None])
        W = Z.T @ X
    else:
        raise ValueError(f"unknown method {method!r}")
    return LayerWeights(W)


def train_level_gd(
    X,
    Y,
    config: LayerConfig,
    weights=None,
    fallback: bool = True,
    record_loss: bool = True,
) -> LayerWeights:
    """``T`` full-batch GD steps on the ridge objective from ``W = 0``.

    If the loss rises for 10 consecutive steps the run is restarted once with
    the conservative step ``1 / (1 + lambda_W)`` (when ``fallback``), otherwise
    :class:`StepSizeError` is raised.
    """
    X, Y = _check_inputs(X, Y)
    lam = config.lambda_W if config.lambda_W is not None else 1.0 / Y.shape[1]
    eta = config.eta if config.eta is not None else 2.0 / (1.0 + lam)
    w = _normalized_weights(len(X), weights)
    try:
        return _gd(X, Y, w, lam, eta, config.T, record_loss)
    except StepSizeError:
        if not fallback:
            raise
        return _gd(X, Y, w, lam, 1.0 / (1.0 + lam), config.T, record_loss)


def _gd(X, Y, w, lam, eta, T, record_loss) -> LayerWeights:
    n, D = X.shape
    V = Y.shape[1]
    B = (Y * w[:, None]).T @ X  # (V, D)
    yy = 0.5 * float(np.sum(w * np.sum(Y * Y, axis=1)))
    trace = []
    rises = 0
    prev = None
    if D > n:
        # W = Z X with Z in R^{V x n}; exact reparametrization of the same iterates.
        G = X @ X.T
        Yw = Y * w[:, None]
        Z = np.zeros((V, n))
        for t in range(T + 1):
            ZG = Z @ G  # column i is W x_i
            loss = yy - float(np.sum(Yw.T * ZG)) + 0.5 * float(np.sum(w * np.sum(ZG * ZG, axis=0)))
            loss += 0.5 * lam * float(np.sum(Z * ZG))
            rises, prev = _monitor(loss, prev, rises)
            trace.append(loss)
            if t == T:
                break
            Z = Z - eta * (ZG * w[None, :] - Yw.T + lam * Z)
        W = Z @ X
    else:
        A = (X * w[:, None]).T @ X
        W = np.zeros((V, D))
        for t in range(T + 1):
            WA = W @ A
            loss = yy - float(np.sum(B * W)) + 0.5 * float(np.sum(WA * W)) + 0.5 * lam * float(np.sum(W * W))
            rises, prev = _monitor(loss, prev, rises)
            trace.append(loss)
            if t == T:
                break
            W = W - eta * (WA - B + lam * W)
    if not np.all(np.isfinite(W)):
        raise StepSizeError("gradient descent produced non-finite weights")
    return LayerWeights(W, tuple(trace) if record_loss else None, eta)


def _monitor(loss, prev, rises):
    if not math.isfinite(loss):
        raise StepSizeError("loss became non-finite")
    if prev is not None and loss > prev * (1 + 1e-12) + 1e-300:
        rises += 1
        if rises >= 10:
            raise StepSizeError("loss increased for 10 consecutive steps")
    else:
        rises = 0
    return rises, loss


# ---------------------------------------------------------------------------
# forward pass over distinct subtrees


def propagate(levels: list[TrainedLevel], tokens: np.ndarray, V: int, s: int):
    """Run ``levels`` (bottom first) on leaf sequences.

    Returns ``(ids, table)``: ``table[ids[i, k]]`` is the output embedding of
    patch ``k`` of row ``i`` after the last level in ``levels`` (with no levels,
    the one-hot token embeddings).
    """
    ids = np.asarray(tokens, dtype=np.int64)
    table = np.eye(V)
    n = len(ids)
    for lv in levels:
        patches = ids.reshape(-1, s)
        uniq, inv = np.unique(patches, axis=0, return_inverse=True)
        H = table[uniq].reshape(len(uniq), -1)
        X = lv.embedder(H)
        try:
            table = forward_level(lv.weights, X)
        except DegenerateNormalizationError as exc:
            raise DegenerateNormalizationError(f"level {lv.level}: {exc}") from None
        ids = inv.reshape(n, -1)
    return ids, table


def predict_scores(model: TrainedModel, tokens: np.ndarray) -> np.ndarray:
    """Level-1 outputs ``h^(0)_1`` for each row of ``tokens``."""
    p = model.params
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    if tokens.shape[1] != p.length:
        raise ShapeError(f"expected sentences of length {p.length}, got {tokens.shape[1]}")
    ids, table = propagate(model.levels, tokens, p.V, p.s)
    return table[ids[:, 0]]


def predict(model: TrainedModel, tokens) -> np.ndarray | int:
    """Argmax label (lowest index on ties); scalar for a single sentence."""
    arr = np.asarray(tokens)
    scores = predict_scores(model, arr)
    labels = np.argmax(scores, axis=1)
    return int(labels[0]) if arr.ndim == 1 else labels


def accuracy(model: TrainedModel, data: Dataset) -> float:
    return float(np.mean(predict(model, data.tokens) == data.labels))


# ---------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class ScheduleMultipliers:
    """Constants in front of the schedule shapes.

    ``N^(l) = c_N * max(kappa, eps_l**-2) * log(V m / delta)``,
    ``eps_l = c_eps * K_rho m^(-l/2) / sqrt(V^2 m^2 s L log m)``,
    ``T^(l) = c_T * |P| * log(100 |P| kappa sqrt(V) / eps_l)``,
    ``eps_O^(l) = c_O * eps_l / (|P|^2 kappa sqrt(V))`` floored at ``eps_O_min``,
    ``sigma^(l)`` from :func:`rhmlab.features.bandwidth_for` at separation
    ``sqrt(2)`` (one-hot level) or ``K_rho m^(-(l+1)/2) / 2`` (times ``c_sigma``, which widens only the
    levels whose inputs are learned embeddings), and
    ``M^(l) = c_M * feature_count(...)`` clipped to ``[M_min, M_max]``.
    """

    c_N: float = 0.05
    c_eps: float = 1.0
    c_T: float = 1.0
    c_O: float = 1.0
    c_M: float = 1.0
    c_sigma: float = 5.0
    eps_O_min: float = 1e-3
    M_min: int = 256
    M_max: int = 2048
    delta: float = 0.05
    solver: str = "gd"


def default_schedule(
    params: RhmParams,
    K_rho: float,
    kappa: float = 1.0,
    mult: ScheduleMultipliers = ScheduleMultipliers(),
) -> list[LayerConfig]:
    """Per-level configs, ordered from level ``L`` down to 1."""
    L, s, V, m = params.L, params.s, params.V, params.m
    if not K_rho > 0:
        raise RejectedParametersError("K_rho must be positive to build a schedule")
    P = V * m
    logm = math.log(max(m, 2))
    configs = []
    for l in range(L, 0, -1):
        eps = mult.c_eps * K_rho * m ** (-l / 2) / math.sqrt(V * V * m * m * s * L * logm)
        N = int(math.ceil(mult.c_N * max(kappa, eps**-2) * math.log(V * m / mult.delta)))
        T = int(math.ceil(mult.c_T * P * math.log(100 * P * kappa * math.sqrt(V) / eps)))
        eps_O = max(mult.c_O * eps / (P * P * kappa * math.sqrt(V)), mult.eps_O_min)
        eps_O = min(eps_O, 0.5)
        rho_t = math.sqrt(2.0) if l == L else K_rho * m ** (-(l + 1) / 2) / 2
        sigma = bandwidth_for(rho_t, eps_O) * (1.0 if l == L else mult.c_sigma)
        M = feature_count(s * V, eps_O, max(eps, 1e-12) ** 0.5, rho_t, mult.delta, mult.c_M)
        M = int(min(max(M, mult.M_min), mult.M_max))
        configs.append(LayerConfig(N=N, T=T, M=M, sigma=sigma, eps_target=eps, solver=mult.solver))
    return configs


def geometric_allocation(total: int, L: int, ratio: float) -> list[int]:
    """Split ``total`` over levels ``L..1`` proportionally to ``ratio**l`` (floors)."""
    w = np.array([ratio**l for l in range(L, 0, -1)], dtype=np.float64)
    return [int(v) for v in np.floor(total * w / w.sum())]


# ---------------------------------------------------------------------------
# layerwise training


DataSource = Callable[[int, np.random.Generator], Dataset]


def _as_source(data) -> DataSource:
    if isinstance(data, RhmInstance):
        inst = data
        return lambda n, rng: generate(inst, n, rng, keep_intermediates=True)
    return data


def _stage_diagnostics(level, X, outputs, uniq_tok_emb, first_patch_codes, inv, parents, stats, max_rows=600):
    """Oracle-aided cluster diagnostics of one trained stage (not used for training)."""
    diag = {"level": level, "n_unique": int(len(X))}
    rep_patch = np.zeros(len(X), dtype=np.int64)
    rep_patch[inv] = first_patch_codes
    rep_parent = np.zeros(len(X), dtype=np.int64)
    rep_parent[inv] = parents
    sel = np.arange(len(X))
    if len(sel) > max_rows:
        sel = np.linspace(0, len(X) - 1, max_rows).astype(int)
    groups = [X[sel][rep_patch[sel] == c] for c in np.unique(rep_patch[sel])]
    eps_O, eps_S = embedding_errors(groups)
    diag["eps_O"] = eps_O
    diag["eps_S"] = eps_S
    out_groups = [outputs[sel][rep_parent[sel] == c] for c in np.unique(rep_parent[sel])]
    intra = 0.0
    for g in out_groups:
        if len(g) > 1:
            intra = max(intra, float(np.max(np.linalg.norm(g[:, None, :] - g[None, :, :], axis=-1))))
    cents = [g.mean(axis=0) for g in out_groups]
    inter = float("inf")
    for i in range(len(out_groups)):
        for j in range(i + 1, len(out_groups)):
            d = np.linalg.norm(out_groups[i][:, None, :] - out_groups[j][None, :, :], axis=-1)
            inter = min(inter, float(d.min()))
    diag["out_intra"] = intra
    diag["out_inter"] = inter if math.isfinite(inter) else None
    diag["n_out_clusters"] = len(cents)
    if stats is not None:
        q = stats.q[level - 1][:, 0, :]  # per parent
        diag["q_err"] = float(np.max(np.linalg.norm(outputs[sel] - q[rep_parent[sel]], axis=1)))
    return diag


def train_layerwise(
    data,
    configs: list[LayerConfig],
    rng: np.random.Generator,
    params: RhmParams | None = None,
    stats: TransitionStats | None = None,
    diagnostics: bool = True,
) -> TrainedModel:
    """Train all levels bottom-up with fresh samples per stage.

    ``data`` is an :class:`RhmInstance` or a callable ``(n, rng) -> Dataset``
    (intermediates are only needed for ``diagnostics``). ``configs[0]``
    belongs to level ``L``.
    """
    if isinstance(data, RhmInstance):
        params = data.params
        if diagnostics and stats is None:
            stats = compute_stats(data)
    if params is None:
        raise RejectedParametersError("params are required when data is not an RhmInstance")
    L, s, V, m = params.L, params.s, params.V, params.m
    if len(configs) != L:
        raise RejectedParametersError(f"expected {L} layer configs, got {len(configs)}")
    source = _as_source(data)
    trained: list[TrainedLevel] = []
    diags = []
    for k, level in enumerate(range(L, 0, -1)):
        cfg = configs[k].resolved(V, m)
        cfg.check()
        data_rng = spawn(rng, level, 0)
        feat_rng = spawn(rng, level, 1)
        ds = source(cfg.N, data_rng)
        span = s ** (L - level + 1)
        leaves = np.asarray(ds.tokens)[:, :span]
        try:
            ids, table = propagate(trained, leaves, V, s)
        except DegenerateNormalizationError as exc:
            raise StageFailureError(level, str(exc)) from None
        uniq, inv = np.unique(ids, axis=0, return_inverse=True)
        inv = inv.ravel()
        H = table[uniq].reshape(len(uniq), s * V)
        fmap = sample_feature_map(s * V, cfg.M, cfg.sigma, feat_rng)
        X = fmap(H)
        counts = np.bincount(inv, minlength=len(uniq)).astype(np.float64)
        Ysum = np.zeros((len(uniq), V))
        np.add.at(Ysum, (inv, ds.labels), 1.0)
        Ymean = Ysum / counts[:, None]
        if cfg.solver == "closed_form":
            lw = solve_closed_form(X, Ymean, cfg.lambda_W, weights=counts)
        else:
            lw = train_level_gd(X, Ymean, cfg, weights=counts, record_loss=False)
        try:
            outputs = forward_level(lw, X)
        except DegenerateNormalizationError as exc:
            raise StageFailureError(level, str(exc)) from None
        trained.append(TrainedLevel(level, fmap, lw, cfg))
        if diagnostics and ds.intermediates is not None:
            lvl_seq = ds.tokens if level == L else ds.intermediates[level]
            first_codes = encode_patches(np.asarray(lvl_seq)[:, :s], V)
            parents = np.asarray(ds.intermediates[level - 1])[:, 0]
            d = _stage_diagnostics(level, X, outputs, H, first_codes, inv, parents, stats)
        else:
            d = {"level": level, "n_unique": int(len(X))}
        d["N"] = int(cfg.N)
        diags.append(d)
    return TrainedModel(params, trained, diags)


# ---------------------------------------------------------------------------
# hand-built models


def build_construction_model(
    instance: RhmInstance,
    stats: TransitionStats | None = None,
    variant: int = 2,
    rng: np.random.Generator | None = None,
    M: int = 1 << 13,
    eps_O: float = 1e-3,
) -> TrainedModel:
    """Hand-set weights.

    1. tensor-product patch embeddings and ``W = sum_mu e_parent(mu) x_mu^T``
       (exact one-hot decoding of every level);
    2. level ``L`` as in 1; higher levels snap token embeddings to the exact
       conditional label vectors, and every level uses
       ``W = m^-1 sum_mu q_mu x_mu^T`` so outputs equal ``q^(l)_mu``;
    3. as 2 with random Fourier patch embeddings (bandwidth from the measured
       signal) in place of the snapping/tensor step.
    """
    p = instance.params
    L, s, V, m = p.L, p.s, p.V, p.m
    stats = stats or compute_stats(instance)
    levels = []
    for level in range(L, 0, -1):
        codes = instance.rule_codes[level - 1]  # (V, m)
        if variant == 1:
            emb = TensorProductMap(V, s)
            W = np.zeros((V, V**s))
            W[np.repeat(np.arange(V), m), codes.ravel()] = 1.0
        elif variant in (2, 3):
            q = stats.q[level - 1]  # (V, m, V)
            if level == L:
                centers = np.eye(V)
            else:
                # canonical embedding of level-l symbol mu: q-vector of the patches it generates
                centers = stats.q[level][:, 0, :]
            if variant == 2:
                emb = ClusterTensorMap(centers, s) if level < L else TensorProductMap(V, s)
                patches = instance.rule_array[level - 1].reshape(V * m, s)
                X = emb(centers[patches].reshape(V * m, s * V))
            else:
                if rng is None:
                    raise RejectedParametersError("variant 3 needs an rng")
                sep = math.sqrt(2.0) if level == L else _min_positive_distance(centers) / 2
                emb = sample_feature_map(s * V, M, bandwidth_for(sep, eps_O), spawn(rng, level))
                patches = instance.rule_array[level - 1].reshape(V * m, s)
                H = centers[patches].reshape(V * m, s * V)
                X = emb(H)
            W = (q.reshape(V * m, V).T @ X) / m
        else:
            raise RejectedParametersError(f"variant must be 1, 2 or 3, got {variant}")
        levels.append(TrainedLevel(level, emb, LayerWeights(W)))
    return TrainedModel(p, levels, [])


def _min_positive_distance(centers: np.ndarray) -> float:
    d = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    pos = d[d > 1e-12]
    return float(pos.min()) if pos.size else math.sqrt(2.0)


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: TrainedModel) -> dict:
    levels = []
    for lv in model.levels:
        d = lv.embedder.to_dict()
        d["level"] = lv.level
        d["W"] = lv.weights.W.tolist()
        d["config_snapshot"] = asdict(lv.config) if lv.config is not None else None
        levels.append(d)
    return {"params": model.params.to_dict(), "levels": levels, "diagnostics": model.diagnostics}


def save_model(model: TrainedModel) -> bytes:
    return json.dumps(model_to_dict(model), separators=(",", ":"), allow_nan=False, default=_json_default).encode("utf-8")


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    raise TypeError(type(o))


def load_model(data: bytes | str) -> TrainedModel:
    from .errors import ParseError

    try:
        obj = json.loads(data)
        params = RhmParams(**obj["params"])
        levels = []
        for d in obj["levels"]:
            cfg = LayerConfig(**d["config_snapshot"]) if d.get("config_snapshot") else None
            levels.append(
                TrainedLevel(int(d["level"]), embedder_from_dict(d), LayerWeights(np.asarray(d["W"], dtype=np.float64)), cfg)
            )
        model = TrainedModel(params, levels, obj.get("diagnostics", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model file: {exc}") from None
    model.check()
    return model
