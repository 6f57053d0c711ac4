"""Forward-pass math for domain-aware prompt embedding fusion.

Feature maps are float arrays with two spatial axes and a trailing channel
axis. Per-channel (mean, std) statistics act as a style summary; they are
concatenated into per-layer domain features, aggregated across layers with
softmax-weighted learned projections, fused with category embeddings through
an MLP, and mixed back residually. Everything here is pure forward math:
parameters are loaded from tensor bundles, never trained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .errors import ParameterError, ShapeError


def _as_feature_map(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 3:
        raise ShapeError(f"feature map must be 3-D (two spatial axes, channels), got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ParameterError("feature map holds non-finite values")
    return F


def _as_vector(v: np.ndarray, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ShapeError(f"{name} is empty")
    return v


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ParameterError("cosine similarity is undefined for zero-norm vectors")
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and population standard deviation."""

    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class PerturbationSpec:
    """Multiplicative Gaussian jitter of channel statistics.

    ``layers`` restricts which feature maps the pipeline perturbs
    (None = all layers).
    """

    strength: float
    seed: int = 0
    epsilon: float = 1e-5
    layers: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.strength < 0:
            raise ParameterError(f"perturbation strength must be >= 0, got {self.strength}")


def channel_stats(F: np.ndarray) -> ChannelStats:
    """Spatial mean and population std per channel."""
    F = _as_feature_map(F)
    mu = F.mean(axis=(0, 1))
    sigma = np.sqrt(np.mean((F - mu) ** 2, axis=(0, 1)))
    return ChannelStats(mu=mu, sigma=sigma)


def perturb_stats(F: np.ndarray, spec: PerturbationSpec) -> np.ndarray:
    """Replace each channel's (mu, sigma) with mu*(1+a), sigma*(1+b) where
    a, b ~ N(0, strength^2) from the spec seed. Strength 0 is the identity."""
    F = _as_feature_map(F)
    if spec.strength == 0:
        return F.copy()
    stats = channel_stats(F)
    rng = np.random.default_rng(spec.seed)
    c = F.shape[2]
    a = rng.normal(0.0, spec.strength, c)
    b = rng.normal(0.0, spec.strength, c)
    mu_new = stats.mu * (1.0 + a)
    sigma_new = stats.sigma * (1.0 + b)
    return sigma_new * (F - stats.mu) / (stats.sigma + spec.epsilon) + mu_new


def layer_domain_feature(F: np.ndarray) -> np.ndarray:
    """Concatenated [mu; sigma] vector of length 2C."""
    stats = channel_stats(F)
    return np.concatenate([stats.mu, stats.sigma])


def adaptive_avg_pool(x: np.ndarray, target: int) -> np.ndarray:
    """1-D adaptive average pooling: out[i] = mean(x[floor(i*L/T):ceil((i+1)*L/T)])."""
    x = _as_vector(x, "pooling input")
    if target < 1:
        raise ParameterError(f"pool target must be >= 1, got {target}")
    n = x.size
    out = np.empty(target, dtype=np.float64)
    for i in range(target):
        lo = (i * n) // target
        hi = -(-((i + 1) * n) // target)
        out[i] = x[lo:hi].mean()
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


@dataclass
class FusionParams:
    """Learned weights for aggregation and fusion, loaded from a bundle.

    - ``pool_target``: length every per-layer domain feature is pooled to.
    - ``projections``: per-layer (weight, bias) mapping pool_target -> dim.
    - ``layer_logits``: one logit per layer, softmax-normalized when mixing.
    - ``mlp``: (weight, bias) stack mapping 2*dim -> ... -> dim, rectifier
      activations between layers, linear output.
    - ``alpha``: residual mixing factor in [0, 1].
    """

    pool_target: int
    projections: list[tuple[np.ndarray, np.ndarray]]
    layer_logits: np.ndarray
    mlp: list[tuple[np.ndarray, np.ndarray]]
    alpha: float
    _dim: int = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.projections:
            raise ShapeError("at least one per-layer projection is required")
        self.layer_logits = _as_vector(self.layer_logits, "layer_logits")
        if self.layer_logits.size != len(self.projections):
            raise ShapeError(
                f"layer_logits has {self.layer_logits.size} entries "
                f"for {len(self.projections)} projections"
            )
        dims = set()
        for i, (w, b) in enumerate(self.projections):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or w.shape[1] != self.pool_target:
                raise ShapeError(f"proj.{i}.weight must be (dim, {self.pool_target}), got {w.shape}")
            if b.shape != (w.shape[0],):
                raise ShapeError(f"proj.{i}.bias must be ({w.shape[0]},), got {b.shape}")
            self.projections[i] = (w, b)
            dims.add(w.shape[0])
        if len(dims) != 1:
            raise ShapeError(f"projection output dims disagree: {sorted(dims)}")
        self._dim = dims.pop()
        if not self.mlp:
            raise ShapeError("the fusion MLP needs at least one layer")
        expected = 2 * self._dim
        for j, (w, b) in enumerate(self.mlp):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or w.shape[1] != expected:
                raise ShapeError(f"mlp.{j}.weight must be (*, {expected}), got {w.shape}")
            if b.shape != (w.shape[0],):
                raise ShapeError(f"mlp.{j}.bias must be ({w.shape[0]},), got {b.shape}")
            self.mlp[j] = (w, b)
            expected = w.shape[0]
        if expected != self._dim:
            raise ShapeError(f"mlp output dim {expected} must equal embedding dim {self._dim}")

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def n_layers(self) -> int:
        return len(self.projections)

    def save(self, path) -> None:
        tensors: dict[str, np.ndarray] = {
            "pool_target": np.float32(self.pool_target),
            "alpha": np.float32(self.alpha),
            "layer_logits": self.layer_logits,
        }
        for i, (w, b) in enumerate(self.projections):
            tensors[f"proj.{i}.weight"] = w
            tensors[f"proj.{i}.bias"] = b
        for j, (w, b) in enumerate(self.mlp):
            tensors[f"mlp.{j}.weight"] = w
            tensors[f"mlp.{j}.bias"] = b
        tensorio.write_bundle(path, tensors)

    @classmethod
    def load(cls, path) -> "FusionParams":
        tensors, _ = tensorio.read_bundle(path)
        try:
            pool_target = int(round(float(tensors["pool_target"])))
            alpha = float(tensors["alpha"])
            logits = tensors["layer_logits"]
        except KeyError as exc:
            raise ShapeError(f"parameter bundle misses tensor {exc}") from exc
        projections = []
        while f"proj.{len(projections)}.weight" in tensors:
            i = len(projections)
            projections.append((tensors[f"proj.{i}.weight"], tensors[f"proj.{i}.bias"]))
        mlp = []
        while f"mlp.{len(mlp)}.weight" in tensors:
            j = len(mlp)
            mlp.append((tensors[f"mlp.{j}.weight"], tensors[f"mlp.{j}.bias"]))
        return cls(pool_target=pool_target, projections=projections, layer_logits=logits, mlp=mlp, alpha=alpha)

    @classmethod
    def random(
        cls,
        n_layers: int,
        dim: int,
        pool_target: int | None = None,
        hidden: tuple[int, ...] | None = None,
        alpha: float = 0.5,
        seed: int = 0,
    ) -> "FusionParams":
        """Random parameters for demos and tests; hidden defaults to two
        rectified layers of width 2*dim."""
        pool_target = dim if pool_target is None else pool_target
        hidden = (2 * dim, 2 * dim) if hidden is None else hidden
        rng = np.random.default_rng(seed)
        projections = [
            (rng.normal(0.0, pool_target**-0.5, (dim, pool_target)), rng.normal(0.0, 0.01, dim))
            for _ in range(n_layers)
        ]
        logits = rng.normal(0.0, 1.0, n_layers)
        sizes = (2 * dim, *hidden, dim)
        mlp = [
            (rng.normal(0.0, sizes[j] ** -0.5, (sizes[j + 1], sizes[j])), rng.normal(0.0, 0.01, sizes[j + 1]))
            for j in range(len(sizes) - 1)
        ]
        return cls(pool_target=pool_target, projections=projections, layer_logits=logits, mlp=mlp, alpha=alpha)


def aggregate_domain(layer_features: list[np.ndarray], params: FusionParams) -> np.ndarray:
    """Pool each per-layer [mu; sigma] feature to the target length, project
    it affinely, and mix the projections with softmax layer weights."""
    if len(layer_features) != params.n_layers:
        raise ShapeError(f"got {len(layer_features)} layer features for {params.n_layers} projections")
    weights = _softmax(params.layer_logits)
    out = np.zeros(params.dim, dtype=np.float64)
    for weight, feat, (w, b) in zip(weights, layer_features, params.projections):
        pooled = adaptive_avg_pool(_as_vector(feat, "layer feature"), params.pool_target)
        out += weight * (w @ pooled + b)
    return out


def orthogonality_loss(domain_embedding: np.ndarray, category_embeddings) -> float:
    """Sum of cosine similarities between the domain embedding and every
    category embedding; bounded by [-G, G]."""
    e = _as_vector(domain_embedding, "domain embedding")
    return float(sum(_cosine(e, _as_vector(c, "category embedding")) for c in category_embeddings))


def fuse(domain_embedding: np.ndarray, category_embedding: np.ndarray, params: FusionParams) -> np.ndarray:
    """MLP over the concatenated [domain; category] vector, rectifier
    activations between layers and a linear output."""
    e_d = _as_vector(domain_embedding, "domain embedding")
    e_c = _as_vector(category_embedding, "category embedding")
    if e_d.size != params.dim or e_c.size != params.dim:
        raise ShapeError(f"embeddings must have dim {params.dim}, got {e_d.size} and {e_c.size}")
    x = np.concatenate([e_d, e_c])
    for j, (w, b) in enumerate(params.mlp):
        x = w @ x + b
        if j < len(params.mlp) - 1:
            x = np.maximum(x, 0.0)
    return x


def residual_mix(fusion_embedding: np.ndarray, category_embedding: np.ndarray, alpha: float) -> np.ndarray:
    """alpha * fusion + (1 - alpha) * category."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    e_f = _as_vector(fusion_embedding, "fusion embedding")
    e_c = _as_vector(category_embedding, "category embedding")
    if e_f.size != e_c.size:
        raise ShapeError(f"embedding dims differ: {e_f.size} vs {e_c.size}")
    return alpha * e_f + (1.0 - alpha) * e_c


def contrastive_loss(grafted_embedding: np.ndarray, roi_feature: np.ndarray) -> float:
    """1 - cosine similarity; lies in [0, 2]."""
    return 1.0 - _cosine(_as_vector(grafted_embedding), _as_vector(roi_feature))


def classify(roi_feature: np.ndarray, grafted_embeddings) -> tuple[int, np.ndarray]:
    """Cosine scores of the RoI feature against every grafted embedding;
    argmax ties break toward the lowest index."""
    roi = _as_vector(roi_feature, "roi feature")
    rows = [_as_vector(e, "grafted embedding") for e in grafted_embeddings]
    if not rows:
        raise ParameterError("classification needs at least one embedding")
    scores = np.array([_cosine(roi, e) for e in rows])
    return int(np.argmax(scores)), scores


def project_out_categories(domain_embedding: np.ndarray, category_embeddings) -> np.ndarray:
    """Extension utility: the component of the domain embedding orthogonal to
    the span of the category embeddings (explicit post-hoc orthogonalization;
    the loss above only measures the overlap)."""
    e = _as_vector(domain_embedding, "domain embedding")
    A = np.stack([_as_vector(c, "category embedding") for c in category_embeddings], axis=1)
    u, s, _ = np.linalg.svd(A, full_matrices=False)
    keep = s > s.max() * 1e-12 if s.size else np.zeros(0, dtype=bool)
    basis = u[:, keep]
    return e - basis @ (basis.T @ e)


@dataclass
class PipelineResult:
    domain_embedding: np.ndarray
    grafted: np.ndarray  # (G, dim)
    orthogonality: float
    contrastive: float | None
    prediction: int | None
    scores: np.ndarray | None


def pipeline(
    feature_maps: list[np.ndarray],
    category_embeddings: np.ndarray,
    params: FusionParams,
    roi_feature: np.ndarray | None = None,
    perturb: PerturbationSpec | None = None,
    target_index: int | None = None,
) -> PipelineResult:
    """Full forward pass: (optional) statistic perturbation per layer,
    per-layer domain features, aggregation, per-category fusion and residual
    mixing, loss values, and cosine classification of the RoI feature.

    Passing ``perturb`` marks the training-style path (each selected layer is
    perturbed with seed ``spec.seed + layer_index``); ``perturb=None`` is the
    testing path. The contrastive loss is taken against ``target_index`` when
    given, otherwise against the predicted category.
    """
    maps = [_as_feature_map(F) for F in feature_maps]
    if perturb is not None and perturb.strength > 0:
        selected = set(range(len(maps))) if perturb.layers is None else set(perturb.layers)
        maps = [
            perturb_stats(F, PerturbationSpec(perturb.strength, perturb.seed + l, perturb.epsilon))
            if l in selected
            else F
            for l, F in enumerate(maps)
        ]
    layer_feats = [layer_domain_feature(F) for F in maps]
    e_domain = aggregate_domain(layer_feats, params)

    cats = np.atleast_2d(np.asarray(category_embeddings, dtype=np.float64))
    grafted = np.stack([residual_mix(fuse(e_domain, c, params), c, params.alpha) for c in cats])
    l_orth = orthogonality_loss(e_domain, cats)

    prediction = scores = l_cons = None
    if roi_feature is not None:
        prediction, scores = classify(roi_feature, grafted)
        target = prediction if target_index is None else target_index
        if not 0 <= target < grafted.shape[0]:
            raise ParameterError(f"target index {target} outside [0, {grafted.shape[0]})")
        l_cons = contrastive_loss(grafted[target], roi_feature)
    return PipelineResult(
        domain_embedding=e_domain,
        grafted=grafted,
        orthogonality=l_orth,
        contrastive=l_cons,
        prediction=prediction,
        scores=scores,
    )
