"""Diagonal-covariance Gaussian mixtures for device fingerprint features.

A background mixture (UBM) is fit with EM on pooled training frames. Each
short feature segment then MAP-adapts the mixture means toward its own
frames, and the per-segment adapted mean matrices, min-max normalized per
feature dimension, are stacked in time order into an M x G x T tensor
(the sequential Gaussian mean feature consumed by the classifier).
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError, ShapeError, TooShortError

GMM_MAGIC = b"DGMM1"
SGMM_MAGIC = b"SGMM1"
NORM_RULE = "per-segment-row-minmax"

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class DiagGmm:
    """Mixture weights, means and per-dimension (diagonal) variances.

    weights: (G,) simplex; means: (G, M); variances: (G, M), all positive.
    `diagnostics` carries EM metadata (log-likelihood trace, degeneracy
    flag) and is never serialized.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    diagnostics: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if self.means.ndim != 2 or self.means.shape != self.variances.shape:
            raise ShapeError("means and variances must both be (G, M)")
        if self.weights.shape != (self.means.shape[0],):
            raise ShapeError("weights must be a length-G vector")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ShapeError("weights must be a simplex (within 1e-9)")
        if np.any(self.variances <= 0):
            raise ShapeError("variances must be strictly positive")
        for arr in (self.weights, self.means, self.variances):
            if not np.all(np.isfinite(arr)):
                raise ShapeError("mixture parameters must be finite")

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def n_dims(self):
        return self.means.shape[1]


@dataclass
class SegmentedMfcc:
    """Consecutive non-overlapping windows of t frames each, in time order."""

    segments: list
    seg_frames: int

    def __post_init__(self):
        if not self.segments:
            raise ShapeError("need at least one segment")
        m = self.segments[0].shape[0]
        for s in self.segments:
            if s.shape != (m, self.seg_frames):
                raise ShapeError("every segment must be (M, t)")


@dataclass
class SgmmTensor:
    """Temporal Gaussian-mean feature tensor of shape (M, G, T) in [0, 1]."""

    data: np.ndarray
    n_components: int
    seg_frames: int
    relevance: float
    row_mins: np.ndarray = None
    row_maxs: np.ndarray = None
    norm_rule: str = NORM_RULE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ShapeError("feature tensor must be (M, G, T)")
        if self.data.shape[1] != self.n_components:
            raise ShapeError("tensor G axis does not match n_components")
        if np.any(self.data < 0.0) or np.any(self.data > 1.0):
            raise ShapeError("tensor entries must lie in [0, 1]")

    @property
    def shape(self):
        return self.data.shape


# ---------------------------------------------------------------------------
# Likelihood machinery (log-space throughout)
# ---------------------------------------------------------------------------

def _component_log_probs(gmm, x):
    """log [w_g N(x; mu_g, sigma2_g)] for every frame/component pair.

    x is (N, M), result is (N, M independent) -> (N, G).
    """
    inv_var = 1.0 / gmm.variances
    log_norm = -0.5 * (gmm.n_dims * _LOG_2PI
                       + np.sum(np.log(gmm.variances), axis=1))
    quad = (x ** 2) @ inv_var.T - 2.0 * (x @ (gmm.means * inv_var).T) \
        + np.sum(gmm.means ** 2 * inv_var, axis=1)[None, :]
    return np.log(gmm.weights)[None, :] + log_norm[None, :] - 0.5 * quad


def _posteriors(gmm, x):
    """Responsibilities and total log-likelihood for frames x (N, M)."""
    lp = _component_log_probs(gmm, x)
    top = lp.max(axis=1, keepdims=True)
    log_px = top + np.log(np.sum(np.exp(lp - top), axis=1, keepdims=True))
    return np.exp(lp - log_px), float(log_px.sum())


def log_likelihood(gmm, frames):
    """Total log-likelihood of an (M, N) frame matrix under the mixture."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] != gmm.n_dims:
        raise ShapeError(
            f"frames must be ({gmm.n_dims}, N), got {frames.shape}")
    lp = _component_log_probs(gmm, frames.T)
    top = lp.max(axis=1, keepdims=True)
    return float(np.sum(top + np.log(
        np.sum(np.exp(lp - top), axis=1, keepdims=True))))


# ---------------------------------------------------------------------------
# EM training
# ---------------------------------------------------------------------------

def _kmeanspp_centers(x, n_centers, rng):
    sub = x[rng.choice(x.shape[0], size=min(x.shape[0], 2000), replace=False)]
    centers = np.empty((n_centers, x.shape[1]))
    centers[0] = sub[rng.integers(sub.shape[0])]
    d2 = np.sum((sub - centers[0]) ** 2, axis=1)
    for g in range(1, n_centers):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            pick = rng.choice(sub.shape[0], p=probs)
        else:
            pick = rng.integers(sub.shape[0])
        centers[g] = sub[pick]
        d2 = np.minimum(d2, np.sum((sub - centers[g]) ** 2, axis=1))
    return centers


def em_fit(frames, n_components, max_iters=100, tol=1e-7, seed=0,
           variance_floor_factor=1e-3):
    """Fit a diagonal-covariance mixture to an (M, N) frame matrix by EM.

    Initialization is kmeans++-style center seeding on a subsample followed
    by one hard-assignment pass; soft EM then alternates posteriors and
    closed-form weight/mean/variance updates until the total log-likelihood
    gain drops below tol or max_iters is reached. Variances are floored at
    variance_floor_factor times the global per-dimension variance after
    every update, so degenerate inputs converge instead of blowing up (the
    `degenerate` diagnostic is set when the data has no spread at all).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError("frames must be a 2-D (M, N) matrix")
    x = frames.T
    n, m = x.shape
    if n_components < 1:
        raise ConfigError("n_components must be >= 1")
    if n < n_components:
        raise DataError(f"{n} frames cannot support {n_components} components")

    rng = np.random.default_rng(seed)
    global_var = x.var(axis=0)
    degenerate = bool(np.all(global_var < 1e-12))
    floor = np.maximum(variance_floor_factor * global_var, 1e-12)

    centers = _kmeanspp_centers(x, n_components, rng)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2) \
        if n * n_components * m <= 2_000_000 else None
    if d2 is None:
        # chunk the hard assignment for large inputs
        assign = np.empty(n, dtype=np.intp)
        step = max(1, 2_000_000 // (n_components * m))
        for i in range(0, n, step):
            block = ((x[i:i + step, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            assign[i:i + step] = block.argmin(axis=1)
    else:
        assign = d2.argmin(axis=1)

    weights = np.empty(n_components)
    means = np.empty((n_components, m))
    variances = np.empty((n_components, m))
    for g in range(n_components):
        members = x[assign == g]
        if members.shape[0] == 0:
            weights[g] = 1.0 / n
            means[g] = centers[g]
            variances[g] = np.maximum(global_var, floor)
        else:
            weights[g] = members.shape[0] / n
            means[g] = members.mean(axis=0)
            variances[g] = np.maximum(members.var(axis=0), floor)
    weights /= weights.sum()

    gmm = DiagGmm(weights, means, variances)
    lls = []
    converged = False
    for _ in range(max_iters):
        resp, ll = _posteriors(gmm, x)
        lls.append(ll)
        if len(lls) > 1 and ll - lls[-2] < tol:
            converged = True
            break
        occ = resp.sum(axis=0)
        safe = occ > 1e-10
        new_w = np.where(safe, occ / n, 1.0 / n)
        new_w = new_w / new_w.sum()
        new_mu = gmm.means.copy()
        new_var = gmm.variances.copy()
        new_mu[safe] = (resp.T @ x)[safe] / occ[safe, None]
        second = (resp.T @ (x ** 2))[safe] / occ[safe, None]
        new_var[safe] = second - new_mu[safe] ** 2
        new_var = np.maximum(new_var, floor)
        gmm = DiagGmm(new_w, new_mu, new_var)

    gmm.diagnostics = {
        "log_likelihoods": lls,
        "iterations": len(lls),
        "converged": converged,
        "degenerate": degenerate,
    }
    return gmm


# ---------------------------------------------------------------------------
# MAP adaptation and temporal feature assembly
# ---------------------------------------------------------------------------

def map_adapt_means(ubm, segment, relevance):
    """MAP-adapt only the mixture means toward one (M, t) segment.

    With occupancies n_g and posterior data means E_g under the UBM, the
    adapted mean is a_g E_g + (1 - a_g) mu_g with a_g = n_g / (n_g + r).
    Components the segment never touches keep the UBM mean. Returns (G, M).
    """
    if relevance < 0:
        raise ConfigError("relevance factor must be >= 0")
    segment = np.asarray(segment, dtype=np.float64)
    if segment.ndim != 2 or segment.shape[0] != ubm.n_dims:
        raise ShapeError(
            f"segment must be ({ubm.n_dims}, t), got {segment.shape}")
    x = segment.T
    resp, _ = _posteriors(ubm, x)
    occ = resp.sum(axis=0)
    posterior_means = ubm.means.copy()
    touched = occ > 0
    posterior_means[touched] = (resp.T @ x)[touched] / occ[touched, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.where(touched, occ / (occ + relevance), 0.0)
    return alpha[:, None] * posterior_means + (1.0 - alpha)[:, None] * ubm.means


def segment_frames(mfcc, seg_frames):
    """Cut an MFCC matrix into consecutive t-frame segments, dropping the tail."""
    if seg_frames < 1:
        raise ConfigError("seg_frames must be >= 1")
    n = mfcc.n_frames
    if n < seg_frames:
        raise TooShortError(f"{n} frames cannot fill a {seg_frames}-frame segment")
    n_segments = n // seg_frames
    segments = [mfcc.coeffs[:, i * seg_frames:(i + 1) * seg_frames]
                for i in range(n_segments)]
    return SegmentedMfcc(segments=segments, seg_frames=seg_frames)


def minmax_normalize(matrix):
    """Rescale each row to [0, 1]; rows with no spread map to all zeros."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.size == 0:
        raise ShapeError("cannot normalize an empty matrix")
    lo = matrix.min(axis=-1, keepdims=True)
    hi = matrix.max(axis=-1, keepdims=True)
    span = hi - lo
    flat = span == 0
    return np.where(flat, 0.0, (matrix - lo) / np.where(flat, 1.0, span))


def extract_sgmm(ubm, mfcc, seg_frames, relevance, include_variances=False):
    """Build the (M, G, T) temporal Gaussian-mean tensor for one clip.

    Each segment is MAP-adapted, transposed to (M, G), min-max normalized
    per feature row, and stacked along the third axis in segment order.
    With include_variances the (normalized) UBM diagonal variances are
    appended below the mean rows, giving a (2M, G, T) tensor.
    """
    segmented = segment_frames(mfcc, seg_frames)
    n_segments = len(segmented.segments)
    n_rows = ubm.n_dims * (2 if include_variances else 1)
    data = np.empty((n_rows, ubm.n_components, n_segments))
    row_mins = np.empty((n_rows, n_segments))
    row_maxs = np.empty((n_rows, n_segments))
    for idx, segment in enumerate(segmented.segments):
        block = map_adapt_means(ubm, segment, relevance).T
        if include_variances:
            block = np.vstack([block, ubm.variances.T])
        data[:, :, idx] = minmax_normalize(block)
        row_mins[:, idx] = block.min(axis=1)
        row_maxs[:, idx] = block.max(axis=1)
    return SgmmTensor(data=data, n_components=ubm.n_components,
                      seg_frames=seg_frames, relevance=float(relevance),
                      row_mins=row_mins, row_maxs=row_maxs)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_gmm(path, gmm):
    g, m = gmm.means.shape
    payload = GMM_MAGIC + struct.pack("<ii", g, m)
    for arr in (gmm.weights, gmm.means, gmm.variances):
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(payload)


def load_gmm(path):
    raw = Path(path).read_bytes()
    if raw[:5] != GMM_MAGIC:
        raise FormatError(f"{path}: bad mixture magic")
    g, m = struct.unpack_from("<ii", raw, 5)
    expected = 13 + 8 * (g + 2 * g * m)
    if g <= 0 or m <= 0 or len(raw) != expected:
        raise FormatError(f"{path}: inconsistent mixture record size")
    vals = np.frombuffer(raw, "<f8", offset=13)
    weights = vals[:g]
    means = vals[g:g + g * m].reshape(g, m)
    variances = vals[g + g * m:].reshape(g, m)
    return DiagGmm(weights.copy(), means.copy(), variances.copy())


def save_sgmm(path, tensor):
    m, g, t = tensor.data.shape
    payload = SGMM_MAGIC + struct.pack("<iii", m, g, t)
    payload += np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
    path = Path(path)
    path.write_bytes(payload)
    meta = (f"G={tensor.n_components} t={tensor.seg_frames} "
            f"r={tensor.relevance} norm={tensor.norm_rule}\n")
    path.with_suffix(path.suffix + ".meta").write_text(meta, encoding="utf-8")


def load_sgmm(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:5] != SGMM_MAGIC:
        raise FormatError(f"{path}: bad feature tensor magic")
    m, g, t = struct.unpack_from("<iii", raw, 5)
    if min(m, g, t) <= 0 or len(raw) != 17 + 8 * m * g * t:
        raise FormatError(f"{path}: inconsistent tensor record size")
    data = np.frombuffer(raw, "<f8", offset=17).reshape(m, g, t)
    meta_path = path.with_suffix(path.suffix + ".meta")
    seg_frames, relevance, rule = 0, 0.0, NORM_RULE
    if meta_path.exists():
        fields = dict(tok.split("=", 1)
                      for tok in meta_path.read_text().split())
        seg_frames = int(fields.get("t", 0))
        relevance = float(fields.get("r", 0.0))
        rule = fields.get("norm", NORM_RULE)
    return SgmmTensor(data=data.copy(), n_components=g, seg_frames=seg_frames,
                      relevance=relevance, norm_rule=rule)
