"""Classifier assembly and experiment drivers.

The recognition network stacks a pointwise channel-expansion conv, two
conv/batch-norm/ReLU/max-pool blocks and an average pool over the spatial
axes of each time step, flattens per step, and feeds the sequence to a
bidirectional peephole LSTM with self-attention, mean temporal pooling and
a dense softmax head. The time axis survives every stage unchanged, so
the recurrent half always sees the feature tensor's own segment order.
"""

from dataclasses import dataclass, field

import numpy as np

from . import mfcc as mfcc_mod
from .audio import read_wav
from .errors import ConfigError, DataError, ShapeError
from .gmm import em_fit, extract_sgmm
from .nn import (AdamState, AvgPool3d, BatchNorm3d, BiLstm, Conv3d, Dense,
                 FlattenPerStep, MaxPool3d, MeanOverTime, ParamStore, ReLU,
                 SelfAttention, adam_step, softmax_cross_entropy)


def _pool_out(n, window, stride):
    out = (n - window) // stride + 1
    if out < 1:
        raise ConfigError(f"spatial extent {n} collapses under a "
                          f"{window}-wide pool")
    return out


@dataclass(frozen=True)
class ArchitectureConfig:
    """Network hyperparameters plus the (M, G, T) input dimensions."""

    input_dims: tuple
    n_classes: int
    channels: tuple = (8, 16, 32)
    kernel_t: int = 1
    hidden: int = 64
    attention: bool = True

    def validate(self):
        m, g, t = self.input_dims
        if min(m, g, t) < 1 or self.n_classes < 2:
            raise ConfigError("input dims must be positive, n_classes >= 2")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigError("channels must be three positive counts")
        if self.kernel_t < 1 or self.kernel_t % 2 == 0:
            raise ConfigError("kernel_t must be odd so padding preserves T")
        if self.hidden < 1:
            raise ConfigError("hidden size must be >= 1")
        self.flatten_size()

    def spatial_trace(self):
        """(height, width) after each pooling stage."""
        m, g, _ = self.input_dims
        trace = []
        h, w = m, g
        for _ in range(2):
            h, w = _pool_out(h, 2, 2), _pool_out(w, 2, 2)
            trace.append((h, w))
        h, w = _pool_out(h, 2, 2), _pool_out(w, 2, 2)
        trace.append((h, w))
        return trace

    def flatten_size(self):
        h, w = self.spatial_trace()[-1]
        return self.channels[2] * h * w


@dataclass
class TrainConfig:
    """Optimization schedule: Adam with a stepped learning-rate decay."""

    initial_lr: float = 0.1
    lr_decay_every: int = 30
    lr_decay_factor: float = 0.1
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.initial_lr <= 0 or not 0 < self.lr_decay_factor < 1:
            raise ConfigError("need initial_lr > 0 and decay factor in (0,1)")
        if self.lr_decay_every < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("schedule counts must be >= 1")


def lr_schedule(initial_lr, decay_factor, decay_every, epoch):
    """Stepped decay: lr(e) = initial * factor^floor((e-1)/every).

    Rounded to 12 significant digits so repeated decimal decays compare
    exactly across runs and against their closed-form values.
    """
    k = (epoch - 1) // decay_every
    return float(format(initial_lr * decay_factor ** k, ".12g"))


class C3dBiLstm:
    """3D-conv spatial front half plus BiLSTM/attention temporal back half."""

    def __init__(self, arch, seed=0):
        arch.validate()
        self.arch = arch
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        c0, c1, c2 = arch.channels
        kt = arch.kernel_t
        pad = (kt // 2, 1, 1)
        self.pw = Conv3d(self.params, "pw", 1, c0, (1, 1, 1), rng=rng)
        self.conv1 = Conv3d(self.params, "conv1", c0, c1, (kt, 3, 3),
                            padding=pad, rng=rng)
        self.bn1 = BatchNorm3d(self.params, "bn1", c1)
        self.conv2 = Conv3d(self.params, "conv2", c1, c2, (kt, 3, 3),
                            padding=pad, rng=rng)
        self.bn2 = BatchNorm3d(self.params, "bn2", c2)
        self.bilstm = BiLstm(self.params, "bilstm", arch.flatten_size(),
                             arch.hidden, rng=rng)
        self.fc = Dense(self.params, "fc", 2 * arch.hidden, arch.n_classes,
                        rng=rng)
        self.layers = [
            self.pw,
            self.conv1, self.bn1, ReLU(), MaxPool3d((1, 2, 2)),
            self.conv2, self.bn2, ReLU(), MaxPool3d((1, 2, 2)),
            AvgPool3d((1, 2, 2)),
            FlattenPerStep(),
            self.bilstm,
        ]
        if arch.attention:
            self.layers.append(SelfAttention())
        self.layers.extend([MeanOverTime(), self.fc])

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        m, g, t = self.arch.input_dims
        if x.shape[1:] != (1, t, m, g):
            raise ShapeError(f"expected input [B, 1, {t}, {m}, {g}], "
                             f"got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, grad_logits):
        grad = grad_logits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def state_arrays(self):
        """Trainable parameters plus batch-norm running statistics."""
        arrays = {name: p.value for name, p in self.params.items()}
        for name, bn in (("bn1", self.bn1), ("bn2", self.bn2)):
            arrays[f"{name}.running_mean"] = bn.running_mean
            arrays[f"{name}.running_var"] = bn.running_var
        return arrays

    def load_state(self, arrays):
        for name, p in self.params.items():
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            if arrays[name].shape != p.value.shape:
                raise ShapeError(f"checkpoint shape mismatch for {name!r}")
            p.value[...] = arrays[name]
        for name, bn in (("bn1", self.bn1), ("bn2", self.bn2)):
            bn.running_mean = arrays[f"{name}.running_mean"].copy()
            bn.running_var = arrays[f"{name}.running_var"].copy()


def build_model(arch, seed=0):
    return C3dBiLstm(arch, seed=seed)


def tensor_to_input(tensor):
    """(M, G, T) feature tensor -> [1, T, M, G] network input block."""
    return tensor.data.transpose(2, 0, 1)[None, :, :, :]


def stack_features(feature_set):
    """List of (SgmmTensor, label) -> (X [B,1,T,M,G], y [B])."""
    xs = np.stack([tensor_to_input(t) for t, _ in feature_set])
    ys = np.array([label for _, label in feature_set], dtype=np.intp)
    return xs, ys


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

def train(model, train_set, cfg):
    """Seeded mini-batch Adam training; returns the per-epoch history.

    Each history row records the epoch, the learning rate actually loaded
    into the optimizer, the mean loss and the training accuracy.
    """
    xs, ys = stack_features(train_set)
    n_classes = model.arch.n_classes
    missing = set(range(n_classes)) - set(int(v) for v in np.unique(ys))
    if missing:
        raise DataError(f"no training samples for classes {sorted(missing)}")
    eye = np.eye(n_classes)
    state = AdamState(model.params, alpha=cfg.initial_lr)
    rng = np.random.default_rng(cfg.seed)
    history = []
    n = len(ys)
    for epoch in range(1, cfg.epochs + 1):
        state.alpha = lr_schedule(cfg.initial_lr, cfg.lr_decay_factor,
                                  cfg.lr_decay_every, epoch)
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            model.params.zero_grads()
            logits = model.forward(xs[idx], train=True)
            loss, dlogits = softmax_cross_entropy(logits, eye[ys[idx]])
            model.backward(dlogits)
            adam_step(model.params, state)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == ys[idx]).sum())
        history.append({"epoch": epoch, "lr": state.alpha,
                        "loss": loss_sum / n, "train_acc": correct / n})
    return history


@dataclass
class Metrics:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray
    mean_loss: float
    label_order: list = field(default=None)

    def report(self):
        lines = [f"accuracy {self.accuracy:.4f}",
                 f"mean_loss {self.mean_loss:.4f}"]
        labels = self.label_order or [str(i) for i in range(len(self.per_class))]
        for name, acc in zip(labels, self.per_class):
            lines.append(f"  class {name}: {acc:.4f}")
        return "\n".join(lines)

    def kv_records(self):
        labels = self.label_order or [str(i) for i in range(len(self.per_class))]
        lines = [f"accuracy={self.accuracy!r}", f"mean_loss={self.mean_loss!r}"]
        lines += [f"per_class.{name}={acc!r}"
                  for name, acc in zip(labels, self.per_class)]
        return "\n".join(lines)

    def confusion_csv(self):
        return "\n".join(",".join(str(int(v)) for v in row)
                         for row in self.confusion)


def metrics_from_predictions(y_true, y_pred, n_classes, mean_loss=float("nan"),
                             label_order=None):
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    counts = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(counts > 0,
                             np.diag(confusion) / np.maximum(counts, 1), 0.0)
    accuracy = float(np.trace(confusion)) / max(1, len(y_true))
    return Metrics(accuracy=accuracy, per_class=per_class,
                   confusion=confusion, mean_loss=float(mean_loss),
                   label_order=label_order)


def evaluate(model, test_set, label_order=None, batch_size=64):
    """Inference-mode evaluation: argmax decisions, confusion bookkeeping."""
    if not test_set:
        raise DataError("test set is empty")
    xs, ys = stack_features(test_set)
    eye = np.eye(model.arch.n_classes)
    preds = np.empty(len(ys), dtype=np.intp)
    loss_sum = 0.0
    for start in range(0, len(ys), batch_size):
        sl = slice(start, start + batch_size)
        logits = model.forward(xs[sl], train=False)
        loss, _ = softmax_cross_entropy(logits, eye[ys[sl]])
        loss_sum += loss * len(ys[sl])
        preds[sl] = logits.argmax(axis=1)
    return metrics_from_predictions(ys, preds, model.arch.n_classes,
                                    mean_loss=loss_sum / len(ys),
                                    label_order=label_order)


# ---------------------------------------------------------------------------
# Linear baseline on fixed-length clip features
# ---------------------------------------------------------------------------

class LogisticClassifier:
    """Multinomial logistic regression by full-batch gradient descent.

    Features are z-scored internally; the L2 penalty keeps degenerate or
    singular designs well-posed rather than erroring.
    """

    def __init__(self, lr=0.5, iters=500, l2=1e-3):
        self.lr = lr
        self.iters = iters
        self.l2 = l2
        self.w = None
        self.b = None
        self.loss_history = []

    def fit(self, features, labels, n_classes=None):
        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.intp)
        if n_classes is None:
            n_classes = int(y.max()) + 1
        if n_classes < 2:
            raise DataError("need at least 2 classes")
        self._mu = x.mean(axis=0)
        sd = x.std(axis=0)
        self._sd = np.where(sd < 1e-12, 1.0, sd)
        xz = (x - self._mu) / self._sd
        n, d = xz.shape
        onehot = np.eye(n_classes)[y]
        self.w = np.zeros((d, n_classes))
        self.b = np.zeros(n_classes)
        self.loss_history = []
        for _ in range(self.iters):
            z = xz @ self.w + self.b
            z -= z.max(axis=1, keepdims=True)
            log_z = np.log(np.exp(z).sum(axis=1, keepdims=True))
            probs = np.exp(z - log_z)
            loss = (-np.sum(onehot * (z - log_z)) / n
                    + 0.5 * self.l2 * np.sum(self.w ** 2))
            self.loss_history.append(float(loss))
            delta = (probs - onehot) / n
            self.w -= self.lr * (xz.T @ delta + self.l2 * self.w)
            self.b -= self.lr * delta.sum(axis=0)
        return self

    def predict(self, features):
        x = (np.asarray(features, dtype=np.float64) - self._mu) / self._sd
        return np.argmax(x @ self.w + self.b, axis=1)

    def score(self, features, labels):
        return float(np.mean(self.predict(features) == np.asarray(labels)))


def baseline_classifier(features, labels, n_classes=None, **kwargs):
    """Train the linear baseline on fixed-length vectors."""
    return LogisticClassifier(**kwargs).fit(features, labels, n_classes)


def mfcc_mean_features(mfccs):
    """Per-clip mean cepstral vector, one row per clip."""
    return np.stack([m.coeffs.mean(axis=1) for m in mfccs])


def flatten_sgmm_features(tensors):
    return np.stack([t.data.reshape(-1) for t in tensors])


# ---------------------------------------------------------------------------
# Corpus-level experiment drivers
# ---------------------------------------------------------------------------

@dataclass
class GmmConfig:
    """Background-mixture and temporal-feature extraction settings.

    The relevance default is calibrated for 10-frame segments: with so few
    frames per segment, component occupancies rarely exceed a handful, so
    the utterance-scale convention of 16 would leave the adapted means
    pinned to the background model.
    """

    n_components: int = 64
    seg_frames: int = 10
    relevance: float = 4.0
    em_iters: int = 50
    em_tol: float = 1e-3
    seed: int = 0


@dataclass
class RecognitionResult:
    model: object
    metrics: Metrics
    history: list
    ubm: object
    label_order: list
    train_set: list
    test_set: list
    train_mfccs: list
    test_mfccs: list
    train_labels: np.ndarray
    test_labels: np.ndarray


def _load_mfccs(manifest, entries, frame_cfg, mel_cfg):
    feats = []
    for entry in entries:
        clip = read_wav(manifest.resolve(entry))
        if clip.sample_rate != manifest.sample_rate:
            raise DataError(f"{entry.path}: sample rate {clip.sample_rate} "
                            f"does not match manifest {manifest.sample_rate}")
        feats.append(mfcc_mod.extract_mfcc(clip, frame_cfg, mel_cfg))
    return feats


def train_ubm(mfccs, gmm_cfg):
    """Pool all frames of the given clips and fit the background mixture."""
    pooled = np.concatenate([m.coeffs for m in mfccs], axis=1)
    return em_fit(pooled, gmm_cfg.n_components, max_iters=gmm_cfg.em_iters,
                  tol=gmm_cfg.em_tol, seed=gmm_cfg.seed)


def run_recognition(manifest, frame_cfg, mel_cfg, gmm_cfg, train_cfg,
                    channels=(8, 16, 32), kernel_t=1, hidden=64,
                    attention=True, model_seed=None, train_entries=None,
                    test_entries=None, ubm_entries=None):
    """Full in-memory pipeline on a corpus manifest.

    Features for train and test splits, a UBM fit on training-split frames
    only (never test data), temporal tensors for every clip, classifier
    training and inference-mode evaluation on the untouched test split.
    ubm_entries picks the unlabeled background pool; it defaults to the
    classifier's train_entries.
    """
    if train_entries is None:
        train_entries = manifest.for_split("train")
    if test_entries is None:
        test_entries = manifest.for_split("test")
    if not train_entries or not test_entries:
        raise DataError("manifest needs both train and test entries")
    label_order = manifest.device_ids()
    label_idx = {d: i for i, d in enumerate(label_order)}

    train_mfccs = _load_mfccs(manifest, train_entries, frame_cfg, mel_cfg)
    test_mfccs = _load_mfccs(manifest, test_entries, frame_cfg, mel_cfg)
    train_labels = np.array([label_idx[e.device_id] for e in train_entries])
    test_labels = np.array([label_idx[e.device_id] for e in test_entries])

    if ubm_entries is None:
        ubm_mfccs = train_mfccs
    else:
        ubm_mfccs = _load_mfccs(manifest, ubm_entries, frame_cfg, mel_cfg)
    ubm = train_ubm(ubm_mfccs, gmm_cfg)
    train_set = [(extract_sgmm(ubm, m, gmm_cfg.seg_frames, gmm_cfg.relevance), y)
                 for m, y in zip(train_mfccs, train_labels)]
    test_set = [(extract_sgmm(ubm, m, gmm_cfg.seg_frames, gmm_cfg.relevance), y)
                for m, y in zip(test_mfccs, test_labels)]

    shapes = {t.data.shape for t, _ in train_set + test_set}
    if len(shapes) != 1:
        raise DataError(f"clips produced inconsistent tensor shapes: {shapes}")
    m_dim, g_dim, t_dim = shapes.pop()
    arch = ArchitectureConfig(input_dims=(m_dim, g_dim, t_dim),
                              n_classes=len(label_order), channels=channels,
                              kernel_t=kernel_t, hidden=hidden,
                              attention=attention)
    model = build_model(arch, seed=train_cfg.seed if model_seed is None
                        else model_seed)
    history = train(model, train_set, train_cfg)
    metrics = evaluate(model, test_set, label_order=label_order)
    return RecognitionResult(model=model, metrics=metrics, history=history,
                             ubm=ubm, label_order=label_order,
                             train_set=train_set, test_set=test_set,
                             train_mfccs=train_mfccs, test_mfccs=test_mfccs,
                             train_labels=train_labels, test_labels=test_labels)


def ablate_frontend(frame_cfgs, mel_cfgs, manifest, seed=0):
    """Grid over frame geometry and band limits, scored with the linear
    baseline on per-clip MFCC means. Returns one row dict per cell."""
    train_entries = manifest.for_split("train")
    test_entries = manifest.for_split("test")
    label_idx = {d: i for i, d in enumerate(manifest.device_ids())}
    clips = {e.path: read_wav(manifest.resolve(e))
             for e in train_entries + test_entries}
    y_train = np.array([label_idx[e.device_id] for e in train_entries])
    y_test = np.array([label_idx[e.device_id] for e in test_entries])
    rows = []
    for frame_cfg in frame_cfgs:
        for mel_cfg in mel_cfgs:
            def feats(entries):
                return mfcc_mean_features(
                    [mfcc_mod.extract_mfcc(clips[e.path], frame_cfg, mel_cfg)
                     for e in entries])
            clf = baseline_classifier(feats(train_entries), y_train,
                                      n_classes=len(label_idx))
            rows.append({
                "frame_len_ms": frame_cfg.frame_len_ms,
                "frame_shift_ms": frame_cfg.frame_shift_ms,
                "f_low": mel_cfg.f_low,
                "f_high": mel_cfg.f_high,
                "accuracy": clf.score(feats(test_entries), y_test),
            })
    return rows


def format_ablation_table(rows):
    header = (f"{'Frame Len (ms)':>14} {'Frame Shift (ms)':>17} "
              f"{'Low End (Hz)':>13} {'High End (Hz)':>14} {'Accuracy':>9}")
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['frame_len_ms']:>14.0f} {r['frame_shift_ms']:>17.0f} "
                     f"{r['f_low']:>13.0f} {r['f_high']:>14.0f} "
                     f"{100 * r['accuracy']:>8.2f}%")
    return "\n".join(lines)


def small_sample_protocol(manifest, n_train_per_class, frame_cfg, mel_cfg,
                          gmm_cfg, train_cfg, select_seed=0, **arch_kwargs):
    """Truncate every device's train split to n clips (seeded pick), train,
    and evaluate on the untouched test split.

    Only the supervised classifier set shrinks. The background mixture is
    unsupervised infrastructure, so it keeps the full training split as
    its pool, the way background models are reused across enrollments.
    """
    rng = np.random.default_rng(select_seed)
    truncated = []
    for device in manifest.device_ids():
        device_train = [e for e in manifest.for_split("train")
                        if e.device_id == device]
        if len(device_train) < n_train_per_class:
            raise DataError(f"{device} has {len(device_train)} train clips, "
                            f"needs {n_train_per_class}")
        picks = sorted(rng.choice(len(device_train), size=n_train_per_class,
                                  replace=False))
        truncated.extend(device_train[i] for i in picks)
    result = run_recognition(manifest, frame_cfg, mel_cfg, gmm_cfg, train_cfg,
                             train_entries=truncated,
                             ubm_entries=manifest.for_split("train"),
                             **arch_kwargs)
    return result
