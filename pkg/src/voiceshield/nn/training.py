"""Mixup, oversampling and stratified k-fold training of the ConvNet."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..evaluate import macro_f1
from .model import Adam, ConvNet, ModelSpec


@dataclass(frozen=True)
class TrainConfig:
    k_folds: int = 5
    epochs: int = 50
    patience: int = 8
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l1_coeff: float = 1e-5
    l2_coeff: float = 1e-4
    conv_dropout: float = 0.25
    dense_dropout: float = 0.4
    block3_dropout: bool = True
    mixup_prob: float = 0.2
    mixup_alpha: float = 0.2
    oversample: bool = True
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.k_folds < 2:
            raise ValueError("k_folds must be at least 2")
        for name in ("mixup_prob", "conv_dropout", "dense_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.conv_dropout >= 1 or self.dense_dropout >= 1:
            raise ValueError("dropout rates must be below 1")
        if self.epochs < 1 or self.batch_size < 2 or self.patience < 1:
            raise ValueError("epochs, patience must be >= 1 and batch_size >= 2")
        if self.mixup_alpha <= 0:
            raise ValueError("mixup_alpha must be positive")

    def model_spec(self) -> ModelSpec:
        return ModelSpec(conv_dropout=self.conv_dropout, dense_dropout=self.dense_dropout,
                         block3_dropout=self.block3_dropout)

    def to_json(self) -> dict:
        return asdict(self)


def mixup(x, y, alpha: float, p_mix: float, rng, lam: float | None = None):
    """With probability `p_mix`, blend the batch with a shuffled copy of itself.

    ``lam`` overrides the Beta(alpha, alpha) draw (the coin flip still applies
    unless ``p_mix`` is 1).
    """
    x, y = np.asarray(x), np.asarray(y)
    if x.shape[0] < 2:
        raise ValueError("mixup needs a batch of at least two samples")
    if rng.random() >= p_mix:
        return x, y
    lam = rng.beta(alpha, alpha) if lam is None else lam
    perm = rng.permutation(x.shape[0])
    return (lam * x + (1 - lam) * x[perm]).astype(x.dtype), \
        (lam * y + (1 - lam) * y[perm]).astype(y.dtype)


def oversample(labels, rng) -> np.ndarray:
    """Indices that bring every class up to the majority count by resampling with replacement.

    Original indices come first, in order; duplicates are appended.
    """
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) == 0:
        raise ValueError("cannot oversample an empty dataset")
    target = counts.max()
    extra = [rng.choice(np.flatnonzero(labels == c), size=target - n, replace=True)
             for c, n in zip(classes, counts) if n < target]
    return np.concatenate([np.arange(labels.size), *extra]).astype(int)


def stratified_folds(labels, k: int, rng) -> np.ndarray:
    """Fold id per sample; every class is dealt round-robin after a shuffle."""
    labels = np.asarray(labels)
    folds = np.empty(labels.size, dtype=int)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        # rotate the starting fold per class so small classes don't pile into fold 0
        start = int(rng.integers(k))
        folds[idx] = (np.arange(idx.size) + start) % k
    return folds


@dataclass
class FoldResult:
    fold: int
    val_macro_f1: float
    best_epoch: int
    history: list = field(default_factory=list)
    n_train: int = 0
    n_val: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def _evaluate(model: ConvNet, x, y, batch: int = 32):
    probs = np.concatenate([model.forward(x[i:i + batch]) for i in range(0, len(x), batch)])
    tiny = np.finfo(probs.dtype).tiny
    loss = float(-np.sum(y * np.log(np.maximum(probs, tiny))) / len(x))
    return loss, np.argmax(probs, axis=1)


def train_model(x_train, y_train, x_val, y_val, config: TrainConfig, rng, seed=0,
                log=None) -> tuple[ConvNet, list, int]:
    """Train one model with early stopping on validation loss; best-loss weights are kept."""
    model = ConvNet(config.model_spec(), seed=seed, dtype=config.dtype,
                    l1=config.l1_coeff, l2=config.l2_coeff)
    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.eps)
    x_train = np.asarray(x_train, dtype=model.dtype)
    y_train = np.asarray(y_train, dtype=model.dtype)
    x_val = np.asarray(x_val, dtype=model.dtype)
    y_val = np.asarray(y_val, dtype=model.dtype)
    val_true = np.argmax(y_val, axis=1)
    best = (np.inf, model.state(), 0)
    history, stale = [], 0
    n = len(x_train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            if idx.size < 2:
                continue
            xb, yb = mixup(x_train[idx], y_train[idx], config.mixup_alpha, config.mixup_prob, rng)
            loss, grads = model.loss_and_gradients(xb, yb, rng)
            opt.step(model.params, grads)
            total += loss * idx.size
            seen += idx.size
        if not all(np.all(np.isfinite(v)) for v in model.params.values()):
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")
        val_loss, val_pred = _evaluate(model, x_val, y_val)
        record = {"epoch": epoch, "train_loss": total / max(seen, 1), "val_loss": val_loss,
                  "val_macro_f1": macro_f1(val_true, val_pred)}
        history.append(record)
        if log:
            log(record)
        if val_loss < best[0]:
            best, stale = (val_loss, model.state(), epoch), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state(best[1])
    model.trained = True
    return model, history, best[2]


@dataclass
class KFoldResult:
    folds: list[FoldResult]
    models: list[ConvNet]
    selected: int
    fold_ids: np.ndarray

    @property
    def model(self) -> ConvNet:
        return self.models[self.selected]

    def to_json(self) -> dict:
        return {"selected_fold": self.selected, "folds": [f.to_json() for f in self.folds]}


def train_kfold(grids, labels, config: TrainConfig = TrainConfig(), log=None) -> KFoldResult:
    """Stratified k-fold training; the model with the best validation macro-F1 is selected."""
    grids = np.asarray(grids)
    labels = np.asarray(labels)
    y = np.argmax(labels, axis=1)
    present = set(np.unique(y).tolist())
    missing = [c for c in range(labels.shape[1]) if c not in present]
    if missing:
        raise ValueError(f"classes {missing} are absent from the training data")
    fold_ids = stratified_folds(y, config.k_folds, np.random.default_rng([config.seed, 0]))
    folds, models = [], []
    for k in range(config.k_folds):
        rng = np.random.default_rng([config.seed, 1, k])
        tr, va = np.flatnonzero(fold_ids != k), np.flatnonzero(fold_ids == k)
        if config.oversample:
            tr = tr[oversample(y[tr], rng)]
        fold_log = (lambda r, k=k: log({"fold": k, **r})) if log else None
        model, history, best_epoch = train_model(grids[tr], labels[tr], grids[va], labels[va],
                                                 config, rng, seed=config.seed * 1000 + k,
                                                 log=fold_log)
        _, pred = _evaluate(model, np.asarray(grids[va], model.dtype),
                            np.asarray(labels[va], model.dtype))
        folds.append(FoldResult(k, macro_f1(y[va], pred), best_epoch, history, len(tr), len(va)))
        models.append(model)
    selected = max(range(len(folds)), key=lambda i: (folds[i].val_macro_f1, -i))
    return KFoldResult(folds, models, selected, fold_ids)


def predict(model: ConvNet, grids):
    """Class indices and probability rows for a batch of 32x32 grids."""
    return model.predict(grids)
