"""scikit-learn compatible wrappers.

Images enter as channel-first RGB arrays of shape (n, 3, H, W) with values
in [0, 255]; any H, W is accepted and resized.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import model
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .colorspace import ColorSpace
from .data import ArrayImageSet, compute_mean_image, crop, preprocess_pixels
from .errors import ShapeError
from .layers import softmax
from .optim import TrainConfig
from .training import train


def check_images(X):
    """Validate an (n, 3, H, W) RGB batch in [0, 255]; returns float64."""
    X = check_array(X, allow_nd=True, dtype=np.float64)
    if X.ndim != 4 or X.shape[1] != 3:
        raise ShapeError(f"expected images of shape (n, 3, H, W), got {X.shape}")
    if X.min() < 0 or X.max() > 255:
        raise ValueError("pixel values must lie in [0, 255]")
    return X


class ColorSpaceTransformer(TransformerMixin, BaseEstimator):
    """Resize RGB images to ``size`` x ``size`` and convert them to ``color_space``."""

    def __init__(self, color_space="rgb", size=256):
        self.color_space = color_space
        self.size = size

    def fit(self, X, y=None):
        X = check_images(X)
        self.space_ = ColorSpace.parse(self.color_space)
        self.input_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "space_")
        X = check_images(X)
        return np.stack([preprocess_pixels(img, self.space_, self.size) for img in X])


class VehicleColorClassifier(ClassifierMixin, BaseEstimator):
    """Dual-base-network CNN trained with momentum SGD.

    ``network="full"`` builds the full 227x227 network; ``"tiny"`` builds
    a shrunken 35x35 variant with the same topology, for quick experiments.
    The output layer width follows the number of distinct labels seen in
    ``fit``.
    """

    def __init__(
        self,
        color_space="rgb",
        network="full",
        batch_size=115,
        max_iter=200_000,
        base_lr=0.01,
        momentum=0.9,
        weight_decay=0.0005,
        lr_step=50_000,
        lr_factor=0.1,
        dropout_rate=0.5,
        resize_size=256,
        seed=0,
    ):
        self.color_space = color_space
        self.network = network
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_step = lr_step
        self.lr_factor = lr_factor
        self.dropout_rate = dropout_rate
        self.resize_size = resize_size
        self.seed = seed

    def _config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            base_lr=self.base_lr,
            lr_step=self.lr_step,
            lr_factor=self.lr_factor,
            max_iter=self.max_iter,
            dropout_rate=self.dropout_rate,
            seed=self.seed,
            color_space=ColorSpace.parse(self.color_space).value,
            network=self.network,
            resize_size=self.resize_size,
            log_every=0,
            checkpoint_every=0,
        )

    def _prepare(self, X):
        return ColorSpaceTransformer(self.color_space, self.resize_size).fit_transform(X)

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        X = check_images(X)
        self.config_ = self._config()
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        labels = self._encoder.transform(y)
        images = ArrayImageSet(self._prepare(X), labels)
        self.mean_image_ = compute_mean_image(images)
        spec = self.config_.network_spec(n_classes=len(self.classes_))
        self.state_ = model.build(spec, seed=self.seed)
        self.optimizer_, self.train_log_ = train(
            self.state_, images, self.mean_image_, self.config_
        )
        self.n_iter_ = self.optimizer_.iteration
        return self

    def _inputs(self, X):
        check_is_fitted(self, "state_")
        prepared = self._prepare(check_images(X))
        size = self.state_.spec.input_size
        origin = (self.resize_size - size) // 2
        centred = prepared - self.mean_image_
        return np.ascontiguousarray(crop(centred, origin, origin, size))

    def decision_function(self, X):
        x = self._inputs(X)
        return model.forward(self.state_, x, mode="eval")

    def predict_proba(self, X):
        return softmax(self.decision_function(X).astype(np.float64))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def save(self, path):
        check_is_fitted(self, "state_")
        save_checkpoint(
            path,
            Checkpoint(
                self.state_,
                self.optimizer_,
                self.mean_image_,
                self.config_.color_space,
                self.config_.to_text(),
                extra={"classes": [str(c) for c in self.classes_]},
            ),
        )

    @classmethod
    def load(cls, path):
        ckpt = load_checkpoint(path)
        cfg = TrainConfig.from_text(ckpt.config_text) if ckpt.config_text else TrainConfig()
        est = cls(
            color_space=ckpt.color_space,
            network=cfg.network,
            batch_size=cfg.batch_size,
            max_iter=cfg.max_iter,
            base_lr=cfg.base_lr,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
            lr_step=cfg.lr_step,
            lr_factor=cfg.lr_factor,
            dropout_rate=cfg.dropout_rate,
            resize_size=cfg.resize_size,
            seed=cfg.seed,
        )
        est.config_ = cfg
        est.state_ = ckpt.state
        est.optimizer_ = ckpt.optimizer
        est.mean_image_ = ckpt.mean_image
        est.classes_ = np.array(ckpt.extra.get("classes", []))
        est.n_iter_ = ckpt.optimizer.iteration if ckpt.optimizer else 0
        return est
