"""scikit-learn style wrapper around the training loop and model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import tensor as T
from .corpus import PairedCorpus
from .model import VgsnParams, default_config, encode, forward, init_params
from .serialization import read_model, write_model
from .tensor import Rng, Tensor
from .training import TrainConfig, fit


def check_images(X, image_size: int | None = None) -> np.ndarray:
    """Validate a stack of square glyph images; returns ``(n, H, W, 1)`` float64."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64, ensure_all_finite=True)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4 or X.shape[-1] != 1 or X.shape[1] != X.shape[2]:
        raise ValueError(f"expected images shaped (n, H, H) or (n, H, H, 1), got {X.shape}")
    if image_size is not None and X.shape[1] != image_size:
        raise ValueError(f"images are {X.shape[1]}x{X.shape[2]} but the model expects {image_size}x{image_size}")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    return X


class GlyphTransfer(TransformerMixin, BaseEstimator):
    """Learn a font-A to font-B glyph mapping from a few paired images.

    ``fit(X, y)`` trains on font-A images ``X`` and their font-B counterparts
    ``y``; ``predict`` renders font-B glyphs for new font-A inputs and
    ``transform`` returns the latent means.

    Parameters
    ----------
    grid : int
        Partitions per image side. Ignored when ``model="vae"``.
    model : {"vgsn", "vae"}
    optimizer : {"sgd", "adam", "rmsprop"}
    learning_rate : float or None
        None picks the optimizer default.
    decoder_stages : int or None
        None picks ``min(5, log2(image_size / grid))``.
    """

    def __init__(
        self,
        grid=4,
        model="vgsn",
        optimizer="adam",
        learning_rate=None,
        epochs=200,
        batch_size=32,
        seed=0,
        decoder_stages=None,
        latent_dim=64,
        partition_latent_dim=16,
        basis_dim=512,
        kl_weight=0.0,
    ):
        self.grid = grid
        self.model = model
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.decoder_stages = decoder_stages
        self.latent_dim = latent_dim
        self.partition_latent_dim = partition_latent_dim
        self.basis_dim = basis_dim
        self.kl_weight = kl_weight

    def _make_config(self, image_size):
        return default_config(
            image_size,
            self.grid,
            kind=self.model,
            stages=self.decoder_stages,
            latent_dim=self.latent_dim,
            partition_latent_dim=self.partition_latent_dim,
            basis_dim=self.basis_dim,
        )

    def _train_config(self, epochs=None):
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs if epochs is None else epochs,
            seed=self.seed,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            kl_weight=self.kl_weight,
        )

    def fit(self, X, y, codepoints=None, callback=None):
        X = check_images(X)
        y = check_images(y, X.shape[1])
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} images but y has {len(y)}")
        corpus = PairedCorpus.from_arrays(X, y, codepoints)
        return self.fit_corpus(corpus, callback=callback)

    def fit_corpus(self, corpus: PairedCorpus, callback=None):
        config = self._make_config(corpus.image_size)
        params = init_params(config, Rng(self.seed))
        params, curve = fit(params, corpus, self._train_config(), callback=callback)
        self.params_ = params
        self.loss_curve_ = curve
        self.image_size_ = corpus.image_size
        self.n_features_in_ = corpus.image_size**2
        return self

    def _batches(self, X, batch_size=32):
        for start in range(0, len(X), batch_size):
            yield Tensor(X[start : start + batch_size].astype(T.get_dtype()))

    def predict(self, X, stochastic=False, random_state=None):
        """Generated font-B images, ``(n, H, W, 1)`` with values in (0, 1).

        The default decodes the latent mean. ``stochastic=True`` samples
        ``eps`` from ``Rng(random_state)`` and decodes ``mu + exp(sigma) * phi(eps)``.
        """
        check_is_fitted(self, "params_")
        X = check_images(X, self.image_size_)
        rng = Rng(self.seed if random_state is None else random_state) if stochastic else None
        d = self.params_.config.latent_dim
        outs = []
        for batch in self._batches(X):
            eps = rng.normal(batch.shape[0] * d).reshape(-1, d) if rng is not None else None
            outs.append(forward(self.params_, batch, eps, "eval").data)
        return np.concatenate(outs).astype(np.float64)

    def transform(self, X):
        """Latent means ``(n, latent_dim)``."""
        check_is_fitted(self, "params_")
        X = check_images(X, self.image_size_)
        return np.concatenate([encode(self.params_, b, "eval").mu.data for b in self._batches(X)]).astype(np.float64)

    def score(self, X, y):
        """Negative mean squared error of ``predict(X)`` against ``y``."""
        y = check_images(y, self.image_size_)
        return -float(np.mean((self.predict(X) - y) ** 2))

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        write_model(path, self.params_)

    @classmethod
    def from_params(cls, params: VgsnParams, **kw) -> "GlyphTransfer":
        cfg = params.config
        est = cls(
            grid=cfg.grid.g,
            model=cfg.kind,
            decoder_stages=cfg.decoder_stages,
            latent_dim=cfg.latent_dim,
            partition_latent_dim=cfg.grid.partition_latent_dim,
            basis_dim=cfg.basis_dim,
            **kw,
        )
        est.params_ = params
        est.image_size_ = cfg.image_size
        est.n_features_in_ = cfg.image_size**2
        est.loss_curve_ = []
        return est

    @classmethod
    def load(cls, path, **kw) -> "GlyphTransfer":
        return cls.from_params(read_model(path), **kw)
