"""Scikit-learn style estimators wrapping the pipeline.

:class:`EpipolarFlow` is a stateless transformer turning image pairs into
dense flow fields (matching, five-point RANSAC, densification).
:class:`ChangeDetector` fits the encoder-decoder change network on labeled
pairs and predicts per-pixel change probability. Both expose
``get_params`` / ``set_params`` and clone cleanly, so they compose with
the wider scikit-learn ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .containers import ChangeMask, FlowField, Image, ImagePair, Tensor4
from .data import PatchSample, ScenePair, augment_rotations, extract_patches
from .densify import DensifyConfig, densify
from .epipolar import CameraModel, RansacConfig, ransac_essential
from .errors import NoModelError
from .matching import MatchConfig, match_images
from .metrics import binarize
from .net.model import (
    NetworkConfig,
    forward,
    init_params,
    sliding_window_predict,
)
from .net.train import TrainConfig, train
from .tensor_ops import concat_inputs, normalize_flow, normalize_image
from .validation import as_image, as_mask


class EpipolarFlow(BaseEstimator, TransformerMixin):
    """Dense flow between roughly registered image pairs.

    Tentative grid matches are filtered by RANSAC with a five-point
    essential-matrix model, and the surviving inliers are densified into a
    per-pixel field. ``transform`` maps a list of (t0, t1) pairs to a list
    of :class:`FlowField`; pairs where no epipolar model can be found fall
    back to match-free densification (smoothness only) when
    ``allow_no_model`` is set, and raise otherwise.
    """

    def __init__(
        self,
        camera: str = "equirectangular",
        focal: float = 0.0,
        match_config: MatchConfig | None = None,
        ransac_config: RansacConfig | None = None,
        densify_config: DensifyConfig | None = None,
        allow_no_model: bool = False,
    ):
        self.camera = camera
        self.focal = focal
        self.match_config = match_config
        self.ransac_config = ransac_config
        self.densify_config = densify_config
        self.allow_no_model = allow_no_model

    def fit(self, X=None, y=None):
        self.is_fitted_ = True
        return self

    def _camera_for(self, width: int, height: int) -> CameraModel:
        if self.camera == "equirectangular":
            return CameraModel.equirectangular(width, height)
        if self.camera == "pinhole":
            focal = self.focal if self.focal > 0 else 1.2 * max(width, height)
            return CameraModel.pinhole(width, height, fx=focal, fy=focal)
        raise ValueError(f"unknown camera {self.camera!r}")

    def transform(self, X) -> list[FlowField]:
        mcfg = self.match_config or MatchConfig()
        rcfg = self.ransac_config or RansacConfig()
        dcfg = self.densify_config or DensifyConfig()
        out = []
        for item in X:
            t0, t1 = (as_image(item[0]), as_image(item[1]))
            pair = ImagePair(t0, t1)
            matches = match_images(t0, t1, mcfg)
            try:
                result = ransac_essential(matches, self._camera_for(pair.width, pair.height), rcfg)
                inliers = matches.with_inliers(result.inlier_flags)
            except NoModelError:
                if not self.allow_no_model:
                    raise
                inliers = matches.with_inliers(np.zeros(len(matches), dtype=bool))
            out.append(densify(pair, inliers, dcfg))
        return out


class ChangeDetector(BaseEstimator):
    """Encoder-decoder change segmentation on image pairs.

    ``fit(X, y)`` takes pairs X = [(t0, t1)] (or [(t0, t1, flow)] when
    ``use_flow``) and grayscale change masks y. Large scenes are cut by the
    sliding patch pipeline; scenes the size of one network window are used
    whole. ``predict_proba`` returns [0, 1] probability maps of input size.
    """

    def __init__(
        self,
        use_flow: bool = True,
        d_max: float = 64.0,
        patch: int = 224,
        stride: int = 56,
        window: int = 256,
        infer_stride: int = 128,
        augment: bool = False,
        lr: float = 2e-4,
        beta1: float = 0.5,
        beta2: float = 0.999,
        batch_size: int = 2,
        iterations: int = 200,
        epochs: int | None = None,
        threshold: float = 0.5,
        seed: int = 0,
    ):
        self.use_flow = use_flow
        self.d_max = d_max
        self.patch = patch
        self.stride = stride
        self.window = window
        self.infer_stride = infer_stride
        self.augment = augment
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.iterations = iterations
        self.epochs = epochs
        self.threshold = threshold
        self.seed = seed

    # -- internals ---------------------------------------------------------

    def _scene(self, item, mask, idx: int) -> ScenePair:
        t0 = as_image(item[0])
        t1 = as_image(item[1])
        flow = item[2] if self.use_flow else None
        if self.use_flow and flow is None:
            raise ValueError("use_flow=True needs (t0, t1, flow) samples")
        return ScenePair(
            id=f"fit/{idx}",
            image_t0=t0,
            image_t1=t1,
            gt_mask=as_mask(mask) if mask is not None else ChangeMask(
                np.zeros((t0.height, t0.width), dtype=np.float32)
            ),
            subset="SYNTH",
            flow=flow,
        )

    def _samples(self, scene: ScenePair) -> list[PatchSample]:
        h, w = scene.image_t0.height, scene.image_t0.width
        if min(h, w) < self.patch:
            if h % 128 or w % 128:
                raise ValueError(
                    f"scene {h}x{w} is smaller than a patch and not divisible by 128"
                )
            tensor = self._whole_input(scene)
            samples = [
                PatchSample(
                    x=tensor, target=scene.gt_mask, pair_id=scene.id,
                    crop_x=0, crop_y=0, rotation=0,
                )
            ]
        else:
            samples = extract_patches(
                scene, self.patch, self.stride, self.window,
                use_flow=self.use_flow, d_max=self.d_max,
            )
        if self.augment:
            samples = [r for s in samples for r in augment_rotations(s)]
        return samples

    def _whole_input(self, scene: ScenePair) -> Tensor4:
        a = normalize_image(scene.image_t0)
        b = normalize_image(scene.image_t1)
        f = normalize_flow(scene.flow, self.d_max) if self.use_flow else None
        return concat_inputs(a, b, f)

    # -- sklearn surface ----------------------------------------------------

    def fit(self, X, y):
        if len(X) != len(y):
            raise ValueError(f"{len(X)} samples vs {len(y)} targets")
        scenes = [self._scene(item, mask, i) for i, (item, mask) in enumerate(zip(X, y))]
        dataset = [
            (s.x.data[0].astype(np.float32), s.target.values)
            for scene in scenes
            for s in self._samples(scene)
        ]
        self.config_ = NetworkConfig(in_channels=8 if self.use_flow else 6)
        params = init_params(self.config_, seed=self.seed)
        tcfg = TrainConfig(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2,
            batch_size=self.batch_size, iterations=self.iterations,
            epochs=self.epochs, seed=self.seed,
        )
        self.params_, self.loss_log_ = train(self.config_, params, tcfg, dataset)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("ChangeDetector is not fitted yet")

    def predict_proba(self, X) -> list[np.ndarray]:
        self._check_fitted()
        out = []
        for i, item in enumerate(X):
            scene = self._scene(item, None, i)
            channels = self._whole_input(scene).data[0].astype(np.float32)
            pred = sliding_window_predict(
                self.config_, self.params_, channels,
                window=self.window, stride=self.infer_stride,
            )
            out.append(pred / self.config_.s_max)
        return out

    def predict(self, X) -> list[np.ndarray]:
        return [binarize(p, self.threshold) for p in self.predict_proba(X)]

    def score(self, X, y) -> float:
        """Mean F1 over pairs at the configured threshold."""
        from .metrics import confusion, f1, mask_to_binary

        preds = self.predict(X)
        vals = [
            f1(confusion(p, mask_to_binary(as_mask(m)))) for p, m in zip(preds, y)
        ]
        return float(np.mean(vals))
