"""Feature extractor + classifier network and its prediction helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ParameterError, UnsupportedConfigurationError


@dataclass
class Affine:
    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add_row(ad.matmul(x, self.weight), self.bias)

    @property
    def shape(self):
        return self.weight.shape


def _init_affine(rng: np.random.Generator, fan_in: int, fan_out: int, prefix: str) -> Affine:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(1, fan_out))
    return Affine(ad.parameter(w, f"{prefix}.weight"), ad.parameter(b, f"{prefix}.bias"))


@dataclass
class ForwardOutput:
    features: Tensor
    lifted: Tensor
    logits: Tensor


@dataclass
class AdaptationModel:
    """Extractor F (affine+ReLU stack) followed by classifier C.

    With a two-layer classifier the hidden ReLU output is the lifted space;
    with a one-layer classifier the lifted space is the feature space itself.
    """

    extractor: list[Affine]
    classifier: list[Affine]

    @classmethod
    def build(cls, input_dim: int, num_classes: int, extractor_dims=(32, 32),
              classifier_hidden: int | None = 16, seed: int = 0) -> "AdaptationModel":
        if input_dim < 1 or num_classes < 2 or not extractor_dims:
            raise ParameterError("need input_dim >= 1, num_classes >= 2 and at least one extractor layer")
        rng = np.random.default_rng(seed)
        dims = [input_dim, *extractor_dims]
        extractor = [_init_affine(rng, dims[i], dims[i + 1], f"F{i}") for i in range(len(dims) - 1)]
        m = dims[-1]
        if classifier_hidden:
            classifier = [_init_affine(rng, m, classifier_hidden, "C0"),
                          _init_affine(rng, classifier_hidden, num_classes, "C1")]
        else:
            classifier = [_init_affine(rng, m, num_classes, "C0")]
        return cls(extractor, classifier)

    @property
    def input_dim(self) -> int:
        return self.extractor[0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.extractor[-1].shape[1]

    @property
    def lifted_dim(self) -> int:
        return self.classifier[-1].shape[0]

    @property
    def num_classes(self) -> int:
        return self.classifier[-1].shape[1]

    @property
    def two_layer(self) -> bool:
        return len(self.classifier) == 2

    @property
    def spaces(self) -> tuple[str, ...]:
        return ("F", "F_up") if self.two_layer else ("F",)

    def named_parameters(self) -> list[tuple[str, Tensor, str]]:
        """(name, tensor, group) triples; group is 'extractor' or 'classifier'."""
        out = []
        for group, layers in (("extractor", self.extractor), ("classifier", self.classifier)):
            for layer in layers:
                out.append((layer.weight.name, layer.weight, group))
                out.append((layer.bias.name, layer.bias, group))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t, _ in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.value.copy() for name, t, _ in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for name, t, _ in self.named_parameters():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: expected shape {t.shape}, got {arr.shape}")
            t.value = arr.copy()

    def extract(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.input_dim:
            raise DimensionError(f"batch has {x.shape[1]} columns, model expects {self.input_dim}")
        h = x
        for layer in self.extractor:
            h = ad.relu(layer(h))
        return h

    def lift(self, features: Tensor) -> Tensor:
        if self.two_layer:
            return ad.relu(self.classifier[0](features))
        return features

    def head(self, lifted: Tensor) -> Tensor:
        """Last affine layer of the classifier."""
        return self.classifier[-1](lifted)

    def classify(self, features: Tensor) -> Tensor:
        """Full classifier C applied to feature-space rows."""
        return self.head(self.lift(features))

    def forward(self, batch) -> ForwardOutput:
        x = batch if isinstance(batch, Tensor) else ad.constant(batch)
        features = self.extract(x)
        lifted = self.lift(features)
        return ForwardOutput(features, lifted, self.head(lifted))

    def logits(self, batch) -> np.ndarray:
        return self.forward(batch).logits.value


def softmax_T(z, T: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis, stabilised by max subtraction."""
    if not T > 0:
        raise ParameterError(f"temperature must be positive, got {T}")
    z = np.asarray(z, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def argmax_rows(logits) -> np.ndarray:
    # np.argmax returns the first maximum, which is the lowest-index tie-break
    return np.argmax(np.atleast_2d(np.asarray(logits)), axis=1)


def predict(model: AdaptationModel, batch) -> np.ndarray:
    return argmax_rows(model.logits(batch))


def region_index(model: AdaptationModel, features) -> np.ndarray:
    """Binary code of which classifier hyperplanes each feature lies above.

    Bit k is 1 when w_k.f + b_k > 0. Only defined for a single affine
    classifier layer.
    """
    if model.two_layer:
        raise UnsupportedConfigurationError("region_index needs a single-layer classifier")
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if f.shape[1] != model.feature_dim:
        raise DimensionError(f"feature width {f.shape[1]} != {model.feature_dim}")
    layer = model.classifier[0]
    scores = f @ layer.weight.value + layer.bias.value
    return (scores > 0).astype(np.int8)
