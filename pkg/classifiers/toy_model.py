"""
    In-process toy classifiers (linear-softmax and ReLU MLPs) and their weights
    file: a one line JSON header
    ``{"kind":"linear"|"mlp","shapes":[[..],..],"Y":k,"input":[H,W,C]}``, a
    newline byte, then every tensor of ``shapes`` as little-endian 32-bit reals
    in header order (weight matrix, bias vector, next weight matrix, ...).
"""

import json
import logging
from dataclasses                import dataclass

import numpy as np

from classifiers.base_classifier import BaseClassifier, softmax
from errors                     import ModelSpecError
from utils                      import ensure_parent_dir

logger = logging.getLogger(__name__)

KINDS = ("linear", "mlp")
WEIGHT_DTYPE = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class ToyModelSpec:
    """
        Layer weights of a toy classifier. ``layers`` holds ``(W, b)`` pairs with
        ``W`` of shape ``(out, in)``; the first layer reads the flattened
        ``(H, W, C)`` image in row-major order and the last one has ``Y`` outputs.
    """

    kind: str
    layers: tuple
    input_shape: tuple
    class_count: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelSpecError(f"Unknown model kind '{self.kind}'")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ModelSpecError(f"input shape must be (H, W, C), got {self.input_shape}")
        if self.class_count < 2:
            raise ModelSpecError("a classifier needs at least 2 classes")
        if not self.layers:
            raise ModelSpecError("a model needs at least one layer")
        if self.kind == "linear" and len(self.layers) != 1:
            raise ModelSpecError(f"a linear model has 1 layer, got {len(self.layers)}")

        width = int(np.prod(self.input_shape))
        for depth, (weight, bias) in enumerate(self.layers):
            if weight.ndim != 2 or weight.shape[1] != width:
                raise ModelSpecError(
                    f"layer {depth} weight has shape {weight.shape}, expected (*, {width})"
                )
            if bias.shape != (weight.shape[0],):
                raise ModelSpecError(
                    f"layer {depth} bias has shape {bias.shape}, expected ({weight.shape[0]},)"
                )
            width = weight.shape[0]

        if width != self.class_count:
            raise ModelSpecError(f"last layer has {width} outputs, Y is {self.class_count}")

    @classmethod
    def create(cls, kind, layers, input_shape, class_count=None):
        layers = tuple(
            (np.asarray(w, dtype=WEIGHT_DTYPE), np.asarray(b, dtype=WEIGHT_DTYPE))
            for w, b in layers
        )
        if class_count is None:
            class_count = layers[-1][0].shape[0] if layers else 0
        return cls(kind, layers, tuple(int(d) for d in input_shape), int(class_count))

    @property
    def shapes(self):
        return [list(array.shape) for layer in self.layers for array in layer]

    def logits(self, x):
        """Return the logits of one image or of a batch of flattened images."""

        x = np.asarray(x, dtype=np.float64)
        act = x.reshape(-1) if x.shape == self.input_shape else x
        for depth, (weight, bias) in enumerate(self.layers):
            act = act @ weight.astype(np.float64).T + bias.astype(np.float64)
            if depth < len(self.layers) - 1:
                act = np.maximum(act, 0.0)
        return act

    def forward(self, x):
        return softmax(self.logits(x))


class ToyModel(BaseClassifier):
    def __init__(self, spec):
        super().__init__(spec.input_shape, spec.class_count)
        self.spec = spec

    def forward(self, x):
        return self.spec.forward(x)



### Weights Files ###
def save_toy_model(spec, path):
    header = json.dumps({
        "kind": spec.kind,
        "shapes": spec.shapes,
        "Y": spec.class_count,
        "input": list(spec.input_shape),
    }, separators=(",", ":"))

    ensure_parent_dir(path)
    with open(path, "wb") as model_file:
        model_file.write(header.encode("ascii") + b"\n")
        for layer in spec.layers:
            for array in layer:
                model_file.write(np.ascontiguousarray(array, dtype=WEIGHT_DTYPE).tobytes())

def read_toy_spec(path):
    """
        Read a weights file.

        Returns
        -------
        spec: :class:`ToyModelSpec`
            the model weights.

        Raises
        ------
        ModelSpecError:
            the file is missing, malformed, or its shapes do not chain.
    """

    try:
        with open(path, "rb") as model_file:
            raw = model_file.read()
    except OSError as error:
        raise ModelSpecError(f"Could not read '{path}': {error}") from error

    newline = raw.find(b"\n")
    try:
        header = json.loads(raw[:newline].decode("ascii")) if newline >= 0 else None
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise ModelSpecError(f"'{path}' has a malformed header: {error}") from error
    if not isinstance(header, dict):
        raise ModelSpecError(f"'{path}' has no JSON header line")

    shapes = header.get("shapes")
    if (not isinstance(shapes, list) or len(shapes) % 2 or
            not all(isinstance(s, list) and all(isinstance(d, int) and d > 0 for d in s)
                    for s in shapes)):
        raise ModelSpecError(f"'{path}' declares invalid shapes {shapes!r}")

    payload = raw[newline + 1:]
    sizes = [int(np.prod(shape)) for shape in shapes]
    if len(payload) != sum(sizes) * WEIGHT_DTYPE.itemsize:
        raise ModelSpecError(
            f"'{path}' payload has {len(payload)} bytes, shapes need "
            f"{sum(sizes) * WEIGHT_DTYPE.itemsize}"
        )

    arrays = []
    offset = 0
    for shape, size in zip(shapes, sizes):
        arrays.append(np.frombuffer(payload, WEIGHT_DTYPE, size, offset).reshape(shape))
        offset += size * WEIGHT_DTYPE.itemsize

    try:
        return ToyModelSpec.create(
            header.get("kind"),
            list(zip(arrays[0::2], arrays[1::2])),
            header.get("input") or (),
            header.get("Y", 0),
        )
    except (TypeError, ValueError) as error:
        if isinstance(error, ModelSpecError):
            raise
        raise ModelSpecError(f"'{path}': {error}") from error

def load_toy_model(path):
    spec = read_toy_spec(path)
    logger.info(f"Loaded {spec.kind} model {spec.shapes} from {path}")
    return ToyModel(spec)



### Constructors ###
def linear_spec(weights, biases, input_shape):
    """Return a linear-softmax spec from a ``(Y, D)`` weight matrix and ``Y`` biases."""

    return ToyModelSpec.create("linear", [(weights, biases)], input_shape)

def binary_linear_spec(field, input_shape):
    """
        Return a 2-class linear spec whose logit difference ``z_2 - z_1`` is
        ``field . x`` (zero biases).
    """

    field = np.asarray(field, dtype=np.float64).reshape(-1)
    weights = np.stack([np.zeros_like(field), field])
    return linear_spec(weights, np.zeros(2), input_shape)

def random_mlp_spec(input_shape, hidden, class_count, rng, scale=1.0):
    """
        Return an MLP with ``hidden`` layer widths and normal weights scaled by
        ``scale / sqrt(fan_in)``.
    """

    widths = [int(np.prod(input_shape))] + list(hidden) + [class_count]
    layers = [
        (rng.normal(0, scale / np.sqrt(fan_in), size=(fan_out, fan_in)),
         rng.normal(0, 0.1, size=fan_out))
        for fan_in, fan_out in zip(widths[:-1], widths[1:])
    ]
    kind = "mlp" if hidden else "linear"
    return ToyModelSpec.create(kind, layers, input_shape, class_count)
