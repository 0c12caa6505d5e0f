"""Activation functions and their saturation bounds.

Each activation carries optional saturation bounds: a pre-activation at or
below ``lower_sat`` means the function no longer responds on the negative
end, and symmetrically for ``upper_sat``.  relu is flat at exactly 0 and
below, so its lower bound is 0.  sigmoid and tanh never go exactly flat;
their default bounds are the points beyond which the output moves less
than 1e-2 per unit of input (|z| >= 6 and |z| >= 3 respectively).  Both
defaults can be overridden per node in the manifest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedManifest

SATURATED_NONE = 0
SATURATED_NEGATIVE_END = -1
SATURATED_POSITIVE_END = 1


@dataclass(frozen=True)
class ActivationDesc:
    name: str
    monotonic: bool
    lower_sat: float | None
    upper_sat: float | None

    def __post_init__(self):
        if self.lower_sat is not None and self.upper_sat is not None:
            if not self.lower_sat < self.upper_sat:
                raise MalformedManifest(
                    f"activation {self.name!r}: lower_sat must be < upper_sat"
                )

    def saturation_state(self, pre_activation):
        """Classify pre-activation values as -1 (negative end), +1, or 0.

        Vectorized; returns an int8 array of the input's shape.  Only
        monotonic activations saturate.
        """
        z = np.asarray(pre_activation)
        state = np.zeros(z.shape, dtype=np.int8)
        if not self.monotonic:
            return state
        if self.lower_sat is not None:
            state[z <= self.lower_sat] = SATURATED_NEGATIVE_END
        if self.upper_sat is not None:
            state[z >= self.upper_sat] = SATURATED_POSITIVE_END
        return state


_DEFAULTS = {
    "linear": ActivationDesc("linear", monotonic=True, lower_sat=None, upper_sat=None),
    "relu": ActivationDesc("relu", monotonic=True, lower_sat=0.0, upper_sat=None),
    "sigmoid": ActivationDesc("sigmoid", monotonic=True, lower_sat=-6.0, upper_sat=6.0),
    "tanh": ActivationDesc("tanh", monotonic=True, lower_sat=-3.0, upper_sat=3.0),
}

ACTIVATION_NAMES = tuple(_DEFAULTS)


def default_desc(name: str) -> ActivationDesc:
    try:
        return _DEFAULTS[name]
    except KeyError:
        raise MalformedManifest(
            f"unknown activation {name!r}; expected one of {sorted(_DEFAULTS)}"
        ) from None


def make_desc(name, monotonic=None, lower_sat="default", upper_sat="default"):
    """Build a descriptor from a name plus optional per-node overrides."""
    base = default_desc(name)
    return ActivationDesc(
        name=name,
        monotonic=base.monotonic if monotonic is None else bool(monotonic),
        lower_sat=base.lower_sat if lower_sat == "default" else lower_sat,
        upper_sat=base.upper_sat if upper_sat == "default" else upper_sat,
    )


def apply(name: str, z: np.ndarray) -> np.ndarray:
    """Evaluate the named activation elementwise (float64 in, float64 out)."""
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        # piecewise form avoids exp overflow for large |z|
        out = np.empty_like(z, dtype=np.float64)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    raise MalformedManifest(f"unknown activation {name!r}")
