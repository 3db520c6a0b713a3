"""Encoder registry.

Toy encoders ("toy-text-LxD", "toy-bytes-LxD") are fully deterministic and
offline: every token/patch vector is drawn from a PRNG seeded by a stable
content hash, so re-running a job reproduces matrices bit for bit. Any other
name is treated as a model-hub identifier and needs the optional hub stack.
"""

import hashlib
import re

import numpy as np

from .errors import EncoderUnavailable

_TOY_NAME = re.compile(r"^toy-(text|bytes)-(\d+)x(\d+)$")


def _seed(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        p = p if isinstance(p, bytes) else str(p).encode("utf-8")
        h.update(p)
        h.update(b"\x1f")  # separator so ("ab","c") != ("a","bc")
    return int.from_bytes(h.digest(), "little")


def _vec(d, *parts):
    return np.random.default_rng(_seed(*parts)).standard_normal(d)


class ToyTextEncoder:
    """Whitespace tokens; token vectors depend only on (layer, token text)."""

    def __init__(self, n_layers: int, d: int):
        self.n_layers = n_layers
        self.d = d

    def hidden_states(self, text: str):
        tokens = text.split() or ["[EMPTY]"]
        out = []
        for layer in range(self.n_layers):
            out.append(np.stack([_vec(self.d, "tok", layer, t) for t in tokens]))
        return out


class ToyBytesEncoder:
    """Content-addressed stand-in for image/audio encoders: four pseudo-patches
    per input, each a function of (layer, patch, content digest)."""

    patches = 4

    def __init__(self, n_layers: int, d: int):
        self.n_layers = n_layers
        self.d = d

    def hidden_states(self, raw: bytes):
        digest = hashlib.blake2b(raw, digest_size=16).digest()
        out = []
        for layer in range(self.n_layers):
            out.append(np.stack([_vec(self.d, "patch", layer, p, digest)
                                 for p in range(self.patches)]))
        return out


def get_encoder(name: str):
    m = _TOY_NAME.match(name)
    if m:
        family, layers, d = m.group(1), int(m.group(2)), int(m.group(3))
        cls = ToyTextEncoder if family == "text" else ToyBytesEncoder
        return cls(layers, d)
    try:
        import transformers  # noqa: F401
    except ImportError:
        raise EncoderUnavailable(
            f"encoder {name!r} needs the transformers/torch hub stack, which is "
            "not installed; toy-text-LxD and toy-bytes-LxD run offline")
    raise EncoderUnavailable(
        f"hub encoder {name!r} is not wired up in this build; use a toy encoder")
