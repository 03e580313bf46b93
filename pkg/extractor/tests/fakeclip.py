"""A deterministic stand-in encoder for tests; no model runtime involved.

Every embedding is a unit vector drawn from a counter-based generator
keyed by a content hash, so the same dataset bytes always produce the
same feature files. Fixture images are plain byte files carrying a
"class=<name>" token; the matching class prototype anchors both towers,
which keeps image and text features aligned the way a real pretrained
pair would be.
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path

import numpy as np

FIXTURES = Path(__file__).parent / "fixtures"
TOYSET = FIXTURES / "toyset"

_CLASS_TOKEN = re.compile(rb"class=([A-Za-z0-9_]+)")


def unit_vector(key: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


class FakeClipEncoder:
    """Content-hash encoder with the interface extraction expects."""

    def __init__(self, class_names=(), dim: int = 512, jitter: float = 0.1):
        self.class_names = tuple(class_names)
        self.dim = dim
        self.jitter = jitter

    def _prototype(self, class_name: str) -> np.ndarray:
        return unit_vector(f"proto:{class_name}", self.dim)

    def encode_images(self, paths) -> np.ndarray:
        rows = []
        for path in paths:
            blob = Path(path).read_bytes()
            match = _CLASS_TOKEN.search(blob)
            if match is None:
                raise AssertionError(f"fixture file without class token: {path}")
            proto = self._prototype(match.group(1).decode("ascii"))
            noise = unit_vector(f"img:{hashlib.sha256(blob).hexdigest()}", self.dim)
            v = proto + self.jitter * noise
            rows.append(v / np.linalg.norm(v))
        return np.stack(rows).astype(np.float32)

    def encode_texts(self, prompts) -> np.ndarray:
        rows = []
        for prompt in prompts:
            proto = None
            for name in self.class_names:
                if name.replace("_", " ") in prompt:
                    proto = self._prototype(name)
                    break
            if proto is None:
                proto = unit_vector(f"text:{prompt}", self.dim)
            noise = unit_vector(f"txt:{prompt}", self.dim)
            v = proto + 0.5 * self.jitter * noise
            rows.append(v / np.linalg.norm(v))
        return np.stack(rows).astype(np.float32)
