"""Encoders that turn images and prompt strings into fixed-dimension features.

Two families:

- ``toy:<dim>`` - a deterministic offline encoder (fixed-seed random
  projections over a downsampled pixel grid / character trigram counts).
  No model weights, no network; meant for tests, demos, and format
  plumbing. Not a real encoder: accuracy on real data is meaningless.
- any other identifier - treated as a HuggingFace CLIP-style model id and
  loaded through ``transformers`` (requires the ``clip`` extra and locally
  available weights).

All encoders return rows that are L2-normalized by the caller.
"""

from __future__ import annotations

import hashlib

import numpy as np


class EncoderError(RuntimeError):
    """Encoder could not be constructed or executed."""


class ToyEncoder:
    """Deterministic random-projection encoder for offline pipelines."""

    GRID = 16  # images are resized to GRID x GRID RGB before projection
    TEXT_BUCKETS = 512

    def __init__(self, dim: int):
        if dim < 2:
            raise EncoderError(f"toy encoder dimension must be >= 2, got {dim}")
        self.dim = dim
        pixels = self.GRID * self.GRID * 3
        # builtins.hash is salted per process; seed from a stable digest
        seed = int.from_bytes(hashlib.sha256(f"vlembed-toy-{dim}".encode()).digest()[:4], "little")
        rng = np.random.default_rng(seed)
        self._image_proj = rng.normal(size=(pixels, dim)) / np.sqrt(pixels)
        self._text_proj = rng.normal(size=(self.TEXT_BUCKETS, dim)) / np.sqrt(self.TEXT_BUCKETS)

    def encode_images(self, images) -> np.ndarray:
        from PIL import Image

        rows = []
        for img in images:
            img = img.convert("RGB").resize((self.GRID, self.GRID), Image.BILINEAR)
            flat = np.asarray(img, dtype=np.float64).reshape(-1) / 255.0
            rows.append(flat @ self._image_proj)
        return np.stack(rows)

    def encode_texts(self, texts) -> np.ndarray:
        rows = []
        for text in texts:
            counts = np.zeros(self.TEXT_BUCKETS)
            padded = f"  {text.lower()}  "
            for i in range(len(padded) - 2):
                trigram = padded[i : i + 3].encode("utf-8")
                bucket = int.from_bytes(hashlib.sha256(trigram).digest()[:4], "little")
                counts[bucket % self.TEXT_BUCKETS] += 1.0
            rows.append(counts @ self._text_proj)
        return np.stack(rows)


class HFClipEncoder:
    """CLIP-style dual encoder loaded from a HuggingFace model id."""

    def __init__(self, model_id: str, batch_size: int = 16):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderError(
                f"encoder {model_id!r} needs the 'clip' extra (torch + transformers)"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderError(f"failed to load encoder {model_id!r}: {exc}") from exc
        self._torch = torch
        self._model.eval()
        self.batch_size = batch_size
        self.dim = int(self._model.config.projection_dim)

    def _batched(self, items, encode):
        chunks = []
        for start in range(0, len(items), self.batch_size):
            chunks.append(encode(items[start : start + self.batch_size]))
        return np.concatenate(chunks)

    def encode_images(self, images) -> np.ndarray:
        def encode(batch):
            inputs = self._processor(images=batch, return_tensors="pt")
            with self._torch.no_grad():
                feats = self._model.get_image_features(**inputs)
            return feats.numpy().astype(np.float64)

        return self._batched(list(images), encode)

    def encode_texts(self, texts) -> np.ndarray:
        def encode(batch):
            inputs = self._processor(text=batch, return_tensors="pt", padding=True)
            with self._torch.no_grad():
                feats = self._model.get_text_features(**inputs)
            return feats.numpy().astype(np.float64)

        return self._batched(list(texts), encode)


def make_encoder(identifier: str):
    if identifier.startswith("toy:"):
        try:
            dim = int(identifier.split(":", 1)[1])
        except ValueError as exc:
            raise EncoderError(f"bad toy encoder spec {identifier!r}, expected toy:<dim>") from exc
        return ToyEncoder(dim)
    return HFClipEncoder(identifier)
