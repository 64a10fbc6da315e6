"""Test-time augmentation merging.

Detections made on resized and/or horizontally flipped copies of an image are
mapped back to the original frame and fused with WBF, one model per transform.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from boxforge.core import Detection, hflip
from boxforge.errors import ConfigError
from boxforge.fusion import FusedBox, FusionConfig, wbf


@dataclass(frozen=True)
class TtaTransform:
    """A transformed copy: resized to ``scale_w x scale_h`` pixels, optionally flipped."""

    scale_w: int
    scale_h: int
    flipped: bool = False

    def __post_init__(self):
        if not (self.scale_w > 0 and self.scale_h > 0):
            raise ConfigError(f"transform dimensions must be positive, got {self.scale_w}x{self.scale_h}")

    @classmethod
    def from_json(cls, obj: dict) -> TtaTransform:
        try:
            return cls(int(obj["width"]), int(obj["height"]), bool(obj.get("flipped", False)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad transform entry {obj!r}: {exc}") from None

    def to_json(self) -> dict:
        return {"width": self.scale_w, "height": self.scale_h, "flipped": self.flipped}


@dataclass(frozen=True)
class TtaBundle:
    image_id: int
    entries: tuple[tuple[TtaTransform, tuple[Detection, ...]], ...]


def remap(dets: list[Detection], t: TtaTransform) -> list[Detection]:
    """Bring detections from a transformed copy back to the original frame.

    Resizing is the identity in normalized coordinates; only flips move boxes.
    """
    if not t.flipped:
        return list(dets)
    return [dataclasses.replace(d, bbox=hflip(d.bbox)) for d in dets]


def merge(bundle: TtaBundle, cfg: FusionConfig | None = None) -> list[FusedBox]:
    """Remap every entry, tag it as its own model, and fuse with WBF."""
    if not bundle.entries:
        raise ConfigError(f"empty TTA bundle for image {bundle.image_id}")
    cfg = cfg or FusionConfig()
    n = len(bundle.entries)
    if cfg.model_weights is not None and len(cfg.model_weights) != n:
        raise ConfigError(f"got {len(cfg.model_weights)} weights for {n} transforms")
    cfg = dataclasses.replace(cfg, num_models=n)
    pooled: list[Detection] = []
    for model_id, (t, dets) in enumerate(bundle.entries):
        pooled.extend(
            dataclasses.replace(d, model_id=model_id, image_id=bundle.image_id) for d in remap(dets, t)
        )
    return wbf(pooled, cfg)
