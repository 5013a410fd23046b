"""Shared domain types, angle arithmetic and template serialization.

Everything here is immutable after construction so templates, galleries and
codebooks can be shared freely across worker processes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * np.pi

RAW_LEN = 192
COMPRESSED_LEN = 96
PQ_SUBVECTORS = 16

MAGIC = b"LFTP"
FORMAT_VERSION = 1


class MinutiaKind(Enum):
    REAL = 0
    VIRTUAL = 1


class DescriptorStage(Enum):
    RAW = 0          # length 192, float32
    COMPRESSED = 1   # length 96, float32
    QUANTIZED = 2    # 16 codeword indices, uint8


class SourceTag(Enum):
    """Which extraction pipeline produced a minutiae template."""

    SET_1 = 1
    SET_3 = 3
    SET_6 = 6
    REFERENCE = 0


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into [0, 2*pi)."""
    w = np.mod(theta, TWO_PI)
    # tiny negatives round up to exactly 2*pi under np.mod
    w = np.where(w >= TWO_PI, 0.0, w)
    return float(w) if w.ndim == 0 else w


def angle_diff(theta1, theta2):
    """Smallest difference between two orientations, in [0, pi].

    Accepts scalars or arrays in [0, 2*pi); symmetric in its arguments.
    """
    d = np.abs(np.asarray(theta1, dtype=float) - np.asarray(theta2, dtype=float))
    out = np.where(d < np.pi, d, TWO_PI - d)
    if out.ndim == 0:
        return float(out)
    return out


def flow_to_minutia_angle(flow):
    """Lift a ridge-flow direction in [0, pi) to a minutia orientation in [0, 2*pi).

    The flow angle is assigned directly; both sides of a comparison use the
    same convention so the direction ambiguity cancels.
    """
    return wrap_angle(flow)


@dataclass(frozen=True)
class Minutia:
    x: float
    y: float
    theta: float  # [0, 2*pi)
    kind: MinutiaKind = MinutiaKind.REAL

    def __post_init__(self):
        if not (0.0 <= self.theta < TWO_PI):
            object.__setattr__(self, "theta", float(wrap_angle(self.theta)))


@dataclass(frozen=True)
class Descriptor:
    stage: DescriptorStage
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if self.stage is DescriptorStage.QUANTIZED:
            if v.ndim != 1 or v.size == 0:
                raise ValueError(f"quantized descriptor needs a flat index vector, got {v.shape}")
            v = v.astype(np.uint8)
        else:
            want = RAW_LEN if self.stage is DescriptorStage.RAW else COMPRESSED_LEN
            if v.shape != (want,):
                raise ValueError(f"{self.stage.name} descriptor needs length {want}, got {v.shape}")
            v = v.astype(np.float32)
            if not np.all(np.isfinite(v)):
                raise ValueError("descriptor values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        if not isinstance(other, Descriptor):
            return NotImplemented
        return self.stage is other.stage and np.array_equal(self.values, other.values)


def _stack_minutiae(minutiae: Sequence[Minutia]):
    """(n,3) float64 array of x, y, theta."""
    if not minutiae:
        return np.zeros((0, 3))
    return np.array([[m.x, m.y, m.theta] for m in minutiae], dtype=float)


def _cached_stack(template):
    """Lazily memoized minutia geometry; templates are immutable so the
    stacked array is computed at most once."""
    cached = getattr(template, "_xyt", None)
    if cached is None:
        cached = _stack_minutiae(template.minutiae)
        cached.setflags(write=False)
        object.__setattr__(template, "_xyt", cached)
    return cached


def _cached_descriptors(template):
    cached = getattr(template, "_desc_matrix", None)
    if cached is None:
        cached = np.stack([d.values for d in template.descriptors])
        cached.setflags(write=False)
        object.__setattr__(template, "_desc_matrix", cached)
    return cached


@dataclass(frozen=True)
class MinutiaeTemplate:
    minutiae: tuple
    descriptors: tuple
    source_tag: SourceTag = SourceTag.REFERENCE

    def __post_init__(self):
        object.__setattr__(self, "minutiae", tuple(self.minutiae))
        object.__setattr__(self, "descriptors", tuple(self.descriptors))
        if len(self.minutiae) != len(self.descriptors):
            raise ValueError("one descriptor per minutia required")

    def __len__(self):
        return len(self.minutiae)

    @property
    def xy(self):
        return _cached_stack(self)[:, :2]

    @property
    def thetas(self):
        return _cached_stack(self)[:, 2]

    def descriptor_matrix(self):
        if not self.descriptors:
            return np.zeros((0, COMPRESSED_LEN), dtype=np.float32)
        return _cached_descriptors(self)


@dataclass(frozen=True)
class TextureTemplate:
    minutiae: tuple
    descriptors: tuple

    def __post_init__(self):
        object.__setattr__(self, "minutiae", tuple(self.minutiae))
        object.__setattr__(self, "descriptors", tuple(self.descriptors))
        if len(self.minutiae) != len(self.descriptors):
            raise ValueError("one descriptor per minutia required")
        stages = {d.stage for d in self.descriptors}
        if len(stages) > 1:
            raise ValueError("texture template descriptors must share one stage")

    def __len__(self):
        return len(self.minutiae)

    @property
    def stage(self):
        return self.descriptors[0].stage if self.descriptors else None

    @property
    def xy(self):
        return _cached_stack(self)[:, :2]

    @property
    def thetas(self):
        return _cached_stack(self)[:, 2]

    def descriptor_matrix(self):
        if not self.descriptors:
            return np.zeros((0, COMPRESSED_LEN), dtype=np.float32)
        return _cached_descriptors(self)


@dataclass(frozen=True)
class RidgeFields:
    """Per-block (16 px) ridge statistics for one image."""

    orientation: np.ndarray  # radians in [0, pi)
    spacing: np.ndarray      # pixels
    quality: np.ndarray
    roi: np.ndarray          # bool
    block_size: int = 16

    def __post_init__(self):
        shapes = {self.orientation.shape, self.spacing.shape, self.quality.shape, self.roi.shape}
        if len(shapes) != 1:
            raise ValueError("all field grids must share one shape")
        for name in ("orientation", "spacing", "quality", "roi"):
            a = np.asarray(getattr(self, name))
            a = a.astype(bool) if name == "roi" else a.astype(float)
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def shape(self):
        return self.orientation.shape


@dataclass(frozen=True)
class CandidateEntry:
    reference_id: str
    fused_score: float
    minutiae_scores: tuple  # (s_mt1, s_mt2, s_mt3)
    texture_score: float


@dataclass(frozen=True)
class CandidateList:
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        order = sorted(self.entries, key=lambda e: (-e.fused_score, e.reference_id))
        if list(order) != list(self.entries):
            object.__setattr__(self, "entries", tuple(order))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def top(self, k):
        return CandidateList(self.entries[:k])


# ---------------------------------------------------------------------------
# Serialization
#
# Little-endian, length-prefixed sections.  Layout of one template record:
#   magic      4s   b"LFTP"
#   version    u16
#   kind       u8   0 = minutiae template, 1 = texture template
#   source_tag u8
#   stage      u8   descriptor stage of all attached descriptors (255 if none)
#   count      u32  number of minutiae
#   minutiae   count * (f32 x, f32 y, f32 theta, u8 kind)
#   descriptors count * payload  (f32 values or u8 indices by stage)
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sHBBBHI")
_MINUTIA = struct.Struct("<fffB")


def _stage_payload_len(stage: DescriptorStage, n_values: int):
    return n_values if stage is DescriptorStage.QUANTIZED else n_values * 4


def serialize_template(template) -> bytes:
    """Deterministic byte encoding of a minutiae or texture template."""
    if isinstance(template, MinutiaeTemplate):
        kind = 0
        tag = template.source_tag.value
    elif isinstance(template, TextureTemplate):
        kind = 1
        tag = 0
    else:
        raise TypeError(f"cannot serialize {type(template).__name__}")

    descs = template.descriptors
    stage_code = descs[0].stage.value if descs else 255
    n_values = len(descs[0].values) if descs else 0
    out = [_HEADER.pack(MAGIC, FORMAT_VERSION, kind, tag, stage_code, n_values, len(template))]
    for m in template.minutiae:
        out.append(_MINUTIA.pack(np.float32(m.x), np.float32(m.y), np.float32(m.theta), m.kind.value))
    for d in descs:
        if d.stage is not descs[0].stage:
            raise ValueError("mixed descriptor stages in one template")
        out.append(d.values.astype("<f4" if d.stage is not DescriptorStage.QUANTIZED else "u1").tobytes())
    return b"".join(out)


def deserialize_template(data: bytes, offset: int = 0):
    """Inverse of serialize_template; returns (template, next_offset)."""
    magic, version, kind, tag, stage_code, n_values, count = _HEADER.unpack_from(data, offset)
    if magic != MAGIC:
        raise ValueError("bad magic, not a template record")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported template format version {version}")
    pos = offset + _HEADER.size

    minutiae = []
    for _ in range(count):
        x, y, theta, k = _MINUTIA.unpack_from(data, pos)
        pos += _MINUTIA.size
        minutiae.append(Minutia(float(x), float(y), float(wrap_angle(theta)), MinutiaKind(k)))

    descriptors = []
    if stage_code != 255:
        stage = DescriptorStage(stage_code)
        payload = _stage_payload_len(stage, n_values)
        for _ in range(count):
            chunk = data[pos:pos + payload]
            pos += payload
            if stage is DescriptorStage.QUANTIZED:
                values = np.frombuffer(chunk, dtype=np.uint8)
            else:
                values = np.frombuffer(chunk, dtype="<f4")
            descriptors.append(Descriptor(stage, values))
    elif count:
        raise ValueError("template with minutiae but no descriptor stage")

    if kind == 0:
        tpl = MinutiaeTemplate(minutiae, descriptors, SourceTag(tag))
    else:
        tpl = TextureTemplate(minutiae, descriptors)
    return tpl, pos


def serialize_record(templates: Sequence) -> bytes:
    """Concatenate several templates into one file payload.

    A reference record holds (minutiae template, texture template); a latent
    record holds (3 minutiae templates, texture template).
    """
    body = b"".join(serialize_template(t) for t in templates)
    return struct.pack("<4sHI", b"LFRC", FORMAT_VERSION, len(templates)) + body


def deserialize_record(data: bytes):
    magic, version, n = struct.unpack_from("<4sHI", data, 0)
    if magic != b"LFRC":
        raise ValueError("bad magic, not a template file")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported record version {version}")
    pos = struct.calcsize("<4sHI")
    templates = []
    for _ in range(n):
        tpl, pos = deserialize_template(data, pos)
        templates.append(tpl)
    return templates
