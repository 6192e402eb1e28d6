"""Planar arm simulator: kinematics, velocity stepping, grayscale rendering.

Stands in for a physical arm and camera. The arm is a chain of capsule-shaped
links in the image plane; rendering is deterministic and anti-aliased with a
one-pixel edge ramp so that intensity varies smoothly with the joint angles.
Angles are radians internally; pixel coordinates have x along columns and y
along rows.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError

Array = np.ndarray

DEG = np.pi / 180.0
ACTION_BOUND_DEFAULT = 2.0 * DEG  # max per-step joint displacement
BACKLASH_BAND_DEFAULT = 5.0 * DEG


@dataclass(frozen=True)
class BacklashConfig:
    """Actuator dead-band: up to ``band`` radians of a commanded displacement
    is absorbed (uniformly sampled), never reversing the motion direction."""

    band: float = BACKLASH_BAND_DEFAULT


@dataclass(frozen=True)
class ArmModel:
    """Planar arm geometry plus the camera raster it is drawn into."""

    link_lengths: tuple[float, ...]
    link_half_widths: tuple[float, ...]
    end_radius: float
    joint_limits: tuple[tuple[float, float], ...]
    anchor: tuple[float, float]
    image_width: int
    image_height: int

    def __post_init__(self):
        n = len(self.link_lengths)
        if n == 0:
            raise ConfigError("arm needs at least one link")
        if len(self.link_half_widths) != n or len(self.joint_limits) != n:
            raise ConfigError("link_lengths, link_half_widths and joint_limits "
                              "must have equal length")
        if any(l <= 0 for l in self.link_lengths):
            raise ConfigError("link lengths must be positive")
        if any(w <= 0 for w in self.link_half_widths):
            raise ConfigError("link half-widths must be positive")
        if self.end_radius <= 0:
            raise ConfigError("end-effector radius must be positive")
        for lo, hi in self.joint_limits:
            if not lo < hi:
                raise ConfigError(f"joint limit [{lo}, {hi}] must satisfy lo < hi")
        if self.image_width < 1 or self.image_height < 1:
            raise ConfigError("image dimensions must be positive")

    @property
    def joint_count(self) -> int:
        return len(self.link_lengths)

    @property
    def limits_lo(self) -> Array:
        return np.array([lo for lo, _ in self.joint_limits])

    @property
    def limits_hi(self) -> Array:
        return np.array([hi for _, hi in self.joint_limits])

    def to_json(self) -> dict:
        return {
            "link_lengths": list(self.link_lengths),
            "link_half_widths": list(self.link_half_widths),
            "end_radius": self.end_radius,
            "joint_limits": [list(l) for l in self.joint_limits],
            "anchor": list(self.anchor),
            "image_width": self.image_width,
            "image_height": self.image_height,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ArmModel":
        try:
            return cls(
                link_lengths=tuple(data["link_lengths"]),
                link_half_widths=tuple(data["link_half_widths"]),
                end_radius=data["end_radius"],
                joint_limits=tuple(tuple(l) for l in data["joint_limits"]),
                anchor=tuple(data["anchor"]),
                image_width=data["image_width"],
                image_height=data["image_height"],
            )
        except KeyError as exc:
            raise FormatError(f"arm model json missing field {exc}") from exc

    def model_hash(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def default_model(image_width: int = 80, image_height: int = 56) -> ArmModel:
    """Four-joint arm scaled to the raster, anchored at the left center."""
    scale = image_width / 80.0
    limit = (-90.0 * DEG, 90.0 * DEG)
    return ArmModel(
        link_lengths=tuple(l * scale for l in (22.0, 18.0, 12.0, 8.0)),
        link_half_widths=tuple(w * scale for w in (3.2, 2.8, 2.2, 1.8)),
        end_radius=3.4 * scale,
        joint_limits=(limit,) * 4,
        anchor=(8.0 * scale, (image_height - 1) / 2.0),
        image_width=image_width,
        image_height=image_height,
    )


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

def joint_points(model: ArmModel, q: Array) -> Array:
    """Positions of the anchor and each link end, shape (n+1, 2)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (model.joint_count,):
        raise ConfigError(f"expected {model.joint_count} joint angles, got {q.shape}")
    angles = np.cumsum(q)
    pts = np.empty((model.joint_count + 1, 2))
    pts[0] = model.anchor
    steps = np.stack([np.cos(angles), np.sin(angles)], axis=1) \
        * np.asarray(model.link_lengths)[:, None]
    pts[1:] = model.anchor + np.cumsum(steps, axis=0)
    return pts


def end_effector(model: ArmModel, q: Array) -> Array:
    return joint_points(model, q)[-1]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _pixel_grid(model: ArmModel) -> tuple[Array, Array]:
    ys = np.arange(model.image_height, dtype=np.float64)
    xs = np.arange(model.image_width, dtype=np.float64)
    return np.meshgrid(xs, ys)  # (h, w) each


def render_batch(model: ArmModel, qs: Array) -> Array:
    """Render a batch of joint vectors to (K, h, w) float32 images.

    Links are capsules of intensity 1 with a one-pixel linear edge ramp;
    the end effector is a disc. Shapes combine by maximum. Out-of-frame
    geometry simply falls outside the raster.
    """
    qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
    k, n = qs.shape
    if n != model.joint_count:
        raise ConfigError(f"expected {model.joint_count} joints, got {n}")
    gx, gy = _pixel_grid(model)
    img = np.zeros((k, model.image_height, model.image_width))

    angles = np.cumsum(qs, axis=1)                          # (K, n)
    steps = np.stack([np.cos(angles), np.sin(angles)], 2) \
        * np.asarray(model.link_lengths)[None, :, None]     # (K, n, 2)
    pts = np.concatenate(
        [np.broadcast_to(np.asarray(model.anchor), (k, 1, 2)),
         model.anchor + np.cumsum(steps, axis=1)], axis=1)  # (K, n+1, 2)

    for i in range(model.joint_count):
        a = pts[:, i]                                       # (K, 2)
        b = pts[:, i + 1]
        ab = b - a
        len2 = np.maximum(np.sum(ab * ab, axis=1), 1e-12)   # (K,)
        dx = gx[None] - a[:, 0, None, None]
        dy = gy[None] - a[:, 1, None, None]
        t = (dx * ab[:, 0, None, None] + dy * ab[:, 1, None, None]) / len2[:, None, None]
        t = np.clip(t, 0.0, 1.0)
        px = dx - t * ab[:, 0, None, None]
        py = dy - t * ab[:, 1, None, None]
        d = np.sqrt(px * px + py * py)
        alpha = np.clip(model.link_half_widths[i] + 0.5 - d, 0.0, 1.0)
        np.maximum(img, alpha, out=img)

    ex = pts[:, -1, 0, None, None]
    ey = pts[:, -1, 1, None, None]
    d = np.sqrt((gx[None] - ex) ** 2 + (gy[None] - ey) ** 2)
    np.maximum(img, np.clip(model.end_radius + 0.5 - d, 0.0, 1.0), out=img)
    return img.astype(np.float32)


def render(model: ArmModel, q: Array) -> Array:
    """Render one pose to an (h, w) float32 image with values in [0, 1]."""
    return render_batch(model, np.asarray(q)[None])[0]


# ---------------------------------------------------------------------------
# velocity stepping
# ---------------------------------------------------------------------------

def clip_action(a: Array, dt: float, bound: float = ACTION_BOUND_DEFAULT) -> Array:
    """Clamp per-joint displacement ``dt*a`` to [-bound, bound]; returns velocity."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    a = np.asarray(a, dtype=np.float64)
    return np.clip(a * dt, -bound, bound) / dt


def step(model: ArmModel, q: Array, a: Array, dt: float, *,
         bound: float = ACTION_BOUND_DEFAULT,
         backlash: BacklashConfig | None = None,
         rng: np.random.Generator | None = None) -> Array:
    """Advance joints by the clipped displacement, clamped to joint limits."""
    q = np.asarray(q, dtype=np.float64)
    disp = np.clip(np.asarray(a, dtype=np.float64) * dt, -bound, bound)
    if backlash is not None:
        if rng is None:
            raise ConfigError("backlash noise requires an rng")
        absorbed = rng.uniform(0.0, backlash.band, size=q.shape)
        disp = np.sign(disp) * np.maximum(np.abs(disp) - absorbed, 0.0)
    return np.clip(q + disp, model.limits_lo, model.limits_hi)


def clamp_to_limits(model: ArmModel, q: Array) -> Array:
    return np.clip(np.asarray(q, dtype=np.float64), model.limits_lo, model.limits_hi)


# ---------------------------------------------------------------------------
# PGM image io (binary P5, maxval 255, rounding half-up)
# ---------------------------------------------------------------------------

def pgm_bytes(img: Array) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise FormatError(f"PGM export expects a (h, w) image, got {img.shape}")
    raster = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = raster.shape
    return f"P5\n{w} {h}\n255\n".encode() + raster.tobytes()


def write_pgm(img: Array, path) -> None:
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(img))


def read_pgm(path) -> Array:
    """Read a binary P5 file back to float32 intensities in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":  # comment line
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise FormatError(f"{path}: raster truncated ({len(raster)} of {w * h} bytes)")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(h, w)
    return (img.astype(np.float32) / 255.0)
