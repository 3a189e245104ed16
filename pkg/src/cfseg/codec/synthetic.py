"""Analytic phantom codec and dataset factories.

The phantom is a dark field holding a brighter elliptical "head"; lesions
are elliptical Gaussians added on top.  Every constant below is chosen so
that the fixed pixel-statistics classifier separates the generated classes
with provable margins:

* the head's semi-axes are measured in **half-image units** (an `rx` of
  0.45 is 45 % of the half-width), which keeps the head below ~16 % of
  the pixel area, so the image median always sits on the exterior level;
* the head interior rides ``PLATEAU_LIFT`` above the exterior.  The lift,
  shading depth and texture amplitude are budgeted so that a lesion-free
  image never lifts its 99.5th percentile to within ``CLS_THRESHOLD`` of
  the median, while an `amp >= 0.3` lesion always does, even at the
  smallest generated width.

The classifier reads ``m = p99.5 - median`` and squashes it through a
logistic with slope ``CLS_SLOPE`` around ``CLS_THRESHOLD``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from cfseg.core import (
    CS_DIM,
    ClassLabel,
    ContractError,
    Dataset,
    SampleRecord,
    as_cs_code,
    as_image,
    as_is_code,
)
from cfseg.rng import SplitMix64, derive_seed

IS_DIM = 6
DEFAULT_IMAGE_SHAPE = (64, 64)

# Background rendering constants (see module docstring for the budget).
# The exterior is kept dark enough that no generated lesion saturates a
# pixel: clipping would distort difference maps through their max
# normalization.
EXTERIOR_LEVEL = 0.05
PLATEAU_LIFT = 0.138
SHADE_DEPTH = 0.013  # pixel drop at the head edge per unit of `shade`
TEXTURE_AMP = 0.003  # bound on the additive texture field

# Classifier constants: documented, shared by every test, never tuned
# per fixture.
CLS_PERCENTILE = 99.5
CLS_THRESHOLD = 0.15
CLS_SLOPE = 40.0

# Lesion geometry: rim renders on the band |sqrt(q) - 1| <= RIM_BAND, and
# the ground-truth mask is the full-width-half-maximum set q <= 2 ln 2.
RIM_BAND = 0.15
FWHM_Q = 2.0 * math.log(2.0)

AMP_ABNORMAL = (0.3, 0.8)
AMP_NORMAL_MAX = 0.05  # the gap (0.05, 0.3) is never generated
SIGMA_RANGE = (0.02, 0.12)
ECC_RANGE = (0.5, 2.0)
RIM_RANGE = (0.0, 0.5)
HEAD_CENTER_RANGE = (0.35, 0.65)
HEAD_RADIUS_RANGE = (0.25, 0.45)
SHADE_RANGE = (0.0, 0.3)
# texture_seed is a 32-bit field; draws stay below 2**24 so the value
# survives the 9-significant-digit CSV canonicalization exactly.
TEXTURE_SEED_MAX = 1 << 24

# Resting-state lesion channels for normal records (no lesion is rendered;
# these keep normal codes compact so class structure drives the latent
# geometry, mirroring the tight normal cluster the topology stage must
# recover).  Position defaults to the record's own head center.
CANONICAL_SIGMA = 0.07
CANONICAL_ECC = 1.0
CANONICAL_ANGLE = math.pi / 2.0
CANONICAL_RIM = 0.25
# Jitter half-widths per CS channel.  Sized so the normal cloud is loose
# enough that borderline abnormals fall inside normal neighborhoods in
# the embedding: those samples become the shared members that bridge the
# class regions of the topology graph.
NORMAL_JITTER = (0.0, 0.12, 0.12, 0.032, 0.24, 0.48, 0.24, 0.0)


@dataclass(frozen=True)
class CodecContract:
    cs_dim: int = CS_DIM
    is_dim: int = IS_DIM
    image_shape: tuple[int, int] = DEFAULT_IMAGE_SHAPE

    def __post_init__(self):
        if self.cs_dim != CS_DIM:
            raise ContractError(f"cs_dim is fixed at {CS_DIM}")
        if self.is_dim <= 0:
            raise ContractError("is_dim must be positive")


@dataclass(frozen=True)
class PhantomParams:
    """Identity ("individual style") parameters of one phantom."""

    head_cx: float
    head_cy: float
    head_rx: float
    head_ry: float
    shade: float
    texture_seed: int

    def to_is_code(self) -> np.ndarray:
        return as_is_code(
            [self.head_cx, self.head_cy, self.head_rx, self.head_ry,
             self.shade, float(self.texture_seed)]
        )

    @classmethod
    def from_is_code(cls, is_code) -> "PhantomParams":
        v = as_is_code(is_code, expected_dim=IS_DIM)
        return cls(
            head_cx=float(v[0]), head_cy=float(v[1]),
            head_rx=float(v[2]), head_ry=float(v[3]),
            shade=float(v[4]), texture_seed=int(round(v[5])),
        )


@dataclass(frozen=True)
class LesionParams:
    """Class-related parameters; the 8-D CS code in named form."""

    amp: float
    lx: float
    ly: float
    sigma: float
    ecc: float
    angle: float
    rim: float

    def to_cs_code(self) -> np.ndarray:
        return as_cs_code(
            [self.amp, self.lx, self.ly, self.sigma, self.ecc,
             self.angle, self.rim, 0.0]
        )

    @classmethod
    def from_cs_code(cls, cs) -> "LesionParams":
        v = as_cs_code(cs)
        return cls(amp=float(v[0]), lx=float(v[1]), ly=float(v[2]),
                   sigma=float(v[3]), ecc=float(v[4]), angle=float(v[5]),
                   rim=float(v[6]))


def _texture_field(h: int, w: int, texture_seed: int) -> np.ndarray:
    """Smooth low-frequency texture in [-TEXTURE_AMP, TEXTURE_AMP].

    Seed 0 disables the texture entirely (a flat anatomy).
    """
    if texture_seed == 0:
        return np.zeros((h, w), dtype=np.float64)
    rng = SplitMix64(texture_seed)
    yy = (np.arange(h, dtype=np.float64) + 0.5) / h
    xx = (np.arange(w, dtype=np.float64) + 0.5) / w
    gy, gx = np.meshgrid(yy, xx, indexing="ij")
    tex = np.zeros((h, w), dtype=np.float64)
    for _ in range(3):
        fx = rng.uniform(2.0, 6.0)
        fy = rng.uniform(2.0, 6.0)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        tex += np.sin(2.0 * math.pi * (fx * gx + fy * gy) + phase)
    return tex * (TEXTURE_AMP / 3.0)


def _pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Fractional pixel-center coordinates (x right, y down)."""
    yy = (np.arange(h, dtype=np.float64) + 0.5) / h
    xx = (np.arange(w, dtype=np.float64) + 0.5) / w
    gy, gx = np.meshgrid(yy, xx, indexing="ij")
    return gx, gy


def render_background(phantom: PhantomParams, shape: tuple[int, int]) -> np.ndarray:
    """Lesion-free phantom, float64 in [0, 1]; fully determined by params."""
    h, w = shape
    gx, gy = _pixel_grid(h, w)
    # Half-image radius convention: semi-axis fraction of width = rx / 2.
    ax = phantom.head_rx / 2.0
    ay = phantom.head_ry / 2.0
    r2 = ((gx - phantom.head_cx) / ax) ** 2 + ((gy - phantom.head_cy) / ay) ** 2
    inside = r2 <= 1.0
    bg = np.full((h, w), EXTERIOR_LEVEL, dtype=np.float64)
    interior = (
        EXTERIOR_LEVEL + PLATEAU_LIFT
        - phantom.shade * SHADE_DEPTH * r2
        + _texture_field(h, w, phantom.texture_seed)
    )
    bg[inside] = interior[inside]
    return np.clip(bg, 0.0, 1.0)


def lesion_quadratic_form(lesion: LesionParams, shape: tuple[int, int]) -> np.ndarray:
    """Rotated anisotropic q(x, y); the 1-sigma contour is q == 1.

    Axes are area-preserving in the axis ratio: sigma_a = sigma * sqrt(ecc),
    sigma_b = sigma / sqrt(ecc), both as fractions of image width.
    """
    h, w = shape
    gx, gy = _pixel_grid(h, w)
    dx = (gx - lesion.lx) * w
    dy = (gy - lesion.ly) * w * (h / w)  # fractional y scaled by height
    c, s = math.cos(lesion.angle), math.sin(lesion.angle)
    du = c * dx + s * dy
    dv = -s * dx + c * dy
    root_ecc = math.sqrt(lesion.ecc)
    sa = lesion.sigma * root_ecc * w
    sb = lesion.sigma / root_ecc * w
    return (du / sa) ** 2 + (dv / sb) ** 2


def render_lesion(lesion: LesionParams, shape: tuple[int, int]) -> np.ndarray:
    """Additive lesion term: Gaussian core plus rim on the 1-sigma band."""
    if lesion.amp == 0.0:
        return np.zeros(shape, dtype=np.float64)
    q = lesion_quadratic_form(lesion, shape)
    term = lesion.amp * np.exp(-q / 2.0)
    band = np.abs(np.sqrt(q) - 1.0) <= RIM_BAND
    term[band] += lesion.rim * lesion.amp
    return term


def fwhm_mask(lesion: LesionParams, shape: tuple[int, int]) -> np.ndarray:
    """Ground truth: pixels where the lesion term reaches half its peak."""
    if lesion.amp == 0.0:
        return np.zeros(shape, dtype=np.uint8)
    q = lesion_quadratic_form(lesion, shape)
    return (q <= FWHM_Q).astype(np.uint8)


def _image_key(image: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(image, dtype=np.float32).tobytes()).hexdigest()


def _quantized_key(image: np.ndarray) -> str:
    # Canonical 8-bit form: matches the PGM payload written by the CLI, so
    # registry lookups survive a save/load round trip through files.
    q = np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)
    return hashlib.sha256(q.tobytes()).hexdigest()


class SyntheticRegistry:
    """Write-once map from generated image content to its generating codes.

    Synthetic encode is a lookup, not an inverse solver: only images that
    came out of a dataset factory can be encoded.
    """

    def __init__(self, contract: CodecContract):
        self.contract = contract
        self._by_key: dict[str, int] = {}
        self._ids: list[str] = []
        self._labels: list[ClassLabel] = []
        self._cs: list[np.ndarray] = []
        self._is: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    def add(self, record_id: str, label: ClassLabel, cs, is_code, image: np.ndarray) -> None:
        idx = len(self._ids)
        self._ids.append(record_id)
        self._labels.append(label)
        self._cs.append(as_cs_code(cs))
        self._is.append(as_is_code(is_code, self.contract.is_dim))
        self._by_key[_image_key(image)] = idx
        self._by_key[_quantized_key(image)] = idx

    def lookup(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = self._by_key.get(_image_key(image))
        if idx is None:
            idx = self._by_key.get(_quantized_key(image))
        if idx is None:
            raise ContractError("image is not in the synthetic registry")
        return self._cs[idx], self._is[idx]

    def entry(self, idx: int) -> tuple[str, ClassLabel, np.ndarray, np.ndarray]:
        return self._ids[idx], self._labels[idx], self._cs[idx], self._is[idx]


class SyntheticCodec:
    """Pure, deterministic decode/classify plus registry-backed encode."""

    def __init__(self, contract: CodecContract | None = None,
                 registry: SyntheticRegistry | None = None):
        self.contract = contract or CodecContract()
        self.registry = registry

    def decode(self, cs, is_code) -> np.ndarray:
        cs = as_cs_code(cs)
        is_code = as_is_code(is_code, self.contract.is_dim)
        lesion = LesionParams.from_cs_code(cs)
        phantom = PhantomParams.from_is_code(is_code)
        raw = render_background(phantom, self.contract.image_shape)
        raw += render_lesion(lesion, self.contract.image_shape)
        return as_image(np.clip(raw, 0.0, 1.0).astype(np.float32))

    def background(self, is_code) -> np.ndarray:
        phantom = PhantomParams.from_is_code(as_is_code(is_code, self.contract.is_dim))
        return as_image(render_background(phantom, self.contract.image_shape).astype(np.float32))

    def encode(self, image: np.ndarray,
               registry: SyntheticRegistry | None = None) -> tuple[np.ndarray, np.ndarray]:
        reg = registry or self.registry
        if reg is None:
            raise ContractError("synthetic encode requires a registry")
        return reg.lookup(image)

    def classify(self, image: np.ndarray) -> float:
        """Probability of abnormality from pixel statistics alone."""
        img = np.asarray(image, dtype=np.float64)
        m = float(np.percentile(img, CLS_PERCENTILE)) - float(np.median(img))
        return 1.0 / (1.0 + math.exp(-CLS_SLOPE * (m - CLS_THRESHOLD)))


def _draw_phantom(rng: SplitMix64) -> PhantomParams:
    return PhantomParams(
        head_cx=rng.uniform(*HEAD_CENTER_RANGE),
        head_cy=rng.uniform(*HEAD_CENTER_RANGE),
        head_rx=rng.uniform(*HEAD_RADIUS_RANGE),
        head_ry=rng.uniform(*HEAD_RADIUS_RANGE),
        shade=rng.uniform(*SHADE_RANGE),
        texture_seed=rng.randint(TEXTURE_SEED_MAX),
    )


def _unit_disc_point(rng: SplitMix64) -> tuple[float, float]:
    while True:
        u = rng.uniform(-1.0, 1.0)
        v = rng.uniform(-1.0, 1.0)
        if u * u + v * v <= 1.0:
            return u, v


def _containment_cap(sigma: float, phantom: PhantomParams, width: int) -> float:
    # Keep the lesion core on the head plateau: small lesions must be fully
    # contained so their brightest pixels are not halved by the head edge
    # (that would starve the percentile classifier); wide lesions cannot
    # fit and simply stay near the center.
    r_min_px = min(phantom.head_rx, phantom.head_ry) / 2.0 * width
    cap = 1.0 - (2.5 * sigma * math.sqrt(2.0) * width) / r_min_px
    return min(0.8, max(0.1, cap))


def _draw_abnormal_lesion(rng: SplitMix64, phantom: PhantomParams, width: int) -> LesionParams:
    amp = rng.uniform(*AMP_ABNORMAL)
    sigma = rng.uniform(*SIGMA_RANGE)
    ecc = rng.uniform(*ECC_RANGE)
    angle = rng.uniform(0.0, math.pi)
    rim = rng.uniform(*RIM_RANGE)
    cap = _containment_cap(sigma, phantom, width)
    u, v = _unit_disc_point(rng)
    lx = phantom.head_cx + u * cap * phantom.head_rx / 2.0
    ly = phantom.head_cy + v * cap * phantom.head_ry / 2.0
    return LesionParams(amp=amp, lx=lx, ly=ly, sigma=sigma, ecc=ecc,
                        angle=angle, rim=rim)


def _draw_normal_lesion(rng: SplitMix64, phantom: PhantomParams) -> LesionParams:
    j = [rng.uniform(-1.0, 1.0) * a for a in NORMAL_JITTER]
    return LesionParams(
        amp=0.0,
        lx=phantom.head_cx + j[1],
        ly=phantom.head_cy + j[2],
        sigma=CANONICAL_SIGMA + j[3],
        ecc=CANONICAL_ECC + j[4],
        angle=CANONICAL_ANGLE + j[5],
        rim=CANONICAL_RIM + j[6],
    )


def make_dataset(n_normal: int, n_abnormal: int, seed: int,
                 contract: CodecContract | None = None,
                 split: str = "train",
                 ) -> tuple[Dataset, dict[str, np.ndarray], SyntheticRegistry]:
    """Seeded phantom dataset with FWHM ground-truth masks.

    Records are drawn from independent per-record SplitMix64 streams
    (`derive_seed(seed, index)`), normals first, so identical seeds give
    bit-identical datasets regardless of platform.
    """
    if n_normal < 0 or n_abnormal < 0:
        raise ContractError("record counts must be non-negative")
    contract = contract or CodecContract()
    codec = SyntheticCodec(contract)
    registry = SyntheticRegistry(contract)
    records: list[SampleRecord] = []
    masks: dict[str, np.ndarray] = {}
    shape = contract.image_shape
    total = n_normal + n_abnormal
    for idx in range(total):
        rng = SplitMix64(derive_seed(seed, idx))
        phantom = _draw_phantom(rng)
        label = ClassLabel.NORMAL if idx < n_normal else ClassLabel.ABNORMAL
        if label is ClassLabel.NORMAL:
            lesion = _draw_normal_lesion(rng, phantom)
        else:
            lesion = _draw_abnormal_lesion(rng, phantom, shape[1])
        cs = lesion.to_cs_code()
        is_code = phantom.to_is_code()
        image = codec.decode(cs, is_code)
        mask = fwhm_mask(lesion, shape)
        rid = f"s{idx:04d}"
        records.append(SampleRecord(id=rid, label=label, cs=cs, is_code=is_code,
                                    image=image, gt_mask=mask))
        masks[rid] = mask
        registry.add(rid, label, cs, is_code, image)
    codec.registry = registry
    return Dataset(records=records, split=split), masks, registry


def make_arc_dataset(seed: int = 0,
                     contract: CodecContract | None = None,
                     n_arm: int = 36,
                     n_transition: int = 14,
                     n_ridge: int = 12,
                     n_deep: int = 14,
                     n_branch: int = 54,
                     ) -> tuple[Dataset, dict[str, np.ndarray], SyntheticRegistry]:
    """Curved-manifold scenario for the path-ablation comparison.

    All phantoms share one centered head.  Lesion codes lie on a curve
    parameterized mainly by the orientation channel (the widest code
    dimension), so the embedding lays the data out as a filament whose
    straight chords cut through code combinations no sample occupies:
    positions off the head and severities inside the class gap.  The
    curve runs through four stretches:

    * arm - the abnormal queries: inside the head, severity 0.30-0.42;
    * transition - interleaved class-floor abnormals and normals at the
      head edge: the mixed clusters that connect the class regions;
    * deep end - pure normal codes whose position channel sits far off
      the head: the nearest qualifying goal region (three lone stepping
      samples, too few to form their own cluster, keep it attached);
    * branch - a loose off-curve cloud of wide-profile normal codes
      salted with one class-floor straggler per
      ``branch_straggler_every``: lightly mixed yet still qualifying,
      and never the nearest goal.

    Walking the graph flips on the deep end's near-zero centers; linear
    interpolation toward the same goal leaves the head mid-chord and
    flips while substantial severity remains; a randomly selected
    opposite-class node often carries the branch's wide faint residue.
    """
    contract = contract or CodecContract()
    codec = SyntheticCodec(contract)
    registry = SyntheticRegistry(contract)
    records: list[SampleRecord] = []
    masks: dict[str, np.ndarray] = {}
    shape = contract.image_shape

    head = dict(head_cx=0.5, head_cy=0.5, head_rx=0.4, head_ry=0.4, shade=0.05)
    ray = 0.35 * math.pi  # all positions on one radial ray from the head center

    def emit(tag: str, idx: int, label: ClassLabel, amp: float, rho: float,
             sigma: float, angle: float, rng: SplitMix64, pos_jitter: float,
             loose: float) -> None:
        r = rho + rng.uniform(-pos_jitter, pos_jitter)
        ang_off = rng.uniform(-pos_jitter, pos_jitter)
        lesion = LesionParams(
            amp=amp,
            lx=0.5 + r * math.cos(ray) + ang_off * math.sin(ray),
            ly=0.5 + r * math.sin(ray) - ang_off * math.cos(ray),
            sigma=max(SIGMA_RANGE[0], sigma + rng.uniform(-0.006, 0.006)),
            ecc=1.0 + rng.uniform(-0.5, 0.5) * loose,
            angle=min(math.pi - 1e-9, max(0.0, angle + rng.uniform(-0.6, 0.6) * loose)),
            rim=max(0.0, min(0.5, 0.25 + rng.uniform(-0.5, 0.5) * loose)),
        )
        phantom = PhantomParams(texture_seed=rng.randint(TEXTURE_SEED_MAX), **head)
        cs = lesion.to_cs_code()
        is_code = phantom.to_is_code()
        image = codec.decode(cs, is_code)
        rid = f"{tag}{idx:04d}"
        records.append(SampleRecord(id=rid, label=label, cs=cs, is_code=is_code,
                                    image=image, gt_mask=fwhm_mask(lesion, shape)))
        masks[rid] = records[-1].gt_mask
        registry.add(rid, label, cs, is_code, image)

    idx = 0
    for k in range(n_arm):
        rng = SplitMix64(derive_seed(seed, idx, 0xA5C))
        u = k / max(1, n_arm - 1)
        emit("q", idx, ClassLabel.ABNORMAL,
             amp=0.42 - 0.12 * u, rho=0.10, sigma=0.05,
             angle=0.25 + 0.95 * u, rng=rng, pos_jitter=0.035, loose=0.3)
        idx += 1
    for k in range(n_transition):
        rng = SplitMix64(derive_seed(seed, idx, 0xA5C))
        u = k / max(1, n_transition - 1)
        abnormal = k % 2 == 0
        emit("t", idx,
             ClassLabel.ABNORMAL if abnormal else ClassLabel.NORMAL,
             amp=0.31 if abnormal else 0.0,
             rho=0.15, sigma=0.08, angle=1.2 + 0.35 * u, rng=rng,
             pos_jitter=0.05, loose=0.4)
        idx += 1
    for k in range(n_ridge):
        # Non-qualifying stretch between the head edge and the deep end:
        # one class-floor straggler per four samples keeps these nodes
        # above the goal purity bar while their centers stay faint enough
        # that a walk flipping on them is not disturbed.
        rng = SplitMix64(derive_seed(seed, idx, 0xA5C))
        u = k / max(1, n_ridge - 1)
        straggler = k % 4 == 2
        emit("r", idx,
             ClassLabel.ABNORMAL if straggler else ClassLabel.NORMAL,
             amp=0.31 if straggler else 0.0,
             rho=0.13 if straggler else 0.24 + 0.10 * u,
             sigma=0.05 if straggler else 0.09,
             angle=1.55 + 0.3 * u, rng=rng, pos_jitter=0.04, loose=0.4)
        idx += 1
    for k in range(n_deep):
        rng = SplitMix64(derive_seed(seed, idx, 0xA5C))
        u = k / max(1, n_deep - 1)
        emit("d", idx, ClassLabel.NORMAL,
             amp=0.0, rho=0.42, sigma=0.115, angle=1.85 + 0.3 * u, rng=rng,
             pos_jitter=0.05, loose=0.4)
        idx += 1
    for k in range(n_branch):
        # Diffuse low-grade region: classes interleave with heavy channel
        # jitter, so its clusters mix to a ~0.4 abnormal ratio -- exactly
        # the kind of node a naive random opposite-class choice can hit.
        rng = SplitMix64(derive_seed(seed, idx, 0xA5C))
        straggler = k % 9 in (1, 4, 7, 8)
        emit("b", idx,
             ClassLabel.ABNORMAL if straggler else ClassLabel.NORMAL,
             amp=0.32 if straggler else 0.0,
             rho=0.12 if straggler else 0.30,
             sigma=0.06 if straggler else 0.11,
             angle=2.35 + 0.5 * (k / max(1, n_branch - 1)), rng=rng,
             pos_jitter=0.03 if straggler else 0.10,
             loose=0.7)
        idx += 1
    codec.registry = registry
    return Dataset(records=records, split="test"), masks, registry
