"""Paired-slice datasets: HU windowing, patch extraction, file formats.

Dataset directories hold numbered `.ctf` raw pairs (`0000_full.ctf` /
`0000_low.ctf`, HU-valued) plus a `meta.txt` of key=value provenance.
The raw format is: magic "CTF1", u32 width, u32 height, unit tag u8
(0 = HU, 1 = unit-scaled), then f32 little-endian values, row-major.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError
from .phantom import generate_phantom, rasterize, lesion_boxes
from .projection import (DEFAULT_FOV_MM, fbp_reconstruct, hu_to_mu, mu_to_hu,
                         radon_forward, simulate_lowdose)
from .rng import RngStream

CTF_MAGIC = b"CTF1"
UNIT_TAGS = {"hu": 0, "unit": 1}
UNIT_NAMES = {v: k for k, v in UNIT_TAGS.items()}

# full dose / quarter dose, photons per ray; tuned so quarter-dose pairs land
# in the 20-26 dB PSNR band (see decisions ledger)
DEFAULT_I0_FULL = 1.6e4
DEFAULT_I0_LOW = DEFAULT_I0_FULL / 4.0


@dataclass(frozen=True)
class HUWindow:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"degenerate HU window [{self.lo}, {self.hi}]")

    @property
    def width(self):
        return self.hi - self.lo


TRAIN_WINDOW = HUWindow(-1024.0, 3071.0)
DISPLAY_WINDOW = HUWindow(-160.0, 240.0)


def hu_scale(values, window: HUWindow = TRAIN_WINDOW):
    """HU -> unit interval: clamp((v - lo) / (hi - lo), 0, 1)."""
    v = np.asarray(values, dtype=np.float64)
    return np.clip((v - window.lo) / window.width, 0.0, 1.0)


def hu_unscale(values, window: HUWindow = TRAIN_WINDOW):
    """Unit interval -> HU (inverse of hu_scale on its range)."""
    return window.lo + np.asarray(values, dtype=np.float64) * window.width


@dataclass
class PatchPair:
    x: np.ndarray  # LDCT patch, unit scale
    y: np.ndarray  # NDCT patch, unit scale
    slice_id: str
    offset: tuple  # (row, col) of the top-left corner


def extract_patches(ldct, ndct, size, count, rng: RngStream,
                    slice_id="", lesion_rects=None, lesion_fraction=0.5):
    """Randomly placed aligned patch pairs (identical offsets in both slices).

    With lesion_rects given, at least `lesion_fraction` of the patches are
    placed to intersect a lesion bounding box (chosen round-robin).
    """
    ldct = np.asarray(ldct, dtype=np.float64)
    ndct = np.asarray(ndct, dtype=np.float64)
    if ldct.shape != ndct.shape:
        raise ConfigError(f"slice shapes differ: {ldct.shape} vs {ndct.shape}")
    n = ldct.shape[0]
    if ldct.ndim != 2 or ldct.shape[1] != n:
        raise ConfigError(f"expected square slices, got {ldct.shape}")
    if size > n:
        raise ConfigError(f"patch size {size} exceeds slice size {n}")
    g = rng.generator
    max_off = n - size
    pairs = []
    n_lesion = int(np.ceil(count * lesion_fraction)) if lesion_rects else 0
    for i in range(count):
        if i < n_lesion:
            r0, r1, c0, c1 = lesion_rects[i % len(lesion_rects)]
            # any offset whose patch window intersects the lesion box
            r = int(g.integers(max(0, r0 - size + 1), min(max_off, r1 - 1) + 1))
            c = int(g.integers(max(0, c0 - size + 1), min(max_off, c1 - 1) + 1))
        else:
            r = int(g.integers(0, max_off + 1))
            c = int(g.integers(0, max_off + 1))
        pairs.append(PatchPair(
            x=ldct[r : r + size, c : c + size].copy(),
            y=ndct[r : r + size, c : c + size].copy(),
            slice_id=slice_id, offset=(r, c),
        ))
    return pairs


# ---------------------------------------------------------------------------
# raw slice format

def write_ctf(path, values, unit):
    if unit not in UNIT_TAGS:
        raise ConfigError(f"unit must be one of {sorted(UNIT_TAGS)}, got {unit!r}")
    v = np.asarray(values)
    if v.ndim != 2:
        raise ConfigError(f"slices are 2-D, got shape {v.shape}")
    h, w = v.shape
    with open(path, "wb") as f:
        f.write(CTF_MAGIC)
        f.write(struct.pack("<IIB", w, h, UNIT_TAGS[unit]))
        f.write(v.astype("<f4").tobytes(order="C"))


def read_ctf(path):
    """Returns (values as float64, unit name)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 13 or blob[:4] != CTF_MAGIC:
        raise DataError(f"{path} is not a CTF1 slice file")
    w, h, tag = struct.unpack_from("<IIB", blob, 4)
    if tag not in UNIT_NAMES:
        raise DataError(f"{path} has unknown unit tag {tag}")
    expected = 13 + 4 * w * h
    if len(blob) != expected:
        raise DataError(f"{path} has {len(blob)} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", count=w * h, offset=13)
    return values.reshape(h, w).astype(np.float64), UNIT_NAMES[tag]


def export_png(path, values_hu, window: HUWindow = DISPLAY_WINDOW):
    """8-bit grayscale PNG under a linear display window."""
    unit = hu_scale(values_hu, window)
    gray = np.rint(unit * 255.0).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path, format="PNG")


# ---------------------------------------------------------------------------
# synthetic paired datasets

def make_slice_pair(phantom, n_angles, n_detectors, i0_low, noise_rng,
                    fov_mm=DEFAULT_FOV_MM):
    """(NDCT, LDCT) HU slices for one phantom.

    NDCT is the FBP of the noiseless sinogram; LDCT applies the Poisson
    dose model to the same sinogram before the same FBP, so the pair
    differs only through the photon noise draw.
    """
    n = phantom.grid_size
    spacing = fov_mm / n
    sino = radon_forward(hu_to_mu(rasterize(phantom), spacing), n_angles, n_detectors)
    ndct = mu_to_hu(fbp_reconstruct(sino, n), spacing)
    noisy = simulate_lowdose(sino, i0_low, noise_rng)
    ldct = mu_to_hu(fbp_reconstruct(noisy, n), spacing)
    return ndct, ldct


def default_angles(size):
    return max(64, int(round(0.75 * size)))


def generate_dataset(out_dir, slices, size, seed, i0_full=DEFAULT_I0_FULL,
                     i0_low=None, n_angles=None, n_detectors=None,
                     fov_mm=DEFAULT_FOV_MM, complexity=(4, 10),
                     window: HUWindow = TRAIN_WINDOW):
    """Write `slices` paired HU slices plus meta.txt; fully seed-deterministic."""
    if slices < 1:
        raise ConfigError("dataset needs at least one slice")
    if size < 64:
        raise ConfigError(f"slice size must be >= 64, got {size}")
    i0_low = i0_full / 4.0 if i0_low is None else i0_low
    n_angles = default_angles(size) if n_angles is None else n_angles
    n_detectors = size if n_detectors is None else n_detectors
    os.makedirs(out_dir, exist_ok=True)
    root = RngStream(seed)
    ids = []
    for i in range(slices):
        phantom = generate_phantom(root.stream(f"phantom/{i}"), complexity, size)
        ndct, ldct = make_slice_pair(phantom, n_angles, n_detectors, i0_low,
                                     root.stream(f"noise/{i}"), fov_mm)
        sid = f"{i:04d}"
        write_ctf(os.path.join(out_dir, f"{sid}_full.ctf"), ndct, "hu")
        write_ctf(os.path.join(out_dir, f"{sid}_low.ctf"), ldct, "hu")
        ids.append(sid)
    meta = {
        "seed": seed, "slices": slices, "size": size,
        "n_angles": n_angles, "n_detectors": n_detectors, "fov_mm": fov_mm,
        "i0_full": i0_full, "i0_low": i0_low,
        "window_lo": window.lo, "window_hi": window.hi,
    }
    with open(os.path.join(out_dir, "meta.txt"), "w") as f:
        for key in sorted(meta):
            f.write(f"{key}={meta[key]}\n")
    return ids


def read_meta(dataset_dir):
    path = os.path.join(dataset_dir, "meta.txt")
    if not os.path.isfile(path):
        raise DataError(f"no meta.txt in {dataset_dir}")
    meta = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                meta[key] = value
    return meta


def list_pairs(dataset_dir):
    """Sorted (id, full_path, low_path) triples; both halves must exist."""
    if not os.path.isdir(dataset_dir):
        raise DataError(f"dataset directory {dataset_dir} does not exist")
    ids = sorted(
        name[: -len("_full.ctf")]
        for name in os.listdir(dataset_dir)
        if name.endswith("_full.ctf")
    )
    if not ids:
        raise DataError(f"no *_full.ctf slices in {dataset_dir}")
    out = []
    for sid in ids:
        full = os.path.join(dataset_dir, f"{sid}_full.ctf")
        low = os.path.join(dataset_dir, f"{sid}_low.ctf")
        if not os.path.isfile(low):
            raise DataError(f"slice {sid} has no LDCT half ({low})")
        out.append((sid, full, low))
    return out


def load_patch_arrays(dataset_dir, count, size, rng: RngStream,
                      window: HUWindow = TRAIN_WINDOW, max_slices=None):
    """Unit-scaled training tensors X (LDCT), Y (NDCT) of shape [count,1,size,size].

    Patches are spread across slices round-robin; placement is uniform.
    """
    pairs = list_pairs(dataset_dir)
    if max_slices is not None:
        pairs = pairs[:max_slices]
    per = [count // len(pairs)] * len(pairs)
    for i in range(count - sum(per)):
        per[i] += 1
    xs, ys = [], []
    for (sid, full, low), n_here in zip(pairs, per):
        if n_here == 0:
            continue
        ndct, unit_f = read_ctf(full)
        ldct, unit_l = read_ctf(low)
        if unit_f == "hu":
            ndct = hu_scale(ndct, window)
        if unit_l == "hu":
            ldct = hu_scale(ldct, window)
        for p in extract_patches(ldct, ndct, size, n_here,
                                 rng.stream(f"patches/{sid}"), sid):
            xs.append(p.x)
            ys.append(p.y)
    x = np.stack(xs)[:, None, :, :]
    y = np.stack(ys)[:, None, :, :]
    return x, y
