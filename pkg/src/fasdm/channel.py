"""Geometric multipath channel model for a 2D reconfigurable port surface.

The surface spans ``w1 x w2`` wavelengths and is discretized into an
``n1 x n2`` port grid. A realization is the superposition of a finite
number of plane-wave paths, each with a complex gain and an arrival
direction drawn from a half-sphere in front of the panel.
"""

from __future__ import annotations

import datetime
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"FASDS1"
_DTYPE_TAG = b"f32\x00"


@dataclass(frozen=True)
class FasGeometry:
    """Port grid dimensions and aperture (in carrier wavelengths)."""

    n1: int
    n2: int
    w1: float
    w2: float

    def __post_init__(self):
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError("port counts must be >= 2 along both axes")
        if self.w1 <= 0 or self.w2 <= 0:
            raise ValueError("apertures must be positive")

    @property
    def num_ports(self) -> int:
        return self.n1 * self.n2


@dataclass(frozen=True)
class PathSet:
    """Per-path complex gains and arrival angles (radians)."""

    gains: np.ndarray
    azimuths: np.ndarray
    elevations: np.ndarray

    def __post_init__(self):
        n = len(self.gains)
        if n < 1 or len(self.azimuths) != n or len(self.elevations) != n:
            raise ValueError("gains, azimuths, elevations must share a positive length")
        half = np.pi / 2 + 1e-12
        if np.any(np.abs(self.azimuths) > half) or np.any(np.abs(self.elevations) > half):
            raise ValueError("angles must lie in [-pi/2, pi/2]")

    @property
    def num_paths(self) -> int:
        return len(self.gains)


@dataclass(frozen=True)
class ChannelSample:
    """One channel realization in three synchronized views.

    ``h_mat`` is the complex n1 x n2 port matrix, ``h_flat_complex`` its
    column-major flattening (first axis fastest), and ``h_real`` the real
    embedding [Re; Im] of the flat vector.
    """

    h_mat: np.ndarray
    h_flat_complex: np.ndarray
    h_real: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.h_real)):
            raise ValueError("channel sample contains non-finite entries")

    @classmethod
    def from_matrix(cls, h_mat: np.ndarray) -> "ChannelSample":
        h_mat = np.asarray(h_mat, dtype=np.complex128)
        flat = h_mat.flatten(order="F")
        h_real = np.concatenate([flat.real, flat.imag])
        return cls(h_mat=h_mat, h_flat_complex=flat, h_real=h_real)

    @classmethod
    def from_real(cls, h_real: np.ndarray, geom: FasGeometry) -> "ChannelSample":
        h_real = np.asarray(h_real, dtype=np.float64)
        n = geom.num_ports
        if h_real.shape != (2 * n,):
            raise ValueError(f"expected real vector of length {2 * n}, got {h_real.shape}")
        flat = h_real[:n] + 1j * h_real[n:]
        h_mat = flat.reshape(geom.n1, geom.n2, order="F")
        return cls(h_mat=h_mat, h_flat_complex=flat, h_real=h_real)


def sample_aoa(rng: np.random.Generator) -> tuple[float, float]:
    """Draw one (azimuth, elevation) pair for a scatterer on the front half-sphere.

    Azimuth is uniform on [-pi/2, pi/2]; elevation follows the cosine
    density via the inverse CDF arcsin(2U - 1), so that directions are
    uniform over the half-spherical region in front of the panel.
    """
    theta = rng.uniform(-np.pi / 2, np.pi / 2)
    phi = np.arcsin(2.0 * rng.uniform(0.0, 1.0) - 1.0)
    return theta, phi


def steering_x(theta, phi, geom: FasGeometry) -> np.ndarray:
    """Array response along the x axis for arrival direction (theta, phi)."""
    k = np.arange(geom.n1)
    spacing = geom.w1 / (geom.n1 - 1)
    return np.exp(-2j * np.pi * k * spacing * np.cos(phi) * np.sin(theta))


def steering_y(theta, phi, geom: FasGeometry) -> np.ndarray:
    """Array response along the y axis; depends on elevation only."""
    del theta  # kept in the signature for symmetry with steering_x
    k = np.arange(geom.n2)
    spacing = geom.w2 / (geom.n2 - 1)
    return np.exp(-2j * np.pi * k * spacing * np.sin(phi))


def sample_paths(geom: FasGeometry, num_paths: int, rng: np.random.Generator) -> PathSet:
    """Draw path gains CN(0, 1) and arrival angles for ``num_paths`` paths."""
    if num_paths < 1:
        raise ValueError("num_paths must be >= 1")
    theta = rng.uniform(-np.pi / 2, np.pi / 2, size=num_paths)
    phi = np.arcsin(2.0 * rng.uniform(0.0, 1.0, size=num_paths) - 1.0)
    gains = (rng.standard_normal(num_paths) + 1j * rng.standard_normal(num_paths)) / np.sqrt(2.0)
    return PathSet(gains=gains, azimuths=theta, elevations=phi)


def channel_from_paths(geom: FasGeometry, paths: PathSet) -> ChannelSample:
    """Superpose unit-power paths into an n1 x n2 channel matrix."""
    u = np.cos(paths.elevations) * np.sin(paths.azimuths)
    v = np.sin(paths.elevations)
    k1 = np.arange(geom.n1)
    k2 = np.arange(geom.n2)
    ax = np.exp(-2j * np.pi * (geom.w1 / (geom.n1 - 1)) * u[:, None] * k1[None, :])
    ay = np.exp(-2j * np.pi * (geom.w2 / (geom.n2 - 1)) * v[:, None] * k2[None, :])
    h = np.einsum("p,pi,pj->ij", paths.gains, ax, ay) / np.sqrt(paths.num_paths)
    return ChannelSample.from_matrix(h)


def generate_channel(geom: FasGeometry, num_paths: int, rng: np.random.Generator) -> ChannelSample:
    """Draw one channel realization with ``num_paths`` scattered paths.

    Gains are CN(0, 1) and the 1/sqrt(num_paths) prefactor keeps the
    expected per-port power at exactly 1, so SNR = 1/noise_variance holds
    without further normalization.
    """
    return channel_from_paths(geom, sample_paths(geom, num_paths, rng))


def _write_header(fh, geom: FasGeometry, count: int):
    fh.write(DATASET_MAGIC)
    fh.write(struct.pack("<IIQ", geom.n1, geom.n2, count))
    fh.write(_DTYPE_TAG)


def generate_dataset(geom: FasGeometry, num_paths: int, count: int, seed: int,
                     out_path: str, carrier_ghz: float | None = None) -> str:
    """Generate ``count`` channel realizations and write them to ``out_path``.

    The file is binary little-endian: a fixed header followed by ``count``
    records of 2*n1*n2 float32 values (Re block then Im block of the
    column-major flattening). A JSON sidecar ``<out_path>.json`` records the
    geometry, path count and seed. The write is atomic: on failure no
    partial file is left behind.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    tmp_path = out_path + ".tmp"
    try:
        with open(tmp_path, "wb") as fh:
            _write_header(fh, geom, count)
            for _ in range(count):
                sample = generate_channel(geom, num_paths, rng)
                fh.write(sample.h_real.astype("<f4").tobytes())
        os.replace(tmp_path, out_path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    meta = {
        "geometry": {"n1": geom.n1, "n2": geom.n2, "w1": geom.w1, "w2": geom.w2},
        "num_paths": num_paths,
        "seed": seed,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    if carrier_ghz is not None:
        meta["carrier_ghz"] = carrier_ghz
    with open(out_path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2)
    return out_path


def load_dataset(path: str) -> tuple[np.ndarray, FasGeometry]:
    """Load a dataset file; returns (records of shape (count, 2*N), geometry)."""
    with open(path, "rb") as fh:
        magic = fh.read(6)
        if magic != DATASET_MAGIC:
            raise ValueError(f"not a channel dataset file: bad magic {magic!r}")
        n1, n2, count = struct.unpack("<IIQ", fh.read(16))
        dtype_tag = fh.read(4)
        if dtype_tag != _DTYPE_TAG:
            raise ValueError(f"unsupported dtype tag {dtype_tag!r}")
        body = np.frombuffer(fh.read(), dtype="<f4")
    rec_len = 2 * n1 * n2
    if body.size != count * rec_len:
        raise ValueError("dataset file truncated")
    meta_path = path + ".json"
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            g = json.load(fh)["geometry"]
        geom = FasGeometry(n1=g["n1"], n2=g["n2"], w1=g["w1"], w2=g["w2"])
    else:
        # Sidecar missing: apertures unknown, fall back to half-wavelength spacing.
        geom = FasGeometry(n1=n1, n2=n2, w1=(n1 - 1) / 2, w2=(n2 - 1) / 2)
    return body.reshape(count, rec_len).astype(np.float64), geom
