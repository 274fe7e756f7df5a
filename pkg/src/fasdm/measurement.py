"""Port switching, noisy partial observation, and the permutation transforms.

Observing ``m`` RF-chains over ``l`` pilot slots selects ``l*m`` distinct
ports out of ``n1*n2``. Because the selection matrix just picks rows, its
singular decomposition reduces to a permutation that moves the observed
real coordinates to the front; that reordered ("spectral") domain is where
the posterior sampler does its coordinate-wise updates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSample, FasGeometry


@dataclass(frozen=True)
class SwitchSchedule:
    """Which port each RF-chain observes at each pilot slot (l x m)."""

    ports: np.ndarray

    def __post_init__(self):
        ports = np.asarray(self.ports)
        if ports.ndim != 2:
            raise ValueError("ports must be an l x m matrix")
        flat = ports.ravel()
        if len(np.unique(flat)) != flat.size:
            raise ValueError("schedule must observe each port at most once")
        if np.any(flat < 0):
            raise ValueError("negative port index")

    @property
    def l(self) -> int:
        return self.ports.shape[0]

    @property
    def m(self) -> int:
        return self.ports.shape[1]

    @property
    def flat_ports(self) -> np.ndarray:
        """Slot-major list of observed port indices."""
        return self.ports.ravel()


@dataclass(frozen=True)
class SpectralMaps:
    """Permutation placing observed real coordinates first.

    ``perm`` is a gather index array: ``to_spectral(x)[j] = x[perm[j]]``.
    The first ``m_bar`` permuted coordinates are the scheduled ports' Re
    components (slot-major) followed by their Im components; the remaining
    coordinates keep their relative order.
    """

    perm: np.ndarray
    m_bar: int
    n_bar: int
    geom: FasGeometry = field(repr=False)

    def __post_init__(self):
        if sorted(self.perm.tolist()) != list(range(self.n_bar)):
            raise ValueError("perm is not a permutation of 0..n_bar-1")


@dataclass(frozen=True)
class Observation:
    """Noisy real-valued observations at the scheduled ports.

    ``sigma`` is the noise standard deviation per real coordinate, i.e.
    sigma_complex / sqrt(2) for complex noise of variance sigma_complex^2.
    """

    y: np.ndarray
    sigma: float
    schedule: SwitchSchedule

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        expected = 2 * self.schedule.l * self.schedule.m
        if self.y.shape != (expected,):
            raise ValueError(f"observation length {self.y.shape} != {expected}")


def build_schedule(geom: FasGeometry, m: int, l: int, rng: np.random.Generator) -> SwitchSchedule:
    """Draw l*m distinct ports uniformly without replacement."""
    if m < 1 or l < 1:
        raise ValueError("m and l must be positive")
    n = geom.num_ports
    if l * m > n:
        raise ValueError(f"cannot observe {l * m} distinct ports out of {n}")
    ports = rng.choice(n, size=l * m, replace=False).reshape(l, m)
    return SwitchSchedule(ports=ports)


def realify(h_complex: np.ndarray) -> np.ndarray:
    """[Re; Im] stacking of a complex vector."""
    h_complex = np.asarray(h_complex)
    return np.concatenate([h_complex.real, h_complex.imag])


def complexify(h_real: np.ndarray) -> np.ndarray:
    """Inverse of realify; rejects odd-length input."""
    h_real = np.asarray(h_real)
    if h_real.shape[-1] % 2:
        raise ValueError("real vector must have even length")
    k = h_real.shape[-1] // 2
    return h_real[..., :k] + 1j * h_real[..., k:]


def observe(sample: ChannelSample, sched: SwitchSchedule, sigma: float,
            rng: np.random.Generator | None = None) -> Observation:
    """Read the scheduled ports of a channel and add white Gaussian noise.

    The output stacks the Re parts of the observed ports (slot-major) and
    then the matching Im parts, so that it equals the corresponding
    sub-vector of ``sample.h_real``. Noise is i.i.d. N(0, sigma^2) per real
    coordinate. Only scheduled entries of the channel are ever read.
    """
    n = len(sample.h_flat_complex)
    idx = sched.flat_ports
    if np.any(idx >= n):
        raise ValueError("schedule port index out of range for this geometry")
    clean = np.concatenate([sample.h_real[idx], sample.h_real[n + idx]])
    if sigma > 0:
        if rng is None:
            raise ValueError("rng required when sigma > 0")
        clean = clean + sigma * rng.standard_normal(clean.size)
    return Observation(y=clean, sigma=float(sigma), schedule=sched)


def build_spectral_maps(sched: SwitchSchedule, geom: FasGeometry) -> SpectralMaps:
    """Build the permutation that fronts the observed real coordinates."""
    n = geom.num_ports
    idx = sched.flat_ports
    if np.any(idx >= n):
        raise ValueError("schedule port index out of range for this geometry")
    observed = np.concatenate([idx, n + idx])
    mask = np.ones(2 * n, dtype=bool)
    mask[observed] = False
    perm = np.concatenate([observed, np.nonzero(mask)[0]])
    return SpectralMaps(perm=perm, m_bar=observed.size, n_bar=2 * n, geom=geom)


def to_spectral(x: np.ndarray, maps: SpectralMaps) -> np.ndarray:
    """Reorder a real channel vector so observed coordinates come first."""
    x = np.asarray(x)
    if x.shape[-1] != maps.n_bar:
        raise ValueError(f"expected last dimension {maps.n_bar}, got {x.shape}")
    return x[..., maps.perm]


def from_spectral(x_bar: np.ndarray, maps: SpectralMaps) -> np.ndarray:
    """Inverse reordering."""
    x_bar = np.asarray(x_bar)
    if x_bar.shape[-1] != maps.n_bar:
        raise ValueError(f"expected last dimension {maps.n_bar}, got {x_bar.shape}")
    out = np.empty_like(x_bar)
    out[..., maps.perm] = x_bar
    return out


def pad_observation(y: np.ndarray, maps: SpectralMaps) -> np.ndarray:
    """Zero-pad observations up to the full spectral dimension: [y; 0]."""
    y = np.asarray(y)
    if y.shape[-1] != maps.m_bar:
        raise ValueError(f"expected observation length {maps.m_bar}, got {y.shape}")
    pad = np.zeros(y.shape[:-1] + (maps.n_bar - maps.m_bar,), dtype=y.dtype)
    return np.concatenate([y, pad], axis=-1)


def save_schedule(sched: SwitchSchedule, path: str, seed: int | None = None):
    payload = {"l": sched.l, "m": sched.m, "ports": sched.ports.tolist()}
    if seed is not None:
        payload["seed"] = seed
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_schedule(path: str) -> SwitchSchedule:
    with open(path) as fh:
        payload = json.load(fh)
    return SwitchSchedule(ports=np.asarray(payload["ports"], dtype=np.int64))


def save_observation(obs: Observation, path: str, schedule_ref: str):
    """Binary f32 vector plus a JSON sidecar with the noise level."""
    obs.y.astype("<f4").tofile(path)
    with open(path + ".json", "w") as fh:
        json.dump({"sigma": obs.sigma, "schedule_ref": schedule_ref}, fh)


def load_observation(path: str) -> tuple[np.ndarray, float, str]:
    y = np.fromfile(path, dtype="<f4").astype(np.float64)
    with open(path + ".json") as fh:
        meta = json.load(fh)
    return y, float(meta["sigma"]), meta["schedule_ref"]
