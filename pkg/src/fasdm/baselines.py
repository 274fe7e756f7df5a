"""Compressed-sensing reference estimators: greedy pursuit and sparse Bayes.

Both operate in the complex domain on a dictionary of candidate basis
vectors; the row-selected dictionary acts as the sensing matrix. Results
convert to the shared real vector convention only at the interface.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .channel import ChannelSample, FasGeometry
from .measurement import Observation, complexify


@dataclass(frozen=True)
class Dictionary:
    """Complex atom matrix (ports x atoms) with its construction metadata."""

    atoms: np.ndarray
    kind: str
    geom: FasGeometry
    grid: int | None = None

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[1]


@dataclass
class OmpResult:
    estimate: ChannelSample
    support: list
    coeffs: np.ndarray
    residual_norms: list


@dataclass
class SblResult:
    estimate: ChannelSample
    mu: np.ndarray
    gamma: np.ndarray
    objective_history: list = field(default_factory=list)
    iterations: int = 0


def build_dft_dictionary(geom: FasGeometry) -> Dictionary:
    """Unitary 2D Fourier basis consistent with column-major flattening."""
    f1 = scipy.linalg.dft(geom.n1) / np.sqrt(geom.n1)
    f2 = scipy.linalg.dft(geom.n2) / np.sqrt(geom.n2)
    return Dictionary(atoms=np.kron(f2, f1), kind="dft2d", geom=geom)


def build_angle_dictionary(geom: FasGeometry, g_per_axis: int) -> Dictionary:
    """Steering atoms on a uniform directional-cosine grid over [-1, 1]^2.

    The two cosines (cos(elevation)sin(azimuth) along x, sin(elevation)
    along y) each take g_per_axis values; atoms are unit-norm vectorized
    outer products, yielding an overcomplete g^2-column dictionary.
    """
    if g_per_axis < 1:
        raise ValueError("g_per_axis must be >= 1")
    u = np.linspace(-1.0, 1.0, g_per_axis)
    kx = np.arange(geom.n1)[:, None]
    ky = np.arange(geom.n2)[:, None]
    ax = np.exp(-2j * np.pi * kx * (geom.w1 / (geom.n1 - 1)) * u[None, :])
    ay = np.exp(-2j * np.pi * ky * (geom.w2 / (geom.n2 - 1)) * u[None, :])
    atoms = np.kron(ay, ax) / np.sqrt(geom.num_ports)
    return Dictionary(atoms=atoms, kind="angle_grid", geom=geom, grid=g_per_axis)


def _sensing_matrix(obs: Observation, dictionary: Dictionary) -> tuple[np.ndarray, np.ndarray]:
    ports = obs.schedule.flat_ports
    if np.any(ports >= dictionary.geom.num_ports):
        raise ValueError("schedule ports out of range for the dictionary geometry")
    return dictionary.atoms[ports, :], complexify(obs.y)


def omp_estimate(obs: Observation, dictionary: Dictionary, k: int | None = None) -> OmpResult:
    """Greedy sparse recovery with exact least-squares refit per iteration.

    Runs exactly ``k`` iterations when the path count is known; otherwise
    stops once the residual falls below sigma * sqrt(2*l*m). A
    rank-deficient refit drops the newly added atom with a warning.
    """
    phi, y = _sensing_matrix(obs, dictionary)
    if k is not None and k < 0:
        raise ValueError("k must be nonnegative")
    threshold = None if k is not None else obs.sigma * np.sqrt(obs.y.size)
    max_iters = k if k is not None else phi.shape[0]

    support: list[int] = []
    banned: set[int] = set()
    coeffs = np.zeros(0, dtype=np.complex128)
    residual = y.copy()
    residual_norms = [float(np.linalg.norm(residual))]

    while len(support) < max_iters:
        if threshold is not None and residual_norms[-1] <= threshold:
            break
        corr = np.abs(phi.conj().T @ residual)
        corr[support] = -np.inf
        if banned:
            corr[list(banned)] = -np.inf
        best = int(np.argmax(corr))
        if not np.isfinite(corr[best]):
            break
        support.append(best)
        sub = phi[:, support]
        sol, _, rank, _ = np.linalg.lstsq(sub, y, rcond=None)
        if rank < len(support):
            warnings.warn("rank-deficient active set; dropping atom %d" % best)
            support.pop()
            banned.add(best)
            continue
        coeffs = sol
        residual = y - sub @ coeffs
        residual_norms.append(float(np.linalg.norm(residual)))

    h = np.zeros(dictionary.geom.num_ports, dtype=np.complex128)
    if support:
        h = dictionary.atoms[:, support] @ coeffs
    est = ChannelSample.from_matrix(h.reshape(dictionary.geom.n1, dictionary.geom.n2, order="F"))
    return OmpResult(estimate=est, support=support, coeffs=coeffs, residual_norms=residual_norms)


def _chol_solve_with_jitter(c: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky solve of a Hermitian system, retried once with a tiny ridge."""
    for jitter in (0.0, 1e-10):
        try:
            cho = scipy.linalg.cho_factor(c + jitter * np.eye(c.shape[0]), lower=True)
            logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(cho[0])))))
            return scipy.linalg.cho_solve(cho, rhs), logdet
        except scipy.linalg.LinAlgError:
            continue
    raise RuntimeError("covariance solve failed even with ridge stabilization")


def sbl_posterior(phi: np.ndarray, y: np.ndarray, gamma: np.ndarray,
                  noise_var: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Posterior mean/variance-diagonal of the coefficients for fixed precisions.

    Uses the measurement-space covariance C = noise_var*I + Phi Gamma Phi^H,
    so vanishing prior variances stay well conditioned. Also returns the
    marginal log-likelihood used to monitor the EM iterations.
    """
    pg = phi * gamma[None, :]
    c = noise_var * np.eye(phi.shape[0], dtype=np.complex128) + pg @ phi.conj().T
    solved, logdet = _chol_solve_with_jitter(c, np.column_stack([y, pg]))
    c_inv_y = solved[:, 0]
    c_inv_pg = solved[:, 1:]
    mu = pg.conj().T @ c_inv_y
    sigma_diag = np.maximum(gamma - np.real(np.sum(pg.conj() * c_inv_pg, axis=0)), 0.0)
    loglik = -logdet - float(np.real(y.conj() @ c_inv_y))
    return mu, sigma_diag, loglik


def sbl_estimate(obs: Observation, dictionary: Dictionary, noise_var: float,
                 max_iter: int = 500, tol: float = 1e-4) -> SblResult:
    """Sparse Bayesian recovery with expectation-maximization precision updates.

    Each iteration computes the Gaussian posterior of the coefficients
    under the current per-atom prior variances, then re-estimates every
    variance as |mean|^2 + posterior variance. Stops when the largest
    relative variance change drops below ``tol``.
    """
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    phi, y = _sensing_matrix(obs, dictionary)
    gamma = np.ones(dictionary.num_atoms)
    mu = np.zeros(dictionary.num_atoms, dtype=np.complex128)
    history: list[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mu, sigma_diag, loglik = sbl_posterior(phi, y, gamma, noise_var)
        history.append(loglik)
        new_gamma = np.maximum(np.abs(mu) ** 2 + sigma_diag, 1e-16)
        rel_change = float(np.max(np.abs(new_gamma - gamma) / np.maximum(gamma, 1e-16)))
        gamma = new_gamma
        if rel_change < tol:
            break
    h = dictionary.atoms @ mu
    est = ChannelSample.from_matrix(h.reshape(dictionary.geom.n1, dictionary.geom.n2, order="F"))
    return SblResult(estimate=est, mu=mu, gamma=gamma, objective_history=history,
                     iterations=iterations)
