import numpy as np
import pytest
import scipy.stats

from fasdm.channel import (ChannelSample, FasGeometry, PathSet, channel_from_paths,
                           generate_channel, generate_dataset, load_dataset, sample_aoa,
                           sample_paths, steering_x, steering_y)


class _FixedUniform:
    """rng double returning preset uniform draws in order."""

    def __init__(self, values):
        self.values = list(values)

    def uniform(self, low, high):
        return self.values.pop(0)


def test_geometry_validation():
    with pytest.raises(ValueError):
        FasGeometry(1, 4, 1.0, 1.0)
    with pytest.raises(ValueError):
        FasGeometry(4, 4, 0.0, 1.0)
    assert FasGeometry(4, 5, 1.0, 1.0).num_ports == 20


def test_pathset_validation():
    with pytest.raises(ValueError):
        PathSet(gains=np.ones(2, complex), azimuths=np.zeros(3), elevations=np.zeros(2))
    with pytest.raises(ValueError):
        PathSet(gains=np.ones(1, complex), azimuths=np.array([2.0]), elevations=np.zeros(1))


def test_sample_aoa_midpoint_inverse_cdf():
    # U = 0.5 maps to elevation arcsin(0) = 0
    rng = _FixedUniform([0.3, 0.5])
    _, phi = sample_aoa(rng)
    assert phi == 0.0


def test_sample_aoa_symmetry():
    rng = np.random.default_rng(7)
    phis = np.array([sample_aoa(rng)[1] for _ in range(100_000)])
    assert abs(np.mean(np.sin(phis))) < 0.01
    assert abs(np.mean(phis <= 0) - 0.5) < 0.01


def test_sample_aoa_ks_against_target_density():
    # sin(elevation) must be uniform on [-1, 1]; 1% KS critical value at n=1e5
    rng = np.random.default_rng(11)
    n = 100_000
    phis = sample_paths(FasGeometry(2, 2, 1, 1), n, rng).elevations
    stat = scipy.stats.kstest(np.sin(phis), "uniform", args=(-1.0, 2.0)).statistic
    assert stat < 1.628 / np.sqrt(n)


def test_steering_x_values():
    geom = FasGeometry(3, 2, 1.0, 1.0)
    assert np.allclose(steering_x(0.0, 0.7, geom), np.ones(3))
    assert np.allclose(steering_x(1.1, np.pi / 2, geom), np.ones(3), atol=1e-12)
    # spacing W1/(N1-1) = 0.5 at broadside elevation
    vec = steering_x(np.pi / 2, 0.0, geom)
    assert np.allclose(vec, [1.0, -1.0, 1.0], atol=1e-12)


def test_steering_y_values():
    geom = FasGeometry(2, 2, 1.0, 0.25)
    assert np.allclose(steering_y(0.4, 0.0, geom), np.ones(2))
    assert np.array_equal(steering_y(0.3, 0.8, geom), steering_y(1.1, 0.8, geom))
    vec = steering_y(0.0, np.pi / 2, geom)
    assert np.allclose(vec, [1.0, -1.0j], atol=1e-12)


def test_steering_unit_modulus_and_leading_one():
    geom = FasGeometry(6, 5, 2.3, 1.7)
    rng = np.random.default_rng(3)
    for _ in range(20):
        th, ph = sample_aoa(rng)
        for vec in (steering_x(th, ph, geom), steering_y(th, ph, geom)):
            assert vec[0] == 1.0 + 0.0j
            assert np.allclose(np.abs(vec), 1.0, atol=1e-13)


def test_single_path_channel_is_all_ones():
    geom = FasGeometry(4, 3, 1.0, 1.0)
    paths = PathSet(gains=np.array([1.0 + 0j]), azimuths=np.zeros(1), elevations=np.zeros(1))
    sample = channel_from_paths(geom, paths)
    assert np.allclose(sample.h_mat, np.ones((4, 3)))


def test_single_path_matches_steering_outer_product():
    geom = FasGeometry(5, 4, 1.2, 0.9)
    g, th, ph = 0.3 - 0.8j, 0.5, -0.4
    paths = PathSet(gains=np.array([g]), azimuths=np.array([th]), elevations=np.array([ph]))
    sample = channel_from_paths(geom, paths)
    expected = g * np.outer(steering_x(th, ph, geom), steering_y(th, ph, geom))
    assert np.allclose(sample.h_mat, expected, atol=1e-14)


def test_channel_per_element_power():
    # Monte-Carlo: E|H[u,v]|^2 = 1 under CN(0,1) gains with 1/sqrt(num_paths) prefactor
    geom = FasGeometry(4, 4, 1.0, 1.0)
    rng = np.random.default_rng(5)
    acc = np.zeros((4, 4))
    trials = 10_000
    for _ in range(trials):
        acc += np.abs(generate_channel(geom, 90, rng).h_mat) ** 2
    power = acc / trials
    assert np.all(np.abs(power - 1.0) < 0.05)


def test_channel_sample_views_consistent():
    geom = FasGeometry(3, 4, 1.0, 1.0)
    rng = np.random.default_rng(1)
    sample = generate_channel(geom, 7, rng)
    n = geom.num_ports
    # column-major flattening: x index fastest
    assert sample.h_flat_complex[1] == sample.h_mat[1, 0]
    assert np.array_equal(sample.h_real[:n], sample.h_flat_complex.real)
    assert np.array_equal(sample.h_real[n:], sample.h_flat_complex.imag)
    rebuilt = ChannelSample.from_real(sample.h_real, geom)
    assert np.array_equal(rebuilt.h_mat, sample.h_mat)


def test_channel_sample_rejects_non_finite():
    with pytest.raises(ValueError):
        ChannelSample.from_matrix(np.array([[np.nan + 0j, 1.0], [1.0, 1.0]]))


def test_dataset_deterministic_and_round_trip(tmp_path):
    geom = FasGeometry(4, 4, 1.0, 1.0)
    p1, p2 = str(tmp_path / "a.fasds"), str(tmp_path / "b.fasds")
    generate_dataset(geom, 5, 10, seed=42, out_path=p1)
    generate_dataset(geom, 5, 10, seed=42, out_path=p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()

    records, geom2 = load_dataset(p1)
    assert records.shape == (10, 32)
    assert geom2 == geom
    # records round-trip exactly at f32 precision
    rng = np.random.default_rng(42)
    first = generate_channel(geom, 5, rng).h_real
    assert np.array_equal(records[0], first.astype(np.float32).astype(np.float64))


def test_dataset_record_size_for_51x51(tmp_path):
    # the full-scale grid flattens to 2*2601 scalars per record
    geom = FasGeometry(51, 51, 4.0, 4.0)
    path = str(tmp_path / "big.fasds")
    generate_dataset(geom, 90, 2, seed=0, out_path=path)
    records, _ = load_dataset(path)
    assert records.shape == (2, 2 * 2601)


def test_dataset_bad_magic(tmp_path):
    path = tmp_path / "junk.fasds"
    path.write_bytes(b"NOTADATASET")
    with pytest.raises(ValueError):
        load_dataset(str(path))
