import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tracereg.designs import Design, NoiseModel, sample_observations
from tracereg.errors import InvalidParameterError, ShortfallError
from tracereg.linalg import read_matrix
from tracereg.lowerbound import (Packing, PackingConfig, build_packing, kl_condition, kl_gaussian, kl_sign,
                                 largest_gamma, packing_kls, verify_packing)


def gauss_cfg(**kw):
    base = dict(m1=16, m2=8, r=1, n=1000, gamma=0.2, sigma=1.0, a=1.0)
    base.update(kw)
    return PackingConfig(**base)


def test_target_cardinality():
    assert gauss_cfg().target_cardinality == 5
    assert gauss_cfg(m1=16, m2=16, r=2).target_cardinality == 17
    assert gauss_cfg().min_hamming == 2


def test_amplitude_formula():
    cfg = gauss_cfg(sigma=0.5, a=2.0)
    assert cfg.amplitude == pytest.approx(0.2 * 0.5 * math.sqrt(16 * 8 * 1 / (8 * 1000)))
    b = PackingConfig(16, 8, 1, 1000, gamma=0.4, model="bounded", eta=2.0)
    assert b.amplitude == pytest.approx(0.4 * 2.0 * math.sqrt(16 / 1000))


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        gauss_cfg(gamma=0.0)
    with pytest.raises(InvalidParameterError):
        PackingConfig(16, 8, 1, 1000, gamma=0.6, model="bounded")
    with pytest.raises(InvalidParameterError):
        gauss_cfg(n=1, gamma=1.0, a=0.1, sigma=10.0)  # amplitude above a
    with pytest.raises(InvalidParameterError):
        gauss_cfg(r=9)


def test_packing_reference_case():
    p = build_packing(gauss_cfg(), 0)
    assert p.cardinality >= 5
    assert all(verify_packing(p).values())
    assert not np.any(p.matrices[0])  # zero tile sorts first


def test_packing_lexicographic_order():
    p = build_packing(gauss_cfg(m1=16, m2=16, r=2), 3)
    keys = [tuple(t.ravel().tolist()) for t in p.tiles]
    assert keys == sorted(keys)


def test_packing_block_structure():
    cfg = gauss_cfg(m1=8, m2=7, r=2, gamma=0.1)
    p = build_packing(cfg, 1)
    for t, A in zip(p.tiles, p.matrices):
        for k in range(3):
            assert np.array_equal(A[:, 2 * k:2 * k + 2], t * cfg.amplitude)
        assert np.all(A[:, 6:] == 0)


@given(st.integers(0, 10**6), st.sampled_from([(8, 8, 1), (16, 8, 1), (16, 16, 2), (24, 12, 1), (8, 9, 3)]))
def test_packing_invariants(seed, dims):
    m1, m2, r = dims
    p = build_packing(gauss_cfg(m1=m1, m2=m2, r=r, gamma=0.1), seed)
    assert all(verify_packing(p).values())


def test_packing_deterministic():
    a, b = build_packing(gauss_cfg(), 42), build_packing(gauss_cfg(), 42)
    assert np.array_equal(a.tiles, b.tiles)


def test_packing_shortfall():
    cfg = gauss_cfg(m1=32, m2=32, r=2)
    with pytest.raises(ShortfallError) as e:
        build_packing(cfg, 0, max_attempts=3)
    assert e.value.achieved < e.value.target == cfg.target_cardinality


def test_packing_scale_limit():
    with pytest.raises(InvalidParameterError):
        build_packing(gauss_cfg(m1=33, m2=33, r=2), 0)


def test_dump(tmp_path):
    p = build_packing(gauss_cfg(), 0)
    p.dump(tmp_path / "pk")
    idx = json.loads((tmp_path / "pk" / "index.json").read_text())
    assert set(idx) == {"cardinality", "amplitude", "gamma", "min_pairwise_frob_sq"}
    assert idx["cardinality"] == p.cardinality
    files = sorted((tmp_path / "pk").glob("matrix_*.txt"))
    assert len(files) == p.cardinality
    assert np.array_equal(read_matrix(files[1]), p.matrices[1])


# --- KL -------------------------------------------------------------------------

def test_kl_gaussian_basic():
    d = Design.usr(4, 4)
    A = np.random.default_rng(0).standard_normal((4, 4))
    assert kl_gaussian(np.zeros((4, 4)), d, 1.0, 10) == 0
    assert kl_gaussian(2 * A, d, 0.5, 10) == pytest.approx(4 * kl_gaussian(A, d, 0.5, 10))
    assert kl_gaussian(A, d, 0.5, 10) == pytest.approx(10 / (2 * 0.25) * np.sum(A * A) / 16)


def test_kl_gaussian_monte_carlo():
    # per-sample log-likelihood ratio log p0(y)/pA(y) averaged under P0
    m, n, sigma = 3, 5, 1.0
    A = 0.8 * np.random.default_rng(1).standard_normal((m, m))
    d = Design.usr(m, m)
    obs = sample_observations(np.zeros((m, m)), d, NoiseModel.gaussian(sigma), 200000, 2)
    mean = obs.inner_products(A)
    llr = ((obs.y - mean) ** 2 - obs.y**2) / (2 * sigma**2)
    est = n * llr.mean()
    se = n * llr.std() / math.sqrt(llr.size)
    assert abs(est - kl_gaussian(A, d, sigma, n)) <= 3 * se


def test_kl_sign_zero_and_additive():
    r = kl_sign(np.zeros((3, 3)), 1.0, 50)
    assert r.kl == 0 and r.stated_bound == 0 and r.stated_bound_holds
    A = np.full((3, 3), 0.2)
    assert kl_sign(A, 1.0, 100).kl == pytest.approx(2 * kl_sign(A, 1.0, 50).kl)


def test_kl_sign_exact_value():
    # KL(Ber(1/2) || Ber(1/2 + u)) = -log(1 - 4u^2)/2 per sample
    A = np.zeros((2, 2))
    A[0, 0] = 0.4
    u = 0.4 / 2
    assert kl_sign(A, 1.0, 8).kl == pytest.approx(8 * (-0.5 * math.log(1 - 4 * u * u)) / 4, rel=1e-14)


def test_kl_sign_amplitude_condition():
    with pytest.raises(InvalidParameterError):
        kl_sign(np.full((2, 2), 0.6), 1.0, 10)


def test_kl_sign_corrected_bound_holds_on_packings():
    cfg = PackingConfig(16, 8, 1, 1000, gamma=0.5, model="bounded", eta=1.0)
    for A in build_packing(cfg, 0).matrices:
        r = kl_sign(A, 1.0, 1000)
        assert r.corrected_bound_holds


@pytest.mark.xfail(strict=True, reason="the exact sign-model KL is -log(1-4u^2)/2 > 2u^2 for u != 0, "
                                       "so it always exceeds n||A||^2/(2 eta^2) on nonzero elements")
def test_kl_sign_stated_bound_on_packings():
    cfg = PackingConfig(16, 8, 1, 1000, gamma=0.5, model="bounded", eta=1.0)
    for A in build_packing(cfg, 0).matrices:
        assert kl_sign(A, 1.0, 1000).stated_bound_holds


def test_kl_condition_and_largest_gamma():
    p = build_packing(gauss_cfg(), 0)
    g = largest_gamma(p)
    holds, avg, rhs = kl_condition(p.at_gamma(g))
    assert holds and avg == pytest.approx(rhs, rel=1e-9)
    # KL is quadratic in gamma: closed-form check of the root
    k1 = np.sum(packing_kls(p.at_gamma(1.0))) / (p.cardinality - 1)
    assert g == pytest.approx(math.sqrt(math.log(p.cardinality - 1) / 16 / k1), rel=1e-9)
    assert not kl_condition(p.at_gamma(min(1.0, 1.5 * g)))[0]


def test_largest_gamma_bounded_model():
    cfg = PackingConfig(16, 8, 1, 1000, gamma=0.1, model="bounded", eta=1.0)
    p = build_packing(cfg, 0)
    g = largest_gamma(p)
    assert 0 < g <= 0.5 and kl_condition(p.at_gamma(g))[0]


def test_separation_bound_values():
    cfg = gauss_cfg(sigma=0.5, a=2.0)
    assert cfg.separation_bound() == pytest.approx(0.04 / 16 * 0.25 * 128 * 16 / 1000)
    assert cfg.l2_separation_bound() == pytest.approx(cfg.separation_bound() / 128)


def test_packing_object_from_tiles():
    cfg = gauss_cfg()
    tiles = np.zeros((1, 16, 1), dtype=np.int8)
    assert Packing(cfg, tiles, 0).cardinality == 1
