import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dilute_cw.graphs import GraphSample, sample_graph
from dilute_cw.model import (
    CapExceeded,
    ModelParams,
    SpinConfig,
    TwoGroupPartition,
    WeightedLaw,
    bg_log_weight,
    bond_sum,
    constant_obs,
    cw_exact_magnetization_law,
    cw_exact_two_group_law,
    cw_log_weight,
    enumerate_log_weights,
    enumerate_pushforward,
    group_sums,
    magnetization,
    magnetization_obs,
    overlap,
    per_config,
    standardized_magnetization_obs,
    two_group_obs,
    z_cw,
)


def cfg(*spins):
    return SpinConfig.from_spins(spins)


# --- spins and params --------------------------------------------------------------

def test_magnetization_examples():
    assert magnetization(SpinConfig.all_up(4)) == 4
    assert magnetization(cfg(1, -1, 1, -1)) == 0
    assert magnetization(cfg(1, 1, -1)) == 1


def test_overlap_examples():
    c = cfg(1, -1, 1, 1, -1)
    assert overlap(c, c) == 5
    assert overlap(c, -c) == -5
    assert overlap(cfg(1, 1), cfg(1, -1)) == 0


def test_overlap_length_mismatch():
    with pytest.raises(ValueError):
        overlap(cfg(1, 1), cfg(1, 1, 1))


def test_spin_roundtrip():
    spins = [1, -1, -1, 1, 1]
    assert cfg(*spins).spins().tolist() == spins
    with pytest.raises(ValueError):
        cfg(1, 0, 1)


@pytest.mark.parametrize("kwargs", [dict(n=0, beta=0.5), dict(n=3, beta=0.5, p=0.0), dict(n=3, beta=0.5, p=1.5),
                                    dict(n=3, beta=0.5, m=1.0), dict(n=3, beta=1.2, theorem_mode=True)])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        ModelParams(**kwargs)


def test_params_derived():
    p = ModelParams(100, 0.5, p=0.25, m=0.2)
    assert p.coupling == pytest.approx(0.5 / 50)
    assert p.typical_threshold == pytest.approx(100 * 25**0.2)
    assert ModelParams(3, 2.0).beta == 2.0  # exploratory beta allowed outside theorem mode


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 64), st.integers(0, 2**64 - 1))
def test_magnetization_square_is_pair_sum(n, seed):
    x = SpinConfig.random(n, np.random.default_rng(seed)).spins().astype(np.int64)
    s = magnetization(SpinConfig.from_spins(x))
    naive = sum(int(x[i] * x[j]) for i in range(n) for j in range(n))
    assert s * s == naive
    assert -n <= s <= n and (s + n) % 2 == 0


# --- weights -------------------------------------------------------------------------

def test_cw_log_weight_examples():
    p = ModelParams(2, 0.5)
    assert cw_log_weight(p, cfg(1, 1)) == pytest.approx(0.5)
    assert cw_log_weight(p, cfg(1, -1)) == 0.0
    assert cw_log_weight(ModelParams(1, 0.7), cfg(-1)) == pytest.approx(0.35)


def test_bg_log_weight_examples():
    p = ModelParams(2, 0.5, p=0.5)
    g = GraphSample.from_edges(2, [(0, 1)])
    assert bg_log_weight(p, g, cfg(1, 1)) == pytest.approx(0.25)
    for c in range(4):
        assert bg_log_weight(p, GraphSample.empty(2), SpinConfig(2, c)) == 0.0


def test_bg_equals_cw_on_complete_graph():
    p = ModelParams(6, 0.8, p=1.0)
    full = GraphSample.complete(6)
    for c in range(1 << 6):
        x = SpinConfig(6, c)
        assert bg_log_weight(p, full, x) == cw_log_weight(p, x)


def test_bg_dimension_mismatch():
    with pytest.raises(ValueError):
        bg_log_weight(ModelParams(3, 0.5), GraphSample.empty(4), SpinConfig.all_up(3))


def test_bond_sum_matches_definition():
    rng = np.random.default_rng(1)
    adj = rng.random((7, 7)) < 0.4
    g = GraphSample.from_dense(adj)
    for _ in range(20):
        x = SpinConfig.random(7, rng)
        v = x.spins()
        assert bond_sum(g, x) == sum(int(adj[i, j]) * v[i] * v[j] for i in range(7) for j in range(7))


# --- partitions ----------------------------------------------------------------------

def test_group_sums_examples():
    part = TwoGroupPartition.blocks(5, 3, 2)
    assert group_sums(SpinConfig.all_up(5), part) == (3, 2)
    assert group_sums(-SpinConfig.all_up(5), part) == (-3, -2)
    assert group_sums(cfg(1, -1, 1, 1), TwoGroupPartition((0, 1), (2, 3))) == (0, 2)


def test_partition_validation():
    with pytest.raises(ValueError):
        TwoGroupPartition((0, 1), (1, 2))
    with pytest.raises(ValueError):
        TwoGroupPartition((), (1,))
    with pytest.raises(IndexError):
        group_sums(SpinConfig.all_up(3), TwoGroupPartition((0,), (5,)))


def test_partition_fractions():
    part = TwoGroupPartition.from_fractions(10, 0.3, 0.5)
    assert (part.n1, part.n2) == (3, 5)
    assert not part.covers(10)
    assert TwoGroupPartition.from_fractions(11, 0.5, 0.5).covers(11)


# --- exact laws ----------------------------------------------------------------------

def test_z_cw_small():
    b = 0.7
    assert z_cw(ModelParams(1, b)) == pytest.approx(math.log(2 * math.exp(b / 2)), abs=1e-14)
    assert z_cw(ModelParams(2, b)) == pytest.approx(math.log(2 * math.exp(b) + 2), abs=1e-14)


def test_cw_law_small():
    law = cw_exact_magnetization_law(ModelParams(1, 0.9))
    np.testing.assert_allclose(law.probabilities, [0.5, 0.5], atol=1e-15)
    b = 0.6
    law = cw_exact_magnetization_law(ModelParams(2, b))
    p0 = law.probabilities[law.outcomes == 0][0]
    assert p0 == pytest.approx(2 / (2 + 2 * math.exp(b)), abs=1e-15)


@pytest.mark.parametrize("n", [5, 50, 501])
def test_cw_law_normalized_and_symmetric(n):
    law = cw_exact_magnetization_law(ModelParams(n, 0.5))
    assert abs(law.probabilities.sum() - 1) < 1e-12
    np.testing.assert_allclose(law.probabilities, law.probabilities[::-1], rtol=1e-13)


def test_cw_second_moment_n2000():
    law = cw_exact_magnetization_law(ModelParams(2000, 0.5))
    m2 = float(np.dot(law.probabilities, law.outcomes**2)) / 2000
    assert abs(m2 - 2.0) / 2.0 < 0.02


def test_two_group_small_cases():
    law = cw_exact_two_group_law(ModelParams(2, 0.0), TwoGroupPartition.blocks(2, 1))
    np.testing.assert_allclose(law.probabilities, 0.25, atol=1e-15)
    b = 0.8
    law = cw_exact_two_group_law(ModelParams(2, b), TwoGroupPartition.blocks(2, 1))
    idx = np.where((law.outcomes == [1, 1]).all(axis=1))[0][0]
    assert law.probabilities[idx] == pytest.approx(math.exp(b) / (2 * math.exp(b) + 2), abs=1e-15)


def test_two_group_beta_zero_is_product_of_binomials():
    part = TwoGroupPartition.blocks(9, 4, 5)
    law = cw_exact_two_group_law(ModelParams(9, 0.0), part)
    for (s1, s2), pr in zip(law.outcomes.astype(int), law.probabilities):
        expect = math.comb(4, (s1 + 4) // 2) * math.comb(5, (s2 + 5) // 2) / 2**9
        assert pr == pytest.approx(expect, abs=1e-15)


def test_two_group_covariance_n2000():
    part = TwoGroupPartition.blocks(2000, 1000)
    law = cw_exact_two_group_law(ModelParams(2000, 0.5), part)
    cov = law.pushforward(lambda y: y / math.sqrt(1000)).covariance()
    target = np.array([[1.5, 0.5], [0.5, 1.5]])
    assert np.all(np.abs(cov - target) / target < 0.02)


def test_two_group_requires_covering():
    with pytest.raises(ValueError):
        cw_exact_two_group_law(ModelParams(6, 0.5), TwoGroupPartition.blocks(6, 2, 2))


@pytest.mark.parametrize("n", [4, 9, 12])
def test_two_group_marginal_matches_enumeration(n):
    params = ModelParams(n, 0.7)
    part = TwoGroupPartition.blocks(n, n // 3)
    exact = cw_exact_two_group_law(params, part).marginal(0)
    enum = enumerate_pushforward(params, two_group_obs(part, "none")).marginal(0)
    np.testing.assert_allclose(exact.outcomes, enum.outcomes)
    np.testing.assert_allclose(exact.probabilities, enum.probabilities, atol=1e-13)


# --- enumeration ---------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 5, 12, 16])
def test_enumerated_cw_matches_sector_law(n):
    params = ModelParams(n, 0.5)
    enum = enumerate_pushforward(params, standardized_magnetization_obs)
    exact = cw_exact_magnetization_law(params).pushforward(lambda s: s / math.sqrt(n))
    np.testing.assert_allclose(enum.outcomes, exact.outcomes, atol=1e-14)
    np.testing.assert_allclose(enum.probabilities, exact.probabilities, atol=1e-12)


def test_pushforward_p1_identity():
    params = ModelParams(10, 0.5, p=1.0)
    a = enumerate_pushforward(params, magnetization_obs, GraphSample.complete(10))
    b = enumerate_pushforward(params, magnetization_obs)
    np.testing.assert_allclose(a.probabilities, b.probabilities, atol=1e-12)


def test_constant_observable_point_mass():
    law = enumerate_pushforward(ModelParams(6, 0.5), constant_obs(2.5))
    assert law.outcomes.tolist() == [2.5]
    assert law.probabilities[0] == pytest.approx(1.0)


def test_enumerated_bg_weights_match_direct():
    params = ModelParams(8, 0.9, p=0.3)
    g = sample_graph(params, 42)
    lw = enumerate_log_weights(params, g)
    for c in [0, 1, 77, 200, 255]:
        assert lw[c] == pytest.approx(bg_log_weight(params, g, SpinConfig(8, c)), abs=1e-12)


def test_per_config_observable():
    params = ModelParams(5, 0.4)
    a = enumerate_pushforward(params, per_config(lambda x: magnetization(x) ** 2))
    b = enumerate_pushforward(params, magnetization_obs).pushforward(lambda s: s**2)
    np.testing.assert_allclose(a.probabilities, b.probabilities, atol=1e-14)


def test_enumeration_cap():
    with pytest.raises(CapExceeded):
        enumerate_log_weights(ModelParams(25, 0.5))
    with pytest.raises(CapExceeded):
        enumerate_log_weights(ModelParams(10, 0.5), cap=8)


# --- WeightedLaw ---------------------------------------------------------------------

def test_weighted_law_merges_duplicates(tmp_path):
    law = WeightedLaw.from_log_weights(np.array([1.0, 2.0, 1.0]), np.log([1.0, 2.0, 1.0]))
    assert law.outcomes.tolist() == [1.0, 2.0]
    np.testing.assert_allclose(law.probabilities, [0.5, 0.5])
    path = tmp_path / "law.csv"
    law.to_csv(path)
    assert path.read_text().splitlines()[0] == "outcome,probability"
    back = WeightedLaw.from_csv(path)
    np.testing.assert_allclose(back.probabilities, law.probabilities, rtol=1e-16)


def test_weighted_law_2d_csv(tmp_path):
    law = cw_exact_two_group_law(ModelParams(5, 0.3), TwoGroupPartition.blocks(5, 2))
    law.to_csv(tmp_path / "l.csv")
    back = WeightedLaw.from_csv(tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().startswith("outcome_0,outcome_1,probability")
    np.testing.assert_allclose(back.probabilities, law.probabilities, rtol=1e-15)
    np.testing.assert_array_equal(back.outcomes, law.outcomes)


def test_symmetrized_and_cdf():
    law = WeightedLaw.from_log_weights(np.array([-1.0, 1.0, 3.0]), np.log([0.2, 0.5, 0.3]))
    sym = law.symmetrized()
    np.testing.assert_allclose(sym.probabilities, sym.probabilities[::-1])
    pts, cum = law.cdf_breakpoints()
    np.testing.assert_allclose(cum, [0.2, 0.7, 1.0])


def test_enumeration_thread_split_is_invariant():
    from dilute_cw import _kernels

    adj = (np.random.default_rng(3).random((14, 14)) < 0.5).astype(np.int64)
    one = _kernels.all_bond_sums(adj, threads=1)
    many = _kernels.all_bond_sums(adj, threads=3)
    np.testing.assert_array_equal(one, many)
    codes = np.arange(1 << 14)
    x = np.where((codes[:, None] >> np.arange(14)) & 1, 1, -1)
    brute = np.einsum("ci,ij,cj->c", x, adj, x)
    np.testing.assert_array_equal(one, brute)


def test_all_pairs_small_bruteforce():
    # pushforward of (s1, s2) under BG on a fixed graph vs a literal double loop
    params = ModelParams(4, 0.6, p=0.5)
    g = GraphSample.from_edges(4, [(0, 1), (1, 0), (2, 2), (3, 1)])
    part = TwoGroupPartition.blocks(4, 2)
    law = enumerate_pushforward(params, two_group_obs(part, "none"), g)
    acc = {}
    for spins in itertools.product([-1, 1], repeat=4):
        x = SpinConfig.from_spins(spins)
        key = group_sums(x, part)
        acc[key] = acc.get(key, 0.0) + math.exp(bg_log_weight(params, g, x))
    z = sum(acc.values())
    for out, pr in zip(law.outcomes.astype(int), law.probabilities):
        assert pr == pytest.approx(acc[tuple(out)] / z, abs=1e-14)
