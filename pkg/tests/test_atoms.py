import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsevolterra.atoms import (
    AtomCatalog,
    PoleGrid,
    atomic_l1_cost,
    augment_grid,
    build_catalog,
    build_dictionary,
    build_grid,
    canonical_pair,
    complex_coeffs,
    model_coeffs,
    output_dictionary,
    real_coeffs,
)
from sparsevolterra.model import AtomicModel, FirstOrderAtom, SecondOrderAtom, eval_kernels, regression_matrix, stack
from sparsevolterra.presets import EXAMPLE1, preset_model


def small_catalog(seed=0, policy=("sampled", 6)):
    return build_catalog(build_grid(2, 4, 0.3, 0.8), policy, seed=seed)


# -- grids ------------------------------------------------------------------

def test_single_pole_grid():
    g = build_grid(1, 1, 0.5, 0.5)
    np.testing.assert_array_equal(g.poles, [0.5 + 0j])


def test_product_grid():
    g = build_grid(2, 3, 0.4, 0.8)
    want = [r * cmath.exp(1j * th) for r in (0.4, 0.8) for th in (0, math.pi / 2, math.pi)]
    assert len(g) == 6
    np.testing.assert_allclose(g.poles, want, atol=1e-12)
    assert np.all(g.poles.imag >= 0)


def test_large_grid_invariants():
    g = build_grid(8, 16, 0.1, 0.95)
    assert len(g) == 128
    assert np.all(np.abs(g.poles) < 1) and np.all(np.abs(g.poles) >= 0.1 - 1e-12)
    assert np.all(g.poles.imag >= 0)
    d = np.abs(g.poles[:, None] - g.poles[None, :]) + np.eye(128)
    assert d.min() > 1e-12


@pytest.mark.parametrize("args", [(1, 1, 0.5, 1.0), (1, 1, 0.0, 0.5), (0, 2, 0.1, 0.5), (1, 1, 0.6, 0.5)])
def test_grid_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_augment_is_idempotent_and_canonical():
    g = build_grid(2, 3, 0.4, 0.8)
    p = g.poles[1]
    assert len(augment_grid(g, [p])) == len(g)
    assert len(augment_grid(g, [p.conjugate()])) == len(g)
    with pytest.raises(ValueError):
        augment_grid(g, [1.1])


def test_augment_empty_grid_with_example1_poles():
    poles = EXAMPLE1["first_poles"] + EXAMPLE1["second_poles1"] + EXAMPLE1["second_poles2"]
    g = augment_grid(PoleGrid(np.array([], dtype=complex)), poles)
    by_hand = [
        -0.1375 + 0.2731j, -0.1210 + 0.3591j, 0.7844 + 0.0577j, -0.8890 + 0.2277j,
        0.2270 + 0.1086j, 0.4978 + 0.4239j, 0.3591 + 0.6873j, -0.7062 + 0.5511j,
    ]
    np.testing.assert_allclose(g.poles, by_hand, atol=0)


# -- catalogs ---------------------------------------------------------------

def orbit_count(full):
    orbits = {frozenset([(p1, p2), (p1.conjugate(), p2.conjugate())]) for p1 in full for p2 in full}
    return len(orbits)


def test_catalog_single_real_pole():
    cat = build_catalog(build_grid(1, 1, 0.5, 0.5), "all_pairs")
    assert len(cat.first_atoms) == 1 and len(cat.second_atoms) == 1


@pytest.mark.parametrize("poles", [[0.5 + 0j, 0.3 + 0.4j], [0.2 + 0.6j, -0.1 + 0.3j], [0.5, -0.4]])
def test_all_pairs_count_matches_enumeration(poles):
    g = augment_grid(PoleGrid(np.array([], dtype=complex)), poles)
    full = []
    for p in poles:
        full.append(complex(p))
        if complex(p).imag != 0:
            full.append(complex(p).conjugate())
    cat = build_catalog(g, "all_pairs")
    assert len(cat.second_atoms) == orbit_count(full)


def test_canonical_pair_prefers_upper_half():
    q1, q2, flipped = canonical_pair(0.2 - 0.1j, 0.3 + 0.5j)
    assert (q1, q2, flipped) == (0.2 + 0.1j, 0.3 - 0.5j, True)
    assert canonical_pair(0.2 + 0.1j, 0.3 - 0.5j)[2] is False


def test_catalog_is_reproducible():
    a, b = small_catalog(seed=5), small_catalog(seed=5)
    assert a.to_dict() == b.to_dict()
    c = small_catalog(seed=6)
    assert a.to_dict() != c.to_dict()


def test_catalog_default_sampling_size():
    g = build_grid(2, 3, 0.3, 0.8)
    cat = build_catalog(g, "sampled", seed=0)
    assert len(cat.second_atoms) == 4 * len(g)


def test_sampled_rejects_too_many():
    with pytest.raises(ValueError):
        build_catalog(build_grid(1, 1, 0.5, 0.5), ("sampled", 2))


def test_extra_pairs_are_planted_once():
    g = build_grid(1, 2, 0.5, 0.5)
    cat = build_catalog(g, "none", extra_pairs=[(0.3 + 0.2j, 0.1 - 0.5j), (0.3 - 0.2j, 0.1 + 0.5j)])
    assert len(cat.second_atoms) == 1


def test_catalog_dict_round_trip():
    cat = small_catalog()
    assert AtomCatalog.from_dict(cat.to_dict()).to_dict() == cat.to_dict()


# -- dictionaries -----------------------------------------------------------

def test_dictionary_real_pole():
    cat = build_catalog(build_grid(1, 1, 0.5, 0.5), "none")
    d = build_dictionary(cat, 2)
    np.testing.assert_allclose(d.kernel_matrix[:, 0], [0, 2, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(d.kernel_matrix[:, 1], 0)
    assert not d.active[1]
    np.testing.assert_array_equal(d.kernel_matrix[:, 2], [1, 0, 0, 0, 0, 0, 0])


def test_dictionary_imaginary_pole_expansion():
    cat = AtomCatalog([FirstOrderAtom(0.5j)], [])
    d = build_dictionary(cat, 2)
    np.testing.assert_allclose(d.kernel_matrix[1:3, 0], [2, 0])
    np.testing.assert_allclose(d.kernel_matrix[1:3, 1], [0, -1])
    # 2 Re((u + jv) p^k) for u = 0.7, v = -1.3
    u, v = 0.7, -1.3
    want = [2 * ((u + 1j * v) * (0.5j) ** k).real for k in range(2)]
    np.testing.assert_allclose(d.kernel_matrix[1:3, :2] @ [u, v], want)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_dictionary_matches_model_evaluation(seed, L):
    rng = np.random.default_rng(seed)
    cat = small_catalog(seed=seed % 7)
    c = rng.normal(size=cat.n_atoms) + 1j * rng.normal(size=cat.n_atoms)
    w = real_coeffs(c, rng.normal(), cat)
    d = build_dictionary(cat, L)
    model = complex_coeffs(w, cat)
    np.testing.assert_allclose(d.kernel_matrix @ w, stack(eval_kernels(model, L)), atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 30))
def test_output_dictionary_equals_regression_product(seed, L, N):
    cat = small_catalog(seed=seed % 5)
    x = np.random.default_rng(seed).uniform(-1, 1, N)
    np.testing.assert_allclose(
        output_dictionary(cat, x, L), regression_matrix(x, L) @ build_dictionary(cat, L).kernel_matrix,
        atol=1e-11,
    )


# -- coefficient maps and cost ----------------------------------------------

def test_zero_vector_gives_empty_model():
    cat = small_catalog()
    m = complex_coeffs(np.zeros(cat.n_columns), cat)
    assert m.n_atoms == 0 and m.h0 == 0.0


def test_complex_coeffs_rejects_bad_length():
    with pytest.raises(ValueError):
        complex_coeffs(np.zeros(3), small_catalog())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sparse_round_trip(seed):
    rng = np.random.default_rng(seed)
    cat = small_catalog()
    c = np.zeros(cat.n_atoms, dtype=complex)
    idx = rng.choice(cat.n_atoms, size=3, replace=False)
    c[idx] = rng.normal(size=3) + 1j * rng.normal(size=3)
    w = real_coeffs(c, 0.5, cat)
    m = complex_coeffs(w, cat)
    np.testing.assert_array_equal(model_coeffs(m, cat), w)


def test_example1_cost_equals_modulus_sum():
    truth = preset_model("example1")
    coeffs = EXAMPLE1["first_coeffs"] + EXAMPLE1["second_coeffs"]
    direct = sum(abs(c) for c in coeffs)
    assert atomic_l1_cost(real_coeffs(coeffs), AtomCatalog([a for a, _ in truth.first_order],
                                                        [a for a, _ in truth.second_order])) \
        == pytest.approx(direct, abs=1e-12)


def test_cost_examples():
    cat = AtomCatalog([FirstOrderAtom(0.5j)], [])
    assert atomic_l1_cost(np.zeros(3), cat) == 0.0
    assert atomic_l1_cost([3.0, 4.0, 0.0], cat) == pytest.approx(5.0)
    w = np.array([3.0, 4.0, -2.0])
    assert atomic_l1_cost(2.5 * w, cat) == pytest.approx(2.5 * atomic_l1_cost(w, cat))


def test_model_coeffs_handles_conjugated_atoms():
    g = augment_grid(PoleGrid(np.array([], dtype=complex)), [0.3 + 0.4j])
    cat = build_catalog(g, "none", extra_pairs=[(0.3 + 0.4j, 0.3 - 0.4j)])
    m = AtomicModel(0.0, [(FirstOrderAtom(0.3 - 0.4j), 1 + 2j)], [(SecondOrderAtom(0.3 - 0.4j, 0.3 + 0.4j), 0.5 - 1j)])
    w = model_coeffs(m, cat)
    d = build_dictionary(cat, 4)
    np.testing.assert_allclose(d.kernel_matrix @ w, stack(eval_kernels(m, 4)), atol=1e-13)
    with pytest.raises(KeyError):
        model_coeffs(AtomicModel(0.0, [(FirstOrderAtom(0.1), 1)]), cat)
