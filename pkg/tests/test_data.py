import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparsevolterra.data import (
    Dataset,
    FormatError,
    Metrics,
    add_uniform_noise,
    apply_mask,
    atoms_to_model,
    compute_metrics,
    load_report,
    load_signals,
    match_poles,
    model_to_atoms,
    observed_rows,
    random_mask,
    save_report,
    save_signals,
)
from sparsevolterra.model import AtomicModel, FirstOrderAtom, eval_kernels, simulate
from sparsevolterra.presets import EXAMPLE1, EXAMPLE2, preset_model


def random_dataset(seed, n=30, masked=True):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    clean = rng.normal(size=n)
    noisy, eta = add_uniform_noise(clean, 10.0, seed)
    mask = rng.random(n) > 0.3 if masked else None
    if mask is not None:
        mask[0] = True
    return Dataset(x, noisy, mask, clean, eta, seed, {"tag": "t"})


# -- noise ------------------------------------------------------------------

def test_zero_noise_level():
    clean = np.array([1.0, 2.0, -3.0])
    noisy, eta = add_uniform_noise(clean, 0.0, 1)
    np.testing.assert_array_equal(noisy, clean)
    assert eta == 0.0


def test_noise_half_width_bound():
    clean = np.array([1.0, -1.0, 1.0, -1.0])
    noisy, eta = add_uniform_noise(clean, 50.0, 3)
    assert eta == 0.5
    assert np.all(np.abs(noisy - clean) <= 0.5)


def test_noise_rejects_zero_output_and_negative_level():
    with pytest.raises(ValueError):
        add_uniform_noise(np.zeros(4), 5.0, 0)
    with pytest.raises(ValueError):
        add_uniform_noise(np.ones(4), -1.0, 0)


@pytest.mark.parametrize("seed", range(5))
def test_example1_noise_fills_its_band(seed):
    model = preset_model("example1")
    x = np.random.default_rng(seed).uniform(-1, 1, 100)
    clean = simulate(eval_kernels(model, 100), x)
    noisy, eta = add_uniform_noise(clean, EXAMPLE1["noise_pct"], seed)
    assert eta == pytest.approx(0.112 * np.mean(np.abs(clean)))
    err = np.abs(noisy - clean)
    assert err.max() <= eta
    # P(max of 100 uniforms < 0.9) = 0.9**100 ~ 3e-5
    assert err.max() >= 0.9 * eta


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**63 - 1), st.floats(0.1, 80))
def test_noise_reproducible_and_bounded(seed, level):
    clean = np.linspace(-2, 3, 50)
    a, eta = add_uniform_noise(clean, level, seed)
    b, _ = add_uniform_noise(clean, level, seed)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.abs(a - clean) <= eta)


# -- masks ------------------------------------------------------------------

def test_random_mask_counts():
    m = random_mask(150, 30.0, 4)
    assert m.sum() == 105
    np.testing.assert_array_equal(m, random_mask(150, 30.0, 4))
    assert random_mask(10, 0, 0).all()
    with pytest.raises(ValueError):
        random_mask(10, 100, 0)


def test_apply_mask_and_observed_rows():
    d = random_dataset(0, masked=False)
    assert apply_mask(d, []).mask.all()
    half = apply_mask(d, range(0, 30, 2))
    assert half.n_observed == 15
    X = np.arange(60.0).reshape(30, 2)
    np.testing.assert_array_equal(observed_rows(X, half.mask), X[1::2])
    with pytest.raises(ValueError):
        apply_mask(d, range(30))
    with pytest.raises(ValueError):
        observed_rows(X, np.zeros(30, bool))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        Dataset(np.zeros(3), np.zeros(3), np.zeros(3, bool))


# -- metrics ----------------------------------------------------------------

def test_metrics_identity():
    model = preset_model("example2")
    x = np.random.default_rng(0).uniform(-1, 1, 40)
    d = Dataset(x, simulate(eval_kernels(model, 40), x))
    m = compute_metrics(model, model, d, 40)
    assert m.output_rmse == 0 and m.kernel_h1_rmse == 0 and m.kernel_h2_rmse == 0
    assert all(dist == 0 for _, _, dist in m.pole_match_report)
    assert m.cardinality == 6


def test_metrics_doubled_coefficient_analytic():
    p, c, L = 0.5 + 0.3j, 1.0 - 2.0j, 12
    truth = AtomicModel(0.0, [(FirstOrderAtom(p), c)])
    est = AtomicModel(0.0, [(FirstOrderAtom(p), 2 * c)])
    x = np.random.default_rng(1).uniform(-1, 1, 20)
    m = compute_metrics(truth, est, Dataset(x, np.zeros(20)), L)
    # the difference kernel is 2 Re(c p^k), summed by hand
    diff = [2 * (c * p**k).real for k in range(L)]
    assert m.kernel_h1_rmse == pytest.approx(math.sqrt(sum(v * v for v in diff) / L), rel=1e-12)
    assert m.kernel_h2_rmse == 0


def test_match_poles_canonicalizes_conjugates():
    rep = match_poles([0.3 - 0.4j], [0.3 + 0.4j, -0.5])
    assert rep[0][2] == 0.0
    assert match_poles([0.5], [])[0][2] == math.inf


def test_metrics_ignore_masked_values():
    model = preset_model("example1")
    x = np.random.default_rng(2).uniform(-1, 1, 30)
    clean = simulate(eval_kernels(model, 30), x)
    mask = np.arange(30) % 3 != 0
    a = Dataset(x, clean + 0.0, mask, clean)
    y2 = clean.copy()
    y2[~mask] = 99.0
    b = Dataset(x, y2, mask, clean)
    est = preset_model("example2")
    assert compute_metrics(model, est, a, 30).to_dict() == compute_metrics(model, est, b, 30).to_dict()


# -- files ------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_signals_round_trip(tmp_path, seed):
    d = random_dataset(seed)
    path = tmp_path / "s.csv"
    save_signals(path, d)
    back = load_signals(path)
    np.testing.assert_array_equal(back.input, d.input)
    np.testing.assert_array_equal(back.mask, d.mask)
    np.testing.assert_array_equal(back.output_noisy[d.mask], d.output_noisy[d.mask])
    np.testing.assert_array_equal(back.output_clean, d.output_clean)
    assert back.eta_max == d.eta_max and back.seed == d.seed and back.meta == d.meta


def test_csv_missing_y_means_unobserved(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("t,x,y,mask\n0,1.0,2.0,1\n1,0.5,,0\n2,0.25,,\n")
    d = load_signals(path)
    np.testing.assert_array_equal(d.mask, [True, False, False])
    assert d.output_noisy[0] == 2.0


@pytest.mark.parametrize("body,line", [("0,1.0,abc,1\n", 2), ("0,1.0,2.0,1\n1,0.5\n", 3)])
def test_csv_malformed_row_names_line(tmp_path, body, line):
    path = tmp_path / "s.csv"
    path.write_text("t,x,y,mask\n" + body)
    with pytest.raises(FormatError, match=f"line {line}"):
        load_signals(path)


def test_csv_bad_header_and_empty(tmp_path):
    (tmp_path / "a.csv").write_text("a,b\n1,2\n")
    (tmp_path / "b.csv").write_text("")
    for name in ("a.csv", "b.csv"):
        with pytest.raises(FormatError):
            load_signals(tmp_path / name)


def test_report_round_trip_and_unknown_fields(tmp_path):
    model = preset_model("example1")
    report = {"solver": "l1", "config": {}, "grid": {}, "atoms": model_to_atoms(model), "h0": 0.25,
              "metrics": None, "trace": [1.0, 0.5], "seed": 3, "future_field": {"x": 1},
              "truth": {"atoms": model_to_atoms(preset_model("example2")), "h0": 0.0}}
    path = tmp_path / "r.json"
    save_report(path, report)
    back = load_report(path)
    assert back["future_field"] == {"x": 1}
    x = np.random.default_rng(0).uniform(-1, 1, 50)
    model.h0 = 0.25
    np.testing.assert_allclose(simulate(eval_kernels(back["model"], 50), x),
                               simulate(eval_kernels(model, 50), x), rtol=0, atol=1e-12)
    assert back["truth_model"].n_atoms == 6


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(0.05, 0.95), st.floats(-3.1, 3.1), st.floats(-5, 5), st.floats(-5, 5)),
                min_size=1, max_size=5))
def test_atom_json_round_trip_is_exact(atoms):
    first = [(FirstOrderAtom(complex(r * math.cos(a), r * math.sin(a))), complex(u, v)) for r, a, u, v in atoms]
    model = AtomicModel(0.0, first)
    text = json.dumps(model_to_atoms(model))
    back = atoms_to_model(json.loads(text))
    for (a1, c1), (a2, c2) in zip(model.first_order, back.first_order):
        assert a1.pole == a2.pole and c1 == c2


def test_report_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    (tmp_path / "short.json").write_text("{}")
    with pytest.raises(FormatError):
        load_report(tmp_path / "bad.json")
    with pytest.raises(FormatError):
        load_report(tmp_path / "short.json")
    with pytest.raises(FormatError):
        atoms_to_model([{"kind": "third", "poles": [[0.1, 0]], "coeff": [1, 0]}])


def test_metrics_dict_round_trip():
    m = Metrics(0.1, 0.2, 0.3, 0.4, 5, [(0.5 + 0.1j, 0.4 + 0.1j, 0.1), (0.2 + 0j, None, math.inf)])
    assert Metrics.from_dict(json.loads(json.dumps(m.to_dict()))) == m


# -- presets ----------------------------------------------------------------

def test_presets_hold_published_values():
    assert EXAMPLE1["first_poles"] == [-0.1375 + 0.2731j, -0.1210 + 0.3591j, 0.7844 + 0.0577j, -0.8890 - 0.2277j]
    assert EXAMPLE1["first_coeffs"] == [1.8969 + 0.0618j, 0.2834 - 0.6773j, 1.9874 - 0.2800j, 0.2142 - 0.0328j]
    assert EXAMPLE1["second_poles1"] == [0.2270 + 0.1086j, 0.4978 - 0.4239j]
    assert EXAMPLE1["second_poles2"] == [0.3591 - 0.6873j, -0.7062 + 0.5511j]
    assert EXAMPLE1["second_coeffs"] == [1.5449 - 1.2369j, 1.7244 - 0.9657j]
    assert EXAMPLE2["first_poles"] == [-0.6019 + 0.2180j, 0.4813 - 0.4971j, 0.1924 - 0.3459j, 0.8084 - 0.0051j]
    assert EXAMPLE2["first_coeffs"] == [-1.9283 - 1.8763j, -1.5213 - 0.0245j, 1.8085 + 1.4509j, 1.9034 - 1.0285j]
    assert EXAMPLE2["second_poles1"] == [0.3966 + 0.6776j, 0.0182 + 0.0431j]
    assert EXAMPLE2["second_poles2"] == [-0.5943 - 0.5600j, 0.5027 + 0.3444j]
    assert EXAMPLE2["second_coeffs"] == [0.5278 + 0.2857j, -1.0269 + 1.9269j]
    assert (EXAMPLE1["n_samples"], EXAMPLE1["noise_pct"]) == (100, 11.2)
    assert (EXAMPLE2["n_samples"], EXAMPLE2["noise_pct"]) == (150, 8.0)
