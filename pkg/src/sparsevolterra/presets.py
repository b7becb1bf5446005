"""Published example systems: four first-order and two second-order atoms each."""

from __future__ import annotations

from .model import AtomicModel, FirstOrderAtom, SecondOrderAtom

EXAMPLE1 = {
    "first_poles": [-0.1375 + 0.2731j, -0.1210 + 0.3591j, 0.7844 + 0.0577j, -0.8890 - 0.2277j],
    "first_coeffs": [1.8969 + 0.0618j, 0.2834 - 0.6773j, 1.9874 - 0.2800j, 0.2142 - 0.0328j],
    "second_poles1": [0.2270 + 0.1086j, 0.4978 - 0.4239j],
    "second_poles2": [0.3591 - 0.6873j, -0.7062 + 0.5511j],
    "second_coeffs": [1.5449 - 1.2369j, 1.7244 - 0.9657j],
    "n_samples": 100,
    "noise_pct": 11.2,
}

EXAMPLE2 = {
    "first_poles": [-0.6019 + 0.2180j, 0.4813 - 0.4971j, 0.1924 - 0.3459j, 0.8084 - 0.0051j],
    "first_coeffs": [-1.9283 - 1.8763j, -1.5213 - 0.0245j, 1.8085 + 1.4509j, 1.9034 - 1.0285j],
    "second_poles1": [0.3966 + 0.6776j, 0.0182 + 0.0431j],
    "second_poles2": [-0.5943 - 0.5600j, 0.5027 + 0.3444j],
    "second_coeffs": [0.5278 + 0.2857j, -1.0269 + 1.9269j],
    "n_samples": 150,
    "noise_pct": 8.0,
}

PRESETS = {"example1": EXAMPLE1, "example2": EXAMPLE2}


def preset_model(name: str, alpha: float = 1.0, beta: float = 1.0) -> AtomicModel:
    try:
        p = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    first = [(FirstOrderAtom(q, alpha), c) for q, c in zip(p["first_poles"], p["first_coeffs"])]
    second = [(SecondOrderAtom(q1, q2, beta), c)
              for q1, q2, c in zip(p["second_poles1"], p["second_poles2"], p["second_coeffs"])]
    return AtomicModel(0.0, first, second)
