"""Preset run configurations.

Physical presets are given in SI and scaled internally: temperatures by an
ambient temperature ``theta_e``, lengths by the slab thickness and time by the
diffusive time ``rho c L^2 / k``.
"""

from __future__ import annotations

import math

from scipy.optimize import brentq

from .config import RunConfig, parse_config
from .errors import UnknownScenario

STEFAN_BOLTZMANN = 5.67e-8  # W m^-2 K^-4


def decoupled_heat_eigenvalue() -> float:
    """First root of ``tan(l) = 2l/(l^2 - 1)`` (Robin problem with unit coefficients at both ends)."""
    return brentq(lambda l: (l * l - 1) * math.sin(l) - 2 * l * math.cos(l), 0.5, 2.0, xtol=1e-15)


def _stefan_boltzmann() -> dict:
    theta_e = 300.0    # K, ambient temperature used as scale
    length = 0.05      # m
    k_ref = 1.5        # W m^-1 K^-1
    emissivity = 0.8
    absorptivity = 0.8
    gamma_hat = STEFAN_BOLTZMANN * emissivity * theta_e**3 * length / k_ref
    h_hat = STEFAN_BOLTZMANN * absorptivity * theta_e**4 * length / (k_ref * theta_e)
    return {
        "name": "stefan-boltzmann",
        "description": "thermoelectric slab radiating on one face, electrically open (scaled units)",
        "domain": {"lengths": [1.0], "gamma": ["right"], "gamma_n": ["left"]},
        "mesh": {"resolution": [32]},
        "coefficients": {
            "b": {"expression": "1 + 0.2*tanh(e - 1)^2", "lower": 1.0, "upper": 1.2},
            "k": {"expression": "1 + 0.1*tanh(e - 1)", "lower": 0.9, "upper": 1.1},
            "sigma": 0.1,
            "alpha_S": 0.1,
            "Pi": 0.1,
            "gamma": gamma_hat,
            "ell": 5,
            "truncation": 1.0,
            "h": h_hat,
            "g": 0.0,
        },
        "theta0": 1.2,
        "time": {"T": 1.0, "M": 16},
        "scheme": "A",
    }


def _newton_cooling() -> dict:
    biot = 0.5
    return {
        "name": "newton-cooling",
        "description": "linear convective cooling of a thermoelectric bar (scaled units)",
        "domain": {"lengths": [1.0], "gamma": ["right"], "gamma_n": ["left"]},
        "mesh": {"resolution": [32]},
        "coefficients": {
            "b": 1.0, "k": 1.0, "sigma": 0.1, "alpha_S": 0.1, "Pi": 0.1,
            "gamma": biot, "ell": 2, "truncation": 1.0,
            "h": biot * 1.0, "g": 0.0,
        },
        "theta0": {"expression": "1 + 0.5*cos(pi*x)"},
        "time": {"T": 1.0, "M": 16},
        "scheme": "A",
    }


def _decoupled_heat() -> dict:
    lam = decoupled_heat_eigenvalue()
    return {
        "name": "decoupled-heat",
        "description": "pure heat conduction with linear cooling at both ends; exact separable solution",
        "domain": {"lengths": [1.0], "gamma": ["left", "right"], "gamma_n": []},
        "mesh": {"resolution": [64]},
        "coefficients": {
            "b": 1.0, "k": 1.0, "sigma": 1.0, "alpha_S": 0.0, "Pi": 0.0,
            "gamma": 1.0, "ell": 2, "truncation": 0.0, "h": 0.0, "g": 0.0,
        },
        "theta0": {"expression": f"{lam!r}*cos({lam!r}*x) + sin({lam!r}*x)"},
        "time": {"T": 0.5, "M": 32},
        "scheme": "A",
    }


def _stationary() -> dict:
    c = 0.7
    gamma = f"1 + 0.5*tanh(e)^2"
    h = (1 + 0.5 * math.tanh(c) ** 2) * c**4
    return {
        "name": "stationary",
        "description": "constant state balanced by the radiative source; must stay constant",
        "domain": {"lengths": [1.0], "gamma": ["right"], "gamma_n": ["left"]},
        "mesh": {"resolution": [64]},
        "coefficients": {
            "b": {"expression": "1 + e^2/(1 + e^2)", "lower": 1.0, "upper": 2.0},
            "k": {"expression": "1 + 0.1*sin(e)", "lower": 0.9, "upper": 1.1},
            "sigma": {"expression": "0.1 + 0.01*tanh(e)", "lower": 0.09, "upper": 0.11},
            "alpha_S": 0.1, "Pi": 0.1,
            "gamma": {"expression": gamma, "lower": 1.0, "upper": 1.5},
            "ell": 5, "truncation": 1.0, "h": h, "g": 0.0,
        },
        "theta0": c,
        "time": {"T": 1.0, "M": 32},
        "scheme": "A",
        "verification": {"check_estimates": True},
    }


def _coupled_mild() -> dict:
    return {
        "name": "coupled-mild",
        "description": "smooth, weakly coupled bar satisfying both smallness regimes",
        "domain": {"lengths": [1.0], "gamma": ["right"], "gamma_n": ["left"]},
        "mesh": {"resolution": [32]},
        "coefficients": {
            "b": {"expression": "1 + 0.5*tanh(e)^2", "lower": 1.0, "upper": 1.5},
            "k": {"expression": "1 + 0.1*cos(e)", "lower": 0.9, "upper": 1.1},
            "sigma": {"expression": "1 + 0.1*tanh(e)", "lower": 0.9, "upper": 1.1},
            "alpha_S": 0.05, "Pi": 0.05,
            "gamma": 1.0, "ell": 2, "truncation": 0.2,
            "h": {"expression": "0.5*sin(2*t)"}, "g": 0.0,
        },
        "theta0": {"expression": "cos(pi*x)"},
        "time": {"T": 1.0, "M": 16},
        "scheme": "A",
    }


def _thermoelectric_plate() -> dict:
    return {
        "name": "thermoelectric-plate",
        "description": "square plate radiating from its top edge, current driven from left to right",
        "domain": {"lengths": [1.0, 1.0], "gamma": ["top"], "gamma_n": ["left", "right", "bottom"]},
        "mesh": {"resolution": [16, 16]},
        "coefficients": {
            "b": {"expression": "1 + 0.2*tanh(e - 1)^2", "lower": 1.0, "upper": 1.2},
            "k": {"expression": "1 + 0.1*tanh(e - 1)", "lower": 0.9, "upper": 1.1},
            "sigma": {"expression": "1 + 0.1*tanh(e - 1)", "lower": 0.9, "upper": 1.1},
            "alpha_S": 0.05, "Pi": 0.05,
            "gamma": 1.0, "ell": 5, "truncation": 0.2,
            # radiative balance at unit temperature; inflow on the left, outflow on the right
            "h": 1.0, "g": {"expression": "0.2*(1 - 2*x)"},
        },
        "theta0": {"expression": "1 + 0.3*cos(pi*x)*cos(pi*y)"},
        "time": {"T": 0.5, "M": 16},
        "scheme": "A",
    }


_LIBRARY = {
    "stefan-boltzmann": _stefan_boltzmann,
    "newton-cooling": _newton_cooling,
    "decoupled-heat": _decoupled_heat,
    "stationary": _stationary,
    "coupled-mild": _coupled_mild,
    "thermoelectric-plate": _thermoelectric_plate,
}


def scenario_names() -> list:
    return sorted(_LIBRARY)


def scenario_dict(name: str) -> dict:
    try:
        return _LIBRARY[name]()
    except KeyError:
        raise UnknownScenario(f"unknown scenario {name!r}; available: {', '.join(scenario_names())}") from None


def scenario(name: str, strict: bool = True) -> RunConfig:
    """Preset configuration; presets are checked against their smallness regime on load."""
    return parse_config(scenario_dict(name), strict=strict)
