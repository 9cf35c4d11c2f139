from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advhedge.instruments import (
    BsParams,
    OptionKind,
    OptionSpec,
    bs_delta_european,
    bs_delta_lookback,
    bs_price_european,
    payoff,
)
from oracles import bs_call_quadrature

EURO = OptionSpec()
TAU = 20 / 250


def test_option_spec_validation():
    with pytest.raises(ValueError):
        OptionSpec(strike=0.0)
    with pytest.raises(ValueError):
        OptionSpec(maturity_steps=0)
    assert OptionSpec().maturity_years == pytest.approx(0.08)
    assert OptionSpec("lookback").kind is OptionKind.LOOKBACK


@pytest.mark.parametrize("kind,path,expected", [
    ("european", [1.0, 1.1, 1.2], 0.2),
    ("european", [1.0, 1.1, 0.9], 0.0),
    ("lookback", [1.0, 1.3, 1.1], 0.3),
])
def test_payoff_examples(kind, path, expected):
    spec = OptionSpec(kind, strike=1.0, maturity_steps=2)
    assert payoff(spec, np.array(path)) == pytest.approx(expected)
    assert float(payoff(spec, [np.array([p]) for p in path])[0]) == pytest.approx(expected)


def test_payoff_length_mismatch():
    with pytest.raises(ValueError):
        payoff(OptionSpec(maturity_steps=2), np.array([1.0, 1.1]))


def test_bs_price_zero_vol_atm_is_zero():
    assert bs_price_european(1.0, EURO, BsParams(0.0), TAU) == 0.0
    assert bs_price_european(1.3, EURO, BsParams(0.2), 0.0) == pytest.approx(0.3)


def test_bs_price_deep_in_the_money():
    assert bs_price_european(2.0, EURO, BsParams(1e-8), TAU) == pytest.approx(1.0, abs=1e-12)


def test_bs_price_matches_quadrature():
    got = bs_price_european(1.0, EURO, BsParams(0.2), TAU)
    assert abs(got - bs_call_quadrature(1.0, 1.0, 0.2, TAU)) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.floats(0.7, 1.4), st.floats(0.05, 0.6), st.floats(0.01, 1.0))
def test_bs_price_quadrature_property(spot, sigma, tau):
    got = bs_price_european(spot, EURO, BsParams(sigma), tau)
    assert abs(got - bs_call_quadrature(spot, 1.0, sigma, tau)) <= 1e-6


def test_bs_delta_limits_and_expiry_convention():
    bs = BsParams(0.2)
    assert bs_delta_european(50.0, EURO, bs, TAU) == pytest.approx(1.0)
    assert bs_delta_european(1e-3, EURO, bs, TAU) == pytest.approx(0.0, abs=1e-12)
    assert bs_delta_european(1.1, EURO, bs, 0.0) == 1.0
    assert bs_delta_european(0.9, EURO, bs, 0.0) == 0.0
    assert bs_delta_european(1.0, EURO, bs, 0.0) == 0.5


def test_bs_delta_matches_bump_and_reprice():
    bs, h = BsParams(0.2), 1e-5
    fd = (bs_price_european(1 + h, EURO, bs, TAU) - bs_price_european(1 - h, EURO, bs, TAU)) / (2 * h)
    assert abs(bs_delta_european(1.0, EURO, bs, TAU) - fd) <= 1e-6


def test_bs_vectorized():
    spots = np.array([0.9, 1.0, 1.1])
    prices = bs_price_european(spots, EURO, BsParams(0.2), TAU)
    assert prices.shape == (3,)
    assert np.all(np.diff(prices) > 0)


LOOK = OptionSpec("lookback", strike=1.0, maturity_steps=20)


def test_lookback_delta_zero_at_expiry():
    assert bs_delta_lookback([1.0, 1.2], LOOK, BsParams(0.2), 0.0) == 0.0


def test_lookback_delta_locked_in_payoff():
    # running max 3 is far above both K and spot, one step left
    d = bs_delta_lookback([1.0, 3.0, 1.0], LOOK, BsParams(0.2), LOOK.step_years)
    assert abs(d) < 1e-12


def _lookback_delta_oracle(n_paths, seed, sigma=0.2, steps=20, dt=1 / 250, bump=0.01):
    """Independent CRN central difference on a fresh path (running max = spot)."""
    z = np.random.default_rng(seed).standard_normal((n_paths, steps))
    logs = np.cumsum(sigma * math.sqrt(dt) * z - 0.5 * sigma * sigma * dt, axis=1)
    growth = np.maximum(1.0, np.exp(logs.max(axis=1)))
    up = np.maximum((1 + bump) * growth - 1.0, 0.0)
    down = np.maximum((1 - bump) * growth - 1.0, 0.0)
    q = (up - down) / (2 * bump)
    return q.mean(), q.std() / math.sqrt(n_paths)


def test_lookback_delta_within_monte_carlo_interval():
    got = bs_delta_lookback([1.0], LOOK, BsParams(0.2), LOOK.maturity_years)
    ref, se_ref = _lookback_delta_oracle(1_000_000, seed=99)
    _, se_one = _lookback_delta_oracle(20_000, seed=98)
    assert abs(got - ref) <= 4 * math.hypot(se_ref, se_one)
