import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_prox
from structcal.penalties import (
    Family,
    Group,
    PenaltySpec,
    effective_weights,
    mcp_unit,
    penalty_value,
    prox,
)

FAMILIES = [f.value for f in Family]


class TestEffectiveWeights:
    def test_defaults(self):
        w = effective_weights(PenaltySpec(), k=3, n_cal=100)
        assert w[Group.INTERCEPT].effective_weight == pytest.approx(0.03)
        assert w[Group.DIAGONAL].effective_weight == pytest.approx(0.03)
        assert w[Group.OFF_DIAGONAL].effective_weight == pytest.approx(0.06)
        assert [w[g].size for g in Group] == [3, 3, 6]

    def test_zero_exponents(self):
        w = effective_weights(PenaltySpec(rho=0, tau=0), k=7, n_cal=123)
        assert all(gw.effective_weight == 1.0 for gw in w.values())

    def test_zero_multiplier(self):
        for k, n in ((2, 1), (10, 1000)):
            w = effective_weights(PenaltySpec(lambda_M=0.0), k=k, n_cal=n)
            assert w[Group.OFF_DIAGONAL].effective_weight == 0.0

    def test_no_alpha_group(self):
        assert set(effective_weights(PenaltySpec(), 4, 10)) == set(Group)

    def test_rejects(self):
        with pytest.raises(ValueError):
            effective_weights(PenaltySpec(), k=3, n_cal=0)
        with pytest.raises(ValueError):
            effective_weights(PenaltySpec(), k=1, n_cal=10)
        with pytest.raises(ValueError):
            PenaltySpec(lambda_b=-1.0)
        with pytest.raises(ValueError):
            PenaltySpec(mcp_gamma=1.0)

    def test_monotone(self):
        base = PenaltySpec(rho=0.5, tau=0.7)
        ref = effective_weights(base, 4, 100)
        more_lambda = effective_weights(PenaltySpec(rho=0.5, tau=0.7, lambda_b=2, lambda_v=2, lambda_M=2), 4, 100)
        more_k = effective_weights(base, 6, 100)
        more_n = effective_weights(base, 4, 400)
        for g in Group:
            assert more_lambda[g].effective_weight >= ref[g].effective_weight
            assert more_k[g].effective_weight >= ref[g].effective_weight
            assert more_n[g].effective_weight <= ref[g].effective_weight

    def test_round_trip(self):
        spec = PenaltySpec(family="mcp", rho=0.5, tau=2.0, lambda_M=3.0)
        assert PenaltySpec.from_dict(spec.to_dict()) == spec
        assert spec.to_dict()["family"] == "mcp"


class TestPenaltyValue:
    def test_examples(self):
        assert penalty_value("ridge", [1, -2], 0.5) == pytest.approx(2.5)
        assert penalty_value("group-lasso", [3, 4], 1.0) == pytest.approx(5.0)
        assert penalty_value("lasso", [3, -4], 0.5) == pytest.approx(3.5)
        for weight in (0.0, 1.0, 7.0):
            assert penalty_value("mcp", [0.0], weight) == 0.0

    def test_mcp_shape(self):
        np.testing.assert_allclose(mcp_unit(np.array([0.0, 1.0, 3.0, 10.0]), 3.0),
                                   [0.0, 1 - 1 / 6, 1.5, 1.5])

    @settings(max_examples=80, deadline=None)
    @given(st.sampled_from(FAMILIES), arrays(np.float64, 4, elements=st.floats(-5, 5)),
           st.floats(1e-3, 10))
    def test_nonnegative_and_zero_only_at_origin(self, family, w, weight):
        val = penalty_value(family, w, weight)
        assert val >= 0
        assert (val == 0) == bool(np.all(w == 0)) or abs(val) < 1e-300

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            penalty_value("ridge", [1.0], -1.0)


class TestProx:
    def test_examples(self):
        assert prox("ridge", 2.0, 0.5) == pytest.approx(1.0)
        assert prox("lasso", 3.0, 1.0) == pytest.approx(2.0)
        assert prox("lasso", 0.5, 1.0) == 0.0
        np.testing.assert_array_equal(prox("group-lasso", [3.0, 4.0], 10.0), [0.0, 0.0])
        np.testing.assert_array_equal(prox("group-lasso", [0.0, 0.0], 1.0), [0.0, 0.0])

    def test_mcp_regions(self):
        # s < gamma: rescaled soft threshold inside [-gamma, gamma], identity beyond
        np.testing.assert_allclose(prox("mcp", [0.5, 2.0, 4.0], 1.0), [0.0, 1.5, 4.0])
        # s >= gamma: hard threshold at sqrt(s * gamma) = sqrt(12)
        np.testing.assert_allclose(prox("mcp", [3.4, 3.5, -4.0], 4.0), [0.0, 3.5, -4.0])

    def test_rejects_negative_step(self):
        with pytest.raises(ValueError):
            prox("lasso", [1.0], -0.1)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(123)
        for trial in range(60):
            family = FAMILIES[trial % 4]
            z = rng.normal(scale=3.0, size=3)
            s = float(rng.choice([rng.uniform(0, 0.5), rng.uniform(0.5, 2.5), rng.uniform(3.2, 6)]))
            got = prox(family, z, s)
            ref = brute_prox(family, z, s)
            np.testing.assert_allclose(got, ref, atol=1e-8, err_msg=f"{family} z={z} s={s}")

    @settings(max_examples=80, deadline=None)
    @given(st.sampled_from(["ridge", "lasso", "group-lasso"]),
           arrays(np.float64, 3, elements=st.floats(-10, 10)),
           arrays(np.float64, 3, elements=st.floats(-10, 10)), st.floats(0, 5))
    def test_nonexpansive(self, family, z1, z2, s):
        d = np.linalg.norm(prox(family, z1, s) - prox(family, z2, s))
        assert d <= np.linalg.norm(z1 - z2) + 1e-12

    def test_zero_step_is_identity(self):
        z = np.array([1.5, -0.2, 4.0])
        for family in FAMILIES:
            np.testing.assert_array_equal(prox(family, z, 0.0), z)
