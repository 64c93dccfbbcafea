import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knnroc.normal import chi2_cdf, chi2_ppf, norm_cdf, norm_pdf, norm_ppf


def chi2_cdf_df3(x):
    # closed form for three degrees of freedom
    return math.erf(math.sqrt(x / 2)) - math.sqrt(2 * x / math.pi) * math.exp(-x / 2)


class TestNormal:
    def test_symmetry_points(self):
        assert norm_cdf(0.0) == 0.5
        assert norm_ppf(0.5) == 0.0
        assert norm_pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))

    def test_known_quantiles(self):
        assert norm_ppf(0.975) == pytest.approx(1.959963984540054, abs=1e-10)
        assert norm_ppf(0.4) == pytest.approx(-0.2533471031357997, abs=1e-10)
        assert norm_ppf(0.75) == pytest.approx(0.6744897501960817, abs=1e-10)

    def test_cdf_against_stdlib_erfc(self):
        for x in np.linspace(-8, 8, 33):
            assert norm_cdf(x) == pytest.approx(0.5 * math.erfc(-x / math.sqrt(2)), rel=1e-13)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-10, 1 - 1e-10))
    def test_ppf_inverts_cdf(self, p):
        assert norm_cdf(norm_ppf(p)) == pytest.approx(p, rel=1e-9, abs=1e-14)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, float("nan")])
    def test_ppf_domain(self, p):
        with pytest.raises(ValueError):
            norm_ppf(p)


class TestChiSquare:
    def test_95_quantile_three_df(self):
        assert chi2_ppf(0.95, 3) == pytest.approx(7.8147, abs=5e-5)
        assert chi2_cdf_df3(chi2_ppf(0.95, 3)) == pytest.approx(0.95, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, 40.0))
    def test_cdf_matches_closed_form(self, x):
        assert chi2_cdf(x, 3) == pytest.approx(chi2_cdf_df3(x), abs=1e-13)

    def test_two_df_is_exponential(self):
        for level in (0.5, 0.9, 0.99):
            assert chi2_ppf(level, 2) == pytest.approx(-2 * math.log(1 - level), rel=1e-11)
