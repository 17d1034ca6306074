"""The compiled kernels and their numpy fallbacks must agree exactly."""
from __future__ import annotations

import numpy as np
from hypothesis import given, settings, strategies as st

from latentquery import kernels

ids = st.lists(st.integers(0, 3), max_size=12)


@settings(max_examples=200, deadline=None)
@given(ids, ids)
def test_lcs_paths_agree(a, b):
    a, b = np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)
    t_py = kernels.lcs_suffix_table(a, b, use_numba=False)
    t_nb = kernels.lcs_suffix_table(a, b, use_numba=True)
    assert np.array_equal(t_py, t_nb)
    if len(a) and len(b):
        for x, y in zip(kernels.lcs_earliest(a, b, use_numba=False), kernels.lcs_earliest(a, b, use_numba=True)):
            assert np.array_equal(x, y)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 50), max_size=20), st.integers(0, 6))
def test_skip_bigram_paths_agree(words, skip):
    w = np.asarray(words, dtype=np.int64)
    assert np.array_equal(kernels.skip_bigram_codes(w, skip, 64, use_numba=False),
                          kernels.skip_bigram_codes(w, skip, 64, use_numba=True))


def test_layernorm_paths_agree(rng):
    x = rng.standard_normal((7, 10))
    f_py = kernels.layernorm_forward(x, 1e-5, use_numba=False)
    f_nb = kernels.layernorm_forward(x, 1e-5, use_numba=True)
    for p, n in zip(f_py, f_nb):
        np.testing.assert_allclose(p, n, rtol=1e-12, atol=1e-12)
    g = rng.standard_normal(x.shape)
    np.testing.assert_allclose(kernels.layernorm_backward(g, *f_py, use_numba=False),
                               kernels.layernorm_backward(g, *f_py, use_numba=True), rtol=1e-10, atol=1e-12)


def test_lcs_length_of_reversal():
    assert kernels.lcs_length([2, 1, 0], [0, 1, 2]) == 1


def test_environment_flag_selects_numpy_fallback():
    import subprocess
    import sys

    code = "from latentquery import kernels; print(kernels.USE_NUMBA)"
    for flag, expected in (("0", "False"), ("off", "False"), ("1", "True")):
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                             env={"LATENTQUERY_NUMBA": flag, "PATH": ""}, check=True)
        assert out.stdout.strip() == expected
