import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isactensor.tensor import (FactorTriple, add_noise, cpd_reconstruct, fold, khatri_rao, load_tensor,
                               save_tensor, unfold)

from helpers import crandn, random_factors

dims_st = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5))


def triple_loop(b1, b2, b3):
    i1, i2, i3, q = b1.shape[0], b2.shape[0], b3.shape[0], b1.shape[1]
    out = np.zeros((i1, i2, i3), complex)
    for i in range(i1):
        for j in range(i2):
            for k in range(i3):
                out[i, j, k] = sum(b1[i, r] * b2[j, r] * b3[k, r] for r in range(q))
    return out


class TestKhatriRao:
    def test_columns_are_kronecker_products(self, rng):
        a, b = crandn(rng, 3, 4), crandn(rng, 5, 4)
        kr = khatri_rao(a, b)
        for q in range(4):
            np.testing.assert_allclose(kr[:, q], np.kron(a[:, q], b[:, q]))

    def test_shape(self, rng):
        assert khatri_rao(crandn(rng, 2, 3), crandn(rng, 7, 3)).shape == (14, 3)

    def test_column_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            khatri_rao(crandn(rng, 2, 3), crandn(rng, 2, 4))

    def test_mixed_product_with_gram(self, rng):
        a, b = crandn(rng, 4, 3), crandn(rng, 5, 3)
        kr = khatri_rao(a, b)
        np.testing.assert_allclose(kr.conj().T @ kr, (a.conj().T @ a) * (b.conj().T @ b), rtol=1e-12)


class TestCpdReconstruct:
    @given(dims=dims_st, q=st.integers(1, 4), seed=st.integers(0, 2 ** 32 - 1))
    def test_matches_triple_loop(self, dims, q, seed):
        f = random_factors(np.random.default_rng(seed), dims, q)
        ref = triple_loop(*f)
        got = cpd_reconstruct(FactorTriple(*f))
        assert np.linalg.norm(got - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-300)

    def test_column_mismatch_raises(self, rng):
        with pytest.raises(ValueError):
            cpd_reconstruct(FactorTriple(crandn(rng, 2, 2), crandn(rng, 2, 3), crandn(rng, 2, 2)))

    def test_factor_triple_properties(self, rng):
        f = FactorTriple(*random_factors(rng, (3, 4, 5), 2))
        assert f.rank == 2
        assert f.dims == (3, 4, 5)


class TestUnfold:
    @given(dims=dims_st, q=st.integers(1, 4), seed=st.integers(0, 2 ** 32 - 1))
    def test_khatri_rao_identities(self, dims, q, seed):
        b1, b2, b3 = random_factors(np.random.default_rng(seed), dims, q)
        x = cpd_reconstruct(FactorTriple(b1, b2, b3))
        scale = np.linalg.norm(x)
        for mode, (a, b, c) in {1: (b3, b2, b1), 2: (b3, b1, b2), 3: (b2, b1, b3)}.items():
            assert np.linalg.norm(unfold(x, mode).T - khatri_rao(a, b) @ c.T) <= 1e-10 * scale

    @given(dims=dims_st, mode=st.sampled_from([1, 2, 3]), seed=st.integers(0, 2 ** 32 - 1))
    def test_fold_inverts_unfold(self, dims, mode, seed):
        x = crandn(np.random.default_rng(seed), *dims)
        np.testing.assert_array_equal(fold(unfold(x, mode), mode, dims), x)

    def test_mode1_block_layout(self, rng):
        x = crandn(rng, 2, 3, 4)
        y1t = unfold(x, 1).T
        for k in range(4):
            for j in range(3):
                np.testing.assert_array_equal(y1t[k * 3 + j], x[:, j, k])

    def test_vec_of_mode3_transpose_is_fortran_ravel(self, rng):
        x = crandn(rng, 2, 3, 4)
        np.testing.assert_array_equal(unfold(x, 3).T.ravel(order="F"), x.ravel(order="F"))

    @pytest.mark.parametrize("mode", [0, 4, -1])
    def test_bad_mode(self, rng, mode):
        with pytest.raises(ValueError):
            unfold(crandn(rng, 2, 2, 2), mode)

    def test_bad_order(self, rng):
        with pytest.raises(ValueError):
            unfold(crandn(rng, 2, 2), 1)


class TestAddNoise:
    def test_infinite_snr_is_noiseless(self, rng):
        x = crandn(rng, 3, 4, 5)
        y, s2 = add_noise(x, np.inf, rng)
        np.testing.assert_array_equal(x, y)
        assert s2 == 0.0

    @pytest.mark.parametrize("snr_db", [0.0, 10.0, 20.0])
    def test_empirical_snr(self, snr_db):
        x = crandn(np.random.default_rng(0), 20, 30, 40)
        y, s2 = add_noise(x, snr_db, np.random.default_rng(1))
        measured = 10 * np.log10(np.linalg.norm(x) ** 2 / np.linalg.norm(y - x) ** 2)
        assert measured == pytest.approx(snr_db, abs=0.1)
        assert s2 == pytest.approx(np.linalg.norm(x) ** 2 / x.size / 10 ** (snr_db / 10))

    def test_deterministic_given_seed(self):
        x = np.ones((2, 2, 2), complex)
        np.testing.assert_array_equal(add_noise(x, 5.0, 7)[0], add_noise(x, 5.0, 7)[0])

    def test_zero_tensor_raises(self):
        with pytest.raises(ValueError):
            add_noise(np.zeros((2, 2, 2)), 10.0, 0)

    @pytest.mark.parametrize("snr", [np.nan, -np.inf])
    def test_invalid_snr(self, snr):
        with pytest.raises(ValueError):
            add_noise(np.ones((2, 2, 2)), snr, 0)


class TestTensorFile:
    def test_round_trip(self, tmp_path, rng):
        x = crandn(rng, 3, 4, 5)
        p = tmp_path / "t.bin"
        save_tensor(p, x)
        np.testing.assert_array_equal(load_tensor(p), x)
        assert p.read_bytes().startswith(b"ISACT3 3 4 5 F complex128\n")

    def test_payload_is_mode1_fastest(self, tmp_path):
        x = np.arange(8, dtype=complex).reshape(2, 2, 2)
        p = tmp_path / "t.bin"
        save_tensor(p, x)
        data = np.frombuffer(p.read_bytes().split(b"\n", 1)[1], "<c16")
        np.testing.assert_array_equal(data[:2], [x[0, 0, 0], x[1, 0, 0]])

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOPE 1 1 1 F complex128\n" + b"\0" * 16)
        with pytest.raises(ValueError):
            load_tensor(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "short.bin"
        p.write_bytes(b"ISACT3 2 2 2 F complex128\n" + b"\0" * 16)
        with pytest.raises(ValueError):
            load_tensor(p)
