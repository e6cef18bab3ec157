import numpy as np
import pytest
from hypothesis import given, strategies as st

from shrinklab.oracle import exhaustive_nearest
from shrinklab.quantizer import (EPS_LAPLACE, Codebook, assign, codebook_csv_text, ema_update,
                                 load_codebook_csv, mean_pairwise_distance, perplexity, quantize,
                                 save_codebook_csv)


def make_codebook(tokens, **kw):
    return Codebook.from_tokens(np.asarray(tokens, dtype=float), **kw)


class TestCodebookValidation:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Codebook(tokens=np.zeros((0, 2)))

    def test_rejects_bad_decay(self):
        with pytest.raises(ValueError):
            make_codebook([[0.0, 0.0]], decay=1.0)

    def test_rejects_negative_cluster_size(self):
        with pytest.raises(ValueError):
            Codebook(tokens=np.zeros((2, 2)), ema_cluster_size=np.array([-1.0, 0.0]))


class TestAssign:
    def test_exact_token_row(self):
        rng = np.random.default_rng(0)
        cb = make_codebook(rng.normal(size=(10, 3)))
        assert assign(cb.tokens[[7]], cb)[0] == 7

    def test_equidistant_tie_goes_low(self):
        cb = make_codebook([[0.0, 0.0], [2.0, 0.0]])
        assert assign(np.array([[1.0, 0.0]]), cb)[0] == 0

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(1)
        cb = make_codebook(rng.normal(size=(128, 32)))
        z = rng.normal(size=(1000, 32))
        got = assign(z, cb)
        for i in range(z.shape[0]):
            assert got[i] == exhaustive_nearest(z[i], cb.tokens)

    def test_dim_mismatch(self):
        cb = make_codebook([[0.0, 0.0]])
        with pytest.raises(ValueError):
            assign(np.zeros((1, 3)), cb)

    def test_usage_tracking(self):
        cb = make_codebook([[0.0], [10.0]])
        assign(np.array([[0.1], [0.2], [9.0]]), cb, track_usage=True)
        assert np.array_equal(cb.usage_counts, [2, 1])
        assert cb.usage_counts.sum() == 3
        assign(np.array([[9.5]]), cb, track_usage=True)
        assert np.array_equal(cb.usage_counts, [2, 2])


class TestQuantize:
    def test_zero_losses_on_exact_rows(self):
        rng = np.random.default_rng(2)
        cb = make_codebook(rng.normal(size=(5, 4)))
        res = quantize(cb.tokens[[0, 3, 3]], cb)
        assert res.commit_loss == 0.0 and res.codebook_loss == 0.0

    def test_per_element_mean_convention(self):
        # one row at (1,0), nearest token at the origin, beta 0.25:
        # residual mean over 2 elements is 0.5, so the commit loss is 0.125
        cb = make_codebook([[0.0, 0.0], [10.0, 10.0]], beta=0.25)
        res = quantize(np.array([[1.0, 0.0]]), cb)
        assert res.codebook_loss == pytest.approx(0.5)
        assert res.commit_loss == pytest.approx(0.125)

    def test_straight_through_value_is_bit_equal_to_tokens(self):
        rng = np.random.default_rng(3)
        cb = make_codebook(rng.normal(size=(16, 8)))
        z = rng.normal(size=(50, 8))
        res = quantize(z, cb)
        for i, k in enumerate(res.indices):
            assert np.array_equal(res.straight_through_output[i], cb.tokens[k])
            assert np.array_equal(res.quantized[i], cb.tokens[k])

    def test_straight_through_gradient_contract(self):
        # downstream loss L(output); with the codebook frozen, the output is
        # z + constant, so dL/dz must equal dL/doutput. Verify the routed
        # gradient against central finite differences of L(z + offset).
        rng = np.random.default_rng(4)
        cb = make_codebook(rng.normal(size=(6, 3)))
        z = rng.normal(size=(4, 3))
        coeff = rng.normal(size=(4, 3))
        res = quantize(z, cb)
        offset = res.quantized - z  # the stopgrad branch, frozen
        routed = coeff.copy()  # straight-through: dL/dz == dL/doutput

        h = 1e-5
        fd = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            orig = z[idx]
            z[idx] = orig + h
            up = float((coeff * (z + offset)).sum())
            z[idx] = orig - h
            down = float((coeff * (z + offset)).sum())
            z[idx] = orig
            fd[idx] = (up - down) / (2 * h)
        assert np.abs(fd - routed).max() / np.abs(routed).max() < 1e-4


class TestEmaUpdate:
    def test_zero_state_no_assignments_leaves_tokens(self):
        cb = Codebook(tokens=np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
        before = cb.tokens.copy()
        # batch assigned entirely to token 0; tokens 1 and 2 have zero state
        ema_update(cb, np.array([[1.0, 2.0]]), np.array([0]))
        assert np.array_equal(cb.tokens[1:], before[1:])

    def test_hand_algebra(self):
        cb = Codebook(tokens=np.zeros((2, 2)),
                      ema_cluster_size=np.array([1.0, 0.0]),
                      ema_embed_sum=np.array([[1.0, 1.0], [0.0, 0.0]]),
                      decay=0.9)
        z = np.array([[2.0, 2.0], [2.0, 2.0]])
        ema_update(cb, z, np.array([0, 0]))
        assert cb.ema_cluster_size[0] == pytest.approx(1.1)
        assert np.allclose(cb.ema_embed_sum[0], [1.3, 1.3])

    def test_geometric_convergence_to_constant_embedding(self):
        e = np.array([0.8, -1.2, 0.4])
        cb = Codebook(tokens=np.zeros((4, 3)), decay=0.9)
        batch = np.tile(e, (64, 1))
        idx = np.full(64, 2)
        for _ in range(200):
            ema_update(cb, batch, idx)
        assert np.abs(cb.tokens[2] - e).max() < 1e-6

    def test_unassigned_token_moves_only_by_denominator(self):
        cb = Codebook(tokens=np.array([[4.0, 4.0], [100.0, 100.0]]),
                      ema_cluster_size=np.array([1.0, 1.0]),
                      ema_embed_sum=np.array([[4.0, 4.0], [100.0, 100.0]]),
                      decay=0.9)
        ema_update(cb, np.array([[4.0, 4.0]]), np.array([0]))
        # token 1 saw nothing: value changes only through the eps denominator
        drift = np.abs(cb.tokens[1] - 100.0).max()
        assert 0 < drift < 100.0 * EPS_LAPLACE * 2


class TestPerplexity:
    def test_uniform_exact(self):
        assert perplexity(np.full(128, 7)) == 128.0

    def test_point_mass(self):
        assert perplexity(np.array([0, 9, 0])) == 1.0

    def test_two_equal_entries(self):
        counts = np.zeros(10, dtype=int)
        counts[3] = counts[8] = 1
        assert perplexity(counts) == 2.0

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            perplexity(np.zeros(4, dtype=int))

    @given(st.lists(st.integers(min_value=0, max_value=10_000), min_size=1, max_size=64))
    def test_bounds(self, counts):
        counts = np.asarray(counts)
        if counts.sum() == 0:
            counts[0] = 1
        p = perplexity(counts)
        assert 1.0 <= p <= counts.size


class TestMeanPairwiseDistance:
    def test_identical_tokens(self):
        assert mean_pairwise_distance(np.ones((5, 3))) == 0.0

    def test_two_tokens(self):
        assert mean_pairwise_distance(np.array([[0.0, 0.0], [3.0, 0.0]])) == pytest.approx(3.0)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(5)
        tokens = rng.normal(size=(5, 4))
        acc = [np.linalg.norm(tokens[i] - tokens[j]) for i in range(5) for j in range(i + 1, 5)]
        assert abs(mean_pairwise_distance(tokens) - np.mean(acc)) < 1e-12

    def test_needs_two_tokens(self):
        with pytest.raises(ValueError):
            mean_pairwise_distance(np.ones((1, 2)))

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_permutation_and_translation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        tokens = rng.normal(size=(6, 3))
        base = mean_pairwise_distance(tokens)
        perm = rng.permutation(6)
        assert mean_pairwise_distance(tokens[perm]) == pytest.approx(base, rel=1e-12)
        shift = rng.normal(size=3)
        assert mean_pairwise_distance(tokens + shift) == pytest.approx(base, rel=1e-9)


class TestCodebookCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        cb = make_codebook(rng.normal(size=(8, 3)))
        cb.usage_counts = np.arange(8, dtype=np.int64)
        path = str(tmp_path / "cb.csv")
        save_codebook_csv(path, cb)
        tokens, usage = load_codebook_csv(path)
        assert np.array_equal(usage, cb.usage_counts)
        assert np.array_equal(tokens, cb.tokens)  # dumps are lossless

    def test_header(self):
        cb = make_codebook([[1.0, 2.0]])
        assert codebook_csv_text(cb).splitlines()[0] == "token_id,usage_count,c0,c1"

    def test_accepts_dump_without_usage(self, tmp_path):
        path = tmp_path / "ext.csv"
        path.write_text("token_id,c0,c1\n0,1.5,2.5\n1,0.0,1.0\n")
        tokens, usage = load_codebook_csv(str(path))
        assert usage is None
        assert np.allclose(tokens, [[1.5, 2.5], [0.0, 1.0]])

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("token_id,usage_count,c0\n0,1,2.0\n1,oops,3.0\n")
        with pytest.raises(ValueError, match="line 3"):
            load_codebook_csv(str(path))

    def test_field_count_mismatch_reports_number(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("token_id,usage_count,c0\n0,1\n")
        with pytest.raises(ValueError, match="line 2"):
            load_codebook_csv(str(path))
