import json
import math

import numpy as np
import pytest

from polarseq.construct import (BitChannelStats, dega_means, dega_sequence,
                                genie_leaf_llrs, load_nr_table, mc_error_counts,
                                mc_sequence, nr_sequence, phi, phi_inv)
from polarseq.decode import f_combine
from polarseq.sequences import (ReliabilitySequence, load_sequence,
                                sequence_from_json)

NR8 = (7, 6, 5, 3, 4, 2, 1, 0)


class TestPhi:
    def test_small_branch_value(self):
        # exp(-0.4527 * m^0.859 + 0.0218) at m = 1
        assert phi(1.0) == pytest.approx(math.exp(-0.4527 + 0.0218), rel=1e-12)

    def test_large_branch_value(self):
        want = math.exp(-5.0) * math.sqrt(math.pi / 20.0) * (1.0 - 10.0 / 140.0)
        assert phi(20.0) == pytest.approx(want, rel=1e-12)

    def test_strictly_decreasing(self):
        grid = np.linspace(0.0, 60.0, 500)
        vals = [phi(m) for m in grid]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_seam_is_continuous_enough(self):
        assert phi(10.0 - 1e-9) == pytest.approx(phi(10.0 + 1e-9), rel=0.02)

    def test_domain(self):
        with pytest.raises(ValueError):
            phi(-0.1)
        with pytest.raises(ValueError):
            phi_inv(0.0)

    @pytest.mark.parametrize("m", [0.01, 0.5, 2.0, 9.9, 10.1, 40.0, 120.0, 500.0])
    def test_inverse_roundtrip(self, m):
        assert phi_inv(phi(m)) == pytest.approx(m, abs=1e-6)

    def test_inverse_saturates_at_zero(self):
        assert phi_inv(1.5) == 0.0


class TestDegaMeans:
    def test_two_channel_split(self):
        m = dega_means(2, 1.0)
        assert m[1] == 4.0
        z = phi(2.0)
        assert m[0] == pytest.approx(phi_inv(z * (2.0 - z)), abs=1e-8)
        assert m[0] == pytest.approx(0.82216656, abs=1e-6)

    def test_best_index_doubles_every_stage(self):
        for n, N in [(3, 8), (5, 32), (7, 128)]:
            sigma2 = 0.8
            m = dega_means(N, sigma2)
            assert m[-1] == (2.0 ** n) * 2.0 / sigma2

    def test_worst_index_is_index_zero(self):
        m = dega_means(64, 1.0)
        assert np.argmin(m) == 0
        assert np.argmax(m) == 63

    def test_respects_binary_domination_order(self):
        # if the one-bits of i are a subset of j's, channel j is at least
        # as good; the GA means must honour that partial order
        m = dega_means(32, 1.0)
        for i in range(32):
            for j in range(32):
                if i != j and (i & j) == i:
                    assert m[i] <= m[j] + 1e-12

    def test_rejects_bad_n(self):
        with pytest.raises(ValueError):
            dega_means(12, 1.0)


class TestDegaSequence:
    def test_n8_order_at_zero_db(self):
        assert dega_sequence(8, 0.0).order == NR8

    def test_info_set_rate_half(self):
        assert dega_sequence(8, 0.0).info_set(4) == frozenset({3, 5, 6, 7})

    def test_n16_order_at_zero_db(self):
        want = (15, 14, 13, 11, 7, 12, 10, 9, 6, 5, 3, 8, 4, 1, 2, 0)
        assert dega_sequence(16, 0.0).order == want

    def test_provenance_records_design_point(self):
        seq = dega_sequence(8, 1.5)
        assert seq.provenance["scheme"] == "DEGA"
        assert seq.provenance["design_ebno_db"] == 1.5


class TestNrTable:
    def test_table_is_permutation(self):
        table = load_nr_table()
        assert np.array_equal(np.sort(table), np.arange(1024))

    def test_downselect_keeps_relative_order(self):
        table = load_nr_table()
        for N in (8, 64, 256):
            seq = nr_sequence(N)
            kept = [int(i) for i in table if i < N]
            assert list(seq.order) == kept[::-1]

    def test_n8_matches_known_order(self):
        assert nr_sequence(8).order == NR8

    def test_n16_matches_known_order(self):
        assert nr_sequence(16).order == (15, 14, 13, 11, 7, 12, 10, 6,
                                         9, 5, 3, 8, 4, 2, 1, 0)

    def test_nested_across_block_lengths(self):
        big = [i for i in nr_sequence(64).order if i < 16]
        assert tuple(big) == nr_sequence(16).order

    def test_bounds(self):
        with pytest.raises(ValueError):
            nr_sequence(2048)
        with pytest.raises(ValueError):
            nr_sequence(48)


class TestGenieLlrs:
    def test_single_symbol_passthrough(self):
        assert np.array_equal(genie_leaf_llrs(np.array([3.0])), [3.0])

    def test_matches_recursive_reference(self):
        def ref(v):
            if v.size == 1:
                return v
            half = v.size // 2
            a, b = v[:half], v[half:]
            f = np.logaddexp(a + b, 0.0) - np.logaddexp(a, b)
            return np.concatenate([ref(f), ref(a + b)])

        rng = np.random.default_rng(0)
        for N in (2, 8, 16, 64):
            v = rng.normal(scale=3.0, size=N)
            assert np.allclose(genie_leaf_llrs(v), ref(v), atol=1e-9)

    def test_batched_agrees_with_rows(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=(10, 16))
        out = genie_leaf_llrs(v)
        for i in range(10):
            assert np.allclose(out[i], genie_leaf_llrs(v[i]))

    def test_all_positive_input_keeps_last_index_positive(self):
        out = genie_leaf_llrs(np.full(32, 4.0))
        assert out[-1] == pytest.approx(128.0)
        assert (out > 0).all()


class TestMonteCarlo:
    def test_frozen_counts_n8(self):
        stats = mc_error_counts(8, 2.0, 20000, 0)
        assert list(stats.errors) == [8489, 4560, 3664, 739, 2729, 386, 217, 5]
        assert stats.trials == 20000

    def test_sequence_matches_known_order(self):
        seq = mc_sequence(8, 2.0, 20000, 0)
        assert seq.order == NR8
        assert seq.provenance["scheme"] == "MC"
        assert seq.provenance["trials"] == 20000

    def test_deterministic_across_runs(self):
        a = mc_error_counts(8, 1.0, 5000, 3, chunk=1000)
        b = mc_error_counts(8, 1.0, 5000, 3, chunk=1000)
        assert np.array_equal(a.errors, b.errors)

    def test_seed_changes_counts(self):
        a = mc_error_counts(8, 1.0, 5000, 3)
        b = mc_error_counts(8, 1.0, 5000, 4)
        assert not np.array_equal(a.errors, b.errors)

    def test_multi_chunk_deterministic(self):
        a = mc_error_counts(8, 1.0, 2500, 7, chunk=1000)
        b = mc_error_counts(8, 1.0, 2500, 7, chunk=1000)
        assert np.array_equal(a.errors, b.errors)

    def test_rayleigh_counts_exceed_awgn(self):
        a = mc_error_counts(8, 3.0, 4000, 5)
        r = mc_error_counts(8, 3.0, 4000, 5, channel="rayleigh")
        assert r.errors.sum() > a.errors.sum()

    def test_validation(self):
        with pytest.raises(ValueError):
            mc_error_counts(8, 1.0, 0, 0)
        with pytest.raises(ValueError):
            mc_error_counts(9, 1.0, 10, 0)


class TestReliabilitySequence:
    def test_rejects_non_permutation(self):
        with pytest.raises(ValueError):
            ReliabilitySequence(N=4, order=(0, 1, 2, 2))
        with pytest.raises(ValueError):
            ReliabilitySequence(N=3, order=(0, 1, 2))

    def test_info_set_prefix(self):
        seq = ReliabilitySequence(N=4, order=(3, 1, 2, 0))
        assert seq.info_set(2) == frozenset({3, 1})
        with pytest.raises(ValueError):
            seq.info_set(0)
        with pytest.raises(ValueError):
            seq.info_set(5)

    def test_json_roundtrip(self):
        seq = ReliabilitySequence(N=8, order=NR8, provenance={"scheme": "NR"})
        back = sequence_from_json(seq.to_json())
        assert back == seq

    def test_file_roundtrip(self, tmp_path):
        seq = mc_sequence(8, 2.0, 100, 1)
        path = tmp_path / "seq.json"
        seq.save(path)
        back = load_sequence(path)
        assert back.order == seq.order
        assert back.provenance == seq.provenance

    def test_json_is_stable(self):
        seq = ReliabilitySequence(N=4, order=(3, 2, 1, 0), provenance={"b": 1, "a": 2})
        assert seq.to_json() == seq.to_json()
        doc = json.loads(seq.to_json())
        assert doc["version"] == 1

    def test_version_gate(self):
        bad = json.dumps({"version": 99, "N": 4, "order": [0, 1, 2, 3]})
        with pytest.raises(ValueError):
            sequence_from_json(bad)
