"""Multiset hash unit and property tests, checked against a pure-int oracle."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palm.errors import ParamsMismatch
from palm.msh import (
    DEFAULT_PARAMS,
    HASH_DOMAIN,
    MshAccumulator,
    MshParams,
    hash_record,
    msh_of_records,
)

from reference import MOD, oracle_encode, oracle_limbs, oracle_msh

records_strategy = st.lists(st.binary(min_size=0, max_size=64), max_size=40)


class TestParams:
    def test_default_shape(self):
        assert DEFAULT_PARAMS.m == 4096
        assert DEFAULT_PARAMS.l == 64
        assert DEFAULT_PARAMS.n_log2 == 64
        assert DEFAULT_PARAMS.digest_bytes == 512

    def test_m_must_be_square(self):
        with pytest.raises(ValueError):
            MshParams(m=4095, l=64, n_log2=64, param_id="bad")

    def test_l_must_match_root(self):
        with pytest.raises(ValueError):
            MshParams(m=4096, l=32, n_log2=64, param_id="bad")

    def test_smaller_square_params_work(self):
        params = MshParams(m=256, l=16, n_log2=16, param_id="mu256")
        digest = msh_of_records([b"a", b"b"], params)
        assert len(digest.limbs) == 16
        assert all(v < 2**16 for v in digest.limbs)

    def test_odd_limb_width_rejected(self):
        with pytest.raises(ValueError):
            MshParams(m=576, l=24, n_log2=24, param_id="bad")


class TestHashRecord:
    def test_matches_oracle(self):
        assert list(hash_record(b"hello")) == oracle_limbs(b"hello")
        assert list(hash_record(b"")) == oracle_limbs(b"")

    def test_domain_prefix_is_absorbed(self):
        # A record equal to the prefix itself must not hash like the empty
        # record under a prefix-free implementation.
        assert hash_record(HASH_DOMAIN) != hash_record(b"")

    def test_limb_range(self):
        assert all(0 <= v < 2**64 for v in hash_record(b"xyz"))


class TestAccumulator:
    def test_insert_updates_count(self):
        acc = MshAccumulator()
        acc.insert(b"a").insert(b"b")
        assert acc.count == 2

    def test_empty_digest_is_zero_vector(self):
        digest = MshAccumulator().finalize()
        assert digest.limbs == (0,) * 64
        assert digest.count == 0

    def test_multiplicity_matters(self):
        once = msh_of_records([b"a"])
        twice = msh_of_records([b"a", b"a"])
        assert once != twice
        assert list(twice.limbs) == [(2 * v) % MOD for v in oracle_limbs(b"a")]

    def test_merge_params_mismatch(self):
        other = MshAccumulator(MshParams(m=256, l=16, n_log2=16, param_id="mu256"))
        with pytest.raises(ParamsMismatch):
            MshAccumulator().merge(other)

    def test_finalize_is_a_snapshot(self):
        acc = MshAccumulator().insert(b"a")
        first = acc.finalize()
        acc.insert(b"b")
        assert acc.finalize() != first
        assert first == msh_of_records([b"a"])

    def test_encoding_layout(self):
        digest = msh_of_records([b"a", b"b", b"c"])
        encoded = digest.encode()
        limbs, count = oracle_msh([b"a", b"b", b"c"])
        assert encoded == oracle_encode(limbs, count)
        assert encoded.startswith(b"mu4096\x00")
        assert encoded[7:15] == (3).to_bytes(8, "little")
        assert len(encoded) == 7 + 8 + 64 * 8
        assert digest.hex() == encoded.hex()


class TestProperties:
    @given(records_strategy)
    @settings(max_examples=60)
    def test_matches_pure_python_oracle(self, records):
        digest = msh_of_records(records)
        limbs, count = oracle_msh(records)
        assert list(digest.limbs) == limbs
        assert digest.count == count

    @given(records_strategy, st.randoms(use_true_random=False))
    @settings(max_examples=60)
    def test_permutation_invariance(self, records, rnd):
        shuffled = list(records)
        rnd.shuffle(shuffled)
        assert msh_of_records(shuffled) == msh_of_records(records)

    @given(records_strategy, st.integers(min_value=0, max_value=39))
    @settings(max_examples=60)
    def test_merge_homomorphism(self, records, split_at):
        split_at = min(split_at, len(records))
        left = MshAccumulator()
        for r in records[:split_at]:
            left.insert(r)
        right = MshAccumulator()
        for r in records[split_at:]:
            right.insert(r)
        assert left.merge(right).finalize() == msh_of_records(records)

    @given(st.lists(st.binary(min_size=1, max_size=32), min_size=1, max_size=20))
    @settings(max_examples=60)
    def test_extra_record_changes_digest(self, records):
        assert msh_of_records(records) != msh_of_records(records + [records[0]])
