import numpy as np
import pytest

from hashscd.errors import (
    BadMagicError,
    ConflictError,
    InvalidInputError,
    NotFoundError,
    TruncatedError,
    VersionError,
)
from hashscd.store import HashRecord, create_store, open_store

from .conftest import random_code


def make_record(rng, location, timestamp, nbits=16, grid_h=2, grid_w=2) -> HashRecord:
    return HashRecord(
        location_id=location,
        timestamp=timestamp,
        global_code=random_code(rng, nbits),
        patch_codes=[random_code(rng, nbits) for _ in range(grid_h * grid_w)],
        grid_h=grid_h,
        grid_w=grid_w,
    )


class TestLifecycle:
    def test_create_then_open_empty(self, tmp_path):
        path = tmp_path / "codes.hsdb"
        with create_store(path, 32, 4, 4) as st:
            assert st.count == 0
        with open_store(path) as st:
            assert (st.hash_bits, st.grid_h, st.grid_w) == (32, 4, 4)
            assert st.count == 0

    def test_open_random_bytes(self, tmp_path, rng):
        path = tmp_path / "garbage.bin"
        path.write_bytes(rng.integers(0, 256, size=64, dtype=np.uint8).tobytes())
        with pytest.raises(BadMagicError):
            open_store(path)

    def test_version_rejected(self, tmp_path):
        path = tmp_path / "codes.hsdb"
        create_store(path, 16, 1, 1).close()
        data = bytearray(path.read_bytes())
        data[4] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(VersionError):
            open_store(path)

    def test_record_payload_size(self, tmp_path, rng):
        # 64-bit codes on a 32x32 grid: (P+1) * l = 65600 bits = 8200 bytes.
        rec = make_record(rng, "site", 0, nbits=64, grid_h=32, grid_w=32)
        assert rec.payload_bits == 65600
        assert rec.payload_bits // 8 == 8200


class TestPutGet:
    def test_roundtrip_bit_exact(self, tmp_path, rng):
        path = tmp_path / "codes.hsdb"
        rec = make_record(rng, "siteA", 1000)
        with create_store(path, 16, 2, 2) as st:
            st.put(rec)
        with open_store(path) as st:
            got = st.get("siteA", 1000)
        assert got.global_code == rec.global_code
        assert got.patch_codes == rec.patch_codes
        assert (got.location_id, got.timestamp) == ("siteA", 1000)

    def test_duplicate_key_conflicts(self, tmp_path, rng):
        path = tmp_path / "codes.hsdb"
        with create_store(path, 16, 2, 2) as st:
            st.put(make_record(rng, "siteA", 1))
            with pytest.raises(ConflictError):
                st.put(make_record(rng, "siteA", 1))
            assert st.count == 1

    def test_geometry_mismatch_rejected(self, tmp_path, rng):
        with create_store(tmp_path / "a.hsdb", 16, 2, 2) as st:
            with pytest.raises(InvalidInputError):
                st.put(make_record(rng, "x", 0, nbits=32))
            with pytest.raises(InvalidInputError):
                st.put(make_record(rng, "x", 0, nbits=16, grid_h=3, grid_w=2))

    def test_file_size_arithmetic(self, tmp_path, rng):
        path = tmp_path / "codes.hsdb"
        n = 50
        with create_store(path, 16, 2, 2) as st:
            for i in range(n):
                st.put(make_record(rng, "loc", i))
        header = 4 + 2 + 2 + 2 + 2 + 8
        record = 1 + len(b"loc") + 8 + 2 * (4 + 1)  # loc frame + 5 codes x 2 bytes
        assert path.stat().st_size == header + n * record
        with open_store(path) as st:
            assert st.count == n

    def test_missing_key(self, tmp_path, rng):
        with create_store(tmp_path / "a.hsdb", 16, 2, 2) as st:
            st.put(make_record(rng, "siteA", 1))
            with pytest.raises(NotFoundError):
                st.get("siteA", 2)
            with pytest.raises(NotFoundError):
                st.latest("siteB")


class TestLatestScan:
    def test_latest_single(self, tmp_path, rng):
        with create_store(tmp_path / "a.hsdb", 16, 2, 2) as st:
            rec = make_record(rng, "siteA", 5)
            st.put(rec)
            assert st.latest("siteA").global_code == rec.global_code

    def test_latest_picks_max_timestamp(self, tmp_path, rng):
        with create_store(tmp_path / "a.hsdb", 16, 2, 2) as st:
            st.put(make_record(rng, "siteA", 10))
            newer = make_record(rng, "siteA", 20)
            st.put(newer)
            assert st.latest("siteA").timestamp == 20
            assert st.latest("siteA").global_code == newer.global_code

    def test_scan_insertion_order(self, tmp_path, rng):
        path = tmp_path / "a.hsdb"
        stamps = [5, 1, 9, 3]
        with create_store(path, 16, 2, 2) as st:
            for t in stamps:
                st.put(make_record(rng, "loc", t))
        with open_store(path) as st:
            # After reopen the scan follows file order, which is insertion order.
            assert [r.timestamp for r in st.scan()] == stamps


class TestDurability:
    def test_fuzz_roundtrip_all_lengths(self, tmp_path, rng):
        for nbits in (16, 32, 64):
            path = tmp_path / f"fuzz{nbits}.hsdb"
            records = []
            with create_store(path, nbits, 2, 3) as st:
                for i in range(100):
                    loc = f"loc{rng.integers(0, 10)}"
                    rec = make_record(rng, loc, int(rng.integers(-10**9, 10**9)),
                                      nbits=nbits, grid_h=2, grid_w=3)
                    try:
                        st.put(rec)
                        records.append(rec)
                    except ConflictError:
                        pass
            with open_store(path) as st:
                assert st.count == len(records)
                for rec in records:
                    got = st.get(rec.location_id, rec.timestamp)
                    assert got.global_code == rec.global_code
                    assert got.patch_codes == rec.patch_codes

    def test_truncation_at_record_boundary(self, tmp_path, rng):
        path = tmp_path / "a.hsdb"
        with create_store(path, 16, 1, 2) as st:
            for i in range(4):
                st.put(make_record(rng, "loc", i, nbits=16, grid_h=1, grid_w=2))
        header = 20
        record = 1 + 3 + 8 + 2 * 3
        data = path.read_bytes()
        for kept in (0, 1, 2, 3):
            path.write_bytes(data[: header + kept * record])
            with open_store(path) as st:
                assert st.count == kept
                assert len(list(st.scan())) == kept

    def test_partial_trailing_record_rejected(self, tmp_path, rng):
        path = tmp_path / "a.hsdb"
        with create_store(path, 16, 1, 1) as st:
            st.put(make_record(rng, "loc", 1, nbits=16, grid_h=1, grid_w=1))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(TruncatedError):
            open_store(path)

    def test_unicode_location_roundtrip(self, tmp_path, rng):
        path = tmp_path / "a.hsdb"
        loc = "пункт-7/σταθμός"
        with create_store(path, 16, 1, 1) as st:
            st.put(make_record(rng, loc, 1, grid_h=1, grid_w=1))
        with open_store(path) as st:
            assert st.get(loc, 1).location_id == loc


class TestRecordValidation:
    def test_location_length_limits(self, rng):
        code = random_code(rng, 16)
        with pytest.raises(InvalidInputError):
            HashRecord("", 0, code, [code], 1, 1)
        with pytest.raises(InvalidInputError):
            HashRecord("x" * 256, 0, code, [code], 1, 1)

    def test_patch_count_must_match_grid(self, rng):
        code = random_code(rng, 16)
        with pytest.raises(InvalidInputError):
            HashRecord("loc", 0, code, [code] * 3, 2, 2)

    def test_mixed_lengths_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            HashRecord("loc", 0, random_code(rng, 16),
                       [random_code(rng, 32)], 1, 1)
