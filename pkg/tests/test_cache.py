import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cband.backbone import ActivationMaps
from cband.cache import FeatureCache, column_names, export_csv, read_cache, write_cache
from cband.errors import FeatureCacheError
from cband.nss import FeatureMode, frame_features


def _cache(t=3, c=4, mode=FeatureMode.GGD, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((t, c * mode.per_channel)).astype(np.float32)
    return FeatureCache(c, mode, np.arange(0, 30 * t, 30, dtype=np.uint32), feats)


@settings(max_examples=25)
@given(t=st.integers(0, 6), c=st.integers(1, 9), mode=st.sampled_from(list(FeatureMode)), seed=st.integers(0, 99))
def test_round_trip(tmp_path_factory, t, c, mode, seed):
    p = tmp_path_factory.mktemp("c") / "x.cbnd"
    cache = _cache(t, c, mode, seed)
    write_cache(str(p), cache)
    back = read_cache(str(p))
    assert (back.channels, back.mode) == (c, mode)
    np.testing.assert_array_equal(back.frame_indices, cache.frame_indices)
    np.testing.assert_array_equal(back.features, cache.features)


def test_record_size(tmp_path):
    write_cache(str(tmp_path / "x"), _cache(t=2, c=4))
    assert (tmp_path / "x").stat().st_size == 15 + 2 * (4 + 4 * 8)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + b"\x02\x00" + b[6:],
    lambda b: b[:10] + b"\x09" + b[11:],
    lambda b: b[:-3],
    lambda b: b[:7],
])
def test_corruption(tmp_path, mutate):
    p = tmp_path / "x"
    write_cache(str(p), _cache())
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(FeatureCacheError):
        read_cache(str(p))


def test_inconsistent_shape_rejected(tmp_path):
    c = _cache()
    c.features = c.features[:, :-1]
    with pytest.raises(FeatureCacheError):
        write_cache(str(tmp_path / "x"), c)


def test_from_vectors():
    rng = np.random.default_rng(1)
    vecs = [frame_features(ActivationMaps(rng.standard_normal((3, 8, 8)), i)) for i in (4, 9)]
    c = FeatureCache.from_vectors(vecs, 3, FeatureMode.GGD)
    assert c.frame_indices.tolist() == [4, 9] and c.features.dtype == np.float32
    with pytest.raises(FeatureCacheError):
        FeatureCache.from_vectors(vecs, 3, FeatureMode.ALPHA_ONLY)


def test_column_names():
    assert column_names(2, FeatureMode.GGD) == ["alpha_0", "sigma_0", "alpha_1", "sigma_1"]
    assert column_names(2, FeatureMode.MEAN_STD) == ["mean_0", "std_0", "mean_1", "std_1"]
    assert column_names(2, FeatureMode.SIGMA_ONLY) == ["sigma_0", "sigma_1"]


def test_csv_export(tmp_path):
    cache = _cache(t=2, c=3)
    export_csv(cache, str(tmp_path / "x.csv"))
    with open(tmp_path / "x.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["frame_index"] + column_names(3, FeatureMode.GGD)
    assert [int(r[0]) for r in rows[1:]] == [0, 30]
    # float32 values survive the text round trip exactly
    np.testing.assert_array_equal(np.array(rows[2][1:], dtype=np.float64).astype(np.float32), cache.features[1])
