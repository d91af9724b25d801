import numpy as np
import pytest

from d2ae import data


@pytest.fixture(scope="module")
def ds():
    return data.generate(seed=3, n_id=8, samples_per_id=20, size=32)


class TestGenerate:
    def test_shapes_and_range(self, ds):
        assert ds.images.shape == (160, 3, 32, 32)
        assert ds.images.dtype == np.float32
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
        assert ds.factors.shape == (160, 5)
        assert (np.abs(ds.factors) <= 1.0).all()

    def test_identity_counts(self, ds):
        ids, counts = np.unique(ds.identities, return_counts=True)
        assert list(ids) == list(range(8))
        assert (counts == 20).all()

    def test_byte_identical_regeneration(self, ds):
        again = data.generate(seed=3, n_id=8, samples_per_id=20, size=32)
        np.testing.assert_array_equal(ds.images, again.images)
        np.testing.assert_array_equal(ds.factors, again.factors)
        assert ds.manifest.splits == again.manifest.splits

    def test_seed_changes_content(self, ds):
        other = data.generate(seed=4, n_id=8, samples_per_id=20, size=32)
        assert np.abs(ds.images - other.images).max() > 0

    def test_samples_within_identity_differ(self, ds):
        a, b = ds.images[0], ds.images[1]
        assert np.abs(a - b).max() > 0

    def test_validation(self):
        with pytest.raises(ValueError):
            data.generate(0, 1, 10)
        with pytest.raises(ValueError):
            data.generate(0, 4, 3)
        with pytest.raises(ValueError):
            data.generate(0, 4, 10, size=8)

    def test_factor_uniformity_ks(self):
        """One-sample Kolmogorov-Smirnov check that each factor column is
        uniform on [-1, 1]: D_n stays under the 1% critical value. Uses a
        large sample so the asymptotic critical value applies."""
        big = data.generate(seed=11, n_id=16, samples_per_id=40, size=16)
        n = len(big)
        crit = 1.63 / np.sqrt(n)  # asymptotic 1% point of the KS statistic
        for col in range(big.factors.shape[1]):
            x = np.sort(big.factors[:, col].astype(np.float64))
            cdf = (x + 1.0) / 2.0
            ecdf_hi = np.arange(1, n + 1) / n
            ecdf_lo = np.arange(0, n) / n
            stat = max(np.abs(ecdf_hi - cdf).max(), np.abs(ecdf_lo - cdf).max())
            assert stat < crit, f"factor {data.ATTRIBUTES[col]} KS={stat:.3f}"

    def test_binarized_factors_balanced(self, ds):
        labels = data.binarize_factors(ds)
        frac = labels.mean(axis=0)
        assert ((frac > 0.35) & (frac < 0.65)).all()

    def test_identity_geometry_stratified(self):
        geom = data._identity_geometry(0, 16)
        for d in range(geom.shape[1]):
            col = np.sort(geom[:, d])
            assert np.diff(col).min() > 0  # all distinct per dimension


class TestSplits:
    def test_partition_covers_everything(self, ds):
        tr, va, te = (ds.split_indices(s) for s in ("train", "val", "test"))
        all_idx = np.sort(np.concatenate([tr, va, te]))
        np.testing.assert_array_equal(all_idx, np.arange(len(ds)))

    def test_every_identity_in_every_split(self, ds):
        for split in ("train", "val", "test"):
            _, ids, _ = ds.subset(split)
            assert set(ids.tolist()) == set(range(8))

    def test_expected_proportions(self):
        big = data.generate(seed=0, n_id=2, samples_per_id=50, size=16)
        tr, va, te = (len(big.split_indices(s)) for s in ("train", "val", "test"))
        assert te == 2 * 10
        assert va == 2 * 4
        assert tr == 2 * 36


class TestPairs:
    def test_balance_and_uniqueness(self, ds):
        pairs = data.make_pairs(ds, 40, seed=1)
        assert len(pairs) == 40
        same = [p for p in pairs if p[2]]
        assert len(same) == 20
        keys = {(min(i, j), max(i, j)) for i, j, _ in pairs}
        assert len(keys) == 40

    def test_labels_truthful(self, ds):
        for i, j, same in data.make_pairs(ds, 30, seed=2):
            assert (ds.identities[i] == ds.identities[j]) == same

    def test_pairs_use_test_split_only(self, ds):
        test_set = set(ds.split_indices("test").tolist())
        for i, j, _ in data.make_pairs(ds, 30, seed=3):
            assert i in test_set and j in test_set

    def test_deterministic(self, ds):
        assert data.make_pairs(ds, 20, seed=5) == data.make_pairs(ds, 20, seed=5)

    def test_impossible_request_rejected(self, ds):
        with pytest.raises(ValueError):
            data.make_pairs(ds, 10_000, seed=0)


class TestDisk:
    def test_save_load_roundtrip(self, ds, tmp_path):
        data.save_dataset(ds, tmp_path / "d")
        back = data.load_dataset(tmp_path / "d")
        assert len(back) == len(ds)
        np.testing.assert_array_equal(back.identities, ds.identities)
        np.testing.assert_allclose(back.factors, ds.factors, atol=1e-6)
        assert back.manifest.splits == ds.manifest.splits
        # pixels survive up to 8-bit quantization
        assert np.abs(back.images - ds.images).max() <= 0.5 / 255 + 1e-6

    def test_ingest_directory(self, ds, tmp_path):
        data.save_dataset(ds, tmp_path / "d")
        ing = data.ingest_directory(tmp_path / "d" / "images", size=32)
        assert len(ing) == len(ds)
        assert ing.manifest.n_id == 8
        assert not ing.has_factors
        for split in ("train", "val", "test"):
            assert len(ing.split_indices(split)) > 0

    def test_ingest_label_order_lexicographic(self, tmp_path):
        from PIL import Image
        for name in ("zeta", "alpha", "mid"):
            d = tmp_path / name
            d.mkdir()
            for k in range(3):
                Image.new("RGB", (8, 8), (k * 40, 0, 0)).save(d / f"{k}.png")
        ing = data.ingest_directory(tmp_path, size=16)
        # alpha -> 0, mid -> 1, zeta -> 2
        assert ing.manifest.n_id == 3
        assert set(ing.identities.tolist()) == {0, 1, 2}

    def test_ingest_skips_unreadable_with_warning(self, tmp_path):
        from PIL import Image
        d = tmp_path / "only"
        d.mkdir()
        Image.new("RGB", (8, 8)).save(d / "ok1.png")
        Image.new("RGB", (8, 8)).save(d / "ok2.png")
        (d / "broken.png").write_bytes(b"not a png")
        with pytest.warns(UserWarning, match="unreadable"):
            ing = data.ingest_directory(tmp_path, size=16)
        assert len(ing) == 2

    def test_ingest_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            data.ingest_directory(tmp_path)

    def test_binarize_requires_factors(self, tmp_path):
        from PIL import Image
        d = tmp_path / "a"
        d.mkdir()
        Image.new("RGB", (8, 8)).save(d / "x.png")
        Image.new("RGB", (8, 8)).save(d / "y.png")
        ing = data.ingest_directory(tmp_path, size=16)
        with pytest.raises(ValueError):
            data.binarize_factors(ing)
