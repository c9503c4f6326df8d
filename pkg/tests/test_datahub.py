"""Cache format round-trips, episode determinism, generator structure."""

import numpy as np
import pytest

from mcrfm.datahub import (
    HEADER,
    DataFormatError,
    EpisodeError,
    FeatureCache,
    HierarchySpec,
    cache_hash,
    episode_views,
    generate_hierarchy,
    hierarchy_class_means,
    load_episode,
    read_cache,
    sample_episode,
    save_episode,
    write_cache,
)

RNG = np.random.default_rng(3)


def small_cache(n_per_class=8, k=3, d=16):
    labels = np.repeat(np.arange(k), n_per_class).astype(np.uint32)
    feats = RNG.normal(size=(n_per_class * k, d)).astype(np.float32)
    return FeatureCache(feats, labels, [f"c{i}" for i in range(k)], {"kind": "test"})


class TestCacheFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        cache = small_cache()
        path = write_cache(tmp_path / "x.fvec", cache)
        loaded = read_cache(path)
        assert np.array_equal(loaded.features, cache.features)
        assert np.array_equal(loaded.labels, cache.labels)
        assert loaded.class_names == cache.class_names
        assert loaded.provenance == cache.provenance

    def test_file_size_arithmetic(self, tmp_path):
        n, d, k = 50, 12, 5
        labels = np.repeat(np.arange(k), 10).astype(np.uint32)
        cache = FeatureCache(RNG.normal(size=(n, d)).astype(np.float32), labels,
                             [f"c{i}" for i in range(k)], {})
        path = write_cache(tmp_path / "x.fvec", cache)
        assert path.stat().st_size == HEADER.size + n * d * 4 + n * 4

    def test_truncated_file_names_byte_counts(self, tmp_path):
        cache = small_cache()
        path = write_cache(tmp_path / "x.fvec", cache)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(DataFormatError, match="expected"):
            read_cache(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.fvec"
        path.write_bytes(b"WRONG" + b"\0" * 40)
        with pytest.raises(DataFormatError, match="magic"):
            read_cache(path)

    def test_label_out_of_range_rejected(self):
        with pytest.raises(DataFormatError, match="out of range"):
            FeatureCache(np.zeros((4, 2), dtype=np.float32),
                         np.array([0, 1, 2, 5], dtype=np.uint32), ["a", "b", "c"], {})


class TestEpisodes:
    def test_deterministic_resampling(self, tmp_path):
        cache = small_cache()
        path = write_cache(tmp_path / "x.fvec", cache)
        a = sample_episode(cache, path, k_shot=4, seed=42)
        b = sample_episode(cache, path, k_shot=4, seed=42)
        assert a == b

    def test_different_seeds_differ(self, tmp_path):
        cache = small_cache()
        path = write_cache(tmp_path / "x.fvec", cache)
        a = sample_episode(cache, path, k_shot=4, seed=42)
        b = sample_episode(cache, path, k_shot=4, seed=43)
        assert a.support != b.support

    @pytest.mark.parametrize("k_shot", [1, 4, 16])
    def test_shot_presets(self, tmp_path, k_shot):
        cache = small_cache(n_per_class=20)
        path = write_cache(tmp_path / "x.fvec", cache)
        ep = sample_episode(cache, path, k_shot=k_shot, seed=7)
        for cls, idx in ep.support.items():
            assert len(idx) == k_shot
            assert all(cache.labels[i] == cls for i in idx)

    def test_support_query_partition(self, tmp_path):
        cache = small_cache()
        path = write_cache(tmp_path / "x.fvec", cache)
        ep = sample_episode(cache, path, k_shot=3, seed=1)
        sup = set(map(int, ep.support_indices))
        qry = set(ep.query)
        assert sup & qry == set()
        assert sup | qry == set(range(len(cache.labels)))

    def test_class_too_small_names_class(self, tmp_path):
        cache = small_cache(n_per_class=4)
        path = write_cache(tmp_path / "x.fvec", cache)
        with pytest.raises(EpisodeError, match="class 0"):
            sample_episode(cache, path, k_shot=4, seed=1)

    def test_persistence_round_trip(self, tmp_path):
        cache = small_cache()
        path = write_cache(tmp_path / "x.fvec", cache)
        ep = sample_episode(cache, path, k_shot=2, seed=5)
        ep_path = save_episode(tmp_path / "ep.json", ep)
        assert load_episode(ep_path) == ep

    def test_views_shapes(self, tmp_path):
        cache = small_cache(n_per_class=8, k=3)
        path = write_cache(tmp_path / "x.fvec", cache)
        ep = sample_episode(cache, path, k_shot=2, seed=5)
        sx, sy, qx, qy = episode_views(cache, ep)
        assert sx.shape == (6, 16) and sx.dtype == np.float64
        assert qx.shape == (18, 16)
        assert np.array_equal(np.bincount(sy), [2, 2, 2])

    def test_corrupt_episode_file(self, tmp_path):
        p = tmp_path / "ep.json"
        p.write_text("{not json")
        with pytest.raises(DataFormatError):
            load_episode(p)


class TestHierarchyGenerator:
    def test_leaf_class_count(self):
        spec = HierarchySpec(depth=2, branching=3, dim=32, level_scales=(4.0, 1.0),
                             nuisance_dims=8)
        cache = generate_hierarchy(spec, n_per_class=3, seed=0)
        assert cache.num_classes == 9
        assert cache.features.shape == (27, 32)

    def test_zero_noise_makes_identical_samples(self):
        spec = HierarchySpec(dim=32, noise_scale=0.0, nuisance_dims=8)
        cache = generate_hierarchy(spec, n_per_class=4, seed=0)
        feats = cache.float64_features()
        for k in range(cache.num_classes):
            rows = feats[cache.labels == k]
            assert np.allclose(rows, rows[0], atol=1e-6)  # float32 storage

    def test_deterministic(self):
        spec = HierarchySpec(dim=32, nuisance_dims=8)
        a = generate_hierarchy(spec, n_per_class=5, seed=3)
        b = generate_hierarchy(spec, n_per_class=5, seed=3)
        assert np.array_equal(a.features, b.features)

    def test_sibling_classes_closer_than_cross_branch(self):
        # brute-force pairwise class-mean distances; decaying scales mean
        # same-parent leaves sit much closer than cross-branch leaves
        margins = []
        for seed in range(5):
            spec = HierarchySpec(dim=64, level_scales=(4.0, 1.0), noise_scale=0.5,
                                 nuisance_dims=16, rotation_seed=seed)
            means = hierarchy_class_means(spec, seed)
            b = spec.branching
            intra, cross = [], []
            for i in range(spec.num_classes):
                for j in range(i + 1, spec.num_classes):
                    dist = np.linalg.norm(means[i] - means[j])
                    (intra if i // b == j // b else cross).append(dist)
            margins.append(np.mean(cross) / np.mean(intra))
        assert min(margins) >= 1.2  # at least a 20% margin

    def test_sidecar_records_spec(self, tmp_path):
        spec = HierarchySpec(dim=32, nuisance_dims=8)
        cache = generate_hierarchy(spec, n_per_class=3, seed=1)
        path = write_cache(tmp_path / "g.fvec", cache)
        loaded = read_cache(path)
        assert loaded.provenance["kind"] == "synthetic-hierarchy"
        assert loaded.provenance["spec"]["level_scales"] == [8.0, 1.0]
        assert loaded.provenance["generator_seed"] == 1

    def test_cache_hash_changes_with_content(self, tmp_path):
        a = write_cache(tmp_path / "a.fvec", small_cache())
        spec = HierarchySpec(dim=16, nuisance_dims=4)
        b = write_cache(tmp_path / "b.fvec", generate_hierarchy(spec, 4, 0))
        assert cache_hash(a) != cache_hash(b)
