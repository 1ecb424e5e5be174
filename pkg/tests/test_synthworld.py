"""Synthetic world: feature oracle, scenes, proposals, serialization."""
import math

import numpy as np
import pytest

from sfodkit.geometry import BBox
from sfodkit.rng import child_rng, derive_int
from sfodkit.synthworld import (DomainConfig, Scene, clean_feature,
                                extract_feature, extract_features,
                                generate_dataset, generate_proposals,
                                load_dataset, make_world, save_dataset,
                                scene_from_line, scene_to_line)


def small_world(**kw):
    base = dict(num_categories=2, feature_dim=4)
    base.update(kw)
    return make_world(0, **base)


def test_view_sigmas_add_in_quadrature():
    w = small_world(feature_noise_sigma=0.3, weak_aug_sigma=0.4, strong_aug_sigma=0.5)
    # clean view still carries the per-box extraction noise
    assert w.view_sigma("clean") == 0.3
    assert w.view_sigma("weak") == math.hypot(0.3, 0.4) == 0.5
    assert w.view_sigma("strong") == math.hypot(0.3, 0.5)
    with pytest.raises(ValueError):
        w.view_sigma("blurry")


def test_clean_feature_overlap_mixture():
    w = small_world()
    sc = Scene(objects=[(0, BBox(0, 0, 10, 10))], domain="source", seed=5)
    # half-overlap box: 0.5 * prototype + 0.5 * background
    got = clean_feature(w, sc, BBox(0, 0, 10, 5))
    assert np.array_equal(got, 0.5 * w.prototypes[0] + 0.5 * w.prototypes[2])
    # exact box: pure prototype; far box: pure background
    assert np.array_equal(clean_feature(w, sc, BBox(0, 0, 10, 10)), w.prototypes[0])
    assert np.array_equal(clean_feature(w, sc, BBox(50, 50, 60, 60)), w.prototypes[2])


def test_target_scenes_are_offset():
    w = small_world()
    box = BBox(0, 0, 10, 10)
    src = Scene(objects=[(0, box)], domain="source", seed=5)
    tgt = Scene(objects=[(0, box)], domain="target", seed=5)
    assert np.array_equal(clean_feature(w, tgt, box),
                          clean_feature(w, src, box) + w.domain_offset)
    assert np.linalg.norm(w.domain_offset) == pytest.approx(2.25, abs=1e-12)


def test_offset_zero_and_span_mix_validation():
    w0 = make_world(0, num_categories=2, feature_dim=4, domain_offset_scale=0.0)
    assert np.array_equal(w0.domain_offset, np.zeros(4))
    with pytest.raises(ValueError):
        make_world(0, offset_span_mix=1.5)


def test_extract_noise_stream_fixed_shape():
    # sigma = 0 still consumes one d-sized draw, so streams stay aligned
    w0 = small_world(feature_noise_sigma=0.0)
    sc = Scene(objects=[(0, BBox(0, 0, 10, 10))], domain="source", seed=5)
    r1 = child_rng(7, "x")
    f = extract_feature(w0, sc, BBox(0, 0, 10, 10), "clean", r1)
    assert np.array_equal(f, clean_feature(w0, sc, BBox(0, 0, 10, 10)))
    r2 = child_rng(7, "x")
    r2.standard_normal(4)
    assert np.array_equal(r1.standard_normal(3), r2.standard_normal(3))


def test_extract_features_batch_matches_single():
    w = small_world()
    sc = Scene(objects=[(1, BBox(5, 5, 30, 30))], domain="target", seed=2)
    boxes = [BBox(0, 0, 10, 10), BBox(5, 5, 30, 30)]
    batch = extract_features(w, sc, boxes, "weak", child_rng(0, "f"))
    single_rng = child_rng(0, "f")
    singles = np.stack([extract_feature(w, sc, b, "weak", single_rng) for b in boxes])
    assert np.array_equal(batch, singles)


def test_generate_proposals_jitter_zero_recovers_gt():
    w = small_world()
    sc = Scene(objects=[(0, BBox(0, 0, 10, 10)), (1, BBox(40, 40, 60, 60))],
               domain="source", seed=1)
    props = generate_proposals(w, sc, 4, 0, 0.0, child_rng(1, "p"))
    assert [p.origin for p in props] == ["jittered-gt"] * 4
    # round-robin over the two objects
    assert [p.box for p in props] == [BBox(0, 0, 10, 10), BBox(40, 40, 60, 60)] * 2
    with pytest.raises(ValueError):
        generate_proposals(w, sc, -1, 4, 1.0, child_rng(1, "p"))


def test_generate_proposals_random_within_extent():
    w = small_world()
    sc = Scene(objects=[(0, BBox(0, 0, 10, 10))], domain="source", seed=1)
    props = generate_proposals(w, sc, 0, 20, 6.0, child_rng(2, "p"))
    assert len(props) == 20 and all(p.origin == "random" for p in props)
    for p in props:
        assert 0 <= p.box.x1 < p.box.x2 <= w.scene_extent[0]
        assert 0 <= p.box.y1 < p.box.y2 <= w.scene_extent[1]


def test_scene_validation_and_line_round_trip():
    with pytest.raises(ValueError):
        Scene(objects=[(0, BBox(0, 0, 1, 1))], domain="moon", seed=0)
    with pytest.raises(ValueError):
        Scene(objects=[], domain="source", seed=0)
    sc = Scene(objects=[(3, BBox(0.25, 1e-3, 10.5, 99.0)), (0, BBox(1, 2, 3, 4))],
               domain="target", seed=123)
    assert scene_from_line(scene_to_line(sc)) == sc


def test_domain_config_validation():
    protos = np.eye(3, 4)
    ok = dict(num_categories=2, feature_dim=4, prototypes=protos,
              domain_offset=np.zeros(4), feature_noise_sigma=0.1,
              weak_aug_sigma=0.1, strong_aug_sigma=0.2, scene_extent=(100.0, 100.0))
    DomainConfig(**ok)
    with pytest.raises(ValueError):
        DomainConfig(**{**ok, "prototypes": np.eye(2, 4)})  # needs C+1 rows
    with pytest.raises(ValueError):
        DomainConfig(**{**ok, "prototypes": np.vstack([protos[0], protos[0], protos[2]])})
    with pytest.raises(ValueError):
        DomainConfig(**{**ok, "strong_aug_sigma": 0.05})  # weaker than weak
    with pytest.raises(ValueError):
        DomainConfig(**{**ok, "min_objects": 4, "max_objects": 2})
    assert DomainConfig(**ok).background_index == 2


def test_dataset_seeds_and_counts():
    w = small_world()
    ds = generate_dataset(w, 3, 2, 11)
    assert [s.seed for s in ds.source] == [derive_int(11, "source", i) for i in range(3)]
    assert [s.seed for s in ds.target] == [derive_int(11, "target", i) for i in range(2)]
    assert len(ds.eval) == 1  # max(1, n_target // 2)
    assert {s.domain for s in ds.source} == {"source"}
    assert {s.domain for s in ds.target + ds.eval} == {"target"}
    for sc in ds.source + ds.target:
        assert w.min_objects <= len(sc.objects) <= w.max_objects


def test_dataset_save_load_round_trip(tmp_path):
    ds = generate_dataset(small_world(), 3, 2, 7)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.source == ds.source
    assert back.target == ds.target
    assert back.eval == ds.eval
    assert np.array_equal(back.world.prototypes, ds.world.prototypes)
    assert np.array_equal(back.world.domain_offset, ds.world.domain_offset)
    assert back.world.scene_extent == ds.world.scene_extent


def test_worlds_differ_by_seed_not_by_call():
    a = make_world(0)
    b = make_world(0)
    c = make_world(1)
    assert np.array_equal(a.prototypes, b.prototypes)
    assert np.array_equal(a.domain_offset, b.domain_offset)
    assert not np.array_equal(a.prototypes, c.prototypes)
