"""Synthetic clip generator: determinism, scenario structure, ground truth."""

import numpy as np
import pytest

from avtk import synthdata
from avtk.rng import make_rng
from avtk.synthdata import (DataError, DatasetConfig, ObjectSpec, SceneSpec,
                            class_audio_table, generate_case1, generate_case2,
                            generate_dataset, generate_easy, render)


def test_generation_is_deterministic():
    a, ma = generate_dataset(11, 12)
    b, mb = generate_dataset(11, 12)
    assert ma == mb
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.frames, y.frames)
        np.testing.assert_array_equal(x.audio, y.audio)
        np.testing.assert_array_equal(x.gt, y.gt)


def test_different_seeds_differ():
    a, _ = generate_dataset(1, 10)
    b, _ = generate_dataset(2, 10)
    assert not np.array_equal(a[0].frames, b[0].frames)


def test_split_fractions_and_type_mix():
    _, m = generate_dataset(5, 40, mix=(0.4, 0.3, 0.3))
    assert sorted(m["splits"]["train"] + m["splits"]["val"] + m["splits"]["test"]) \
        == list(range(40))
    assert abs(len(m["splits"]["train"]) - 28) <= 2
    assert m["types"].count("easy") == 16
    assert m["types"].count("case1") == 12
    assert m["types"].count("case2") == 12
    # stratified: every split carries every clip type in ~mix proportion
    for name, idx in m["splits"].items():
        counts = {t: sum(1 for i in idx if m["types"][i] == t) for t in set(m["types"])}
        assert min(counts.values()) >= 1, (name, counts)
        frac = counts["easy"] / len(idx)
        assert 0.25 <= frac <= 0.55, (name, counts)


def test_audio_table_is_unit_norm_and_shared():
    cfg = DatasetConfig()
    t1 = class_audio_table(cfg, 9)
    t2 = class_audio_table(cfg, 9)
    assert set(t1) == set(range(1, cfg.num_classes))
    for c, v in t1.items():
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(v, t2[c])


def test_gt_marks_only_sounding_objects():
    cfg = DatasetConfig()
    rng = make_rng(0)
    table = class_audio_table(cfg, 0)
    spec = generate_easy(rng, cfg, table)
    sample = render(spec)
    for t in range(cfg.num_frames):
        sounding = {o.class_id for o, sch in zip(spec.objects, spec.schedule) if sch[t]}
        present = set(np.unique(sample.gt[t])) - {0}
        assert present <= sounding


def test_audio_contains_sounding_descriptors():
    cfg = DatasetConfig(noise_level=0.0)
    rng = make_rng(3)
    table = class_audio_table(cfg, 3)
    spec = generate_easy(rng, cfg, table)
    sample = render(spec)
    for t in range(cfg.num_frames):
        want = np.zeros(cfg.audio_dim)
        for o, sch in zip(spec.objects, spec.schedule):
            if sch[t]:
                want += table[o.class_id]
        np.testing.assert_allclose(sample.audio[t], want, atol=1e-6)


def test_case1_structure():
    cfg = DatasetConfig()
    rng = make_rng(1)
    table = class_audio_table(cfg, 1)
    for _ in range(20):
        spec = generate_case1(rng, cfg, table)
        assert len(spec.objects) == 2
        o1, o2 = spec.objects
        assert o1.class_id == o2.class_id and o1.shape == o2.shape
        gap = np.hypot(o1.center[0] - o2.center[0], o1.center[1] - o2.center[1])
        assert gap <= 1.5 * (o1.radius + o2.radius) + 1e-9
        sched = np.asarray(spec.schedule)
        np.testing.assert_array_equal(sched.sum(axis=0), np.ones(cfg.num_frames))


def test_case2_has_both_transition_kinds():
    cfg = DatasetConfig()
    rng = make_rng(2)
    table = class_audio_table(cfg, 2)
    for _ in range(20):
        spec = generate_case2(rng, cfg, table)
        diff = np.diff(np.asarray(spec.schedule[0], dtype=int))
        assert (diff == 1).any() and (diff == -1).any()


def test_case2_needs_three_frames():
    cfg = DatasetConfig(num_frames=2)
    with pytest.raises(DataError):
        generate_case2(make_rng(0), cfg, class_audio_table(cfg, 0))


def test_sounding_brightness_cue():
    cfg = DatasetConfig(pixel_noise=0.0)
    table = class_audio_table(cfg, 0)
    obj = ObjectSpec(class_id=1, shape="disk", color=(0.5, 0.5, 0.5),
                     center=(32, 32), radius=10)
    for state, factor in ((True, 1.0 + cfg.cue_strength), (False, 1.0)):
        spec = SceneSpec(canvas=(64, 64), num_frames=2, objects=[obj],
                         schedule=[[state, True]], audio_table=table,
                         pixel_noise=0.0, cue_strength=cfg.cue_strength)
        sample = render(spec)
        np.testing.assert_allclose(sample.frames[0, 32, 32], 0.5 * factor, atol=1e-6)


def test_scene_spec_json_round_trip():
    cfg = DatasetConfig()
    spec = generate_easy(make_rng(4), cfg, class_audio_table(cfg, 4))
    back = SceneSpec.from_json(spec.to_json())
    np.testing.assert_array_equal(render(spec).frames, render(back).frames)


def test_save_load_round_trip(tmp_path):
    samples, manifest = generate_dataset(6, 10)
    synthdata.save_dataset(tmp_path, samples, manifest)
    loaded, types, ids = synthdata.load_dataset(tmp_path)
    assert len(loaded) == 10 and types == manifest["types"] and ids == list(range(10))
    np.testing.assert_array_equal(loaded[3].frames, samples[3].frames)
    np.testing.assert_array_equal(loaded[3].gt, samples[3].gt)
    val, _, vids = synthdata.load_dataset(tmp_path, "val")
    assert vids == manifest["splits"]["val"]


def test_validation_errors():
    with pytest.raises(DataError):
        generate_dataset(0, 5)
    with pytest.raises(DataError):
        generate_dataset(0, 20, mix=(0.5, 0.5, 0.5))
    with pytest.raises(DataError):
        ObjectSpec(class_id=1, shape="disk", color=(1, 0, 0), center=(5, 5), radius=1)
    with pytest.raises(DataError):
        ObjectSpec(class_id=1, shape="hexagon", color=(1, 0, 0), center=(5, 5), radius=5)
