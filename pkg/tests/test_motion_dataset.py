"""Corpus construction, splits, and trajectory file round-trips."""
import json

import numpy as np
import pytest

from locobox.motion import (AXIS_SCALES, OBJECT_SCALES, TaskSpec, base_specs,
                            build_corpus, generate_reference, load_manifest,
                            load_reference, save_reference)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    manifest = build_corpus(out, n_base=20, seed=123)
    return out, manifest


def test_corpus_size_and_variants(corpus):
    _, manifest = corpus
    entries = manifest["entries"]
    assert len(entries) == 20 * len(AXIS_SCALES) * len(OBJECT_SCALES) == 120
    combos = {(e["base_id"], tuple(e["axis_scale"]), e["object_scale"])
              for e in entries}
    assert len(combos) == 120


def test_corpus_covers_all_task_kinds(corpus):
    _, manifest = corpus
    kinds = {e["task_kind"] for e in manifest["entries"]}
    assert kinds == {"stand", "lift", "push", "reposition", "carry"}


def test_split_is_disjoint_and_nonempty(corpus):
    _, manifest = corpus
    ids = {e["file"] for e in manifest["entries"] if e["split"] == "id"}
    oods = {e["file"] for e in manifest["entries"] if e["split"] == "ood"}
    assert ids and oods
    assert not ids & oods
    assert len(ids) + len(oods) == 120


def test_held_out_bases_are_fully_ood(corpus):
    _, manifest = corpus
    held = set(manifest["held_out_bases"])
    assert len(held) == 4
    for e in manifest["entries"]:
        if e["base_id"] in held:
            assert e["split"] == "ood"


def test_split_is_stable_under_seed(tmp_path):
    a = build_corpus(tmp_path / "a", n_base=6, seed=9)
    b = build_corpus(tmp_path / "b", n_base=6, seed=9)
    for ea, eb in zip(a["entries"], b["entries"]):
        assert ea["file"] == eb["file"]
        assert ea["split"] == eb["split"]
    ra = load_reference((tmp_path / "a") / a["entries"][0]["file"])
    rb = load_reference((tmp_path / "b") / b["entries"][0]["file"])
    assert np.array_equal(ra.link_pos, rb.link_pos)
    assert ra.text_label == rb.text_label


def test_manifest_written_to_disk(corpus):
    out, manifest = corpus
    on_disk = load_manifest(out)
    assert on_disk == manifest
    raw = json.loads((out / "manifest.json").read_text())
    assert raw["seed"] == 123


def test_every_listed_file_loads(corpus):
    out, manifest = corpus
    for e in manifest["entries"][::13]:
        ref = load_reference(out / e["file"])
        assert ref.task_kind == e["task_kind"]
        assert ref.text_label == e["text_label"]
        assert ref.n_frames > 30


def test_base_specs_deterministic():
    a = base_specs(np.random.default_rng(4), 10)
    b = base_specs(np.random.default_rng(4), 10)
    assert [s.task_kind for s in a] == [s.task_kind for s in b]
    assert all(sa.box_size == sb.box_size for sa, sb in zip(a, b))
    assert all(sa.goal_pose == sb.goal_pose for sa, sb in zip(a, b))


def test_file_round_trip(tmp_path):
    spec = TaskSpec("push", 0.44, (0.62, 0.22, 0.0), (1.12, 0.22, 0.0), 8.0)
    ref = generate_reference(spec, np.random.default_rng(2))
    path = save_reference(ref, tmp_path / "probe")
    assert path.name.endswith(".traj.npz")
    out = load_reference(path)
    assert np.array_equal(out.link_pos, ref.link_pos)
    assert np.array_equal(out.link_vel, ref.link_vel)
    assert np.array_equal(out.contact, ref.contact)
    assert np.array_equal(out.obj_pose, ref.obj_pose)
    assert np.array_equal(out.joint_pos, ref.joint_pos)
    assert out.anchors == ref.anchors
    assert out.correspondence == ref.correspondence
    assert out.fps == ref.fps
    assert out.box_size == ref.box_size
    assert out.leg_length == ref.leg_length
    assert out.text_label == ref.text_label
    assert out.task_kind == ref.task_kind
    assert out.embodiment == ref.embodiment


def test_unknown_schema_rejected(tmp_path):
    spec = TaskSpec("stand", 0.39, (2.0, 0.195, 0.0), (2.0, 0.195, 0.0), 3.0)
    ref = generate_reference(spec, np.random.default_rng(0))
    path = save_reference(ref, tmp_path / "probe")
    data = dict(np.load(path))
    header = json.loads(bytes(data["header"]).decode())
    header["schema"] = 999
    data["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    np.savez_compressed(path, **data)
    with pytest.raises(ValueError):
        load_reference(path)
