import json
import os

import numpy as np
import pytest

import brain3d


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    manifest = brain3d.synth_dataset(
        str(root), classes=4, trials_per_class=6, channels=4, samples=8, sigma=0.1, seed=3
    )
    return root, manifest


def test_default_config_carries_the_documented_defaults():
    cfg = json.loads(brain3d.default_config())
    assert cfg["genstage"]["t2i_steps"] == 30
    assert cfg["genstage"]["t2i_guidance"] == 4.5
    assert cfg["genstage"]["texture_resolution"] == 1024
    assert cfg["align"]["temperature"] == 0.07
    assert cfg["views"]["azimuth_step"] == 60.0


def test_prompt_template_is_pinned():
    system, user = brain3d.prompt_template()
    assert system.startswith("You are an expert")
    assert "white background" in user
    assert len(brain3d.prompt_template_hash()) == 64


def test_eeg_round_trip(tmp_path):
    data = np.random.default_rng(0).normal(size=(4, 8)).astype(np.float32)
    path = str(tmp_path / "t.eeg")
    brain3d.write_eeg(path, data)
    back = brain3d.read_eeg(path)
    np.testing.assert_array_equal(back, data)


def test_train_and_encode(dataset, tmp_path):
    _, manifest = dataset
    ckpt = str(tmp_path / "align.ckpt")
    losses = brain3d.train_align(manifest, ckpt, epochs=5, batch_size=4)
    assert len(losses) == 6
    assert losses[-1] < losses[0]

    eeg = np.random.default_rng(1).normal(size=(4, 8)).astype(np.float32)
    z = brain3d.encode_eeg(ckpt, eeg)
    assert z.shape == (16,)
    assert abs(np.linalg.norm(z) - 1.0) < 1e-6


def test_render_views(tmp_path):
    obj = tmp_path / "cube.obj"
    obj.write_text(
        "v -0.5 -0.5 -0.5\nv 0.5 -0.5 -0.5\nv 0.5 -0.5 0.5\nv -0.5 -0.5 0.5\n"
        "v -0.5 0.5 -0.5\nv 0.5 0.5 -0.5\nv 0.5 0.5 0.5\nv -0.5 0.5 0.5\n"
        "f 1 2 3 4\nf 5 8 7 6\nf 1 5 6 2\nf 3 7 8 4\nf 2 6 7 3\nf 4 8 5 1\n"
    )
    views = brain3d.render_views(str(obj), width=64, height=64)
    assert sorted(views) == ["back", "front", "front-left", "front-right", "left", "right"]
    for img in views.values():
        assert img.shape == (64, 64, 3)
        assert (img != 255).any()


def test_metrics():
    rng = np.random.default_rng(2)
    img = (rng.uniform(0, 255, size=(16, 16, 3))).astype(np.uint8)
    assert brain3d.clip_score(img, img) == pytest.approx(1.0, abs=1e-9)
    assert brain3d.lpips(img, img) == pytest.approx(0.0, abs=1e-12)

    feats = rng.normal(size=(64, 4))
    assert brain3d.fid(feats, feats) <= 1e-6

    gt = np.zeros(5)
    gt[2] = 1.0
    views = np.tile(gt, (6, 1))
    mean, std = brain3d.nway_topk(gt, views, n=3, k=1, trials=50, seed=1)
    assert mean == pytest.approx(1.0)
    assert std == pytest.approx(0.0)


def test_run_pipeline_end_to_end(dataset, tmp_path):
    root, manifest = dataset
    cfg = json.loads(brain3d.default_config())
    cfg["dataset"]["manifest"] = manifest
    cfg["orchestrator"]["cache_dir"] = str(tmp_path / "cache")
    cfg["orchestrator"]["out_dir"] = str(tmp_path / "out")
    cfg["views"]["width"] = 48
    cfg["views"]["height"] = 48
    cfg["nway"]["settings"] = [[2, 1], [4, 1]]
    cfg["nway"]["trials"] = 4
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))

    summary = brain3d.run_pipeline(str(cfg_path))
    assert summary["trials_succeeded"] == summary["trials_attempted"] == 24
    assert not summary["failures"]
    assert summary["report_gt"].startswith("# brain3d metrics report")
    assert os.path.exists(tmp_path / "out" / "report_gt.txt")

    # warm rerun performs zero provider calls
    cfg["orchestrator"]["out_dir"] = str(tmp_path / "out2")
    cfg_path.write_text(json.dumps(cfg))
    warm = brain3d.run_pipeline(str(cfg_path))
    assert all(count == 0 for count in warm["provider_calls"].values())
    assert warm["report_gt"] == summary["report_gt"]
