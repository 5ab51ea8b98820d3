import os

import numpy as np
import pytest

from skelex import data, network, synth, train
from skelex import tensor as T


def small_spec():
    return T.BackboneSpec(stages=(
        T.StageSpec(convs=(T.ConvSpec(3, 6), T.ConvSpec(3, 6)),
                    pool=T.PoolSpec(2, 2)),
        T.StageSpec(convs=(T.ConvSpec(3, 10), T.ConvSpec(3, 10)), pool=None),
    ), in_channels=1)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinyds")
    pairs = synth.generate_synthetic(21, 6, size=64)
    manifest = data.write_dataset(root, pairs, train_count=4,
                                  provenance="synthetic seed=21")
    data.cache_targets(root, manifest)
    return str(root), manifest


def test_zero_iterations_returns_initialization(tiny_dataset):
    root, manifest = tiny_dataset
    cfg = train.TrainConfig(iterations=0, seed=3)
    st = train.train(root, manifest, small_spec(), cfg)
    fresh = network.init_params(small_spec(), seed=3,
                                fusion_lr_mult=cfg.fusion_lr_mult)
    for a, b in zip(st.net.parameters(), fresh.parameters()):
        assert np.array_equal(a.value, b.value)
    assert st.history == []


def test_short_run_checkpoint_roundtrip(tiny_dataset, tmp_path):
    root, manifest = tiny_dataset
    cfg = train.TrainConfig(iterations=4, seed=1, checkpoint_every=2,
                            augment=False)
    st = train.train(root, manifest, small_spec(), cfg,
                     run_dir=str(tmp_path))
    path = tmp_path / "checkpoint.skc"
    assert path.exists()
    net2, meta = train.load_checkpoint(path)
    assert meta["iteration"] == 4
    assert meta["config"]["lr"] == cfg.lr
    for a, b in zip(st.net.parameters(), net2.parameters()):
        assert np.array_equal(a.value, b.value)
    assert (tmp_path / "losses.csv").read_text().startswith(
        "iteration,cls_1,cls_2,reg_1,reg_2,fusion,total")


def test_lambda_zero_bit_identical_to_classification_only(tiny_dataset):
    root, manifest = tiny_dataset
    a = train.train(root, manifest, small_spec(),
                    train.TrainConfig(iterations=12, seed=5, lam=0.0,
                                      model="lmsds"))
    b = train.train(root, manifest, small_spec(),
                    train.TrainConfig(iterations=12, seed=5, lam=0.0,
                                      model="fsds"))
    for ha, hb in zip(a.history, b.history):
        assert ha["total"] == hb["total"]
        assert ha["cls"] == hb["cls"]
        assert ha["fusion"] == hb["fusion"]
        assert ha["reg"] == [0.0, 0.0] and hb["reg"] == [0.0, 0.0]


def test_same_seed_same_losses(tiny_dataset):
    root, manifest = tiny_dataset
    runs = [train.train(root, manifest, small_spec(),
                        train.TrainConfig(iterations=6, seed=9))
            for _ in range(2)]
    assert [h["total"] for h in runs[0].history] == \
        [h["total"] for h in runs[1].history]


def test_resume_matches_uninterrupted(tiny_dataset, tmp_path):
    root, manifest = tiny_dataset
    cfg = train.TrainConfig(iterations=8, seed=2, momentum=0.0,
                            augment=False)
    full = train.train(root, manifest, small_spec(), cfg)
    first = train.train(root, manifest, small_spec(),
                        train.TrainConfig(iterations=4, seed=2, momentum=0.0,
                                          augment=False))
    resumed = train.train(root, manifest, small_spec(), cfg,
                          net=first.net, start_iter=4)
    assert [h["total"] for h in resumed.history] == \
        [h["total"] for h in full.history[4:]]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_and_keeps_checkpoint(tiny_dataset, tmp_path):
    root, manifest = tiny_dataset
    cfg = train.TrainConfig(iterations=60, seed=0, lr=1e9,
                            checkpoint_every=1)
    with pytest.raises(train.TrainingDiverged):
        train.train(root, manifest, small_spec(), cfg,
                    run_dir=str(tmp_path))
    assert (tmp_path / "checkpoint.skc").exists()
    train.load_checkpoint(tmp_path / "checkpoint.skc")


def test_callback_early_stop(tiny_dataset):
    root, manifest = tiny_dataset
    seen = []

    def stop(net, iteration):
        seen.append(iteration)
        return True

    st = train.train(root, manifest, small_spec(),
                     train.TrainConfig(iterations=50, seed=0),
                     callback=stop, callback_every=5)
    assert st.iteration == 5
    assert seen == [5]
