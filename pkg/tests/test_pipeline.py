import numpy as np
import pytest

from lumenfix import convnet
from lumenfix.detect.boxes import BoundingBox, iou
from lumenfix.detect.env import DONE, EMIT, RLConfig, initial_state, rollout_actions, state_key
from lumenfix.detect.pipeline import (
    Detection,
    build_training_matrix,
    classifier_accuracy,
    classify_boxes,
    crop_dataset,
    crop_input,
    crop_resize,
    episode_quality,
    matched_class_accuracy,
    proposal_boxes,
    recognize,
    to_network_input,
    train_classifier,
)
from lumenfix.detect.qlearn import Policy
from lumenfix.detect.scenes import SceneSpec, make_synthetic_scene
from lumenfix.retinex import EnhanceConfig, enhance

SPEC = SceneSpec(placement="centered", min_size=0.4, max_size=0.55, jitter=0.08)
ECFG = EnhanceConfig()


@pytest.fixture(scope="module")
def trained_net():
    scenes = [make_synthetic_scene(SPEC, 300 + i) for i in range(120)]
    net = convnet.Net.init(convnet.default_spec(), 0)
    x, y = crop_dataset(scenes, net, ECFG, proposals_per_instance=5, seed=0)
    train_classifier(net, x, y, epochs=30, lr=0.08, seed=0)
    return net


def emit_policy():
    policy = Policy()
    policy.slot(state_key(initial_state(64, 64), 64, 64, 8))[EMIT] = 1.0
    return policy


def test_network_input_standardised():
    x = to_network_input(np.random.default_rng(0).random((5, 7, 3)))
    assert x.shape == (3, 5, 7)
    assert abs(x.mean()) < 1e-12 and abs(x.std() - 1) < 1e-5


def test_crop_resize_nearest():
    px = np.arange(16 * 16 * 3, dtype=float).reshape(16, 16, 3)
    box = BoundingBox(2, 4, 4, 8)
    out = crop_resize(px, box, 4)
    # rows 4..11 sampled at stride 2, columns 2..5 one to one
    assert np.array_equal(out, px[[5, 7, 9, 11]][:, 2:6])
    assert np.array_equal(crop_resize(px, BoundingBox(0, 0, 16, 16), 16), px)


def test_crop_input_shape():
    net = convnet.Net.init(convnet.default_spec())
    assert crop_input(np.zeros((30, 30, 3)), BoundingBox(1, 1, 9, 20), net).shape == (3, 16, 16)


def test_training_matrix_rows():
    net = convnet.Net.init(convnet.default_spec(), 1)
    imgs = [make_synthetic_scene(SPEC, s).image for s in (1, 2, 1)]
    m = build_training_matrix(imgs, net, ECFG)
    assert (m.m, m.n) == (3, 32)
    assert np.array_equal(m.rows[0], m.rows[2])
    expected = convnet.features(net, to_network_input(enhance(imgs[1], ECFG).pixels))
    assert np.array_equal(m.rows[1], expected)


def test_training_matrix_empty():
    net = convnet.Net.init(convnet.default_spec())
    assert build_training_matrix([], net, ECFG).m == 0


def test_proposals_overlap_their_box():
    rng = np.random.default_rng(0)
    box = BoundingBox(20, 18, 24, 30)
    props = proposal_boxes(box, 64, 64, rng, 20)
    assert len(props) == 20
    assert all(iou(p, box) >= 0.5 and p.fits(64, 64) for p in props)


def test_crop_dataset_labels():
    scenes = [make_synthetic_scene(SceneSpec(n_targets=2), s) for s in range(3)]
    net = convnet.Net.init(convnet.default_spec())
    x, y = crop_dataset(scenes, net, ECFG, proposals_per_instance=3)
    assert x.shape == (6 * 4, 3, 16, 16)
    assert list(y[:4]) == [scenes[0].instances[0].class_id] * 4


def test_oracle_boxes_are_classified_correctly(trained_net):
    scenes = [make_synthetic_scene(SPEC, 900 + i) for i in range(20)]
    correct = 0
    for s in scenes:
        dets = classify_boxes(enhance(s.image, ECFG).pixels, s.boxes, trained_net)
        correct += dets[0].class_id == s.instances[0].class_id
    assert correct >= 19


def test_classifier_training_log(trained_net):
    scenes = [make_synthetic_scene(SPEC, i) for i in range(5)]
    x, y = crop_dataset(scenes, trained_net, ECFG)
    net = trained_net.copy()
    log = train_classifier(net, x, y, epochs=3, lr=0.01)
    assert [e.epoch for e in log] == [0, 1, 2]
    assert log[-1].accuracy == classifier_accuracy(net, x, y)


def test_recognize_with_immediate_done_is_empty(trained_net):
    policy = Policy()
    policy.slot(state_key(initial_state(64, 64), 64, 64, 8))[DONE] = 1.0
    scene = make_synthetic_scene(SPEC, 1)
    res = recognize(scene.image, policy, trained_net, ECFG, RLConfig(), ground_truth=scene.instances)
    assert res.detections == []
    assert res.episode_quality == 0.0  # completion -1 times zero coverage


def test_recognize_scores_sorted_and_quality_optional(trained_net):
    scene = make_synthetic_scene(SPEC, 5)
    cfg = RLConfig(max_steps=6)
    res = recognize(scene.image, emit_policy(), trained_net, ECFG, cfg)
    scores = [d.score for d in res.detections]
    assert res.episode_quality is None
    assert len(scores) >= 1
    assert all(0 < s <= 1 for s in scores)
    assert scores == sorted(scores, reverse=True)


def test_episode_quality_definition():
    scene = make_synthetic_scene(SPEC, 2)
    cfg = RLConfig()
    actions = [EMIT, DONE]
    state, rewards = rollout_actions(actions, scene, cfg)
    q = episode_quality(actions, scene, cfg)
    assert q == pytest.approx(sum(rewards) * state.prev_iou_sum / scene.rho)


def test_matched_class_accuracy():
    scene = make_synthetic_scene(SceneSpec(n_targets=2, placement="uniform"), 4)
    a, b = scene.instances
    dets = [
        Detection(a.box, a.class_id, 0.9),
        Detection(b.box, (b.class_id + 1) % 3, 0.8),
        Detection(BoundingBox(0, 0, 1, 1), 0, 0.5),
    ]
    correct, counted = matched_class_accuracy(dets, scene)
    if iou(a.box, b.box) < 1:
        assert (correct, counted) == (1, 2)
