import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import contrastive_bruteforce, cross_bruteforce, paired_bruteforce
from xmodal4d import autodiff as ad
from xmodal4d.autodiff import Tensor
from xmodal4d.losses import (
    EmptyLossWarning,
    LossConfig,
    consistency_adv,
    consistency_lag,
    distill_loss,
    tac,
    task_loss,
    temporal_contrastive,
    total_loss,
)

nonzero = st.floats(0.1, 3, allow_nan=False) | st.floats(-3, -0.1, allow_nan=False)


def test_contrastive_fully_symmetric_closed_form():
    loss = temporal_contrastive(Tensor(np.ones((4, 3))), [0, 0, 0, 0]).item()
    assert abs(loss - 4 * math.log(3)) < 1e-10


def test_contrastive_skips_anchor_without_positive():
    feats = np.random.default_rng(0).normal(size=(4, 3))
    loss = temporal_contrastive(Tensor(feats), [0, 0, 1, 2]).item()
    assert math.isfinite(loss)
    assert abs(loss - contrastive_bruteforce(feats, [0, 0, 1, 2], 0.07)) < 1e-10


@pytest.mark.parametrize("seed", range(50))
def test_contrastive_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    t = int(rng.integers(1, 9))
    feats = rng.normal(size=(2 * t, int(rng.integers(2, 6))))
    labels = np.tile(rng.integers(0, 3, t), 2)
    tau = float(rng.uniform(0.05, 1.0))
    got = temporal_contrastive(Tensor(feats), labels, tau).item()
    assert abs(got - contrastive_bruteforce(feats, labels, tau)) < 1e-10


@pytest.mark.parametrize("seed", range(50))
def test_consistency_matches_bruteforce(seed):
    rng = np.random.default_rng(1000 + seed)
    t = int(rng.integers(2, 9))
    a, b = rng.normal(size=(t, 4)), rng.normal(size=(t, 4))
    tau = float(rng.uniform(0.05, 1.0))
    assert abs(consistency_adv(Tensor(a), Tensor(b), tau).item() - paired_bruteforce(a, b, tau, 1)) < 1e-10
    assert abs(consistency_lag(Tensor(a), Tensor(b), tau).item() - paired_bruteforce(a, b, tau, -1)) < 1e-10


@pytest.mark.parametrize("seed", range(20))
def test_cross_reading_matches_bruteforce(seed):
    rng = np.random.default_rng(2000 + seed)
    t = int(rng.integers(2, 9))
    a, b = rng.normal(size=(t, 3)), rng.normal(size=(t, 3))
    tau = float(rng.uniform(0.05, 1.0))
    adv = consistency_adv(Tensor(a), Tensor(b), tau, reading="cross").item()
    lag = consistency_lag(Tensor(a), Tensor(b), tau, reading="cross").item()
    assert abs(adv - cross_bruteforce(a, b, tau, 1)) < 1e-10
    assert abs(lag - cross_bruteforce(a, b, tau, -1)) < 1e-10


@pytest.mark.parametrize("t", [2, 4, 7])
def test_readings_agree_on_closed_forms(t):
    x = Tensor(np.ones((t, 3)))
    expected = (t - 1) * math.log(t - 1)
    assert abs(tac(x, x, reading="cross").item() - expected) < 1e-10


def test_cross_reading_rewards_alignment_over_collapse():
    # unlike the paired reading, matched shifted rows beat identical rows
    base = np.eye(6)
    aligned = consistency_lag(Tensor(base[:-1]), Tensor(base[1:]), 0.07, reading="cross").item()
    collapsed = consistency_lag(Tensor(np.ones((5, 6))), Tensor(np.ones((5, 6))), 0.07, reading="cross").item()
    assert aligned < 1e-5 < 4 * math.log(4) - 1e-9 < collapsed + 1e-9
    with pytest.raises(ValueError):
        tac(Tensor(base), Tensor(base), reading="both")


def test_contrastive_invariant_to_row_permutation():
    rng = np.random.default_rng(3)
    feats, labels = rng.normal(size=(8, 3)), np.array([0, 1, 1, 2, 0, 1, 1, 2])
    perm = rng.permutation(8)
    a = temporal_contrastive(Tensor(feats), labels).item()
    b = temporal_contrastive(Tensor(feats[perm]), labels[perm]).item()
    assert a == pytest.approx(b, abs=1e-10)


@pytest.mark.parametrize("fn", [temporal_contrastive, consistency_adv, consistency_lag, tac])
def test_rejects_non_positive_tau(fn):
    x = Tensor(np.ones((4, 2)))
    args = ([0, 0, 1, 1],) if fn is temporal_contrastive else (x,)
    with pytest.raises(ValueError):
        fn(x, *args, tau=0.0)


@pytest.mark.parametrize("fn", [consistency_adv, consistency_lag, tac])
def test_two_frames_give_zero(fn):
    rng = np.random.default_rng(4)
    assert fn(Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 3)))).item() == 0.0


@pytest.mark.parametrize("t", [3, 5, 8])
def test_identical_rows_closed_forms(t):
    x = Tensor(np.ones((t, 3)))
    expected = (t - 1) * math.log(t - 1)
    assert abs(consistency_adv(x, x).item() - expected) < 1e-10
    assert abs(consistency_lag(x, x).item() - expected) < 1e-10
    assert abs(tac(x, x).item() - (expected + expected) / 2) < 1e-10


def test_consistency_errors():
    with pytest.raises(ValueError):
        consistency_adv(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))))
    with pytest.raises(ad.ShapeError):
        consistency_lag(Tensor(np.ones((3, 3))), Tensor(np.ones((4, 3))))


def test_lag_reaches_its_minimum_when_second_leads_by_one_frame():
    # Paired InfoNCE bottoms out at (T-1) ln(T-1) once every pair matches exactly.
    rng = np.random.default_rng(5)
    base = rng.normal(size=(9, 6))
    f_a, f_b = base[:-1], base[1:]  # f_b[i] == f_a[i + 1]
    aligned = consistency_lag(Tensor(f_a), Tensor(f_b), 0.07).item()
    shuffled = consistency_lag(Tensor(f_a), Tensor(rng.permutation(f_b)), 0.07).item()
    assert abs(aligned - 7 * math.log(7)) < 1e-10
    assert shuffled > aligned + 1.0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 3), elements=nonzero), arrays(np.float64, (6, 3), elements=nonzero),
       st.lists(st.integers(0, 2), min_size=3, max_size=3))
def test_losses_non_negative(a, b, labs):
    labels = labs + labs
    assert temporal_contrastive(Tensor(a), labels).item() >= -1e-12
    assert consistency_adv(Tensor(a), Tensor(b)).item() >= -1e-12
    assert consistency_lag(Tensor(a), Tensor(b)).item() >= -1e-12


def test_tac_gradcheck():
    rng = np.random.default_rng(6)
    a = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    assert ad.gradcheck(lambda: tac(a, b, 0.5), [a, b]) < 1e-5


def test_task_loss_examples():
    assert task_loss(Tensor(np.array([[50.0, -50.0], [-50.0, 50.0]])), [0, 1]).item() < 1e-30
    assert abs(task_loss(Tensor(np.zeros((3, 5))), [0, 4, 2]).item() - math.log(5)) < 1e-12
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert task_loss(Tensor(np.zeros((2, 3))), [-1, -1]).item() == 0.0
    assert any(issubclass(w.category, EmptyLossWarning) for w in caught)


def test_task_loss_point_and_video_modes():
    logits = np.random.default_rng(7).normal(size=(2, 4, 3))
    labels = np.array([[0, 1, -1, 2], [2, 2, 0, -1]])
    point = task_loss(Tensor(logits), labels, mode="point").item()
    assert point == pytest.approx(task_loss(Tensor(logits.reshape(8, 3)), labels.reshape(8)).item())
    video = task_loss(Tensor(logits[0]), 1, mode="video").item()
    mean = logits[0].mean(axis=0)
    assert video == pytest.approx(-(mean[1] - np.log(np.exp(mean).sum())), abs=1e-12)
    with pytest.raises(ValueError):
        task_loss(Tensor(logits[0]), [0] * 4, mode="clip")


def test_total_loss_algebra():
    s = lambda v: Tensor(np.array(v))  # noqa: E731
    assert total_loss(s(1.0), s(2.0), s(3.0), s(3.0), 0.5).item() == 6.0
    assert total_loss(s(1.0), s(2.0), s(7.0), s(9.0), 1.0).item() == 10.0
    assert LossConfig().omega == 0.5 and LossConfig().tau == 0.07


@pytest.mark.parametrize("bad", [dict(tau=0.0), dict(omega=1.5), dict(distill_mode="mse")])
def test_loss_config_validation(bad):
    with pytest.raises(ValueError):
        LossConfig(**bad).validate()


@pytest.mark.parametrize("mode", ["l2", "kl", "cosine"])
def test_distill_identical_is_zero(mode):
    x = Tensor(np.random.default_rng(8).normal(size=(4, 3)))
    assert abs(distill_loss(mode, x, x).item()) < 1e-12


def test_distill_cosine_orthogonal_and_kl_gibbs():
    assert distill_loss("cosine", Tensor(np.eye(2)), Tensor(np.eye(2)[::-1].copy())).item() == pytest.approx(1.0)
    rng = np.random.default_rng(9)
    for _ in range(20):
        a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
        assert distill_loss("kl", a, b).item() >= 0.0
    with pytest.raises(ValueError):
        distill_loss("huber", a, b)
    with pytest.raises(ad.ShapeError):
        distill_loss("l2", a, Tensor(np.zeros((3, 3))))
