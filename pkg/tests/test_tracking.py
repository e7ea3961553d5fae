import numpy as np
import pytest

from evpercept.tracking import (Association, AssociationGate, TrackerConfig, TrackOrderError, TrackState, Tracker,
                                associate, init_track, predict, process_noise, transition, update, write_track_log)


def state(x, P=None, t=0.0):
    return TrackState(np.asarray(x, float), np.eye(6) if P is None else P, t)


def truth(t, p0=(20.0, 150.0), v0=(480.0, -260.0), a=(-30.0, 400.0)):
    t = np.asarray(t)[..., None]
    return np.asarray(p0) + np.asarray(v0) * t + 0.5 * np.asarray(a) * t**2


def test_predict_examples():
    s = state([3, 4, 1, 2, 5, 6])
    same = predict(s, 0.0)
    np.testing.assert_array_equal(same.x, s.x)
    np.testing.assert_allclose(same.P, s.P)
    np.testing.assert_allclose(predict(state([0, 0, 10, 0, 0, 0]), 0.1).x[:2], [1, 0])
    out = predict(state([0, 0, 0, 0, 2, 0]), 1.0)
    np.testing.assert_allclose(out.x[:4], [1, 0, 2, 0])


def test_predict_into_past_rejected():
    with pytest.raises(TrackOrderError):
        predict(state(np.zeros(6), t=1.0), 0.5)


def test_transition_and_noise_structure():
    F = transition(0.2)
    np.testing.assert_allclose(F @ [1, 2, 3, 4, 5, 6], [1 + 0.6 + 0.1, 2 + 0.8 + 0.12, 3 + 1.0, 4 + 1.2, 5, 6])
    Q = process_noise(0.1, 1e3)
    assert np.allclose(Q, Q.T) and np.linalg.eigvalsh(Q).min() > -1e-12
    np.testing.assert_array_equal(process_noise(0.0, 1e3), 0)


def test_update_zero_innovation_keeps_mean():
    s = state([10, 20, 30, 40, 0, 0], np.diag([25.0, 25, 1e4, 1e4, 2.5e5, 2.5e5]), t=0.0)
    pred = predict(s, 0.05)
    post = update(s, pred.x[:2], 0.05)
    np.testing.assert_allclose(post.x, pred.x, atol=1e-9)
    assert np.trace(post.P) <= np.trace(pred.P)


def test_perfect_measurement_pins_position():
    s = state([0, 0, 0, 0, 0, 0], np.diag([25.0, 25, 1e4, 1e4, 2.5e5, 2.5e5]))
    post = update(s, [7.0, -3.0], 0.01, meas_sigma=1e-9)
    np.testing.assert_allclose(post.x[:2], [7, -3], atol=1e-6)


def test_noiseless_recovery_after_three_updates():
    cfg = TrackerConfig(jerk_psd=0.0, meas_sigma=0.0)
    times = [0.0, 0.025, 0.05, 0.075]  # initialization, then three updates
    trk = Tracker(cfg)
    for t in times:
        trk.step(truth(t), t)
    x = trk.track.x
    assert trk.track.n_updates == 4
    np.testing.assert_allclose(x[:2], truth(0.075), rtol=1e-9, atol=1e-6)
    np.testing.assert_allclose(x[2:4], np.array([480.0, -260.0]) + np.array([-30.0, 400.0]) * 0.075, rtol=1e-6)
    np.testing.assert_allclose(x[4:6], [-30.0, 400.0], rtol=1e-6)


def test_noisy_constant_acceleration_tracking():
    rng = np.random.default_rng(0)
    times = np.arange(50) * 0.01
    trk = Tracker(TrackerConfig(meas_sigma=1.0))
    errs = []
    for t in times:
        assert trk.step(truth(t) + rng.normal(0, 1.0, 2), t) in (Association.NEW_TRACK, Association.ACCEPT)
        errs.append(trk.track.x[:2] - truth(t))
    rmse = np.sqrt(np.mean(np.sum(np.square(errs[10:]), axis=1)))
    assert rmse < 1.0
    v_true = np.array([480.0, -260.0]) + np.array([-30.0, 400.0]) * times[-1]
    assert np.linalg.norm(trk.track.x[2:4] - v_true) < 0.1 * np.linalg.norm(v_true)


def test_association_gate():
    gate = AssociationGate(0.1, 50.0)
    s = state([0, 0, 0, 0, 0, 0], t=0.0)
    assert associate(None, [0, 0], 0.0, gate) is Association.NEW_TRACK
    assert associate(s, [0, 0], 10.0, gate) is Association.NEW_TRACK
    assert associate(s, [1, 0], 0.03, gate) is Association.ACCEPT
    assert associate(s, [50.0, 0], 0.03, gate) is Association.ACCEPT  # closed gate
    assert associate(s, [50.01, 0], 0.03, gate) is Association.REJECT
    with pytest.raises(ValueError):
        AssociationGate(0.0, 1.0)


def test_gate_uses_predicted_position():
    s = state([0, 0, 1000, 0, 0, 0], t=0.0)
    assert associate(s, [100, 0], 0.1, AssociationGate(0.1, 5.0)) is Association.ACCEPT


def test_misses_open_a_new_track():
    trk = Tracker(TrackerConfig(miss_limit=2))
    assert trk.step([0, 0], 0.0) is Association.NEW_TRACK
    assert trk.step([500, 0], 0.01) is Association.REJECT
    assert trk.step([500, 0], 0.02) is Association.REJECT
    assert trk.step([500, 0], 0.03) is Association.NEW_TRACK
    assert trk.track_id == 1


def test_covariance_stays_symmetric_psd():
    rng = np.random.default_rng(1)
    s = init_track([50, 50], 0.0)
    t = 0.0
    for _ in range(1000):
        t += rng.uniform(0, 0.05)
        if rng.random() < 0.5:
            s = predict(s, t)
        else:
            s = update(s, s.x[:2] + rng.normal(0, 3, 2), t)
        assert np.abs(s.P - s.P.T).max() < 1e-9
        assert np.linalg.eigvalsh(s.P).min() > -1e-9


def test_predicted_position_both_directions():
    trk = Tracker()
    trk.track = state([10, 0, 100, 0, 0, 0], t=1.0)
    np.testing.assert_allclose(trk.predicted_position(1.1), [20, 0])
    np.testing.assert_allclose(trk.predicted_position(0.95), [5, 0])


def test_track_log(tmp_path):
    s = init_track([1.5, 2.5], 0.25)
    write_track_log(tmp_path / "tracks.csv", [s])
    lines = (tmp_path / "tracks.csv").read_text().splitlines()
    assert lines[0] == "# t,x,y,vx,vy,ax,ay,trace(P)"
    vals = [float(v) for v in lines[1].split(",")]
    assert vals[:3] == [0.25, 1.5, 2.5]
    assert vals[-1] == pytest.approx(np.trace(s.P))
