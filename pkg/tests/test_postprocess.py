import numpy as np
import pytest

from nhkoopman.edmd import LabeledDataset
from nhkoopman.postprocess import (PostprocessSpec, _smooth_linear_edges, build_dataset,
                                   central_diff, continue_angles, estimate_trajectory,
                                   lateral_velocity, moving_average, read_external_csv,
                                   smooth_segment, to_body_frame)
from nhkoopman.sampler import (CONSTANT, RawRecording, SamplingSpec, sample_dynamic,
                               sample_kinematic, simulate_fine)
from nhkoopman.vehicles import dynamic_zoh_step, kinematic_zoh_step, normalize_angle

H = 1 / 240


def test_spec_validation():
    with pytest.raises(ValueError):
        PostprocessSpec(window=0)
    with pytest.raises(ValueError):
        PostprocessSpec(dt=0.05, fs=250.0)
    assert PostprocessSpec().ratio == 12


def test_central_diff_examples():
    t = np.arange(50) * H
    assert np.allclose(central_diff(t, t)[1:-1], 1.0, atol=1e-12)
    assert np.all(central_diff(t, np.full(50, 3.0)) == 0.0)
    t3 = np.array([0.0, 1.0, 2.0]) / 240
    assert central_diff(t3, t3 ** 2)[1] == pytest.approx(2 * t3[1], abs=1e-15)
    two = central_diff(t, np.column_stack([t, 2 * t]))
    assert np.allclose(two, [1.0, 2.0], atol=1e-12)


def test_central_diff_errors():
    with pytest.raises(ValueError, match="duplicate"):
        central_diff([0.0, 0.1, 0.1, 0.2], [0, 1, 2, 3])
    with pytest.raises(ValueError):
        central_diff([0.0, 0.2, 0.1], [0, 1, 2])
    with pytest.raises(ValueError):
        central_diff([0.0, 0.1], [0, 1])


def test_body_frame_examples():
    assert np.allclose(to_body_frame([1, 0], 0.0), [1, 0])
    assert np.allclose(to_body_frame([0, 1], np.pi / 2), [1, 0], atol=1e-15)
    assert np.allclose(to_body_frame([1, 1], np.pi / 4), [np.sqrt(2), 0], atol=1e-15)


def test_smooth_segment_examples():
    x = np.full(30, 2.5)
    assert np.array_equal(smooth_segment(x, [(0, 30)], 40), x)
    ramp = 0.3 * np.arange(100.0)
    out = smooth_segment(ramp, [(0, 100)], 40)
    assert np.allclose(out, ramp, atol=1e-12)
    step = np.concatenate([np.zeros(60), np.ones(60)])
    out = smooth_segment(step, [(0, 60), (60, 120)], 40)
    assert np.array_equal(out, step)
    naive = moving_average(step, 40)
    assert naive[59] > 0 and naive[60] < 1


def test_smooth_segment_errors():
    with pytest.raises(ValueError):
        smooth_segment(np.zeros(10), [(0, 5), (5, 5), (5, 10)], 4)
    with pytest.raises(ValueError):
        smooth_segment(np.zeros(10), [(0, 5), (6, 10)], 4)
    with pytest.raises(ValueError):
        smooth_segment(np.zeros(10), [(0, 5)], 4)


def test_symmetric_window_truncation():
    rng = np.random.default_rng(0)
    x = rng.normal(size=25)
    out = smooth_segment(x, [(0, 25)], 10)
    assert out[0] == x[0]
    assert out[2] == pytest.approx(np.mean(x[0:5]))
    assert out[12] == pytest.approx(np.mean(x[7:18]))


def test_linear_edge_fit():
    rng = np.random.default_rng(1)
    x = rng.normal(size=60)
    out = _smooth_linear_edges(x, 10)
    ref = smooth_segment(x, [(0, 60)], 20)
    assert np.allclose(out[10:50], ref[10:50], atol=1e-12)
    line = 0.7 - 0.02 * np.arange(60.0)
    assert np.allclose(_smooth_linear_edges(line, 10), line, atol=1e-12)
    # one-sided least squares fit at the first sample
    k = np.arange(11)
    assert out[0] == pytest.approx(np.polyval(np.polyfit(k, x[:11], 1), 0))


def test_continue_angles_examples():
    out = continue_angles([3.1, -3.1])
    assert out[1] == pytest.approx(3.1 + (2 * np.pi - 6.2))
    mono = np.linspace(-3.0, 3.0, 50)
    assert np.array_equal(continue_angles(mono), mono)
    th = normalize_angle(np.linspace(0.2, 0.2 + 2 * np.pi, 100))
    out = continue_angles(th)
    assert out[-1] == pytest.approx(out[0] + 2 * np.pi)
    assert np.all(np.abs(np.diff(out)) < 0.1)


def test_kinematic_pair_counts_and_consistency():
    rec = sample_kinematic(SamplingSpec.kinematic(seed=1, noise_pos=0.0, noise_heading=0.0))
    data = build_dataset(rec, PostprocessSpec(window=1, dt=0.1))
    R = rec.ratio
    for b in (1, 2):
        segs = rec.basis_segments(b)
        assert data.counts()[b] == int(sum((e - s) * R + 1 - R for s, e, _, _ in segs))
    assert data.counts()[0] == 0
    for p in data.partitions[1:]:
        Y = np.array([kinematic_zoh_step(x, p.u, 0.1) for x in p.X])
        assert np.max(np.abs(Y - p.Y)) <= 1e-9
        assert np.all(np.abs(p.X[:, 2]) <= np.pi)


def test_dynamic_pair_consistency(dyn_recording_clean):
    data = build_dataset(dyn_recording_clean, PostprocessSpec(window=1))
    assert all(c > 0 for c in data.counts())
    for p in data.partitions:
        Y = np.array([dynamic_zoh_step(x, p.u, 0.05) for x in p.X])
        assert np.max(np.abs(Y - p.Y)) <= 1e-6


def _rotation_recording():
    """Pure rotation from heading 3.0 at 3 rad/s: successor heading 3.3 after 0.1 s."""
    dt, fs = 0.1, 240.0
    bases = np.array([[0.0, 0.0], [0.0, 3.0], [0.2, 0.0]])
    n_steps = 3
    truth = np.zeros((n_steps * 24 + 1, 3))
    truth[:, 2] = 3.0 + 3.0 * np.arange(truth.shape[0]) / fs
    poses = truth.copy()
    poses[:, 2] = normalize_angle(poses[:, 2])
    inputs = np.tile(bases[1], (n_steps, 1))
    ann = np.array([[0, n_steps, 1, CONSTANT]])
    return RawRecording("kinematic", dt, fs, bases, poses, inputs, np.ones(n_steps, int), ann,
                        truth)


def test_angle_shift_rule():
    data = build_dataset(_rotation_recording(), PostprocessSpec(window=1, dt=0.1))
    p = data.partitions[1]
    assert p.X[0, 2] == pytest.approx(3.0)
    assert p.Y[0, 2] == pytest.approx(3.3)
    assert np.all(np.abs(p.X[:, 2]) <= np.pi)
    assert np.allclose(p.Y[:, 2] - p.X[:, 2], 0.3)


def test_dataset_errors(kin_recording):
    with pytest.raises(ValueError, match="does not match"):
        build_dataset(kin_recording, PostprocessSpec(dt=0.05))
    rec = _rotation_recording()
    rec.annotations = rec.annotations.copy()
    rec.annotations[:, 2] = -1
    with pytest.raises(ValueError, match="no basis"):
        build_dataset(rec, PostprocessSpec(window=1, dt=0.1))
    with pytest.raises(ValueError):
        build_dataset(kin_recording, PostprocessSpec(dt=0.1), model_kind="other")


def test_lateral_velocity_bound(dyn_recording_clean):
    rec = dyn_recording_clean
    lv = np.abs(lateral_velocity(rec))
    R = rec.ratio
    j = np.arange(1, len(lv) - 1)
    # commanded accelerations on both sides of each sample
    k0 = np.clip((j - 1) // R, 0, len(rec.inputs) - 1)
    k1 = np.clip(j // R, 0, len(rec.inputs) - 1)
    a = np.maximum(np.abs(rec.inputs[k0, 0]), np.abs(rec.inputs[k1, 0]))
    al = np.maximum(np.abs(rec.inputs[k0, 1]), np.abs(rec.inputs[k1, 1]))
    # speeds over the difference stencil
    v = np.max(np.abs(np.stack([rec.truth[j - 1, 3], rec.truth[j, 3], rec.truth[j + 1, 3]])), 0)
    w = np.max(np.abs(np.stack([rec.truth[j - 1, 4], rec.truth[j, 4], rec.truth[j + 1, 4]])), 0)
    bound = (a * w + 0.5 * v * al) * H ** 2 / 3
    assert np.all(lv[j] <= 1.05 * bound + 1e-9)


def test_lateral_velocity_small_in_basis_segments():
    spec = SamplingSpec.dynamic(seed=4, segments_per_basis=3, noise_pos=0.0, noise_heading=0.0,
                                draw_velocity_box=((0.0, 0.4), (-0.8, 0.8)))
    rec = sample_dynamic(spec)
    lv = np.abs(lateral_velocity(rec))
    R = rec.ratio
    for s, e, _, _ in rec.basis_segments():
        assert np.max(lv[s * R + 1:e * R]) <= 1e-6
    kin = sample_kinematic(SamplingSpec.kinematic(seed=0, noise_pos=0.0, noise_heading=0.0))
    lk = np.abs(lateral_velocity(kin))
    # the kinematic velocity jumps at input switches, so skip those samples
    switch = np.zeros(len(lk), bool)
    switch[[0, -1]] = True
    switch[kin.annotations[:, 0] * kin.ratio] = True
    assert np.max(lk[~switch]) <= 1e-9


def test_full_scale_pair_counts():
    # reference counts: 108106, 13705 and 24910 pairs for u0, u1, u2
    rec = sample_dynamic(SamplingSpec.dynamic(seed=0, segments_per_basis=100))
    counts = build_dataset(rec, PostprocessSpec()).counts()
    for got, ref in zip(counts, (108106, 13705, 24910)):
        assert ref / 5 <= got <= ref * 5
    assert counts[0] == max(counts)


def test_estimate_trajectory_noiseless(dyn_recording_clean):
    rec = dyn_recording_clean
    est = estimate_trajectory(rec, PostprocessSpec(window=1))
    assert est.shape == (rec.poses.shape[0], 5)
    assert np.max(np.abs(est[:, :2] - rec.truth[:, :2])) == 0.0
    assert np.max(np.abs(normalize_angle(est[:, 2] - rec.truth[:, 2]))) <= 1e-12
    # velocity accuracy away from input switches
    R = rec.ratio
    interior = np.ones(len(est), bool)
    for s, _, _, _ in rec.annotations:
        interior[max(s * R - 1, 0):s * R + 2] = False
    interior[-2:] = False
    assert np.max(np.abs(est[interior, 3:] - rec.truth[interior, 3:])) <= 1e-4


def test_estimate_trajectory_smoothing_reduces_noise():
    spec = SamplingSpec.dynamic(seed=6, segments_per_basis=2)
    rec = sample_dynamic(spec)
    raw = estimate_trajectory(rec, PostprocessSpec(window=1))
    smooth = estimate_trajectory(rec, PostprocessSpec(window=40))
    err = lambda e: np.sqrt(np.mean((e[:, 3] - rec.truth[:, 3]) ** 2))  # noqa: E731
    assert err(smooth) < 0.1 * err(raw)


def test_estimate_trajectory_requires_partition(dyn_recording_clean):
    rec = dyn_recording_clean
    bad = RawRecording(rec.kind, rec.dt, rec.fs, rec.bases, rec.poses, rec.inputs,
                       rec.input_basis, rec.annotations[1:], rec.truth)
    with pytest.raises(ValueError):
        estimate_trajectory(bad, PostprocessSpec())


def test_external_csv(tmp_path):
    z0 = np.array([0.2, 0.1, 0.4, 0.2, 0.3])
    u = np.array([0.0, 0.5])
    fine = np.vstack([z0, simulate_fine(z0, np.tile(u, (10, 1)), 12, H)])
    t = np.arange(len(fine)) * H
    path = tmp_path / "ext.csv"
    with open(path, "w") as fh:
        fh.write("# external\nbasis,t,x1,x2,theta,v,omega\n")
        for ti, z in zip(t, fine):
            fh.write("2," + ",".join(repr(float(v)) for v in (ti, *z)) + "\n")
    data = read_external_csv(path, [(0, 0), (0.2, 0), (0, 0.5)], 0.05)
    assert isinstance(data, LabeledDataset)
    assert data.counts() == [0, 0, len(fine) - 12]
    p = data.partitions[2]
    Y = np.array([dynamic_zoh_step(x, u, 0.05) for x in p.X])
    assert np.max(np.abs(Y - p.Y)) <= 1e-9
    bad = tmp_path / "bad.csv"
    bad.write_text("t,x1\n0,1\n")
    with pytest.raises(ValueError):
        read_external_csv(bad, [(0, 0), (0.2, 0), (0, 0.5)], 0.05)
