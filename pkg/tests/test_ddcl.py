import numpy as np
import pytest

from otfs_urllc.channel import EvolutionParams, build_time_channel, corrupt_estimate, evolve, init_paths, to_dd
from otfs_urllc.ddcl import (
    Checkpoint,
    HistoryWindow,
    NetShape,
    NetworkParams,
    TrainHyper,
    TrainingSet,
    cost,
    cost_and_gradient,
    forward,
    gradient,
    init_params,
    load_checkpoint,
    map_input,
    predict,
    predict_batch,
    save_checkpoint,
    train,
    unmap_input,
)
from otfs_urllc.errors import InvalidDimensionError, InvalidHistoryError
from otfs_urllc.otfs import GridConfig, make_constellation

QPSK = make_constellation(4)
QAM16 = make_constellation(16)


def make_set(grid, tau, n_seq, seq_len, seed, nmse=0.01, p_count=2):
    params = EvolutionParams(p_count=p_count, l_max=min(3, grid.MN - 1), k_max=1)
    rng = np.random.default_rng(seed)
    MN = grid.MN
    truth = np.empty((n_seq, seq_len, MN, MN), dtype=complex)
    est = np.empty_like(truth)
    for s in range(n_seq):
        paths = init_paths(params, rng)
        for t in range(seq_len):
            if t:
                paths = evolve(paths, params, rng)
            H = to_dd(build_time_channel(paths, grid), grid)
            truth[s, t] = H.matrix
            est[s, t] = corrupt_estimate(H, nmse, rng).matrix
    seq, time = np.meshgrid(np.arange(n_seq), np.arange(tau, seq_len), indexing="ij")
    return TrainingSet(grid, tau, est, truth, seq.ravel(), time.ravel())


@pytest.fixture(scope="module")
def small():
    grid = GridConfig(2, 2)
    return grid, make_set(grid, 3, 3, 6, seed=1)


@pytest.fixture(scope="module")
def full():
    grid = GridConfig()
    return grid, make_set(grid, 5, 2, 9, seed=2, p_count=4)


def fd_check(params, batch, sigma2, c, P0, n_checks, rng, h=1e-5):
    J, g = cost_and_gradient(params, batch, sigma2, c, P0)
    flat, gflat = params.flat(), g.flat()
    worst = 0.0
    for i in rng.choice(flat.size, size=n_checks, replace=False):
        e = np.zeros_like(flat)
        e[i] = h
        jp = cost(params.with_flat(flat + e), batch, sigma2, c, P0)
        jm = cost(params.with_flat(flat - e), batch, sigma2, c, P0)
        fd = (jp - jm) / (2 * h)
        denom = max(abs(fd), abs(gflat[i]), 1e-8)
        worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst


class TestMapInput:
    def test_shape(self):
        hist = HistoryWindow(tuple(np.eye(32, dtype=complex) for _ in range(5)))
        assert map_input(hist).shape == (5, 32, 32, 2)

    def test_real_history_has_zero_imaginary_channel(self):
        rng = np.random.default_rng(0)
        x = map_input(HistoryWindow(tuple(rng.standard_normal((4, 4)) for _ in range(3))))
        assert np.all(x[..., 1] == 0)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        frames = rng.standard_normal((3, 4, 4)) + 1j * rng.standard_normal((3, 4, 4))
        np.testing.assert_array_equal(unmap_input(map_input(frames)), frames)

    def test_wrong_length(self):
        with pytest.raises(InvalidHistoryError):
            map_input(np.zeros((4, 8, 8), dtype=complex), tau=5)

    @pytest.mark.parametrize("frames", [(), (np.eye(3), np.eye(4)), (np.ones(3),)])
    def test_bad_window(self, frames):
        with pytest.raises(InvalidHistoryError):
            HistoryWindow(frames)


class TestShapes:
    def test_flatten_size_at_default_grid(self):
        s = NetShape(8, 4, 32, 5)
        assert s.flat_size == 1024
        assert s.out_size == 2 * 32 * 32

    def test_param_shape_validation(self):
        s = NetShape(2, 2, 2, 2)
        p = init_params(s, np.random.default_rng(0))
        bad = dict(p.tensors, fc_b=np.zeros(3))
        with pytest.raises(InvalidDimensionError):
            NetworkParams(s, bad)

    def test_flat_round_trip(self):
        p = init_params(NetShape(2, 2, 2, 2), np.random.default_rng(0))
        q = p.with_flat(p.flat())
        for n in p.names:
            np.testing.assert_array_equal(p[n], q[n])
        assert p.flat().size == p.size

    def test_forget_bias(self):
        p = init_params(NetShape(2, 2, 2, 2, hidden=4), np.random.default_rng(0))
        np.testing.assert_array_equal(p["lstm1_b"], np.r_[np.zeros(4), np.ones(4), np.zeros(8)])


class TestForward:
    def test_power_and_shape(self, full):
        grid, ds = full
        p = init_params(NetShape(8, 4, 32, 5), np.random.default_rng(3))
        x, _ = ds.batch(np.arange(len(ds)))
        P = forward(p, x, 32.0)
        assert P.shape == (len(ds), 32, 32)
        np.testing.assert_allclose(np.sum(np.abs(P) ** 2, axis=(1, 2)), 32.0, rtol=1e-12)

    @pytest.mark.parametrize("P0", [0.5, 16.0, 1e4])
    def test_power_any_budget(self, small, P0):
        grid, ds = small
        p = init_params(NetShape(2, 2, 3, 3), np.random.default_rng(4))
        P = forward(p, ds.batch([0])[0], P0)
        assert abs(np.linalg.norm(P) ** 2 - P0) <= 1e-9 * P0

    def test_pure(self, small):
        _, ds = small
        p = init_params(NetShape(2, 2, 4, 3), np.random.default_rng(5))
        x = ds.batch([1])[0][0]
        np.testing.assert_array_equal(forward(p, x, 4.0), forward(p, x, 4.0))

    def test_batch_matches_single(self, small):
        _, ds = small
        p = init_params(NetShape(2, 2, 4, 3), np.random.default_rng(6))
        x, _ = ds.batch(np.arange(4))
        batched = forward(p, x, 4.0)
        for i in range(4):
            np.testing.assert_allclose(forward(p, x[i], 4.0), batched[i], atol=1e-12)

    def test_predict_equals_forward(self, small):
        _, ds = small
        p = init_params(NetShape(2, 2, 4, 3), np.random.default_rng(7))
        pre = predict(p, ds.window(2), 4.0)
        np.testing.assert_allclose(pre.matrix, forward(p, ds.batch([2])[0][0], 4.0), atol=1e-15)
        np.testing.assert_allclose(predict_batch(p, ds.histories([2]), 4.0)[0], pre.matrix, atol=1e-15)

    def test_most_recent_frame_matters_most(self, small):
        _, ds = small
        p = init_params(NetShape(2, 2, 4, 3), np.random.default_rng(8))
        x = ds.batch([0])[0][0]
        base = forward(p, x, 4.0)
        changes = []
        for j in range(3):
            y = x.copy()
            y[j] += 0.5
            changes.append(np.linalg.norm(forward(p, y, 4.0) - base))
        assert all(ch > 0 for ch in changes)

    def test_rejects_wrong_input(self):
        p = init_params(NetShape(2, 2, 2, 2), np.random.default_rng(0))
        with pytest.raises(InvalidDimensionError):
            forward(p, np.zeros((3, 4, 4, 2)), 1.0)


class TestCost:
    def test_single_example(self, small):
        from otfs_urllc.link import fer_theory

        _, ds = small
        p = init_params(NetShape(2, 2, 4, 3), np.random.default_rng(9))
        x, H = ds.batch([0])
        P = forward(p, x[0], 4.0)
        assert cost(p, (x, H), 0.1, QPSK, 4.0) == pytest.approx(fer_theory(H[0], P, 0.1, QPSK), rel=1e-12)

    def test_estimate_receiver(self, small):
        from otfs_urllc.link import fer_theory

        _, ds = small
        p = init_params(NetShape(2, 2, 4, 3), np.random.default_rng(9))
        x, H, H_hat = ds.batch([2], with_estimate=True)
        np.testing.assert_array_equal(H_hat[0], ds.estimates[ds.seq[2], ds.time[2]])
        P = forward(p, x[0], 4.0)
        expected = fer_theory(H[0], P, 0.1, QPSK, H_hat[0])
        assert cost(p, (x, H, H_hat), 0.1, QPSK, 4.0) == pytest.approx(expected, rel=1e-12)
        assert expected != pytest.approx(cost(p, (x, H), 0.1, QPSK, 4.0), rel=1e-9)

    def test_duplicate_invariance(self, small):
        _, ds = small
        p = init_params(NetShape(2, 2, 4, 3), np.random.default_rng(10))
        one = cost(p, ds.batch([3]), 0.1, QPSK, 4.0)
        two = cost(p, ds.batch([3, 3]), 0.1, QPSK, 4.0)
        assert one == pytest.approx(two, rel=1e-14)

    def test_range(self, small):
        _, ds = small
        p = init_params(NetShape(2, 2, 4, 3), np.random.default_rng(11))
        for sigma2 in (1e-4, 1.0, 1e3):
            J = cost(p, ds, sigma2, QPSK, 4.0)
            assert 0.0 <= J <= 1.0


class TestGradient:
    @pytest.mark.parametrize("c, sigma2", [(QPSK, 0.1), (QAM16, 0.01)], ids=["qpsk", "16qam"])
    def test_finite_differences_small(self, small, c, sigma2):
        _, ds = small
        p = init_params(NetShape(2, 2, 3, 3, hidden=6), np.random.default_rng(12))
        rng = np.random.default_rng(13)
        assert fd_check(p, ds.batch(np.arange(6)), sigma2, c, 3.0, 60, rng) < 1e-4

    @pytest.mark.parametrize("c, sigma2", [(QPSK, 0.1), (QAM16, 0.01)], ids=["qpsk", "16qam"])
    def test_finite_differences_estimate_receiver(self, small, c, sigma2):
        _, ds = small
        p = init_params(NetShape(2, 2, 3, 3, hidden=6), np.random.default_rng(19))
        rng = np.random.default_rng(20)
        assert fd_check(p, ds.batch(np.arange(6), with_estimate=True), sigma2, c, 3.0, 60, rng) < 1e-4

    def test_finite_differences_full_size(self, full):
        _, ds = full
        p = init_params(NetShape(8, 4, 32, 5), np.random.default_rng(14))
        rng = np.random.default_rng(15)
        assert fd_check(p, ds.batch(np.arange(3)), 10 ** -1.5, QPSK, 32.0, 30, rng) < 1e-4

    def test_zero_input_channel_gives_zero_filter_gradient(self, small):
        _, ds = small
        p = init_params(NetShape(2, 2, 3, 3), np.random.default_rng(16))
        x, H = ds.batch(np.arange(4))
        x = x.copy()
        x[..., 1] = 0.0
        g = gradient(p, (x, H), 0.1, QPSK, 3.0)
        assert np.all(g["conv_w"][:, :, 1, :] == 0.0)
        assert np.any(g["conv_w"][:, :, 0, :] != 0.0)

    def test_radial_direction_is_flat(self, small):
        # scaling the final layer leaves the normalized output unchanged
        _, ds = small
        p = init_params(NetShape(2, 2, 3, 3), np.random.default_rng(17))
        p.tensors["fc_b"] = np.random.default_rng(18).normal(size=p["fc_b"].shape)
        g = gradient(p, ds.batch(np.arange(5)), 0.1, QPSK, 3.0)
        radial = np.sum(g["fc_w"] * p["fc_w"]) + np.sum(g["fc_b"] * p["fc_b"])
        scale = np.sqrt(np.sum(g["fc_w"] ** 2) + np.sum(g["fc_b"] ** 2)) * np.sqrt(
            np.sum(p["fc_w"] ** 2) + np.sum(p["fc_b"] ** 2))
        assert abs(radial) <= 1e-8 * scale


class TestTraining:
    def test_unknown_receiver(self):
        with pytest.raises(ValueError):
            TrainHyper(receiver="oracle")

    @pytest.mark.parametrize("receiver", ["estimate", "true"])
    def test_history_starts_at_receiver_cost(self, small, receiver):
        _, ds = small
        hist = []
        params = train(ds, TrainHyper(max_iters=1, receiver=receiver), 0.1, QPSK, 5, 3, 3.0, history=hist)
        init = init_params(NetShape(2, 2, 3, 3), np.random.default_rng(5))
        # fewer than 10 examples: the whole set is the validation set
        expected = cost(init, ds.batch(np.arange(len(ds)), with_estimate=receiver == "estimate"), 0.1, QPSK, 3.0)
        assert hist[0][2] == pytest.approx(expected, rel=1e-12)
        assert params.shape.K == 3

    def test_zero_learning_rate(self, small):
        _, ds = small
        hyper = TrainHyper(lr=0.0, batch_size=4, max_iters=20, eval_every=5)
        out = train(ds, hyper, 0.1, QPSK, 5, K=3)
        ref = init_params(NetShape(2, 2, 3, 3), np.random.default_rng(5))
        np.testing.assert_array_equal(out.flat(), ref.flat())

    def test_deterministic(self, small):
        _, ds = small
        hyper = TrainHyper(batch_size=3, max_iters=30, eval_every=10)
        a = train(ds, hyper, 0.1, QPSK, 9, K=3)
        b = train(ds, hyper, 0.1, QPSK, 9, K=3)
        np.testing.assert_array_equal(a.flat(), b.flat())

    def test_never_worse_than_start(self, small):
        from otfs_urllc.ddcl.training import dataset_cost, split_train_val

        _, ds = small
        hyper = TrainHyper(lr=0.05, batch_size=3, max_iters=40, eval_every=5, val_fraction=0.5)
        hist = []
        out = train(ds, hyper, 0.1, QPSK, 2, K=3, history=hist)
        assert min(h[2] for h in hist) <= hist[0][2]
        # replay the trainer's draws: initialization first, then the split
        rng = np.random.default_rng(2)
        init_params(NetShape(2, 2, 3, 3), rng)
        _, val_idx = split_train_val(len(ds), 0.5, rng)
        assert dataset_cost(out, ds.subset(val_idx), 0.1, QPSK, 3.0) <= hist[0][2] + 1e-15

    def test_single_example_overfit(self, full):
        _, ds = full
        one = ds.subset([0])
        hyper = TrainHyper(batch_size=1, max_iters=500, eval_every=10, patience=1000)
        hist = []
        train(one, hyper, 10 ** -1.5, QPSK, 0, K=32, history=hist)
        smoothed = np.array([h[1] for h in hist[1:]])
        assert smoothed[-1] < hist[0][2]
        # window-10 means must trend down; allow float jitter only
        assert np.all(np.diff(smoothed) <= 1e-12 * smoothed[:-1])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = init_params(NetShape(2, 2, 3, 3), np.random.default_rng(19))
        ck = Checkpoint(p, 3.0, 16, 7, 123, 0.01)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, ck)
        back = load_checkpoint(path)
        assert back.shape == p.shape
        assert (back.P0, back.order, back.seed, back.iterations, back.sigma2) == (3.0, 16, 7, 123, 0.01)
        np.testing.assert_array_equal(back.params.flat(), p.flat())

    def test_bytes_deterministic(self, tmp_path):
        p = init_params(NetShape(2, 2, 3, 3), np.random.default_rng(20))
        ck = Checkpoint(p, 3.0, 4, 0, 1, 0.1)
        save_checkpoint(tmp_path / "a", ck)
        save_checkpoint(tmp_path / "b", ck)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_wrong_kind(self, tmp_path):
        from otfs_urllc import blob

        blob.write_blob(tmp_path / "x", "training_set", 1, {}, {})
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x")

    def test_training_set_round_trip(self, small, tmp_path):
        _, ds = small
        ds.save(tmp_path / "d")
        back = TrainingSet.load(tmp_path / "d")
        assert len(back) == len(ds) and back.tau == ds.tau
        np.testing.assert_array_equal(back.batch(np.arange(len(ds)))[0], ds.batch(np.arange(len(ds)))[0])
