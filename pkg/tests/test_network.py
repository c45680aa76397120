"""Score networks: shapes, init contracts, score algebra, checkpoints."""

import numpy as np
import pytest

from bridgekit import network as net
from bridgekit import schedules as sched
from bridgekit import sde
from bridgekit.bten import write_bten
from bridgekit.errors import ConfigError, ContractError, DomainError, FormatError
from bridgekit.rng import RngStream

VP = sched.NoiseSchedule.vp()

MLP_CFG = net.ScoreNetworkConfig(arch="mlp", hidden=(8, 8, 8), input_dim=2)
CONV_CFG = net.ScoreNetworkConfig(arch="conv2d", hidden=(2, 3), image_side=4)


class TestTimeFeatures:
    def test_shape_and_zero_time(self):
        f = net.time_features(np.zeros(3), 8)
        assert f.shape == (3, 8)
        np.testing.assert_array_equal(f[:, :4], 0.0)  # sin half
        np.testing.assert_array_equal(f[:, 4:], 1.0)  # cos half

    def test_frequency_ladder_endpoints(self):
        # lowest channel oscillates once per unit t, highest 1e4 times
        t = np.array([0.5])
        f = net.time_features(t, 4)
        assert f[0, 0] == pytest.approx(np.sin(0.5))
        assert f[0, 1] == pytest.approx(np.sin(0.5e4))

    def test_bounded(self):
        f = net.time_features(np.linspace(0, 1, 50), 16)
        assert np.all(np.abs(f) <= 1.0)

    def test_scalar_promoted(self):
        assert net.time_features(0.3, 6).shape == (1, 6)


class TestConfigValidation:
    def test_bad_arch(self):
        with pytest.raises(ConfigError):
            net.ScoreNetworkConfig(arch="transformer", hidden=(8,), input_dim=2)

    def test_bad_activation(self):
        with pytest.raises(ConfigError):
            net.ScoreNetworkConfig(arch="mlp", hidden=(8,), input_dim=2, activation="tanh")

    @pytest.mark.parametrize("dim", [0, 1, 7])
    def test_time_embed_must_be_even(self, dim):
        with pytest.raises(ConfigError):
            net.ScoreNetworkConfig(arch="mlp", hidden=(8,), input_dim=2, time_embed_dim=dim)

    def test_hidden_must_be_positive(self):
        with pytest.raises(ConfigError):
            net.ScoreNetworkConfig(arch="mlp", hidden=(), input_dim=2)
        with pytest.raises(ConfigError):
            net.ScoreNetworkConfig(arch="mlp", hidden=(8, 0), input_dim=2)

    def test_mlp_needs_input_dim(self):
        with pytest.raises(ConfigError):
            net.ScoreNetworkConfig(arch="mlp", hidden=(8,))

    def test_conv_needs_two_levels(self):
        with pytest.raises(ConfigError):
            net.ScoreNetworkConfig(arch="conv2d", hidden=(4,), image_side=8)

    def test_conv_side_must_match_depth(self):
        # three channel counts mean two downsamples, so side must divide by 4
        with pytest.raises(ConfigError):
            net.ScoreNetworkConfig(arch="conv2d", hidden=(2, 3, 4), image_side=6)
        net.ScoreNetworkConfig(arch="conv2d", hidden=(2, 3, 4), image_side=8)

    def test_dict_roundtrip(self):
        assert net.ScoreNetworkConfig.from_dict(MLP_CFG.to_dict()) == MLP_CFG


class TestInitAndForward:
    def test_fresh_net_is_identity(self):
        """Zero-initialized output layer makes the residual vanish."""
        rng = RngStream(40, 0)
        params = net.init_params(MLP_CFG, rng)
        x_t = rng.normals((5, 2))
        xT = rng.normals((5, 2))
        out = net.predict(params, MLP_CFG, x_t, xT, np.full(5, 0.5))
        np.testing.assert_array_equal(out, x_t)

    def test_fresh_conv_net_is_identity(self):
        rng = RngStream(40, 1)
        params = net.init_params(CONV_CFG, rng)
        x_t = rng.normals((3, 4, 4))
        xT = rng.normals((3, 4, 4))
        out = net.predict(params, CONV_CFG, x_t, xT, np.full(3, 0.5))
        np.testing.assert_array_equal(out, x_t)

    def test_init_deterministic(self):
        a = net.init_params(MLP_CFG, RngStream(41, 0))
        b = net.init_params(MLP_CFG, RngStream(41, 0))
        assert set(a) == set(b)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_param_count_mlp_by_hand(self):
        # input 2 views x 2 dims + 16 time features = 20 wide
        # 20*8+8 + 8*8+8 + 8*8+8 + 8*2+2 = 330
        assert net.param_count(MLP_CFG) == 330

    def test_param_count_conv_by_hand(self):
        # stem 2->2: 38, stem_t 16->2: 34, down1 2->3: 57, down1_t 16->3: 51,
        # up1 3->2: 56, head 2->1: 19; total 255
        assert net.param_count(CONV_CFG) == 255

    def test_unconditional_narrower_input(self):
        uncond = net.ScoreNetworkConfig(arch="mlp", hidden=(8,), input_dim=2, conditional=False)
        # 2 + 16 = 18 wide: 18*8+8 + 8*2+2 = 170
        assert net.param_count(uncond) == 170

    def test_small_param_change_moves_output_little(self):
        rng = RngStream(42, 0)
        params = net.init_params(MLP_CFG, rng)
        # jitter the zero head so the net is not exactly identity
        params["out.w"] = params["out.w"] + 0.01
        x_t = rng.normals((4, 2))
        xT = rng.normals((4, 2))
        base = net.predict(params, MLP_CFG, x_t, xT, 0.5)
        bumped = {k: v + 1e-6 for k, v in params.items()}
        moved = net.predict(bumped, MLP_CFG, x_t, xT, 0.5)
        delta = np.max(np.abs(moved - base))
        assert 0.0 < delta < 1e-2

    def test_conditional_contract(self):
        rng = RngStream(42, 1)
        params = net.init_params(MLP_CFG, rng)
        x = rng.normals((2, 2))
        with pytest.raises(ContractError):
            net.predict(params, MLP_CFG, x, None, 0.5)
        with pytest.raises(ContractError):
            net.predict(params, MLP_CFG, x, rng.normals((3, 2)), 0.5)
        uncond = net.ScoreNetworkConfig(arch="mlp", hidden=(8,), input_dim=2, conditional=False)
        up = net.init_params(uncond, rng)
        with pytest.raises(ContractError):
            net.predict(up, uncond, x, x, 0.5)

    def test_input_shape_contract(self):
        rng = RngStream(42, 2)
        params = net.init_params(MLP_CFG, rng)
        with pytest.raises(ContractError):
            net.predict(params, MLP_CFG, rng.normals((2, 3)), rng.normals((2, 3)), 0.5)
        cp = net.init_params(CONV_CFG, rng)
        with pytest.raises(ContractError):
            net.predict(cp, CONV_CFG, rng.normals((2, 5, 5)), rng.normals((2, 5, 5)), 0.5)


class TestScoreAlgebra:
    def test_bridge_score_matches_analytic(self):
        """Feeding the true x_0 as the prediction recovers the kernel score."""
        rng = RngStream(43, 0)
        x0 = rng.normals((6, 3))
        xT = rng.normals((6, 3))
        x_t = rng.normals((6, 3))
        for t in (0.2, 0.5, 0.8):
            got = net.score_from_prediction(VP, x_t, xT, np.full(6, t), x0)
            for i in range(6):
                want = sde.analytic_bridge_score(VP, x_t[i], x0[i], xT[i], t)
                np.testing.assert_allclose(got[i], want, rtol=1e-12, atol=0)

    def test_bridge_score_mixed_times(self):
        rng = RngStream(43, 1)
        x0 = rng.normals((3, 2))
        xT = rng.normals((3, 2))
        x_t = rng.normals((3, 2))
        ts = np.array([0.1, 0.5, 0.9])
        got = net.score_from_prediction(VP, x_t, xT, ts, x0)
        for i, t in enumerate(ts):
            want = sde.analytic_bridge_score(VP, x_t[i], x0[i], xT[i], float(t))
            np.testing.assert_allclose(got[i], want, rtol=1e-12, atol=0)

    def test_marginal_score_recovers_noise(self):
        rng = RngStream(43, 2)
        x0 = rng.normals((5, 2))
        eps = rng.normals((5, 2))
        t = 0.6
        alpha, sigma = sched.alpha_sigma(VP, t)
        x_t = alpha * x0 + sigma * eps
        got = net.marginal_score_from_prediction(VP, x_t, np.full(5, t), x0)
        np.testing.assert_allclose(got, -eps / sigma, rtol=1e-10, atol=1e-12)

    def test_degenerate_times_rejected(self):
        z = np.zeros((2, 2))
        with pytest.raises(DomainError):
            net.score_from_prediction(VP, z, z, np.array([0.0, 0.5]), z)
        with pytest.raises(DomainError):
            net.marginal_score_from_prediction(VP, z, np.array([0.0, 0.5]), z)


class TestCheckpoint:
    def _ckpt(self, moments=False):
        params = net.init_params(MLP_CFG, RngStream(44, 0))
        mom = None
        if moments:
            mom = {
                "m1": {k: np.full_like(v, 0.25) for k, v in params.items()},
                "m2": {k: np.full_like(v, 0.5) for k, v in params.items()},
            }
        return net.Checkpoint(params=params, net=MLP_CFG, schedule=VP,
                              objective="dbsm", step=17, moments=mom)

    def test_roundtrip(self, tmp_path):
        ck = self._ckpt()
        path = tmp_path / "ck.bten"
        net.save_checkpoint(path, ck)
        back = net.load_checkpoint(path)
        assert back.net == ck.net
        assert back.schedule == ck.schedule
        assert back.objective == "dbsm"
        assert back.step == 17
        assert back.moments is None
        for k in ck.params:
            np.testing.assert_array_equal(back.params[k], ck.params[k])

    def test_roundtrip_with_moments(self, tmp_path):
        ck = self._ckpt(moments=True)
        path = tmp_path / "ck.bten"
        net.save_checkpoint(path, ck)
        back = net.load_checkpoint(path)
        for slot in ("m1", "m2"):
            assert set(back.moments[slot]) == set(ck.moments[slot])
            for k in ck.moments[slot]:
                np.testing.assert_array_equal(back.moments[slot][k], ck.moments[slot][k])

    def test_predictor_closure(self):
        ck = self._ckpt()
        fn = ck.predictor()
        rng = RngStream(44, 1)
        x_t = rng.normals((3, 2))
        xT = rng.normals((3, 2))
        np.testing.assert_array_equal(fn(x_t, xT, 0.5),
                                      net.predict(ck.params, MLP_CFG, x_t, xT, 0.5))

    def test_objective_validated(self):
        params = net.init_params(MLP_CFG, RngStream(44, 2))
        with pytest.raises(ConfigError):
            net.Checkpoint(params=params, net=MLP_CFG, schedule=VP,
                           objective="score_matching", step=0)

    def test_param_names_validated(self):
        params = net.init_params(MLP_CFG, RngStream(44, 3))
        del params["out.w"]
        with pytest.raises(ContractError):
            net.Checkpoint(params=params, net=MLP_CFG, schedule=VP, objective="dbsm", step=0)

    def test_param_shapes_validated(self):
        params = net.init_params(MLP_CFG, RngStream(44, 4))
        params["out.w"] = params["out.w"][:, :1]
        with pytest.raises(ContractError):
            net.Checkpoint(params=params, net=MLP_CFG, schedule=VP, objective="dbsm", step=0)

    def test_missing_meta_rejected(self, tmp_path):
        path = tmp_path / "bad.bten"
        write_bten(path, {"param/out.w": np.zeros((8, 2))})
        with pytest.raises(FormatError):
            net.load_checkpoint(path)

    def test_corrupt_meta_rejected(self, tmp_path):
        path = tmp_path / "bad.bten"
        write_bten(path, {"__meta__": np.frombuffer(b"not json", dtype=np.uint8).copy()})
        with pytest.raises(FormatError):
            net.load_checkpoint(path)
