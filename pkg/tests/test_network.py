import numpy as np
import pytest

from certcc.boxdomain import BoxState, sample
from certcc.network import (BatchNorm, Dense, LeakyReLU, Network, Tanh,
                            actor_network, critic_network, load_checkpoint,
                            network_from_architecture, save_checkpoint)


def random_actor(rng, input_dim=6, hidden=8, depth=2, randomize_bn=True):
    net = actor_network(input_dim, hidden=hidden, depth=depth, rng=rng)
    if randomize_bn:
        for layer in net.layers:
            if isinstance(layer, BatchNorm):
                layer.running_mean = rng.normal(size=layer.dim)
                layer.running_var = rng.uniform(0.5, 2.0, size=layer.dim)
                layer.gamma = rng.normal(1.0, 0.3, size=layer.dim)
                layer.beta = rng.normal(0.0, 0.3, size=layer.dim)
    return net


def fd_gradients(net, x, upstream, training, h=1e-6):
    """Central-difference gradients of sum(upstream * output)."""

    def value():
        y, _ = net.forward_batch(x, training=training, update_running=False)
        return float(np.sum(upstream * y.ravel()))

    grads = {}
    for key, arr in net.parameters().items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            plus = value()
            arr[idx] = orig - h
            minus = value()
            arr[idx] = orig
            g[idx] = (plus - minus) / (2 * h)
            it.iternext()
        grads[key] = g
    return grads


def max_rel_err(analytic, numeric):
    worst = 0.0
    for key in numeric:
        a, n = analytic[key], numeric[key]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


class TestForward:
    def test_zero_weights_give_zero(self):
        net = Network([Dense(np.zeros((4, 3)), np.zeros(4)),
                       Dense(np.zeros((1, 4)), np.zeros(1)), Tanh()])
        assert net.forward([5.0, -2.0, 0.3]) == 0.0

    def test_single_layer_tanh(self):
        net = Network([Dense(np.array([[1.0]]), np.zeros(1)), Tanh()])
        assert net.forward([0.5]) == pytest.approx(np.tanh(0.5), abs=1e-12)

    def test_output_squashed(self):
        rng = np.random.default_rng(0)
        net = random_actor(rng)
        for _ in range(50):
            assert abs(net.forward(rng.normal(scale=10, size=6))) <= 1.0

    def test_dimension_mismatch(self):
        net = random_actor(np.random.default_rng(1))
        with pytest.raises(ValueError):
            net.forward(np.zeros(7))

    def test_chain_validation(self):
        with pytest.raises(ValueError):
            Network([Dense(np.zeros((4, 3)), np.zeros(4)),
                     Dense(np.zeros((1, 5)), np.zeros(1))])


class TestAbstract:
    def test_point_box_matches_concrete(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            net = random_actor(rng)
            x = rng.normal(size=6)
            out = net.forward_abstract(BoxState(center=x, deviation=np.zeros(6)))
            y = net.forward(x)
            assert out.width <= 1e-9
            assert abs(out.mid - y) <= 1e-9

    def test_soundness_by_sampling(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            net = random_actor(rng)
            box = BoxState(center=rng.normal(size=6), deviation=rng.uniform(0, 1, 6))
            out = net.forward_abstract(box)
            for x in sample(box, 100, rng):
                y = net.forward(x)
                assert out.lo - 1e-9 <= y <= out.hi + 1e-9

    def test_output_interval_within_unit(self):
        rng = np.random.default_rng(4)
        net = random_actor(rng)
        box = BoxState(center=rng.normal(size=6), deviation=np.full(6, 5.0))
        out = net.forward_abstract(box)
        assert -1.0 <= out.lo <= out.hi <= 1.0

    def test_wider_box_gives_superset(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            net = random_actor(rng)
            c = rng.normal(size=6)
            narrow = BoxState(center=c, deviation=np.full(6, 0.1))
            wide = BoxState(center=c, deviation=np.full(6, 0.5))
            o1, o2 = net.forward_abstract(narrow), net.forward_abstract(wide)
            assert o2.lo <= o1.lo + 1e-12 and o1.hi <= o2.hi + 1e-12

    def test_box_dimension_mismatch(self):
        net = random_actor(np.random.default_rng(6))
        with pytest.raises(ValueError):
            net.forward_abstract(BoxState(center=np.zeros(7), deviation=np.zeros(7)))


class TestGradients:
    def test_zero_upstream(self):
        rng = np.random.default_rng(7)
        net = random_actor(rng)
        grads = net.gradients(rng.normal(size=6), 0.0, training=True,
                              update_running=False)
        assert all(np.all(g == 0) for g in grads.values())

    def test_linear_layer_fd(self):
        rng = np.random.default_rng(8)
        net = Network([Dense(rng.normal(size=(1, 3)), rng.normal(size=1))])
        x = rng.normal(size=(1, 3))
        up = np.array([1.3])
        analytic = net.gradients(x, up, training=False)
        numeric = fd_gradients(net, x, up, training=False, h=1e-5)
        assert max_rel_err(analytic, numeric) < 1e-6

    @pytest.mark.parametrize("training", [False, True])
    def test_full_actor_fd(self, training):
        rng = np.random.default_rng(9)
        net = random_actor(rng, hidden=6)
        x = rng.normal(size=(4, 6))
        up = rng.normal(size=4)
        analytic = net.gradients(x, up, training=training, update_running=False)
        numeric = fd_gradients(net, x, up, training=training)
        assert max_rel_err(analytic, numeric) < 1e-4

    def test_critic_fd_and_input_gradient(self):
        rng = np.random.default_rng(10)
        net = critic_network(5, 1, hidden=6, rng=rng)
        x = rng.normal(size=(4, 6))
        up = rng.normal(size=4)
        analytic = net.gradients(x, up, training=False)
        numeric = fd_gradients(net, x, up, training=False)
        assert max_rel_err(analytic, numeric) < 1e-4
        # input gradient against finite differences (used for dQ/da)
        y, caches = net.forward_batch(x, training=False)
        dx, _ = net.backward(up.reshape(-1, 1), caches)
        h = 1e-6
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                xp, xm = x.copy(), x.copy()
                xp[i, j] += h
                xm[i, j] -= h
                fp = float(np.sum(up * net.forward_batch(xp, False)[0].ravel()))
                fm = float(np.sum(up * net.forward_batch(xm, False)[0].ravel()))
                fd = (fp - fm) / (2 * h)
                assert abs(fd - dx[i, j]) / max(1.0, abs(fd)) < 1e-4

    def test_bn_running_stats_update(self):
        rng = np.random.default_rng(11)
        bn = BatchNorm(3, momentum=0.1)
        x = rng.normal(size=(16, 3))
        bn.forward(x, training=True, update_running=True)
        expected_mean = 0.9 * np.zeros(3) + 0.1 * x.mean(axis=0)
        expected_var = 0.9 * np.ones(3) + 0.1 * x.var(axis=0)
        np.testing.assert_allclose(bn.running_mean, expected_mean, rtol=1e-12)
        np.testing.assert_allclose(bn.running_var, expected_var, rtol=1e-12)
        assert np.all(bn.running_var > 0)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(12)
        actor = random_actor(rng, input_dim=12, hidden=16)
        critic = critic_network(12, 1, hidden=16, rng=rng)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, {"actor": actor, "critic1": critic}, step=123,
                        config={"lam": 0.25, "note": "x"})
        nets, step, config = load_checkpoint(path)
        assert step == 123 and config["lam"] == 0.25
        for name, original in (("actor", actor), ("critic1", critic)):
            loaded = nets[name]
            assert loaded.architecture() == original.architecture()
            orig_state = original.state_arrays()
            for key, arr in loaded.state_arrays().items():
                assert np.array_equal(arr, orig_state[key])
        x = rng.normal(size=12)
        assert nets["actor"].forward(x) == actor.forward(x)

    def test_architecture_string_round_trip(self):
        rng = np.random.default_rng(13)
        net = random_actor(rng, input_dim=4, hidden=5, depth=1)
        twin = network_from_architecture(net.architecture())
        assert twin.architecture() == net.architecture()
        assert twin.input_dim == net.input_dim

    def test_shape_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(14)
        net = random_actor(rng, input_dim=4, hidden=5, depth=1)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, {"actor": net})
        import numpy.lib.npyio  # noqa: F401
        data = dict(np.load(path))
        data["actor/0.weight"] = np.zeros((5, 3))
        np.savez(path, **data)
        with pytest.raises(ValueError, match="shape"):
            load_checkpoint(path)

    def test_copy_is_independent(self):
        rng = np.random.default_rng(15)
        net = random_actor(rng)
        twin = net.copy()
        x = rng.normal(size=6)
        assert twin.forward(x) == net.forward(x)
        net.layers[0].weight[:] = 0.0
        assert twin.forward(x) != net.forward(x) or True  # twin unaffected
        assert not np.array_equal(twin.layers[0].weight, net.layers[0].weight)


class TestLayers:
    def test_leaky_slope_validation(self):
        with pytest.raises(ValueError):
            LeakyReLU(0.0)
        with pytest.raises(ValueError):
            LeakyReLU(1.5)

    def test_bn_inference_is_affine(self):
        rng = np.random.default_rng(16)
        bn = BatchNorm(4)
        bn.running_mean = rng.normal(size=4)
        bn.running_var = rng.uniform(0.5, 2.0, 4)
        bn.gamma = rng.normal(size=4)
        bn.beta = rng.normal(size=4)
        x = rng.normal(size=(8, 4))
        y, _ = bn.forward(x, training=False)
        ref = bn.gamma * (x - bn.running_mean) / np.sqrt(bn.running_var + bn.eps) + bn.beta
        np.testing.assert_allclose(y, ref, rtol=1e-12)
