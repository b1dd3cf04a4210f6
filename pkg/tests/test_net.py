import numpy as np
import pytest

from cizsl.errors import DatasetFormatError, InvalidInputError, InvalidStateError
from cizsl.net import (DiscriminatorArch, Discriminator, Generator, GeneratorArch,
                       Layer, MlpNetwork, build_discriminator, build_generator,
                       gradient_penalty, input_grad_penalty_grad, load_checkpoint,
                       save_checkpoint)
from cizsl.numerics import RngStream, finite_diff_gradient, relative_error


def leaky(z, slope=0.2):
    return np.where(z > 0, z, slope * z)


class TestForward:
    def test_zero_network_outputs_zero(self):
        net = MlpNetwork([Layer(np.zeros((3, 2)), np.zeros(3), "relu")])
        np.testing.assert_array_equal(net.forward(np.array([1.0, -1.0])), np.zeros(3))

    def test_zero_generator_with_relu_output_emits_zero_vector(self):
        gen = Generator(
            embed=MlpNetwork([Layer(np.zeros((3, 4)), np.zeros(3), "leaky_relu", 0.2)]),
            trunk=MlpNetwork([Layer(np.zeros((5, 5)), np.zeros(5), "relu")]),
            noise_dim=2)
        out = gen.forward(np.array([1.0, -2.0, 3.0, 0.5]), np.array([4.0, -4.0]))
        np.testing.assert_array_equal(out, np.zeros(5))

    def test_identity_generator_reproduces_descriptor(self):
        # one identity layer each, no noise dims
        gen = Generator(
            embed=MlpNetwork([Layer(np.eye(4), np.zeros(4), "identity")]),
            trunk=MlpNetwork([Layer(np.eye(4), np.zeros(4), "identity")]),
            noise_dim=0)
        t = np.array([1.0, -2.0, 0.5, 3.0])
        np.testing.assert_array_equal(gen.forward(t, np.zeros(0)), t)

    def test_generator_matches_straight_line_recomputation(self):
        rng = RngStream(21, 0)
        gen = build_generator(GeneratorArch(text_dim=5, noise_dim=3, output_dim=4,
                                            embed_dim=6, hidden_dims=(7,)), rng)
        t = rng.normal(5)
        z = rng.normal(3)
        # independent recomputation of the affine/activation chain
        e = leaky(gen.embed.layers[0].weight @ t + gen.embed.layers[0].bias)
        h = np.concatenate([e, z])
        h = leaky(gen.trunk.layers[0].weight @ h + gen.trunk.layers[0].bias)
        x = np.maximum(gen.trunk.layers[1].weight @ h + gen.trunk.layers[1].bias, 0.0)
        np.testing.assert_allclose(gen.forward(t, z), x, atol=1e-12)

    def test_discriminator_zero_network(self):
        disc = Discriminator(MlpNetwork([Layer(np.zeros((4, 2)), np.zeros(4))]),
                             n_classes=3)
        real, logits = disc.forward(np.array([5.0, -1.0]))
        assert real == 0.0
        np.testing.assert_array_equal(logits, np.zeros(3))

    def test_discriminator_linear_dot_product(self):
        w = np.zeros((3, 2))
        w[0] = [1.0, 2.0]
        disc = Discriminator(MlpNetwork([Layer(w, np.zeros(3))]), n_classes=2)
        real, _ = disc.forward(np.array([3.0, 4.0]))
        assert real == pytest.approx(11.0)

    def test_discriminator_matches_recomputation(self):
        rng = RngStream(22, 0)
        disc = build_discriminator(DiscriminatorArch(input_dim=5, n_classes=4,
                                                     hidden_dims=(6,)), rng)
        x = rng.normal(5)
        h = leaky(disc.net.layers[0].weight @ x + disc.net.layers[0].bias)
        out = disc.net.layers[1].weight @ h + disc.net.layers[1].bias
        real, logits = disc.forward(x)
        assert real == pytest.approx(out[0], abs=1e-12)
        np.testing.assert_allclose(logits, out[1:], atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        rng = RngStream(1, 0)
        gen = build_generator(GeneratorArch(text_dim=4, noise_dim=2, output_dim=3), rng)
        with pytest.raises(InvalidInputError):
            gen.forward(np.zeros(5), np.zeros(2))
        with pytest.raises(InvalidInputError):
            gen.forward(np.zeros(4), np.zeros(3))


class TestParamVector:
    def test_flatten_unflatten_bijection(self):
        rng = RngStream(33, 0)
        gen = build_generator(GeneratorArch(text_dim=4, noise_dim=2, output_dim=3,
                                            embed_dim=5, hidden_dims=(6,)), rng)
        theta = gen.param_vector()
        gen.set_param_vector(theta)
        np.testing.assert_array_equal(gen.param_vector(), theta)

        new = rng.normal(theta.size)
        gen.set_param_vector(new)
        np.testing.assert_array_equal(gen.param_vector(), new)

    def test_wrong_length_rejected(self):
        rng = RngStream(1, 0)
        disc = build_discriminator(DiscriminatorArch(input_dim=3, n_classes=2), rng)
        with pytest.raises(InvalidInputError):
            disc.set_param_vector(np.zeros(disc.n_params + 1))


class TestBackward:
    def test_linear_layer_closed_form(self):
        # y = W x, scalarized by d_out: dW = d_out x^T, dx = W^T d_out
        w0 = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        net = MlpNetwork([Layer(w0.copy(), np.zeros(3), "identity")])
        x = np.array([0.5, -1.5])
        d_out = np.array([1.0, -2.0, 0.5])
        _, cache = net.forward_cached(x)
        flat, d_in = net.backward(cache, d_out)
        expect_w = np.outer(d_out, x)
        np.testing.assert_allclose(flat[:6], expect_w.ravel(), atol=1e-14)
        np.testing.assert_allclose(flat[6:], d_out, atol=1e-14)
        np.testing.assert_allclose(d_in, w0.T @ d_out, atol=1e-14)

    def test_dead_relu_kills_upstream_gradients(self):
        net = MlpNetwork([Layer(-np.ones((3, 2)), -np.ones(3), "relu"),
                          Layer(np.ones((1, 3)), np.zeros(1), "identity")])
        x = np.array([1.0, 1.0])  # pre-activations all negative
        _, cache = net.forward_cached(x)
        flat, d_in = net.backward(cache, np.array([1.0]))
        n_first = 3 * 2 + 3
        np.testing.assert_array_equal(flat[:n_first], np.zeros(n_first))
        np.testing.assert_array_equal(d_in, np.zeros(2))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = RngStream(100 + seed, 0)
        net = MlpNetwork([
            Layer(rng.normal((6, 4)), rng.normal(6), "leaky_relu", 0.2),
            Layer(rng.normal((5, 6)), rng.normal(5), "sigmoid"),
            Layer(rng.normal((3, 5)), rng.normal(3), "identity"),
        ])
        x = rng.normal(4)
        w = rng.normal(3)
        theta0 = net.param_vector()

        def f(theta):
            net.set_param_vector(theta)
            return float(w @ net.forward(x))

        _, cache = net.forward_cached(x)
        analytic, d_in = net.backward(cache, w)
        fd = finite_diff_gradient(f, theta0.copy(), 1e-5)
        net.set_param_vector(theta0)
        assert relative_error(analytic, fd) < 1e-4

        fd_x = finite_diff_gradient(lambda v: float(w @ net.forward(v)), x.copy(), 1e-6)
        assert relative_error(d_in, fd_x) < 1e-6

    def test_backward_is_linear_in_output_gradient(self):
        rng = RngStream(44, 0)
        net = MlpNetwork([Layer(rng.normal((4, 3)), rng.normal(4), "leaky_relu", 0.2),
                          Layer(rng.normal((2, 4)), rng.normal(2), "identity")])
        x = rng.normal((5, 3))
        _, cache = net.forward_cached(x)
        d1 = rng.normal((5, 2))
        d2 = rng.normal((5, 2))
        g1, _ = net.backward(cache, d1)
        g2, _ = net.backward(cache, d2)
        g12, _ = net.backward(cache, d1 + d2)
        np.testing.assert_allclose(g12, g1 + g2, atol=1e-12)

    def test_stale_cache_rejected(self):
        rng = RngStream(45, 0)
        net = MlpNetwork([Layer(rng.normal((2, 2)), rng.normal(2), "relu")])
        _, cache = net.forward_cached(np.zeros(2))
        net.set_param_vector(net.param_vector() * 2.0)
        with pytest.raises(InvalidStateError):
            net.backward(cache, np.zeros(2))


class TestGradientPenalty:
    def d_linear(self, w_real):
        # single identity layer; row 0 is the critic head, one class row zero
        w = np.zeros((2, len(w_real)))
        w[0] = w_real
        return Discriminator(MlpNetwork([Layer(w, np.zeros(2))]), n_classes=1)

    def test_unit_norm_critic_has_zero_penalty_and_gradient(self):
        disc = self.d_linear([0.6, 0.8])
        penalty, grad = input_grad_penalty_grad(disc, np.array([3.0, -1.0]))
        assert penalty == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(grad, np.zeros(disc.n_params), atol=1e-12)

    def test_symbolic_gradient_for_linear_critic(self):
        # ||grad|| = 5, penalty (5-1)^2 = 16, d/dw = 2*4*w/5
        disc = self.d_linear([3.0, 4.0])
        penalty, grad = input_grad_penalty_grad(disc, np.array([0.0, 0.0]))
        assert penalty == pytest.approx(16.0)
        np.testing.assert_allclose(grad[:2], [4.8, 6.4], atol=1e-12)
        # bias and class-head rows receive nothing
        np.testing.assert_allclose(grad[2:], np.zeros(disc.n_params - 2), atol=1e-12)

    def test_zero_gradient_input_documented_subgradient(self):
        disc = self.d_linear([0.0, 0.0])
        penalty, grad = input_grad_penalty_grad(disc, np.array([1.0, 1.0]))
        assert penalty == pytest.approx(1.0)
        np.testing.assert_array_equal(grad, np.zeros(disc.n_params))

    @pytest.mark.parametrize("seed", range(5))
    def test_one_hidden_layer_matches_finite_differences(self, seed):
        rng = RngStream(200 + seed, 0)
        disc = build_discriminator(DiscriminatorArch(input_dim=4, n_classes=3,
                                                     hidden_dims=(6,),
                                                     hidden_slope=0.2), rng)
        x_hat = rng.normal((3, 4))
        _, analytic, _ = gradient_penalty(disc, x_hat)
        theta0 = disc.param_vector()

        def f(theta):
            disc.set_param_vector(theta)
            val, _, _ = gradient_penalty(disc, x_hat)
            return val

        fd = finite_diff_gradient(f, theta0.copy(), 1e-5)
        disc.set_param_vector(theta0)
        assert relative_error(analytic, fd) < 1e-3

    def test_sigmoid_second_derivative_path(self):
        rng = RngStream(300, 0)
        disc = Discriminator(MlpNetwork([
            Layer(rng.normal((5, 3)), rng.normal(5), "sigmoid"),
            Layer(rng.normal((3, 5)), rng.normal(3), "identity"),
        ]), n_classes=2)
        x_hat = rng.normal((2, 3))
        _, analytic, _ = gradient_penalty(disc, x_hat)
        theta0 = disc.param_vector()

        def f(theta):
            disc.set_param_vector(theta)
            return gradient_penalty(disc, x_hat)[0]

        fd = finite_diff_gradient(f, theta0.copy(), 1e-5)
        disc.set_param_vector(theta0)
        assert relative_error(analytic, fd) < 1e-4


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = RngStream(55, 0)
        gen = build_generator(GeneratorArch(text_dim=6, noise_dim=3, output_dim=5,
                                            embed_dim=4, hidden_dims=(7,)), rng)
        disc = build_discriminator(DiscriminatorArch(input_dim=5, n_classes=4), rng)
        path = tmp_path / "model.czsl"
        save_checkpoint(path, gen, disc)
        gen2, disc2 = load_checkpoint(path)
        np.testing.assert_array_equal(gen.param_vector(), gen2.param_vector())
        np.testing.assert_array_equal(disc.param_vector(), disc2.param_vector())
        assert gen2.noise_dim == 3
        assert disc2.n_classes == 4
        for a, b in zip(gen.trunk.layers, gen2.trunk.layers):
            assert a.activation == b.activation
            assert a.slope == b.slope
        # saving again reproduces the same bytes
        path2 = tmp_path / "model2.czsl"
        save_checkpoint(path2, gen2, disc2)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.czsl"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(DatasetFormatError, match="magic"):
            load_checkpoint(path)

    def test_bad_version_rejected(self, tmp_path):
        rng = RngStream(56, 0)
        gen = build_generator(GeneratorArch(text_dim=2, noise_dim=1, output_dim=2), rng)
        disc = build_discriminator(DiscriminatorArch(input_dim=2, n_classes=2), rng)
        path = tmp_path / "model.czsl"
        save_checkpoint(path, gen, disc)
        raw = bytearray(path.read_bytes())
        raw[4:6] = (99).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(DatasetFormatError, match="version"):
            load_checkpoint(path)
