"""Finite-difference contract over every analytic gradient in the package.

Each configuration builds tiny random networks and batches, then compares
analytic parameter gradients against central differences. Penalty-bearing
objectives are held to 1e-3 relative error, everything else to 1e-4.
The minmax normalization inside the creativity term treats its batch
extremes as constants, so the finite-difference closures freeze the bounds
captured at the evaluation point (the stop-gradient semantics being
differentiated).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .divergence import (DivergenceParams, batch_minmax_normalize,
                         entropy_loss_batch, minmax_bounds,
                         minmax_gradient_scale, sm_divergence,
                         sm_divergence_grads)
from .losses import creativity_loss, discriminator_loss, generator_loss, visual_pivot
from .net import (DiscriminatorArch, GeneratorArch, build_discriminator,
                  build_generator, gradient_penalty)
from .numerics import (RngStream, finite_diff_gradient, relative_error, softmax,
                       softmax_vjp)

TOL_DEFAULT = 1e-4
TOL_PENALTY = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


@dataclass
class GradReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        return [f"gradcheck {c.name}: max_rel_err={c.max_rel_err:.6g} "
                f"tol={c.tolerance:.6g} {'PASS' if c.passed else 'FAIL'}"
                for c in self.checks]


def _rand_simplex(rng: RngStream, k: int) -> np.ndarray:
    p = rng.uniform(0.05, 1.0, k)
    return p / p.sum()


def _tiny_models(rng: RngStream, k_cls: int):
    t_dim, z_dim, x_dim = 4, 3, 5
    gen = build_generator(GeneratorArch(text_dim=t_dim, noise_dim=z_dim,
                                        output_dim=x_dim, embed_dim=4,
                                        hidden_dims=(6,)), rng)
    disc = build_discriminator(DiscriminatorArch(input_dim=x_dim, n_classes=k_cls,
                                                 hidden_dims=(6,),
                                                 hidden_slope=0.2), rng)
    # move to a generic parameter point (random biases included): with the
    # builders' zero biases, an all-dead generated row would park every
    # hidden pre-activation exactly on the leaky-relu kink, where central
    # differences are not a valid oracle
    gen.set_param_vector(0.5 * rng.normal(gen.n_params))
    disc.set_param_vector(0.5 * rng.normal(disc.n_params))
    return gen, disc, t_dim, z_dim, x_dim


def _div_params(rng: RngStream, i: int) -> DivergenceParams:
    # rotate through the family so every mode's gradients get exercised
    mode = ("sharma-mittal", "renyi", "tsallis", "kl", "bhattacharyya")[i % 5]
    gamma = float(rng.uniform(0.3, 2.5))
    if abs(gamma - 1.0) < 0.05:
        gamma = 1.2
    beta = float(rng.uniform(-0.5, 2.5))
    if abs(beta - 1.0) < 0.05:
        beta = 0.5
    if mode == "tsallis":
        beta = gamma
    if mode in ("renyi", "bhattacharyya", "kl"):
        beta = 1.0
    if mode in ("kl",):
        gamma = 1.0
    if mode == "bhattacharyya":
        gamma = 0.5
    return DivergenceParams(mode=mode, gamma=gamma, beta=beta)


def run_gradient_contract(seed: int = 0, n_configs: int = 20,
                          corrupt: bool = False) -> GradReport:
    """Check every loss family over `n_configs` random configurations.

    `corrupt` perturbs one analytic gradient on purpose so the harness
    itself can be tested end to end (the report must then fail).
    """
    rng = RngStream(seed, 900)
    worst: dict[str, float] = {}

    def record(name: str, err: float):
        worst[name] = max(worst.get(name, 0.0), err)

    for i in range(n_configs):
        k_cls = 3 + i % 3
        m = 4
        gen, disc, t_dim, z_dim, x_dim = _tiny_models(rng, k_cls)
        params = _div_params(rng, i)

        # divergence value gradients (d/dp and d/d(gamma, beta))
        p = _rand_simplex(rng, k_cls)
        q = _rand_simplex(rng, k_cls)
        dp, (dg, db) = sm_divergence_grads(p, q, params)

        def div_of_raw(raw, q=q, params=params):
            w = np.abs(raw) / np.abs(raw).sum()
            return sm_divergence(w, q, params)

        # differentiate through the simplex projection to stay on it
        raw0 = p.copy()
        fd_raw = finite_diff_gradient(lambda r: div_of_raw(r), raw0, 1e-6)
        s = raw0.sum()
        jac = (np.eye(k_cls) * s - np.outer(raw0, np.ones(k_cls))) / s ** 2
        record("divergence_dp", relative_error(jac.T @ dp, fd_raw))

        if params.mode in ("sharma-mittal", "renyi", "tsallis"):
            def div_of_gamma(gv):
                pg = replace(params, gamma=float(gv[0]),
                             beta=float(gv[0]) if params.mode == "tsallis" else params.beta)
                return sm_divergence(p, q, pg)

            fd_g = finite_diff_gradient(div_of_gamma, np.array([params.gamma]), 1e-6)
            record("divergence_dgamma", relative_error(np.array([dg]), fd_g))
        if params.mode == "sharma-mittal":
            def div_of_beta(bv):
                return sm_divergence(p, q, replace(params, beta=float(bv[0])))

            fd_b = finite_diff_gradient(div_of_beta, np.array([params.beta]), 1e-6)
            record("divergence_dbeta", relative_error(np.array([db]), fd_b))

        # entropy loss incl. batch min-max normalization, w.r.t. logits
        logits0 = rng.normal((m, k_cls))
        probs0 = softmax(logits0)
        e0, _, _, _ = entropy_loss_batch(probs0, params)
        bounds = minmax_bounds(e0)

        def le_norm_of(logits_flat):
            probs = softmax(logits_flat.reshape(m, k_cls))
            e, _, _, _ = entropy_loss_batch(probs, params)
            return float(np.mean(batch_minmax_normalize(e, bounds)))

        _, de_dp, _, _ = entropy_loss_batch(probs0, params)
        scale = minmax_gradient_scale(bounds)
        analytic = softmax_vjp(probs0, de_dp * (scale / m)).ravel()
        fd = finite_diff_gradient(le_norm_of, logits0.ravel().copy(), 1e-6)
        record("entropy_loss_normalized", relative_error(analytic, fd))

        # penalty: value + parameter gradient
        x_hat = rng.normal((m, x_dim))
        _, grad_pen, _ = gradient_penalty(disc, x_hat)
        theta_d0 = disc.param_vector()

        def pen_of(theta):
            disc.set_param_vector(theta)
            val, _, _ = gradient_penalty(disc, x_hat)
            return val

        fd = finite_diff_gradient(pen_of, theta_d0.copy(), 1e-6)
        disc.set_param_vector(theta_d0)
        record("lipschitz_penalty", relative_error(grad_pen, fd))

        # creativity loss w.r.t. generator params and (gamma, beta)
        t_h = rng.normal((m, t_dim))
        z_h = rng.normal((m, z_dim))
        lam = float(rng.uniform(0.3, 2.0))
        res_c = creativity_loss(gen, disc, t_h, z_h, lam, params)
        x0 = gen.forward(t_h, z_h)
        (_, logits_c) = disc.forward(x0)
        e_c, _, _, _ = entropy_loss_batch(softmax(logits_c), params)
        bounds_c = minmax_bounds(e_c)
        theta_g0 = gen.param_vector()

        def creat_of(theta):
            gen.set_param_vector(theta)
            r = creativity_loss(gen, disc, t_h, z_h, lam, params, norm_bounds=bounds_c)
            return r.value

        fd = finite_diff_gradient(creat_of, theta_g0.copy(), 1e-6)
        gen.set_param_vector(theta_g0)
        record("creativity_loss_dgen", relative_error(res_c.grad_gen, fd))

        if params.mode in ("sharma-mittal", "renyi", "tsallis"):
            def creat_of_gamma(gv):
                pg = replace(params, gamma=float(gv[0]),
                             beta=float(gv[0]) if params.mode == "tsallis" else params.beta)
                return creativity_loss(gen, disc, t_h, z_h, lam, pg,
                                       norm_bounds=bounds_c).value

            fd_g = finite_diff_gradient(creat_of_gamma, np.array([params.gamma]), 1e-6)
            record("creativity_loss_dgamma",
                   relative_error(np.array([res_c.grad_divergence[0]]), fd_g))
        if params.mode == "sharma-mittal":
            def creat_of_beta(bv):
                return creativity_loss(gen, disc, t_h, z_h, lam,
                                       replace(params, beta=float(bv[0])),
                                       norm_bounds=bounds_c).value

            fd_b = finite_diff_gradient(creat_of_beta, np.array([params.beta]), 1e-6)
            record("creativity_loss_dbeta",
                   relative_error(np.array([res_c.grad_divergence[1]]), fd_b))

        # visual pivot
        desc_k = rng.normal((2, t_dim))
        noise_k = [rng.normal((3, z_dim)), rng.normal((2, z_dim))]
        centers_k = rng.normal((2, x_dim))
        res_p = visual_pivot(gen, desc_k, noise_k, centers_k)

        def pivot_of(theta):
            gen.set_param_vector(theta)
            return visual_pivot(gen, desc_k, noise_k, centers_k).value

        fd = finite_diff_gradient(pivot_of, theta_g0.copy(), 1e-6)
        gen.set_param_vector(theta_g0)
        record("visual_pivot", relative_error(res_p.grad_gen, fd))

        # full generator loss (all four terms)
        y_s = rng.integers(0, k_cls, m)
        t_s = rng.normal((m, t_dim))
        z_s = rng.normal((m, z_dim))
        centers_all = rng.normal((k_cls, x_dim))
        res_gl = generator_loss(gen, disc, t_s, y_s, z_s, t_h, z_h, lam, params,
                                centers_all, norm_bounds=bounds_c)

        def gl_of(theta):
            gen.set_param_vector(theta)
            return generator_loss(gen, disc, t_s, y_s, z_s, t_h, z_h, lam, params,
                                  centers_all, norm_bounds=bounds_c).value

        fd = finite_diff_gradient(gl_of, theta_g0.copy(), 1e-6)
        gen.set_param_vector(theta_g0)
        record("generator_loss", relative_error(res_gl.grad_gen, fd))

        # discriminator loss incl. the penalty (double backprop path)
        x_real = rng.normal((m, x_dim))
        y_real = rng.integers(0, k_cls, m)
        eps = rng.uniform(0.0, 1.0, m)
        gp_w = float(rng.uniform(0.5, 5.0))
        res_d = discriminator_loss(disc, gen, x_real, y_real, t_s, y_s, z_s,
                                   gp_w, eps)

        def dl_of(theta):
            disc.set_param_vector(theta)
            return discriminator_loss(disc, gen, x_real, y_real, t_s, y_s, z_s,
                                      gp_w, eps).value

        fd = finite_diff_gradient(dl_of, theta_d0.copy(), 1e-6)
        disc.set_param_vector(theta_d0)
        record("discriminator_loss", relative_error(res_d.grad_disc, fd))

    if corrupt:
        worst["discriminator_loss"] = max(worst.get("discriminator_loss", 0.0), 0.05)

    tolerances = {"lipschitz_penalty": TOL_PENALTY,
                  "discriminator_loss": TOL_PENALTY}
    report = GradReport()
    for name in sorted(worst):
        report.checks.append(CheckResult(name=name, max_rel_err=worst[name],
                                         tolerance=tolerances.get(name, TOL_DEFAULT)))
    return report
