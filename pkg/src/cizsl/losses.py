"""Training losses: the creativity term over hallucinated descriptors, the
four-term generator objective, the critic loss with the Lipschitz penalty,
and the visual-pivot regularizer. Each loss returns its value together with
exact analytic gradients, verified against central differences in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .divergence import (DivergenceParams, batch_minmax_normalize,
                         entropy_loss_batch, minmax_bounds,
                         minmax_gradient_scale)
from .errors import InvalidInputError
from .net import Discriminator, Generator, gradient_penalty
from .numerics import RngStream, log_softmax, softmax, softmax_vjp

ALPHA_MODES = ("uniform-0.2-0.8", "uniform-0-1", "fixed-0.5", "normal-0.5")


def sample_alpha(rng: RngStream, mode: str, n: int) -> np.ndarray:
    """Mixing coefficients for descriptor interpolation, one per row.

    The normal mode draws N(0.5, (0.5/3)^2) clamped to [0, 1].
    """
    if mode == "fixed-0.5":
        return np.full(n, 0.5)
    if mode == "uniform-0-1":
        return rng.uniform(0.0, 1.0, n)
    if mode == "uniform-0.2-0.8":
        return rng.uniform(0.2, 0.8, n)
    if mode == "normal-0.5":
        return np.clip(0.5 + (0.5 / 3.0) * rng.normal(n), 0.0, 1.0)
    raise InvalidInputError(f"unknown alpha mode {mode!r}; expected one of {ALPHA_MODES}")


def interpolate_texts(t_a: np.ndarray, t_b: np.ndarray, alpha) -> np.ndarray:
    """alpha * t_a + (1 - alpha) * t_b, row-wise for batches."""
    t_a = np.asarray(t_a, dtype=np.float64)
    t_b = np.asarray(t_b, dtype=np.float64)
    if t_a.shape != t_b.shape:
        raise InvalidInputError(f"descriptor shapes differ: {t_a.shape} vs {t_b.shape}")
    a = np.asarray(alpha, dtype=np.float64)
    if t_a.ndim == 2:
        a = a.reshape(-1, 1)
    return a * t_a + (1.0 - a) * t_b


def hallucinate_text(t_a: np.ndarray, t_b: np.ndarray, rng: RngStream,
                     mode: str = "uniform-0.2-0.8") -> np.ndarray:
    """One pseudo-unseen descriptor between two distinct seen-class descriptors."""
    alpha = sample_alpha(rng, mode, 1)[0]
    return interpolate_texts(t_a, t_b, alpha)


def hallucinate_batch(descriptors: np.ndarray, rng_pairs: RngStream,
                      rng_alpha: RngStream, mode: str, n: int):
    """Batch of hallucinated descriptors from random distinct class pairs.

    Returns (t_h rows, pair indices (a, b), alphas). Callers own the contract
    that `descriptors` holds one row per distinct seen class.
    """
    k = descriptors.shape[0]
    if k < 2:
        raise InvalidInputError("hallucination needs at least 2 seen classes")
    a = rng_pairs.integers(0, k, n)
    b = (a + rng_pairs.integers(1, k, n)) % k
    alpha = sample_alpha(rng_alpha, mode, n)
    return interpolate_texts(descriptors[a], descriptors[b], alpha), (a, b), alpha


def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise InvalidInputError("labels must be a vector of class indices")
    if np.any(labels < 0) or np.any(labels >= k):
        raise InvalidInputError(
            f"label outside the seen-class range [0, {k}): {labels.min()}..{labels.max()}")
    y = np.zeros((labels.size, k))
    y[np.arange(labels.size), labels] = 1.0
    return y


@dataclass
class LossResult:
    value: float
    grad_gen: np.ndarray | None = None
    grad_disc: np.ndarray | None = None
    grad_divergence: tuple[float, float] = (0.0, 0.0)
    parts: dict = field(default_factory=dict)


def creativity_loss(gen: Generator, disc: Discriminator, t_h: np.ndarray,
                    z_h: np.ndarray, lam: float, div_params: DivergenceParams,
                    norm_bounds: tuple[float, float] | None = None,
                    extra_class: bool = False) -> LossResult:
    """Realism-plus-entropy objective on hallucinated-descriptor generations.

    value = -mean critic(G(t_h, z)) + lam * mean min-max-normalized entropy
    loss of the seen-class softmax. Gradients flow to the generator and to
    (gamma, beta); min/max of the normalization carry no gradient, and
    `norm_bounds` freezes them explicitly for finite-difference checking.

    With `extra_class`, the entropy term is replaced by cross-entropy toward
    a dedicated extra class (the last logit column), the ablation variant.
    """
    t_h = np.atleast_2d(np.asarray(t_h, dtype=np.float64))
    m = t_h.shape[0]
    if m == 0:
        raise InvalidInputError("creativity loss needs a non-empty batch")
    x_h, g_cache = gen.forward_cached(t_h, z_h)
    (real, logits), d_cache = disc.forward_cached(x_h)
    realness = -float(np.mean(real))
    d_real = np.full(m, -1.0 / m)

    grad_div = np.zeros(2)
    if lam == 0.0:
        value = realness
        d_logits = np.zeros_like(logits)
        mean_entropy = 0.0
        parts = {"realness": realness, "entropy": 0.0}
    elif extra_class:
        lsm = log_softmax(logits)
        ce = -lsm[:, -1]
        value = realness + lam * float(np.mean(ce))
        target = np.zeros_like(logits)
        target[:, -1] = 1.0
        d_logits = lam / m * (softmax(logits) - target)
        mean_entropy = float(np.mean(ce))
        parts = {"realness": realness, "entropy": lam * float(np.mean(ce))}
    else:
        probs = softmax(logits)
        e, de_dp, de_dg, de_db = entropy_loss_batch(probs, div_params)
        bounds = minmax_bounds(e) if norm_bounds is None else norm_bounds
        normalized = batch_minmax_normalize(e, bounds)
        scale = minmax_gradient_scale(bounds)
        value = realness + lam * float(np.mean(normalized))
        d_logits = softmax_vjp(probs, (lam * scale / m) * de_dp)
        grad_div = (lam * scale / m) * np.array([de_dg.sum(), de_db.sum()])
        mean_entropy = float(np.mean(e))
        parts = {"realness": realness, "entropy": lam * float(np.mean(normalized))}

    _, d_x = disc.backward(d_cache, d_real, d_logits)
    grad_gen, _, _ = gen.backward(g_cache, d_x)
    return LossResult(value=value, grad_gen=grad_gen,
                      grad_divergence=(float(grad_div[0]), float(grad_div[1])),
                      parts={**parts, "mean_entropy": mean_entropy})


def visual_pivot(gen: Generator, descriptors: np.ndarray, noise: list[np.ndarray],
                 centers: np.ndarray) -> LossResult:
    """Mean squared distance between per-class generated means and real
    per-class feature means, averaged over the classes present.

    `descriptors` has one row per class, `noise[k]` the z draws for class k,
    `centers` the matching real means.
    """
    descriptors = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    k = descriptors.shape[0]
    if k == 0 or len(noise) != k or centers.shape[0] != k:
        raise InvalidInputError("need one descriptor, noise batch and center per class")
    rows_t, rows_z, owner = [], [], []
    for i in range(k):
        z = np.atleast_2d(np.asarray(noise[i], dtype=np.float64))
        rows_t.append(np.repeat(descriptors[i][None, :], z.shape[0], axis=0))
        rows_z.append(z)
        owner.append(np.full(z.shape[0], i))
    t_all = np.concatenate(rows_t)
    z_all = np.concatenate(rows_z)
    owner = np.concatenate(owner)
    x, cache = gen.forward_cached(t_all, z_all)
    value = 0.0
    d_x = np.zeros_like(x)
    for i in range(k):
        sel = owner == i
        mu = x[sel].mean(axis=0)
        diff = mu - centers[i]
        value += float(diff @ diff)
        d_x[sel] = (2.0 / (k * sel.sum())) * diff
    value /= k
    grad_gen, _, _ = gen.backward(cache, d_x)
    return LossResult(value=value, grad_gen=grad_gen)


def generator_loss(gen: Generator, disc: Discriminator, t_s: np.ndarray,
                   y_s: np.ndarray, z_s: np.ndarray, t_h: np.ndarray,
                   z_h: np.ndarray, lam: float, div_params: DivergenceParams,
                   centers_by_class: np.ndarray, creativity_enabled: bool = True,
                   extra_class: bool = False,
                   norm_bounds: tuple[float, float] | None = None) -> LossResult:
    """Full generator objective: creativity term plus seen-batch realism,
    seen-batch classification (log softmax of the class head) and the visual
    pivot, the last three computed on one shared forward pass.

    `centers_by_class[k]` is the real feature mean of seen class k;
    `y_s` holds 0-based class indices. With `creativity_enabled=False` the
    creativity term is dropped entirely (the non-creative baseline).
    """
    k_cls = disc.n_classes - (1 if extra_class else 0)
    y = _one_hot(y_s, k_cls)
    t_s = np.atleast_2d(np.asarray(t_s, dtype=np.float64))
    m = t_s.shape[0]

    x_s, g_cache = gen.forward_cached(t_s, z_s)
    (real, logits), d_cache = disc.forward_cached(x_s)

    realness = -float(np.mean(real))
    d_real = np.full(m, -1.0 / m)

    lsm = log_softmax(logits)
    cls_term = -float(np.mean(np.sum(y * lsm[:, :k_cls], axis=1)))
    probs = softmax(logits)
    d_logits = probs / m
    d_logits[:, :k_cls] -= y / m

    pivot = 0.0
    d_x_pivot = np.zeros_like(x_s)
    labels = np.asarray(y_s)
    present = np.unique(labels)
    for k in present:
        sel = labels == k
        mu = x_s[sel].mean(axis=0)
        diff = mu - centers_by_class[k]
        pivot += float(diff @ diff)
        d_x_pivot[sel] = (2.0 / (present.size * sel.sum())) * diff
    pivot /= present.size

    _, d_x = disc.backward(d_cache, d_real, d_logits)
    grad_gen, _, _ = gen.backward(g_cache, d_x + d_x_pivot)

    value = realness + cls_term + pivot
    grad_div = (0.0, 0.0)
    mean_entropy = 0.0
    parts = {"seen_realness": realness, "seen_classification": cls_term,
             "visual_pivot": pivot, "creativity": 0.0}
    if creativity_enabled:
        c = creativity_loss(gen, disc, t_h, z_h, lam, div_params,
                            norm_bounds=norm_bounds, extra_class=extra_class)
        value += c.value
        grad_gen = grad_gen + c.grad_gen
        grad_div = c.grad_divergence
        mean_entropy = c.parts["mean_entropy"]
        parts["creativity"] = c.value
    parts["mean_entropy"] = mean_entropy
    return LossResult(value=value, grad_gen=grad_gen, grad_divergence=grad_div,
                      parts=parts)


def discriminator_loss(disc: Discriminator, gen: Generator, x_real: np.ndarray,
                       y_real: np.ndarray, t_s: np.ndarray, y_s: np.ndarray,
                       z: np.ndarray, gp_weight: float, gp_eps: np.ndarray,
                       extra_class: bool = False, t_h: np.ndarray | None = None,
                       z_h: np.ndarray | None = None) -> LossResult:
    """Critic objective: Wasserstein terms, Lipschitz penalty at per-row
    interpolates eps * real + (1 - eps) * fake, and the two halved
    classification terms on real and generated seen features.

    Gradients are w.r.t. the discriminator only; the generator is frozen.
    """
    x_real = np.atleast_2d(np.asarray(x_real, dtype=np.float64))
    m = x_real.shape[0]
    k_cls = disc.n_classes - (1 if extra_class else 0)
    y_r = _one_hot(y_real, k_cls)
    y_f = _one_hot(y_s, k_cls)
    gp_eps = np.asarray(gp_eps, dtype=np.float64).reshape(m, 1)

    x_fake = np.atleast_2d(gen.forward(t_s, z))
    if x_fake.shape != x_real.shape:
        raise InvalidInputError(
            f"real batch {x_real.shape} and fake batch {x_fake.shape} misaligned")

    (real_f, logits_f), cache_f = disc.forward_cached(x_fake)
    (real_r, logits_r), cache_r = disc.forward_cached(x_real)

    wasserstein = float(np.mean(real_f) - np.mean(real_r))
    x_hat = gp_eps * x_real + (1.0 - gp_eps) * x_fake
    penalty, grad_penalty, _ = gradient_penalty(disc, x_hat)

    lsm_r, lsm_f = log_softmax(logits_r), log_softmax(logits_f)
    cls_real = -0.5 * float(np.mean(np.sum(y_r * lsm_r[:, :k_cls], axis=1)))
    cls_fake = -0.5 * float(np.mean(np.sum(y_f * lsm_f[:, :k_cls], axis=1)))

    d_logits_r = softmax(logits_r) * (0.5 / m)
    d_logits_r[:, :k_cls] -= y_r * (0.5 / m)
    d_logits_f = softmax(logits_f) * (0.5 / m)
    d_logits_f[:, :k_cls] -= y_f * (0.5 / m)

    g_f, _ = disc.backward(cache_f, np.full(m, 1.0 / m), d_logits_f)
    g_r, _ = disc.backward(cache_r, np.full(m, -1.0 / m), d_logits_r)
    grad = g_f + g_r + gp_weight * grad_penalty

    value = wasserstein + gp_weight * penalty + cls_real + cls_fake
    parts = {"wasserstein_gap": -wasserstein, "penalty": penalty,
             "cls_real": cls_real, "cls_fake": cls_fake}

    if extra_class:
        if t_h is None or z_h is None:
            raise InvalidInputError("extra-class ablation needs a hallucinated batch")
        x_h = np.atleast_2d(gen.forward(t_h, z_h))
        (_, logits_h), cache_h = disc.forward_cached(x_h)
        mh = x_h.shape[0]
        lsm_h = log_softmax(logits_h)
        cls_extra = -0.5 * float(np.mean(lsm_h[:, -1]))
        target = np.zeros_like(logits_h)
        target[:, -1] = 1.0
        d_logits_h = (softmax(logits_h) - target) * (0.5 / mh)
        g_h, _ = disc.backward(cache_h, np.zeros(mh), d_logits_h)
        grad = grad + g_h
        value += cls_extra
        parts["cls_extra"] = cls_extra

    return LossResult(value=value, grad_disc=grad, parts=parts)
