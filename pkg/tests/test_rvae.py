"""Variational encoder/decoder and manifold-constrained sampling."""

import numpy as np
import pytest

from geomanifold import Tensor, backprop, ops
from geomanifold import manifold as mf
from geomanifold import rvae
from geomanifold.errors import UsageError
from geomanifold.gradcheck import finite_diff_check
from geomanifold.rng import RngHub

RNG = np.random.default_rng(42)
SPHERE = mf.ManifoldKind(mf.HYPERSPHERE, 6)


def small_cfg():
    return rvae.VAEConfig(latent_dim=6, hidden=(16, 8), patch_len=100)


def test_patch_count_arithmetic():
    cfg = small_cfg()
    assert rvae.n_patches(cfg, 800) == 8
    with pytest.raises(UsageError):
        rvae.n_patches(cfg, 850)


def test_patchify_roundtrip():
    x = RNG.normal(size=(3, 4, 200))
    patches = rvae.patchify(x, 100)
    assert patches.shape == (6, 400)
    back = rvae.unpatchify_graph(Tensor(patches), 3, 4, 100).data
    assert np.array_equal(back, x)


def test_zero_input_zero_heads():
    cfg = small_cfg()
    enc = rvae.VaeEncoder(cfg, in_dim=400, rng=RngHub(0).get("init"))
    enc.mu_head.w.data[:] = 0.0
    enc.logvar_head.w.data[:] = 0.0
    mu, log_var = enc(Tensor(np.zeros((8, 400))))
    assert np.array_equal(mu.data, np.zeros((8, 6)))
    assert np.array_equal(log_var.data, np.zeros((8, 6)))


def test_encoder_gradient_matches_fd():
    cfg = small_cfg()
    enc = rvae.VaeEncoder(cfg, in_dim=40, rng=RngHub(1).get("init"))
    x = Tensor(RNG.normal(size=(4, 40)))

    def loss():
        mu, _ = enc(x)
        return ops.mean_(mu)

    report = finite_diff_check(loss, enc.params(), tolerance=1e-4,
                               max_entries_per_param=8, rng=RNG)
    assert report.passed, str(report)


def test_reparameterize_zero_noise_is_projected_mean():
    mu_arr = RNG.normal(size=(5, 6))
    mu = Tensor(mu_arr)
    log_var = Tensor(RNG.normal(size=(5, 6)))
    z = rvae.reparameterize(mu, log_var, None, SPHERE)
    expected = mf.project_rows(SPHERE, Tensor(mu_arr)).data
    assert np.array_equal(z.data, expected)


def test_reparameterize_vanishing_scale():
    mu = Tensor(RNG.normal(size=(3, 6)))
    log_var = Tensor(np.full((3, 6), -20.0))
    eps = RNG.normal(size=(3, 6))
    z = rvae.reparameterize(mu, log_var, eps, SPHERE)
    z0 = rvae.reparameterize(mu, log_var, None, SPHERE)
    assert np.max(np.abs(z.data - z0.data)) < 1e-4


def test_reparameterize_projection_example():
    mu = Tensor(np.array([[3.0, 4.0, 0.0, 0.0, 0.0, 0.0]]))
    z = rvae.reparameterize(mu, Tensor(np.zeros((1, 6))), None, SPHERE)
    assert np.allclose(z.data[0], [0.6, 0.8, 0, 0, 0, 0], atol=1e-12)


def test_decoder_zero_init_and_shape():
    cfg = small_cfg()
    dec = rvae.VaeDecoder(cfg, out_dim=400, rng=RngHub(2).get("init"))
    for p in dec.params().values():
        p.data[:] = 0.0
    z = Tensor(RNG.normal(size=(8, 6)))
    out = dec(z)
    assert out.shape == (8, 400)
    assert np.array_equal(out.data, np.zeros((8, 400)))


def test_vae_loss_identities():
    x = Tensor(RNG.normal(size=(2, 10)))
    mu = Tensor(np.zeros((2, 6)))
    lv = Tensor(np.zeros((2, 6)))
    # perfect reconstruction, gamma = 0
    assert rvae.vae_loss(x, x, mu, lv, gamma=0.0, batch_size=2).item() == 0.0
    # unit constant error
    zeros = Tensor(np.zeros((2, 10)))
    onesx = Tensor(np.ones((2, 10)))
    assert abs(rvae.vae_loss(zeros, onesx, mu, lv, gamma=0.0, batch_size=2).item() - 1.0) < 1e-15
    # standard-normal posterior contributes zero KL
    with_kl = rvae.vae_loss(zeros, onesx, mu, lv, gamma=1.0, batch_size=2).item()
    assert abs(with_kl - 1.0) < 1e-15
    # nonnegative in general
    mu2 = Tensor(RNG.normal(size=(2, 6)))
    lv2 = Tensor(RNG.normal(size=(2, 6)))
    assert rvae.vae_loss(x, Tensor(RNG.normal(size=(2, 10))), mu2, lv2, 0.5, 2).item() >= 0.0


def test_sampling_deterministic_for_fixed_seed():
    hub_a, hub_b = RngHub(123), RngHub(123)
    eps_a = hub_a.get("vae.eps").normal(size=(4, 6))
    eps_b = hub_b.get("vae.eps").normal(size=(4, 6))
    assert np.array_equal(eps_a, eps_b)


def test_end_to_end_gradient_through_reparameterization():
    """Pathwise estimator: grad of the full VAE loss vs finite differences."""
    cfg = small_cfg()
    rng = RngHub(3).get("init")
    enc = rvae.VaeEncoder(cfg, in_dim=30, rng=rng)
    dec = rvae.VaeDecoder(cfg, out_dim=30, rng=rng)
    x_np = RNG.normal(size=(3, 30))
    eps = RNG.normal(size=(3, 6))
    params = {**enc.params(), **dec.params()}

    def loss():
        x = Tensor(x_np)
        mu, lv = enc(x)
        z = rvae.reparameterize(mu, lv, eps, SPHERE)
        x_hat = dec(z)
        return rvae.vae_loss(x, x_hat, mu, lv, gamma=1e-2, batch_size=3)

    report = finite_diff_check(loss, params, tolerance=1e-4,
                               max_entries_per_param=5, rng=RNG)
    assert report.passed, str(report)
