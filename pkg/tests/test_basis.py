import numpy as np
import pytest

from fieldflow.basis import (
    BasisNetParams,
    BasisTrainConfig,
    FourierFeatureMap,
    basis_loss,
    basis_loss_grad,
    eval_basis,
    eval_basis_discrete,
    fourier_features,
    load_basis_net,
    make_feature_map,
    save_basis_net,
    train_basis,
)
from fieldflow.errors import ContractViolation
from fieldflow.nn import ParamBundle, grad_check
from fieldflow.pod import PodBasis
from fieldflow.sim import Grid1D


def fourier_modes(points, length=20.0):
    """First three continuum-orthonormal trig functions on the domain."""
    points = np.asarray(points, dtype=float)
    return np.column_stack([
        np.full_like(points, 1.0 / np.sqrt(length)),
        np.sqrt(2.0 / length) * np.cos(2 * np.pi * points / length),
        np.sqrt(2.0 / length) * np.sin(2 * np.pi * points / length),
    ])


def toy_pod_basis(grid):
    modes = fourier_modes(grid.nodes, grid.length) * np.sqrt(grid.dx)
    return PodBasis(modes=modes, singular_values=np.array([3.0, 2.0, 1.0]),
                    spatial_points=grid.nodes)


def quick_result(seed=1, n_grid=16, epochs=3):
    grid = Grid1D(-10.0, 10.0, n_grid)
    cfg = BasisTrainConfig(n_features=8, hidden=(16,), max_epochs=epochs)
    return train_basis(toy_pod_basis(grid), cfg, seed=seed)


# ---------------------------------------------------------------------------
# feature map
# ---------------------------------------------------------------------------

def test_fourier_features_at_zero():
    fm = make_feature_map(np.random.default_rng(0), n_features=5, std=0.5)
    feats = fourier_features(0.0, fm)
    assert np.array_equal(feats, np.concatenate([np.ones(5), np.zeros(5)]))


def test_fourier_features_bounded_and_pythagorean():
    fm = make_feature_map(np.random.default_rng(1), n_features=16, std=0.5)
    xs = np.linspace(-3.0, 3.0, 50)
    feats = fourier_features(xs, fm)
    assert feats.shape == (50, 32)
    assert np.all(np.abs(feats) <= 1.0)
    assert np.max(np.abs(feats[:, :16] ** 2 + feats[:, 16:] ** 2 - 1.0)) <= 1e-12


def test_feature_map_shape_validation():
    with pytest.raises(ContractViolation):
        FourierFeatureMap(b=np.zeros((4, 2)), std=0.5)


def test_feature_map_frequencies_gaussian_scale():
    fm = make_feature_map(np.random.default_rng(2), n_features=4000, std=0.5)
    assert abs(np.std(fm.b) - 0.5) <= 0.02
    assert abs(np.mean(fm.b)) <= 0.03


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def test_basis_loss_zero_at_orthonormal_target():
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.standard_normal((12, 4)))
    assert basis_loss(q, q) <= 1e-12


def test_basis_loss_all_zero_counts_identity_diagonal():
    z = np.zeros((7, 2))
    assert basis_loss(z, z) == 2.0


def test_basis_loss_shape_mismatch():
    with pytest.raises(ContractViolation):
        basis_loss(np.zeros((4, 2)), np.zeros((4, 3)))


def test_basis_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    phi = rng.standard_normal((6, 3))
    targets = rng.standard_normal((6, 3))

    def loss_fn(p):
        mat = p["phi"].reshape(6, 3)
        loss, dphi = basis_loss_grad(mat, targets)
        return loss, ParamBundle({"phi": dphi.ravel()})

    params = ParamBundle({"phi": phi.ravel()})
    # away from the kink set the loss is smooth
    assert grad_check(loss_fn, params) <= 1e-5


def test_basis_loss_grad_value_matches_loss():
    rng = np.random.default_rng(5)
    phi = rng.standard_normal((5, 2))
    targets = rng.standard_normal((5, 2))
    loss, _ = basis_loss_grad(phi, targets)
    assert loss == basis_loss(phi, targets)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_eval_basis_off_grid_and_shapes():
    res = quick_result()
    single = eval_basis(0.0123, res.params)
    assert single.shape == (3,)
    batch = eval_basis(np.array([-4.0, 0.0123, 7.7]), res.params)
    assert batch.shape == (3, 3)


def test_eval_basis_grid_restriction_is_consistent():
    res = quick_result()
    xs = np.linspace(-9.0, 9.0, 40)
    batch = eval_basis(xs, res.params)
    subset = eval_basis(xs[::5], res.params)
    assert np.array_equal(batch[::5], subset)
    # single-point evaluation takes a different BLAS path; last-ulp only
    one = eval_basis(xs[3], res.params)
    assert np.max(np.abs(batch[3] - one)) <= 1e-13


def test_eval_basis_continuum_scale_factor():
    res = quick_result()
    xs = np.array([-2.0, 1.5])
    assert np.allclose(eval_basis(xs, res.params),
                       res.params.cont_scale * eval_basis_discrete(xs, res.params),
                       atol=0.0, rtol=0.0)


def test_eval_basis_deterministic():
    res = quick_result()
    xs = np.linspace(-8, 8, 11)
    assert np.array_equal(eval_basis(xs, res.params), eval_basis(xs, res.params))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def test_train_basis_fits_analytic_fourier_target():
    grid = Grid1D(-10.0, 10.0, 64)
    cfg = BasisTrainConfig(n_features=64, hidden=(80, 80, 80), lr=5e-3,
                           decay_patience=100, max_epochs=5000, patience=1200)
    res = train_basis(toy_pod_basis(grid), cfg, seed=0)
    held_out = grid.nodes[:-1] + grid.dx / 3
    err = np.abs(eval_basis(held_out, res.params) - fourier_modes(held_out))
    assert err.max() <= 1e-2


def test_train_basis_best_checkpoint_bookkeeping():
    res = quick_result(epochs=40)
    assert res.best_loss == min(res.losses)
    assert res.losses[res.best_epoch] == res.best_loss
    # returned params reproduce the best loss
    grid = Grid1D(-10.0, 10.0, 16)
    targets = toy_pod_basis(grid).modes
    phi = eval_basis_discrete(grid.nodes, res.params)
    assert abs(basis_loss(phi, targets) - res.best_loss) <= 1e-12


def test_train_basis_deterministic_per_seed():
    a = quick_result(seed=7, epochs=5)
    b = quick_result(seed=7, epochs=5)
    assert np.array_equal(a.params.mlp.flat, b.params.mlp.flat)
    assert np.array_equal(a.params.feature_map.b, b.params.feature_map.b)
    c = quick_result(seed=8, epochs=5)
    assert not np.array_equal(a.params.mlp.flat, c.params.mlp.flat)


def test_train_basis_feature_map_frozen():
    grid = Grid1D(-10.0, 10.0, 16)
    cfg = BasisTrainConfig(n_features=8, hidden=(16,), max_epochs=1)
    short = train_basis(toy_pod_basis(grid), cfg, seed=9)
    cfg_long = BasisTrainConfig(n_features=8, hidden=(16,), max_epochs=30)
    long = train_basis(toy_pod_basis(grid), cfg_long, seed=9)
    assert np.array_equal(short.params.feature_map.b, long.params.feature_map.b)
    assert not np.array_equal(short.params.mlp.flat, long.params.mlp.flat)


def test_train_basis_rejects_mismatched_points():
    grid = Grid1D(-10.0, 10.0, 16)
    with pytest.raises(ContractViolation):
        train_basis(toy_pod_basis(grid), BasisTrainConfig(max_epochs=1), seed=0,
                    grid_points=np.zeros(5))


def test_default_config_matches_reference_architecture():
    cfg = BasisTrainConfig()
    assert cfg.n_features == 128
    assert cfg.feature_std == 0.5
    assert cfg.hidden == (100, 100, 100, 100)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_basis_net_round_trip_bit_exact(tmp_path):
    res = quick_result()
    path = tmp_path / "basis.rxw"
    save_basis_net(path, res.params, {"note": "test"})
    loaded, meta = load_basis_net(path)
    assert np.array_equal(loaded.feature_map.b, res.params.feature_map.b)
    assert np.array_equal(loaded.mlp.flat, res.params.mlp.flat)
    assert loaded.cont_scale == res.params.cont_scale
    assert loaded.x_min == res.params.x_min and loaded.x_max == res.params.x_max
    assert meta["note"] == "test" and meta["r"] == 3
    xs = np.linspace(-9, 9, 7)
    assert np.array_equal(eval_basis(xs, loaded), eval_basis(xs, res.params))


def test_load_basis_net_rejects_wrong_kind(tmp_path):
    from fieldflow.nn import save_params
    path = tmp_path / "other.rxw"
    save_params(path, ParamBundle({"p": np.zeros(3)}), {"kind": "flow"})
    with pytest.raises(ContractViolation):
        load_basis_net(path)
