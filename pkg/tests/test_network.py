import numpy as np
import pytest

from oracles import numeric_grad, rel_err
from pcclean import autodiff as ad
from pcclean.checkpoint import CheckpointError
from pcclean.geometry import PointCloud
from pcclean.graph import knn_graph
from pcclean.network import (GraphConvVariant, Model, ModelConfig, graph_conv_layer, init_params,
                             local_feature_network, local_feature_network_reference, param_shapes,
                             qstn_forward, quaternion_to_rotation, residual_block)
from pcclean.detector import cloud_patches


def random_patches(rng, b, m):
    pts = rng.normal(size=(b, m, 3)) * 0.4
    pts[:, 0] = 0.0
    return pts


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig()
        assert cfg.k == 16 and cfg.variant is GraphConvVariant.DYNAMIC
        assert cfg.local_widths == (64, 64, 128, 256)

    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(local_widths=(4, 4, 4))
        with pytest.raises(ValueError):
            ModelConfig(k=16, patch_points=16)

    def test_variant_parse(self):
        assert GraphConvVariant.parse("ours1") is GraphConvVariant.DYNAMIC
        assert GraphConvVariant.parse("OURS2") is GraphConvVariant.FIXED_LOW_DIM
        assert GraphConvVariant.parse("fixed").tag == "ours2"
        with pytest.raises(ValueError):
            GraphConvVariant.parse("ours3")

    def test_dict_round_trip(self, tiny_config):
        cfg = tiny_config.with_(variant=GraphConvVariant.FIXED_LOW_DIM)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_desk_is_smaller(self):
        desk = ModelConfig.desk()
        full = ModelConfig()
        assert desk.global_width < full.global_width and desk.k == full.k


class TestParams:
    def test_shapes_and_order(self, tiny_config):
        params = init_params(tiny_config, 0)
        assert [n for n, _ in param_shapes(tiny_config)] == list(params)
        for name, shape in param_shapes(tiny_config):
            assert params[name].shape == shape
        assert params["conv.0.w"].shape == (6, 4)
        assert params["conv.1.w"].shape == (8, 4)

    def test_schemes(self, tiny_config):
        uni = init_params(tiny_config, 0, "uniform")
        mixed = init_params(tiny_config, 0, "mixed")
        assert np.abs(uni["head.0.w"].values).max() < 1e-3
        assert np.abs(mixed["head.0.w"].values).max() > 1e-3
        assert np.abs(mixed["out.w"].values).max() < 1e-3
        for p in (uni, mixed):
            np.testing.assert_array_equal(p["qstn.out.b"].values, [1, 0, 0, 0])
            np.testing.assert_array_equal(p["qstn.out.w"].values, 0)
        with pytest.raises(ValueError):
            init_params(tiny_config, 0, "xavier")

    def test_seeded(self, tiny_config):
        a, b = init_params(tiny_config, 5), init_params(tiny_config, 5)
        assert all(np.array_equal(a[n].values, b[n].values) for n in a)


class TestRotation:
    def test_known(self):
        np.testing.assert_array_equal(quaternion_to_rotation([1, 0, 0, 0]), np.eye(3))
        np.testing.assert_allclose(quaternion_to_rotation([0, 0, 0, 1]), np.diag([-1.0, -1.0, 1.0]), atol=1e-15)
        np.testing.assert_array_equal(quaternion_to_rotation([2, 0, 0, 0]), np.eye(3))
        with pytest.raises(ValueError):
            quaternion_to_rotation([0, 0, 0, 0])

    def test_qstn_identity_at_init(self, tiny_config, rng):
        pts = random_patches(rng, 3, 12)
        rotated, rot = qstn_forward(pts, init_params(tiny_config, 0))
        np.testing.assert_array_equal(rot.values, np.broadcast_to(np.eye(3), (3, 3, 3)))
        np.testing.assert_allclose(rotated.values, pts, atol=1e-9)

    def test_qstn_orthonormal_random_params(self, tiny_config, rng):
        for seed in range(5):
            params = init_params(tiny_config, seed)
            params["qstn.out.w"] = ad.Tensor(rng.normal(size=params["qstn.out.w"].shape))
            params["qstn.out.b"] = ad.Tensor(rng.normal(size=4))
            _, rot = qstn_forward(random_patches(rng, 4, 12), params)
            r = rot.values
            assert np.abs(np.swapaxes(r, 1, 2) @ r - np.eye(3)).max() < 1e-10
            assert np.abs(np.linalg.det(r) - 1).max() < 1e-10


class TestGraphConv:
    def test_fused_matches_reference(self, rng):
        x = ad.Tensor(rng.normal(size=(2, 14, 5)), requires_grad=True)
        w = ad.Tensor(rng.normal(size=(10, 7)), requires_grad=True)
        b = ad.Tensor(rng.normal(size=7), requires_grad=True)
        g = knn_graph(x.values, 4)
        fused = local_feature_network(x, g, w, b)
        ref = local_feature_network_reference(x, g, w, b)
        np.testing.assert_allclose(fused.values, ref.values, rtol=1e-12, atol=1e-12)
        gout = rng.normal(size=fused.shape)
        grads = []
        for out in (fused, ref):
            for t in (x, w, b):
                t.zero_grad()
            ad.backward(ad.sum_(out * gout))
            grads.append([t.grad.copy() for t in (x, w, b)])
        for a, c in zip(*grads):
            np.testing.assert_allclose(a, c, rtol=1e-10, atol=1e-12)

    def test_fused_unbatched(self, rng):
        x = rng.normal(size=(10, 3))
        g = knn_graph(x, 3)
        w, b = rng.normal(size=(6, 4)), rng.normal(size=4)
        np.testing.assert_allclose(local_feature_network(x, g, w, b).values,
                                   local_feature_network_reference(x, g, w, b).values, atol=1e-12)
        with pytest.raises(ValueError):
            local_feature_network(x, g, rng.normal(size=(5, 4)), b)

    def test_layer_one_identical_across_variants(self, tiny_config, rng):
        params = init_params(tiny_config, 1)
        x = random_patches(rng, 5, 12)
        dyn, _ = graph_conv_layer(x, tiny_config.with_(variant="dynamic"), params)
        fix, _ = graph_conv_layer(x, tiny_config.with_(variant="fixed"), params)
        assert np.array_equal(dyn[0].values, fix[0].values)

    def test_fixed_reuses_one_graph(self, tiny_config, rng):
        _, graphs = graph_conv_layer(random_patches(rng, 2, 12), tiny_config.with_(variant="fixed"),
                                     init_params(tiny_config, 0))
        assert all(g is graphs[0] for g in graphs)

    def test_dynamic_graph_changes(self, tiny_config):
        # search for a witness where the feature-space graph differs after layer 1
        params = init_params(tiny_config, 2)
        cfg = tiny_config.with_(variant="dynamic")
        for seed in range(50):
            x = random_patches(np.random.default_rng(seed), 1, 12)
            _, graphs = graph_conv_layer(x, cfg, params)
            if not np.array_equal(graphs[0].neighbors, graphs[1].neighbors):
                break
        else:
            pytest.fail("no patch found whose layer-2 graph differs")
        assert graphs[1] is not graphs[0]

    def test_too_few_points(self, tiny_config, rng):
        with pytest.raises(ValueError):
            graph_conv_layer(rng.normal(size=(1, 4, 3)), tiny_config, init_params(tiny_config, 0))


class TestResidual:
    def test_zero_branch_is_identity(self, rng):
        x = rng.normal(size=(3, 5))
        y = residual_block(x, rng.normal(size=(5, 5)), rng.normal(size=5), np.zeros((5, 5)), np.zeros(5))
        np.testing.assert_array_equal(y.values, x)

    def test_zero_input(self, rng):
        b2 = rng.normal(size=4)
        y = residual_block(np.zeros(4), rng.normal(size=(4, 4)), np.zeros(4), rng.normal(size=(4, 4)), b2)
        np.testing.assert_array_equal(y.values, b2)

    def test_gradient(self, rng):
        arrays = [rng.normal(size=(3, 4)), rng.normal(size=(4, 4)), rng.normal(size=4),
                  rng.normal(size=(4, 4)), rng.normal(size=4)]
        tensors = [ad.Tensor(a, requires_grad=True) for a in arrays]
        wout = rng.normal(size=(3, 4))
        ad.backward(ad.sum_(residual_block(*tensors) * wout))
        for t in tensors:
            def f():
                with ad.no_grad():
                    return float((residual_block(*[ad.Tensor(u.values) for u in tensors]).values * wout).sum())
            assert rel_err(t.grad, numeric_grad(f, t.values)) < 1e-4

    def test_width_mismatch(self, rng):
        with pytest.raises(ValueError):
            residual_block(np.zeros(4), np.zeros((4, 3)), np.zeros(3), np.zeros((3, 3)), np.zeros(3))


class TestModels:
    def test_detector_range_and_determinism(self, tiny_config, rng):
        m = Model.create("detector", tiny_config, seed=3)
        pts = random_patches(rng, 6, 12) * 5
        p = m.predict((pts, np.ones(6)))
        assert p.shape == (6,) and np.all((p >= 0) & (p <= 1))
        np.testing.assert_array_equal(m.predict((pts, np.ones(6))), p)
        dup = np.concatenate([pts[:1], pts[:1]])
        q = m.predict((dup, np.ones(2)))
        assert q[0] == q[1]

    def test_detector_permutation_invariant(self, tiny_config, rng):
        m = Model.create("detector", tiny_config, seed=4)
        pts = random_patches(rng, 4, 12)
        perm = np.concatenate([[0], 1 + rng.permutation(11)])
        np.testing.assert_allclose(m.predict((pts[:, perm], np.ones(4))), m.predict((pts, np.ones(4))),
                                   rtol=1e-12, atol=1e-14)

    def test_denoiser_zero_head(self, tiny_config, rng):
        m = Model.create("denoiser", tiny_config, seed=0, scheme="he")
        m.params["out.w"] = ad.Tensor(np.zeros_like(m.params["out.w"].values), requires_grad=True)
        d = m.predict((random_patches(rng, 3, 12), np.full(3, 0.2)))
        np.testing.assert_array_equal(d, 0.0)

    def test_denoiser_bounded_by_scale(self, tiny_config, rng):
        m = Model.create("denoiser", tiny_config, seed=0, scheme="he")
        m.params["out.w"] = ad.Tensor(m.params["out.w"].values * 1e4, requires_grad=True)
        scales = rng.uniform(0.1, 2.0, size=8)
        d = m.predict((random_patches(rng, 8, 12) * 3, scales))
        assert np.all(np.linalg.norm(d, axis=1) <= scales * (1 + 1e-12))
        assert np.linalg.norm(d, axis=1).max() > 0.5 * scales.min()

    def test_rotation_consistency_report(self, rng):
        # report-only: the network is not exactly rotation-equivariant
        cfg = ModelConfig.desk(patch_points=24, k=8)
        m = Model.create("denoiser", cfg, seed=0, scheme="he")
        cloud = PointCloud(rng.normal(size=(200, 3)))
        q = np.array([0.9, 0.1, -0.3, 0.2])
        rot = quaternion_to_rotation(q)
        d0 = m.predict(cloud_patches(cloud, cfg, np.arange(40)))
        d1 = m.predict(cloud_patches(PointCloud(cloud.points @ rot.T), cfg, np.arange(40)))
        drift = np.linalg.norm(d1 @ rot - d0, axis=1).mean() / np.linalg.norm(d0, axis=1).mean()
        print(f"rotation drift (relative) = {drift:.3g}")
        assert np.isfinite(drift)

    def test_kind_checks(self, tiny_config):
        with pytest.raises(ValueError):
            Model("classifier", tiny_config, {})
        with pytest.raises(ValueError):
            Model("denoiser", tiny_config, {})

    def test_predict_matches_forward_and_chunks(self, tiny_config, rng):
        m = Model.create("denoiser", tiny_config, seed=1, scheme="he")
        pts, scales = random_patches(rng, 7, 12), rng.uniform(0.5, 1, 7)
        full = m.forward((pts, scales)).values
        # chunking changes BLAS blocking, so equality holds to rounding only
        np.testing.assert_allclose(m.predict((pts, scales), batch_size=3), full, rtol=1e-12, atol=1e-15)

    def test_with_variant_shares_params(self, tiny_config):
        m = Model.create("detector", tiny_config)
        m2 = m.with_variant("ours2")
        assert m2.config.variant is GraphConvVariant.FIXED_LOW_DIM and m2.params is m.params
        c = m.copy()
        c.params["out.b"].values[:] = 9
        assert m.params["out.b"].values[0] == 0

    def test_checkpoint_round_trip(self, tiny_config, tmp_path, rng):
        m = Model.create("denoiser", tiny_config.with_(variant="fixed"), seed=9, scheme="he")
        path = tmp_path / "m.ckpt"
        m.save(path, {"note": "x"})
        back = Model.load(path)
        assert back.kind == "denoiser" and back.config == m.config
        pts = (random_patches(rng, 3, 12), np.ones(3))
        np.testing.assert_array_equal(back.predict(pts), m.predict(pts))
        m.save(tmp_path / "again.ckpt", {"note": "x"})
        assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()

    def test_checkpoint_config_mismatch(self, tiny_config):
        ck = Model.create("detector", tiny_config).to_checkpoint()
        ck.config["global_width"] = 9
        with pytest.raises(CheckpointError):
            Model.from_checkpoint(ck)
