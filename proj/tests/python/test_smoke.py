import numpy as np
import pytest

import gradfeat


def test_forward_and_jvp_shapes():
    net = gradfeat.default_network()
    params = gradfeat.build_network(net, 1)
    x = np.random.default_rng(0).random((3, 1, 16, 16), dtype=np.float32)
    feats, z0 = gradfeat.forward_features(net, params, x)
    assert feats.shape == (3, net.feature_dim)
    w2 = gradfeat.TangentParams.zeros(net, params)
    f2, jf = gradfeat.jvp_forward(net, params, w2, z0)
    np.testing.assert_array_equal(f2, feats)
    assert not jf.any()


def test_adjoint_identity():
    net = gradfeat.default_network()
    ntk_net, params = gradfeat.adopt_ntk(net, gradfeat.build_network(net, 2))
    rng = np.random.default_rng(1)
    x = rng.random((2, 1, 16, 16), dtype=np.float32)
    _, z0 = gradfeat.forward_features(ntk_net, params, x)
    w2 = gradfeat.TangentParams.random(ntk_net, params, 3)
    _, jf = gradfeat.jvp_forward(ntk_net, params, w2, z0)
    u = rng.standard_normal(jf.shape).astype(np.float32)
    back = gradfeat.vjp_theta2(ntk_net, params, z0, u)
    lhs = float((u.astype(np.float64) * jf).sum())
    assert back.dot(w2) == pytest.approx(lhs, rel=1e-4)


def test_checkpoint_round_trip(tmp_path):
    net = gradfeat.default_network()
    params = gradfeat.build_network(net, 4)
    path = tmp_path / "net.gfck"
    gradfeat.save_checkpoint(path, net, params)
    net2, params2 = gradfeat.load_checkpoint(path)
    assert params2.checksum() == params.checksum()
    assert net2.theta2_names == net.theta2_names
    (tmp_path / "bad.gfck").write_bytes(b"NOPE")
    with pytest.raises(gradfeat.Error):
        gradfeat.load_checkpoint(tmp_path / "bad.gfck")


def test_probe_and_zero_init_full_model():
    data = gradfeat.gen_synthetic({"classes": 3, "per_class": 20}, seed=5)
    net = gradfeat.default_network()
    params = gradfeat.build_network(net, 6)
    head = gradfeat.fit_probe(net, params, data["images"], data["labels"], data["num_classes"], iterations=50)
    acc = gradfeat.evaluate(net, params, head, data["images"], data["labels"], data["num_classes"])
    assert 0.0 <= acc <= 1.0
    w2 = gradfeat.TangentParams.zeros(net, params)
    logits = gradfeat.full_logits(net, params, head, head.weight, w2, data["images"][:8])
    feats, _ = gradfeat.forward_features(net, params, data["images"][:8])
    np.testing.assert_allclose(logits, feats @ head.weight + head.bias, rtol=1e-5, atol=1e-5)


def test_verify_suites_pass():
    reports = gradfeat.verify(seed=1)
    assert [r["passed"] for r in reports] == [True, True, True]


def test_desk_config_has_version():
    cfg = gradfeat.desk_config()
    assert cfg["version"] == 1
    assert cfg["grid"] == ["ppp"]
