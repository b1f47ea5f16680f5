import numpy as np
import pytest

from adahash import autodiff as ad
from adahash import networks as nets
from adahash.fileio import FormatError


def small_net(seed=0, input_dim=3, hidden=(5,), output_dim=4, name="net"):
    return nets.init_net(nets.NetConfig(input_dim, hidden, output_dim), seed, name)


def zero_final_layer(pset):
    layer, w, b = pset.entries[-1]
    w.value[:] = 0.0
    b.value[:] = 0.0
    return pset


class TestInit:
    def test_same_seed_identical(self):
        a, b = small_net(seed=42), small_net(seed=42)
        for x, y in zip(a.arrays(), b.arrays()):
            assert x.tobytes() == y.tobytes()

    def test_different_seeds_differ(self):
        a, b = small_net(seed=1), small_net(seed=2)
        assert any(x.tobytes() != y.tobytes()
                   for x, y in zip(a.arrays(), b.arrays()))

    def test_biases_zero(self):
        pset = small_net(seed=3)
        for _, _, bias in pset.entries:
            np.testing.assert_array_equal(bias.value, np.zeros_like(bias.value))

    def test_glorot_bound(self):
        pset = small_net(seed=4, input_dim=6, hidden=(), output_dim=10)
        w = pset.entries[0][1].value
        bound = np.sqrt(6.0 / (6 + 10))
        assert np.all(np.abs(w) <= bound)

    def test_bad_dims_rejected(self):
        with pytest.raises(ValueError):
            nets.NetConfig(0, (4,), 2)


class TestEncode:
    def test_zero_final_layer_gives_zero_embedding(self):
        enc = zero_final_layer(small_net(seed=5))
        u = nets.encode(enc, ad.leaf(np.random.default_rng(0).normal(size=(4, 3))))
        np.testing.assert_array_equal(u.value, np.zeros((4, 4)))

    def test_shape_contract(self):
        enc = small_net(seed=6, input_dim=7, hidden=(5,), output_dim=2)
        u = nets.encode(enc, ad.leaf(np.ones((9, 7))))
        assert u.value.shape == (9, 2)

    def test_identical_rows_for_identical_inputs(self):
        enc = small_net(seed=7)
        x = np.tile([[0.3, -1.0, 0.5]], (3, 1))
        u = nets.encode(enc, ad.leaf(x)).value
        assert np.all(u[0] == u[1]) and np.all(u[1] == u[2])

    def test_embedding_strictly_inside_unit_box(self):
        enc = small_net(seed=8)
        x = np.random.default_rng(1).uniform(-5, 5, (50, 3))
        u = nets.encode(enc, ad.leaf(x)).value
        assert np.all(np.abs(u) < 1.0)

    def test_width_mismatch_names_both(self):
        enc = small_net(seed=9, input_dim=3)
        with pytest.raises(ValueError, match="width 5.*input 3"):
            nets.encode(enc, ad.leaf(np.zeros((2, 5))))


class TestClassify:
    def test_zero_weights_uniform(self):
        clf = zero_final_layer(small_net(seed=10, input_dim=4, hidden=(), output_dim=5))
        p = nets.classify(clf, ad.leaf(np.random.default_rng(2).normal(size=(3, 4))))
        np.testing.assert_allclose(p.value, np.full((3, 5), 0.2), atol=1e-15)

    def test_rows_sum_to_one(self):
        clf = small_net(seed=11, input_dim=4, hidden=(), output_dim=6)
        p = nets.classify(clf, ad.leaf(np.random.default_rng(3).normal(size=(8, 4))))
        np.testing.assert_allclose(p.value.sum(axis=1), np.ones(8), atol=1e-12)

    def test_argmax_invariant_under_logit_shift(self):
        clf = small_net(seed=12, input_dim=4, hidden=(), output_dim=6)
        u = np.random.default_rng(4).normal(size=(10, 4))
        before = nets.classify(clf, ad.leaf(u)).value.argmax(axis=1)
        clf.entries[-1][2].value += 13.7  # shift every output logit equally
        after = nets.classify(clf, ad.leaf(u)).value.argmax(axis=1)
        np.testing.assert_array_equal(before, after)


class TestReconstruct:
    def test_shape(self):
        gen = small_net(seed=13, input_dim=2, hidden=(6,), output_dim=9)
        out = nets.reconstruct(gen, ad.leaf(np.zeros((5, 2))))
        assert out.value.shape == (5, 9)

    def test_zero_final_layer(self):
        gen = zero_final_layer(small_net(seed=14, input_dim=2, hidden=(6,), output_dim=9))
        out = nets.reconstruct(gen, ad.leaf(np.ones((5, 2))))
        np.testing.assert_array_equal(out.value, np.zeros((5, 9)))

    def test_one_generator_serves_both_embedding_sources(self):
        gen = small_net(seed=15, input_dim=2, hidden=(4,), output_dim=3)
        u_src = ad.leaf([[0.1, -0.2]])
        u_tgt = ad.leaf([[0.4, 0.9]])
        out_src = nets.reconstruct(gen, u_src)
        out_tgt = nets.reconstruct(gen, u_tgt)
        # Same parameter storage feeds both paths.
        assert gen.entries[0][1] in _collect_leaves(out_src)
        assert gen.entries[0][1] in _collect_leaves(out_tgt)


def _collect_leaves(node):
    seen, stack, leaves = set(), [node], []
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        if not n.parents:
            leaves.append(n)
        stack.extend(n.parents)
    return leaves


class TestDiscriminate:
    def test_zero_weights_uniform_over_fake_slot_too(self):
        dsc = zero_final_layer(small_net(seed=16, input_dim=3, hidden=(), output_dim=11))
        p = nets.discriminate(dsc, ad.leaf(np.random.default_rng(5).normal(size=(4, 3))))
        np.testing.assert_allclose(p.value, np.full((4, 11), 1 / 11), atol=1e-15)

    def test_ten_classes_means_eleven_columns(self):
        dsc = small_net(seed=17, input_dim=3, hidden=(8,), output_dim=11)
        p = nets.discriminate(dsc, ad.leaf(np.zeros((2, 3))))
        assert p.value.shape == (2, 11)

    def test_rows_sum_to_one(self):
        dsc = small_net(seed=18, input_dim=3, hidden=(8,), output_dim=5)
        p = nets.discriminate(dsc, ad.leaf(np.random.default_rng(6).normal(size=(6, 3))))
        np.testing.assert_allclose(p.value.sum(axis=1), np.ones(6), atol=1e-12)


class TestSeparateStorage:
    def test_twin_nets_never_alias(self):
        cfg = nets.NetConfig(4, (6,), 4)
        gen_a = nets.init_net(cfg, (0, 0, 2), "gen_src")
        gen_b = nets.init_net(cfg, (0, 0, 3), "gen_tgt")
        for (_, wa, ba), (_, wb, bb) in zip(gen_a.entries, gen_b.entries):
            assert wa.value is not wb.value
            assert ba.value is not bb.value
        assert any(x.tobytes() != y.tobytes()
                   for x, y in zip(gen_a.arrays(), gen_b.arrays()))


class TestSaveLoad:
    def test_round_trip_bit_exact(self, tmp_path):
        pset = small_net(seed=19, input_dim=5, hidden=(7, 3), output_dim=2)
        path = str(tmp_path / "net.params")
        nets.save_params(path, pset)
        loaded = nets.load_params(path)
        assert len(loaded.entries) == len(pset.entries)
        for (ln_a, wa, ba), (ln_b, wb, bb) in zip(pset.entries, loaded.entries):
            assert ln_a == ln_b
            assert wa.value.tobytes() == wb.value.tobytes()
            assert ba.value.tobytes() == bb.value.tobytes()

    def test_write_read_write_byte_identical(self, tmp_path):
        pset = small_net(seed=20)
        p1, p2 = str(tmp_path / "a.params"), str(tmp_path / "b.params")
        nets.save_params(p1, pset)
        nets.save_params(p2, nets.load_params(p1))
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.params"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            nets.load_params(str(path))

    def test_truncated_rejected(self, tmp_path):
        pset = small_net(seed=21)
        path = str(tmp_path / "net.params")
        nets.save_params(path, pset)
        blob = open(path, "rb").read()
        trunc = tmp_path / "trunc.params"
        trunc.write_bytes(blob[: len(blob) - 5])
        with pytest.raises(FormatError, match="truncated"):
            nets.load_params(str(trunc))


def test_clone_is_deep():
    pset = small_net(seed=22)
    twin = pset.clone()
    twin.entries[0][1].value[0, 0] += 1.0
    assert pset.entries[0][1].value[0, 0] != twin.entries[0][1].value[0, 0]


def test_mismatched_layer_dims_rejected():
    good = small_net(seed=23, input_dim=3, hidden=(5,), output_dim=2)
    entries = [good.entries[0], good.entries[0]]  # 3->5 followed by 3->5
    with pytest.raises(ValueError, match="does not feed"):
        nets.ParameterSet("broken", entries)


def test_encoder_classifier_gradients_through_cross_entropy():
    from adahash import losses as ls

    enc = small_net(seed=24, input_dim=3, hidden=(5,), output_dim=4, name="encoder")
    clf = small_net(seed=25, input_dim=4, hidden=(), output_dim=3, name="classifier")
    x = np.random.default_rng(7).uniform(-2, 2, (6, 3))
    y = np.random.default_rng(8).integers(0, 3, 6)

    def f():
        u = nets.encode(enc, ad.leaf(x))
        return ls.classification_loss(nets.classify(clf, u), y, None, None, 0.1)

    assert ad.grad_check(f, enc.leaves() + clf.leaves()) < 1e-4
