import numpy as np
import pytest

from gmra.errors import ModelMismatch, ParseError
from gmra.io import load_coefficients, load_model, save_coefficients, save_model
from gmra.model import DimensionPolicy, construct_gmra
from gmra.ortho import construct_ortho, ortho_fgwt_batch
from gmra.transforms import fgwt_batch, igwt_batch
from gmra.tree import build_tree


def same_nodes(a, b, names):
    assert a.model_id == b.model_id
    assert list(a.nodes) == list(b.nodes)
    for key in a.nodes:
        for name in names:
            u, v = getattr(a.nodes[key], name), getattr(b.nodes[key], name)
            if u is None:
                assert v is None
            else:
                assert u.shape == v.shape and u.tobytes() == v.tobytes()


class TestModelFiles:
    def test_gmra_bit_exact(self, swiss_model, swiss_small, tmp_path):
        save_model(swiss_model, tmp_path / "m")
        back = load_model(tmp_path / "m")
        same_nodes(swiss_model, back, ["center", "basis", "spectrum", "wavelet", "translation"])
        assert back.tangential_corrections
        X = swiss_small.coords[:50]
        R0 = igwt_batch(swiss_model, fgwt_batch(swiss_model, X))
        R1 = igwt_batch(back, fgwt_batch(back, X))
        assert R0.tobytes() == R1.tobytes()

    def test_ortho_bit_exact(self, swiss_small, tmp_path):
        model = construct_ortho(swiss_small, build_tree(swiss_small), DimensionPolicy.fixed(2),
                                precision=0.1)
        save_model(model, tmp_path / "o.bin")
        back = load_model(tmp_path / "o.json")
        same_nodes(model, back, ["center", "new_basis", "translation"])
        assert [n.cum_dim for n in back.nodes.values()] == [n.cum_dim for n in model.nodes.values()]

    def test_resave_is_identical(self, swiss_model, tmp_path):
        save_model(swiss_model, tmp_path / "a")
        save_model(load_model(tmp_path / "a"), tmp_path / "b")
        for ext in (".bin", ".json"):
            assert (tmp_path / f"a{ext}").read_bytes() == (tmp_path / f"b{ext}").read_bytes()

    def test_bad_magic(self, swiss_model, tmp_path):
        bin_path, _ = save_model(swiss_model, tmp_path / "m")
        raw = bin_path.read_bytes()
        bin_path.write_bytes(b"NOTAMODL" + raw[8:])
        with pytest.raises(ParseError):
            load_model(tmp_path / "m")


class TestCoefficientFiles:
    @pytest.mark.parametrize("fmt", ["csv", "binary"])
    def test_round_trip(self, swiss_model, swiss_small, tmp_path, fmt):
        coeffs = fgwt_batch(swiss_model, swiss_small.coords[:40])
        p = tmp_path / "c"
        save_coefficients(coeffs, p, fmt)
        back = load_coefficients(p, swiss_model)
        for a, b in zip(coeffs, back):
            assert a.path == b.path
            for u, v in zip(a.blocks, b.blocks):
                assert u.tobytes() == v.tobytes()

    def test_flat_leaf_marker(self, tmp_path):
        # zero-dimensional wavelet blocks still restore the full path
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.uniform(-1, 1, 200), np.zeros(200), np.zeros(200)])
        model = construct_gmra(X, build_tree(X), DimensionPolicy.fixed(1))
        coeffs = fgwt_batch(model, X[:5])
        save_coefficients(coeffs, tmp_path / "c.csv")
        back = load_coefficients(tmp_path / "c.csv", model)
        assert [c.leaf for c in back] == [c.leaf for c in coeffs]

    def test_ortho_round_trip(self, swiss_small, tmp_path):
        model = construct_ortho(swiss_small, build_tree(swiss_small), DimensionPolicy.fixed(2),
                                precision=0.1)
        coeffs = ortho_fgwt_batch(model, swiss_small.coords[:10])
        save_coefficients(coeffs, tmp_path / "c.bin", "binary")
        back = load_coefficients(tmp_path / "c.bin", model)
        for a, b in zip(coeffs, back):
            np.testing.assert_array_equal(np.concatenate(a.blocks), np.concatenate(b.blocks))

    def test_block_size_mismatch(self, swiss_model, swiss_small, tmp_path):
        coeffs = fgwt_batch(swiss_model, swiss_small.coords[:3])
        save_coefficients(coeffs, tmp_path / "c.csv")
        other = construct_gmra(swiss_small, swiss_model.tree, DimensionPolicy.fixed(1))
        with pytest.raises(ModelMismatch):
            load_coefficients(tmp_path / "c.csv", other)

    def test_malformed_row(self, swiss_model, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text("point_id,j,k,block_index,value\n0,0,0,x,1.0\n")
        with pytest.raises(ParseError):
            load_coefficients(p, swiss_model)

    def test_truncated_binary(self, swiss_model, swiss_small, tmp_path):
        p = tmp_path / "c.bin"
        save_coefficients(fgwt_batch(swiss_model, swiss_small.coords[:3]), p, "binary")
        p.write_bytes(p.read_bytes()[:-24])
        with pytest.raises(ParseError):
            load_coefficients(p, swiss_model)
