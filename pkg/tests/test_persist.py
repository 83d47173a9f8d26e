"""Binary model files and embedding exports."""

import numpy as np
import pytest

from antemb.model import AntModel, Regularizer, count_params, seed_transform
from antemb.persist import (
    BadMagicError,
    BadVersionError,
    ChecksumError,
    TruncatedFileError,
    export_embeddings,
    file_size,
    load_model,
    save_model,
)
from antemb.sparse import SparseRowMatrix


def f32_model(rng, n_objects=5, k=3, d=4):
    """Model whose values are exactly representable in binary32."""
    t = seed_transform(n_objects, k, rng, nonneg=True)
    for i in range(n_objects):
        cols, vals = t.row(i)
        t.set_row(i, cols, np.float64(vals.astype(np.float32)))
    a = rng.normal(size=(k, d)).astype(np.float32).astype(np.float64)
    return AntModel(anchors=a, transform=t, reg=Regularizer(nonneg=True))


class TestSaveLoad:
    def test_byte_count_layout(self, tmp_path):
        t = SparseRowMatrix.from_entries(3, 2, [(1, 0, 0.5)], nonneg=True)
        m = AntModel(anchors=np.zeros((2, 2)), transform=t, reg=Regularizer())
        n = save_model(m, tmp_path / "m.antb")
        assert n == 62  # 22 header + 16 anchors + 8 count + 12 entry + 4 crc
        assert n == file_size(2, 2, 1)

    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        m = f32_model(rng)
        save_model(m, tmp_path / "m.antb")
        back = load_model(tmp_path / "m.antb")
        np.testing.assert_array_equal(back.anchors, m.anchors)
        assert back.transform == m.transform
        assert back.transform.nonneg

    def test_double_roundtrip_byte_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        t = seed_transform(6, 4, rng, nonneg=True)
        m = AntModel(anchors=rng.normal(size=(4, 3)), transform=t, reg=Regularizer())
        p1, p2 = tmp_path / "a.antb", tmp_path / "b.antb"
        save_model(m, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_crc_detects_corruption(self, tmp_path):
        rng = np.random.default_rng(2)
        m = f32_model(rng)
        p = tmp_path / "m.antb"
        save_model(m, p)
        blob = bytearray(p.read_bytes())
        blob[30] ^= 0xFF  # flip a byte inside the anchor section
        p.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load_model(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "m.antb"
        rng = np.random.default_rng(3)
        save_model(f32_model(rng), p)
        blob = bytearray(p.read_bytes())
        blob[0:4] = b"XXXX"
        p.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError):
            load_model(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "m.antb"
        rng = np.random.default_rng(4)
        save_model(f32_model(rng), p)
        blob = bytearray(p.read_bytes())
        blob[4] = 99
        p.write_bytes(bytes(blob))
        with pytest.raises(BadVersionError):
            load_model(p)

    def test_truncated_transform_section(self, tmp_path):
        p = tmp_path / "m.antb"
        rng = np.random.default_rng(5)
        save_model(f32_model(rng), p)
        blob = p.read_bytes()
        p.write_bytes(blob[:-7])
        with pytest.raises(TruncatedFileError):
            load_model(p)

    def test_embeddings_survive_within_f32_rounding(self, tmp_path):
        rng = np.random.default_rng(6)
        t = seed_transform(8, 5, rng, nonneg=True)
        m = AntModel(anchors=rng.normal(size=(5, 4)), transform=t, reg=Regularizer())
        from antemb.model import embed

        save_model(m, tmp_path / "m.antb")
        back = load_model(tmp_path / "m.antb")
        idx = np.arange(8)
        np.testing.assert_allclose(embed(back, idx), embed(m, idx), rtol=1e-6, atol=1e-7)


class TestExport:
    def test_text_vectors_layout(self, tmp_path):
        rng = np.random.default_rng(7)
        m = f32_model(rng, n_objects=3, k=2, d=4)
        m.transform.clear_row(1)
        path = tmp_path / "vecs.txt"
        export_embeddings(m, ["tok0", "tok1", "tok2"], path, format="text_vectors")
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        for line in lines:
            assert len(line.split()) == 5  # token + d fields
        fields = lines[1].split()
        assert fields[0] == "tok1"
        assert all(float(x) == 0.0 for x in fields[1:])  # cleared row -> zeros

    def test_sparse_report_totals_match_count_params(self, tmp_path):
        rng = np.random.default_rng(8)
        m = f32_model(rng, n_objects=6, k=3, d=2)
        path = tmp_path / "report.tsv"
        summary = export_embeddings(m, None, path, format="sparse_report")
        totals = count_params(m)
        assert summary["total_params"] == totals["total"]
        assert summary["zero_rows"] == totals["zero_rows"]
        footer = path.read_text().splitlines()[-1]
        assert footer.startswith("#totals")
        assert f"total_params={totals['total']}" in footer
        assert f"nnz={totals['transform_nnz']}" in footer

    def test_vocab_size_must_match(self, tmp_path):
        rng = np.random.default_rng(9)
        m = f32_model(rng, n_objects=4)
        with pytest.raises(ValueError):
            export_embeddings(m, ["a", "b"], tmp_path / "x.txt", format="text_vectors")
