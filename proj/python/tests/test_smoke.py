import struct

import numpy as np
import pytest

import cadet


def emb1_bytes(rows):
    rows = np.asarray(rows, dtype="<f4")
    return b"EMB1" + struct.pack("<III", 1, rows.shape[0], rows.shape[1]) + rows.tobytes()


def test_reads_hand_written_emb1(tmp_path):
    rows = np.arange(12, dtype=np.float32).reshape(4, 3) + 1
    path = tmp_path / "x.emb"
    path.write_bytes(emb1_bytes(rows))
    np.testing.assert_array_equal(cadet.load_embeddings(path), rows)


def test_save_is_byte_identical_to_layout(tmp_path):
    rows = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
    path = tmp_path / "y.emb"
    cadet.save_embeddings(rows, path)
    assert path.read_bytes() == emb1_bytes(rows)


def test_truncated_file_is_rejected(tmp_path):
    path = tmp_path / "bad.emb"
    path.write_bytes(emb1_bytes(np.ones((3, 2)))[:-4])
    with pytest.raises(cadet.FormatError):
        cadet.load_embeddings(path)


def test_non_finite_rows_are_rejected(tmp_path):
    with pytest.raises(cadet.CadetError):
        cadet.save_embeddings(np.array([[1.0, np.nan]], dtype=np.float32), tmp_path / "n.emb")


def test_mmd_tests():
    p, _ = cadet.generate_synthetic(50, n_clusters=3, center_offset=3, seed=1, stream=1)
    q, _ = cadet.generate_synthetic(50, n_clusters=3, center_offset=3, seed=1, stream=2, shift=10)
    r = cadet.permutation_test(p.astype(np.float32), q.astype(np.float32), n_perm=100, seed=7)
    assert r.p_value == pytest.approx(1 / 101)
    assert len(r.perm_estimates) == 100
    same = cadet.permutation_test(p.astype(np.float32), q.astype(np.float32), n_perm=100, seed=7)
    assert same.perm_estimates == r.perm_estimates
    assert cadet.mmd2_unbiased(p.astype(np.float32), p.astype(np.float32)) == pytest.approx(0.0, abs=1e-12)
    cc = cadet.mmd_cc_test(p[:25].astype(np.float32), p[25:].astype(np.float32), q[:25].astype(np.float32), seed=3)
    assert 0 < cc.p_value <= 1


def test_cadet_on_banks(tmp_path):
    n_trs = 4
    rng = np.random.default_rng(5)
    center = np.zeros(8)
    center[0] = 5

    def bank(n, spread):
        base = center + rng.normal(size=(n, 8))
        views = np.repeat(base, n_trs, axis=0) + spread * rng.normal(size=(n * n_trs, 8))
        return views.astype(np.float32)

    calib = cadet.calibrate_from_banks(bank(30, 0.1), bank(200, 0.1), n_trs)
    assert calib.gamma > 0
    normal = cadet.test_bank(bank(50, 0.1), calib)["p_value"]
    unstable = cadet.test_bank(bank(50, 3.0), calib)["p_value"]
    assert cadet.auroc(normal, unstable, direction="lower") > 0.9
    path = tmp_path / "cal.bin"
    calib.save(path)
    assert cadet.load_calibration(path).val_scores == calib.val_scores


def test_bank_with_wrong_grouping_is_rejected():
    calib = cadet.calibrate_from_banks(np.ones((8, 3), np.float32) + np.eye(8, 3, dtype=np.float32),
                                       np.random.default_rng(1).normal(size=(40, 3)).astype(np.float32), 4)
    with pytest.raises(cadet.CadetError):
        cadet.test_bank(np.ones((7, 3), np.float32), calib)


def test_toy_training_round_trip(tmp_path):
    x, _ = cadet.generate_synthetic(300, n_clusters=2, dim=8, center_offset=3, seed=2)
    model, losses = cadet.train_toy(x, seed=1, epochs=3, batch_size=64)
    assert len(losses) == 3
    feats = model.features(x[:5])
    assert feats.shape[0] == 5
    model.save(tmp_path / "m.bin")
    np.testing.assert_array_equal(cadet.load_model(tmp_path / "m.bin").features(x[:5]), feats)
