import struct

import pytest
import torch

from ncadiff import (
    CheckpointManifestError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    DiffNCA,
    NoiseSchedule,
    SyntheticSpec,
    TrainConfig,
    Trainer,
    load_checkpoint,
    make_synthetic,
    restore_trainer,
    save_checkpoint,
)
from ncadiff.checkpoint import MAGIC, file_sha256


def make_trainer(steps=6, seed=0, log_path=None):
    model = DiffNCA(channels=8, hidden=16, steps=2, e_dim=4, enc_dim=4,
                    embed_hidden=16, seed=seed)
    data = make_synthetic(SyntheticSpec(kind="blobs", size=8, count=40, seed=1))
    cfg = TrainConfig(steps=steps, batch=4, seed=seed, val_every=0, checkpoint_every=0)
    return Trainer(model, data, NoiseSchedule(6), cfg, log_path=log_path)


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        tr = make_trainer(steps=3)
        for _ in range(3):
            tr.train_step(tr.dataset.train_batch(4, tr.stream.child("data", tr.step)))
        path = tmp_path / "ck.nca"
        save_checkpoint(path, model=tr.model, optimizer=tr.optimizer, ema=tr.ema,
                        step=tr.step, config={"note": "test"}, seed=0)
        ck = load_checkpoint(path)
        for name, p in tr.model.named_parameters():
            assert torch.equal(ck.tensors[f"model.{name}"], p.detach())
            assert torch.equal(ck.tensors[f"ema.{name}"], tr.ema.shadow[name])
            state = tr.optimizer.state[p]
            assert torch.equal(ck.tensors[f"opt.{name}.exp_avg"], state["exp_avg"])
            assert torch.equal(ck.tensors[f"opt.{name}.exp_avg_sq"], state["exp_avg_sq"])
        assert ck.metadata["step"] == 3
        assert ck.metadata["config"] == {"note": "test"}
        assert ck.metadata["adam_step"] == 3.0

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        tr = make_trainer(steps=1)
        path = tmp_path / "ck.nca"
        save_checkpoint(path, model=tr.model, step=0)
        assert path.exists()
        assert list(tmp_path.glob("*.tmp")) == []


class TestCorruption:
    def _saved(self, tmp_path):
        tr = make_trainer(steps=1)
        path = tmp_path / "ck.nca"
        save_checkpoint(path, model=tr.model, step=0)
        return path

    def test_truncated_payload(self, tmp_path):
        path = self._saved(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-4])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = self._saved(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(b"NOTACKPT" + blob[8:])
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = self._saved(tmp_path)
        blob = path.read_bytes()
        (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC))
        header = blob[len(MAGIC) + 8 : len(MAGIC) + 8 + header_len]
        header = header.replace(b'"format_version": 1', b'"format_version": 9')
        path.write_bytes(blob[: len(MAGIC)] + struct.pack("<Q", len(header)) + header
                         + blob[len(MAGIC) + 8 + header_len :])
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_corrupt_manifest_json(self, tmp_path):
        path = self._saved(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[len(MAGIC) + 8] = ord("{")
        blob[len(MAGIC) + 9] = ord("{")
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointManifestError):
            load_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        path = self._saved(tmp_path)
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(CheckpointManifestError):
            load_checkpoint(path)


class TestResumeDeterminism:
    def test_split_run_matches_uninterrupted(self, tmp_path):
        straight = make_trainer(steps=6, seed=3, log_path=tmp_path / "a.csv")
        straight_rows = straight.run()

        first = make_trainer(steps=3, seed=3, log_path=tmp_path / "b.csv")
        first.run()
        ck_path = tmp_path / "mid.nca"
        save_checkpoint(ck_path, model=first.model, optimizer=first.optimizer,
                        ema=first.ema, step=first.step, seed=3)

        second = make_trainer(steps=6, seed=3, log_path=tmp_path / "b.csv")
        restore_trainer(second, load_checkpoint(ck_path))
        assert second.step == 3
        resumed_rows = second.run()

        assert [r.train_loss for r in straight_rows[3:]] == [r.train_loss for r in resumed_rows]
        for name, p in straight.model.named_parameters():
            assert torch.equal(p, dict(second.model.named_parameters())[name])
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()

    def test_sha256_stable(self, tmp_path):
        path = tmp_path / "ck.nca"
        tr = make_trainer(steps=1)
        save_checkpoint(path, model=tr.model, step=0)
        assert file_sha256(path) == file_sha256(path)
