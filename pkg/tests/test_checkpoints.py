import zipfile

import pytest
import torch

from stagegan.checkpoints import (CheckpointError, file_sha256, hash_many,
                                  hash_state_dict, load_archive, read_meta,
                                  save_archive)


def _payload():
    g = torch.Generator().manual_seed(3)
    return {"w": torch.randn(4, 3, generator=g), "b": torch.zeros(4)}


def test_round_trip(tmp_path):
    path = tmp_path / "x.ckpt"
    save_archive(path, {"stage": "test", "k": 3}, {"state": _payload()})
    meta, payload = load_archive(path)
    assert meta["k"] == 3
    assert torch.equal(payload["state"]["w"], _payload()["w"])


def test_meta_readable_without_blobs(tmp_path):
    path = tmp_path / "x.ckpt"
    save_archive(path, {"stage": "test"}, {"state": _payload()})
    assert read_meta(path)["stage"] == "test"


def test_byte_identical_archives(tmp_path):
    """Same content saved twice (any wall-clock time) -> identical bytes."""
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_archive(a, {"stage": "test"}, {"state": _payload()})
    save_archive(b, {"stage": "test"}, {"state": _payload()})
    assert file_sha256(a) == file_sha256(b)


def test_archive_is_plain_zip(tmp_path):
    path = tmp_path / "x.ckpt"
    save_archive(path, {"stage": "test"}, {"state": _payload()})
    with zipfile.ZipFile(path) as zf:
        assert set(zf.namelist()) == {"meta.json", "state.pt"}


def test_truncated_file_fails_loud(tmp_path):
    path = tmp_path / "x.ckpt"
    save_archive(path, {"stage": "test"}, {"state": _payload()})
    path.write_bytes(path.read_bytes()[: path.stat().st_size // 2])
    with pytest.raises(CheckpointError):
        load_archive(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_archive(tmp_path / "nope.ckpt")


def test_hash_state_dict_sensitivity():
    sd = _payload()
    h0 = hash_state_dict(sd)
    assert h0 == hash_state_dict(dict(reversed(list(sd.items()))))  # key order
    bumped = {k: v.clone() for k, v in sd.items()}
    bumped["w"][0, 0] += 1e-7
    assert hash_state_dict(bumped) != h0


def test_hash_many_covers_all_parts():
    sd = _payload()
    h = hash_many({"a": sd, "b": sd})
    other = {"a": sd, "b": {"w": sd["w"] + 1, "b": sd["b"]}}
    assert hash_many(other) != h
