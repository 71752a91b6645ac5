import json
import struct

import numpy as np
import pytest

from sellpoint.checkpoint import (CheckpointError, check_vocabulary,
                                  load_checkpoint, save_checkpoint)
from sellpoint.data import Query, UserRepr
from sellpoint.gradcheck import TOY_DIMS, TOY_VOCAB, toy_schema
from sellpoint.network import (AUGMENTED, AUX, BASIC, MULTITASK, ModelVariant,
                               init_network_params, predict_sp_scores)


@pytest.mark.parametrize("kind,schema", [
    (BASIC, None), (MULTITASK, None), (AUGMENTED, "toy")])
def test_roundtrip_bitwise(tmp_path, kind, schema):
    variant = ModelVariant(kind, toy_schema() if schema else None)
    params = init_network_params(variant, TOY_VOCAB, TOY_DIMS, seed=1)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(params, path, vocab_sha256="abc", seed=1,
                    training_config={"seed": 1, "split_ratio": 0.9})
    loaded, meta = load_checkpoint(path)
    for (n1, t1), (n2, t2) in zip(params.tensors(), loaded.tensors()):
        assert n1 == n2
        assert np.array_equal(t1, t2), n1
    assert meta.vocab_sha256 == "abc"
    assert meta.seed == 1
    assert meta.training_config["split_ratio"] == 0.9


def test_scoring_identical_after_roundtrip(tmp_path):
    params = init_network_params(ModelVariant(BASIC), TOY_VOCAB, TOY_DIMS, seed=2)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(params, path, vocab_sha256="x")
    loaded, _ = load_checkpoint(path)
    user = UserRepr(user_id=0, long_term=(1, 2), short_term=(3,))
    query = Query(keywords=frozenset({4}))
    cands = [frozenset({0}), frozenset({5, 6})]
    a = predict_sp_scores(params, user, query, cands)
    b = predict_sp_scores(loaded, user, query, cands)
    assert np.array_equal(a, b)


def test_truncated_file_reports_offset(tmp_path):
    params = init_network_params(ModelVariant(BASIC), TOY_VOCAB, TOY_DIMS, seed=3)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(params, path, vocab_sha256="x")
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) // 2])
    with pytest.raises(CheckpointError, match="byte"):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "ckpt.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="byte 0"):
        load_checkpoint(path)


def test_corrupt_header(tmp_path):
    path = tmp_path / "ckpt.bin"
    garbage = b"{not json"
    path.write_bytes(b"SPCK" + struct.pack("<I", len(garbage)) + garbage)
    with pytest.raises(CheckpointError, match="corrupt header"):
        load_checkpoint(path)


def test_version_mismatch(tmp_path):
    params = init_network_params(ModelVariant(BASIC), TOY_VOCAB, TOY_DIMS, seed=4)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(params, path, vocab_sha256="x")
    blob = bytearray(path.read_bytes())
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8:8 + hlen].decode())
    header["format_version"] = 99
    new_header = json.dumps(header).encode()
    path.write_bytes(bytes(blob[:4]) + struct.pack("<I", len(new_header))
                     + new_header + bytes(blob[8 + hlen:]))
    with pytest.raises(CheckpointError, match="format version"):
        load_checkpoint(path)


def test_basic_checkpoint_refuses_aux_use(tmp_path):
    params = init_network_params(ModelVariant(BASIC), TOY_VOCAB, TOY_DIMS, seed=5)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(params, path, vocab_sha256="x")
    loaded, _ = load_checkpoint(path)
    with pytest.raises(ValueError, match="lacks auxiliary head"):
        loaded.theta(AUX)


def test_vocabulary_hash_checked():
    from sellpoint.checkpoint import CheckpointMeta
    meta = CheckpointMeta(format_version=1, variant=BASIC, vocab_sha256="aaa",
                          seed=None, training_config=None)
    check_vocabulary(meta, "aaa")
    with pytest.raises(CheckpointError, match="vocabulary hash mismatch"):
        check_vocabulary(meta, "bbb")
