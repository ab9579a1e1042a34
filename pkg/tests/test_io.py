import csv
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datk import io
from datk.errors import ConfigurationError, FormatError
from datk.models import INPUT_MODES, AagNet, AmplitudeScale, SmallConvNet
from datk.trainer import AAG_WITH, AE_MODES, METHODS, TrainConfig


# -- CIFAR binary -----------------------------------------------------------


def _record(label, pixels):
    return bytes([label]) + bytes(pixels)


def test_single_white_record(tmp_path):
    p = tmp_path / "one.bin"
    p.write_bytes(_record(3, [255] * 3072))
    x, y = io.load_cifar_binary(p)
    assert x.shape == (1, 3, 32, 32) and y.tolist() == [3]
    assert np.all(x == 1.0)


def test_empty_file_is_empty_dataset(tmp_path):
    p = tmp_path / "empty.bin"
    p.write_bytes(b"")
    x, y = io.load_cifar_binary(p)
    assert x.shape == (0, 3, 32, 32) and len(y) == 0


def test_two_record_fixture_byte_layout(tmp_path):
    a = [128] + [0] * 3071
    # channel-major offsets: 33 is R (1,1), 1024 is G (0,0), 3071 is B (31,31)
    b = [0] * 3072
    b[1024], b[3071], b[33] = 7, 200, 9
    p = tmp_path / "two.bin"
    p.write_bytes(_record(0, a) + _record(9, b))
    x, y = io.load_cifar_binary(p)
    assert y.tolist() == [0, 9]
    assert x[0, 0, 0, 0] == pytest.approx(0.50196, abs=1e-5)
    assert x[0, 0, 0, 0] == 128 / 255
    assert x[1, 1, 0, 0] == 7 / 255
    assert x[1, 2, 31, 31] == 200 / 255
    assert x[1, 0, 1, 1] == 9 / 255
    assert np.count_nonzero(x) == 4


def test_bad_size_rejected(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(_record(1, [0] * 3072) + b"\x00")
    with pytest.raises(FormatError, match="3073"):
        io.load_cifar_binary(p)


def test_bad_label_rejected(tmp_path):
    p = tmp_path / "label.bin"
    p.write_bytes(_record(10, [0] * 3072))
    with pytest.raises(FormatError, match="label"):
        io.load_cifar_binary(p)


def test_multiple_files_concatenate(tmp_path):
    paths = []
    for i in range(3):
        paths.append(tmp_path / f"b{i}.bin")
        paths[-1].write_bytes(_record(i, [i] * 3072))
    x, y = io.load_cifar_files(paths)
    assert y.tolist() == [0, 1, 2] and x.shape[0] == 3


# -- checkpoints ------------------------------------------------------------


def test_hand_encoded_checkpoint_layout():
    blob = io.encode_checkpoint({"w": np.array([[1.0, 0.5], [-0.25, 0.0]])})
    expected = bytearray(b"DATK")
    expected += struct.pack("<HI", 1, 1)
    expected += struct.pack("<I", 1) + b"w"
    expected += struct.pack("<I", 2) + struct.pack("<II", 2, 2)
    payload = bytes.fromhex("0000803f" "0000003f" "000080be" "00000000")
    expected += payload
    expected += struct.pack("<I", zlib.crc32(bytes(expected)))
    assert blob == bytes(expected)


def _trained_like_net(seed=0):
    net = SmallConvNet(3, 4, seed=seed)
    rng = np.random.default_rng(seed)
    for name in net.params.names():
        net.params.velocity[name] = rng.standard_normal(net.params[name].shape)
    for k in net.params.buffers:
        net.params.buffers[k] = rng.uniform(0.5, 1.5, net.params.buffers[k].shape)
    return net


def test_checkpoint_round_trip_all_state(tmp_path):
    net = _trained_like_net()
    gen = AagNet((3, 8, 8), 4, tau=6, hidden=(5, 5, 5), seed=2)
    scale = AmplitudeScale()
    scale.update_from_images(np.random.default_rng(0).uniform(0, 1, (4, 3, 8, 8)))
    rec = io.model_records(net, gen, scale)
    assert any(".A." in k for k in rec) and any(".B." in k for k in rec)
    assert any(k.startswith("net/velocity:") for k in rec)
    path = tmp_path / "c.datk"
    io.save_checkpoint(rec, path)
    loaded = io.load_checkpoint(path)
    assert list(loaded) == list(rec)
    for k in rec:
        np.testing.assert_array_equal(loaded[k], rec[k].astype(np.float32))
    # a second save of the loaded records is byte-identical
    path2 = tmp_path / "c2.datk"
    io.save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()

    net2, gen2, scale2 = SmallConvNet(3, 4, seed=9), AagNet((3, 8, 8), 4, tau=6, hidden=(5, 5, 5), seed=7), AmplitudeScale()
    io.restore_models(loaded, net2, gen2, scale2)
    for k, v in net.params.state().items():
        np.testing.assert_array_equal(net2.params.state()[k], v.astype(np.float32))
    np.testing.assert_array_equal(scale2.mean, scale.mean.astype(np.float32))


def test_truncated_checkpoint_rejected(tmp_path):
    blob = io.encode_checkpoint({"a": np.ones((3, 3))})
    for cut in (5, len(blob) // 2, len(blob) - 1):
        with pytest.raises(FormatError, match="checksum"):
            io.decode_checkpoint(blob[:cut])


def test_bad_magic_and_version_named():
    blob = bytearray(io.encode_checkpoint({"a": np.ones(2)}))
    bad_magic = b"XATK" + bytes(blob[4:])
    with pytest.raises(FormatError, match="magic"):
        io.decode_checkpoint(bad_magic)
    body = bytearray(blob[:-4])
    body[4:6] = struct.pack("<H", 2)
    bad_version = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    with pytest.raises(FormatError, match="version"):
        io.decode_checkpoint(bad_version)


def test_flipped_payload_bit_fails_checksum():
    blob = bytearray(io.encode_checkpoint({"a": np.ones(4)}))
    blob[-6] ^= 0x01
    with pytest.raises(FormatError, match="checksum"):
        io.decode_checkpoint(bytes(blob))


def test_restore_without_generator_records_fails():
    rec = io.model_records(SmallConvNet(3, 4))
    with pytest.raises(FormatError, match="generator"):
        io.restore_models(rec, SmallConvNet(3, 4), AagNet((3, 8, 8), 4, tau=6, hidden=(5, 5, 5)))


@settings(max_examples=40, deadline=None)
@given(
    arrays=st.dictionaries(
        st.text(min_size=1, max_size=12),
        st.lists(st.integers(0, 3), min_size=0, max_size=3).map(tuple),
        max_size=4,
    ),
    seed=st.integers(0, 2**16),
)
def test_encode_decode_round_trip(arrays, seed):
    rng = np.random.default_rng(seed)
    rec = {k: rng.standard_normal(shape).astype(np.float32) for k, shape in arrays.items()}
    out = io.decode_checkpoint(io.encode_checkpoint(rec))
    assert list(out) == list(rec)
    for k in rec:
        assert out[k].shape == rec[k].shape
        np.testing.assert_array_equal(out[k], rec[k])


# -- metrics ----------------------------------------------------------------


def _row(**kw):
    base = {"run_id": "r", "epoch": 0, "split": "test", "metric_name": "acc", "value": 0.5, "seed": 0, "wall_seconds": 0.1}
    return {**base, **kw}


def test_empty_rows_give_header_only(tmp_path):
    p = tmp_path / "m.csv"
    io.write_metrics([], p, "truncate")
    assert p.read_text().splitlines() == [",".join(io.METRIC_COLUMNS)]


def test_append_twice_single_header(tmp_path):
    p = tmp_path / "m.csv"
    io.write_metrics([_row(epoch=0)], p, "append")
    io.write_metrics([_row(epoch=1)], p, "append")
    rows = list(csv.DictReader(p.open()))
    assert [r["epoch"] for r in rows] == ["0", "1"]
    assert p.read_text().count("run_id") == 1


def test_truncate_replaces_file(tmp_path):
    p = tmp_path / "m.csv"
    io.write_metrics([_row(), _row()], p, "append")
    io.write_metrics([_row(value=0.25)], p, "truncate")
    rows = list(csv.DictReader(p.open()))
    assert len(rows) == 1 and float(rows[0]["value"]) == 0.25


def test_value_keeps_six_significant_digits(tmp_path):
    p = tmp_path / "m.csv"
    io.write_metrics([_row(value=0.5123456)], p)
    value = next(csv.DictReader(p.open()))["value"]
    assert value.startswith("0.512345")
    assert float(value) == 0.5123456


def test_metrics_schema_and_mode_checked(tmp_path):
    with pytest.raises(ConfigurationError):
        io.write_metrics([{"run_id": "x"}], tmp_path / "m.csv")
    with pytest.raises(ConfigurationError):
        io.write_metrics([], tmp_path / "m.csv", "overwrite")


def test_unwritable_metrics_path(tmp_path):
    with pytest.raises(OSError):
        io.write_metrics([_row()], tmp_path / "missing" / "m.csv")


# -- configuration ----------------------------------------------------------

_floats = st.floats(0.001, 100.0, allow_nan=False, allow_infinity=False)


@st.composite
def run_configs(draw):
    epochs = draw(st.integers(0, 200))
    steps = draw(st.integers(0, 20))
    train = TrainConfig(
        method=draw(st.sampled_from(METHODS)),
        epochs=epochs,
        batch_size=draw(st.integers(1, 512)),
        lr_schedule=[(0, draw(_floats))] + [(e, draw(_floats)) for e in sorted(draw(st.sets(st.integers(1, 300), max_size=3)))],
        momentum=draw(st.floats(0.0, 0.99)),
        weight_decay=draw(st.floats(0.0, 0.01)),
        epsilon=draw(st.floats(0.0, 0.5)),
        alpha=draw(st.floats(1e-4, 0.1)),
        steps=steps,
        beta=draw(st.floats(0.0, 50.0)),
        omega=draw(st.floats(0.0, 10.0)),
        aag_lr=draw(_floats),
        tau=draw(st.integers(1, 300)),
        lambda_max=draw(st.floats(0.0, 1.0)),
        ae_mode=draw(st.sampled_from(AE_MODES)),
        aag_input_mode=draw(st.sampled_from(INPUT_MODES)),
        aag_with=draw(st.sampled_from(AAG_WITH)),
        eval_steps=draw(st.integers(0, 20)),
        eval_every=draw(st.integers(0, 5)),
        seed=draw(st.integers(0, 2**31 - 1)),
    )
    text = st.text(st.characters(whitelist_categories=("L", "N"), whitelist_characters="/._-"), min_size=1, max_size=20)
    return io.RunConfig(
        train=train,
        data=draw(text),
        test_data=draw(st.one_of(st.just(""), text)),
        out=draw(text),
        synth_classes=draw(st.integers(2, 10)),
        synth_size=draw(st.integers(2, 64)),
        synth_noise=draw(st.floats(0.0, 2.0)),
        synth_train_per_class=draw(st.integers(1, 1000)),
        synth_test_per_class=draw(st.integers(1, 1000)),
        synth_seed=draw(st.integers(0, 2**31 - 1)),
        eval_samples=draw(st.integers(1, 10000)),
    )


@settings(max_examples=100, deadline=None)
@given(cfg=run_configs())
def test_config_round_trip(cfg):
    assert io.parse_config(io.serialize_config(cfg)) == cfg


def test_config_file_round_trip(tmp_path):
    cfg = io.RunConfig(train=TrainConfig(method="dat", epsilon=0.1, lr_schedule=[(0, 0.05), (3, 0.005)]), synth_noise=0.7)
    path = tmp_path / "c.txt"
    io.write_config(cfg, path)
    assert io.read_config(path) == cfg


def test_config_unknown_key_rejected():
    with pytest.raises(ConfigurationError, match="unknown config key 'epsilonn'"):
        io.parse_config("epsilonn=0.1\n")


@pytest.mark.parametrize("text", ["epochs=ten", "lr_schedule=0-0.1", "just a line", "epsilon="])
def test_config_malformed_lines_rejected(text):
    with pytest.raises(ConfigurationError):
        io.parse_config(text)


def test_config_comments_and_base_overlay():
    base = io.RunConfig(train=TrainConfig(seed=5))
    cfg = io.parse_config("# note\n\nepochs = 3\n", base)
    assert cfg.train.epochs == 3 and cfg.train.seed == 5
