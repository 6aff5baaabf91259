import csv
import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probegeom_extract import formats
from probegeom_extract.formats import DIRECTIONS, DumpRecord, ValidationError


def records(n, groups=None):
    return [
        DumpRecord(record_id=i, group_id=(groups or (lambda i: i // 2))(i), label=i % 2,
                   paraphrase_id=0, dataset_tag="toy", answer_length=3 + i)
        for i in range(n)
    ]


def test_dump_layout_and_checksums(tmp_path):
    rng = np.random.default_rng(0)
    layers = {0: rng.normal(size=(4, 5)), 2: rng.normal(size=(4, 5))}
    m = formats.write_dump(tmp_path, records(4), layers, model_tag="toy", num_layers=3)
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk == m
    assert set(m) == {"format_version", "model_tag", "num_records", "hidden_dim", "num_layers",
                      "layer_indices", "dtype", "contrastive", "sha256"}
    assert (m["num_records"], m["hidden_dim"], m["layer_indices"], m["dtype"]) == (4, 5, [0, 2], "f32le")
    assert set(m["sha256"]) == {"meta.jsonl", "layer_0.f32", "layer_2.f32"}
    for name, digest in m["sha256"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    back = np.frombuffer((tmp_path / "layer_2.f32").read_bytes(), dtype="<f4").reshape(4, 5)
    assert np.array_equal(back, layers[2].astype(np.float32))
    meta = [json.loads(line) for line in (tmp_path / "meta.jsonl").read_text().splitlines()]
    assert meta[1] == {"record_id": 1, "group_id": 0, "label": 1, "paraphrase_id": 0,
                       "dataset_tag": "toy", "answer_length": 4}
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]


@pytest.mark.parametrize(
    "recs, layers, num_layers, match",
    [
        ([], {0: np.zeros((0, 2))}, 1, "no records"),
        (records(2), {}, 1, "no layers"),
        (records(2) + records(1), {0: np.ones((3, 2))}, 1, "duplicate"),
        (records(2), {0: np.ones((2, 2)), 1: np.ones((2, 3))}, 2, "hidden_dim"),
        (records(2), {0: np.ones((3, 2))}, 1, "shape"),
        (records(2), {0: np.array([[1.0, math.nan], [0.0, 0.0]])}, 1, "non-finite"),
        (records(2), {4: np.ones((2, 2))}, 3, "outside"),
    ],
)
def test_invalid_dumps_are_refused(tmp_path, recs, layers, num_layers, match):
    with pytest.raises(ValidationError, match=match):
        formats.write_dump(tmp_path, recs, layers, model_tag="t", num_layers=num_layers)
    assert not (tmp_path / "manifest.json").exists()


def test_bad_label_is_refused(tmp_path):
    r = records(2)
    r[0].label = 2
    with pytest.raises(ValidationError, match="label"):
        formats.write_dump(tmp_path, r, {0: np.ones((2, 2))}, model_tag="t", num_layers=1)


def test_dump_passes_the_engine(tmp_path, engine):
    import subprocess

    rng = np.random.default_rng(1)
    n = 40
    x = rng.normal(size=(n, 6))
    x[1::2, 0] += 2.0
    recs = records(n)
    for r in recs:
        r.text = f"row {r.record_id} é"
    formats.write_dump(tmp_path / "d", recs, {1: x}, model_tag="toy", num_layers=2, contrastive=True)
    p = subprocess.run([engine, "validate", "--dump", str(tmp_path / "d")], capture_output=True, text=True)
    assert p.returncode == 0, p.stderr


def write_bundle(d, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    learned = rng.normal(size=dim)
    learned /= np.linalg.norm(learned)
    random = rng.normal(size=dim)
    random /= np.linalg.norm(random)
    orth = random - (random @ learned) * learned
    orth /= np.linalg.norm(orth)
    sha = {}
    for name, v in zip(DIRECTIONS, (learned, random, orth)):
        data = v.astype("<f4").tobytes()
        (d / f"{name}.f32").write_bytes(data)
        sha[f"{name}.f32"] = hashlib.sha256(data).hexdigest()
    m = {"format_version": 1, "layer_index": 1, "hidden_dim": dim, "scale": 0.5,
         "mean_activation_norm": 10.0, "alpha_values": list(np.linspace(-5, 5, 20)), "seed": seed,
         "learned": "learned.f32", "random": "random.f32", "orthogonal": "orthogonal.f32", "sha256": sha}
    (d / "bundle.json").write_text(json.dumps(m))
    return m


def test_bundle_reader_checks_what_it_loads(tmp_path):
    m = write_bundle(tmp_path)
    b = formats.read_bundle(tmp_path / "bundle.json")
    assert (b.layer_index, b.hidden_dim, b.scale) == (1, 6, 0.5)
    assert b.alpha_values == m["alpha_values"]
    assert abs(b.directions["orthogonal"] @ b.directions["learned"]) < 1e-6

    data = bytearray((tmp_path / "random.f32").read_bytes())
    data[0] ^= 1
    (tmp_path / "random.f32").write_bytes(bytes(data))
    with pytest.raises(ValidationError, match="random.f32"):
        formats.read_bundle(tmp_path)

    write_bundle(tmp_path)
    m["sha256"]["orthogonal.f32"] = m["sha256"]["learned.f32"]
    (tmp_path / "orthogonal.f32").write_bytes((tmp_path / "learned.f32").read_bytes())
    (tmp_path / "bundle.json").write_text(json.dumps(m))
    with pytest.raises(ValidationError, match="orthogonal"):
        formats.read_bundle(tmp_path)


def judged(b, items, flip=lambda d, a, i: 1):
    return [{"item": i, "direction": d, "alpha": a, "correct": flip(d, a, i), "completion": "x"}
            for d in DIRECTIONS for a in b.alpha_values for i in items]


def test_full_sweep_gives_sixty_rows_per_item(tmp_path):
    write_bundle(tmp_path)
    b = formats.read_bundle(tmp_path)
    for n in (1, 3, 7):
        items = list(range(100, 100 + n))
        rows = formats.outcome_rows(judged(b, items), b, items)
        assert len(rows) == 60 * n
        assert all(set(r) == {"item", "direction", "alpha", "correct"} for r in rows)


def test_incomplete_or_repeated_judgements_are_refused(tmp_path):
    write_bundle(tmp_path)
    b = formats.read_bundle(tmp_path)
    rows = judged(b, [0, 1])
    with pytest.raises(ValidationError, match="no judgement"):
        formats.outcome_rows(rows[1:], b, [0, 1])
    with pytest.raises(ValidationError, match="duplicate"):
        formats.outcome_rows(rows + rows[:1], b, [0, 1])
    with pytest.raises(ValidationError, match="not part"):
        formats.outcome_rows(rows + [{"item": 0, "direction": "learned", "alpha": 0.25, "correct": 1}], b, [0, 1])
    with pytest.raises(ValidationError, match="0 or 1"):
        formats.outcome_rows([dict(rows[0], correct=2)] + rows[1:], b, [0, 1])


def test_outcome_is_read_back_by_the_engine(tmp_path, engine):
    import subprocess

    write_bundle(tmp_path)
    b = formats.read_bundle(tmp_path)
    items = list(range(12))
    rows = formats.outcome_rows(
        judged(b, items, lambda d, a, i: int(d != "learned" or i < 4 + (a + 5) * 0.6 or i % 3 == 0)), b, items)
    formats.write_outcome(tmp_path / "outcome.jsonl", rows)
    p = subprocess.run([engine, "steer-analyze", "--outcome", str(tmp_path / "outcome.jsonl"),
                        "--out", str(tmp_path / "out")], capture_output=True, text=True)
    assert p.returncode == 0, p.stderr
    s = json.loads((tmp_path / "out" / "steering.json").read_text())
    assert {d["direction"] for d in s["directions"]} == set(DIRECTIONS)


def test_baselines_csv(tmp_path):
    formats.write_baselines(tmp_path / "b.csv", [{"record_id": 3, "p_true": 0.25, "nll": 1.5, "token_entropy": 2.0}])
    with open(tmp_path / "b.csv") as f:
        rows = list(csv.reader(f))
    assert rows == [["record_id", "p_true", "nll", "token_entropy"], ["3", "0.25", "1.5", "2.0"]]
    with pytest.raises(ValidationError):
        formats.write_baselines(tmp_path / "c.csv", [{"record_id": 1, "p_true": math.nan, "nll": 1, "token_entropy": 1}])


@settings(max_examples=30, deadline=None)
@given(st.binary(max_size=2048))
def test_atomic_write_round_trips(tmp_path_factory, data):
    d = tmp_path_factory.mktemp("w")
    formats.atomic_write(d / "f", b"old")
    formats.atomic_write(d / "f", data)
    assert (d / "f").read_bytes() == data
    assert [p.name for p in d.iterdir()] == ["f"]
