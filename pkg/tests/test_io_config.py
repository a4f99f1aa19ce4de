import json
import math
import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bubbleflow.config import FlowConfig, RunConfig
from bubbleflow.flow import DiagnosticsRecord
from bubbleflow.io import (DiagnosticsWriter, load_checkpoint_meta, read_diagnostics, read_field, save_checkpoint,
                           write_field, write_field_csv)
from bubbleflow.torus import TorusSpec


@settings(max_examples=20)
@given(st.integers(8, 20).map(lambda k: 2 * k), st.floats(0.5, 3.0), st.integers(0, 2**32 - 1))
def test_field_roundtrip_is_exact(n, side, seed):
    spec = TorusSpec(n, side)
    u = np.random.default_rng(seed).normal(size=(3, n, n))
    with tempfile.TemporaryDirectory() as d:
        write_field(os.path.join(d, "f.bfld"), u, spec)
        v, spec2 = read_field(os.path.join(d, "f.bfld"))
    assert spec2 == spec
    assert np.array_equal(u, v)


def test_field_header_layout(tmp_path):
    spec = TorusSpec(16, 2.0)
    u = np.zeros((3, 16, 16))
    u[0, 1, 2] = 7.0
    write_field(tmp_path / "f.bfld", u, spec)
    raw = (tmp_path / "f.bfld").read_bytes()
    assert raw[:4] == b"BFLD" and len(raw) == 32 + 3 * 8 * 256
    # row-major triples: node (1, 2) is triple number 1 * 16 + 2
    assert np.frombuffer(raw[32:], "<f8")[3 * 18] == 7.0


def test_field_rejects_bad_files(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE" + bytes(28))
    with pytest.raises(ValueError, match="not a field"):
        read_field(tmp_path / "x")
    spec = TorusSpec(16)
    write_field(tmp_path / "t", np.zeros((3, 16, 16)), spec)
    (tmp_path / "t").write_bytes((tmp_path / "t").read_bytes()[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_field(tmp_path / "t")
    with pytest.raises(ValueError):
        write_field(tmp_path / "s", np.zeros((3, 8, 8)), spec)


def test_csv_export_is_lossless(tmp_path):
    spec = TorusSpec(16)
    u = np.random.default_rng(1).normal(size=(3, 16, 16))
    write_field_csv(tmp_path / "f.csv", u, spec)
    d = read_diagnostics(tmp_path / "f.csv")
    i, j = d["i"].astype(int), d["j"].astype(int)
    for c in range(3):
        assert np.array_equal(d[f"u{c}"], u[c, i, j])


def test_diagnostics_writer(tmp_path):
    cols = DiagnosticsRecord.columns()
    rec = DiagnosticsRecord(**{c: (0 if c in ("step", "rejected") else ("coupled" if c == "phase" else 0.1))
                               for c in cols})
    with DiagnosticsWriter(tmp_path / "ts.csv", cols, meta={"config_hash": "abc"}) as w:
        w(rec)
        w(rec)
    text = (tmp_path / "ts.csv").read_text()
    assert text.startswith('# {"config_hash": "abc"}')
    d = read_diagnostics(tmp_path / "ts.csv")
    assert len(d["t"]) == 2 and d["t"][0] == 0.1


def test_checkpoint_stores_floats_exactly(tmp_path):
    class Ms:
        mu_ref = 1.0 / 3.0
        b = (0.1, math.pi / 10)

        class profile:
            @staticmethod
            def to_dict():
                return {"mode": "desk"}

    class State:
        u = np.zeros((3, 16, 16))
        spec = TorusSpec(16)
        mu, mu0, t, dt, energy = math.e, 2.0 / 7.0, 1e-300, 0.1, 4 * math.pi
        dist_u, dist_g, phase, step_count = 1 / 9, 0.0, "frozen", 42
        ms = Ms()

    save_checkpoint(tmp_path, State())
    u, spec, meta = load_checkpoint_meta(tmp_path)
    assert meta["mu"] == math.e and meta["mu0"] == 2.0 / 7.0 and meta["t"] == 1e-300
    assert meta["b"] == (0.1, math.pi / 10) and meta["step_count"] == 42 and meta["phase"] == "frozen"


def test_config_roundtrip_and_digest(tmp_path):
    cfg = RunConfig()
    cfg.flow.eta = 0.2
    cfg.sweep.lams = (16.0, 32.0)
    (tmp_path / "c.json").write_text(cfg.to_json())
    back = RunConfig.load(tmp_path / "c.json")
    assert back == cfg
    assert back.digest() == cfg.digest()
    back.out_dir = "elsewhere"
    assert back.digest() == cfg.digest()
    back.seed = 1
    assert back.digest() != cfg.digest()


@pytest.mark.parametrize("bad", [
    {"grid_n": 15}, {"profile": {"mode": "wide"}}, {"flow": {"scheme": "rk4"}}, {"flow": {"eta": 1.5}},
    {"initial": {"kind": "file"}}, {"nonsense": 1}, {"flow": {"checkpoint_every": 7}},
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        RunConfig.from_dict(bad)


def test_flow_defaults():
    f = FlowConfig()
    assert f.scheme == "heun" and f.picture == "anchored" and not f.allow_below_mu_star
    assert f.mu_stop_factor == pytest.approx(math.e**2)
    assert json.loads(RunConfig().to_json())["flow"]["eta"] == f.eta
