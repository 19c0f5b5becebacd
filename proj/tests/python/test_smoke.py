# SPDX-License-Identifier: Apache-2.0
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import dynmoe

SOURCE = Path(os.environ.get("DYNMOE_SOURCE_DIR", Path(__file__).resolve().parents[2]))
SMOKE = SOURCE / "configs" / "smoke.json"

PREFILL = [1.403, 1.341, 1.296, 1.261, 1.234, 1.212, 1.194, 1.178]
DECODE = [1.443, 1.403, 1.370, 1.341, 1.317, 1.296, 1.278, 1.261]


def test_speedup_table_reference():
    rows = dynmoe.speedup_table(range(1024, 8193, 1024))
    assert len(rows) == 8
    for (length, r_ze, prefill, decode), p, d in zip(rows, PREFILL, DECODE):
        assert r_ze == 0.5
        assert abs(prefill - p) <= 1e-3
        assert abs(decode - d) <= 1e-3


def test_speedup_without_zero_slots_pays_only_router_overhead():
    cfg = dynmoe.resolve_config()["flops"]
    for key in ("lengths", "r_ze_values"):
        cfg.pop(key)
    for _, _, prefill, decode in dynmoe.speedup_table([2048], [0.0], cfg):
        # The dynamic router scores N + N_Z candidates instead of N.
        assert 0.99 < prefill < 1.0
        assert 0.99 < decode < 1.0


def test_equilibrium_matches_target():
    assert dynmoe.target_rze(128, 64, 2.0) == 0.5
    assert dynmoe.coupled_group_argmin(0.1, 1.0, 16, 8, 4) == pytest.approx(1 / 3, abs=2e-4)


def test_config_strictness_and_overrides():
    cfg = dynmoe.resolve_config(SMOKE, ["adapt.w=4"])
    assert cfg["adapt"]["w"] == 4.0
    assert dynmoe.config_hash(SMOKE) != dynmoe.config_hash(SMOKE, ["adapt.w=4"])
    with pytest.raises(dynmoe.ConfigError):
        dynmoe.resolve_config(SMOKE, ["model.bogus=1"])


def test_cli_pipeline_and_masked_identity(tmp_path):
    out = str(tmp_path / "run")
    for cmd in ("gen-data", "train-teacher", "inject"):
        assert dynmoe.main([cmd, "--config", SMOKE, "--out", out]) == 0
    assert dynmoe.main(["adapt", "--config", SMOKE, "--out", tmp_path / "other"]) == 3

    teacher = dynmoe.Model(Path(out) / "teacher.ckpt")
    injected = dynmoe.Model(Path(out) / "injected.ckpt")
    assert injected.config["num_zero_experts"] == 4
    assert injected.parameter_count > teacher.parameter_count

    tokens = np.random.default_rng(0).integers(0, 64, size=(3, 10))
    a = teacher.logits(tokens)
    b = injected.logits(tokens, mask=True)
    assert a.shape == (3, 10, 64)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, injected.logits(tokens, mask=False))

    heldout = Path(out) / "data" / "heldout.csv"
    t = teacher.evaluate(heldout)
    m = injected.evaluate(heldout, mask=True)
    assert t["ce"] == m["ce"] and t["accuracy"] == m["accuracy"]
    assert math.isfinite(t["ce"])

    manifest = json.loads((Path(out) / "manifest.json").read_text())
    assert set(manifest["commands"]) == {"gen-data", "train-teacher", "inject"}


def test_missing_checkpoint_raises(tmp_path):
    with pytest.raises(dynmoe.MissingArtifactError):
        dynmoe.Model(tmp_path / "absent.ckpt")
