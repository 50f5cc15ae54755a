import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import pytest

from frontsim import cli
from frontsim.errors import IntegrityError, MergeError, ParameterError
from frontsim.harness import (
    RunConfig,
    config_to_text,
    derive_seed,
    merge_and_report,
    parse_config_text,
    run_ensemble,
)

BASE_CFG = """
variant = single_rate
rho = 1.0
d_r = 2.0
d_b = 2.0
alpha = 0.74
theta = 0.5
beta = 1.1
t_fwd = 25.0
h_back = 8
h_fwd = 8
window_min = -30
window_max = 70
replicas = 4
master_seed = 4242
output_dir = PLACEHOLDER
"""


def make_cfg(tmp_path, name="out", **overrides):
    text = BASE_CFG.replace("PLACEHOLDER", str(tmp_path / name))
    cfg = parse_config_text(text)
    for key, val in overrides.items():
        setattr(cfg, key, val)
    return cfg


def tree_bytes(root: Path) -> dict:
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.iterdir())
        if p.is_file()
    }


class TestDeriveSeed:
    def test_golden_value(self):
        # frozen from the documented recipe: sha256 of the little-endian
        # <QQQ> packing, first 8 digest bytes little-endian
        payload = struct.pack("<QQQ", 0x9E3779B97F4A7C15, 7, 3)
        expected = int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")
        assert derive_seed(0x9E3779B97F4A7C15, 7, 3) == expected
        # pinned literal so an accidental recipe change cannot slip through
        assert derive_seed(0x9E3779B97F4A7C15, 7, 3) == 263471619030849452

    def test_determinism_and_spread(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)

    def test_collision_scan(self):
        seeds = {derive_seed(99, rep, 0) for rep in range(1_000_000)}
        assert len(seeds) == 1_000_000


class TestConfigParsing:
    def test_unknown_key_is_hard_error(self):
        with pytest.raises(ParameterError, match="unknown key"):
            parse_config_text("rho = 1\nbogus_knob = 3\n")

    def test_duplicate_key_rejected(self):
        text = BASE_CFG.replace("PLACEHOLDER", "x") + "\nrho = 2.0\n"
        with pytest.raises(ParameterError, match="duplicate"):
            parse_config_text(text)

    def test_missing_required(self):
        with pytest.raises(ParameterError, match="missing required"):
            parse_config_text("rho = 1.0\n")

    def test_round_trip(self, tmp_path):
        cfg = make_cfg(tmp_path)
        back = parse_config_text(config_to_text(cfg))
        assert back.full_dict() == cfg.full_dict()

    def test_eq15_validated_at_resolution(self, tmp_path):
        cfg = make_cfg(tmp_path, alpha=0.1, beta=0.2)  # mu < 0 for theta=0.5
        with pytest.raises(ParameterError):
            cfg.resolved_alpha_params(1.0)


class TestEnsembleDeterminism:
    def test_two_runs_byte_identical(self, tmp_path):
        cfg_a = make_cfg(tmp_path, "a")
        cfg_b = make_cfg(tmp_path, "b")
        run_ensemble(cfg_a)
        run_ensemble(cfg_b)
        ta = tree_bytes(tmp_path / "a")
        tb = tree_bytes(tmp_path / "b")
        # manifests contain the differing output_dir; compare data files
        ta.pop("run.json")
        tb.pop("run.json")
        assert ta == tb

    def test_idempotent_rerun_verifies(self, tmp_path):
        cfg = make_cfg(tmp_path)
        m1 = run_ensemble(cfg)
        m2 = run_ensemble(make_cfg(tmp_path))
        assert m1.as_json() == m2.as_json()

    def test_kill_and_resume_byte_identical(self, tmp_path):
        cfg_full = make_cfg(tmp_path, "full")
        run_ensemble(cfg_full)
        reference = tree_bytes(tmp_path / "full")

        # simulate an interrupted run: some replicas missing, no manifest
        cfg_part = make_cfg(tmp_path, "part")
        run_ensemble(cfg_part)
        out = tmp_path / "part"
        (out / "run.json").unlink()
        (out / "front_00002.csv").unlink()
        (out / "renewals_00003.csv").unlink()
        run_ensemble(make_cfg(tmp_path, "part"))
        resumed = tree_bytes(out)
        reference.pop("run.json")
        resumed.pop("run.json")
        assert resumed == reference

    def test_corrupted_file_raises_integrity_error(self, tmp_path):
        cfg = make_cfg(tmp_path)
        run_ensemble(cfg)
        victim = tmp_path / "out" / "front_00001.csv"
        victim.write_text(victim.read_text() + "tampered\n")
        with pytest.raises(IntegrityError, match="front_00001.csv"):
            run_ensemble(make_cfg(tmp_path))

    def test_workers_match_sequential(self, tmp_path):
        run_ensemble(make_cfg(tmp_path, "seq"))
        run_ensemble(make_cfg(tmp_path, "par"), workers=2)
        a = tree_bytes(tmp_path / "seq")
        b = tree_bytes(tmp_path / "par")
        a.pop("run.json")
        b.pop("run.json")
        assert a == b


class TestMerge:
    def _three_dirs(self, tmp_path):
        run_ensemble(make_cfg(tmp_path, "full", replicas=6))
        run_ensemble(make_cfg(tmp_path, "p1", replicas=3))
        cfg2 = make_cfg(tmp_path, "p2", replicas=3)
        cfg2.replica_start = 3
        run_ensemble(cfg2)
        return tmp_path / "full", tmp_path / "p1", tmp_path / "p2"

    def test_split_merge_equals_unsplit(self, tmp_path):
        full, p1, p2 = self._three_dirs(tmp_path)
        ra = merge_and_report([full])
        rb = merge_and_report([p1, p2])
        assert ra.as_json() == rb.as_json()

    def test_commutative_and_idempotent(self, tmp_path):
        full, p1, p2 = self._three_dirs(tmp_path)
        assert merge_and_report([p1, p2]).as_json() == \
            merge_and_report([p2, p1]).as_json()
        assert merge_and_report([full, full]).as_json() == \
            merge_and_report([full]).as_json()

    def test_incompatible_manifests_listed(self, tmp_path):
        run_ensemble(make_cfg(tmp_path, "a"))
        run_ensemble(make_cfg(tmp_path, "c", rho=1.5))
        with pytest.raises(MergeError, match="rho"):
            merge_and_report([tmp_path / "a", tmp_path / "c"])


class TestCli:
    def test_simulate_and_estimate(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text(
            BASE_CFG.replace("PLACEHOLDER", str(tmp_path / "out"))
        )
        assert cli.main(["simulate", "--config", str(cfg_file)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["replicas"] == 4
        assert cli.main(["estimate", str(tmp_path / "out")]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert "v_hat" in rep

    def test_env_override_for_output_dir(self, tmp_path, monkeypatch, capsys):
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text(
            BASE_CFG.replace("PLACEHOLDER", str(tmp_path / "ignored"))
        )
        monkeypatch.setenv("FRONTSIM_OUT", str(tmp_path / "env_out"))
        assert cli.main(["simulate", "--config", str(cfg_file)]) == 0
        assert (tmp_path / "env_out" / "run.json").exists()
        assert not (tmp_path / "ignored").exists()

    def test_script_file_front(self, tmp_path, capsys):
        script = tmp_path / "paths.txt"
        script.write_text(
            "0.1 0 0 3 2\n1\t1\n2\t1\n\n0.2 1 0 3 2\n"
        )
        rc = cli.main([
            "simulate", "--config", "unused", "--script-file", str(script),
            "--out", str(tmp_path), "--seed", "0",
        ])  # the config path is not read in script mode
        assert rc == 0
        front = (tmp_path / "front_script.csv").read_text()
        assert "1,1,up" in front and "2,2,up" in front

    def test_verify_couplings_cli(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text(
            BASE_CFG.replace("PLACEHOLDER", str(tmp_path / "vc"))
        )
        rc = cli.main(["verify-couplings", "--config", str(cfg_file),
                       "--trials", "5"])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert all(v == 0 for v in out["failures"].values())

    def test_horizon_sweep_cli(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text(
            BASE_CFG.replace("PLACEHOLDER", str(tmp_path / "hs"))
            .replace("replicas = 4", "replicas = 2")
        )
        assert cli.main(["renewal", "--config", str(cfg_file),
                         "--horizon-sweep"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert "churn" in out
