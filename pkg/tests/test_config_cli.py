"""Config-file parsing, validation, and the command-line front end.

CLI studies here run at toy scale (d = 1 exact coverage, tiny ladders) so the
whole module stays fast; statistical behaviour at scale lives in
test_experiments.py and the acceptance suite.
"""

import json
from pathlib import Path

import pytest

from torus_gossip.cli import main
from torus_gossip.config import (
    CltConfig,
    CollapseConfig,
    VarianceConfig,
    load_config,
    with_overrides,
)
from torus_gossip.errors import ConfigError, ResourceLimitError


def write_toml(tmp_path: Path, body: str, name: str = "cfg.toml") -> Path:
    p = tmp_path / name
    p.write_text(body, encoding="utf-8")
    return p


TINY_CLT = """
experiment = "clt"
d = 1
lam = 1.0
big_lambda = 50.0
alpha = 0.5
u_values = [0.0]
replicates = 3
master_seed = 11
exact_coverage = true
"""

TINY_COLLAPSE = """
d = 1
lam = 1
big_lambdas = [50, 100]
u_values = [0.0]
replicates = 4
master_seed = 9
exact_coverage = true
horizon_mult = 8.0
"""

TINY_VARIANCE = """
d = 1
lam = 1.0
big_lambdas = [50.0, 120.0]
alpha1 = 0.3
alpha2 = 0.8
u_values = [0.0]
replicates = 3
snapshots = 1
master_seed = 13
exact_coverage = true
"""


@pytest.fixture(scope="module")
def phi_cache_d1(tmp_path_factory) -> Path:
    """One solved d=1 transform cache shared by every CLI study test."""
    out = tmp_path_factory.mktemp("phi")
    assert main(["phi-solve", "--d", "1", "--out", str(out)]) == 0
    cache = out / "phi_d1.cache"
    assert cache.exists()
    return cache


def with_cache(body: str, cache: Path) -> str:
    return body + f'\nphi_cache = "{cache}"\n'


# ---------------------------------------------------------------------------
# load_config


def test_load_config_round_trip(tmp_path):
    cfg = load_config(write_toml(tmp_path, TINY_CLT), "clt")
    assert cfg == CltConfig(
        d=1,
        lam=1.0,
        big_lambda=50.0,
        alpha=0.5,
        u_values=(0.0,),
        replicates=3,
        master_seed=11,
        exact_coverage=True,
    )
    # defaults fill anything the file leaves out
    assert cfg.probes == 100_000
    assert cfg.threads == 1
    assert cfg.w_lo == 0.05 and cfg.w_hi == 20.0


def test_load_config_coerces_toml_integers_to_floats(tmp_path):
    # TINY_COLLAPSE spells lam and the ladder as TOML integers on purpose
    cfg = load_config(write_toml(tmp_path, TINY_COLLAPSE), "collapse")
    assert cfg.lam == 1.0 and isinstance(cfg.lam, float)
    assert cfg.big_lambdas == (50.0, 100.0)
    assert all(isinstance(v, float) for v in cfg.big_lambdas)


def test_load_config_rejects_unknown_key(tmp_path):
    p = write_toml(tmp_path, TINY_CLT + "\nreplicants = 7\n")
    with pytest.raises(ConfigError, match="replicants"):
        load_config(p, "clt")


def test_load_config_rejects_wrong_experiment_declaration(tmp_path):
    p = write_toml(tmp_path, TINY_COLLAPSE + '\nexperiment = "collapse"\n')
    with pytest.raises(ConfigError, match="declares experiment"):
        load_config(p, "variance")


def test_load_config_rejects_nested_tables(tmp_path):
    p = write_toml(tmp_path, TINY_CLT + "\n[extra]\nx = 1\n")
    with pytest.raises(ConfigError, match="flat"):
        load_config(p, "clt")


def test_load_config_rejects_invalid_toml(tmp_path):
    p = write_toml(tmp_path, "d = = 1\n")
    with pytest.raises(ConfigError, match="not valid TOML"):
        load_config(p, "clt")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml", "clt")


def test_load_config_incomplete(tmp_path):
    p = write_toml(tmp_path, 'experiment = "clt"\nd = 1\n')
    with pytest.raises(ConfigError, match="incomplete"):
        load_config(p, "clt")


def test_load_config_unknown_kind(tmp_path):
    p = write_toml(tmp_path, TINY_CLT)
    with pytest.raises(ConfigError, match="unknown experiment kind"):
        load_config(p, "anneal")


def test_load_config_rejects_boolean_where_float_expected(tmp_path):
    p = write_toml(tmp_path, TINY_CLT.replace("lam = 1.0", "lam = true"))
    with pytest.raises(ConfigError, match="lam"):
        load_config(p, "clt")


# ---------------------------------------------------------------------------
# dataclass validation


def base_clt(**kw):
    args = dict(
        d=1,
        lam=1.0,
        big_lambda=50.0,
        alpha=0.5,
        u_values=(0.0,),
        replicates=3,
        master_seed=11,
        exact_coverage=True,
    )
    args.update(kw)
    return CltConfig(**args)


@pytest.mark.parametrize(
    "bad",
    [
        dict(d=4),
        dict(lam=0.0),
        dict(lam=float("inf")),
        dict(replicates=1),
        dict(replicates=3.0),
        dict(master_seed=-1),
        dict(master_seed=1 << 64),
        dict(threads=0),
        dict(u_values=()),
        dict(u_values=(1.0, 0.0)),
        dict(u_values=(0.0, 0.0)),
        dict(u_values=(float("nan"),)),
        dict(alpha=0.0),
        dict(alpha=2.0 / 3.0),
        dict(w_lo=0.0),
        dict(w_lo=3.0, w_hi=2.0),
        dict(seed_budget=0),
        dict(big_lambda=5.0),
        dict(exact_coverage=False, probes=0),
        dict(d=2, exact_coverage=True),
        # measurement before the snapshot: u <= (alpha-1)*log(big_lambda)
        dict(u_values=(-3.0, 0.0)),
    ],
)
def test_clt_config_validation(bad):
    with pytest.raises(ConfigError):
        base_clt(**bad)


def test_ladder_validation():
    ok = dict(
        d=1,
        lam=1.0,
        u_values=(0.0,),
        replicates=2,
        master_seed=0,
        exact_coverage=True,
        horizon_mult=8.0,
    )
    with pytest.raises(ConfigError, match="big_lambdas"):
        CollapseConfig(big_lambdas=(), **ok)
    with pytest.raises(ConfigError, match="increasing"):
        CollapseConfig(big_lambdas=(100.0, 50.0), **ok)
    with pytest.raises(ConfigError, match="increasing"):
        CollapseConfig(big_lambdas=(50.0, 50.0), **ok)
    with pytest.raises(ConfigError, match=">= 10"):
        CollapseConfig(big_lambdas=(5.0, 50.0), **ok)
    with pytest.raises(ConfigError, match="horizon_mult"):
        CollapseConfig(big_lambdas=(50.0,), **{**ok, "horizon_mult": 4.0})


def test_variance_config_validation():
    ok = dict(
        d=1,
        lam=1.0,
        big_lambdas=(50.0, 120.0),
        u_values=(0.0,),
        replicates=3,
        snapshots=1,
        master_seed=0,
        exact_coverage=True,
    )
    with pytest.raises(ConfigError, match="alpha1"):
        VarianceConfig(alpha1=0.8, alpha2=0.3, **ok)
    with pytest.raises(ConfigError, match="alpha1"):
        VarianceConfig(alpha1=0.0, alpha2=0.5, **ok)
    with pytest.raises(ConfigError, match="snapshots"):
        VarianceConfig(alpha1=0.3, alpha2=0.8, **{**ok, "snapshots": 0})
    # u before the conditioning time at the smallest ladder entry
    with pytest.raises(ConfigError, match="conditioning"):
        VarianceConfig(alpha1=0.3, alpha2=0.8, **{**ok, "u_values": (-2.0,)})


def test_with_overrides():
    cfg = base_clt()
    same = with_overrides(cfg, master_seed=None, threads=None)
    assert same is cfg
    changed = with_overrides(cfg, master_seed=42, threads=2)
    assert changed.master_seed == 42 and changed.threads == 2
    assert cfg.master_seed == 11  # frozen original untouched
    with pytest.raises(ConfigError):
        with_overrides(cfg, threads=0)


# ---------------------------------------------------------------------------
# CLI: artifact subcommands


def test_phi_solve_writes_cache_and_manifest(phi_cache_d1):
    manifest = json.loads((phi_cache_d1.parent / "manifest.json").read_text())
    assert manifest["command"] == "phi-solve"
    assert manifest["residual"] < 1e-10
    assert 1.0 < manifest["m2"] < 2.0
    assert manifest["cache"] == "phi_d1.cache"


def test_cmj_sample_writes_draws(tmp_path, capsys):
    rc = main(
        [
            "cmj-sample",
            "--d",
            "1",
            "--count",
            "300",
            "--horizon",
            "8",
            "--seed",
            "5",
            "--out",
            str(tmp_path),
        ]
    )
    assert rc == 0
    lines = (tmp_path / "w_samples.csv").read_text().strip().splitlines()
    assert lines[0] == "sample"
    assert len(lines) == 301
    vals = [float(x) for x in lines[1:]]
    assert all(v > 0 for v in vals)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    # mean-one martingale limit; wide band, 300 draws of variance ~ 1/3
    assert abs(manifest["mean"] - 1.0) < 0.2
    assert manifest["master_seed"] == 5
    assert "variance" in manifest
    capsys.readouterr()


def test_gossip_run_with_snapshot(tmp_path):
    rc = main(
        [
            "gossip-run",
            "--d",
            "1",
            "--big-lambda",
            "80",
            "--u",
            "0.0",
            "--snapshot-alpha",
            "0.5",
            "--seed",
            "3",
            "--out",
            str(tmp_path),
            "--exact-d1",
        ]
    )
    assert rc == 0
    summary = json.loads((tmp_path / "run_summary.json").read_text())
    assert 0.0 <= summary["coverage"] <= 1.0
    assert summary["probe_se"] == 0.0  # exact mode
    assert summary["n_kept"] <= summary["n_records"]
    assert (tmp_path / "snapshot.bin").exists()
    assert summary["snapshot"]["mass_estimate"] >= 0.0
    assert summary["snapshot"]["t"] == pytest.approx(0.5 * __import__("math").log(80.0))


def test_gossip_run_exact_mode_needs_d1(tmp_path):
    rc = main(
        [
            "gossip-run",
            "--d",
            "2",
            "--big-lambda",
            "80",
            "--seed",
            "3",
            "--out",
            str(tmp_path),
            "--exact-d1",
        ]
    )
    assert rc == 1


# ---------------------------------------------------------------------------
# CLI: studies, exit codes, determinism


def test_clt_study_runs_and_uses_cache(tmp_path, phi_cache_d1, capsys):
    cfg = write_toml(tmp_path, with_cache(TINY_CLT, phi_cache_d1))
    out = tmp_path / "run1"
    rc = main(["clt", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    assert (out / "results.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "clt"
    assert manifest["phi"]["source"] == "cache"
    assert len(manifest["phi"]["blake2b"]) == 32
    assert manifest["config"]["big_lambda"] == 50.0
    assert sorted(manifest["outputs"]) == manifest["outputs"]
    header = (out / "results.csv").read_text().splitlines()[0]
    assert header == "replicate,u,coverage,what_v,ell_target,residual,sigma2_target,probe_se"
    capsys.readouterr()


def test_seed_flag_overrides_config(tmp_path, phi_cache_d1, capsys):
    cfg = write_toml(tmp_path, with_cache(TINY_CLT, phi_cache_d1))
    out = tmp_path / "seeded"
    assert main(["clt", "--config", str(cfg), "--out", str(out), "--seed", "42"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 42
    assert manifest["config"]["master_seed"] == 42
    capsys.readouterr()


def test_rerun_is_byte_identical(tmp_path, phi_cache_d1, capsys):
    cfg = write_toml(tmp_path, with_cache(TINY_CLT, phi_cache_d1))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["clt", "--config", str(cfg), "--out", str(out), "--seed", "42"]) == 0
        outs.append((out / "results.csv").read_bytes())
    assert outs[0] == outs[1]
    capsys.readouterr()


def test_thread_count_does_not_change_results(tmp_path, phi_cache_d1, capsys):
    cfg = write_toml(tmp_path, with_cache(TINY_COLLAPSE, phi_cache_d1))
    payloads = []
    for name, threads in (("t1", "1"), ("t2", "2")):
        out = tmp_path / name
        rc = main(
            ["collapse", "--config", str(cfg), "--out", str(out), "--threads", threads]
        )
        assert rc == 0
        payloads.append((out / "results.csv").read_bytes())
    # canonical (replicate, u) sort makes the files byte-equal, not merely
    # value-equal, whatever the pool schedule did
    assert payloads[0] == payloads[1]
    capsys.readouterr()


def test_check_mode_passes_on_healthy_collapse(tmp_path, phi_cache_d1, capsys):
    body = """
d = 1
lam = 1.0
big_lambdas = [200.0, 400.0, 800.0]
u_values = [0.0]
replicates = 120
master_seed = 55
exact_coverage = true
horizon_mult = 10.0
"""
    cfg = write_toml(tmp_path, with_cache(body, phi_cache_d1))
    out = tmp_path / "chk"
    rc = main(["collapse", "--config", str(cfg), "--out", str(out), "--check"])
    assert rc == 0
    assert "all checks passed" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["summary"]["w1_weakly_decreasing"] == {"0": True}


def test_check_mode_fails_with_exit_3(tmp_path, phi_cache_d1, capsys):
    # one snapshot and three continuations per rung: the fitted slope is
    # noise and lands far outside the +-0.3 band for this seed
    cfg = write_toml(tmp_path, with_cache(TINY_VARIANCE, phi_cache_d1))
    out = tmp_path / "bad"
    rc = main(["variance", "--config", str(cfg), "--out", str(out), "--check"])
    assert rc == 3
    err = capsys.readouterr().err
    assert "check failure" in err
    assert "slope" in err
    # outputs are still written before the verdict
    assert (out / "results.csv").exists()


def test_missing_config_file_exits_1(tmp_path, capsys):
    rc = main(["clt", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path)])
    assert rc == 1
    assert "configuration error" in capsys.readouterr().err


def test_bad_config_value_exits_1(tmp_path, capsys):
    cfg = write_toml(tmp_path, TINY_CLT.replace("d = 1", "d = 9"))
    rc = main(["clt", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 1
    assert "configuration error" in capsys.readouterr().err


def test_usage_errors_exit_1():
    # argparse would normally exit 2; the contract pins 1
    with pytest.raises(SystemExit) as exc:
        main(["clt"])  # missing required --config
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1


def test_resource_errors_exit_2(tmp_path, monkeypatch, capsys):
    import torus_gossip.cli as cli_mod

    cfg = write_toml(tmp_path, TINY_CLT)

    def exhausted(config, out_dir=None):
        raise ResourceLimitError("record cap exceeded")

    monkeypatch.setitem(cli_mod._STUDIES, "clt", ("clt", exhausted))
    rc = main(["clt", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 2
    assert "resource error" in capsys.readouterr().err

    def oom(config, out_dir=None):
        raise MemoryError

    monkeypatch.setitem(cli_mod._STUDIES, "clt", ("clt", oom))
    assert main(["clt", "--config", str(cfg), "--out", str(tmp_path)]) == 2
