import dataclasses

import numpy as np
import pytest

from jslr import experiments as ex
from jslr import io
from jslr.errors import ConfigError

SMALL = """
[phantom]
image_side = 8
N = 6
r = 2
k = 8

[operator]
common_lines = 3
variable_lines = 3
samples_per_line = corners

[solver]
lam = 1e-7
rho = 1e-5
lam_grid = 1e-7
max_iters = 150
continuation_iters = 60

[noise]
snr_db = none, 50

[run]
seeds = 0-1
"""


def small_config(tmp_path, command, extra=""):
    path = tmp_path / "cfg.ini"
    path.write_text(SMALL + extra)
    cfg = ex.load_config(str(path), command)
    return dataclasses.replace(cfg, output_dir=str(tmp_path / "out"))


# -- configuration ---------------------------------------------------------------

def test_defaults_per_command():
    ss = ex.default_config("subspace-sweep")
    assert ss.operator.kind == "gaussian" and ss.sweep.values == list(range(1, 11))
    assert ss.noise == [None, 35.0] and len(ss.seeds) == 20
    ls = ex.default_config("line-sweep")
    assert ls.operator.common_lines == 4 and ls.operator.spl(32) == 46
    rc = ex.default_config("recon-compare")
    assert rc.operator.spl(32) == 32 and rc.operator.variable_lines == 5 and rc.noise == [None, 50.0]
    with pytest.raises(ConfigError):
        ex.default_config("nope")


def test_ini_overlay_and_case_sensitive_keys(tmp_path):
    cfg = small_config(tmp_path, "line-sweep")
    assert cfg.phantom.N == 6 and cfg.phantom.n == 64
    assert cfg.seeds == [0, 1]
    assert cfg.noise == [None, 50.0]
    assert cfg.solver.lam_grid == [1e-7]
    # keys that were not given keep the command default
    assert cfg.sweep.variable == "operator.variable_lines"


@pytest.mark.parametrize("text,msg", [
    ("[bogus]\na = 1\n", "section"),
    ("[phantom]\nwidth = 3\n", "unknown key"),
    ("[phantom]\nN = many\n", "bad value"),
    ("[sweep]\nvariable = phantom.nope\nvalues = 1\n", "config field"),
    ("[sweep]\nvariable = novariable\nvalues = 1\n", "section.key"),
    ("[noise]\nsnr_db = loud\n", "noise"),
])
def test_config_errors(tmp_path, text, msg):
    p = tmp_path / "bad.ini"
    p.write_text(text)
    with pytest.raises(ConfigError, match=msg):
        ex.load_config(str(p), "subspace-sweep")


def test_missing_config_file():
    with pytest.raises(ConfigError):
        ex.load_config("/nonexistent/cfg.ini", "verify")


def test_config_text_round_trip(tmp_path):
    cfg = small_config(tmp_path, "recon-compare")
    again = ex.parse_config_text(ex.config_to_ini(cfg), "recon-compare")
    assert again == cfg


def test_sweep_values_typed(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[sweep]\nvariable = operator.samples_per_line\nvalues = side, corners, 20\n")
    cfg = ex.load_config(str(p), "line-sweep")
    assert cfg.sweep.values == ["side", "corners", "20"]
    assert [cfg.with_value(cfg.sweep.variable, v).operator.spl(32) for v in cfg.sweep.values] == [32, 46, 20]


def test_validate_rejects(tmp_path):
    cfg = small_config(tmp_path, "subspace-sweep")
    with pytest.raises(ConfigError):
        ex.validate(dataclasses.replace(cfg, sweep=ex.SweepConfig("operator.common_s", [])), need_sweep=True)
    with pytest.raises(ConfigError):
        ex.validate(dataclasses.replace(cfg, seeds=[]))
    with pytest.raises(ConfigError):
        ex.validate(dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, method="magic")))
    with pytest.raises(ConfigError):
        ex.validate(dataclasses.replace(cfg, phantom=dataclasses.replace(cfg.phantom, r=10)))


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = dataclasses.replace(ex.default_config("verify"), output_dir=str(blocker / "sub"))
    with pytest.raises(ConfigError):
        ex._ensure_dir(cfg.output_dir)


# -- commands -----------------------------------------------------------------

def test_subspace_sweep_small(tmp_path):
    cfg = small_config(tmp_path, "subspace-sweep", "\n[sweep]\nvariable = operator.common_s\nvalues = 1, 2, 3\n")
    cfg = dataclasses.replace(cfg, noise=[None], operator=dataclasses.replace(cfg.operator, kind="gaussian"))
    rows = ex.cmd_subspace_sweep(cfg)
    header, body = io.read_table(tmp_path / "out" / "subspace_sweep.csv")
    assert header == ex.SUBSPACE_HEADER
    assert len(body) == 3 * 2
    for value, s, seed, snr, err in rows:
        assert (err < 1e-8) == (s >= 2)
    assert (tmp_path / "out" / "subspace_sweep.png").stat().st_size > 0


def test_sweep_is_deterministic_and_thread_independent(tmp_path):
    base = small_config(tmp_path, "subspace-sweep")
    base = dataclasses.replace(base, operator=dataclasses.replace(base.operator, kind="gaussian"),
                               sweep=ex.SweepConfig("operator.common_s", [1, 3]), noise=[30.0])
    a = dataclasses.replace(base, output_dir=str(tmp_path / "a"))
    b = dataclasses.replace(base, output_dir=str(tmp_path / "b"), threads=2)
    ex.cmd_subspace_sweep(a)
    ex.cmd_subspace_sweep(b)
    assert (tmp_path / "a" / "subspace_sweep.csv").read_bytes() == (tmp_path / "b" / "subspace_sweep.csv").read_bytes()


def test_line_sweep_small_full_sampling(tmp_path):
    cfg = small_config(tmp_path, "line-sweep", "\n[sweep]\nvalues = 1, 12\n")
    cfg = dataclasses.replace(cfg, noise=[None], seeds=[0],
                              solver=dataclasses.replace(cfg.solver, lam=1e-9, rho=1e-7))
    rows = ex.cmd_line_sweep(cfg)
    errs = {r[0]: r[3] for r in rows}
    # 3 common + 12 variable lines of 12 samples exceed the 64 unknowns per frame
    assert errs[12] < 1e-6
    assert errs[1] >= errs[12]
    header, _ = io.read_table(tmp_path / "out" / "line_sweep.csv")
    assert header == ex.LINE_HEADER
    assert (tmp_path / "out" / "line_sweep_median.csv").exists()


def test_line_sweep_needs_radial(tmp_path):
    cfg = small_config(tmp_path, "line-sweep")
    with pytest.raises(ConfigError):
        ex.cmd_line_sweep(dataclasses.replace(cfg, operator=dataclasses.replace(cfg.operator, kind="gaussian")))


def test_recon_compare_small_outputs(tmp_path):
    cfg = small_config(tmp_path, "recon-compare")
    cfg = dataclasses.replace(cfg, seeds=[0], operator=dataclasses.replace(cfg.operator, samples_per_line="side"))
    rows = ex.cmd_recon_compare(cfg)
    out = tmp_path / "out"
    assert {r[0] for r in rows} == {"ls", "tv", "joint"}
    by = {(r[0], r[1]): r[4] for r in rows}
    for method in ("ls", "tv", "joint"):
        assert by[(method, None)] <= by[(method, 50.0)] * 1.05
        for tag in ("clean", "snr50"):
            x = io.read_matrix(out / f"recon_{method}_{tag}.jslr")
            assert x.shape == (64, 6)
            assert io.read_pgm(out / f"recon_{method}_{tag}.pgm").shape == (8, 8)
            assert io.read_pgm(out / f"error_{method}_{tag}.pgm").shape == (8, 8)
    header, body = io.read_table(out / "recon_compare_summary.csv")
    assert header == ["method", "snr_db", "median_recovery_error"] and len(body) == 6
    assert (out / "recon_compare.png").exists() and (out / "recon_compare_clean.png").exists()


def test_verify_command_writes_report(tmp_path, monkeypatch):
    from jslr.verify import CheckResult

    monkeypatch.setattr(ex, "verification_suite", lambda seed, inject_deficient, budget: [
        CheckResult("a", True, "ok"), CheckResult("b", False, "bad")])
    cfg = dataclasses.replace(ex.default_config("verify"), output_dir=str(tmp_path))
    checks = ex.cmd_verify(cfg)
    assert [c.passed for c in checks] == [True, False]
    header, body = io.read_table(tmp_path / "verify_report.csv")
    assert header == ex.VERIFY_HEADER and body[1] == ["b", "0", "bad"]
    header, body = io.read_table(tmp_path / "budget.csv")
    assert body[0][:4] == ["64", "5", "1024", "40"]
    assert int(body[0][4]) == (2 * 64 - 5 + 40) * 5 and int(body[0][6]) == (2 * 64 - 5 + 1) * 40


def test_phantom_then_recover(tmp_path):
    cfg = small_config(tmp_path, "phantom")
    cfg = dataclasses.replace(cfg, noise=[None], output_dir=str(tmp_path / "ph"))
    paths = ex.cmd_phantom(cfg)
    truth, secs = io.read_container(paths["phantom"])
    assert truth.shape == (64, 6) and set(secs) >= {"U", "sigma", "V", "support"}
    summary = ex.cmd_recover(None, paths["measurements"], paths["phantom"], output_dir=str(tmp_path / "rec"))
    assert summary["recovery_error"] < 1e-2
    rec = io.load_recovery(tmp_path / "rec" / "recovery.jslr")
    assert np.array_equal(rec.x_hat, summary["result"].x_hat)
    sub = io.load_subspace(tmp_path / "rec" / "subspace.jslr")
    assert sub.r_used == 2
    for name in ("spectrum.csv", "residuals.csv", "spectrum.png", "residuals.png"):
        assert (tmp_path / "rec" / name).exists()
    assert len(list((tmp_path / "rec" / "recovered_frames").iterdir())) == 6


def test_recover_rejects_mismatched_config(tmp_path):
    cfg = small_config(tmp_path, "phantom")
    cfg = dataclasses.replace(cfg, noise=[None], output_dir=str(tmp_path / "ph"))
    paths = ex.cmd_phantom(cfg)
    other = dataclasses.replace(cfg, operator=dataclasses.replace(cfg.operator, variable_lines=4))
    with pytest.raises(ConfigError):
        ex.cmd_recover(other, paths["measurements"])


def test_median_table_orders_none_last():
    rows = [(1, None, 0.5), (1, 35.0, 0.2), (1, 35.0, 0.4), (0, None, 1.0)]
    med = ex.median_table(rows, key=lambda r: (r[0], r[1]), value=lambda r: r[2])
    assert med == [((0, None), 1.0), ((1, 35.0), pytest.approx(0.3)), ((1, None), 0.5)]


def test_derive_seed_stable_and_distinct():
    assert ex.derive_seed(3, 1) == ex.derive_seed(3, 1)
    assert len({ex.derive_seed(s, t) for s in range(5) for t in (1, 2, 3)}) == 15


def test_median_table_scalar_keys():
    rows = [(2, 1.0), (1, 3.0), (None, 0.0), (1, 5.0)]
    assert ex.median_table(rows, key=lambda r: r[0], value=lambda r: r[1]) == [(1, 4.0), (2, 1.0), (None, 0.0)]


def test_inline_comments_allowed():
    cfg = ex.parse_config_text("[operator]\nsamples_per_line = corners   ; reach the corners\n", "line-sweep")
    assert cfg.operator.samples_per_line == "corners"
