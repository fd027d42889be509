import math

import pytest

from smrlab.cli import main
from smrlab.config import NoiseSpec, default_config, load_config
from smrlab.errors import ConfigurationError
from smrlab.experiments import run
from smrlab.report import (EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_MISSED, EXIT_OK, Check,
                           ExperimentResult, fmt, write_outputs)

SMALL = """
dim = 1
levels = [2, 3, 4]
reference_level = 5
n_steps = 32
M_paths = 8
seed = 11
{extra}
[noise]
profiles = ["sin(1)", "bubble"]
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_load_config_toml(tmp_path):
    path = _write(tmp_path, SMALL.format(extra='alpha = [0.25]\np = 6.0'))
    cfg = load_config(path, "converge")
    assert cfg.levels == (2, 3, 4) and cfg.reference_level == 5
    assert cfg.noise == NoiseSpec(profiles=("sin(1)", "bubble"))
    assert cfg.alpha == (0.25,) and cfg.p == 6.0 and cfg.seed == 11
    # overrides win over file keys
    assert load_config(path, "converge", seed=3).seed == 3


def test_defaults_per_experiment():
    assert default_config("converge").levels == (3, 4, 5, 6)
    assert default_config("converge").reference_level == 8
    assert default_config("uniformity").levels == (3, 4, 5, 6, 7)
    assert default_config("smr").M_paths == 128
    assert default_config("calculus_check").alpha == (0.25, 0.5, 1.0)


@pytest.mark.parametrize("text", [
    "levels = [3, 2]",
    "dim = 4",
    "bogus_key = 1",
    "theta = 2.0",
    "scheme = 'rk4'",
    "levels = [3, 4]\nreference_level = 4",
    "[noise]\nprofiles = ['tanh(2)']",
    "[noise]\nprofiles = ['sin(1)']\nextra = 1",
    "levels = [3, 4",
    "[noise]\nprofiles = ['sin(1)']\npsi_breaks = [0.5]\npsi_values = [1.0]",
])
def test_config_errors(tmp_path, text):
    with pytest.raises(ConfigurationError):
        load_config(_write(tmp_path, text), "converge")


def test_missing_file():
    with pytest.raises(ConfigurationError):
        load_config("/nonexistent/cfg.toml", "converge")


def test_scope_notes():
    cfg = default_config("converge", p=2.0, q=1.5, alpha=(0.6,))
    notes = cfg.scope_notes()
    assert len(notes) == 3
    assert default_config("converge").scope_notes() == []


def test_fmt_and_check():
    assert fmt(1 / 3) == "0.333333"
    assert fmt(True) == "yes" and fmt(None) == "-" and fmt(float("nan")) == "nan"
    assert fmt(7) == "7" and fmt(1 - 2j) == "1-2i"
    c = Check.window("x", 1.0, 0.5, 1.5)
    assert c.passed and c.describe() == "[0.5, 1.5]"
    assert not Check.window("x", math.nan, hi=1.0).passed
    assert not Check.window("x", 2.0, hi=1.0).passed
    assert Check.window("x", 2.0, lo=1.0).describe() == ">= 1"


def test_exit_code_precedence():
    r = ExperimentResult("converge", {}, [])
    assert r.exit_code == EXIT_OK
    r.checks.append(Check.window("a", 3.0, hi=1.0))
    assert r.exit_code == EXIT_MISSED
    r.inconclusive = True
    assert r.exit_code == EXIT_INCONCLUSIVE


def test_cli_configuration_error_exit(tmp_path, capsys):
    path = _write(tmp_path, "levels = [5, 4]")
    assert main(["converge", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["not_an_experiment"])


def test_cli_converge_outputs_and_determinism(tmp_path):
    path = _write(tmp_path, SMALL.format(extra=""))
    outs = []
    for k, threads in enumerate(("1", "2")):
        out = tmp_path / f"run{k}"
        code = main(["converge", "--config", path, "--out", str(out), "--threads", threads])
        assert code in (EXIT_OK, EXIT_MISSED, EXIT_INCONCLUSIVE)
        files = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())
        assert files == ["plots/converge.svg", "rates.csv", "report.md"]
        outs.append({f: (out / f).read_bytes() for f in files})
    assert outs[0] == outs[1]
    header = outs[0]["rates.csv"].decode().splitlines()[0]
    assert header == "level,h,error,stderr,norm_kind"
    report = outs[0]["report.md"].decode()
    assert "Parameter scope" in report and "All parameters lie in the range" in report


def test_report_scope_annotation(tmp_path):
    cfg = default_config("converge", levels=(2, 3, 4), reference_level=5, n_steps=16,
                         M_paths=4, p=2.0)
    files = write_outputs(run(cfg), tmp_path, plots=False)
    text = files["report.md"].decode()
    assert "p = 2.0 is outside (2, inf)" in text
    assert not (tmp_path / "plots").exists()


def test_inconclusive_with_few_paths():
    # a short horizon with two paths leaves the error estimates noisy
    cfg = default_config("converge", levels=(2, 3, 4), reference_level=5, T=0.01, n_steps=2,
                         M_paths=2)
    res = run(cfg)
    assert res.inconclusive and res.exit_code == EXIT_INCONCLUSIVE
    assert any("stderr" in f for f in res.flags)


def test_seed_changes_results():
    base = dict(levels=(2, 3, 4), reference_level=5, n_steps=16, M_paths=8)
    a = run(default_config("converge", seed=1, **base)).table("rates.csv").rows
    b = run(default_config("converge", seed=2, **base)).table("rates.csv").rows
    assert a != b


def test_oracle_corrupted_weight_fails():
    from smrlab.experiments import run_oracle
    res = run_oracle(default_config("oracle", M_paths=200), corrupt_contour=True)
    rows = {r[0]: r for r in res.table("oracle.csv").rows}
    cauchy = next(v for k, v in rows.items() if k.startswith("scalar Cauchy"))
    assert cauchy[3] == "FAIL" and res.exit_code == EXIT_MISSED


@pytest.mark.parametrize("name", ["converge_1d", "uniformity", "calculus_check", "smr", "oracle"])
def test_shipped_configs_match_defaults(name):
    import pathlib
    path = pathlib.Path(__file__).parents[1] / "scripts" / "configs" / f"{name}.toml"
    exp = name.replace("_1d", "")
    assert load_config(str(path)) == default_config(exp)


def test_shipped_2d_config():
    import pathlib
    path = pathlib.Path(__file__).parents[1] / "scripts" / "configs" / "converge_2d.toml"
    cfg = load_config(str(path))
    assert (cfg.dim, cfg.levels, cfg.reference_level, cfg.M_paths) == (2, (2, 3, 4, 5), 7, 32)
