import json

import pytest
from click.testing import CliRunner
from conftest import SMALL_DIMS

from components.container import load_container
from components.model import generate, load_weights, save_weights
from rotation_bitsback import cli

SMALL_FLAGS = ["--layers", "2", "--hidden", "8", "--ffn", "16", "--vocab", "32"]


def run(*args):
    return CliRunner().invoke(cli, list(args), obj={})


def value_of(output: str, key: str) -> str:
    for line in output.splitlines():
        if line.startswith(f"{key}="):
            return line.split("=", 1)[1]
    raise AssertionError(f"{key} not in output")


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    paths = {name: str(root / name) for name in ("m.swc", "c.swc", "m.sbb", "d.swc")}
    gen = run("gen", *SMALL_FLAGS, "--seq", "8", "--seed", "4", "--out", paths["m.swc"])
    assert gen.exit_code == 0
    assert run("canon", paths["m.swc"], paths["c.swc"]).exit_code == 0
    assert run("encode", paths["m.swc"], paths["m.sbb"]).exit_code == 0
    assert run("decode", paths["m.sbb"], paths["d.swc"]).exit_code == 0
    return paths


def test_gen_writes_the_model(tmp_path):
    out = tmp_path / "g.swc"
    result = run("gen", *SMALL_FLAGS, "--seq", "8", "--out", str(out))
    assert result.exit_code == 0
    assert int(value_of(result.output, "parameters")) == SMALL_DIMS.parameter_count
    assert load_weights(out).dims == SMALL_DIMS


def test_canon_reports_spectra(tmp_path, files):
    result = run("canon", files["m.swc"], str(tmp_path / "again.swc"))
    assert result.exit_code == 0
    assert "degenerate_sites=" in result.output


def test_encode_reports_codelengths(tmp_path, files):
    result = run("encode", files["m.swc"], str(tmp_path / "x.sbb"), "--remaining-rate", "0.75")
    assert result.exit_code == 0
    naive = int(value_of(result.output, "naive_bits"))
    assert naive == 16 * SMALL_DIMS.parameter_count
    assert float(value_of(result.output, "predicted_ratio_headless")) > 0.0


def test_decoded_model_verifies(files):
    result = run("verify", files["c.swc"], files["d.swc"])
    assert result.exit_code == 0
    assert value_of(result.output, "result") == "PASS"


def test_verify_accepts_a_container(files):
    result = run("verify", files["c.swc"], files["m.sbb"])
    assert result.exit_code == 0


def test_verify_fails_against_the_uncanonical_model(files):
    result = run("verify", files["m.swc"], files["d.swc"])
    assert result.exit_code == 1
    assert value_of(result.output, "weights") == "FAIL"
    assert value_of(result.output, "logits") == "PASS"


def test_stats_histogram(files):
    result = run("stats", files["c.swc"], files["d.swc"], "--bins", "5")
    assert result.exit_code == 0
    lines = result.output.splitlines()
    assert lines[0] == "bin_low bin_high count cdf"
    assert len(lines) >= 1 + 5 + 1


def test_stats_sweep(files):
    result = run("stats", files["m.swc"], "--sweep", "--threshold", "0.01", "--threshold", "0.02")
    assert result.exit_code == 0
    lines = result.output.splitlines()
    assert lines[0].startswith("threshold ")
    assert [line.split()[0] for line in lines[1:]] == ["0.01", "0.02"]


def test_stats_stream_sweep(files):
    result = run("stats", files["m.swc"], "--sweep", "--sweep-parameter", "tau_stream")
    assert result.exit_code == 0
    lines = result.output.splitlines()
    assert lines[0].split()[-2:] == ["saved_bits", "saved_ratio"]
    assert len(lines) == 5


def test_stats_needs_a_target_or_sweep(files):
    assert run("stats", files["c.swc"]).exit_code == 2


def test_account_table():
    result = run("account", "--hidden", "512", "--lambda-width", "16", "--rate", "0.75")
    assert result.exit_code == 0
    rows = dict(
        line.split() for line in result.output.splitlines() if line and line[0].isdigit()
    )
    assert float(rows["0.75"]) == pytest.approx(0.0998, abs=1e-4)


def test_preset_sets_the_weight_threshold(tmp_path, files):
    out = tmp_path / "llama.sbb"
    assert run("--preset", "llama", "encode", files["m.swc"], str(out)).exit_code == 0
    assert load_container(out).config.tau_weights == 0.005


def test_config_file(tmp_path, files):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"codec": {"lambda_width": 16}}))
    out = tmp_path / "narrow.sbb"
    assert run("--config", str(config), "encode", files["m.swc"], str(out)).exit_code == 0
    assert load_container(out).config.lambda_width == 16


@pytest.mark.parametrize(
    "content",
    ["{not json", json.dumps([1, 2]), json.dumps({"model": {"hidden": 1}})],
)
def test_bad_config_exits_2(tmp_path, content):
    config = tmp_path / "config.json"
    config.write_text(content)
    assert run("--config", str(config), "account").exit_code == 2


def test_missing_config_exits_2(tmp_path):
    assert run("--config", str(tmp_path / "absent.json"), "account").exit_code == 2


def test_bad_input_file_exits_2(files, tmp_path):
    assert run("decode", files["m.swc"], str(tmp_path / "x.swc")).exit_code == 2
    assert run("canon", str(tmp_path / "absent.swc"), str(tmp_path / "x.swc")).exit_code == 2


def test_numerical_failure_exits_3(tmp_path):
    model = generate(SMALL_DIMS, seed=2)
    w_o = model.blocks[0].w_o.copy()
    w_o[:, 1] = w_o[:, 0]
    path = tmp_path / "deficient.swc"
    save_weights(model.replace_block(0, w_o=w_o), path)
    assert run("canon", str(path), str(tmp_path / "out.swc")).exit_code == 3


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.swc", tmp_path / "b.swc"
    for out in (a, b):
        assert run("gen", *SMALL_FLAGS, "--seed", "3", "--out", str(out)).exit_code == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_accepts_minimal_width(tmp_path):
    out = tmp_path / "tiny.swc"
    assert run("gen", "--layers", "1", "--hidden", "2", "--out", str(out)).exit_code == 0
    assert load_weights(out).dims.hidden == 2


def test_canon_twice_is_a_near_no_op(tmp_path, files):
    again = tmp_path / "again.swc"
    assert run("canon", files["c.swc"], str(again)).exit_code == 0
    result = run("verify", files["c.swc"], str(again), "--tau", "0.05")
    assert value_of(result.output, "weights") == "PASS"


def test_canonical_model_is_equivalent(files):
    result = run("verify", files["m.swc"], files["c.swc"])
    assert value_of(result.output, "weights") == "FAIL"
    assert value_of(result.output, "logits") == "PASS"


def test_zero_error_pair_fills_one_bin(files):
    result = run("stats", files["c.swc"], files["c.swc"], "--bins", "4")
    rows = [line.split() for line in result.output.splitlines()[1:5]]
    counts = [int(row[2]) for row in rows]
    assert counts[0] == SMALL_DIMS.parameter_count
    assert counts[1:] == [0, 0, 0]
    assert float(rows[-1][3]) == 1.0
