import json

import pytest

from rugscan import __version__
from rugscan.cli import EXIT_CLEAN, EXIT_ERROR, EXIT_FINDINGS, main
from support.fixtures import HEX_DIR, hex_path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_exit_codes(capsys):
    assert run(capsys, "analyze", str(hex_path("erc20_minimal")))[0] == EXIT_CLEAN
    code, out, _ = run(capsys, "analyze", str(hex_path("hidden_mint")))
    assert code == EXIT_FINDINGS
    assert json.loads(out)["findings"][0]["kind"] == "HiddenMint"
    code, out, err = run(capsys, "analyze", "/nonexistent/contract.hex")
    assert code == EXIT_ERROR and out == ""
    assert err.startswith("rugscan: error [invalid_input]:")


def test_medium_findings_exit_clean(capsys):
    assert run(capsys, "analyze", str(hex_path("proxy_eip1967")))[0] == EXIT_CLEAN


def test_text_format(capsys):
    code, out, _ = run(capsys, "analyze", str(hex_path("leak_token")), "--format", "text")
    assert code == EXIT_FINDINGS and "[high] LeakingTokenDirect" in out


def test_invalid_hex_file(capsys, tmp_path):
    bad = tmp_path / "bad.hex"
    bad.write_text("0x60zz")
    code, _, err = run(capsys, "analyze", str(bad))
    assert code == EXIT_ERROR and "[invalid_input]" in err


def test_address_without_endpoint(capsys, monkeypatch):
    monkeypatch.delenv("RUGSCAN_RPC_URL", raising=False)
    code, _, err = run(capsys, "analyze", "0x" + "11" * 20, "--no-cache")
    assert code == EXIT_ERROR and "[rpc_error]" in err


def test_dump_cfg_goes_to_stderr(capsys):
    code, out, err = run(capsys, "analyze", str(hex_path("hidden_mint")), "--dump-cfg")
    assert code == EXIT_FINDINGS
    assert "block@0x0000 -> " in err and "[branch_true]" in err
    assert json.loads(out)["findings"]


def test_dump_facts(capsys, tmp_path):
    run(capsys, "analyze", str(hex_path("hidden_mint")), "--dump-facts", str(tmp_path))
    base = {p.name for p in (tmp_path / "base").iterdir()}
    derived = {p.name for p in (tmp_path / "derived").iterdir()}
    assert "StoreToStorage.tsv" in base and "HiddenMint.tsv" in derived
    assert not base & derived
    assert (tmp_path / "derived" / "HiddenMint.tsv").read_text().startswith("0x40c10f19")


def test_config_file_changes_results(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fee_divisors": [1000]}))
    assert run(capsys, "analyze", str(hex_path("fee_modification")))[0] == EXIT_FINDINGS
    assert run(capsys, "analyze", str(hex_path("fee_modification")), "--config", str(cfg))[0] == EXIT_CLEAN
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, err = run(capsys, "analyze", str(hex_path("fee_modification")), "--config", str(cfg))
    assert code == EXIT_ERROR and "[config_error]" in err


def test_batch_command(capsys, tmp_path):
    manifest = tmp_path / "m.json"
    manifest.write_text(
        json.dumps(
            [
                {"target": str(HEX_DIR / "hidden_mint.hex"), "expected": ["HiddenMint"]},
                {"target": str(HEX_DIR / "erc20_minimal.hex"), "expected": []},
            ]
        )
    )
    out_dir = tmp_path / "out"
    code, out, _ = run(capsys, "batch", str(manifest), "--jobs", "1", "--out", str(out_dir))
    assert code == EXIT_CLEAN
    assert json.loads(out)["overall"]["f1"] == 1.0
    assert sorted(p.name for p in out_dir.iterdir()) == [
        "000_hidden_mint.json",
        "001_erc20_minimal.json",
        "summary.json",
    ]
    code, out, _ = run(capsys, "batch", str(manifest), "--jobs", "1", "--format", "text")
    assert code == EXIT_CLEAN and out.startswith("corpus m: 2 targets, 0 failed")


def test_batch_with_failed_target_exits_one(capsys, tmp_path):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps([{"target": "missing.hex", "expected": []}]))
    assert run(capsys, "batch", str(manifest), "--jobs", "1")[0] == EXIT_ERROR


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out
