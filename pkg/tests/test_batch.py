import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rugscan.batch import METRIC_KINDS, Counts, Manifest, TargetResult, run_batch, score, write_reports
from rugscan.errors import InvalidInputError
from support.fixtures import CORPUS_MANIFEST, HEX_DIR


def _manifest(entries, tmp_path=None):
    return Manifest.from_data(entries, str(HEX_DIR))


def test_list_and_object_forms():
    entries = [{"target": "hidden_mint.hex", "expected": ["HiddenMint"]}]
    as_list = Manifest.from_data(entries, str(HEX_DIR), "x")
    as_obj = Manifest.from_data({"name": "x", "entries": entries}, str(HEX_DIR))
    assert as_list == as_obj
    assert as_list.entries[0].target == str(HEX_DIR / "hidden_mint.hex")


def test_address_targets_are_kept_verbatim():
    addr = "0x" + "12" * 20
    (entry,) = Manifest.from_data([{"target": addr, "rpc_url": "http://node"}]).entries
    assert entry.is_address and entry.target == addr and entry.rpc_url == "http://node"


@pytest.mark.parametrize(
    "bad",
    [{"entries": 3}, [{"expected": []}], [{"target": "a.hex", "expected": ["RugPull"]}], "nope"],
)
def test_malformed_manifests_are_rejected(bad):
    with pytest.raises(InvalidInputError):
        Manifest.from_data(bad)


def test_load_resolves_relative_to_manifest(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps([{"target": "sub/a.hex"}]))
    m = Manifest.load(str(path))
    assert m.name == "m" and m.entries[0].target == str(tmp_path / "sub" / "a.hex")
    with pytest.raises(InvalidInputError):
        Manifest.load(str(tmp_path / "missing.json"))


def test_counts_with_nothing_are_undefined():
    c = Counts()
    assert (c.precision, c.recall, c.f1) == (None, None, None)
    assert Counts(tp=0, fp=2, fn=1).f1 is None


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f1_is_harmonic_mean(tp, fp, fn):
    c = Counts(tp, fp, fn)
    if tp == 0:
        assert c.f1 is None
        return
    p, r = tp / (tp + fp), tp / (tp + fn)
    assert c.f1 == pytest.approx(2 * p * r / (p + r))
    assert c.f1 == pytest.approx(2 * tp / (2 * tp + fp + fn))


def test_score_counts_per_contract():
    results = [
        TargetResult("a", frozenset({"HiddenMint"}), frozenset({"HiddenMint"})),
        TargetResult("b", frozenset(), frozenset({"HiddenMint", "ProxyRisk"})),
        TargetResult("c", frozenset({"LeakingTokenFee"}), frozenset()),
        TargetResult("d", frozenset({"LimitingSellOrder"}), error="boom", error_code="rpc"),
    ]
    per_kind, overall = score(results)
    assert set(per_kind) == set(METRIC_KINDS) and "ProxyRisk" not in per_kind
    assert per_kind["HiddenMint"] == Counts(1, 1, 0)
    assert per_kind["LeakingTokenFee"] == Counts(0, 0, 1)
    assert per_kind["LimitingSellOrder"] == Counts(0, 0, 1)
    assert overall == Counts(1, 1, 2)


def test_perfect_run_over_pattern_fixtures():
    m = _manifest(
        [
            {"target": "hidden_mint.hex", "expected": ["HiddenMint"]},
            {"target": "leak_token.hex", "expected": ["LeakingTokenDirect"]},
            {"target": "erc20_minimal.hex", "expected": []},
        ]
    )
    result = run_batch(m, jobs=1)
    assert result.overall == Counts(2, 0, 0)
    assert result.overall.precision == result.overall.recall == result.overall.f1 == 1.0


def test_mislabelled_entry_lowers_precision():
    m = _manifest(
        [
            {"target": "hidden_mint.hex", "expected": ["HiddenMint"]},
            {"target": "fee_modification.hex", "expected": ["LeakingTokenFee"]},
            {"target": "freeze_account.hex", "expected": []},
        ]
    )
    result = run_batch(m, jobs=1)
    assert result.overall == Counts(2, 1, 0)
    assert result.overall.precision == pytest.approx(2 / 3)
    assert "mismatch" in result.to_text()


def test_failures_are_recorded_not_fatal():
    m = _manifest(
        [
            {"target": "does_not_exist.hex", "expected": ["HiddenMint"]},
            {"target": "hidden_mint.hex", "expected": ["HiddenMint"]},
        ]
    )
    result = run_batch(m, jobs=1)
    (failed,) = result.failures
    assert failed.error_code == "invalid_input"
    assert result.overall == Counts(1, 0, 1)
    assert "failed   " in result.to_text()


def test_proxy_risk_does_not_count():
    result = run_batch(_manifest([{"target": "proxy_eip1967.hex", "expected": []}]), jobs=1)
    assert result.results[0].predicted == frozenset()
    assert result.results[0].report["findings"][0]["kind"] == "ProxyRisk"
    assert result.overall == Counts()


def test_parallel_run_matches_serial_and_writes_reports(tmp_path):
    m = Manifest.load(str(CORPUS_MANIFEST))
    m.entries = m.entries[:6]
    serial = run_batch(m, jobs=1)
    parallel = run_batch(m, jobs=3)
    assert serial.to_json() == parallel.to_json()
    paths = write_reports(parallel, str(tmp_path))
    assert len(paths) == 6 and paths[0].endswith("000_" + m.entries[0].target.rsplit("/", 1)[1][:-4] + ".json")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["targets"] == 6 and summary["failed"] == 0
