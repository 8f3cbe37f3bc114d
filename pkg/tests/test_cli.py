import json

import pytest

from ternsim import cli, model
from ternsim.cli import CSV_HEADER, RunSpec, execute_run
from ternsim.sched import SimulationInvariantError

TINY = ["--dmodel", "32", "--heads", "2", "--dffn", "40", "--topk", "4",
        "--buckets", "16", "--seq-len", "6", "--decode-steps", "2", "--seed", "3"]


def read_lines(path):
    return path.read_text().splitlines()


def test_run_writes_csv_and_trace(tmp_path, capsys):
    out = tmp_path / "run.csv"
    trace = tmp_path / "run.jsonl"
    rc = cli.main(["run", *TINY, "--out", str(out), "--trace", str(trace)])
    assert rc == 0
    lines = read_lines(out)
    assert lines[0] == CSV_HEADER
    assert len(lines) == 2
    first = json.loads(read_lines(trace)[0])
    assert list(first) == ["cycle_start", "cycle_end", "core", "kind", "head", "bytes", "mode"]


def test_run_json_output(capsys):
    rc = cli.main(["run", *TINY, "--json"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["tokens_simulated"] == 8
    assert report["total_cycles"] > 0
    assert report["kv_reduction"] == 1.0  # a lone run is its own baseline


def test_decode_steps_zero_is_prefill_only():
    spec = RunSpec(d_model=32, num_heads=2, d_ffn=40, top_k=4, num_buckets=16,
                   seq_len=5, decode_steps=0, seed=1)
    report, _sim, _trace = execute_run(spec)
    assert report.tokens_simulated == 5
    assert report.m_tokens == 0  # first prefill step gates an empty cache


def test_identical_invocations_are_byte_identical(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{tag}.csv"
        trace = tmp_path / f"{tag}.jsonl"
        assert cli.main(["run", *TINY, "--out", str(out), "--trace", str(trace)]) == 0
        outs.append((out.read_bytes(), trace.read_bytes()))
    assert outs[0] == outs[1]


def test_ablate_grid(tmp_path):
    out = tmp_path / "grid.csv"
    rc = cli.main(["ablate", *TINY, "--out", str(out)])
    assert rc == 0
    lines = read_lines(out)
    assert lines[0] == CSV_HEADER
    assert len(lines) == 9  # 2^3 grid
    baseline = lines[1].split(",")
    assert baseline[:3] == ["off", "off", "off"]
    assert float(baseline[11]) == 1.0  # self-ratio
    # two decode steps gate M=6 then M=7 tokens against top-4 fetches,
    # so the aggregate byte ratio is (6+7)/(4+4)
    for row in lines[1:]:
        cells = row.split(",")
        if cells[0] == "on":
            assert float(cells[11]) == pytest.approx(13 / 8)


def test_ablate_kv_reduction_matches_m_over_k(tmp_path):
    out = tmp_path / "grid.csv"
    args = ["ablate", "--dmodel", "32", "--heads", "2", "--dffn", "40",
            "--topk", "4", "--buckets", "16", "--seq-len", "32",
            "--decode-steps", "1", "--seed", "5", "--out", str(out)]
    assert cli.main(args) == 0
    for row in read_lines(out)[1:]:
        cells = row.split(",")
        if cells[0] == "on":
            assert float(cells[11]) == pytest.approx(32 / 4)
            assert int(cells[3]) == 32 and int(cells[4]) == 4


def test_config_file_with_flag_override(tmp_path):
    cfg = {"d_model": 32, "num_heads": 2, "d_ffn": 40, "top_k": 4,
           "num_buckets": 16, "seq_len": 4, "decode_steps": 1, "seed": 2}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "o.csv"
    rc = cli.main(["run", "--config", str(path), "--seq-len", "7", "--out", str(out)])
    assert rc == 0
    row = read_lines(out)[1].split(",")
    assert int(row[3]) == 7  # flag overrode the file's seq_len


def test_unknown_config_key_exits_one(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"dmodel": 32}))
    assert cli.main(["run", "--config", str(path)]) == 1


def test_invalid_geometry_exits_one():
    assert cli.main(["run", "--dmodel", "30", "--heads", "4"]) == 1


def test_internal_invariant_violation_exits_two(monkeypatch):
    def boom(_spec):
        raise SimulationInvariantError("synthetic")

    monkeypatch.setattr(cli, "execute_run", boom)
    assert cli.main(["run", *TINY]) == 2


def test_gen_weights_roundtrip(tmp_path):
    out = tmp_path / "w"
    rc = cli.main(["gen-weights", "--dmodel", "32", "--heads", "2", "--dffn", "40",
                   "--seed", "4", "--out", str(out)])
    assert rc == 0
    weights = model.load_layer_weights(out)
    assert weights.wq.shape == (32, 32)
    # a run can consume the generated directory through the config file
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "d_model": 32, "num_heads": 2, "d_ffn": 40, "top_k": 4,
        "num_buckets": 16, "seq_len": 4, "decode_steps": 1,
        "weights_dir": str(out),
    }))
    assert cli.main(["run", "--config", str(cfg)]) == 0


def test_freq_flag_reports_tokens_per_second(capsys):
    rc = cli.main(["run", *TINY, "--freq-ghz", "1.0", "--json"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["tokens_per_second"] == pytest.approx(
        1e9 / report["cycles_per_token"]
    )


def test_csv_recomputable_from_trace(tmp_path):
    # the trace is the source of truth: recompute every derived CSV figure
    # from the emitted JSONL (plus the M/K config echoes)
    out = tmp_path / "grid.csv"
    trace_base = tmp_path / "t.jsonl"
    args = ["ablate", *TINY, "--out", str(out), "--trace", str(trace_base)]
    assert cli.main(args) == 0
    rows = read_lines(out)[1:]
    header = CSV_HEADER.split(",")

    def load_trace(tag):
        path = tmp_path / f"t.{tag}.jsonl"
        return [json.loads(line) for line in read_lines(path)]

    def windows(events):
        rms = sorted((e for e in events if e["kind"] == "rmsnorm"),
                     key=lambda e: e["cycle_start"])
        starts = [rms[i]["cycle_start"] for i in range(0, len(rms), 2)]
        makespan = max(e["cycle_end"] for e in events)
        return list(zip(starts, starts[1:] + [makespan]))

    def derive(events, n_decode):
        win = windows(events)
        measured = win[-n_decode:] if n_decode else win
        ffn_kinds = {"woProj", "ffnUp", "ffnGate", "ffnDown"}
        mha = ffn = kv = feats = 0
        for lo, hi in measured:
            inside = [e for e in events if lo <= e["cycle_start"] < hi]
            starts = [e["cycle_start"] for e in inside if e["kind"] in ffn_kinds]
            boundary = min(starts) if starts else hi
            mha += boundary - lo
            ffn += hi - boundary
            kv += sum(e["bytes"] for e in inside if e["kind"] == "kvFetch")
            feats += sum(e["bytes"] for e in inside if e["kind"] == "lopGate")
        makespan = max(e["cycle_end"] for e in events)
        busy = {}
        for e in events:
            busy[e["core"]] = busy.get(e["core"], 0) + e["cycle_end"] - e["cycle_start"]
        tint_busy = sum(v for k, v in busy.items() if k.startswith("TINT-"))
        n_tint = sum(1 for k in busy if k.startswith("TINT-"))
        span_measured = sum(hi - lo for lo, hi in measured)
        return {
            "cycles_total": makespan,
            "cycles_per_token": span_measured / len(measured),
            "tint_util": tint_busy / (n_tint * makespan),
            "boothflex_util": busy.get("BoothFlex", 0) / makespan,
            "bytes_kv": kv,
            "bytes_features": feats,
            "mha": mha, "ffn": ffn, "span": span_measured,
        }

    derived = {}
    for row in rows:
        cells = dict(zip(header, row.split(",")))
        tag = f"lop{int(cells['lop'] == 'on')}_hlp{int(cells['hlp'] == 'on')}_dm{int(cells['dual_mode'] == 'on')}"
        derived[tag] = (cells, derive(load_trace(tag), n_decode=2))

    base = derived["lop0_hlp0_dm0"][1]
    for tag, (cells, d) in derived.items():
        assert int(cells["cycles_total"]) == d["cycles_total"]
        assert float(cells["cycles_per_token"]) == pytest.approx(d["cycles_per_token"], rel=1e-5)
        assert float(cells["tint_util"]) == pytest.approx(d["tint_util"], rel=1e-5)
        assert float(cells["boothflex_util"]) == pytest.approx(d["boothflex_util"], rel=1e-5)
        assert int(cells["bytes_kv"]) == d["bytes_kv"]
        assert int(cells["bytes_features"]) == d["bytes_features"]
        assert float(cells["kv_reduction"]) == pytest.approx(base["bytes_kv"] / d["bytes_kv"], rel=1e-5)
        assert float(cells["mha_speedup"]) == pytest.approx(base["mha"] / d["mha"], rel=1e-5)
        assert float(cells["ffn_speedup"]) == pytest.approx(base["ffn"] / d["ffn"], rel=1e-5)
        assert float(cells["overall_speedup"]) == pytest.approx(base["span"] / d["span"], rel=1e-5)


def test_verify_subcommand_passes(capsys):
    assert cli.main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "all 9 checks passed" in out
