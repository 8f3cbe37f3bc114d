"""Acceptance gate: one test per criterion, each printing a PASS line with
the measured figures (run with ``pytest -s`` to see them inline)."""

import json
import time

import numpy as np

from ternsim import arith, cli, lop, quant
from ternsim.boothflex import booth_matmul
from ternsim.cli import RunSpec, execute_run
from ternsim.model import LayerConfig, float_oracle_layer, generate_weights
from ternsim.quant import QuantVector
from ternsim.sched import SimConfig, Simulation
from ternsim.tint import ternary_matmul


def report(line: str) -> None:
    print(line)


# --------------------------------------------------------------------- AC-1

def test_ac1_exhaustive_booth_equivalence():
    t0 = time.time()
    grid = np.arange(-128, 128, dtype=np.int64)
    a, y = np.meshgrid(grid, grid, indexing="ij")
    prod, cycles = arith.booth_multiply(a, y, "int8")
    assert cycles == 5
    assert np.array_equal(prod, a * y)
    # spot-check the scalar path carries the same 5-cycle cost
    for aa, yy in ((-128, 127), (77, -13), (0, 0), (127, 127)):
        p, c = arith.booth_multiply(aa, yy, "int8")
        assert p == aa * yy and c == 5
    elapsed = time.time() - t0
    report(f"AC-1 PASS: 65536/65536 int8 Booth products exact, 5 cycles each "
           f"({elapsed:.2f}s)")


# --------------------------------------------------------------------- AC-2

def test_ac2_ternary_datapath_equivalence():
    rng = np.random.default_rng(21)
    ratio_checked = 0
    for i in range(1000):
        n, d, m = (int(v) for v in rng.integers(1, 65, size=3))
        acts = rng.integers(-127, 128, size=(n, d))
        w = rng.integers(-1, 2, size=(d, m))
        want = acts.astype(np.int64) @ w.astype(np.int64)

        acc_t, cyc_t = ternary_matmul(acts, arith.pack_ternary(w))
        assert np.array_equal(acc_t, want)

        acc_b, cyc_b = booth_matmul(acts, w, "ternary")
        assert np.array_equal(acc_b, want)

        if i % 10 == 0:
            _, cyc_i8 = booth_matmul(acts, w, "int8")
            assert cyc_i8 == 5 * cyc_b
            ratio_checked += 1
    report(f"AC-2 PASS: 1000 random ternary GEMMs exact on both cores; "
           f"int8/ternary cycle ratio 5x verified on {ratio_checked} instances")


# --------------------------------------------------------------------- AC-3

def test_ac3_kv_traffic_law():
    layer = LayerConfig(d_model=32, num_heads=2, d_head=16, d_ffn=32,
                        seq_capacity=1026, top_k=64, num_buckets=64, seed=6)
    weights = generate_weights(layer)
    rng = np.random.default_rng(6)
    fetched = {}
    for lop_on in (True, False):
        sim = Simulation(weights, SimConfig(layer=layer, lop=lop_on))
        for _ in range(1024):  # populate M = 1024 rows per head
            row = QuantVector(rng.integers(-127, 128, size=16).astype(np.int8), 1.0)
            sim.cache.append_token(0, 0, row, row)
            sim.cache.append_token(0, 1, row, row)
        res = sim.run_decode_step(rng.normal(size=32))
        assert res.info.tokens_at_gate == 1024
        fetched[lop_on] = res.info.kv_fetch_bytes
    assert fetched[True] * 16 == fetched[False]
    report(f"AC-3 PASS: per-step KV bytes {fetched[True]} (gated) vs "
           f"{fetched[False]} (full): ratio exactly 1/16 at M=1024, K=64 "
           f"(reduction factor M/K = {fetched[False] / fetched[True]:.2f}x)")


# --------------------------------------------------------------------- AC-4

def test_ac4_selector_oracle_equivalence():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        m = int(rng.integers(1, 200))
        scores = rng.integers(-400, 401, size=m)
        k = int(rng.integers(1, m + 1))
        # per-score resolution: every integer score gets its own bucket
        sel = lop.select_top_k(scores, k, num_buckets=2 * 401, score_bound=401)
        want = np.sort(np.sort(scores)[::-1][:k])
        assert np.array_equal(np.sort(scores[sel.kept]), want)
        assert sel.kept.size == min(k, m)

    dominated = 0
    for _ in range(1000):
        m = int(rng.integers(2, 200))
        bound = 1 << 14
        scores = rng.integers(-bound, bound + 1, size=m)
        k = int(rng.integers(1, m + 1))
        sel = lop.select_top_k(scores, k, num_buckets=64, score_bound=bound)
        kept_mask = np.zeros(m, bool)
        kept_mask[sel.kept] = True
        width = 2 * bound / 64
        if (~kept_mask).any():
            assert scores[kept_mask].min() >= scores[~kept_mask].max() - width
            dominated += 1
    report(f"AC-4 PASS: 1000 selections match the sort oracle at per-score "
           f"resolution; bucket dominance held on {dominated} B=64 instances")


# --------------------------------------------------------------------- AC-5

def test_ac5_end_to_end_numeric_fidelity():
    # default desk configuration; kept set forced to every cached token.
    # Error budget is absmax-int8 roundtrip noise through six barriers;
    # the 0.05 design ceiling is tightened to 0.045 against the measured
    # worst case of ~0.040 on this fixed seed.
    layer = LayerConfig(seq_capacity=128)
    weights = generate_weights(layer)
    sim = Simulation(weights, SimConfig(layer=layer, lop=False))
    rng = np.random.default_rng(42)
    xs = rng.normal(size=(100, layer.d_model))
    pre = sim.run_prefill(xs)
    ref = float_oracle_layer(xs, weights, layer)
    rel = np.linalg.norm(pre.outputs - ref, axis=1) / np.linalg.norm(ref, axis=1)
    assert rel.max() <= 0.045
    report(f"AC-5 PASS: integer pipeline vs float oracle over 100 inputs: "
           f"rel L2 max {rel.max():.4f}, mean {rel.mean():.4f} (budget 0.045)")


# --------------------------------------------------------------------- AC-6

def test_ac6_surrogate_quality_floor():
    rng = np.random.default_rng(2024)
    d, m, k, trials = 64, 256, 32, 100
    baseline = k / m
    recalls = []
    for _ in range(trials):
        q = np.clip(np.round(rng.normal(scale=40, size=d)), -127, 127).astype(np.int64)
        keys = np.clip(np.round(rng.normal(scale=40, size=(m, d))), -127, 127).astype(np.int64)
        sel = lop.lop_gate(QuantVector(q.astype(np.int8), 1.0),
                           lop.extract_features(keys), k=k)
        exact = np.argsort(-(keys @ q), kind="stable")[:k]
        recalls.append(len(set(exact.tolist()) & set(sel.kept.tolist())) / k)
    mean_recall = float(np.mean(recalls))
    assert mean_recall > 3 * baseline
    report(f"AC-6 PASS: mean gated recall {mean_recall:.3f} over {trials} trials "
           f"vs random baseline {baseline:.3f} ({mean_recall / baseline:.1f}x)")


# --------------------------------------------------------------------- AC-7

def test_ac7_scheduling_dominance():
    spec = RunSpec(seq_len=8, decode_steps=3, seed=17)
    all_on, _, _ = execute_run(spec)
    from dataclasses import replace

    no_hlp, _, _ = execute_run(replace(spec, hlp=False))
    no_dual, _, _ = execute_run(replace(spec, dual_mode=False))
    all_off, _, _ = execute_run(replace(spec, lop=False, hlp=False, dual_mode=False))

    assert all_on.total_cycles < no_hlp.total_cycles
    assert all_on.boothflex_util > no_dual.boothflex_util
    assert all_on.total_cycles < all_off.total_cycles

    mha_gain = 100 * (no_hlp.mha_cycles / all_on.mha_cycles - 1)
    ffn_gain = 100 * (no_dual.ffn_cycles / all_on.ffn_cycles - 1)
    overall_gain = 100 * (all_off.measured_cycles / all_on.measured_cycles - 1)
    report(f"AC-7 PASS: head pipelining cuts MHA by {mha_gain:.1f}%, dual mode "
           f"cuts FFN by {ffn_gain:.1f}%, all-on beats all-off by "
           f"{overall_gain:.1f}% overall; BoothFlex utilization "
           f"{no_dual.boothflex_util:.3f} -> {all_on.boothflex_util:.3f}")


# --------------------------------------------------------------------- AC-8

def test_ac8_determinism_and_trace_consistency(tmp_path):
    args = ["run", "--dmodel", "64", "--heads", "2", "--dffn", "72", "--topk", "8",
            "--buckets", "32", "--seq-len", "6", "--decode-steps", "2", "--seed", "33"]
    blobs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{tag}.csv"
        trace = tmp_path / f"{tag}.jsonl"
        rc = cli.main([*args, "--out", str(out), "--trace", str(trace)])
        assert rc == 0
        blobs.append((out.read_bytes(), trace.read_bytes()))
    assert blobs[0] == blobs[1]

    # spot-recompute the CSV projection from the trace
    events = [json.loads(line) for line in blobs[0][1].decode().splitlines()]
    makespan = max(e["cycle_end"] for e in events)
    row = blobs[0][0].decode().splitlines()[1].split(",")
    assert int(row[5]) == makespan
    kv = sum(e["bytes"] for e in events if e["kind"] == "kvFetch")
    rms_starts = sorted(e["cycle_start"] for e in events if e["kind"] == "rmsnorm")
    decode_start = rms_starts[2 * 6]  # first decode step opens window 7 of 8
    assert int(row[9]) == sum(e["bytes"] for e in events
                              if e["kind"] == "kvFetch" and e["cycle_start"] >= decode_start)
    assert kv >= int(row[9])
    report("AC-8 PASS: identical seeds give byte-identical CSV and JSONL; "
           "CSV figures recomputed from the trace")


# --------------------------------------------------------------------- AC-9

def test_ac9_quant_barrier_numerics():
    rng = np.random.default_rng(9)
    worst_soft = worst_rms = 0.0
    for i in range(10000):
        n = int(rng.integers(1, 96))
        x = rng.normal(scale=4.0, size=n)
        if i % 5 == 0:
            x[rng.integers(0, n)] = 700.0 + float(rng.integers(0, 200))
        got = quant.streaming_softmax(x)
        ref = np.exp(x - x.max())
        ref /= ref.sum()
        mask = ref > 0
        worst_soft = max(worst_soft, float(np.max(np.abs(got - ref)[mask] / ref[mask],
                                                  initial=0.0)))
        assert np.isclose(got, ref, rtol=1e-6, atol=0).all()

        gain = rng.normal(size=n)
        got_n = quant.streaming_rms_norm(x, gain)
        ref_n = gain * x / np.sqrt(np.mean(x * x) + 1e-6)
        assert np.isclose(got_n, ref_n, rtol=1e-6, atol=1e-12).all()
        denom = np.maximum(np.abs(ref_n), 1e-12)
        worst_rms = max(worst_rms, float(np.max(np.abs(got_n - ref_n) / denom)))

    # absmax roundtrip, exhaustively over all INT8 code points
    codes = np.arange(-127, 128, dtype=np.float64)
    for scale in (1.0, 0.5, 4.0):  # exact binary scales: recovery is exact
        q = quant.absmax_quantize(codes * scale)
        assert np.array_equal(q.data, codes.astype(np.int8))
        assert np.abs(q.dequantize() - codes * scale).max() == 0.0
    for scale in (0.037, 3.7, 129.4):
        q = quant.absmax_quantize(codes * scale)
        err = np.abs(q.dequantize() - codes * scale).max()
        assert err <= q.scale / 2 * (1 + 1e-9)
    report(f"AC-9 PASS: 10000 streaming reductions within 1e-6 of two-pass "
           f"(worst softmax {worst_soft:.2e}, rmsnorm {worst_rms:.2e}); absmax "
           f"roundtrip half-step bound holds over all INT8 code points")
