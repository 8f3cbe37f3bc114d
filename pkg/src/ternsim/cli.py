"""Runner and ablation harness.

Subcommands: ``run`` (one configuration), ``ablate`` (the 2^3 toggle grid with
ratios against the all-off baseline), ``verify`` (the built-in invariant
suite) and ``gen-weights``. The emitted JSONL trace is the source of truth;
the CSV is a projection of it, and every derived figure is recomputable from
the trace plus the config echo columns.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import arith, lop, model, quant, sched
from .memsys import CreditAccountingError
from .model import LayerConfig, LayerWeights
from .sched import ScheduleTrace, SimConfig, Simulation, SimulationInvariantError

CSV_HEADER = (
    "lop,hlp,dual_mode,M,K,cycles_total,cycles_per_token,tint_util,boothflex_util,"
    "bytes_kv,bytes_features,kv_reduction,mha_speedup,ffn_speedup,overall_speedup"
)


@dataclass
class RunSpec:
    """One simulator invocation; JSON config file keys use these names."""

    d_model: int = 256
    num_heads: int = 4
    d_ffn: int = 688
    top_k: int = 32
    num_buckets: int = 64
    seq_len: int = 64
    decode_steps: int = 1
    seed: int = 0
    lop: bool = True
    hlp: bool = True
    dual_mode: bool = True
    selection_mode: str = "topk"
    score_threshold: int = 0
    lop_features: str = "onchip"
    weights_dir: str | None = None
    zero_fraction: float = 1.0 / 3.0
    freq_ghz: float | None = None
    credit_depth: int = 2
    port_a_bandwidth: int = 64
    port_b_bandwidth: int = 64
    nonlinear_cycles_per_element: int = 1
    lop_gate_cycles: int = 1
    barrier_cycles: int = 1
    scale_bytes: int = 4
    tile_setup_cycles: int = 0

    def __post_init__(self):
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if self.decode_steps < 0:
            raise ValueError("decode_steps must be >= 0")
        if self.num_heads < 1 or self.d_model % self.num_heads:
            raise ValueError("d_model must be a positive multiple of num_heads")
        if self.lop_features not in ("onchip", "offchip"):
            raise ValueError("lop_features must be onchip or offchip")

    def layer_config(self) -> LayerConfig:
        return LayerConfig(
            d_model=self.d_model,
            num_heads=self.num_heads,
            d_head=self.d_model // self.num_heads,
            d_ffn=self.d_ffn,
            seq_capacity=self.seq_len + self.decode_steps,
            top_k=self.top_k,
            num_buckets=self.num_buckets,
            seed=self.seed,
        )

    def sim_config(self) -> SimConfig:
        return SimConfig(
            layer=self.layer_config(),
            lop=self.lop,
            hlp=self.hlp,
            dual_mode=self.dual_mode,
            selection_mode=self.selection_mode,
            score_threshold=self.score_threshold,
            credit_depth=self.credit_depth,
            port_a_bandwidth=self.port_a_bandwidth,
            port_b_bandwidth=self.port_b_bandwidth,
            nonlinear_cycles_per_element=self.nonlinear_cycles_per_element,
            lop_gate_cycles=self.lop_gate_cycles,
            barrier_cycles=self.barrier_cycles,
            scale_bytes=self.scale_bytes,
            tile_setup_cycles=self.tile_setup_cycles,
            lop_features_offchip=self.lop_features == "offchip",
        )


@dataclass
class RunReport:
    """Everything one grid point contributes to the CSV and JSON outputs.

    The speedup and reduction ratios compare against a baseline report from
    the same invocation; a run that is its own baseline carries 1.0.
    """

    config: dict
    lop: bool
    hlp: bool
    dual_mode: bool
    m_tokens: int
    top_k: int
    tokens_simulated: int
    total_cycles: int
    cycles_per_token: float
    mha_cycles: int
    ffn_cycles: int
    measured_cycles: int
    tint_util: float
    boothflex_util: float
    bytes_kv: int
    bytes_features: int
    traffic: dict
    kv_reduction: float = 1.0
    mha_speedup: float = 1.0
    ffn_speedup: float = 1.0
    overall_speedup: float = 1.0
    tokens_per_second: float | None = None

    def csv_row(self) -> str:
        def num(v):
            return f"{v:.6g}"

        cells = [
            "on" if self.lop else "off",
            "on" if self.hlp else "off",
            "on" if self.dual_mode else "off",
            str(self.m_tokens),
            str(self.top_k),
            str(self.total_cycles),
            num(self.cycles_per_token),
            num(self.tint_util),
            num(self.boothflex_util),
            str(self.bytes_kv),
            str(self.bytes_features),
            num(self.kv_reduction),
            num(self.mha_speedup),
            num(self.ffn_speedup),
            num(self.overall_speedup),
        ]
        return ",".join(cells)


def step_windows(trace: ScheduleTrace) -> list[tuple[int, int]]:
    """Step boundaries recovered from the trace: each step opens with the
    first of its two rmsnorm events."""
    rms = sorted((e for e in trace.events if e.kind == "rmsnorm"),
                 key=lambda e: e.cycle_start)
    if len(rms) % 2:
        raise SimulationInvariantError("odd rmsnorm event count in trace")
    starts = [rms[i].cycle_start for i in range(0, len(rms), 2)]
    ends = starts[1:] + [trace.makespan]
    return list(zip(starts, ends))


def phase_split(trace: ScheduleTrace, window: tuple[int, int]) -> tuple[int, int]:
    """(mha_cycles, ffn_cycles) for one step window: the attention phase runs
    until the first cooperative ternary tile starts."""
    lo, hi = window
    ffn_starts = [e.cycle_start for e in trace.events
                  if e.kind in sched.FFN_KINDS and lo <= e.cycle_start < hi]
    boundary = min(ffn_starts) if ffn_starts else hi
    return boundary - lo, hi - boundary


def window_bytes(trace: ScheduleTrace, window: tuple[int, int], kinds) -> int:
    lo, hi = window
    return sum(e.bytes for e in trace.events
               if e.kind in kinds and lo <= e.cycle_start < hi)


def build_report(spec: RunSpec, sim: Simulation, trace: ScheduleTrace) -> RunReport:
    windows = step_windows(trace)
    n_decode = spec.decode_steps
    measured = windows[-n_decode:] if n_decode else windows
    mha = ffn = kv_bytes = feat_bytes = 0
    for w in measured:
        m, f = phase_split(trace, w)
        mha += m
        ffn += f
        kv_bytes += window_bytes(trace, w, ("kvFetch",))
        feat_bytes += window_bytes(trace, w, ("lopGate",))
    measured_cycles = sum(hi - lo for lo, hi in measured)
    busy = trace.core_busy()
    span = trace.makespan
    tint_names = [c.name for c in sim.tints]
    tint_util = sum(busy.get(n, 0) for n in tint_names) / (len(tint_names) * span) if span else 0.0
    bf_util = busy.get(sim.bf.name, 0) / span if span else 0.0
    first_measured = sim.steps[len(windows) - len(measured)]
    cycles_per_token = measured_cycles / len(measured)
    report = RunReport(
        config=asdict(spec),
        lop=spec.lop, hlp=spec.hlp, dual_mode=spec.dual_mode,
        m_tokens=first_measured.tokens_at_gate,
        top_k=spec.top_k,
        tokens_simulated=len(windows),
        total_cycles=span,
        cycles_per_token=cycles_per_token,
        mha_cycles=mha, ffn_cycles=ffn, measured_cycles=measured_cycles,
        tint_util=tint_util, boothflex_util=bf_util,
        bytes_kv=kv_bytes, bytes_features=feat_bytes,
        traffic=sim.stats.snapshot(),
    )
    if spec.freq_ghz:
        report.tokens_per_second = spec.freq_ghz * 1e9 / cycles_per_token
    return report


def attach_baseline(report: RunReport, base: RunReport) -> None:
    def ratio(a, b):
        if b == 0:
            return 1.0 if a == 0 else float("inf")
        return a / b

    report.kv_reduction = ratio(base.bytes_kv, report.bytes_kv)
    report.mha_speedup = ratio(base.mha_cycles, report.mha_cycles)
    report.ffn_speedup = ratio(base.ffn_cycles, report.ffn_cycles)
    report.overall_speedup = ratio(base.measured_cycles, report.measured_cycles)


def build_workload(spec: RunSpec) -> LayerWeights:
    if spec.weights_dir:
        weights = model.load_layer_weights(spec.weights_dir)
        model.validate_weights(weights, spec.layer_config())
        return weights
    return model.generate_weights(spec.layer_config(), zero_fraction=spec.zero_fraction)


def execute_run(spec: RunSpec) -> tuple[RunReport, Simulation, ScheduleTrace]:
    weights = build_workload(spec)
    sim = Simulation(weights, spec.sim_config())
    rng = np.random.default_rng(spec.seed)
    d = spec.d_model
    prompt = rng.normal(size=(spec.seq_len, d))
    sim.run_prefill(prompt)
    for _ in range(spec.decode_steps):
        sim.run_decode_step(rng.normal(size=d))
    sim.check_accounting()
    trace = sim.full_trace
    return build_report(spec, sim, trace), sim, trace


# ----------------------------------------------------------------- argparse

def _add_config_flags(p: argparse.ArgumentParser, with_toggles: bool) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--seq-len", type=int, dest="seq_len")
    p.add_argument("--decode-steps", type=int, dest="decode_steps")
    p.add_argument("--topk", type=int, dest="top_k")
    p.add_argument("--buckets", type=int, dest="num_buckets")
    p.add_argument("--heads", type=int, dest="num_heads")
    p.add_argument("--dmodel", type=int, dest="d_model")
    p.add_argument("--dffn", type=int, dest="d_ffn")
    p.add_argument("--lop-features", choices=("onchip", "offchip"), dest="lop_features")
    p.add_argument("--freq-ghz", type=float, dest="freq_ghz")
    p.add_argument("--out", help="CSV output path")
    p.add_argument("--trace", help="JSONL trace output path")
    p.add_argument("--json", action="store_true", help="print report(s) as JSON")
    if with_toggles:
        p.add_argument("--lop", choices=("on", "off"))
        p.add_argument("--hlp", choices=("on", "off"))
        p.add_argument("--dual-mode", choices=("on", "off"), dest="dual_mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ternsim",
                                     description="ternary/INT8 accelerator simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one configuration")
    _add_config_flags(run_p, with_toggles=True)

    abl_p = sub.add_parser("ablate", help="run the 2^3 lop/hlp/dual-mode grid")
    _add_config_flags(abl_p, with_toggles=False)

    sub.add_parser("verify", help="run the built-in invariant suite")

    gen_p = sub.add_parser("gen-weights", help="generate synthetic ternary weights")
    gen_p.add_argument("--dmodel", type=int, default=256, dest="d_model")
    gen_p.add_argument("--heads", type=int, default=4, dest="num_heads")
    gen_p.add_argument("--dffn", type=int, default=688, dest="d_ffn")
    gen_p.add_argument("--seed", type=int, default=0)
    gen_p.add_argument("--zero-fraction", type=float, default=1.0 / 3.0, dest="zero_fraction")
    gen_p.add_argument("--out", required=True, help="output directory")
    return parser


def spec_from_args(args: argparse.Namespace) -> RunSpec:
    values: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_values = json.load(fh)
        known = {f.name for f in fields(RunSpec)}
        unknown = set(file_values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for f in fields(RunSpec):
        flag = getattr(args, f.name, None)
        if flag is not None:
            if f.name in ("lop", "hlp", "dual_mode") and isinstance(flag, str):
                flag = flag == "on"
            values[f.name] = flag
    return RunSpec(**values)


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _emit_csv(reports, path: str) -> None:
    lines = [CSV_HEADER] + [r.csv_row() for r in reports]
    _write_text(path, "\n".join(lines) + "\n")


def _report_json(report: RunReport) -> dict:
    return asdict(report)


def _cmd_run(args) -> int:
    spec = spec_from_args(args)
    report, _sim, trace = execute_run(spec)
    if args.trace:
        _write_text(args.trace, trace.to_jsonl())
    if args.out:
        _emit_csv([report], args.out)
    if args.json:
        print(json.dumps(_report_json(report), indent=2))
    else:
        print(f"tokens={report.tokens_simulated} cycles={report.total_cycles} "
              f"cycles/token={report.cycles_per_token:.6g} "
              f"tint_util={report.tint_util:.4f} boothflex_util={report.boothflex_util:.4f} "
              f"bytes_kv={report.bytes_kv} bytes_features={report.bytes_features}")
    return 0


def _grid_tag(lop_on: bool, hlp_on: bool, dual_on: bool) -> str:
    return f"lop{int(lop_on)}_hlp{int(hlp_on)}_dm{int(dual_on)}"


def _cmd_ablate(args) -> int:
    base_spec = spec_from_args(args)
    reports = []
    traces = {}
    for lop_on, hlp_on, dual_on in itertools.product((False, True), repeat=3):
        spec = replace(base_spec, lop=lop_on, hlp=hlp_on, dual_mode=dual_on)
        report, _sim, trace = execute_run(spec)
        reports.append(report)
        traces[_grid_tag(lop_on, hlp_on, dual_on)] = trace
    baseline = reports[0]
    for report in reports:
        attach_baseline(report, baseline)
    if args.out:
        _emit_csv(reports, args.out)
    if args.trace:
        stem, ext = os.path.splitext(args.trace)
        for tag, trace in traces.items():
            _write_text(f"{stem}.{tag}{ext or '.jsonl'}", trace.to_jsonl())
    if args.json:
        print(json.dumps([_report_json(r) for r in reports], indent=2))
    else:
        print(CSV_HEADER)
        for report in reports:
            print(report.csv_row())
    return 0


def _cmd_gen_weights(args) -> int:
    if args.d_model % args.num_heads:
        raise ValueError("d_model must be a multiple of num_heads")
    cfg = LayerConfig(
        d_model=args.d_model, num_heads=args.num_heads,
        d_head=args.d_model // args.num_heads, d_ffn=args.d_ffn, seed=args.seed,
    )
    weights = model.generate_weights(cfg, zero_fraction=args.zero_fraction)
    model.save_layer_weights(weights, args.out)
    print(f"wrote weights for d_model={args.d_model} d_ffn={args.d_ffn} to {args.out}")
    return 0


# ------------------------------------------------------------------- verify

def _check_booth_exhaustive() -> None:
    grid = np.arange(-128, 128, dtype=np.int64)
    a, y = np.meshgrid(grid, grid, indexing="ij")
    prod, cycles = arith.booth_multiply(a, y, "int8")
    assert cycles == 5
    assert np.array_equal(prod, a * y)
    prod_t, cycles_t = arith.booth_multiply(grid, np.array([-1, 0, 1])[:, None], "ternary")
    assert cycles_t == 1
    assert np.array_equal(prod_t, np.array([-1, 0, 1])[:, None] * grid)


def _check_recode_preservation() -> None:
    for bits in (4, 8, 11):
        for y in range(-(1 << (bits - 1)), 1 << (bits - 1)):
            rec = arith.booth_recode(y, bits)
            assert rec.value() == y
            assert all(-2 <= digit <= 2 for digit in rec.digits)


def _check_codec_roundtrip() -> None:
    rng = np.random.default_rng(7)
    for _ in range(5):
        w = rng.integers(-1, 2, size=(rng.integers(1, 65), rng.integers(1, 65)))
        assert np.array_equal(arith.pack_ternary(w).to_array(), w)
    bad = arith.TernaryTensor(bytes([0b10]), 1, 1)
    try:
        bad.to_array()
    except arith.TernaryCodeError:
        pass
    else:
        raise AssertionError("illegal code 0b10 was not rejected")


def _check_streaming_reductions() -> None:
    rng = np.random.default_rng(11)
    for i in range(400):
        n = int(rng.integers(1, 96))
        x = rng.normal(scale=3.0, size=n)
        if i % 4 == 0:
            x[rng.integers(0, n)] = 700.0 + float(rng.integers(0, 300))
        got = quant.streaming_softmax(x)
        ref = np.exp(x - x.max())
        ref /= ref.sum()
        assert np.isclose(got, ref, rtol=1e-6, atol=0).all()
        gain = rng.normal(size=n)
        got_n = quant.streaming_rms_norm(x, gain)
        ref_n = gain * x / np.sqrt(np.mean(x * x) + 1e-6)
        assert np.isclose(got_n, ref_n, rtol=1e-6, atol=1e-12).all()


def _check_absmax_roundtrip() -> None:
    rng = np.random.default_rng(13)
    for _ in range(400):
        x = rng.normal(scale=10.0, size=int(rng.integers(1, 64)))
        q = quant.absmax_quantize(x)
        err = np.abs(q.dequantize() - x).max()
        assert err <= q.scale / 2 * (1 + 1e-9)


def _check_topk_vs_sort() -> None:
    rng = np.random.default_rng(17)
    for _ in range(300):
        m = int(rng.integers(1, 160))
        scores = rng.integers(-500, 501, size=m)
        k = int(rng.integers(1, m + 1))
        selection = lop.select_top_k(scores, k, num_buckets=2 * 501, score_bound=501)
        want = np.sort(np.sort(scores)[::-1][:k])
        got = np.sort(scores[selection.kept])
        assert np.array_equal(got, want)


def _check_traffic_law() -> None:
    spec = RunSpec(d_model=32, num_heads=2, d_ffn=40, top_k=4, seq_len=16,
                   decode_steps=1, seed=3)
    on, _, _ = execute_run(spec)
    off, _, _ = execute_run(replace(spec, lop=False))
    assert on.bytes_kv * 16 == off.bytes_kv * 4  # min(K, M)/M with M=16, K=4


def _check_dominance() -> None:
    spec = RunSpec(d_model=32, num_heads=2, d_ffn=40, top_k=4, seq_len=8,
                   decode_steps=2, seed=5)
    all_on, _, _ = execute_run(spec)
    no_hlp, _, _ = execute_run(replace(spec, hlp=False))
    no_dual, _, _ = execute_run(replace(spec, dual_mode=False))
    all_off, _, _ = execute_run(replace(spec, lop=False, hlp=False, dual_mode=False))
    assert all_on.total_cycles < no_hlp.total_cycles
    assert all_on.boothflex_util > no_dual.boothflex_util
    assert all_on.total_cycles < all_off.total_cycles


def _check_determinism() -> None:
    spec = RunSpec(d_model=32, num_heads=2, d_ffn=40, top_k=4, seq_len=6,
                   decode_steps=2, seed=9)
    _, _, t1 = execute_run(spec)
    _, _, t2 = execute_run(spec)
    assert t1.to_jsonl() == t2.to_jsonl()


_VERIFY_CHECKS = (
    ("booth int8/ternary exhaustive equivalence", _check_booth_exhaustive),
    ("radix-4 recode value preservation", _check_recode_preservation),
    ("ternary codec roundtrip and illegal-code rejection", _check_codec_roundtrip),
    ("streaming softmax/rmsnorm vs two-pass references", _check_streaming_reductions),
    ("absmax roundtrip half-step bound", _check_absmax_roundtrip),
    ("bucketized top-k vs sort oracle", _check_topk_vs_sort),
    ("kv fetch traffic law", _check_traffic_law),
    ("scheduling dominance (hlp/dual-mode)", _check_dominance),
    ("trace determinism", _check_determinism),
)


def _cmd_verify(_args) -> int:
    failed = 0
    for name, check in _VERIFY_CHECKS:
        try:
            check()
        except Exception as exc:  # noqa: BLE001 - report and count every failure
            failed += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"ok   {name}")
    if failed:
        print(f"{failed} of {len(_VERIFY_CHECKS)} checks failed")
        return 2
    print(f"all {len(_VERIFY_CHECKS)} checks passed")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "ablate": _cmd_ablate,
        "verify": _cmd_verify,
        "gen-weights": _cmd_gen_weights,
    }
    try:
        return handlers[args.command](args)
    except (SimulationInvariantError, CreditAccountingError, AssertionError) as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
