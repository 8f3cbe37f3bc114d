import numpy as np
import pytest

from conftest import naive_matmul
from ternsim import arith
from ternsim.boothflex import BoothFlexCoreModel, SchedulingError, booth_matmul


def test_mode_equivalence_and_cycle_ratio(rng):
    lhs = rng.integers(-127, 128, size=(4, 24))
    w = rng.integers(-1, 2, size=(24, 8))
    acc_t, cyc_t = booth_matmul(lhs, w, "ternary")
    acc_i, cyc_i = booth_matmul(lhs, w, "int8")
    assert np.array_equal(acc_t, acc_i)
    assert cyc_i == 5 * cyc_t


def test_zero_rhs_gives_zero_acc(rng):
    lhs = rng.integers(-127, 128, size=(3, 10))
    acc, _ = booth_matmul(lhs, np.zeros((10, 4), np.int64), "int8")
    assert not acc.any()


def test_matches_reference_matmul(rng):
    lhs = rng.integers(-127, 128, size=(16, 32))
    rhs = rng.integers(-127, 128, size=(32, 8))
    acc, cycles = booth_matmul(lhs, rhs, "int8")
    assert np.array_equal(acc, naive_matmul(lhs, rhs))
    assert cycles == 2 * 1 * 32 * 5


def test_accepts_packed_ternary_tensor(rng):
    lhs = rng.integers(-127, 128, size=(2, 12))
    w = rng.integers(-1, 2, size=(12, 5))
    acc, _ = booth_matmul(lhs, arith.pack_ternary(w), "ternary")
    assert np.array_equal(acc, naive_matmul(lhs, w))


def test_mode_operand_mismatch():
    t = arith.pack_ternary(np.ones((4, 2), np.int8))
    with pytest.raises(ValueError):
        booth_matmul(np.ones((1, 4), np.int64), t, "int8")
    with pytest.raises(ValueError):
        booth_matmul(np.ones((1, 4), np.int64), np.full((4, 2), 3), "ternary")


def test_every_product_routed_through_booth_multiply(monkeypatch):
    calls = []
    original = arith.booth_multiply

    def counting(a, y, mode="int8"):
        calls.append(mode)
        return original(a, y, mode)

    monkeypatch.setattr(arith, "booth_multiply", counting)
    lhs = np.ones((2, 7), np.int64)
    booth_matmul(lhs, np.ones((7, 3), np.int64), "int8")
    assert calls == ["int8"] * 7


def test_set_mode_rules():
    core = BoothFlexCoreModel()
    assert core.mode == "int8"
    core.set_mode("ternary", now=10, busy_until=10)
    assert core.mode == "ternary"
    assert core.mode_switches == 1
    core.set_mode("ternary")  # repeat: no-op
    assert core.mode_switches == 1
    with pytest.raises(SchedulingError):
        core.set_mode("int8", now=5, busy_until=12)
    with pytest.raises(ValueError):
        core.set_mode("int4")


def test_core_gemm_uses_latched_mode(rng):
    core = BoothFlexCoreModel()
    lhs = rng.integers(-127, 128, size=(1, 8))
    rhs = rng.integers(-127, 128, size=(8, 8))
    _, cyc_int8 = core.gemm(lhs, rhs)
    core.set_mode("ternary")
    _, cyc_tern = core.gemm(lhs, np.clip(rhs, -1, 1))
    assert cyc_int8 == 5 * cyc_tern
    assert core.busy_cycles == cyc_int8 + cyc_tern
