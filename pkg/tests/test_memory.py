import json

import numpy as np
import pytest

from cersa_forge import memory
from cersa_forge.adapters import Cersa, FrozenUV, FullFT, LoRA, build
from cersa_forge.memory import (
    MB,
    break_even_rank,
    break_even_scan,
    cersa_compression,
    compression_curve,
    lora_reference_rate,
    memory_report,
)

# published reference values: FT total memory, LoRA r=32 trainable count
FT_PARAMS = 303_300_000
FT_TOTAL_MB = 4629.8
LORA_TRAINABLE_M = 3.2


def test_ft_reference_total():
    rep = memory.MemoryReport.from_counts("FT", FT_PARAMS, FT_PARAMS)
    assert rep.total_bytes == 4 * FT_PARAMS * 4
    assert abs(rep.total_bytes / MB - FT_TOTAL_MB) / FT_TOTAL_MB < 0.01


def test_lora_reference_trainable():
    rep = memory_report("LoRA", [(1024, 1024)] * 48, rank=32)
    assert rep.trainable_params == 3_145_728
    assert abs(rep.trainable_params / 1e6 - LORA_TRAINABLE_M) / LORA_TRAINABLE_M < 0.02


def test_cersa_1024_r64():
    rep = memory_report("CERSA", [(1024, 1024)], rank=64)
    assert rep.total_params == 147_456
    assert cersa_compression(1024, 1024, 64) == 147_456 / 1_048_576
    assert cersa_compression(1024, 1024, 64) == pytest.approx(0.1406, abs=5e-5)


@pytest.mark.parametrize(
    "method,kw,expected",
    [
        ("FT", {}, lambda m, n, r: 4 * m * n),
        ("CERSA", {"rank": 5}, lambda m, n, r: m * r + n * r + 4 * r * r),
        ("SVFit", {"rank": 5}, lambda m, n, r: 2 * m * n + m + 3 * r),
        ("SVFT", {"e": 7}, lambda m, n, r: 2 * m * n + 4 * 7),
        ("LoRA", {"rank": 5}, lambda m, n, r: m * n + 4 * m * r + 4 * n * r),
    ],
)
def test_table1_formulas(method, kw, expected):
    rep = memory_report(method, [(30, 20)], **kw)
    assert rep.total_params == expected(30, 20, 5)
    assert rep.optimizer_bytes == 2 * rep.gradient_bytes
    assert rep.total_bytes == rep.weights_bytes + rep.gradient_bytes + rep.optimizer_bytes


def test_missing_or_zero_rank():
    with pytest.raises(ValueError, match="needs a rank"):
        memory_report("LoRA", [(8, 8)])
    with pytest.raises(ValueError, match="no trainable subspace"):
        memory_report("CERSA", [(8, 8)], rank=0)
    with pytest.raises(ValueError):
        memory_report("SVFT", [(8, 8)])
    with pytest.raises(ValueError):
        memory_report("FT", [(0, 8)])


def test_layerwise_ranks():
    rep = memory_report("CERSA", [(10, 8), (6, 4)], ranks=[3, 2])
    assert rep.total_params == (10 * 3 + 8 * 3 + 4 * 9) + (6 * 2 + 4 * 2 + 4 * 4)
    with pytest.raises(ValueError):
        memory_report("CERSA", [(10, 8)], ranks=[3, 2])


def test_reports_match_built_layers(rng):
    m, n = 8, 6
    w0 = rng.standard_normal((m, n))
    for kind, method, kw in [
        (FullFT(), "FT", {}),
        (LoRA(3), "LoRA", {"rank": 3}),
        (FrozenUV(4), "FrozenUV", {"rank": 4}),
    ]:
        layer = build(kind, w0)
        rep = memory_report(method, [(m, n)], **kw)
        assert rep.trainable_params == layer.trainable_count(include_bias=False)
        assert rep.weight_params == layer.frozen_count() + rep.trainable_params
    layer = build(Cersa(0.95, 0.6), w0)
    sel = layer.selection
    rep = memory_report("CERSA", [(m, n)], ranks=[sel.k_alpha], core_ranks=[sel.k_beta])
    assert rep.trainable_params == layer.trainable_count(include_bias=False)
    assert rep.weight_params == layer.frozen_count() + rep.trainable_params


def test_full_rank_square_expands():
    assert cersa_compression(16, 16, 16) == 6.0
    assert cersa_compression(1024, 1024, 1) < 1


def test_curve_monotone_and_sorted():
    pts = compression_curve(64, 48, ranks=[10, 1, 5, 48])
    assert [p.rank for p in pts] == [1, 5, 10, 48]
    assert all(a.rate <= b.rate for a, b in zip(pts, pts[1:]))


def test_curve_from_alphas():
    sigma = np.array([3.0, 2.0, 1.0])
    pts = compression_curve(3, 3, alphas=[0.6, 0.9], sigma=sigma)
    assert [(p.alpha, p.rank) for p in pts] == [(0.6, 1), (0.9, 2)]
    with pytest.raises(ValueError):
        compression_curve(3, 3, alphas=[0.6])
    with pytest.raises(ValueError):
        compression_curve(3, 3, ranks=[0])


def test_lora_reference_line():
    assert lora_reference_rate(100, 50) == (100 * 50 + 4 * 32 * 150) / 5000


def test_break_even_examples():
    # scan oracle: 2*1024*r + 4r^2 < 1024^2 holds up to r = 316
    assert break_even_scan(1024, 1024) == 316
    assert break_even_rank(1024, 1024) == 316
    assert 2 * 1024 * 316 + 4 * 316**2 < 1024**2 <= 2 * 1024 * 317 + 4 * 317**2
    assert break_even_rank(2, 2) == 0
    ratio = break_even_scan(1024, 1024) / break_even_scan(512, 512)
    assert 1.9 < ratio < 2.1


def test_break_even_grid_small():
    for m in range(1, 80):
        for n in range(1, 80):
            assert break_even_rank(m, n) == break_even_scan(m, n)


def test_serialization():
    reps = [memory_report("FT", [(2, 2)])]
    assert memory.reports_csv(reps).splitlines()[1] == "FT,4,4,0,16,16,32,64,6.103515625e-05"
    assert json.loads(memory.reports_json(reps))["reports"][0]["total_mb"] == 64 / MB
    assert memory.curve_csv(compression_curve(2, 2, ranks=[1])) == "alpha_or_rank,r,c\n,1,2\n"
