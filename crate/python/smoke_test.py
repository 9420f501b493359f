"""Smoke test of the `fracpme` extension module.

Build with `maturin develop -m crates/python/Cargo.toml`, or copy the cdylib
from `cargo build -p fracpme-py --features extension-module` next to this file
as `fracpme.so`.
"""

import json
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import fracpme  # noqa: E402


def test_presets_parse():
    names = fracpme.presets()
    assert "baseline" in names and "pme_limit" in names
    for name in names:
        cfg = json.loads(fracpme.preset(name))
        assert cfg["grid"]["dim"] in (1, 2, 3)


def test_invalid_config_raises_value_error():
    try:
        fracpme.parse_config(json.dumps({"dim": 1, "s": 0.6}))
    except ValueError as e:
        assert "2s < n" in str(e)
    else:
        raise AssertionError("s = 0.6 in one dimension must be rejected")


def test_integrate_constant():
    assert fracpme.integrate([1.5] * 4, 1, 4, 2.0) == 6.0


def test_run_conserves_mass():
    cfg = {
        "N": 128,
        "X": 6,
        "t_end": 0.5,
        "initial_data": {"family": "gaussian", "params": {"amplitude": 1, "width": 0.7}},
    }
    out = fracpme.run(json.dumps(cfg))
    assert out["status"] == "completed"
    mass = out["diagnostics"]["mass"]
    assert abs(mass[-1] - mass[0]) <= 1e-10 * mass[0]
    assert max(out["diagnostics"]["linf"]) <= out["diagnostics"]["linf"][0] * (1 + 1e-3)
    assert len(out["final"]) == 128


def test_oracle_agrees_with_spectral_operators():
    n, x = 256, 12.0
    h = 2 * x / n
    u = [math.exp(-((-x + (i + 0.5) * h) ** 2)) for i in range(n)]
    d = fracpme.cross_validate(u, 1, n, x, 0.3, 4.0)
    assert max(d["potential"], d["grad"], d["lap"]) < 0.02
    failures, worst = fracpme.half_ball_property(3, 10)
    assert failures == 0 and worst >= -1e-8


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok {name}")
