"""Regenerate the shipped synthetic fixtures from their scenario files.

    python3 scripts/make_fixtures.py
"""

from pathlib import Path

from stsir.cli import run_simulate

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "stsir" / "fixtures"

for name in ("synth10", "sc_shaped"):
    out = run_simulate(FIXTURES / "scenarios" / f"{name}.json", out=FIXTURES / name)
    print("wrote", out)
