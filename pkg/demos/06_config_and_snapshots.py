# %% [markdown]
# Configs, snapshots and the verify step, driven from Python.  The same
# workflow is available as ``nsalpha simulate run.ini`` then
# ``nsalpha verify snapshots/final.bin ledger.csv``.

# %%
import tempfile
from pathlib import Path

from nsalpha.cli import main
from nsalpha.cli_io import format_config, parse_config, read_snapshot

text = """
[grid]
N = 8
[physics]
nu = 0.5
indicator = constant_one
beta = 1
[forcing]
kind = none
[initial]
kind = shear
mode = 2
[time]
T = 0.2
dt = 0.02
"""
cfg = parse_config(text)
print(format_config(cfg))

# %%
with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    (tmp / "run.ini").write_text(text)
    assert main(["simulate", str(tmp / "run.ini"), "--out", str(tmp)]) == 0
    u, t = read_snapshot(tmp / "snapshots" / "final.bin")
    print("snapshot at t =", t, "on N =", u.grid.N)
    code = main(["verify", str(tmp / "snapshots" / "final.bin"), str(tmp / "ledger.csv")])
    print("verify exit code:", code)
