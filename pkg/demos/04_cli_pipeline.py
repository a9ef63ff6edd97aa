"""The whole pipeline through the command-line interface.

Runs synth -> split -> filter -> train -> eval -> map in a scratch
directory, exactly as a reproduction script would, and prints what each
stage left behind.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp(prefix="livmap-demo-"))
data = work / "data"
run = work / "run"


def livmap(*args):
    cmd = [sys.executable, "-m", "livmap.cli", *[str(a) for a in args]]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    line = proc.stdout.strip() or proc.stderr.strip()
    print(f"$ livmap {' '.join(str(a) for a in args)}\n  -> {line}")
    proc.check_returncode()


livmap("synth", "--out", data, "--seed", 5, "--width", 20, "--height", 20,
       "--dim", 8, "--noise", 0.05)
livmap("split", "--manifest", data / "manifest.json", "--out", data)
livmap("filter", "--manifest", data / "manifest.json", "--mode", "outdoors",
       "--out", work / "filtered")
livmap("train", "--manifest", data / "manifest.json", "--out", run)
livmap("eval", "--manifest", data / "manifest.json", "--ckpt", run / "model.ckpt",
       "--out", run)
livmap("map", "--manifest", data / "manifest.json", "--ckpt", run / "model.ckpt",
       "--tile", 0, "--out", run)

metrics = json.loads((run / "metrics.json").read_text())
print("\ntest metrics:", json.dumps(metrics["splits"]["test"], indent=2))
print("\nartifacts:")
for path in sorted(run.iterdir()):
    print(f"  {path.name} ({path.stat().st_size} bytes)")
