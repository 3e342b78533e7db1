"""
The whole study from the command line
=====================================

Drive ``simreal simulate``, ``experiment`` and ``report`` on a shrunken
configuration.  The same calls work from a shell as
``simreal --config small.json simulate`` and so on.
"""
import json
import os
import sys
import tempfile
from pathlib import Path

from simreal import cli

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="simreal-demo-"))
out.mkdir(parents=True, exist_ok=True)
os.environ[cli.OUTPUT_ENV] = str(out)

small = {
    "corpus": {"n_synthetic": 70, "n_real": 40, "n_holdout_synthetic": 10},
    "grid": {"folds": [1, 3], "seeds": [0]},
    "training": {"epochs": 5},
}
cfg_path = out / "small.json"
cfg_path.write_text(json.dumps(small, indent=2))

for command in (["simulate"], ["experiment"], ["report"]):
    code = cli.main(["--config", str(cfg_path)] + command)
    print(" ".join(command), "exit", code)

print((out / cli.RESULTS).read_text())
print("report files:", sorted(p.name for p in (out / "report").iterdir()))
