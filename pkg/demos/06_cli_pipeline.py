# coding: utf-8

# # The command-line pipeline
#
# gen-data writes prompts, targets and the seed policy; train runs one filter
# arm with per-round checkpoints and reports; filter-analyze re-selects
# offline at other retain fractions; report renders round-by-round tables.
# The same calls work from a shell as `congrad <subcommand> ...`.

import json
import tempfile
from pathlib import Path

from congrad.harness.cli import main

work = Path(tempfile.mkdtemp())
cfg = work / "config.json"
cfg.write_text(json.dumps({"languages": ["en", "de", "zh"], "prompts_per_language": 40,
                           "heldout_per_language": 20, "rounds": 3}))
out = work / "run"

main(["gen-data", "--config", str(cfg), "--out", str(out)])
for arm in ("congrad-max", "random"):
    main(["train", "--config", str(cfg), "--out", str(out), "--arm", arm])
print(sorted(p.name for p in (out / "congrad-max").iterdir()))

# Offline re-selection from the recorded ConGrad scores:

main(["filter-analyze", str(out / "congrad-max"), "--rho", "0.25", "--rho", "0.5", "--rho", "0.75"])

# Side-by-side report of both arms:

main(["report", str(out / "congrad-max"), str(out / "random"), "--output", str(work / "report")])

# Validation problems exit with status 1:

bad = work / "bad.json"
bad.write_text(json.dumps({"prompts_per_language": 0}))
print("exit code", main(["gen-data", "--config", str(bad), "--out", str(out)]))
