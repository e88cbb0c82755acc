"""End-to-end artifact pipeline via the command-line interface: generate
a container, train, evaluate the checkpoint, and render SVG charts whose
plotted values round-trip from the TSV log.
"""

import os
import tempfile

from attn_tutor import cli
from attn_tutor import report as R

with tempfile.TemporaryDirectory() as tmp:
    data = os.path.join(tmp, "demo.avqd")
    run = os.path.join(tmp, "run")
    rep = os.path.join(tmp, "report")

    assert cli.main(["gen-data", "--n", "120", "--image-size", "12",
                     "--grid", "3", "--seed", "6", "--out", data]) == 0
    assert cli.main(["train", "--data", data, "--out", run,
                     "--feature-dim", "8", "--warm-epochs", "2",
                     "--adv-epochs", "4", "--batch-size", "24",
                     "--seed", "1"]) == 0
    assert cli.main(["eval", "--checkpoint", os.path.join(run, "checkpoint.atck"),
                     "--data", data, "--emd-limit", "8"]) == 0
    assert cli.main(["report", "--log", os.path.join(run, "log.tsv"),
                     "--out", rep]) == 0

    rows = R.read_metrics_tsv(os.path.join(run, "log.tsv"))
    svg = open(os.path.join(rep, "entropy.svg")).read()
    wanted = ",".join(repr(r["entropy"]) for r in rows)
    assert f'data-values="{wanted}"' in svg
    print("SVG entropy series matches the TSV column verbatim")
    print(open(os.path.join(rep, "summary.txt")).read())
