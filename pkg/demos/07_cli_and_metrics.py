"""Driving the command-line interface from Python and reading its output.

Every run leaves two self-describing artifacts: the fully resolved config
(defaults expanded) and an append-only metrics.jsonl. Identical config +
seed means byte-identical files, so runs can be diffed like source code.
"""

import json
import tempfile
from pathlib import Path

from fedbatt.cli import main

with tempfile.TemporaryDirectory() as scratch:
    scratch = Path(scratch)
    cfg = scratch / "small.yaml"
    cfg.write_text(
        "model: {depth: 4, input_dim: 8, width: 16, bottleneck: 8, classes: 4}\n"
        "data: {samples: 400, validation_fraction: 0.1}\n"
        "devices: {count: 6, battery_joules: 7560.0}\n"
        "train: {local_epochs: 2, batch_size: 32, lr: 0.05}\n"
        "run: {scheduler: greedy, max_rounds: 6, episodes: 1}\n")

    out_a, out_b = scratch / "a", scratch / "b"
    print("exit:", main(["run", "--config", str(cfg), "--out", str(out_a),
                         "--seed", "2"]))
    main(["run", "--config", str(cfg), "--out", str(out_b), "--seed", "2"])

    same = (out_a / "metrics.jsonl").read_bytes() == \
           (out_b / "metrics.jsonl").read_bytes()
    print("repeat run byte-identical:", same)

    lines = [json.loads(line)
             for line in (out_a / "metrics.jsonl").read_text().splitlines()]
    print(f"\nmetrics.jsonl: {len(lines)} records")
    for record in lines:
        if record["type"] == "round":
            print(f"  round {record['round']}: accuracy {record['accuracy']:.3f}, "
                  f"spent {record['e_spent']:.0f} J, t_all {record['t_all']:.1f} s")
        elif record["type"] == "summary":
            print(f"  summary: best {record['best_accuracy']:.3f} "
                  f"at round {record['best_round']}")

    sweep_dir = scratch / "sweep"
    main(["sweep", "--config", str(cfg), "--out", str(sweep_dir),
          "--param", "seed", "--values", "1..3"])
    print("\nsweep.csv:")
    print((sweep_dir / "sweep.csv").read_text())
