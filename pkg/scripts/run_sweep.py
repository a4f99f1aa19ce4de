"""Run the lambda sweep used by the acceptance suite and cache it under runs/.

    python3 scripts/run_sweep.py [--config configs/sweep512.json] [--force]

The run is skipped when runs/<name>/sweep_report.json already carries the
config's hash. Expect roughly 30-50 minutes on one core at grid 512.
"""

import argparse
import json
import sys
from pathlib import Path

from bubbleflow.cli import main
from bubbleflow.config import RunConfig

ROOT = Path(__file__).resolve().parents[1]


def cached(cfg: RunConfig, out: Path) -> bool:
    report = out / "sweep_report.json"
    return report.exists() and json.loads(report.read_text()).get("config_hash") == cfg.digest()


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "sweep512.json")
    ap.add_argument("--force", action="store_true", help="rerun even if a matching cache exists")
    args = ap.parse_args()
    cfg = RunConfig.load(args.config)
    out = ROOT / cfg.out_dir
    if cached(cfg, out) and not args.force:
        print(f"{out} is up to date ({cfg.digest()})")
        sys.exit(0)
    sys.exit(main(["sweep", "--config", str(args.config), "--out", str(out)]))
