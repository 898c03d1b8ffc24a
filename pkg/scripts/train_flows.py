"""Fit the pre-trained flows bundled in ``src/flowqmc/data/flows``.

Usage::

    python3 scripts/train_flows.py                 # every shipped flow
    python3 scripts/train_flows.py dualmoon_d2 gmm_d2

Each flow is written with its recipe under ``meta`` and a loss trace next
to it (``<name>.loss.csv``, not packaged).
"""

import argparse
import logging
import time
from dataclasses import asdict
from pathlib import Path

from flowqmc.experiments import default_recipe, train_recipe
from flowqmc.persist import flow_save

DEST = Path(__file__).resolve().parents[1] / "src" / "flowqmc" / "data" / "flows"
SHIPPED = ["gmm_d2"] + [f"dualmoon_d{d}" for d in range(2, 11)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", default=SHIPPED)
    ap.add_argument("--dest", type=Path, default=DEST)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args.dest.mkdir(parents=True, exist_ok=True)
    for name in args.names:
        target, d = name.rsplit("_d", 1)
        recipe = default_recipe(target, int(d))
        t0 = time.time()
        flow = train_recipe(recipe, args.dest / f"{name}.loss.csv")
        flow_save(flow, args.dest / f"{name}.json", meta={"recipe": asdict(recipe)})
        logging.info("%s: %.0f s", name, time.time() - t0)


if __name__ == "__main__":
    main()
