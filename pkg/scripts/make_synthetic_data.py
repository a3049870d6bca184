#!/usr/bin/env python3
"""Generate a synthetic county dataset (timeseries.csv + statics.csv) in
the ingestion schema, for desk-scale experiments."""

import argparse
from pathlib import Path

from droughtcast.synthetic import make_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", type=Path, help="directory for the CSV pair")
    parser.add_argument("--counties", type=int, default=6)
    parser.add_argument("--days", type=int, default=760)
    parser.add_argument("--channels", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    ts, statics = make_dataset(args.out_dir, n_counties=args.counties,
                               days=args.days, channels=args.channels, seed=args.seed)
    print(f"wrote {ts}")
    print(f"wrote {statics}")


if __name__ == "__main__":
    main()
