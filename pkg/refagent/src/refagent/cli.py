"""Command line front end.

Exit codes: 0 on a clean bye, 1 on protocol violations or connection
failures, 2 on bad arguments.
"""

from __future__ import annotations

import argparse
import sys

from .client import (ProtocolError, connect_and_drive, keep_lane_policy,
                     load_script)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="refagent",
        description="Reference agent: answers every engine observation "
                    "with one action.")
    parser.add_argument("--address", default="127.0.0.1:7766",
                        help="engine endpoint as HOST:PORT")
    parser.add_argument("--policy", default="keep_lane",
                        help="'keep_lane' or the path to a JSON script "
                             "mapping ticks to actions")
    parser.add_argument("--latency", type=float, default=0.0,
                        help="seconds slept before every reply")
    args = parser.parse_args(argv)
    if args.latency < 0.0:
        parser.error("--latency must be >= 0")
    try:
        if args.policy == "keep_lane":
            policy = keep_lane_policy
        else:
            policy = load_script(args.policy)
    except (OSError, ValueError) as exc:
        print(f"refagent: bad policy: {exc}", file=sys.stderr)
        return 2
    try:
        transcript = connect_and_drive(args.address, policy,
                                       latency=args.latency)
    except (ProtocolError, OSError, ValueError) as exc:
        print(f"refagent: {exc}", file=sys.stderr)
        return 1
    print(f"refagent: answered {transcript.observations} observations, "
          f"bye reason {transcript.bye.get('reason')!r}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
