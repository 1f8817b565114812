"""`python -m foodcurate curate ...` / `python -m foodcurate scl ...` dispatch."""

import sys

from .cli import curate_main, scl_main


def main() -> int:
    if len(sys.argv) < 2 or sys.argv[1] not in ("curate", "scl"):
        print("usage: python -m foodcurate {curate|scl} ...", file=sys.stderr)
        return 2
    tool, argv = sys.argv[1], sys.argv[2:]
    return curate_main(argv) if tool == "curate" else scl_main(argv)


if __name__ == "__main__":
    sys.exit(main())
