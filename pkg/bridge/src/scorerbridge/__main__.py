"""Entry point: `python -m scorerbridge --model melstats` serves on stdio."""

from __future__ import annotations

import argparse
import sys

from .models import load_model
from .protocol import serve


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="scorerbridge",
        description="Serve a speaker-embedding model over the scorer "
                    "wire protocol (line-delimited JSON on stdio).")
    ap.add_argument("--model", default="melstats",
                    help="melstats | torchscript:<path>")
    ap.add_argument("--device", default="cpu")
    args = ap.parse_args(argv)
    try:
        model = load_model(args.model, args.device)
    except Exception as e:  # noqa: BLE001 - startup failure goes to stderr
        print(f"scorerbridge: cannot load model {args.model!r}: {e}",
              file=sys.stderr)
        return 2
    serve(model)
    return 0


if __name__ == "__main__":
    sys.exit(main())
