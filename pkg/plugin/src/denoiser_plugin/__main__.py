"""Entry point: serve denoising requests over stdio until EOF."""

import argparse
import sys

from .engines import ENGINES, get_engine
from .protocol import serve_loop


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="denoise-plugin",
        description="external denoiser speaking the DNRQ/DNRS protocol")
    parser.add_argument("--mode", default="bm3d", choices=sorted(ENGINES))
    args = parser.parse_args(argv)
    serve_loop(get_engine(args.mode))
    return 0


if __name__ == "__main__":
    sys.exit(main())
