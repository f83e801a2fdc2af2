"""Entry point: load checkpoints per the config file and serve."""

from __future__ import annotations

import argparse
import sys

from .app import create_app
from .config import SidecarConfig, SidecarConfigError


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(
        description="Serve detection/segmentation/scoring checkpoints "
        "over the damagescan /v1 protocol"
    )
    parser.add_argument("--config", required=True, help="sidecar config JSON")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8100)
    args = parser.parse_args(argv)

    try:
        config = SidecarConfig.from_file(args.config)
    except SidecarConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        raise SystemExit(2)

    from .models import load_models

    detector, segmenter, scorer = load_models(config)
    app = create_app(config, detector=detector, segmenter=segmenter, scorer=scorer)

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")


if __name__ == "__main__":
    main()
