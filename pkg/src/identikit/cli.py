"""``identikit`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from identikit.commands import (GateHalt, Run, cmd_bootstrap, cmd_fit, cmd_forward, cmd_profile,
                                cmd_simulate, cmd_sobol, cmd_structural)
from identikit.config import ConfigError, load_config
from identikit.report import Outputs
from identikit.workflow import cmd_workflow

COMMANDS = {
    "simulate": cmd_simulate,
    "forward": cmd_forward,
    "sobol": cmd_sobol,
    "fit": cmd_fit,
    "profile": cmd_profile,
    "bootstrap": cmd_bootstrap,
    "structural": cmd_structural,
    "workflow": cmd_workflow,
}

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_HALT = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="identikit",
                                description="Forward/inverse UQ and identifiability for "
                                            "compartmental epidemic models.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=None, help="override every configured seed")
    p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    p.add_argument("--plot", action="store_true", help="also write SVG charts")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error:\n{e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Outputs(args.out or cfg.output_dir)
    run = Run(cfg, out, args.seed, args.plot, Path(args.config).parent)
    code = EXIT_OK
    try:
        result = COMMANDS[args.command](run)
        if hasattr(result, "to_dict"):
            result = result.to_dict()
        print(json.dumps({"command": args.command, "status": "ok"}, sort_keys=True))
    except ConfigError as e:
        print(f"config error:\n{e}", file=sys.stderr)
        code = EXIT_CONFIG
    except GateHalt as e:
        print(f"halted: {e}; see workflow_report.json", file=sys.stderr)
        code = EXIT_HALT
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        code = EXIT_RUNTIME
    if out.files:
        out.manifest()
    return code


if __name__ == "__main__":
    sys.exit(main())
