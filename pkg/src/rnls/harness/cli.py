"""Command-line entry point.

Exit codes: 0 all checks pass, 2 a check failed, 3 configuration error, 4 solver failure.
"""

from __future__ import annotations

import json
import logging
import sys

import click

from ..errors import ConfigError, RNLSError
from .config import load_config
from .experiments import run_experiment
from .report import emit_report

log = logging.getLogger("rnls")


def _common(f):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="TOML config file."),
        click.option("--omega", "omegas", type=float, multiple=True, help="Frequency; repeat for a list."),
        click.option("--grid-n", type=int, default=None),
        click.option("--rmax", "r_max", type=float, default=None),
        click.option("--backend", type=click.Choice(["radial", "cartesian"]), default=None),
        click.option("--a", "amplitudes", type=float, multiple=True, help="Amplitude a of a*(phi_1, psi_1); repeatable."),
        click.option("--t-end", type=float, default=None),
        click.option("--dt", type=float, default=None),
        click.option("--method", type=click.Choice(["gradient_flow", "petviashvili", "shooting"]), default=None),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Report directory."),
        click.option("--seed", type=int, default=None),
        click.option("--cache", type=click.Path(file_okay=False), default=None, help="Ground-state cache (overrides RNLS_CACHE)."),
        click.option("-v", "--verbose", is_flag=True),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _execute(kind: str, config_path, verbose, **overrides):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(config_path, kind=kind, **overrides)
    bundle = run_experiment(cfg)
    if cfg.out:
        for p in emit_report(bundle, cfg.out):
            log.info("wrote %s", p)
    summary = {
        "kind": bundle.kind,
        "passed": bundle.passed,
        "failed_checks": [c.name for c in bundle.checks if not c.passed],
        "failure": bundle.failure,
    }
    click.echo(json.dumps(summary, sort_keys=True))
    sys.exit(bundle.exit_code)


@click.group()
def cli():
    """Ground states, evolution and dichotomy checks for the quadratic NLS system in 5d."""


def _command(name: str, kind: str, doc: str):
    @cli.command(name, help=doc)
    @_common
    def cmd(config_path, verbose, **kw):
        _execute(kind, config_path, verbose, **kw)

    return cmd


_command("ground-state", "ground_state", "Solve, verify and cache ground states.")
_command("verify", "verify_identities", "Pohozaev, scaling, GN and symmetry checks.")
_command("evolve", "evolve", "Evolve a*(phi_1, psi_1) and record diagnostics.")
_command("classify", "classify", "Threshold-plane prediction for a*(phi_1, psi_1).")
_command("sweep", "sweep", "Classify an amplitude ladder and draw the threshold plane.")
_command("gn-check", "gn_sweep", "Sharp GN inequality over seeded random radial pairs.")


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="rnls", standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.UsageError as exc:
        exc.show()
        sys.exit(ConfigError.exit_code)
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(ConfigError.exit_code)
    except RNLSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)


if __name__ == "__main__":
    main()
