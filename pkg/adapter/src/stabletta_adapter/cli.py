"""Command-line entry points: ``serve`` and ``list-models``."""

from __future__ import annotations

import sys

import click

from .serve import serve
from .zoo import ModelLoadError, UnknownModelError, list_models


@click.group()
def cli():
    """Serve small pretrained image classifiers over stdin/stdout."""


@cli.command("serve")
@click.option("--model", "model_name", required=True,
              help="Zoo name of the model to serve (see list-models).")
@click.option("--device", type=click.Choice(["cpu", "accelerator"]),
              default="cpu", show_default=True)
@click.option("--weights", "weights_path",
              type=click.Path(dir_okay=False), default=None,
              help="Load weights from this file instead of the packaged ones.")
def serve_cmd(model_name, device, weights_path):
    """Speak the byte protocol on stdin/stdout until SHUTDOWN."""
    return serve(model_name, device=device, weights_path=weights_path)


@cli.command("list-models")
def list_models_cmd():
    """Print the zoo: one row per model with class count and input shape."""
    click.echo(list_models())
    return 0


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="stabletta-adapter", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except (UnknownModelError, ModelLoadError) as e:
        click.echo(f"error: {e}", err=True)
        return 3
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
