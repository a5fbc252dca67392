"""Command-line entry point: one subcommand per experiment kind."""

from __future__ import annotations

import sys

import click

from .experiments import KINDS, ExperimentConfig, default_config, run


def _make_command(kind: str) -> click.Command:
    @click.command(name=kind, help=f"Run the {kind} experiment and write CSV, manifest and plot data.")
    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                  help="INI config file; missing keys take the defaults of this kind.")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.option("--seed", type=int, default=None, help="Seed for random test states.")
    @click.option("--threads", type=int, default=None, help="Worker processes for independent sweep points.")
    @click.option("--dump-config", is_flag=True, help="Print the resolved config and exit.")
    def cmd(config_path, out_dir, seed, threads, dump_config):
        cfg = ExperimentConfig.load(config_path) if config_path else default_config(kind)
        if cfg.kind != kind:
            raise click.UsageError(f"config kind {cfg.kind!r} does not match subcommand {kind!r}")
        if seed is not None:
            cfg.seed = seed
        if threads is not None:
            if threads < 1:
                raise click.BadParameter("threads must be >= 1", param_hint="--threads")
            cfg.threads = threads
        if out_dir is not None:
            cfg.out = out_dir
        if dump_config:
            click.echo(cfg.to_ini(), nl=False)
            return
        try:
            res = run(cfg)
        except ValueError as exc:
            raise click.ClickException(str(exc)) from exc
        click.echo(f"{kind}: {len(res.rows)} rows -> {cfg.out}")
        for key, (s, e) in sorted(res.slopes.items()):
            click.echo(f"  slope {key}: {s:+.4f} +- {e:.4f}")
        if kind == "check-identities":
            bad = [r for r in res.rows if not r["passed"]]
            for r in res.rows:
                click.echo(f"  {'PASS' if r['passed'] else 'FAIL'} {r['check']}: {r['value']:.3e} {r['note']}")
            if bad:
                sys.exit(1)

    return cmd


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Impurity-in-a-Bose-gas numerical experiments."""


for _kind in KINDS:
    main.add_command(_make_command(_kind))


if __name__ == "__main__":
    main()
