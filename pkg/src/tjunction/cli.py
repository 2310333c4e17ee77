"""Command line entry points for training, evaluation, and full sweeps."""

import json
import pathlib

import click

from .bench import (
    METHODS,
    ExperimentPlan,
    evaluate_method,
    load_store,
    run_experiment,
    train_all,
)
from .domain import all_environment_states


def _load_plan(config, **overrides):
    if config is not None:
        with open(config, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    else:
        data = {}
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    return ExperimentPlan.from_dict(data)


@click.group()
def main():
    """Occluded T-intersection transfer benchmark."""


@main.command("show-config")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional JSON config to echo after applying defaults.")
def show_config(config):
    """Print the full experiment configuration as JSON."""
    plan = _load_plan(config)
    click.echo(json.dumps(plan.to_dict(), indent=2, sort_keys=True))


@main.command()
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON config file; command line flags override it.")
@click.option("--scenarios", type=int, default=None,
              help="Training scenarios per environment.")
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Directory for the experience store, logs, and metrics.")
def train(seed, config, scenarios, out):
    """Run training scenarios in all environments and persist learned parameters."""
    plan = _load_plan(config, master_seed=seed, scenarios_per_env=scenarios)
    train_all(plan, out)
    click.echo(f"trained {len(all_environment_states())} environments -> {out}")


@main.command()
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON config file; command line flags override it.")
@click.option("--store", type=click.Path(file_okay=False, exists=True), required=True,
              help="Experience store directory written by `train` (the `store/` subdir).")
@click.option("--method", type=click.Choice(METHODS), required=True)
@click.option("--env", "env_label", required=True,
              help="Held-out environment label, e.g. no_med_normal.")
@click.option("--effort", type=int, default=None,
              help="Training subset size (ignored for explicit_training).")
@click.option("--draw", type=int, default=0, show_default=True,
              help="Subset draw index.")
@click.option("--trials", type=int, default=None, help="Evaluation trials.")
def evaluate(seed, config, store, method, env_label, effort, draw, trials):
    """Evaluate one method on one held-out environment and print mean metrics."""
    plan = _load_plan(config, master_seed=seed, eval_trials_per_env=trials)
    trained = load_store(store, plan)
    env = {e.label: e for e in all_environment_states()}.get(env_label)
    if env is None:
        raise click.BadParameter(f"unknown environment label {env_label!r}", param_hint="--env")
    subset = None
    if method != "explicit_training":
        if effort is None:
            raise click.BadParameter("--effort is required for subset methods",
                                     param_hint="--effort")
        from .bench import draw_subset

        subset = draw_subset(plan, effort, draw)
        if env.index in subset:
            raise click.ClickException(
                f"environment {env_label} is inside the drawn subset; pick another draw"
            )
    results = evaluate_method(method, env, subset, trained, plan)
    n = len(results)
    means = {
        "collision_risk": sum(m.collision_risk for _, _, m in results) / n,
        "discomfort": sum(m.discomfort for _, _, m in results) / n,
        "time_taken": sum(m.time_taken for _, _, m in results) / n,
        "collision_rate": sum(m.collided for _, _, m in results) / n,
        "timeout_rate": sum(m.timeout for _, _, m in results) / n,
    }
    click.echo(json.dumps({"method": method, "env": env_label, "trials": n, **means},
                          indent=2, sort_keys=True))


@main.command()
@click.option("--seed", type=int, default=None, help="Master seed.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON config file; command line flags override it.")
@click.option("--efforts", default=None,
              help="Comma-separated training subset sizes, e.g. 3,6,9.")
@click.option("--scenarios", type=int, default=None,
              help="Training scenarios per environment.")
@click.option("--trials", type=int, default=None,
              help="Evaluation trials per held-out environment.")
@click.option("--draws", type=int, default=None, help="Subset draws per effort.")
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Output directory for CSVs, summary, and the trained store.")
def sweep(seed, config, efforts, scenarios, trials, draws, out):
    """Train once, then evaluate every method over the full effort grid."""
    parsed_efforts = None
    if efforts is not None:
        parsed_efforts = tuple(int(part) for part in efforts.split(",") if part.strip())
    plan = _load_plan(
        config,
        master_seed=seed,
        training_efforts=parsed_efforts,
        scenarios_per_env=scenarios,
        eval_trials_per_env=trials,
        subset_draws=draws,
    )
    result = run_experiment(plan, out)
    click.echo(f"wrote {result.raw_csv}")
    click.echo(f"wrote {result.aggregate_csv}")
    click.echo(f"wrote {result.summary_md}")


if __name__ == "__main__":
    main()
