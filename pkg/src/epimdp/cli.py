"""Command-line entry point: data generation, simulation, search, training.

Every subcommand reads the same JSON config (see ``epimdp.config``), writes
its outputs under one directory, and drops a ``manifest.json`` recording the
command, package version, config digest and master seed — enough to re-run
the exact same computation.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from epimdp import __version__
from epimdp.errors import ConfigError, EpimdpError

_CONFIG_ARG = click.argument(
    "config_path", metavar="CONFIG", type=click.Path(dir_okay=False)
)


@click.group(name="epimdp")
@click.version_option(version=__version__, prog_name="epimdp")
@click.option("--threads", type=int, default=None,
              help="Cap the number of worker threads (default: all cores).")
def cli(threads):
    """Epidemic metapopulation simulator and school-closure policy tools."""
    if threads is not None:
        if threads < 1:
            raise click.BadParameter("--threads must be at least 1")
        import numba

        numba.set_num_threads(threads)


def main(argv=None) -> int:
    """Console entry point returning the process exit code."""
    try:
        cli(args=argv, standalone_mode=False)
    except EpimdpError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        return 130
    return 0


def _outdir(out, extras) -> Path:
    path = Path(out or extras.get("output", "epimdp-out"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(outdir: Path, command: str, seed, outputs,
                    digest=None, **parameters) -> None:
    def rel(path) -> str:
        try:
            return str(Path(path).relative_to(outdir))
        except ValueError:
            return str(path)

    manifest = {
        "command": command,
        "version": __version__,
        "config_digest": digest,
        "seed": seed,
        "parameters": parameters,
        "outputs": sorted(rel(o) for o in outputs),
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _load(config_path):
    from epimdp.config import config_digest, load_config

    config, extras = load_config(config_path)
    return config, extras, config_digest(config)


def _parse_grid(text: str) -> list:
    """Either 'start:stop:step' (stop inclusive) or a comma-separated list."""
    if ":" in text:
        start, stop, step = (float(t) for t in text.split(":"))
        if step <= 0:
            raise click.BadParameter(f"grid step must be positive in {text!r}")
        values = np.arange(start, stop + step / 2, step)
        return [round(float(v), 12) for v in values]
    return [float(t) for t in text.split(",")]


def _pick_budget(option_value, extras) -> int:
    budget = option_value if option_value is not None else extras.get("budget", 6)
    return int(budget)


def _controlled_ids(config, extras) -> list:
    ids = extras.get("controlled")
    if ids is None:
        ids = [c.district_id for c in config.censuses]
    return list(ids)


@cli.command("gen-data")
@click.option("--districts", type=int, required=True, help="How many districts.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--pop-median", type=float, default=2e5, show_default=True)
@click.option("--density", type=float, default=0.05, show_default=True,
              help="Fraction of district pairs with a commute flow.")
@click.option("--flux-mean", type=float, default=2.5e-5, show_default=True,
              help="Mean commute fraction on kept pairs.")
def gen_data(districts, seed, out, pop_median, density, flux_mean):
    """Generate synthetic census, mobility and contact-matrix files."""
    from epimdp.datagen import SyntheticSpec, generate, write_files

    try:
        spec = SyntheticSpec(districts=districts, pop_median=pop_median,
                             density=density, flux_mean=flux_mean)
    except ValueError as exc:
        raise click.BadParameter(str(exc))
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = write_files(generate(spec, seed), outdir)
    _write_manifest(outdir, "gen-data", seed, paths.values(),
                    districts=districts, pop_median=pop_median,
                    density=density, flux_mean=flux_mean)
    for name, path in sorted(paths.items()):
        click.echo(f"{name}: {path}")


@cli.command("simulate")
@_CONFIG_ARG
@click.option("--runs", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--deterministic", is_flag=True,
              help="Disable noise and expected-value the arrival thresholds.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def simulate_cmd(config_path, runs, seed, deterministic, out):
    """Run full-horizon simulations and write per-run trajectory CSVs."""
    from epimdp.metapop import simulate

    if runs < 1:
        raise ConfigError("--runs must be at least 1")
    config, extras, digest = _load(config_path)
    outdir = _outdir(out, extras)
    outputs = []
    summaries = []
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(runs)):
        traj = simulate(config, seed=child, deterministic=deterministic)
        run_csv = outdir / f"run_{k:03d}.csv"
        traj.to_csv(run_csv)
        outputs.append(run_csv)
        summaries.append(traj.summary())
    aggregate = {
        "runs": runs,
        "mean_attack_rate": float(np.mean([s["attack_rate"] for s in summaries])),
        "mean_peak_day": float(np.mean([s["peak_day"] for s in summaries])),
        "per_run": summaries,
    }
    summary_json = outdir / "summary.json"
    summary_json.write_text(json.dumps(aggregate, indent=2) + "\n")
    outputs.append(summary_json)
    _write_manifest(outdir, "simulate", seed, outputs, digest=digest,
                    runs=runs, deterministic=deterministic)
    click.echo(
        f"{runs} run(s): mean attack rate {aggregate['mean_attack_rate']:.4f}, "
        f"mean peak day {aggregate['mean_peak_day']:.1f}"
    )


@cli.command("calibrate")
@_CONFIG_ARG
@click.option("--r0", "r0_grid", default="1.4:2.4:0.2", show_default=True,
              help="R0 grid, 'start:stop:step' or comma list.")
@click.option("--mu", "mu_grid", default=None,
              help="Coupling-exponent grid (comma list); default: calibrated.")
@click.option("--runs", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def calibrate(config_path, r0_grid, mu_grid, runs, seed, out):
    """Sweep R0 (and optionally mu) recording mean peak day and attack rate."""
    from dataclasses import replace

    from epimdp.metapop import simulate

    config, extras, digest = _load(config_path)
    outdir = _outdir(out, extras)
    r0_values = _parse_grid(r0_grid)
    mu_values = _parse_grid(mu_grid) if mu_grid else [None]
    rows = []
    for r0 in r0_values:
        for mu in mu_values:
            cell = replace(config, r0=r0, mu=mu)
            peaks, rates = [], []
            for child in np.random.SeedSequence(seed).spawn(runs):
                traj = simulate(cell, seed=child)
                peaks.append(traj.peak_day)
                rates.append(traj.attack_rate)
            rows.append((r0, mu, float(np.mean(peaks)), float(np.mean(rates))))
            click.echo(
                f"r0={r0:g} mu={'auto' if mu is None else f'{mu:g}'}: "
                f"mean peak day {rows[-1][2]:.1f}, "
                f"mean attack rate {rows[-1][3]:.4f}"
            )
    grid_csv = outdir / "peak_day_grid.csv"
    with open(grid_csv, "w") as fh:
        fh.write("r0,mu,mean_peak_day,mean_attack_rate\n")
        for r0, mu, peak, rate in rows:
            fh.write(f"{r0!r},{'' if mu is None else repr(mu)},{peak!r},{rate!r}\n")
    _write_manifest(outdir, "calibrate", seed, [grid_csv], digest=digest,
                    r0=r0_values, mu=mu_values, runs=runs)


@cli.command("ground-truth")
@_CONFIG_ARG
@click.option("--weeks", type=int, default=25, show_default=True,
              help="Length of the searched schedule window.")
@click.option("--budget", type=int, default=None,
              help="Maximum closed weeks (default: config value or 6).")
@click.option("--district", default=None,
              help="District id to search (required on multi-patch configs).")
@click.option("--dump", is_flag=True, help="Also write every policy's score.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def ground_truth(config_path, weeks, budget, district, dump, out):
    """Exhaustively score every budget-feasible closure schedule."""
    from epimdp.groundtruth import exhaustive_search

    config, extras, digest = _load(config_path)
    if district is not None:
        config = config.single_district(config.district_index(district))
    budget = _pick_budget(budget, extras)
    outdir = _outdir(out, extras)
    dump_path = outdir / "policies.csv" if dump else None
    result = exhaustive_search(config, weeks, budget, dump_path=dump_path)
    result_json = outdir / "ground_truth.json"
    result_json.write_text(result.to_json() + "\n")
    outputs = [result_json] + ([dump_path] if dump else [])
    _write_manifest(outdir, "ground-truth", None, outputs, digest=digest,
                    weeks=weeks, budget=budget, district=district)
    click.echo(
        f"searched {result.n_evaluated} schedules: best {result.policy} "
        f"improves attack rate by {result.improvement:.4f}"
    )


@cli.command("train")
@_CONFIG_ARG
@click.option("--episodes", type=int, default=10_000, show_default=True)
@click.option("--trials", type=int, default=5, show_default=True)
@click.option("--budget", type=int, default=None,
              help="Closure budget in weeks (default: config value or 6).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def train_cmd(config_path, episodes, trials, budget, seed, out):
    """Train PPO closure policies; keep every trial and mark the best."""
    from epimdp.env import EnvConfig, SchoolClosureEnv
    from epimdp.ppo import PpoHyper, run_trials, save_checkpoint, write_learning_curve

    config, extras, digest = _load(config_path)
    budget = _pick_budget(budget, extras)
    controlled = _controlled_ids(config, extras)
    env = SchoolClosureEnv(EnvConfig.for_districts(config, controlled, budget))
    outdir = _outdir(out, extras)
    hyper = PpoHyper()
    results = run_trials(env, hyper, episodes=episodes, trials=trials, seed=seed)
    outputs = []
    for k, result in enumerate(results):
        ckpt = outdir / f"trial_{k}.bin"
        curve = outdir / f"learning_curve_{k}.csv"
        save_checkpoint(ckpt, result.nets, hyper, result.seed)
        write_learning_curve(curve, result.returns)
        outputs.extend([ckpt, curve])
    scores = [r.final_score for r in results]
    best = int(np.argmax(scores))
    best_ckpt = outdir / "best_policy.bin"
    save_checkpoint(best_ckpt, results[best].nets, hyper, results[best].seed)
    summary = {
        "episodes": episodes,
        "trials": trials,
        "budget": budget,
        "controlled": controlled,
        "final_scores": scores,
        "best_trial": best,
    }
    summary_json = outdir / "train_summary.json"
    summary_json.write_text(json.dumps(summary, indent=2) + "\n")
    outputs.extend([best_ckpt, summary_json])
    _write_manifest(outdir, "train", seed, outputs, digest=digest,
                    episodes=episodes, trials=trials, budget=budget,
                    controlled=controlled)
    click.echo(f"best trial {best} with final score {scores[best]:.5f}")


@cli.command("evaluate")
@_CONFIG_ARG
@click.option("--checkpoint", type=click.Path(dir_okay=False, exists=False),
              required=True)
@click.option("--runs", type=int, default=1000, show_default=True)
@click.option("--budget", type=int, default=None,
              help="Closure budget in weeks (default: config value or 6).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def evaluate_cmd(config_path, checkpoint, runs, budget, seed, out):
    """Measure a checkpoint's attack-rate improvement over open schools."""
    from epimdp.env import EnvConfig, SchoolClosureEnv
    from epimdp.ppo import evaluate_policy, load_checkpoint

    config, extras, digest = _load(config_path)
    budget = _pick_budget(budget, extras)
    controlled = _controlled_ids(config, extras)
    env = SchoolClosureEnv(EnvConfig.for_districts(config, controlled, budget))
    nets, _, _ = load_checkpoint(checkpoint)
    if nets.obs_size != env.config.obs_size:
        raise ConfigError(
            f"checkpoint expects {nets.obs_size} observation features but the "
            f"environment provides {env.config.obs_size}"
        )
    dist = evaluate_policy(env, nets, n=runs, seed=seed)
    outdir = _outdir(out, extras)
    eval_json = outdir / "evaluation.json"
    eval_json.write_text(dist.to_json() + "\n")
    samples_csv = outdir / "improvements.csv"
    with open(samples_csv, "w") as fh:
        fh.write("run,improvement\n")
        for k, v in enumerate(dist.samples):
            fh.write(f"{k},{v!r}\n")
    _write_manifest(outdir, "evaluate", seed, [eval_json, samples_csv],
                    digest=digest, checkpoint=str(checkpoint), runs=runs,
                    budget=budget)
    click.echo(
        f"improvement over {runs} runs: mean {dist.mean:.4f}, "
        f"median {dist.median:.4f}"
    )


@cli.command("communities")
@_CONFIG_ARG
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def communities(config_path, seed, out):
    """Partition the commute graph into communities by modularity."""
    from epimdp.network import build_commute_graph, detect_communities

    config, extras, digest = _load(config_path)
    graph = build_commute_graph(
        config.mobility, ids=[c.district_id for c in config.censuses]
    )
    partition = detect_communities(graph, seed=seed)
    outdir = _outdir(out, extras)
    part_json = outdir / "communities.json"
    part_json.write_text(partition.to_json() + "\n")
    _write_manifest(outdir, "communities", seed, [part_json], digest=digest)
    sizes = partition.sizes()
    click.echo(
        f"{partition.n_communities} communities "
        f"(modularity {partition.modularity:.4f}; "
        f"sizes {sorted(sizes.values(), reverse=True)})"
    )


@cli.command("select-districts")
@_CONFIG_ARG
@click.option("--out", type=click.Path(file_okay=False), default=None)
def select_districts(config_path, out):
    """Pick ten age-structurally diverse districts via simplex geometry."""
    from epimdp.census import select_representative_districts

    config, extras, digest = _load(config_path)
    selected = select_representative_districts(config.censuses)
    outdir = _outdir(out, extras)
    sel_json = outdir / "selected_districts.json"
    sel_json.write_text(
        json.dumps({"center": selected[0], "selected": selected}, indent=2) + "\n"
    )
    _write_manifest(outdir, "select-districts", None, [sel_json], digest=digest)
    click.echo("selected: " + ", ".join(selected))
