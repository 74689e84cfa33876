"""Experiment subcommands. Every run writes its artifacts and a ``manifest.cfg``
under ``<output>/<command>/``; ``--config manifest.cfg`` reruns it."""
import functools
import hashlib
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import click
import numpy as np
from pydantic import ValidationError
from scipy import stats

from ..core import gradcheck as fd
from ..core.ebcq import EDIT_PRESETS, compose
from ..core.ebcu import GAMMA_GRID, emphasize
from ..core.hopfield import attention_forward, hopfield_iterate
from ..diffusion import (
    DenoiserShape,
    ToyDenoiser,
    batch_loss,
    context_shift,
    gradient_check,
    inpaint,
    load_checkpoint,
    make_batch,
    make_dataset,
    neglect_score,
    region_mask,
    sample,
    save_checkpoint,
    template_correlation,
    train,
)
from ..diffusion.data import TOKENS, compose_grid
from ..diffusion.denoiser import PROMPT_TOKENS
from ..diffusion.sampler import TRAJECTORY_STREAM
from ..errors import CheckFailure, ConfigError, EnergyAttentionError
from ..models import ContextSet, NoiseSchedule, PatternStore, RunConfig, ScheduleSpec, UpdateConfig, compare_traces
from ..models.run_config import SCHEDULE_NAMES, VARIANTS
from ..utils import csvio, svg
from ..utils.log import logger
from ..utils.rng import make_rng
from .runner import run_seeds

MANIFEST = "manifest.cfg"
DENOISER_TOL = 1e-4
MONOTONE_TOL = 1e-12
HELD_OUT_SIZE = 64

# generator streams under the run seed; 0 and 1 belong to the sampler
DATASET_STREAM = 2
INIT_STREAM = 3
TRAIN_STREAM = 4
HELD_OUT_STREAM = 5
HOPFIELD_STREAM = 6
GRADCHECK_STREAM = 7

DEFAULT_SEEDS = {"gradcheck": 100, "energy-trace": 30, "neglect": 20}
MASKLESS = ("gradcheck", "train", "hopfield-demo", "dataset")


class ExitCodeGroup(click.Group):
    """Reports library errors on stderr and exits with their code."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except EnergyAttentionError as exc:
            click.echo(f"error: {exc.detail}", err=True)
            ctx.exit(exc.exit_code)


def run_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="key = value run config."),
        click.option("--seed", type=int, help="First seed."),
        click.option("--seeds", type=int, help="Number of consecutive seeds."),
        click.option("--steps", type=int, help="Sampling steps T."),
        click.option("--gamma-attn", type=float),
        click.option("--gamma-reg", type=float),
        click.option("--alpha-s", help="Comma-separated composition weights, one per prompt concept."),
        click.option("--schedule", type=click.Choice(list(SCHEDULE_NAMES))),
        click.option("--tau", type=int),
        click.option("--lambda", "lam", type=float),
        click.option("--mask", type=click.Path(exists=True, dir_okay=False), help="CSV of 0/1 per token, 1 = generate."),
        click.option("--variant", type=click.Choice(VARIANTS)),
        click.option("--output", type=click.Path(file_okay=False)),
        click.option("--checkpoint", type=click.Path(dir_okay=False)),
        click.option("--workers", type=int),
        click.option("--set", "assignments", multiple=True, metavar="KEY=VALUE", help="Override any config key."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def resolve(config_path: Optional[str], assignments: Sequence[str], **flags) -> RunConfig:
    """Config file, then --set assignments, then explicit flags."""
    text = Path(config_path).read_text() if config_path else ""
    overrides = {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError("expected KEY=VALUE", key=item)
        key, value = item.split("=", 1)
        overrides[key.strip().replace("-", "_")] = value.strip()
    for key, value in flags.items():
        if value is not None:
            overrides["lambda" if key == "lam" else key] = value
    try:
        return RunConfig.from_cfg(text, overrides)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(err["msg"], key=".".join(str(p) for p in err["loc"]) or None) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def start(run: RunConfig, command: str) -> Path:
    if run.mask is not None and command in MASKLESS:
        raise ConfigError(f"{command} takes no mask", key="mask")
    out = Path(run.output) / command
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST).write_text(run.to_cfg())
    logger.info("Writing %s artifacts to %s", command, out)
    return out


def seed_list(run: RunConfig, command: str) -> List[int]:
    count = run.seeds if run.seeds is not None else DEFAULT_SEEDS.get(command, 1)
    return list(range(run.seed, run.seed + count))


def noise_schedule(run: RunConfig) -> NoiseSchedule:
    return NoiseSchedule.linear(run.steps, run.beta_start, run.beta_end)


def load_mask(run: RunConfig) -> Optional[np.ndarray]:
    """The --mask CSV as one 0/1 entry per grid token, 1 = generate."""
    if run.mask is None:
        return None
    mask = csvio.load_matrix(Path(run.mask)).ravel()
    if mask.size != TOKENS:
        raise ConfigError(f"{mask.size} entries for a grid of {TOKENS} tokens", key="mask")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ConfigError("entries must be 0 or 1", key="mask")
    return mask


def update_config(run: RunConfig, enabled: bool = True) -> UpdateConfig:
    gamma_attn = run.gamma_attn
    if run.emphasize is not None:
        if run.emphasize >= PROMPT_TOKENS:
            raise ConfigError(f"token index must be below {PROMPT_TOKENS}", key="emphasize")
        gamma_attn = emphasize(run.gamma_attn, PROMPT_TOKENS, run.emphasize)
    mask = load_mask(run)
    cfg = UpdateConfig(
        alpha=run.alpha,
        gamma_attn=gamma_attn,
        gamma_reg=run.gamma_reg,
        schedule=ScheduleSpec(kind=SCHEDULE_NAMES[run.schedule], tau=run.tau, lam=run.lam),
        mask=None if mask is None else tuple(float(m) for m in mask),
    )
    return cfg if enabled else cfg.disabled()


class Variant(NamedTuple):
    name: str
    cfg: UpdateConfig
    contexts: Optional[ContextSet]


def variants(run: RunConfig, denoiser: ToyDenoiser, composed: bool = False) -> List[Variant]:
    """The baseline, then the run's variant unless it is the baseline.

    The EBCU switch turns the context update on; the EBCQ switch replaces the
    prompt's single context by one composed context per concept. With
    ``composed`` both runs use the composed contexts and the variant only
    toggles the update.
    """
    contexts = composed_contexts(run, denoiser) if composed or run.ebcq else None
    out = [Variant("baseline", update_config(run, enabled=False), contexts if composed else None)]
    if run.variant != "baseline" and (run.ebcu or not composed):
        out.append(Variant(run.variant, update_config(run, enabled=run.ebcu), contexts))
    return out


def treated(run: RunConfig, denoiser: ToyDenoiser) -> Variant:
    if run.variant == "baseline":
        raise ConfigError("a paired comparison needs a variant other than the baseline", key="variant")
    return variants(run, denoiser)[1]


def digest(grid: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(grid).tobytes()).hexdigest()[:16]


def prompt_correlations(grid: np.ndarray, prompt: Sequence[int]) -> List[Tuple[int, str, float]]:
    if len(prompt) == 2:
        pairs = [(prompt[0], "top"), (prompt[1], "bottom")]
    else:
        pairs = [(c, "full") for c in prompt]
    return [(c, region, template_correlation(grid, c, region)) for c, region in pairs]


# per-seed jobs; top level so the worker pool can pickle them

def _sample_job(seed: int, denoiser, prompt, schedule, cfg, contexts=None):
    return sample(denoiser, prompt, schedule, cfg, seed, contexts=contexts)


def _paired_job(seed: int, denoiser, prompt, schedule, base: Variant, other: Variant):
    return (
        sample(denoiser, prompt, schedule, base.cfg, seed, contexts=base.contexts),
        sample(denoiser, prompt, schedule, other.cfg, seed, contexts=other.contexts),
    )


def _searched_job(seed: int, denoiser, prompt, schedule, base: Variant, other: Variant):
    """Paired samples; the treated one keeps the gamma_attn of GAMMA_GRID with the best neglect score."""
    first = sample(denoiser, prompt, schedule, base.cfg, seed, contexts=base.contexts)
    best = None
    for gamma in GAMMA_GRID:
        cfg = other.cfg.model_copy(update={"gamma_attn": gamma})
        result = sample(denoiser, prompt, schedule, cfg, seed, contexts=other.contexts)
        score = neglect_score(result[0], prompt)
        if best is None or score > best[0]:
            best = (score, gamma, result)
    return first, best[2], best[1]


def _inpaint_job(seed: int, denoiser, known, mask, prompt, schedule, cfg, contexts=None):
    return inpaint(denoiser, known, mask, prompt, schedule, cfg, seed, contexts=contexts)


def _shift_job(seed: int, denoiser, prompt, schedule, cfg, contexts=None):
    plain, _ = sample(denoiser, prompt, schedule, cfg.disabled(), seed)
    return plain, context_shift(denoiser, prompt, schedule, cfg, seed, contexts=contexts)


@click.group(cls=ExitCodeGroup)
def cli():
    """Energy-based cross-attention experiments on a toy diffusion model."""


@cli.command("gradcheck")
@run_options
def cmd_gradcheck(**kwargs):
    """Finite-difference checks of every analytic gradient."""
    run = resolve(**kwargs)
    out = start(run, "gradcheck")
    sizes = fd.SizeSpec(max_keys=run.max_keys, max_queries=run.max_queries, max_dim=run.max_dim)
    results = fd.run_suite(len(seed_list(run, "gradcheck")), sizes, run.tolerance)
    denoiser = ToyDenoiser.initialize(make_rng(run.seed, INIT_STREAM))
    error = gradient_check(denoiser, make_rng(run.seed, GRADCHECK_STREAM))
    results.append(fd.CheckResult("denoiser_backprop", 1, error, run.seed, DENOISER_TOL))

    csvio.write_rows(
        out / "gradcheck.csv",
        ("check", "seeds", "max_rel_error", "worst_seed", "tolerance", "passed"),
        ((r.check, r.seeds, r.max_rel_error, r.worst_seed, r.tolerance, int(r.passed)) for r in results),
    )
    for r in results:
        click.echo(f"{r.check:24s} {r.max_rel_error:.3e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    if failed:
        r = failed[0]
        raise CheckFailure(r.check, r.worst_seed, r.max_rel_error, r.tolerance)


@cli.command("energy-trace")
@run_options
def cmd_energy_trace(**kwargs):
    """Paired baseline/variant sampling; per-cell conditional energy and the cumulative posterior gap."""
    run = resolve(**kwargs)
    out = start(run, "energy-trace")
    denoiser = load_checkpoint(run.checkpoint)
    base, other = variants(run, denoiser)[0], treated(run, denoiser)
    job = functools.partial(
        _paired_job, denoiser=denoiser, prompt=run.prompt, schedule=noise_schedule(run), base=base, other=other,
    )
    results = run_seeds(job, seed_list(run, "energy-trace"), run.workers)

    rows = []
    for seed, ((_, base_trace), (_, trace)) in results:
        rows.extend((seed, r.t, r.layer, base.name, r.e_cond, r.e_prior) for r in base_trace.records)
        rows.extend((seed, r.t, r.layer, other.name, r.e_cond, r.e_prior) for r in trace.records)
    csvio.write_rows(out / "traces.csv", ("seed", "t", "layer", "variant", "e_cond", "e_prior"), rows)

    cmp = compare_traces([b for _, ((_, b), _) in results], [e for _, (_, (_, e)) in results])
    csvio.write_rows(
        out / "summary.csv",
        ("t", "layer", "mean_baseline", "std_baseline", f"mean_{other.name}", f"std_{other.name}"),
        (
            (t, layer, cmp.mean_baseline[i], cmp.std_baseline[i], cmp.mean_ebcu[i], cmp.std_ebcu[i])
            for i, (t, layer) in enumerate(cmp.cells)
        ),
    )
    csvio.write_rows(out / "cumulative.csv", ("t", "cumulative_gap"), zip(cmp.steps, cmp.cumulative_gap))
    svg.write_plot(
        out / "energy.svg",
        [svg.Series("baseline", cmp.mean_baseline, cmp.std_baseline), svg.Series(other.name, cmp.mean_ebcu, cmp.std_ebcu)],
        "Conditional energy per (step, layer)", "cell (step-major)", "E(Q;K)",
    )
    svg.write_plot(
        out / "cumulative.svg",
        [svg.Series(f"baseline - {other.name}", cmp.cumulative_gap)],
        "Cumulative posterior-energy difference", "sampling step", "sum of gaps",
    )
    click.echo(
        f"fraction of cells with lower {other.name.upper()} energy: {cmp.fraction_lower:.3f} "
        f"({len(cmp.cells)} cells, {len(results)} seeds); "
        f"min cumulative gap {float(np.min(cmp.cumulative_gap)):.4g}"
    )


@cli.command("train")
@run_options
def cmd_train(**kwargs):
    """Train the toy denoiser on the synthetic dataset and save a checkpoint."""
    run = resolve(**kwargs)
    out = start(run, "train")
    schedule = noise_schedule(run)
    dataset = make_dataset(run.dataset_size, make_rng(run.seed, DATASET_STREAM))
    denoiser = ToyDenoiser.initialize(make_rng(run.seed, INIT_STREAM), DenoiserShape(T=run.steps))
    held_out = make_batch(
        make_dataset(HELD_OUT_SIZE, make_rng(run.seed, HELD_OUT_STREAM)),
        denoiser,
        schedule,
        make_rng(run.seed, HELD_OUT_STREAM, 1),
    )
    before = batch_loss(denoiser, held_out)
    trained = train(
        dataset, denoiser, schedule, run.train_steps, make_rng(run.seed, TRAIN_STREAM),
        lr=run.lr, batch_size=run.batch_size, seed=run.seed,
    )
    after = batch_loss(trained, held_out)
    save_checkpoint(Path(run.checkpoint), trained)
    csvio.write_rows(
        out / "train.csv",
        ("metric", "value"),
        [
            ("parameters", trained.parameter_count),
            ("steps", run.train_steps),
            ("held_out_initial", before),
            ("held_out_final", after),
            ("loss_ratio", after / before),
        ],
    )
    click.echo(f"held-out loss {before:.4f} -> {after:.4f} (ratio {after / before:.3f}); checkpoint {run.checkpoint}")


def _write_samples(out: Path, name: str, results, prompt: Sequence[int]) -> List[Tuple]:
    rows = []
    for seed, (grid, trace) in results:
        csvio.dump_matrix(out / f"{name}_{seed}.csv", grid)
        (out / f"trace_{name}_{seed}.csv").write_text(trace.to_csv())
        click.echo(f"seed {seed} {name} sha256={digest(grid)}")
        rows.extend((seed, name, c, region, corr) for c, region, corr in prompt_correlations(grid, prompt))
    return rows


@cli.command("sample")
@run_options
def cmd_sample(**kwargs):
    """Sample grids for a prompt of one or two concepts, baseline first."""
    run = resolve(**kwargs)
    out = start(run, "sample")
    denoiser = load_checkpoint(run.checkpoint)
    schedule = noise_schedule(run)
    rows = []
    for name, cfg, contexts in variants(run, denoiser):
        job = functools.partial(_sample_job, denoiser=denoiser, prompt=run.prompt, schedule=schedule, cfg=cfg, contexts=contexts)
        rows += _write_samples(out, name, run_seeds(job, seed_list(run, "sample"), run.workers), run.prompt)
    csvio.write_rows(out / "correlations.csv", ("seed", "variant", "concept", "region", "correlation"), rows)


def composed_contexts(run: RunConfig, denoiser: ToyDenoiser) -> ContextSet:
    """One context per prompt concept; weights from the preset, else alpha_s, else all ones."""
    contexts = [denoiser.context_matrix([c]) for c in run.prompt]
    if run.preset is not None:
        if run.preset not in EDIT_PRESETS:
            raise ConfigError(f"unknown preset, expected one of {', '.join(EDIT_PRESETS)}", key="preset")
        if len(contexts) != 3:
            raise ConfigError("a preset needs main,source,target concepts", key="prompt")
        return EDIT_PRESETS[run.preset].context_set(*contexts)
    alphas = run.alpha_s if run.alpha_s is not None else (1.0,) * len(contexts)
    if len(alphas) != len(contexts):
        raise ConfigError(f"{len(alphas)} weights for {len(contexts)} concepts", key="alpha_s")
    return ContextSet.compose(contexts, alphas, [str(c) for c in run.prompt])


@cli.command("compose")
@run_options
def cmd_compose(**kwargs):
    """Weighted composition over one context per prompt concept; negative weights negate."""
    run = resolve(**kwargs)
    out = start(run, "compose")
    denoiser = load_checkpoint(run.checkpoint)
    schedule = noise_schedule(run)
    contexts = composed_contexts(run, denoiser)

    x_T = make_rng(run.seed, TRAJECTORY_STREAM).normal(size=(denoiser.shape.tokens, denoiser.shape.channels))
    w, _ = denoiser.layer(0)
    Q = denoiser.embed_input(x_T, schedule.T) @ w.W_Q
    members = contexts.members(0)
    outputs = [attention_forward(Q, contexts.contexts[s] @ w.W_K, contexts.contexts[s] @ w.W_V, denoiser.beta) for s in members]
    contribution = float(np.max(np.abs(compose(outputs, [contexts.alphas[s] for s in members]))))
    logger.info("Composed attention contribution at the first layer: max |.| = %.3g", contribution)
    click.echo(f"first-layer composed attention max |.| = {contribution:.3g}")

    rows = []
    for name, cfg, ctx in variants(run, denoiser, composed=True):
        job = functools.partial(_sample_job, denoiser=denoiser, prompt=run.prompt, schedule=schedule, cfg=cfg, contexts=ctx)
        rows += _write_samples(out, name, run_seeds(job, seed_list(run, "compose"), run.workers), run.prompt)
    csvio.write_rows(out / "correlations.csv", ("seed", "variant", "concept", "region", "correlation"), rows)


@cli.command("inpaint")
@run_options
def cmd_inpaint(**kwargs):
    """Regenerate the masked tokens of a known grid."""
    run = resolve(**kwargs)
    out = start(run, "inpaint")
    denoiser = load_checkpoint(run.checkpoint)
    known = csvio.load_matrix(Path(run.known)) if run.known else compose_grid(run.known_concepts)
    mask = load_mask(run)
    mask = mask if mask is not None else region_mask(run.region)
    rows = []
    for name, cfg, contexts in variants(run, denoiser):
        job = functools.partial(
            _inpaint_job, denoiser=denoiser, known=known, mask=mask,
            prompt=run.prompt, schedule=noise_schedule(run), cfg=cfg, contexts=contexts,
        )
        for seed, grid in run_seeds(job, seed_list(run, "inpaint"), run.workers):
            csvio.dump_matrix(out / f"inpaint_{name}_{seed}.csv", grid)
            click.echo(f"seed {seed} {name} sha256={digest(grid)}")
            if run.mask is None:
                rows.append((seed, name, run.prompt[0], run.region, template_correlation(grid, run.prompt[0], run.region)))
    if rows:
        csvio.write_rows(out / "correlations.csv", ("seed", "variant", "concept", "region", "correlation"), rows)


@cli.command("context-shift")
@run_options
def cmd_context_shift(**kwargs):
    """Resample each seed with the final updated context held fixed under plain attention."""
    run = resolve(**kwargs)
    out = start(run, "context-shift")
    denoiser = load_checkpoint(run.checkpoint)
    other = treated(run, denoiser)
    if not run.ebcu:
        raise ConfigError("the context shift needs the context update", key="variant")
    job = functools.partial(
        _shift_job, denoiser=denoiser, prompt=run.prompt, schedule=noise_schedule(run),
        cfg=other.cfg, contexts=other.contexts,
    )
    rows, shifts = [], []
    for seed, (plain, shift) in run_seeds(job, seed_list(run, "context-shift"), run.workers):
        csvio.dump_matrix(out / f"context_{seed}.csv", shift.context)
        shifts.append((seed, shift.relative_shift))
        for name, grid in (("baseline", plain), (other.name, shift.updated), ("shifted", shift.grid)):
            rows.extend((seed, name, c, region, corr) for c, region, corr in prompt_correlations(grid, run.prompt))
    csvio.write_rows(out / "context_shift.csv", ("seed", "context", "concept", "region", "correlation"), rows)
    csvio.write_rows(out / "shift.csv", ("seed", "relative_shift"), shifts)
    for name in ("baseline", other.name, "shifted"):
        mean = float(np.mean([r[4] for r in rows if r[1] == name]))
        click.echo(f"{name:10s} mean template correlation {mean:.3f}")
    click.echo(f"mean relative context shift {float(np.mean([s for _, s in shifts])):.3g}")


@cli.command("hopfield-demo")
@run_options
def cmd_hopfield_demo(**kwargs):
    """Iterate the Hopfield update from a random state; energies must not increase."""
    run = resolve(**kwargs)
    out = start(run, "hopfield-demo")
    rng = make_rng(run.seed, HOPFIELD_STREAM)
    store = PatternStore(rng.normal(size=(run.dim, run.patterns)), run.hopfield_beta)
    result = hopfield_iterate(rng.normal(size=run.dim), store)
    csvio.write_rows(out / "hopfield.csv", ("iteration", "energy"), enumerate(result.energies))
    rise = float(np.max(np.diff(result.energies), initial=0.0))
    click.echo(f"{result.iterations} iterations, converged={result.converged}, largest energy increase {rise:.3g}")
    if rise > MONOTONE_TOL:
        raise CheckFailure("hopfield_energy_monotone", run.seed, rise, MONOTONE_TOL)


@cli.command("dataset")
@run_options
def cmd_dataset(**kwargs):
    """Write the synthetic training set as CSV."""
    run = resolve(**kwargs)
    out = start(run, "dataset")
    samples = make_dataset(run.dataset_size, make_rng(run.seed, DATASET_STREAM))
    csvio.dump_dataset(out / "dataset.csv", samples)
    click.echo(f"{len(samples)} samples written to {out / 'dataset.csv'}")


@cli.command("neglect")
@run_options
def cmd_neglect(**kwargs):
    """Weaker-concept template correlation of paired baseline/variant samples, with a sign test."""
    run = resolve(**kwargs)
    if len(run.prompt) != 2:
        raise ConfigError("the neglect proxy needs a two-concept prompt", key="prompt")
    if run.gamma_search and (not run.ebcu or run.emphasize is not None):
        raise ConfigError("the step-size search needs the context update with one rate for every token", key="gamma_search")
    out = start(run, "neglect")
    denoiser = load_checkpoint(run.checkpoint)
    base, other = variants(run, denoiser)[0], treated(run, denoiser)
    job = functools.partial(
        _searched_job if run.gamma_search else _paired_job,
        denoiser=denoiser, prompt=run.prompt, schedule=noise_schedule(run), base=base, other=other,
    )
    rows = []
    for seed, result in run_seeds(job, seed_list(run, "neglect"), run.workers):
        (base_grid, _), (grid, _) = result[:2]
        gamma = result[2] if run.gamma_search else run.gamma_attn
        score_base, score = neglect_score(base_grid, run.prompt), neglect_score(grid, run.prompt)
        rows.append((seed, other.name, score_base, score, gamma, int(score > score_base)))
    csvio.write_rows(out / "neglect.csv", ("seed", "variant", "baseline", "treated", "gamma_attn", "treated_higher"), rows)
    wins = sum(r[5] for r in rows)
    p = stats.binomtest(wins, len(rows), 0.5, alternative="greater").pvalue
    click.echo(f"{other.name.upper()} higher on {wins}/{len(rows)} seeds (sign test p = {p:.3g})")
