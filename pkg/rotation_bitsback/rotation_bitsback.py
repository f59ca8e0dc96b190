"""Main entry point for the rotation_bitsback CLI."""

import functools
import sys

import click

from components.accounting import accounting, container_report, headless_ratio
from components.canonical import canonicalize
from components.codec import decode_model, encode_model
from components.container import CONTAINER_MAGIC, load_container, save_container
from components.errors import FormatError, NumericalError, Underflow, UsageError
from components.model import generate, load_weights, save_weights
from components.stats import (
    STREAM_SWEEP_THRESHOLDS,
    SWEEP_PARAMETERS,
    compare_models,
    error_stats,
    sweep_lines,
    threshold_sweep,
)
from utils import validation
from utils.config import (
    PRESETS,
    apply_overrides,
    apply_preset,
    codec_config,
    load_config,
    model_dims,
)
from utils.logger import Logger, get_level_from_env

logger = Logger(__name__, level=get_level_from_env())

EXIT_VERIFY_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_NUMERICAL_ERROR = 3
DEFAULT_RATES = (0.7, 0.75, 0.8, 1.0)


def handle_errors(command):
    """Turns codec errors into log lines and exit codes."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        """Runs the command, exiting with the code of any codec error."""
        logger.info(f"Running {command.__name__}")
        try:
            return command(*args, **kwargs)
        except (FormatError, UsageError, OSError) as e:
            logger.error(f"{type(e).__name__}: {e}")
            sys.exit(EXIT_INPUT_ERROR)
        except (NumericalError, Underflow) as e:
            logger.error(f"{type(e).__name__}: {e}")
            sys.exit(EXIT_NUMERICAL_ERROR)

    return wrapper


def echo_lines(lines):
    """Prints each line to stdout."""
    for line in lines:
        click.echo(line)


def validated(config: dict) -> dict:
    """Returns ``config`` if it validates, exits with the input-error code otherwise."""
    if not validation.validate_config_values(config):
        logger.error("Configuration validation failed.")
        sys.exit(EXIT_INPUT_ERROR)
    return config


def with_codec_flags(command):
    """Adds the codec threshold and width flags shared by encode, stats and account."""
    command = click.option(
        "--tau-stream", type=float, default=None, help="Buried-symbol correction threshold."
    )(command)
    command = click.option(
        "--tau-weights", type=float, default=None, help="Weight correction threshold."
    )(command)
    command = click.option(
        "--lambda-width",
        type=click.Choice(["16", "32"]),
        default=None,
        help="Bits per eigenvalue symbol.",
    )(command)
    return command


def codec_overrides(ctx, lambda_width, tau_weights, tau_stream) -> dict:
    """Context config with the codec flags that were given written in, validated."""
    config = apply_overrides(
        ctx.obj["config"],
        "codec",
        lambda_width=int(lambda_width) if lambda_width else None,
        tau_weights=tau_weights,
        tau_stream=tau_stream,
    )
    return validated(config)


def load_target(path: str):
    """Loads an SWC1 weight file, or decodes an SBB1 container."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == CONTAINER_MAGIC:
        logger.info(f"Decoding container {path}")
        return decode_model(load_container(path))
    return load_weights(path)


@click.group()
@click.pass_context
@click.option("--config", default=None, help="Path to a JSON configuration file.")
@click.option(
    "--preset", type=click.Choice(sorted(PRESETS)), default=None, help="Threshold preset."
)
def cli(ctx, config, preset):
    """Bits-back coding of rotation-symmetric transformer weights."""
    ctx.ensure_object(dict)
    try:
        loaded = apply_preset(load_config(config), preset)
    except FileNotFoundError:
        logger.error(f"Config file not found at {config}")
        sys.exit(EXIT_INPUT_ERROR)
    except UsageError as e:
        logger.error(str(e))
        sys.exit(EXIT_INPUT_ERROR)
    ctx.obj["config"] = validated(loaded)


@cli.command()
@click.pass_context
@click.option("--layers", type=int, default=None, help="Number of blocks L.")
@click.option("--hidden", type=int, default=None, help="Hidden width D.")
@click.option("--ffn", type=int, default=None, help="MLP width F.")
@click.option("--vocab", type=int, default=None, help="Vocabulary size V.")
@click.option("--seq", type=int, default=None, help="Maximum sequence length.")
@click.option("--biases/--no-biases", default=None, help="Include bias vectors.")
@click.option("--seed", type=int, default=None, help="Generator seed.")
@click.option("--out", required=True, help="Output SWC1 file.")
@handle_errors
def gen(ctx, layers, hidden, ffn, vocab, seq, biases, seed, out):
    """Generates a synthetic sliced transformer."""
    config = validated(
        apply_overrides(
            ctx.obj["config"],
            "model",
            layers=layers,
            hidden=hidden,
            ffn=ffn,
            vocab=vocab,
            seq=seq,
            has_biases=biases,
            seed=seed,
        )
    )
    dims = model_dims(config)
    model = generate(dims, config["model"]["seed"])
    save_weights(model, out)
    logger.info(f"Wrote {dims.parameter_count} parameters to {out}")
    echo_lines([f"parameters={dims.parameter_count}", f"payload_bits={16 * dims.parameter_count}"])


@cli.command()
@click.argument("source")
@click.argument("out")
@handle_errors
def canon(source, out):
    """Rotates a model to its canonical direction."""
    model, report = canonicalize(load_weights(source))
    save_weights(model, out)
    logger.info(f"Wrote canonical model to {out}")
    echo_lines(report.to_lines())


@cli.command()
@click.pass_context
@click.argument("source")
@click.argument("out")
@with_codec_flags
@click.option("--remaining-rate", type=float, default=1.0, help="Remaining rate r for ratios.")
@handle_errors
def encode(ctx, source, out, lambda_width, tau_weights, tau_stream, remaining_rate):
    """Bits-back encodes an SWC1 model into an SBB1 container."""
    cfg = codec_config(codec_overrides(ctx, lambda_width, tau_weights, tau_stream))
    container = encode_model(load_weights(source), cfg)
    save_container(container, out)
    logger.info(f"Wrote container to {out}")
    echo_lines(container_report(container, remaining_rate).to_lines())


@cli.command()
@click.argument("source")
@click.argument("out")
@handle_errors
def decode(source, out):
    """Decodes an SBB1 container into a canonical SWC1 model."""
    save_weights(decode_model(load_container(source)), out)
    logger.info(f"Wrote decoded model to {out}")


@cli.command()
@click.pass_context
@click.argument("first")
@click.argument("second")
@click.option("--tokens-seed", type=int, default=None, help="Seed of the token batches.")
@click.option("--batches", type=int, default=None, help="Number of token batches.")
@click.option("--tau", type=float, default=None, help="Weight tolerance (default tau_weights).")
@handle_errors
def verify(ctx, first, second, tokens_seed, batches, tau):
    """Compares two models by weights and by logits."""
    config = validated(
        apply_overrides(ctx.obj["config"], "verify", tokens_seed=tokens_seed, batches=batches)
    )
    tau = tau if tau is not None else config["codec"]["tau_weights"]
    report = compare_models(
        load_target(first),
        load_target(second),
        tokens_seed=config["verify"]["tokens_seed"],
        batches=config["verify"]["batches"],
        tau=tau,
    )
    echo_lines(report.to_lines())
    if not report.passed:
        logger.error("Verification failed.")
        sys.exit(EXIT_VERIFY_FAILED)


@cli.command()
@click.pass_context
@click.argument("reference")
@click.argument("target", required=False)
@click.option("--bins", type=int, default=None, help="Histogram bins.")
@click.option("--sweep", is_flag=True, help="Run the threshold sweep on REFERENCE.")
@click.option("--threshold", "thresholds", type=float, multiple=True, help="Sweep threshold.")
@click.option(
    "--sweep-parameter",
    type=click.Choice(SWEEP_PARAMETERS),
    default="tau_weights",
    help="Codec threshold the sweep varies.",
)
@with_codec_flags
@handle_errors
def stats(
    ctx,
    reference,
    target,
    bins,
    sweep,
    thresholds,
    sweep_parameter,
    lambda_width,
    tau_weights,
    tau_stream,
):
    """Error histogram of TARGET against REFERENCE, and/or a threshold sweep."""
    if target is None and not sweep:
        logger.error("Give a TARGET to compare against, or --sweep.")
        sys.exit(EXIT_INPUT_ERROR)
    config = codec_overrides(ctx, lambda_width, tau_weights, tau_stream)
    if sweep_parameter == "tau_stream" and not thresholds:
        thresholds = STREAM_SWEEP_THRESHOLDS
    config = validated(
        apply_overrides(config, "stats", bins=bins, thresholds=list(thresholds) or None)
    )
    model = load_weights(reference)
    if target is not None:
        echo_lines(error_stats(model, load_target(target), config["stats"]["bins"]).to_lines())
    if sweep:
        points = threshold_sweep(
            model,
            codec_config(config),
            config["stats"]["thresholds"],
            parameter=sweep_parameter,
        )
        echo_lines(sweep_lines(points))


@cli.command()
@click.pass_context
@click.option("--layers", type=int, default=None, help="Number of blocks L.")
@click.option("--hidden", type=int, default=None, help="Hidden width D.")
@click.option("--ffn", type=int, default=None, help="MLP width F.")
@click.option("--vocab", type=int, default=None, help="Vocabulary size V.")
@click.option("--biases/--no-biases", default=None, help="Include bias vectors.")
@click.option("--rate", "rates", type=float, multiple=True, help="Remaining rate r.")
@with_codec_flags
@handle_errors
def account(ctx, layers, hidden, ffn, vocab, biases, rates, lambda_width, tau_weights, tau_stream):
    """Prints the closed-form codelength report and headless ratios."""
    config = codec_overrides(ctx, lambda_width, tau_weights, tau_stream)
    config = validated(
        apply_overrides(
            config,
            "model",
            layers=layers,
            hidden=hidden,
            ffn=ffn,
            vocab=vocab,
            has_biases=biases,
        )
    )
    dims = model_dims(config)
    echo_lines(accounting(dims, codec_config(config)).to_lines())
    click.echo("remaining_rate predicted_ratio_headless")
    for rate in rates or DEFAULT_RATES:
        click.echo(f"{rate:g} {headless_ratio(rate, dims.hidden):.6f}")


if __name__ == "__main__":
    cli(obj={})
