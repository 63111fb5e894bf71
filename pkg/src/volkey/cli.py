"""Command-line client for the volkey service.

Every command builds a request and sends it to the service: a remote one when
``--server`` (or VOLKEY_SERVER) is set, otherwise an in-process instance of the
same app. ``volkey serve`` runs the service under uvicorn.
"""

from __future__ import annotations

import sys

import click

from .config import PipelineConfig
from .errors import EXIT_CODES

_CONFIG_FLAGS = [
    ("--base-sigma", "base_sigma", float, "base blur of the first pyramid level (voxels)"),
    ("--levels-per-octave", "levels_per_octave", int, "blurred levels per octave"),
    ("--num-octaves", "num_octaves", int, "octave count (truncated to what dims permit)"),
    ("--min-octave-dim", "min_octave_dim", int, "stop sub-sampling below this side length"),
    ("--threshold-band", "threshold_band", int, "admit extremum-map values within this band of +/-80"),
    ("--contrast-min", "contrast_min", float, "minimum |DoG| for a keypoint"),
    ("--radius-factor", "radius_factor", float, "orientation/descriptor support radius in sigmas"),
    ("--secondary-ratio", "secondary_ratio", float, "histogram ratio spawning extra frames"),
    ("--max-frames", "max_frames", int, "orientation frames per keypoint"),
    ("--descriptor", "descriptor", str, "siftrank, brief or rrief"),
    ("--pairs", "pairs", int, "point pairs per brief/rrief descriptor"),
    ("--method", "method", int, "point-pair sampling method 1..5"),
    ("--patch-side", "patch_side", int, "patch samples per axis (odd)"),
    ("--blur-sigma", "blur_sigma", float, "patch pre-blur in patch sample units"),
    ("--seed", "seed", int, "point-pair RNG seed"),
    ("--ratio-max", "ratio_max", float, "nearest/second-nearest distance ratio cutoff"),
    ("--min-votes", "min_votes", int, "votes required in the densest accumulator cell"),
    ("--log-scale-bin", "log_scale_bin", float, "accumulator bin width in log scale"),
    ("--trans-bin", "trans_bin", float, "accumulator bin width in voxels"),
    ("--log-scale-tol", "log_scale_tol", float, "inlier tolerance in log scale"),
    ("--rot-tol-deg", "rot_tol_deg", float, "inlier rotation tolerance (degrees)"),
    ("--trans-tol", "trans_tol", float, "inlier translation tolerance (voxels)"),
    ("--workers", "workers", int, "worker threads for data-parallel stages"),
    ("--chunk", "chunk", int, "parallel partition block side (voxels)"),
]

_DEFAULTS = PipelineConfig()


def config_options(exclude: tuple[str, ...] = ()):
    def wrap(fn):
        fn = click.option(
            "--config", "config_file", type=click.Path(), default=None, help="flat key = value config file"
        )(fn)
        for flag, name, kind, help_text in reversed(_CONFIG_FLAGS):
            if name in exclude:
                continue
            default = getattr(_DEFAULTS, name)
            fn = click.option(flag, name, type=kind, default=None, help=f"{help_text} [default: {default}]")(fn)
        return fn

    return wrap


def build_config(config_file: str | None, overrides: dict) -> PipelineConfig:
    base = PipelineConfig.from_file(config_file) if config_file else PipelineConfig()
    return base.with_overrides(overrides)


def split_config_kwargs(kwargs: dict) -> tuple[str | None, dict]:
    config_file = kwargs.pop("config_file", None)
    names = {name for _, name, _, _ in _CONFIG_FLAGS}
    overrides = {k: kwargs.pop(k) for k in list(kwargs) if k in names}
    return config_file, overrides


def service_client(server: str | None):
    """HTTP client against a remote server, or the app run in-process."""
    import httpx

    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    import warnings

    with warnings.catch_warnings():
        # fastapi's test client import chatters about its own httpx pin.
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _fail(kind: str, message: str) -> None:
    click.echo(f"error ({kind}): {message}", err=True)
    sys.exit(EXIT_CODES.get(kind, 1))


def handle_errors(fn):
    """Map locally raised pipeline errors onto their CLI exit codes."""
    import functools

    from .errors import VolkeyError

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except VolkeyError as exc:
            _fail(exc.kind, str(exc))
        except OSError as exc:
            _fail("io", str(exc))

    return wrapper


def post(client, endpoint: str, payload: dict) -> dict:
    import httpx

    try:
        response = client.post(endpoint, json=payload)
    except httpx.HTTPError as exc:
        _fail("io", f"cannot reach service: {exc}")
    if response.status_code == 422:
        _fail("parameter", response.text)
    if response.status_code != 200:
        try:
            body = response.json()
            _fail(body.get("kind", "error"), body.get("message", response.text))
        except ValueError:
            _fail("error", response.text)
    return response.json()


@click.group()
@click.option("--server", envvar="VOLKEY_SERVER", default=None, help="service URL (default: run in-process)")
@click.version_option()
@click.pass_context
def main(ctx: click.Context, server: str | None) -> None:
    """Volumetric keypoints: extract, match, and benchmark."""
    ctx.obj = {"server": server}


def _volume_spec(path: str, dims: str | None, spacing: str | None) -> dict:
    spec: dict = {"path": path}
    if dims:
        spec["dims"] = [int(v) for v in dims.split(",")]
    if spacing:
        spec["spacing"] = [float(v) for v in spacing.split(",")]
    return spec


@main.command()
@click.argument("input_volume", type=click.Path())
@click.option("-o", "--output", "output_prefix", required=True, help="output prefix for .keys.txt/.desc.txt")
@click.option("--dims", default=None, help="nx,ny,nz for headerless raw input")
@click.option("--spacing", default=None, help="sx,sy,sz override")
@click.option("--dump-pyramid", "dump_pyramid_dir", type=click.Path(), default=None,
              help="also write every pyramid level as raw volumes into this directory")
@config_options()
@click.pass_context
@handle_errors
def extract(ctx, input_volume, output_prefix, dims, spacing, dump_pyramid_dir, **kwargs):
    """Extract keypoints and descriptors from a volume."""
    config_file, overrides = split_config_kwargs(kwargs)
    cfg = build_config(config_file, overrides)
    payload = {
        "volume": _volume_spec(input_volume, dims, spacing),
        "config": cfg.model_dump(),
        "output_prefix": output_prefix,
        "dump_pyramid_dir": dump_pyramid_dir,
    }
    with service_client(ctx.obj["server"]) as client:
        body = post(client, "/extract", payload)
    click.echo(
        "octaves=%d keypoints=%d frames=%d descriptors=%d dropped=%d"
        % (body["octaves"], body["keypoint_count"], body["frame_count"],
           body["descriptor_count"], body["dropped"])
    )
    for stage, micros in sorted(body["stage_micros"].items()):
        click.echo(f"  {stage:<12s} {micros / 1e3:10.2f} ms")
    click.echo(f"keypoints: {body['keypoints_path']}")
    click.echo(f"descriptors: {body['descriptors_path']}")


@main.command()
@click.argument("descriptors_a", type=click.Path())
@click.argument("descriptors_b", type=click.Path())
@click.option("--csv", "inlier_csv", type=click.Path(), default=None, help="write inlier pairs CSV")
@config_options()
@click.pass_context
@handle_errors
def match(ctx, descriptors_a, descriptors_b, inlier_csv, **kwargs):
    """Match two descriptor files and fit a 7-DOF consensus transform."""
    config_file, overrides = split_config_kwargs(kwargs)
    cfg = build_config(config_file, overrides)
    payload = {
        "descriptors_a": descriptors_a,
        "descriptors_b": descriptors_b,
        "config": cfg.model_dump(),
        "inlier_csv": inlier_csv,
    }
    with service_client(ctx.obj["server"]) as client:
        body = post(client, "/match", payload)
    click.echo(
        "kind=%s descriptors=%d/%d matches=%d inliers=%d"
        % (body["kind"], body["count_a"], body["count_b"], body["match_count"], body["inlier_count"])
    )
    t = body["consensus"]
    click.echo("consensus scale: %.6g" % t["scale"])
    click.echo("consensus rotation (rows): " + " ".join("%.6g" % v for v in t["rotation"]))
    click.echo("consensus translation: " + " ".join("%.6g" % v for v in t["translation"]))
    if body.get("inlier_csv"):
        click.echo(f"inlier csv: {body['inlier_csv']}")


@main.command()
@click.argument("input_volume", type=click.Path())
@click.option("--dims", default=None, help="nx,ny,nz for headerless raw input")
@click.option("--spacing", default=None, help="sx,sy,sz override")
@click.option("--csv", "csv_path", type=click.Path(), default=None, help="write per-stage timing CSV")
@click.option("--repeat", "repeats", type=int, default=5, show_default=True, help="timed repeats after warm-up")
@click.option("--workers", "workers_list", type=int, multiple=True,
              help="worker counts to compare (repeatable)")
@click.option("--chunks", default=None, help="comma-separated chunk sweep candidates, e.g. 1,5,10")
@config_options(exclude=("workers",))
@click.pass_context
@handle_errors
def bench(ctx, input_volume, dims, spacing, csv_path, repeats, workers_list, chunks, **kwargs):
    """Time the pipeline per stage; optionally sweep the parallel granularity."""
    config_file, overrides = split_config_kwargs(kwargs)
    cfg = build_config(config_file, overrides)
    payload = {
        "volume": _volume_spec(input_volume, dims, spacing),
        "config": cfg.model_dump(),
        "repeats": repeats,
        "workers": list(workers_list) or None,
        "chunks": [int(v) for v in chunks.split(",")] if chunks else None,
        "csv_path": csv_path,
    }
    with service_client(ctx.obj["server"]) as client:
        body = post(client, "/bench", payload)
    click.echo("total time by workers:")
    for workers, micros in sorted(body["totals_by_workers"].items(), key=lambda kv: int(kv[0])):
        click.echo(f"  workers={workers:<3s} {micros / 1e6:8.3f} s")
    by_stage: dict[str, float] = {}
    for row in body["rows"]:
        by_stage[row["stage"]] = by_stage.get(row["stage"], 0.0) + row["wall_micros"]
    click.echo("stage totals (all octaves/levels, mean over repeats):")
    for stage, micros in sorted(by_stage.items()):
        click.echo(f"  {stage:<12s} {micros / 1e3:10.2f} ms")
    if body.get("sweep"):
        click.echo("chunk sweep (mean blur time):")
        for entry in body["sweep"]:
            click.echo(f"  chunk={entry['chunk']:<4d} {entry['mean_micros'] / 1e3:10.2f} ms")
        click.echo(f"fastest chunk: {body['fastest_chunk']}")
    if body.get("csv_path"):
        click.echo(f"csv: {body['csv_path']}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8330, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Run the extraction service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


@main.command("config-dump")
@click.option("-o", "--output", "output_path", type=click.Path(), default=None)
@config_options()
@handle_errors
def config_dump(output_path, **kwargs):
    """Print (or write) the effective configuration as a key = value file."""
    config_file, overrides = split_config_kwargs(kwargs)
    cfg = build_config(config_file, overrides)
    if output_path:
        cfg.to_file(output_path)
        click.echo(output_path)
    else:
        for key, value in cfg.model_dump().items():
            click.echo(f"{key} = {value}")


if __name__ == "__main__":
    main()
