"""Command-line front end: ``gpreg register | synth | eval | render``.

Every failure prints one line starting with ``error:`` on stderr. Exit code 2
means bad configuration or input text, exit code 3 means an I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass

from . import __version__
from ._accel import backend_name
from .chromosome import Chromosome
from .evaluation import (
    ControlPointError,
    GroundTruthTransform,
    make_synthetic_pair,
    make_texture_scene,
    read_control_points,
    rmse,
    uses_rotation,
    write_control_points,
)
from .evolution import GpParams, register
from .expr import ParseError, parse, serialize
from .fitness import FitnessContext, SamplePlan, all_pixels
from .imaging import ImageFormatError, difference_image, load, save, warp_to_reference

log = logging.getLogger("gpreg")

EXIT_CONFIG = 2
EXIT_IO = 3


class ConfigError(Exception):
    pass


class CliIOError(Exception):
    pass


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    reference: str | None = None
    sensed: str | None = None
    out: str | None = None
    seed: int = 0
    threads: int = 1
    control_points: str | None = None
    population: int = 150
    crossover_prob: float = 0.9
    mutation_rate: float = 0.3
    elite_count: int | None = None
    init_max_height: int = 6
    mutation_max_height: int = 3
    cross_axis_prob: float = 0.2
    stall_window: int = 10
    stall_increment: float = 0.02
    max_mutation_rate: float = 0.9
    stop_patience: int = 30
    max_generations: int = 500
    node_mutation_prob: float = 0.05
    improvement_threshold: float = 1e-4
    depth_cap: int = 12
    sample_fraction: float = 0.005
    sample_floor: int = 3000
    overlap_threshold: float = 0.25
    bin_width: int = 8

    # execution-only settings: they never change the result, so they are
    # reported under "runtime" instead of the replayable config echo
    RUNTIME_KEYS = ("out", "threads")

    def gp_params(self) -> GpParams:
        return GpParams(
            population_size=self.population,
            crossover_prob=self.crossover_prob,
            mutation_rate=self.mutation_rate,
            elite_count=self.elite_count,
            init_max_height=self.init_max_height,
            mutation_max_height=self.mutation_max_height,
            cross_axis_prob=self.cross_axis_prob,
            stall_window=self.stall_window,
            stall_increment=self.stall_increment,
            max_mutation_rate=self.max_mutation_rate,
            stop_patience=self.stop_patience,
            max_generations=self.max_generations,
            node_mutation_prob=self.node_mutation_prob,
            improvement_threshold=self.improvement_threshold,
            depth_cap=self.depth_cap,
        )

    def sample_plan(self) -> SamplePlan:
        return SamplePlan(self.sample_fraction, self.sample_floor, self.overlap_threshold)

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        for key in self.RUNTIME_KEYS:
            d.pop(key)
        d["elite_count"] = self.gp_params().elite_count
        return d


_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_FIELD_TYPES = {
    name: (int if "int" in str(f.type) else float if "float" in str(f.type) else str)
    for name, f in _CONFIG_FIELDS.items()
}


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    if value is None:
        if _CONFIG_FIELDS[key].default is None:
            return None
        raise ConfigError(f"config key {key!r} cannot be null")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
    return value


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CliIOError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path}: expected a flat JSON object")
    unknown = sorted(set(data) - set(_CONFIG_FIELDS))
    if unknown:
        raise ConfigError(f"config {path}: unknown keys {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in data.items()}


def build_config(args) -> RunConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for key in _CONFIG_FIELDS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            values[key] = flag_value
    cfg = RunConfig(**values)
    try:
        cfg.gp_params()
        cfg.sample_plan()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.bin_width < 1 or cfg.bin_width > 256:
        raise ConfigError("bin_width must be in 1..256")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _load_image(path, what):
    if not path:
        raise ConfigError(f"missing --{what}")
    try:
        return load(path)
    except FileNotFoundError:
        raise CliIOError(f"{what} image not found: {path}") from None
    except OSError as exc:
        raise CliIOError(f"cannot read {what} image {path}: {exc}") from None
    except ImageFormatError as exc:
        raise CliIOError(f"{what} image {path}: {exc}") from None


def _ensure_dir(path):
    if not path:
        raise ConfigError("missing --out")
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CliIOError(f"cannot create output directory {path}: {exc.strerror}") from None
    return path


def _write_text(path, text):
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliIOError(f"cannot write {path}: {exc.strerror}") from None


def _save_image(img, path):
    try:
        save(img, path)
    except OSError as exc:
        raise CliIOError(f"cannot write {path}: {exc}") from None


def _read_text(path, what):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise CliIOError(f"cannot read {what} {path}: {exc.strerror}") from None


def _load_chromosome(args) -> Chromosome:
    if args.chromosome:
        text = _read_text(args.chromosome, "chromosome file").strip()
        return Chromosome.from_text(text)
    if args.tx_file and args.ty_file:
        tx = parse(_read_text(args.tx_file, "x-tree file").strip())
        ty = parse(_read_text(args.ty_file, "y-tree file").strip())
        return Chromosome(tx, ty)
    raise ConfigError("give --chromosome FILE or both --tx-file and --ty-file")


def _parse_size(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"size must look like WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise ConfigError(f"size must be positive, got {text!r}")
    return w, h


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_register(args) -> int:
    cfg = build_config(args)
    reference = _load_image(cfg.reference, "reference")
    sensed = _load_image(cfg.sensed, "sensed")
    points = None
    if cfg.control_points:
        points = _read_points(cfg.control_points, sensed.dims)
    out = _ensure_dir(cfg.out)

    started = time.perf_counter()

    def progress(state):
        rec = state.trace[-1]
        log.info(
            "generation %d best_mi=%.6f mean_mi=%.6f rate=%.2f",
            rec.generation,
            rec.best_mi,
            rec.mean_mi,
            rec.mutation_rate,
        )

    result = register(
        sensed,
        reference,
        cfg.gp_params(),
        cfg.sample_plan(),
        cfg.bin_width,
        seed=cfg.seed,
        threads=cfg.threads,
        callback=progress,
    )
    wall = time.perf_counter() - started
    best = result.best

    report = {
        "best": {
            "tx": serialize(best.x_tree),
            "ty": serialize(best.y_tree),
            "chromosome": best.to_text(),
        },
        "final_mi": result.final_fitness.mi,
        "final_overlap_fraction": result.final_fitness.overlap_fraction,
        "search_mi": result.search_fitness.mi,
        "generations": result.generations,
        "stop_reason": result.stop_reason,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "trace": [dataclasses.asdict(r) for r in result.trace],
    }
    if points is not None:
        report["rmse"] = rmse(best, points)
    report["runtime"] = {
        "wall_time_s": wall,
        "threads": cfg.threads,
        "out": cfg.out,
        "backend": backend_name(),
        "version": __version__,
    }

    _write_text(os.path.join(out, "report.json"), _json_dump(report))
    _write_text(os.path.join(out, "best.tx.sexpr"), serialize(best.x_tree) + "\n")
    _write_text(os.path.join(out, "best.ty.sexpr"), serialize(best.y_tree) + "\n")
    _write_trace(os.path.join(out, "trace.csv"), result.trace)
    rendering = warp_to_reference(sensed, best, reference.dims)
    _save_image(rendering.warped, os.path.join(out, "warped.png"))
    _save_image(difference_image(reference, rendering), os.path.join(out, "diff.png"))
    if args.dump_histogram:
        ctx = FitnessContext(sensed, reference, all_pixels(sensed.dims), SamplePlan(1.0, 1, 0.0), cfg.bin_width)
        hist, _, _ = ctx.histogram(best)
        hist.to_csv(os.path.join(out, "histogram.csv"))

    print(f"best_mi {result.final_fitness.mi:.6f}")
    print(best.to_text())
    if points is not None:
        print(f"rmse {report['rmse']:.3f}")
    return 0


def _write_trace(path, trace):
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["generation", "best_mi", "mean_mi", "mutation_rate", "stall_counter"])
            for r in trace:
                writer.writerow([r.generation, repr(r.best_mi), repr(r.mean_mi), repr(r.mutation_rate), r.stall_counter])
    except OSError as exc:
        raise CliIOError(f"cannot write {path}: {exc.strerror}") from None


def _read_points(path, sensed_dims=None):
    try:
        return read_control_points(path, sensed_dims)
    except OSError as exc:
        raise CliIOError(f"cannot read control points {path}: {exc.strerror}") from None
    except ControlPointError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_synth(args) -> int:
    tx = parse(args.tx)
    ty = parse(args.ty)
    if args.scene:
        scene = _load_image(args.scene, "scene")
    else:
        scene = make_texture_scene(args.texture_size, seed=args.texture_seed if args.texture_seed is not None else (args.seed or 0))
    dims = (args.width or scene.width, args.height or scene.height)
    try:
        reference, sensed, points = make_synthetic_pair(scene, GroundTruthTransform(tx, ty), dims)
    except ControlPointError as exc:
        raise ConfigError(str(exc)) from None
    out = _ensure_dir(args.out)
    _save_image(reference, os.path.join(out, "reference.png"))
    _save_image(sensed, os.path.join(out, "sensed.png"))
    try:
        write_control_points(points, os.path.join(out, "control_points.csv"))
    except OSError as exc:
        raise CliIOError(f"cannot write control points: {exc.strerror}") from None
    truth = {
        "tx": serialize(tx),
        "ty": serialize(ty),
        "chromosome": Chromosome(tx, ty).to_text(),
        "scene": args.scene,
        "reference_width": reference.width,
        "reference_height": reference.height,
        "sensed_width": sensed.width,
        "sensed_height": sensed.height,
    }
    _write_text(os.path.join(out, "truth.json"), _json_dump(truth))
    print(f"wrote {out}/reference.png, sensed.png, control_points.csv, truth.json")
    return 0


def _sensed_dims_for_eval(args):
    if args.sensed_size:
        return _parse_size(args.sensed_size)
    if args.sensed:
        return _load_image(args.sensed, "sensed").dims
    truth_path = os.path.join(os.path.dirname(os.path.abspath(args.points)), "truth.json")
    if os.path.exists(truth_path):
        try:
            with open(truth_path) as fh:
                truth = json.load(fh)
            return int(truth["sensed_width"]), int(truth["sensed_height"])
        except (OSError, ValueError, KeyError, TypeError):
            return None
    return None


def cmd_eval(args) -> int:
    chrom = _load_chromosome(args)
    dims = _sensed_dims_for_eval(args)
    if dims is None and (uses_rotation(chrom.x_tree) or uses_rotation(chrom.y_tree)):
        raise ConfigError("rotation primitives need the sensed size: pass --sensed-size WxH or --sensed IMAGE")
    points = _read_points(args.points, dims)
    print(f"{rmse(chrom, points):.3f}")
    return 0


def cmd_render(args) -> int:
    chrom = _load_chromosome(args)
    sensed = _load_image(args.sensed, "sensed")
    reference = _load_image(args.reference, "reference")
    out = _ensure_dir(args.out)
    rendering = warp_to_reference(sensed, chrom, reference.dims)
    _save_image(rendering.warped, os.path.join(out, "warped.png"))
    _save_image(difference_image(reference, rendering), os.path.join(out, "diff.png"))
    covered = int(rendering.valid_mask.sum())
    print(f"wrote {out}/warped.png, diff.png ({covered} of {reference.width * reference.height} pixels covered)")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_CONFIG)


def _shared(p):
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--config", help="flat JSON config file; flags override its values")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-generation progress")


def _chromosome_args(p):
    p.add_argument("--chromosome", help="file holding one 'TX := ... ; TY := ...' line")
    p.add_argument("--tx-file", help="file holding the x-tree s-expression")
    p.add_argument("--ty-file", help="file holding the y-tree s-expression")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gpreg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gpreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("register", help="evolve a transform aligning sensed to reference")
    _shared(p)
    p.add_argument("--reference", help="reference image (.png or .pgm)")
    p.add_argument("--sensed", help="sensed image (.png or .pgm)")
    p.add_argument("--threads", type=int, help="fitness worker threads (1 = canonical sequential path)")
    p.add_argument("--control-points", help="CSV of ground-truth pairs; adds rmse to the report")
    p.add_argument("--dump-histogram", action="store_true", help="write the winner's full joint histogram as CSV")
    gp = p.add_argument_group("search parameters")
    gp.add_argument("--population", type=int)
    gp.add_argument("--crossover-prob", type=float)
    gp.add_argument("--mutation-rate", type=float)
    gp.add_argument("--elite-count", type=int)
    gp.add_argument("--init-max-height", type=int)
    gp.add_argument("--mutation-max-height", type=int)
    gp.add_argument("--cross-axis-prob", type=float)
    gp.add_argument("--stall-window", type=int)
    gp.add_argument("--stall-increment", type=float)
    gp.add_argument("--max-mutation-rate", type=float)
    gp.add_argument("--stop-patience", type=int)
    gp.add_argument("--max-generations", type=int)
    gp.add_argument("--node-mutation-prob", type=float)
    gp.add_argument("--improvement-threshold", type=float)
    gp.add_argument("--depth-cap", type=int)
    sp = p.add_argument_group("fitness sampling")
    sp.add_argument("--sample-fraction", type=float)
    sp.add_argument("--sample-floor", type=int)
    sp.add_argument("--overlap-threshold", type=float)
    sp.add_argument("--bin-width", type=int)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("synth", help="make a semi-synthetic pair from a scene and a ground-truth transform")
    _shared(p)
    p.add_argument("--scene", help="scene image; omitted = generated fractal texture")
    p.add_argument("--texture-size", type=int, default=256)
    p.add_argument("--texture-seed", type=int)
    p.add_argument("--tx", required=True, help="ground-truth x-tree s-expression")
    p.add_argument("--ty", required=True, help="ground-truth y-tree s-expression")
    p.add_argument("--width", type=int, help="sensed width (default: scene width)")
    p.add_argument("--height", type=int, help="sensed height (default: scene height)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="RMSE of a transform against control points")
    _shared(p)
    _chromosome_args(p)
    p.add_argument("--points", required=True, help="control point CSV")
    p.add_argument("--sensed-size", help="sensed WIDTHxHEIGHT (rotation centre)")
    p.add_argument("--sensed", help="sensed image, read only for its size")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="write warped.png and diff.png for a transform")
    _shared(p)
    _chromosome_args(p)
    p.add_argument("--sensed", required=True)
    p.add_argument("--reference", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ParseError as exc:
        sys.stderr.write(f"error: {exc}\n")
        if exc.text:
            for line in exc.caret().splitlines():
                sys.stderr.write(f"  {line}\n")
        return EXIT_CONFIG
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except CliIOError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
