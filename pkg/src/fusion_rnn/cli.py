"""Command-line entry point: ``python -m fusion_rnn <command> ...``.

Commands: gen-data, train, eval, predict, gradcheck. Every file written is
accompanied by ``<file>.manifest.json`` recording the resolved config, and
that manifest can be passed back with ``--config`` to redo the run.

Precedence of settings: command-line flag > ``--config`` file > default.
Exit codes: 0 success, 1 failed check, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    DEFAULT_SECONDS_PER_STEP,
    SETTINGS,
    STRAIGHT,
    Dataset,
    SyntheticConfig,
    generate_synthetic,
    load_events,
    restrict,
    save_events,
)
from .evaluation import cross_validate, decide, default_grid, evaluate, event_trace, render_confusion, threshold_sweep
from .io import atomic_write_text, sha256_file
from .network import Model, NetConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingDiverged, fit, gradient_check_detail

log = logging.getLogger("fusion_rnn")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
GRADCHECK_TOL = 1e-5
LOSS_ALIASES = {"exp": "exponential", "exponential": "exponential", "uniform": "uniform", "unif": "uniform"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    dataset_sha256: str | None
    tool_version: str
    started: str
    finished: str
    output_sha256: str | None = None
    extra: dict = field(default_factory=dict)  # informational only, not replayed

    def write(self, artifact) -> Path:
        path = manifest_path(artifact)
        atomic_write_text(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def manifest_path(artifact) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + ".manifest.json")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------- parser

def _loss(s: str) -> str:
    try:
        return LOSS_ALIASES[s]
    except KeyError:
        raise argparse.ArgumentTypeError(f"loss must be one of {sorted(LOSS_ALIASES)}") from None


def _model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--variant", choices=("fusion", "simple"), default="fusion")
    g.add_argument("--loss", type=_loss, default="exponential", help="exp|uniform")
    g.add_argument("--hidden-dim", type=int, default=64)
    g.add_argument("--fusion-dim", type=int, default=64)
    g.add_argument("--peephole", choices=("full", "diagonal"), default="full")
    g.add_argument("--setting", choices=sorted(SETTINGS), default="all",
                   help="train on this maneuver subset only (class count follows the setting)")
    t = p.add_argument_group("training")
    d = TrainConfig()
    t.add_argument("--epochs", type=int, default=d.epochs)
    t.add_argument("--lr", type=float, default=d.learning_rate)
    t.add_argument("--batch-size", type=int, default=d.batch_size)
    t.add_argument("--decay", type=float, default=d.rmsprop_decay, help="RMSprop rho")
    t.add_argument("--eps", type=float, default=d.rmsprop_epsilon, help="RMSprop epsilon")
    t.add_argument("--seed", type=int, default=1)
    t.add_argument("--augmentation-factor", type=float, default=d.augmentation_factor)
    t.add_argument("--min-subseq-len", type=int, default=d.min_subseq_len)
    t.add_argument("--init-scale", type=float, default=d.init_scale)
    t.add_argument("--no-shuffle", dest="shuffle", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="fusion-rnn", description=__doc__.splitlines()[0])
    top.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of option values, or a run manifest")
    common.add_argument("--seconds-per-step", type=float, default=DEFAULT_SECONDS_PER_STEP)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic event file")
    s = SyntheticConfig()
    g.add_argument("-o", "--output", type=Path, required=True)
    g.add_argument("--events-per-class", type=int, default=s.events_per_class)
    g.add_argument("--seed", type=int, default=s.seed)
    g.add_argument("--setting", choices=sorted(SETTINGS), default=s.setting)
    g.add_argument("--t-min", type=int, default=s.T_range[0])
    g.add_argument("--t-max", type=int, default=s.T_range[1])
    g.add_argument("--onset-min", type=float, default=s.onset_fraction_range[0])
    g.add_argument("--onset-max", type=float, default=s.onset_fraction_range[1])
    g.add_argument("--signal-gain", type=float, default=s.signal_gain)
    g.add_argument("--noise-std", type=float, default=s.noise_std)
    g.add_argument("--outside-gain", type=float, default=s.outside_gain)
    g.add_argument("--inside-dim", type=int, default=s.inside_dim)
    g.add_argument("--outside-dim", type=int, default=s.outside_dim)

    t = sub.add_parser("train", parents=[common], help="augment, train and save a checkpoint")
    t.add_argument("data", type=Path)
    t.add_argument("-o", "--output", type=Path, required=True, help="checkpoint path (JSON)")
    t.add_argument("--history", type=Path, help="history JSON (default: <output stem>.history.json)")
    t.add_argument("--checkpoint-every", type=int, default=0, metavar="K",
                   help="also save <output stem>.epochN.json every K epochs")
    _model_args(t)

    e = sub.add_parser("eval", parents=[common], help="metrics at a threshold, a threshold sweep, or k-fold CV")
    e.add_argument("data", type=Path)
    e.add_argument("--model", type=Path, help="checkpoint (not used with --cv)")
    e.add_argument("--p-th", type=float, default=0.5)
    e.add_argument("--sweep", action="store_true", help="sweep p_th over the grid; CSV to stdout or --csv")
    e.add_argument("--csv", type=Path)
    e.add_argument("--grid-step", type=float, default=0.05)
    e.add_argument("--cv", type=int, metavar="K", help="train and test with K-fold cross-validation")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("-o", "--output", type=Path, help="report JSON (default: stdout)")
    _model_args(e)

    p = sub.add_parser("predict", parents=[common], help="run the anticipation rule on one event")
    p.add_argument("data", type=Path, nargs="?", help="event file (JSON lines)")
    p.add_argument("--model", type=Path)
    p.add_argument("--event-id")
    p.add_argument("--p-th", type=float, default=0.5)
    p.add_argument("--trace", action="store_true", help="print the per-step class probabilities")
    p.add_argument("--from-trace", type=Path,
                   help='JSON {"class_names": [...], "trace": [[...], ...]} used instead of a model')

    c = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    c.add_argument("--seeds", type=int, default=10, help="random nets per variant x loss")
    c.add_argument("--seed", type=int, default=0, help="first seed")
    c.add_argument("--T", type=int, default=6)
    c.add_argument("--max-hidden", type=int, default=8)
    c.add_argument("--peephole", choices=("full", "diagonal"), default="full")
    c.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    return top


def _subparser(top: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for a in top._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices[name]
    raise KeyError(name)


def _load_config(path: Path, parser: argparse.ArgumentParser) -> dict:
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if isinstance(doc, dict) and "tool_version" in doc and "config" in doc:
        doc = doc["config"]  # a run manifest
    if not isinstance(doc, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    dests = {a.dest for a in parser._actions}
    values = {k.replace("-", "_"): v for k, v in doc.items()}
    unknown = sorted(set(values) - dests - {"command"})
    if unknown:
        raise UsageError(f"config {path}: unknown option(s) {unknown}")
    out = {}
    for a in parser._actions:
        if a.dest in values and values[a.dest] is not None and a.type is not None and a.nargs is None:
            v = values[a.dest]
            values[a.dest] = a.type(str(v)) if a.type is not Path else Path(v)
        if a.dest in values:
            out[a.dest] = values[a.dest]
    return out


def parse_args(argv) -> argparse.Namespace:
    top = build_parser()
    args = top.parse_args(argv)
    if args.config is not None:
        sub = _subparser(top, args.command)
        sub.set_defaults(**_load_config(args.config, sub))
        args = top.parse_args(argv)
    return args


def resolved_config(args: argparse.Namespace) -> dict:
    skip = {"config", "verbose", "output", "csv", "history", "jobs", "corrupt", "checkpoint_every"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


# ---------------------------------------------------------------- helpers

def _net_cfg(args, d) -> NetConfig:
    return NetConfig(
        variant=args.variant,
        inside_dim=d.inside_dim,
        outside_dim=d.outside_dim,
        hidden_dim=args.hidden_dim,
        fusion_dim=args.fusion_dim,
        num_classes=len(d.class_names),
        loss_scheme=args.loss,
        peephole=args.peephole,
    )


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        rmsprop_decay=args.decay,
        rmsprop_epsilon=args.eps,
        seed=args.seed,
        augmentation_factor=args.augmentation_factor,
        min_subseq_len=args.min_subseq_len,
        init_scale=args.init_scale,
        shuffle=args.shuffle,
    )


def _load_data(path: Path, seconds_per_step: float, setting: str = "all"):
    if not path.is_file():
        raise UsageError(f"data file not found: {path}")
    d = load_events(path, seconds_per_step)
    return restrict(d, setting) if setting != "all" else d


def _load_model(path):
    if path is None:
        raise UsageError("--model is required")
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _for_model(path: Path, model, seconds_per_step: float):
    """Events of ``path`` whose labels the model knows, in the model's class order."""
    d = load_events(path, seconds_per_step)
    if (d.inside_dim, d.outside_dim) != (model.config.inside_dim, model.config.outside_dim):
        raise UsageError(
            f"data dims ({d.inside_dim}, {d.outside_dim}) do not match model "
            f"({model.config.inside_dim}, {model.config.outside_dim})"
        )
    keep = [e for e in d.events if e.label in model.class_names]
    if len(keep) < len(d.events):
        log.info("skipping %d events with labels outside the model's classes", len(d.events) - len(keep))
    return Dataset(keep, d.inside_dim, d.outside_dim, list(model.class_names))


def _manifest(args, started, data=None, artifact=None) -> RunManifest:
    return RunManifest(
        command=args.command,
        config=resolved_config(args),
        seed=getattr(args, "seed", None),
        dataset_sha256=sha256_file(data) if data is not None else None,
        tool_version=__version__,
        started=started,
        finished=_now(),
        output_sha256=sha256_file(artifact) if artifact is not None else None,
    )


def _grid(step: float) -> list[float]:
    if step == 0.05:
        return default_grid()
    if not 0 < step <= 1:
        raise UsageError("--grid-step must lie in (0, 1]")
    n = int(round(1.0 / step))
    return [round(min(1.0, (i + 1) * step), 10) for i in range(n)]


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(path, text)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    started = _now()
    cfg = SyntheticConfig(
        events_per_class=args.events_per_class,
        T_range=(args.t_min, args.t_max),
        onset_fraction_range=(args.onset_min, args.onset_max),
        signal_gain=args.signal_gain,
        noise_std=args.noise_std,
        seed=args.seed,
        setting=args.setting,
        inside_dim=args.inside_dim,
        outside_dim=args.outside_dim,
        outside_gain=args.outside_gain,
        seconds_per_step=args.seconds_per_step,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    d = generate_synthetic(cfg)
    save_events(d, args.output)
    _manifest(args, started, artifact=args.output).write(args.output)
    print(f"wrote {len(d)} events ({len(d.class_names)} classes) to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    d = _load_data(args.data, args.seconds_per_step, args.setting)
    net_cfg, train_cfg = _net_cfg(args, d), _train_cfg(args)
    if args.checkpoint_every < 0:
        raise UsageError("--checkpoint-every must be >= 0")
    on_epoch = None
    if args.checkpoint_every:
        def on_epoch(epoch, params, _history):
            if epoch % args.checkpoint_every == 0:
                snap = args.output.with_name(f"{args.output.stem}.epoch{epoch}.json")
                save_checkpoint(Model(net_cfg, params.copy(), list(d.class_names)), snap)
    model, history = fit(d, net_cfg, train_cfg, on_epoch=on_epoch)
    save_checkpoint(model, args.output)
    hist_path = args.history or args.output.with_name(args.output.stem + ".history.json")
    atomic_write_text(hist_path, json.dumps(history.to_dict(), indent=2) + "\n")
    m = _manifest(args, started, data=args.data, artifact=args.output)
    m.extra["wall_time_s"] = [round(t, 3) for t in history.wall_time]
    m.write(args.output)
    _manifest(args, started, data=args.data, artifact=hist_path).write(hist_path)
    last = f", final loss {history.epoch_loss[-1]:.6f}" if history.epoch_loss else ""
    print(f"trained {net_cfg.variant}/{net_cfg.loss_scheme} for {train_cfg.epochs} epochs{last}; saved {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    started = _now()
    sps = args.seconds_per_step
    if args.cv is not None:
        if args.cv < 2:
            raise UsageError("--cv needs K >= 2")
        d = _load_data(args.data, sps, args.setting)
        rep = cross_validate(d, _net_cfg(args, d), _train_cfg(args), k=args.cv, grid=_grid(args.grid_step),
                             seed=args.seed, jobs=args.jobs, seconds_per_step=sps)
        doc = rep.to_dict()
        if args.output is None:
            s = rep.summary
            for key in ("precision", "recall", "f1", "mean_ttm"):
                mu, se = s[key]["mean"], s[key]["se"]
                log.info("%s: %s", key, "n/a" if mu is None else f"{mu:.4f} +- {se:.4f}")
    else:
        model = _load_model(args.model)
        d = _for_model(args.data, model, sps)
        if args.sweep:
            sw = threshold_sweep(model, d.events, _grid(args.grid_step), sps)
            if args.csv is not None:
                atomic_write_text(args.csv, sw.to_csv())
                _manifest(args, started, data=args.data, artifact=args.csv).write(args.csv)
            else:
                sys.stdout.write(sw.to_csv())
            if args.output is None:
                return EXIT_OK
            doc = sw.to_dict()
        else:
            try:
                _, m = evaluate(model, d.events, args.p_th, sps)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            doc = m.to_dict()
            sys.stderr.write(render_confusion(np.asarray(m.confusion), model.class_names) + "\n")
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    _emit(text, args.output)
    if args.output is not None:
        _manifest(args, started, data=args.data, artifact=args.output).write(args.output)
    return EXIT_OK


def _fmt_row(v) -> str:
    return " ".join(f"{x:.6f}" for x in v)


def cmd_predict(args) -> int:
    sps = args.seconds_per_step
    if args.from_trace is not None:
        try:
            doc = json.loads(args.from_trace.read_text())
            names, trace = list(doc["class_names"]), np.asarray(doc["trace"], dtype=np.float64)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read trace {args.from_trace}: {exc}") from exc
        if STRAIGHT not in names:
            raise UsageError(f"class_names must include {STRAIGHT!r}")
        event_id = doc.get("event_id", args.from_trace.stem)
    else:
        model = _load_model(args.model)
        if args.data is None:
            raise UsageError("an event file is required unless --from-trace is given")
        d = _for_model(args.data, model, sps)
        if args.event_id is None:
            if len(d.events) != 1:
                raise UsageError(f"{args.data} holds {len(d.events)} events; pick one with --event-id")
            ev = d.events[0]
        else:
            match = [e for e in d.events if e.event_id == args.event_id]
            if not match:
                raise UsageError(f"unknown event id {args.event_id!r}")
            ev = match[0]
        names, trace, event_id = model.class_names, event_trace(model, ev), ev.event_id
    try:
        r = decide(trace, args.p_th, names, event_id, sps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"event: {r.event_id}")
    print(f"predicted: {r.predicted}")
    if r.fired_at is not None:
        print(f"fired_at: {r.fired_at}")
        print(f"t_before: {r.t_before_steps} steps ({r.t_before_seconds:.2f} s)")
    if args.trace:
        print("trace: " + " ".join(names))
        for row in trace:
            print(_fmt_row(row))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.seeds < 1 or args.T < 1 or args.max_hidden < 1:
        raise UsageError("--seeds, --T and --max-hidden must be >= 1")
    hiddens = [h for h in (1, 2, 4, 8) if h <= args.max_hidden] or [args.max_hidden]
    ok = True
    for variant in ("fusion", "simple"):
        for loss in ("exponential", "uniform"):
            worst = None
            for s in range(args.seed, args.seed + args.seeds):
                cfg = NetConfig(variant=variant, inside_dim=3, outside_dim=2, hidden_dim=hiddens[s % len(hiddens)],
                                fusion_dim=4, num_classes=3, loss_scheme=loss, peephole=args.peephole)
                r = gradient_check_detail(cfg, s, T=args.T, corrupt=args.corrupt)
                if worst is None or r.max_rel_error > worst[0].max_rel_error:
                    worst = (r, s)
            r, s = worst
            passed = r.max_rel_error < GRADCHECK_TOL
            ok &= passed
            idx = ",".join(map(str, r.worst_index))
            print(f"{variant:6s} {loss:11s} max_rel_err={r.max_rel_error:.3e} "
                  f"worst={r.worst_param}[{idx}] seed={s} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse: --help / --version give 0, errors give 2
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, OSError) as exc:
        # bad input files, config/dimension mismatches
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
