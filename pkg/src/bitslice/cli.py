"""Command-line entry point: ``bitslice <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 divergence.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import reramsim, trainkit
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .exceptions import DegenerateRangeError, DivergenceError, FormatError
from .mnist import load_mnist
from .numkit import make_rng, rng_state
from .quant import QuantConfig
from .slicekit import SparsityReport, slice_codes, sparsity_report

log = logging.getLogger("bitslice")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

TRAIN_DEFAULTS = trainkit.TrainingConfig().to_dict()
TRAIN_DEFAULTS.update(data=None, out=None)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _csv_ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _optional_float(text):
    return None if str(text).lower() in ("", "none") else float(text)


def _optional_str(text):
    return None if str(text).lower() in ("", "none") else str(text)


def read_config_file(path):
    """Flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def write_config_file(path, values):
    with open(path, "w") as fh:
        for key in sorted(values):
            fh.write(f"{key} = {'none' if values[key] is None else values[key]}\n")


def resolve(parser, args, defaults):
    """Merge defaults <- ``--config`` file <- explicit flags; unknown file keys are an error."""
    types = {a.dest: a.type for a in parser._actions if a.dest in defaults}
    resolved = dict(defaults)
    if getattr(args, "config", None):
        for key, raw in read_config_file(args.config).items():
            if key not in defaults:
                raise UsageError(f"{args.config}: unknown key {key!r}")
            conv = types.get(key) or str
            try:
                resolved[key] = conv(raw)
            except ValueError as exc:
                raise UsageError(f"{args.config}: bad value for {key}: {raw!r}") from exc
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _dump(obj, path=None):
    text = json.dumps(obj, sort_keys=True, indent=2)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def _load_model(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _quant_config(ckpt):
    cfg = ckpt.config or {}
    return QuantConfig(int(cfg.get("n_bits", 8)), int(cfg.get("slice_width", 2)))


# ---------------------------------------------------------------- train


def cmd_train(parser, args):
    opts = resolve(parser, args, TRAIN_DEFAULTS)
    if not opts["data"]:
        raise UsageError("--data is required")
    if not opts["out"]:
        raise UsageError("--out is required")
    train_keys = set(trainkit.TrainingConfig().to_dict())
    try:
        cfg = trainkit.TrainingConfig.from_dict({k: opts[k] for k in train_keys})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data = load_mnist(opts["data"])
    os.makedirs(opts["out"], exist_ok=True)
    write_config_file(os.path.join(opts["out"], "config.txt"), opts)

    if cfg.warm_start:
        model = _load_model(cfg.warm_start).model
        if model.sizes != [data.X_train.shape[1], cfg.hidden, 10]:
            raise FormatError(f"{cfg.warm_start}: layer sizes {model.sizes} do not match the configured model")
    else:
        model = trainkit.init_mlp((data.X_train.shape[1], cfg.hidden, 10), seed=cfg.seed)
    if cfg.prune_threshold is not None:
        model = trainkit.magnitude_prune(model, cfg.prune_threshold)

    history_path = os.path.join(opts["out"], "history.jsonl")
    with open(history_path, "w") as hist:

        def on_epoch(rec, state):
            hist.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
            hist.flush()
            print(f"epoch {rec.epoch}: acc={rec.test_accuracy:.4f} loss={rec.loss:.4f} mean_ratio={100 * rec.mean:.2f}%")

        state = trainkit.TrainState(model.copy(), make_rng(cfg.seed))
        model, _ = trainkit.train(model, data.X_train, data.y_train, cfg, data.X_test, data.y_test, state=state, callback=on_epoch)

    save_checkpoint(
        os.path.join(opts["out"], "checkpoint.ckpt"),
        Checkpoint(model, cfg.to_dict(), state.epoch, cfg.seed, rng_state(state.rng)),
    )
    acc = trainkit.evaluate(model, data.X_test, data.y_test, cfg.quant_config)
    report = sparsity_report(model.quantize(cfg.quant_config), acc)
    _dump(report.to_dict(), os.path.join(opts["out"], "report.json"))
    ratios = " ".join(f"{100 * r:.2f}%" for r in report.slice_ratios)
    print(f"test accuracy {100 * acc:.2f}%  slice ratios (MSB first) {ratios}  average {report.summary()}")
    return EXIT_OK


# ---------------------------------------------------------------- quantize / slice


def cmd_quantize(parser, args):
    ckpt = _load_model(args.checkpoint)
    qcfg = _quant_config(ckpt)
    layers = ckpt.model.quantize(qcfg)
    summary = [
        {
            "layer": i,
            "shape": list(q.shape),
            "scale_exp": q.scale_exp,
            "q_step": q.q_step,
            "nonzero_codes": int(np.count_nonzero(q.codes)),
            "max_code": int(q.codes.max()),
        }
        for i, q in enumerate(layers)
    ]
    if args.out:
        np.savez(args.out, **{f"codes_{i}": q.codes.astype(np.uint16) for i, q in enumerate(layers)},
                 **{f"signs_{i}": q.signs for i, q in enumerate(layers)},
                 scale_exp=np.array([q.scale_exp for q in layers]))
    print(_dump({"n_bits": qcfg.n_bits, "layers": summary}))
    return EXIT_OK


def cmd_slice(parser, args):
    ckpt = _load_model(args.checkpoint)
    qcfg = _quant_config(ckpt)
    layers = ckpt.model.quantize(qcfg)
    summary = []
    arrays = {}
    for i, q in enumerate(layers):
        s = slice_codes(q.codes, qcfg)
        arrays[f"slices_{i}"] = s[::-1].astype(np.uint8)
        summary.append({"layer": i, "shape": list(q.shape), "nonzero_per_slice": [int(np.count_nonzero(d)) for d in s[::-1]]})
    if args.out:
        np.savez(args.out, **arrays)
    rep = sparsity_report(layers)
    print(_dump({"slice_order": "msb_first", "layers": summary, "report": rep.to_dict()}))
    return EXIT_OK


# ---------------------------------------------------------------- report


def slice_headers(num_slices):
    return [f"B^{k}" for k in range(num_slices - 1, -1, -1)]


def format_row(method, report: SparsityReport):
    acc = "-" if report.accuracy is None else f"{100 * report.accuracy:.2f}%"
    cells = [f"{100 * r:.2f}%" for r in report.slice_ratios]
    return [method, acc] + cells + [report.summary()]


def render_table(rows):
    """Fixed-width text table of ``(method, SparsityReport)`` pairs."""
    n = len(rows[0][1].slice_ratios)
    header = ["Method", "Accuracy"] + slice_headers(n) + ["Average"]
    body = [format_row(m, r) for m, r in rows]
    widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(row, widths)) for row in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _named(spec, idx):
    if "=" in spec:
        name, value = spec.split("=", 1)
        return name, value
    return f"run{idx}", spec


def cmd_report(parser, args):
    rows = []
    data = load_mnist(args.data) if args.data else None
    for i, spec in enumerate(args.checkpoint or []):
        name, path = _named(spec, i)
        ckpt = _load_model(path)
        qcfg = _quant_config(ckpt)
        acc = trainkit.evaluate(ckpt.model, data.X_test, data.y_test, qcfg) if data else None
        rows.append((name, sparsity_report(ckpt.model.quantize(qcfg), acc)))
    for i, spec in enumerate(args.ratios or []):
        name, values = _named(spec, i)
        pct = _csv_floats(values)
        rows.append((name, SparsityReport.from_ratios([p / 100 for p in pct], args.accuracy)))
    if not rows:
        raise UsageError("give at least one --checkpoint or --ratios")
    if args.json:
        out = {name: rep.to_dict() for name, rep in rows}
        print(_dump(out if len(rows) > 1 else rows[0][1].to_dict(), args.out))
    else:
        print(render_table(rows))
    return EXIT_OK


# ---------------------------------------------------------------- map / adc


def render_overhead(report: reramsim.OverheadReport):
    lines = [f"{'XB':>5}  {'baseline':>8}  {'resolution':>10}  {'energy':>8}  {'speedup':>8}  {'area':>6}"]
    for r in report.rows:
        lines.append(
            f"{'XB' + str(r.group):>5}  {str(report.baseline) + ' bit':>8}  {str(r.resolution) + ' bit':>10}  "
            f"{r.energy_saving:>7.1f}x  {_fmt_speedup(r.speedup):>7}x  {r.area_saving:>5.0f}x"
        )
    return "\n".join(lines)


def _fmt_speedup(v):
    return f"{v:.0f}" if float(v).is_integer() else f"{v:.2f}"


def _mapping_for(args):
    ckpt = _load_model(args.checkpoint)
    qcfg = _quant_config(ckpt)
    mapping = reramsim.map_model(ckpt.model.quantize(qcfg), tile=args.tile)
    inputs = None
    if args.inputs:
        data = load_mnist(args.inputs)
        inputs = reramsim.input_bit_planes(ckpt.model, data.X_test[: args.samples], config=qcfg)
    profile = reramsim.bitline_profile(mapping, inputs)
    return mapping, profile


def _map_payload(mapping, profile):
    return {"empirical": profile.empirical, "tile": mapping.tile, "groups": reramsim.mapping_summary(mapping, profile)}


def _print_map(payload):
    print(f"{'XB':>5}  {'tiles+':>6}  {'tiles-':>6}  {'nonzero':>8}  {'max acc':>7}  {'bits':>4}  {'target':>6}")
    for g in payload["groups"]:
        print(
            f"{'XB' + str(g['group']):>5}  {g['tile_count_pos']:>6}  {g['tile_count_neg']:>6}  "
            f"{100 * g['nonzero_cell_fraction']:>7.2f}%  {g['max_accumulation']:>7}  {g['required_bits']:>4}  "
            f"{'-' if g['target_bits'] is None else g['target_bits']:>6}"
        )


def cmd_map(parser, args):
    mapping, profile = _mapping_for(args)
    payload = _map_payload(mapping, profile)
    if args.json:
        print(_dump(payload, args.out))
    else:
        _print_map(payload)
        if args.out:
            _dump(payload, args.out)
    return EXIT_OK


def _resolutions(text):
    """MSB group first, e.g. ``1,3,3,3``."""
    bits = _csv_ints(text)
    return {len(bits) - 1 - i: b for i, b in enumerate(bits)}


def cmd_adc(parser, args):
    try:
        report = reramsim.overhead_report(_resolutions(args.resolutions), args.baseline)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.json:
        print(_dump(report.to_dict(), args.out))
    else:
        print(render_overhead(report))
    return EXIT_OK


def cmd_map_adc(parser, args):
    mapping, profile = _mapping_for(args)
    payload = _map_payload(mapping, profile)
    bits = reramsim.required_adc_bits(profile)
    baseline = max(args.baseline, max(bits))
    computed = reramsim.overhead_report(bits, baseline)
    targets = None
    if mapping.num_groups == len(reramsim.TARGET_BITS):
        targets = reramsim.overhead_report(reramsim.TARGET_BITS, args.baseline)
    if args.json:
        out = {"mapping": payload, "computed": computed.to_dict(), "targets": targets and targets.to_dict()}
        print(_dump(out, args.out))
        return EXIT_OK
    _print_map(payload)
    print(f"\nADC overhead at computed resolutions (baseline {baseline} bit):")
    print(render_overhead(computed))
    if targets is not None:
        print(f"\nADC overhead at target resolutions (baseline {args.baseline} bit):")
        print(render_overhead(targets))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="bitslice", description="Bit-slice sparse fixed-point training and ReRAM crossbar analysis.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a quantized MLP on MNIST")
    t.add_argument("--config", help="flat key = value file; flags override it")
    t.add_argument("--data", help="directory with the MNIST IDX files")
    t.add_argument("--out", help="run directory for checkpoint, history and reports")
    t.add_argument("--mode", choices=trainkit.MODES)
    t.add_argument("--alpha", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--n-bits", dest="n_bits", type=int)
    t.add_argument("--slice-width", dest="slice_width", type=int)
    t.add_argument("--update", choices=trainkit.UPDATES)
    t.add_argument("--estimator", choices=trainkit.ESTIMATORS)
    t.add_argument("--warm-start", dest="warm_start", type=_optional_str, help="checkpoint to start from")
    t.add_argument("--prune-threshold", dest="prune_threshold", type=_optional_float)
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("quantize", cmd_quantize, "print per-layer quantization summary"),
        ("slice", cmd_slice, "print per-layer slice nonzero counts"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--out", help="also save arrays to this .npz file")
        s.set_defaults(func=func)

    r = sub.add_parser("report", help="per-slice sparsity table for checkpoints or given ratios")
    r.add_argument("--checkpoint", action="append", metavar="[NAME=]PATH")
    r.add_argument("--ratios", action="append", metavar="[NAME=]P3,P2,P1,P0", help="slice ratios in percent, MSB first")
    r.add_argument("--accuracy", type=float, help="accuracy (fraction) attached to --ratios rows")
    r.add_argument("--data", help="MNIST directory; adds test accuracy for checkpoints")
    r.add_argument("--json", action="store_true")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    for name, func in (("map", cmd_map), ("map-adc", cmd_map_adc)):
        m = sub.add_parser(name, help="map a checkpoint onto crossbars" + (" and size its ADCs" if func is cmd_map_adc else ""))
        m.add_argument("--checkpoint", required=True)
        m.add_argument("--inputs", metavar="DATASET", help="MNIST directory; profile with real input bit planes")
        m.add_argument("--samples", type=int, default=100)
        m.add_argument("--tile", type=int, default=reramsim.TILE)
        m.add_argument("--baseline", type=int, default=reramsim.BASELINE_BITS)
        m.add_argument("--json", action="store_true")
        m.add_argument("--out")
        m.set_defaults(func=func)

    a = sub.add_parser("adc", help="ADC energy/speed/area savings for given resolutions")
    a.add_argument("--resolutions", default="1,3,3,3", help="bits per group, MSB group first")
    a.add_argument("--baseline", type=int, default=reramsim.BASELINE_BITS)
    a.add_argument("--json", action="store_true")
    a.add_argument("--out")
    a.set_defaults(func=cmd_adc)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, bad flags exit 1
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return args.func(sub, args)
    except UsageError as exc:
        print(f"bitslice {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, DegenerateRangeError) as exc:
        print(f"bitslice {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"bitslice {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
