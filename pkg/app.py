"""
Stalled-vehicle tracking and anomaly engine

Command-line front door. Subcommands:

    track          detections -> tracks
    anomalies      detections -> tracks + anomaly events
    eval-mot       tracks + tracking GT -> CLEAR MOT report
    eval-anomaly   events + anomaly GT -> S4 / F1 / NRMSE report
    synth          scenario file -> detections + GT
    calibrate      detections + tracking GT -> gate calibration table

Exit status: 0 success, 1 usage error, 2 data error.
"""

from dotenv import load_dotenv

load_dotenv()

import argparse
import logging
import os
import sys
from dataclasses import asdict
from typing import List, Optional, Sequence

from agents.coordinator import PipelineCoordinator, RunManifest, run_videos
from config import config, load_config
from utils.errors import DataError, StallwatchError, UsageError
from utils.metrics import format_anomaly_table, format_calibration_table, format_mot_table, report_to_key_values

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class CommandLineParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting"""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def configure_logging(verbose: bool = False) -> None:
    settings = config.get_logging_config(verbose)
    handlers: List[logging.Handler] = []
    for spec in settings["handlers"]:
        if spec["type"] == "file":
            handlers.append(logging.FileHandler(spec["filename"]))
        else:
            handlers.append(logging.StreamHandler(sys.stderr))
    logging.basicConfig(level=settings["level"], format=settings["format"], handlers=handlers, force=True)


def build_parser() -> CommandLineParser:
    parser = CommandLineParser(prog="stallwatch",
                               description="Stalled-vehicle tracking and anomaly detection")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", metavar="command")

    def common(sub, many_inputs: bool, out_required: bool):
        sub.add_argument("--in", dest="inputs", required=True, nargs="+" if many_inputs else None,
                         metavar="PATH")
        sub.add_argument("--config", dest="config_path", metavar="PATH")
        sub.add_argument("--out", dest="out_dir", required=out_required, metavar="DIR")

    track = commands.add_parser("track", help="link detections into tracks")
    common(track, True, True)
    track.add_argument("--video-id")
    track.add_argument("--jobs", type=int, default=1)

    anomalies = commands.add_parser("anomalies", help="track and detect stalled vehicles")
    common(anomalies, True, True)
    anomalies.add_argument("--video-id")
    anomalies.add_argument("--jobs", type=int, default=1)
    anomalies.add_argument("--roi", dest="roi_path", metavar="PATH", help="operator ROI polygon (x,y per line)")

    eval_mot = commands.add_parser("eval-mot", help="CLEAR MOT scores of a tracks file")
    common(eval_mot, False, False)
    eval_mot.add_argument("--gt", dest="gt_path", required=True, metavar="PATH")

    eval_anomaly = commands.add_parser("eval-anomaly", help="anomaly scores of events files")
    common(eval_anomaly, True, False)
    eval_anomaly.add_argument("--gt", dest="gt_path", required=True, metavar="PATH")

    synth = commands.add_parser("synth", help="generate a synthetic dataset")
    common(synth, True, True)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--video-id")
    synth.add_argument("--jobs", type=int, default=1)

    calibrate = commands.add_parser("calibrate", help="sweep the association gates")
    common(calibrate, False, True)
    calibrate.add_argument("--gt", dest="gt_path", required=True, metavar="PATH")

    return parser


def _prepare_out_dir(out_dir: Optional[str]) -> None:
    if out_dir is None:
        return
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory: {e.strerror}", out_dir) from None


def _manifest(args, cfg) -> RunManifest:
    return RunManifest(
        command=args.command,
        output_dir=args.out_dir,
        config_path=args.config_path,
        engine_config=asdict(cfg),
        format_versions=config.format_versions(),
    )


def _write_report(args, cfg, filename: str, text: str) -> None:
    if args.out_dir is None:
        return
    path = os.path.join(args.out_dir, filename)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    manifest = _manifest(args, cfg)
    manifest.inputs = list(args.inputs) if isinstance(args.inputs, list) else [args.inputs]
    manifest.inputs.append(args.gt_path)
    manifest.outputs = [path]
    manifest.write(os.path.join(args.out_dir, config.system.manifest_name))


def run_command(args) -> int:
    cfg = load_config(args.config_path)
    _prepare_out_dir(args.out_dir)

    if args.command in ("track", "anomalies", "synth"):
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        options = {"video_id": args.video_id}
        if args.command == "anomalies":
            options["roi_path"] = args.roi_path
        if args.command == "synth":
            options["seed"] = args.seed
        results = run_videos(args.command, args.inputs, cfg, args.out_dir, args.jobs, **options)

        manifest = _manifest(args, cfg)
        for result in results:
            manifest.add_result(result)
            counts = ", ".join(f"{k}={v}" for k, v in result.counts.items())
            print(f"{result.video_id}: {counts}")
        manifest.write(os.path.join(args.out_dir, config.system.manifest_name))
        return EXIT_OK

    coordinator = PipelineCoordinator(cfg)
    if args.command == "eval-mot":
        report = coordinator.run_eval_mot(args.inputs, args.gt_path)
        print(format_mot_table(report))
        _write_report(args, cfg, "mot_report.txt", report_to_key_values(report))
    elif args.command == "eval-anomaly":
        score = coordinator.run_eval_anomaly(args.inputs, args.gt_path)
        print(format_anomaly_table(score))
        _write_report(args, cfg, "anomaly_report.txt", report_to_key_values(score))
    elif args.command == "calibrate":
        rows, best, written = coordinator.run_calibrate(args.inputs, args.gt_path, args.out_dir)
        print(format_calibration_table(rows))
        if best is not None:
            print(f"best: sim_gate={best.sim_gate} iou_gate={best.iou_gate} "
                  f"dist_gate_px={best.dist_gate_px} (MOTA {best.mota:.4f})")
        manifest = _manifest(args, cfg)
        manifest.inputs = [args.inputs, args.gt_path]
        manifest.outputs = [written]
        manifest.write(os.path.join(args.out_dir, config.system.manifest_name))
    return EXIT_OK


def dispatch(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
        if args.command is None:
            raise UsageError(parser.format_help())
        configure_logging(args.verbose)
        return run_command(args)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        logger.debug("data error", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        path = e.filename if e.filename is not None else ""
        print(f"error: {path}: {e.strerror or e}", file=sys.stderr)
        return EXIT_DATA
    except StallwatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
