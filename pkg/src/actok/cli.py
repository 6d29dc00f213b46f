"""Command-line entry point tying the pipeline together.

Subcommands: gen-suite, gen-demos, fit, encode, decode, build-policy,
eval, report, verify-tables. Every stochastic command takes an explicit
--seed; outputs are accompanied by a run record carrying the arguments and
input file fingerprints so any result can be replayed. The ACTOK_OUT_DIR
environment variable, when set, overrides --out-dir options.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from actok import __version__, sim
from actok.binning import fit_quantile_bins, save_scheme
from actok.codec import CodecConfig, decode_tokens, encode_chunk, fit_codec, \
    load_model, save_model
from actok.dct import DctAxis
from actok.errors import DatasetError, SimError, ToolkitError
from actok.harness import ExecMode, ExecStrategy, reference_checks, render_report, \
    run_suite, save_report, load_report, trial_seed
from actok.policy import DEMO_NOISE, build_knn, expert_demo, load_policy, save_policy
from actok.trajectory import ChunkSpec, chunk_trajectory, load_dataset, save_dataset

_EXIT_CODES = {"data": 3, "fit": 4, "codec": 5, "policy": 6, "sim": 7, "error": 9}


def _out_dir(path: str) -> Path:
    override = os.environ.get("ACTOK_OUT_DIR")
    out = Path(override) if override else Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _file_fingerprint(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_run_record(target: Path, command: str, args: argparse.Namespace,
                      inputs: list[Path]) -> None:
    record = {
        "command": command,
        "version": __version__,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "inputs": {str(p): _file_fingerprint(p) for p in inputs},
    }
    path = target / "run_record.json" if target.is_dir() else \
        target.with_name(target.name + ".run.json")
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, default=str)
        fh.write("\n")


# --- gen-suite ---------------------------------------------------------------

def cmd_gen_suite(args) -> int:
    tasks = []
    idx = 0
    for category, count, ood in (("single", args.singles, False),
                                 ("multi", args.multis, False),
                                 ("spatial", args.spatials, False),
                                 ("single", args.ood_singles, True)):
        for _ in range(count):
            tid = f"{'ood-' if ood else ''}{category}-{idx:03d}"
            tasks.append(sim.make_task(category, seed=args.seed + idx,
                                       task_id=tid, ood=ood))
            idx += 1
    if args.distractor_variants:
        singles = [t for t in tasks if t.category == "single"]
        if not singles:
            raise SimError("--distractor-variants needs at least one single task")
        tasks.extend(sim.distractor_variant(t, n_distractors=args.distractors)
                     for t in singles)
    if not tasks:
        raise SimError("suite would be empty; request at least one task")
    sim.save_suite(tasks, args.out)
    _write_run_record(Path(args.out), "gen-suite", args, [])
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return 0


# --- gen-demos ---------------------------------------------------------------

def cmd_gen_demos(args) -> int:
    if args.num < 1:
        raise DatasetError("--num must request at least one demonstration")
    suite = sim.load_suite(args.suite)
    demo_tasks = [t for t in suite if not t.distractors]
    if not demo_tasks:
        raise SimError("suite has no distractor-free tasks to demonstrate")
    trajectories = []
    for i in range(args.num):
        task = demo_tasks[i % len(demo_tasks)]
        demo_task = replace(task, seed=trial_seed(args.seed, task.task_id, i))
        trajectories.append(expert_demo(demo_task, max_steps=args.max_steps,
                                        noise=args.noise))
    save_dataset(trajectories, args.out)
    _write_run_record(Path(args.out), "gen-demos", args, [Path(args.suite)])
    total = sum(len(t) for t in trajectories)
    print(f"wrote {len(trajectories)} demos ({total} steps) to {args.out}")
    return 0


# --- fit ----------------------------------------------------------------------

def _dataset_chunks(dataset, spec: ChunkSpec, stride: int):
    chunks = []
    for ti, traj in enumerate(dataset):
        chunks.extend(chunk_trajectory(traj, spec, stride=stride, trajectory_id=ti))
    return chunks


def cmd_fit(args) -> int:
    dataset = load_dataset(args.dataset)
    if not dataset:
        raise DatasetError(f"{args.dataset}: dataset is empty")
    out = _out_dir(args.out_dir)
    action_dim = dataset[0].action_dim

    actions = np.concatenate([t.actions() for t in dataset])
    scheme = fit_quantile_bins(actions, num_bins=args.bins)
    save_scheme(scheme, out / "binning.json")

    spec = ChunkSpec(horizon=args.horizon, action_dim=action_dim)
    chunks = _dataset_chunks(dataset, spec, args.stride)
    config = CodecConfig(
        spec=spec,
        dct_axis=DctAxis.from_name(args.dct_axis),
        scale=args.scale,
        target_err=args.target_err,
        clamp=args.clamp,
        max_vocab=args.max_vocab,
    )
    model, summary = fit_codec(chunks, config)
    save_model(model, out / "codec.json")
    with open(out / "fit_summary.json", "w") as fh:
        json.dump({
            "chunks": summary.chunks,
            "vocab_used": summary.vocab_used,
            "saturation_rate": summary.saturation_rate,
            "mean_tokens_per_chunk": summary.mean_tokens_per_chunk,
            "baseline_tokens_per_chunk": summary.baseline_tokens_per_chunk,
            "compression_ratio": summary.compression_ratio,
            "scale": model.scale,
            "codec_fingerprint": model.fingerprint(),
        }, fh, indent=2)
        fh.write("\n")
    _write_run_record(out, "fit", args, [Path(args.dataset)])
    for line in summary.lines():
        print(line)
    print(f"scale:                {model.scale:g}")
    print(f"models written to {out}")
    return 0


# --- encode / decode -----------------------------------------------------------

def cmd_encode(args) -> int:
    model = load_model(args.model)
    records = []
    if args.in_format == "dataset":
        dataset = load_dataset(args.infile)
        stride = args.stride if args.stride else model.spec.horizon
        for ti, traj in enumerate(dataset):
            for chunk in chunk_trajectory(traj, model.spec, stride=stride,
                                          trajectory_id=ti):
                records.append({"trajectory": ti, "start": chunk.start,
                                "tokens": encode_chunk(chunk, model)})
    else:
        with open(args.infile) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                values = np.asarray(rec["values"], dtype=np.float64)
                records.append({
                    "trajectory": rec.get("trajectory", lineno - 1),
                    "start": rec.get("start", 0),
                    "tokens": encode_chunk(values, model),
                })
    with open(args.out, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    _write_run_record(Path(args.out), "encode", args,
                      [Path(args.model), Path(args.infile)])
    print(f"encoded {len(records)} chunks to {args.out}")
    return 0


def cmd_decode(args) -> int:
    model = load_model(args.model)
    errors = []
    count = 0
    with open(args.infile) as fh, open(args.out, "w") as out:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                values = decode_tokens([int(t) for t in rec["tokens"]], model)
            except (ToolkitError, ValueError, KeyError, json.JSONDecodeError) as exc:
                errors.append(f"record {lineno}: {exc}")
                continue
            out.write(json.dumps({
                "trajectory": rec.get("trajectory", lineno - 1),
                "start": rec.get("start", 0),
                "values": values.tolist(),
            }) + "\n")
            count += 1
    _write_run_record(Path(args.out), "decode", args,
                      [Path(args.model), Path(args.infile)])
    print(f"decoded {count} chunks to {args.out}")
    if errors:
        for err in errors:
            print(f"error[data]: {err}", file=sys.stderr)
        return _EXIT_CODES["data"]
    return 0


# --- build-policy ---------------------------------------------------------------

def cmd_build_policy(args) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.dataset)
    policy = build_knn(dataset, model, stride=args.stride, pad_tail=args.pad_tail)
    save_policy(policy, args.out)
    _write_run_record(Path(args.out), "build-policy", args,
                      [Path(args.model), Path(args.dataset)])
    print(f"stored {len(policy.tokens)} memory entries to {args.out}")
    return 0


# --- eval / report ---------------------------------------------------------------

def cmd_eval(args) -> int:
    model = load_model(args.model)
    policy = load_policy(args.policy, model)
    suite = sim.load_suite(args.suite)
    out = _out_dir(args.out_dir)
    strategy = ExecStrategy(mode=ExecMode.from_name(args.strategy),
                            horizon=model.spec.horizon)
    report = run_suite(
        policy, suite, strategy, trials=args.trials, seed=args.seed,
        log_dir=(out / "rollouts") if args.log_rollouts else None,
        metadata={
            "policy_fingerprint": model.fingerprint(),
            "suite": str(args.suite),
        },
    )
    save_report(report, out / "report.json")
    with open(out / "report.txt", "w") as fh:
        fh.write(render_report(report) + "\n")
    _write_run_record(out, "eval", args,
                      [Path(args.model), Path(args.policy), Path(args.suite)])
    print(render_report(report))
    return 0


def cmd_report(args) -> int:
    print(render_report(load_report(args.report)))
    return 0


# --- verify-tables ----------------------------------------------------------------

def cmd_verify_tables(args) -> int:
    failures = 0
    for name, computed, expected, ok in reference_checks():
        status = "PASS" if ok else "FAIL"
        print(f"{status} {name}: computed {computed:.4f}, expected {expected}")
        failures += 0 if ok else 1
    return 0 if failures == 0 else 1


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actok",
        description="Action tokenization toolkit: codecs, toy simulator, evaluation harness",
    )
    parser.add_argument("--version", action="version", version=f"actok {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-suite", help="generate a task suite file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--singles", type=int, default=10)
    p.add_argument("--multis", type=int, default=0)
    p.add_argument("--spatials", type=int, default=0)
    p.add_argument("--ood-singles", type=int, default=0)
    p.add_argument("--distractor-variants", action="store_true",
                   help="add a distractor twin for every single task")
    p.add_argument("--distractors", type=int, default=2)
    p.set_defaults(func=cmd_gen_suite)

    p = sub.add_parser("gen-demos", help="roll scripted-expert demonstrations")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-steps", type=int, default=sim.STEP_LIMIT)
    p.add_argument("--noise", type=float, default=DEMO_NOISE,
                   help="exploration jitter magnitude (0 disables)")
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("fit", help="fit the binning scheme and the chunk codec")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--dct-axis", choices=[a.value for a in DctAxis],
                   default=DctAxis.PER_TIMESTEP.value)
    p.add_argument("--scale", type=float, default=None,
                   help="fixed quantization scale (default 32 when --target-err unset)")
    p.add_argument("--target-err", type=float, default=None,
                   help="calibrate the scale to this normalized round-trip error")
    p.add_argument("--clamp", type=int, default=127)
    p.add_argument("--max-vocab", type=int, default=2048)
    p.add_argument("--bins", type=int, default=256)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("encode", help="encode chunks to token records")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--in-format", choices=["dataset", "chunks"], default="dataset")
    p.add_argument("--stride", type=int, default=None,
                   help="chunking stride for dataset input (default: horizon)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode token records back to chunks")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("build-policy", help="build a retrieval policy from demos")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--pad-tail", action=argparse.BooleanOptionalAction, default=True,
                   help="keep padded trailing windows so terminal actions are retrievable")
    p.set_defaults(func=cmd_build_policy)

    p = sub.add_parser("eval", help="run a policy over a task suite")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--strategy", choices=[m.value for m in ExecMode],
                   default=ExecMode.EXECUTE_FIRST.value)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--log-rollouts", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render a stored report")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify-tables",
                       help="recompute built-in reference aggregates and check them")
    p.set_defaults(func=cmd_verify_tables)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "fit" and args.scale is None and args.target_err is None:
        args.scale = 32.0  # desk-scale default; see --target-err for calibration
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return _EXIT_CODES.get(exc.category, _EXIT_CODES["error"])
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return _EXIT_CODES["error"]


if __name__ == "__main__":
    sys.exit(main())
