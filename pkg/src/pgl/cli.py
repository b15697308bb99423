"""Command-line surface: train / eval / gradcheck / memest / ablate.

``PGL_THREADS`` caps BLAS kernel parallelism (default 1 for bit-deterministic
runs); it must take effect before numpy spins up its thread pools, hence the
environment setup ahead of any numeric import.
"""

import os

_threads = os.environ.get("PGL_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import memory as M
from . import training as TR
from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint
from .config import parse_config
from .errors import ConfigError, PglError
from .gradcheck import run_suite
from .network import partition, partition_spanning
from .memory import unit_plan
from .training import NesterovSGD, Schedule, evaluate


def _fmt(v) -> str:
    return "" if v is None else f"{v:.8g}"


def write_metrics(records, J: int, path):
    """Fixed schema: epoch,mode,lr,global_loss,local_loss_1..J,train_acc,test_acc.

    Absent values stay empty, never zero-filled."""
    header = ["epoch", "mode", "lr", "global_loss"]
    header += [f"local_loss_{j}" for j in range(1, J + 1)]
    header += ["train_acc", "test_acc"]
    lines = [",".join(header)]
    for r in records:
        row = [str(r.epoch), r.mode, _fmt(r.lr), _fmt(r.global_loss)]
        row += [_fmt(v) for v in r.local_losses]
        row += [_fmt(r.train_acc), _fmt(r.test_acc)]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_train(args) -> int:
    config = parse_config(args.config)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    if args.out is not None:
        config = config.with_overrides(out_dir=args.out)
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records, model, opt = TR.train(config)
    write_metrics(records, model.J, out_dir / "metrics.csv")
    save_checkpoint(model, opt, config.epochs, out_dir / "final.ckpt")
    print(f"final test accuracy: {records[-1].test_acc:.4f}")
    print(f"wrote {out_dir / 'metrics.csv'} and {out_dir / 'final.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    config = parse_config(args.config)
    model = config.build_model()
    opt = NesterovSGD(config.momentum, config.weight_decay)
    apply_checkpoint(load_checkpoint(args.ckpt), model, opt)
    _, test_set = config.build_datasets()
    from . import data as D

    acc = evaluate(model, D.batches(test_set, config.batch_size, None, 0))
    print(f"test accuracy: {acc:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    start = time.time()
    results = run_suite(seed=args.seed)
    failed = 0
    for name, err, tol, ok in results:
        status = "ok" if ok else "FAIL"
        print(f"{name:16s} max rel err {err:.3e}  (tol {tol:.0e})  {status}")
        failed += not ok
    print(f"{len(results)} ops checked in {time.time() - start:.1f}s, {failed} failed")
    return 1 if failed else 0


def cmd_memest(args) -> int:
    config = parse_config(args.config, training=False)
    plans = unit_plan(config.network)
    core = sum(1 for u in plans if u.partitionable)
    if config.blocks <= core:
        part = partition(plans, config.blocks)
    else:
        # block counts beyond the trainable bound use the spanning
        # accounting, where the stem and classifier count as units
        part = partition_spanning(plans, config.blocks)
    schedule = Schedule(config.epochs, config.P, config.Q, config.regime)
    est = M.estimate(config.network, part, config.batch_size, schedule, config.aux)
    ratio_local = est.peak_local / est.peak_bp
    ratio_avg = est.schedule_avg / est.peak_bp
    print(f"peak_bp       {est.peak_bp:>14d} bytes")
    print(f"peak_local    {est.peak_local:>14d} bytes  (local/bp = {ratio_local:.3f})")
    print(f"schedule_avg  {est.schedule_avg:>14.0f} bytes  (avg/bp   = {ratio_avg:.3f})")
    for j, b in enumerate(est.per_block, 1):
        print(f"  block {j:>2d}    {b:>14d} bytes")
    if args.csv:
        lines = ["quantity,bytes", f"peak_bp,{est.peak_bp}", f"peak_local,{est.peak_local}",
                 f"schedule_avg,{est.schedule_avg:.1f}"]
        lines += [f"block_{j},{b}" for j, b in enumerate(est.per_block, 1)]
        Path(args.csv).write_text("\n".join(lines) + "\n")
        print(f"wrote {args.csv}")
    return 0


def _int_list(text: str, what: str):
    items = [s for s in text.split(",") if s.strip()]
    if not items:
        raise ConfigError(f"{what} list must not be empty")
    return [int(s) for s in items]


def cmd_ablate(args) -> int:
    config = parse_config(args.config)
    p_list = _int_list(args.P, "P")
    q_list = _int_list(args.Q, "Q")
    if args.seeds < 1:
        raise ConfigError("need at least one seed")
    for p in p_list:
        for q in q_list:
            Schedule(config.epochs, p, q, "pgl").validate()
    seeds = [config.seed + i for i in range(args.seeds)]
    out_dir = Path(args.out if args.out is not None else config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    means = {}
    for p in p_list:
        for q in q_list:
            accs = []
            for s in seeds:
                run_cfg = config.with_overrides(regime="pgl", P=p, Q=q, seed=s).validate()
                records, _, _ = TR.train(run_cfg)
                acc = records[-1].test_acc
                accs.append(acc)
                rows.append(("pgl", p, q, s, acc))
                print(f"pgl P={p} Q={q} seed={s}: {acc:.4f}")
            means[(p, q)] = float(np.mean(accs))
    dgl_accs = []
    for s in seeds:
        run_cfg = config.with_overrides(regime="dgl", seed=s).validate()
        records, _, _ = TR.train(run_cfg)
        acc = records[-1].test_acc
        dgl_accs.append(acc)
        rows.append(("dgl", "", "", s, acc))
        print(f"dgl seed={s}: {acc:.4f}")

    csv_path = out_dir / "ablation.csv"
    lines = ["regime,P,Q,seed,test_acc"]
    lines += [f"{r},{p},{q},{s},{a:.6f}" for r, p, q, s, a in rows]
    csv_path.write_text("\n".join(lines) + "\n")

    print("\nmean test accuracy over seeds:")
    print("          " + "".join(f"P={p:<8d}" for p in p_list))
    for q in q_list:
        print(f"  Q={q:<4d}  " + "".join(f"{means[(p, q)] * 100:<10.2f}" for p in p_list))
    print(f"  DGL     {float(np.mean(dgl_accs)) * 100:.2f}")
    print(f"wrote {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("memest", help="analytic training-memory estimates")
    p.add_argument("--config", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_memest)

    p = sub.add_parser("ablate", help="grid over guidance period and duration")
    p.add_argument("--config", required=True)
    p.add_argument("--P", required=True, help="comma-separated periods, e.g. 5,10,15,20")
    p.add_argument("--Q", required=True, help="comma-separated durations, e.g. 1,2,3")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PglError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
