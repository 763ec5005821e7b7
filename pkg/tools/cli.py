import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional

from config.run_config import RunConfig, load_run_config
from config.settings import DATA_DIR, EDGE_ACTIVATIONS, LOSS_IDS, OUTPUT_DIR, setup_logging
from relgraph.errors import EXIT_NUMERICAL, EXIT_OK, RelGraphError, UsageError
from relgraph.evaluation import evaluate
from relgraph.experiments import (
    compare_edge_activations, compare_losses, dim_sweep, fit, metric_header, run_ablation, toy2d,
)
from relgraph.exporters import export_edge_topk, export_margin_map, export_nau_scales, write_csv
from relgraph.gradcheck import gradcheck
from relgraph.losses import MARGIN_LOSSES, MarginConfig
from relgraph.model import HeadModel
from relgraph.synthdata import Dataset, gen_dataset, load_dataset, save_dataset

logger = logging.getLogger("relgraph.cli")

COMMANDS = (
    "gen-data", "train", "eval", "gradcheck", "sweep-dim", "toy2d", "margin-map",
    "export-viz", "ablation", "compare-losses", "compare-activations",
)

# flag dest -> run config key
CONFIG_FLAGS = {
    "seed": "seed", "out": "out", "loss": "loss", "edge_activation": "edge_activation",
    "m1": "m1", "m2": "m2", "scale": "scale", "dim": "dim", "epochs": "epochs",
    "batch": "batch", "kind": "kind", "dataset": "dataset", "checkpoint": "checkpoint",
    "dims": "dims", "resolution": "resolution", "n_classes": "n_classes",
    "per_class": "per_class", "node": "node", "topk": "topk", "samples": "samples",
    "seeds": "seeds",
}
GEN_FLAGS = {"train_ids": "train_ids", "test_ids": "test_ids", "per_id": "per_id", "domain_gap": "domain_gap"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


class RelGraphCLI:
    def __init__(self) -> None:
        self.parser = self._build_parser()

    def _build_parser(self) -> argparse.ArgumentParser:
        parser = _Parser(prog="relgraph", description="Relational graph embedding head: data, training, evaluation")
        sub = parser.add_subparsers(dest="command", parser_class=_Parser)
        for name in COMMANDS:
            cmd = sub.add_parser(name)
            cmd.add_argument("--config", type=Path, help="JSON run config; flags override it")
            cmd.add_argument("--seed", type=int)
            cmd.add_argument("--out", type=str)
            cmd.add_argument("--loss", choices=LOSS_IDS)
            cmd.add_argument("--edge-activation", choices=EDGE_ACTIVATIONS)
            cmd.add_argument("--m1", type=float)
            cmd.add_argument("--m2", type=float)
            cmd.add_argument("--scale", type=float)
            cmd.add_argument("--dim", type=int, help="node embedding dimension d")
            cmd.add_argument("--nodes", type=int, help="node count N (a perfect square)")
            cmd.add_argument("--epochs", type=int)
            cmd.add_argument("--batch", type=int)
            cmd.add_argument("--kind", help="head kind")
            cmd.add_argument("--dataset", type=str, help="dataset directory")
            cmd.add_argument("--checkpoint", type=str, help="checkpoint directory")
            cmd.add_argument("--train-ids", type=int)
            cmd.add_argument("--test-ids", type=int)
            cmd.add_argument("--per-id", type=int)
            cmd.add_argument("--domain-gap", type=float)
            if name == "sweep-dim":
                cmd.add_argument("--dims", type=_int_list)
            if name == "margin-map":
                cmd.add_argument("--resolution", type=int)
            if name == "toy2d":
                cmd.add_argument("--n-classes", type=int)
                cmd.add_argument("--per-class", type=int)
            if name == "export-viz":
                cmd.add_argument("--node", type=int)
                cmd.add_argument("--topk", type=int)
                cmd.add_argument("--samples", type=int)
            if name == "gradcheck":
                cmd.add_argument("--seeds", type=int)
                cmd.add_argument("--corrupt-group", help=argparse.SUPPRESS)
        return parser

    # ── Config ──────────────────────────────────────────────────

    def resolve(self, args: argparse.Namespace) -> RunConfig:
        """defaults <- --config file <- explicit flags"""
        overrides: Dict = {key: getattr(args, dest, None) for dest, key in CONFIG_FLAGS.items()}
        if args.nodes is not None:
            side = math.isqrt(max(args.nodes, 0))
            if args.nodes < 1 or side * side != args.nodes:
                raise UsageError(f"--nodes must be a positive perfect square, got {args.nodes}")
            overrides["height"] = overrides["width"] = side

        cfg = load_run_config(args.config, overrides)
        gen_flags = {key: getattr(args, dest) for dest, key in GEN_FLAGS.items() if getattr(args, dest) is not None}
        if args.seed is not None:
            gen_flags.setdefault("seed", args.seed)
        if gen_flags:
            cfg.values["gen"] = {**cfg["gen"], **gen_flags}
        return cfg

    @staticmethod
    def out_dir(cfg: RunConfig, command: str) -> Path:
        if cfg.get("out"):
            return Path(cfg["out"])
        return DATA_DIR if command == "gen-data" else OUTPUT_DIR / command

    @staticmethod
    def dataset(cfg: RunConfig) -> Dataset:
        """Load --dataset, or generate one in memory from the gen settings"""
        if cfg.get("dataset"):
            return load_dataset(Path(cfg["dataset"]))
        gen = cfg["gen"]
        if min(gen["train_ids"], gen["test_ids"], gen["per_id"]) < 1:
            raise UsageError("--train-ids, --test-ids and --per-id must be >= 1")
        return gen_dataset(
            n_train_ids=gen["train_ids"], n_test_ids=gen["test_ids"], per_id_per_domain=gen["per_id"],
            dims=(cfg["channels"], cfg["height"], cfg["width"]), domain_gap=gen["domain_gap"],
            seed=gen["seed"], noise_sigma=gen["noise"], structure_sharpness=gen["sharpness"],
        )

    # ── Commands ────────────────────────────────────────────────

    def cmd_gen_data(self, cfg: RunConfig, out: Path, args) -> int:
        ds = self.dataset(RunConfig({**cfg.as_dict(), "dataset": None}))
        save_dataset(ds, out)
        print(f"Dataset written to {out} (seed {cfg['gen']['seed']})")
        return EXIT_OK

    def cmd_train(self, cfg: RunConfig, out: Path, args) -> int:
        ds = self.dataset(cfg)
        model, log = fit(cfg, ds)
        model.save(out / "checkpoint")
        write_csv(out / "train_log.csv", ["epoch", "lr", "loss", "accuracy"],
                  [[e.epoch, e.lr, e.loss, e.accuracy] for e in log])
        if log:
            print(f"Trained {model.kind}/{model.loss}: loss {log[0].loss:.6f} -> {log[-1].loss:.6f}")
        return EXIT_OK

    def cmd_eval(self, cfg: RunConfig, out: Path, args) -> int:
        if not cfg.get("checkpoint"):
            raise UsageError("eval needs --checkpoint")
        model = HeadModel.load(Path(cfg["checkpoint"]))
        ds = self.dataset(cfg)
        report = evaluate(model, ds.gallery, ds.probe, cfg["far_levels"])
        write_csv(out / "metrics.csv", ["variant"] + metric_header(cfg["far_levels"]),
                  [[f"{model.kind}+{model.loss}"] + report.row(cfg["far_levels"])])
        print(f"rank1={report.rank1:.4f} "
              + " ".join(f"vr@{f:g}={report.vr_at_far[f]:.4f}" for f in cfg["far_levels"]))
        return EXIT_OK

    def cmd_gradcheck(self, cfg: RunConfig, out: Path, args) -> int:
        losses = [args.loss] if args.loss else list(LOSS_IDS)
        seeds = range(cfg["seed"], cfg["seed"] + (cfg.get("seeds") or 1))
        nodes = args.nodes or 16
        rows, failed = [], 0
        for loss_id in losses:
            for seed in seeds:
                report = gradcheck(
                    loss_id=loss_id, seed=seed, kind=cfg["kind"], nodes=nodes,
                    batch=args.batch if args.batch is not None else 4,
                    dim=args.dim or 4, edge_activation=cfg["edge_activation"],
                    margin=MarginConfig(cfg["m1"], cfg["m2"], cfg["scale"], cfg["alpha"]),
                    corrupt_group=args.corrupt_group,
                )
                failed += 0 if report.passed else 1
                rows.extend([loss_id, seed, g.name, g.max_rel_error, "pass" if g.passed else "FAIL"]
                            for g in report.groups)
                for g in report.groups:
                    if not g.passed:
                        print(f"❌ {loss_id} seed={seed} {g.name}: rel err {g.max_rel_error:.3e}")
        write_csv(out / "gradcheck.csv", ["loss", "seed", "group", "max_rel_error", "status"], rows)
        if failed:
            print(f"💥 {failed} gradient check(s) failed")
            return EXIT_NUMERICAL
        print(f"✅ All gradient checks passed ({len(losses)} loss(es) × {len(seeds)} seed(s))")
        return EXIT_OK

    def cmd_sweep_dim(self, cfg: RunConfig, out: Path, args) -> int:
        header, rows = dim_sweep(cfg.get("dims") or [16, 32, 64, 128, 256], cfg, self.dataset(cfg))
        write_csv(out / "sweep.csv", header, rows)
        return EXIT_OK

    def cmd_toy2d(self, cfg: RunConfig, out: Path, args) -> int:
        per_class = cfg.get("per_class") or 30
        header, rows, summary = toy2d(cfg, n_classes=cfg.get("n_classes") or 8, per_domain=max(1, per_class // 2))
        write_csv(out / "toy2d.csv", header, rows)
        write_csv(out / "toy2d_summary.csv", list(summary), [list(summary.values())])
        return EXIT_OK

    def cmd_margin_map(self, cfg: RunConfig, out: Path, args) -> int:
        loss_id = cfg["loss"]
        if loss_id not in MARGIN_LOSSES:
            raise UsageError(f"margin-map supports {', '.join(MARGIN_LOSSES)}, not {loss_id}")
        if loss_id == "csoftmax":
            MarginConfig(cfg["m1"], cfg["m2"], cfg["scale"], cfg["alpha"])
        params = {"m1": cfg["m1"], "m2": cfg["m2"], "s": cfg["scale"], "alpha": cfg["alpha"],
                  "m": cfg["cosface_m"] if loss_id == "cosface" else cfg["arcface_m"]}
        resolution = cfg.get("resolution") or 256
        if resolution < 2:
            raise UsageError(f"--resolution must be >= 2, got {resolution}")
        export_margin_map(loss_id, params, resolution, out)
        return EXIT_OK

    def cmd_export_viz(self, cfg: RunConfig, out: Path, args) -> int:
        if not cfg.get("checkpoint"):
            raise UsageError("export-viz needs --checkpoint")
        model = HeadModel.load(Path(cfg["checkpoint"]))
        if model.rgm is None:
            raise UsageError(f"export-viz needs an rgm head, checkpoint holds {model.kind}")
        ds = self.dataset(cfg)
        samples = (ds.gallery + ds.probe)[: cfg.get("samples") or len(ds.gallery + ds.probe)]
        traces = []
        for s in samples:
            _, trace = model.embed(s.features)
            traces.append(trace)
        export_edge_topk(traces[0], cfg.get("node") or 0, out, k=cfg.get("topk") or 5)
        if model.nau is not None:
            export_nau_scales(traces, [(s.identity, s.domain) for s in samples], out / "nau_scales.csv")
        return EXIT_OK

    def cmd_ablation(self, cfg: RunConfig, out: Path, args) -> int:
        header, rows = run_ablation(cfg, self.dataset(cfg))
        write_csv(out / "ablation.csv", header, rows)
        return EXIT_OK

    def cmd_compare_losses(self, cfg: RunConfig, out: Path, args) -> int:
        header, rows = compare_losses(cfg, self.dataset(cfg))
        write_csv(out / "losses.csv", header, rows)
        return EXIT_OK

    def cmd_compare_activations(self, cfg: RunConfig, out: Path, args) -> int:
        header, rows = compare_edge_activations(cfg, self.dataset(cfg))
        write_csv(out / "activations.csv", header, rows)
        return EXIT_OK

    def run(self, argv: Optional[List[str]] = None) -> int:
        args = self.parser.parse_args(argv)
        if not args.command:
            self.parser.print_help()
            raise UsageError("no command given")
        cfg = self.resolve(args)
        out = self.out_dir(cfg, args.command)
        cfg.echo(out)
        handler = getattr(self, "cmd_" + args.command.replace("-", "_"))
        return handler(cfg, out, args)


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    cli = RelGraphCLI()
    try:
        return cli.run(argv)
    except RelGraphError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        print(f"❌ Error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        logger.error(f"I/O error: {exc}")
        print(f"❌ Error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
