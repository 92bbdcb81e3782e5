# app/cli_manager.py
import argparse
import logging
import os
import sys
from dataclasses import replace

from earlybird_utils import early_bird_run
from errors import TicketFinderError
from metrics_utils import network_cost, store
from pruning_utils import PruneConfig, imp, save_ticket, train_ticket
from shapes_tasks import TASK_IDS, build_network, evaluate, load_or_generate, make_task
from transfer_utils import GroupMapping, TransferSpec, pretrain, run_transfer

from .config import NETWORK_SIZES, RECIPES, ExperimentConfig, load_config

logger = logging.getLogger(__name__)

EXIT_USAGE = 2


def _groups(value: str | None) -> tuple[str, ...] | None:
    return tuple(g for g in value.split(",") if g) if value else None


def _rewind(value: str) -> int | float:
    """Ex.: 0.1 é fração do treino; 300 e 300.0 são a iteração 300."""
    return float(value) if "." in value else int(value)


class CLIManager:
    """Subcomandos ``train``, ``prune``, ``earlybird``, ``transfer``, ``run`` e ``report``."""

    def __init__(self, app):
        self.app = app
        self.parser = self.build_parser()

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog="ticket_finder",
                                         description="Busca de lottery tickets em redes pequenas.")
        parser.add_argument("-v", "--verbose", action="store_true", help="log em nível DEBUG")
        sub = parser.add_subparsers(dest="command", required=True)

        def common(command: argparse.ArgumentParser):
            command.add_argument("--config", help="arquivo JSON de configuração")
            command.add_argument("--task", choices=TASK_IDS, default=None)
            command.add_argument("--size", choices=NETWORK_SIZES, default=None)
            command.add_argument("--seed", type=int, default=None)
            command.add_argument("--iters", type=int, default=None)
            command.add_argument("--out", default=None, help="arquivo de saída")

        train = sub.add_parser("train", help="treina a rede densa")
        common(train)

        prune = sub.add_parser("prune", help="IMP + retreino do ticket")
        common(prune)
        prune.add_argument("--p", type=float, default=0.8)
        prune.add_argument("--rounds", type=int, default=1)
        prune.add_argument("--scope", choices=("global", "layerwise"), default="global")
        prune.add_argument("--rewind-iter", type=_rewind, default=0)
        prune.add_argument("--groups", default=None, help="grupos separados por vírgula")

        earlybird = sub.add_parser("earlybird", help="busca de early-bird ticket")
        common(earlybird)
        earlybird.add_argument("--p", type=float, default=0.8)
        earlybird.add_argument("--threshold", type=float, default=None)
        earlybird.add_argument("--window", type=int, default=None)
        earlybird.add_argument("--probe-interval", type=int, default=None)
        earlybird.add_argument("--iou-csv", default=None)

        transfer = sub.add_parser("transfer", help="transferência de ticket ou máscara")
        common(transfer)
        transfer.add_argument("--mode", choices=("ticket_transfer", "mask_transfer", "cross_task"),
                              default="ticket_transfer")
        transfer.add_argument("--source-task", choices=TASK_IDS, default=None)
        transfer.add_argument("--p", type=float, default=0.8)
        transfer.add_argument("--conv-only", action=argparse.BooleanOptionalAction, default=None,
                              help="mascara só as convoluções (padrão da configuração)")
        transfer.add_argument("--mapping", default=None, help="JSON de GroupMapping")

        run = sub.add_parser("run", help="executa uma receita completa")
        run.add_argument("recipe", choices=RECIPES)
        run.add_argument("--config", default=None)
        run.add_argument("--replicates", type=int, default=None)
        run.add_argument("--workers", type=int, default=None)
        run.add_argument("--output", default=None)
        run.add_argument("--no-progress", action="store_true")

        report = sub.add_parser("report", help="agrega CSVs de resultados")
        report.add_argument("results_dir")
        return parser

    def main(self, argv: list[str] | None = None) -> int:
        args = self.parser.parse_args(argv)
        try:
            handler = getattr(self, f"cmd_{args.command}")
            handler(args)
        except TicketFinderError as exc:
            print(f"erro: {exc}", file=sys.stderr)
            return EXIT_USAGE
        return 0

    # ------------------------------------------------------------------ #
    def _config(self, args, recipe: str = "sparsity_sweep") -> ExperimentConfig:
        config = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig(recipe)
        if getattr(args, "size", None):
            config = config.with_overrides(network_size=args.size)
        return config

    def _setup(self, args, transfer: bool = False):
        config = self._config(args)
        task_id = args.task or (config.transfer.target_task if transfer else config.tasks[0])
        seed = config.base_seed if args.seed is None else args.seed
        train_config = config.train.to_train_config()
        if args.iters:
            train_config = replace(train_config, total_iters=args.iters)
        dataset = load_or_generate(config.data.to_shapes_config(), seed, config.data.cache_dir)
        spec = build_network(config.network_size, (task_id,), config.data.image_size)
        return config, make_task(task_id, dataset), spec, seed, train_config

    def _log_eval(self, params, mask, task, spec):
        result = evaluate(params, mask, task, "val", spec)
        cost = network_cost(spec, params, mask, head=task.task_id)
        logger.info("%s=%.4f, loss=%.4f, MACs ajustados=%d, bytes=%d", result.metric_name, result.value,
                    result.loss, cost.adjusted_macs, cost.bytes_on_disk)
        return result

    def cmd_train(self, args):
        _, task, spec, seed, train_config = self._setup(args)
        params = pretrain(spec, task, seed, train_config, progress=True)
        self._log_eval(params, None, task, spec)
        if args.out:
            store(params, None, args.out)
            logger.info("Checkpoint salvo em %s", args.out)

    def cmd_prune(self, args):
        _, task, spec, seed, train_config = self._setup(args)
        groups = _groups(args.groups) or tuple(spec.group_names())
        config = PruneConfig(args.p, args.rounds, args.scope, groups, args.rewind_iter, train_config.total_iters)
        ticket = imp(spec, task, config, seed, train_config, progress=True)
        result = train_ticket(ticket, task, spec, train_config, seed, progress=True)
        self._log_eval(result.params, ticket.mask, task, spec)
        if args.out:
            save_ticket(ticket, args.out)

    def cmd_earlybird(self, args):
        config, task, spec, seed, train_config = self._setup(args)
        overrides = {"iou_threshold": args.threshold, "stable_window": args.window,
                     "probe_interval": args.probe_interval}
        eb_config = replace(config.early_bird.to_config(args.p),
                            **{key: value for key, value in overrides.items() if value is not None})
        outcome = early_bird_run(spec, task, eb_config, seed, train_config, track_final=True, progress=True)
        logger.info("Parada na iteração %d de %d", outcome.stop_iteration, train_config.total_iters)
        result = train_ticket(outcome.ticket, task, spec, train_config, seed, progress=True)
        self._log_eval(result.params, outcome.ticket.mask, task, spec)
        if args.iou_csv:
            outcome.report.to_csv(args.iou_csv)
        if args.out:
            save_ticket(outcome.ticket, args.out)

    def cmd_transfer(self, args):
        config, task, spec, seed, train_config = self._setup(args, transfer=True)
        section = config.transfer
        source_id = args.source_task or section.source_task
        source_spec = build_network(config.network_size, (source_id,), config.data.image_size)
        source_task = make_task(source_id, task.dataset)
        shared = section.shared_groups
        mapping = (GroupMapping.load(args.mapping) if args.mapping
                   else GroupMapping.for_groups(shared, source_spec, spec))
        if args.mode == "mask_transfer":
            pretrained = pretrain(source_spec, source_task, seed, train_config, progress=True)
            conv_only = section.conv_only if args.conv_only is None else args.conv_only
            transfer = TransferSpec("mask_transfer", pretrained, mapping, conv_only, args.p)
        else:
            prune_config = PruneConfig(args.p, 1, "global", shared, 0, train_config.total_iters)
            source_ticket = imp(source_spec, source_task, prune_config, seed, train_config, progress=True)
            transfer = TransferSpec(args.mode, source_ticket, mapping, shared_groups=shared)
        result, mask = run_transfer(transfer, task, spec, train_config, seed, progress=True)
        self._log_eval(result.params, mask, task, spec)
        if args.out:
            store(result.params, mask, args.out, include_mask=True)

    def cmd_run(self, args):
        config = load_config(args.config) if args.config else ExperimentConfig(args.recipe)
        config = config.with_overrides(recipe=args.recipe, replicates=args.replicates, workers=args.workers,
                                       output_dir=args.output)
        path = self.app.run_experiment(config, progress=not args.no_progress)
        logger.info("Resultados em %s", os.path.dirname(path))

    def cmd_report(self, args):
        summary = self.app.reporter.summarize(args.results_dir)
        logger.info("%d células agregadas", len(summary))
