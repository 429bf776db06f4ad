"""
multilevel_qi 主入口点

子命令:
    derive    打印场景的推导参数
    simulate  生成并转储一个数据集（可选典型结果图和指标表）
    run       执行完整实验并写出汇总表和台账
    plot      把汇总表画成矢量图
"""

import argparse
import os
import sys
from typing import List, Optional

from multilevel_qi.core.scenario import BASELINE, ConfigError, ScenarioError, derive_parameters
from multilevel_qi.settings import settings
from multilevel_qi.utils.logger import configure_logging, get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

NUMBER_FORMAT = '{:.6g}'


class _ArgumentParser(argparse.ArgumentParser):
    """参数错误按配置错误处理（退出码 1）"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog='multilevel_qi', description='多层质量指标的蒙特卡罗评价')
    parser.add_argument('--verbose', '-v', action='store_true', help='输出调试日志（含每次拟合的诊断）')
    commands = parser.add_subparsers(dest='command', metavar='{derive,simulate,run,plot}', parser_class=_ArgumentParser)
    commands.required = True

    derive = commands.add_parser('derive', help='打印推导参数')
    derive.add_argument('--config', help='场景或实验计划文件（默认基线场景）')

    simulate = commands.add_parser('simulate', help='生成并转储一个数据集')
    simulate.add_argument('--config', help='场景或实验计划文件（默认基线场景）')
    simulate.add_argument('--out', default='.', help='输出目录')
    simulate.add_argument('--seed', type=int, help='主种子')
    simulate.add_argument('--figure', action='store_true', help='拟合全部模型并画典型结果图')
    simulate.add_argument('--indicators', action='store_true', help='同时写出医院表与区域表')

    run = commands.add_parser('run', help='执行完整实验')
    run.add_argument('--config', help='实验计划文件')
    run.add_argument('--out', help='输出目录（在其中新建运行目录）')
    run.add_argument('--seed', type=int, help='主种子')
    run.add_argument('--reps', type=int, help='每个场景点的重复次数')
    run.add_argument('--workers', type=int, help='并行进程数（也可用环境变量 MQI_WORKERS）')
    run.add_argument('--dump-datasets', action='store_true', help='转储全部数据集与逐次指标表')
    run.add_argument('--resume', metavar='RUN_DIR', help='从运行目录的检查点继续')

    plot = commands.add_parser('plot', help='把汇总表画成矢量图')
    plot.add_argument('--summary', required=True, help='harness 输出的 summary.csv')
    plot.add_argument('--out', default='.', help='输出目录')
    plot.add_argument('--axis', help='只画该扫描参数')
    return parser


def _format(value) -> str:
    if isinstance(value, bool) or value is None:
        return str(value)
    if isinstance(value, (int, float)):
        return NUMBER_FORMAT.format(value)
    return str(value)


def _base_scenario(path: Optional[str]):
    from multilevel_qi.core.scenario import load_scenario

    return load_scenario(path) if path else BASELINE


def _env_workers() -> Optional[int]:
    value = os.environ.get('MQI_WORKERS')
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"无效的MQI_WORKERS值: {value}")


def cmd_derive(args) -> int:
    scenario = _base_scenario(args.config)
    derived = derive_parameters(scenario)
    print('[scenario]')
    for key, value in scenario.to_dict().items():
        print(f'{key} = {_format(value)}')
    print('[derived]')
    for key, value in derived.to_dict().items():
        print(f'{key} = {_format(value)}')
    return EXIT_OK


def cmd_simulate(args) -> int:
    from multilevel_qi.core.dgp import dump_datasets, generate_dataset
    from multilevel_qi.core.harness import simulate_replication
    from multilevel_qi.core.storage import RunStorage

    scenario = _base_scenario(args.config)
    seed = args.seed if args.seed is not None else int(settings.get('harness.master_seed', 20220901))
    storage = RunStorage(args.out)

    if args.figure or args.indicators:
        outcome = simulate_replication(scenario, seed)
        dataset = outcome.dataset
        for form, fit in outcome.fits.items():
            logger.info(f"{form.value}: {fit.status.value}, loglik={_format(fit.loglik)}, 迭代 {fit.iterations} 次")
        if args.indicators:
            outcome.hospitals.to_frame().to_csv(os.path.join(args.out, 'hospitals.csv'), index=False)
            outcome.regions.to_frame().to_csv(os.path.join(args.out, 'regions.csv'), index=False)
            print(os.path.join(args.out, 'hospitals.csv'))
            print(os.path.join(args.out, 'regions.csv'))
        if args.figure:
            from multilevel_qi.core.plotting import plot_replication

            print(plot_replication(dataset, outcome.hospitals, os.path.join(args.out, 'typical_run.svg')))
    else:
        dataset = generate_dataset(scenario, seed)

    print(dump_datasets([dataset], os.path.join(storage.path, 'dataset.csv')))
    print(f'R = {dataset.R}, H = {dataset.H}, n = {dataset.n}, mean y = {_format(float(dataset.patients.y.mean()))}')
    return EXIT_OK


def cmd_run(args) -> int:
    from multilevel_qi.core.harness import ExperimentRunner, load_plan, validate_plan
    from multilevel_qi.core.storage import RunStorage

    workers = args.workers if args.workers is not None else _env_workers()

    if args.resume:
        storage = RunStorage(args.resume)
        plan = storage.load_plan()
        if workers is not None:
            plan.workers = workers
        validate_plan(plan)
    else:
        if not args.config:
            raise ConfigError("run 需要 --config 或 --resume")
        plan = load_plan(args.config, {'replications': args.reps, 'seed': args.seed, 'workers': workers})
        output_dir = args.out or settings.get('harness.output_dir', './runs')
        storage = RunStorage.create(output_dir, plan.master_seed)

    runner = ExperimentRunner(plan, storage=storage, dump_datasets=args.dump_datasets,
                              dump_indicators=args.dump_datasets, progress=True)
    summary, ledger = runner.run(resume=bool(args.resume))
    print(f'run directory: {storage.path}')
    print(f'summary: {ledger.summary_path} ({len(summary)} rows)')
    print(f'ledger: {len(ledger)} replications, {ledger.failure_count()} with failed fits')
    return EXIT_OK


def cmd_plot(args) -> int:
    from multilevel_qi.core.plotting import plot
    from multilevel_qi.core.storage import read_summary

    written = plot(read_summary(args.summary), args.out, args.axis)
    for filepath in written:
        print(filepath)
    return EXIT_OK


COMMANDS = {
    'derive': cmd_derive,
    'simulate': cmd_simulate,
    'run': cmd_run,
    'plot': cmd_plot,
}


def main(argv: Optional[List[str]] = None) -> int:
    """运行 multilevel_qi 命令行，返回退出码"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG

    level = 'DEBUG' if args.verbose else settings.get('logging.level', 'INFO')
    configure_logging(level, settings.get('logging.file'))

    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ConfigError) as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print('\n用户中断了运行。', file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.debug('运行失败', exc_info=True)
        print(f'error: {type(e).__name__}: {e}', file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
