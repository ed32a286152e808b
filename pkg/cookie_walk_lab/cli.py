"""Command-line interface for cookie-walk-lab."""

import argparse
import json
import logging
import math
import shutil
import sys
import time
from contextlib import contextmanager
from functools import partial
from multiprocessing import Pool

import numpy as np
from scipy.stats import norm

from .archive import archive_config
from .config import FORMATS, parse_eps_range, parse_family, resolve_config
from .coupling import (
    MegaVertexConfig,
    arrow_statistics,
    build_M,
    m_drift,
    m_walk_speed,
    merge_counts,
    strassen_bundle,
    verify_replica,
)
from .criteria import (
    ballisticity_condition,
    classify,
    frontier_epsilon,
    search_parameters,
    sweep_epsilon,
    total_drift,
)
from .distributions import JumpDistribution
from .errors import (
    ConfigError,
    CookieWalkError,
    HypothesisViolationError,
    NoFrontierError,
    PreconditionError,
)
from .oracles import (
    cookie_walk_sampler,
    exit_time_moments,
    geometric_block_scan,
    ks_distances,
    martingale_lln_check,
    ssrw_sampler,
    strassen_pair,
)
from .renewal_speed import (
    aggregate_naive,
    default_guard,
    detect_cut_times,
    estimate_speed_naive,
    estimate_speed_renewal,
    relative_difference,
    run_replica,
)
from .report import RunReport, format_duration, render_table
from .stats import proportion, t_interval
from .walk_core import (
    dump_trajectory,
    jump_over_range_violations,
    range_sizes,
    shadow_domination_violations,
    simulate,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

STRASSEN_SAMPLES = 100_000
LEMMA_WIDTH = 6


@contextmanager
def replica_mapper(workers):
    """Ordered ``map`` over replicas, sharded across a process pool when ``workers > 1``."""
    if workers <= 1:
        yield map
        return
    with Pool(workers) as pool:
        yield pool.map


def _family_frontier(L, c, ell):
    """Frontier epsilon of the two-atom family with this L, or None without a sign change."""
    try:
        return frontier_epsilon(c, ell, partial(JumpDistribution.epsilon_family, L))
    except NoFrontierError as e:
        logger.info("%s", e)
        return None


def run_criteria(config, report):
    q = config.law()
    delta = total_drift(config.environment())
    report.results.update(delta=delta, classification=classify(delta).value,
                          mean_jump=q.mean, Q1=q.tail(1))
    pair = (config.c, config.ell) if config.c is not None else search_parameters(q)
    report.results['pair'] = pair
    report.rows = [{'j': j, 'Q(j)': q.tail(j)} for j in range(-1, q.L + 1)]
    if pair is None:
        logger.info("no (c, ell) satisfies the condition for this law")
        return
    c, ell = pair
    condition = ballisticity_condition(q, c, ell)
    report.results['condition'] = condition.to_dict()
    report.check('drift consistent with condition', condition.drift_consistent,
                 f"delta={condition.delta:.6g}")
    report.check('Q(1) > 1/2 when condition holds', condition.q1_above_half,
                 f"Q(1)={q.tail(1):.6g}")
    if 'L' in config.distribution:
        report.results['frontier_epsilon'] = _family_frontier(int(config.distribution['L']), c, ell)


def run_simulate(config, report, dump=None):
    env = config.environment()
    traj = simulate(env, config.seed, config.horizon)
    guard = config.guard or default_guard(env)
    records = detect_cut_times(traj, guard)
    y = traj.positions
    report.results.update(
        final_position=int(y[-1]),
        running_max=int(y.max()),
        running_min=int(y.min()),
        range_size=int(range_sizes(traj)[-1]),
        naive_speed=estimate_speed_naive(traj).point,
        cut_times=len(records),
        guard=guard,
    )
    if len(records) >= 3:
        report.results['renewal_speed'] = estimate_speed_renewal(records, config.level)
    skips = jump_over_range_violations(traj)
    report.check('no jump over an unvisited vertex back into the range', not skips,
                 f"{len(skips)} step(s)")
    if all(law.tail(1) > 0.5 for law in env.laws):
        below = shadow_domination_violations(traj)
        report.check('increments dominate the symmetric coin', not below,
                     f"{len(below)} step(s)")
    if dump:
        report.results['trajectory_file'] = str(dump_trajectory(traj, dump))
    report.rows = [{'quantity': k, 'value': v} for k, v in report.results.items()
                   if not isinstance(v, (dict, list)) and not hasattr(v, 'to_dict')]


def run_speed(config, report):
    env = config.environment()
    guard = config.guard or default_guard(env)
    with replica_mapper(config.workers) as mapper:
        rows = list(mapper(partial(run_replica, env, config.seed, config.horizon, guard,
                                   config.level), range(config.replicas)))
    naive = aggregate_naive([r['naive'] for r in rows], config.level, ci=config.ci,
                            seed=config.seed, horizon=config.horizon)
    report.results.update(delta=total_drift(env), classification=classify(total_drift(env)).value,
                          guard=guard, naive=naive,
                          naive_all_positive=all(r['naive'] > 0 for r in rows),
                          naive_ci_excludes_zero=naive.excludes_zero())
    speed_rows = [{'seed': config.seed, 'method': 'naive', 'point': naive.point,
                   'ci_low': naive.ci_low, 'ci_high': naive.ci_high, 'n_renewals': 0}]
    renewals = [r['renewal'] for r in rows if r['renewal'] is not None]
    if len(renewals) >= 2:
        mean, low, high = t_interval(renewals, config.level)
        report.results.update(renewal_mean=mean, renewal_low=low, renewal_high=high,
                              relative_difference=relative_difference(naive.point, mean))
        speed_rows.append({'seed': config.seed, 'method': 'renewal', 'point': mean,
                           'ci_low': low, 'ci_high': high,
                           'n_renewals': sum(r['n_renewals'] for r in rows if r['renewal'] is not None)})
    report.results['renewal_replicas'] = len(renewals)
    if config.c is not None:
        condition = ballisticity_condition(config.law(), config.c, config.ell)
        report.results['condition'] = condition.to_dict()
        if condition.satisfied and config.cookies == 1:
            report.check('speed CI excludes 0 where the condition holds', naive.excludes_zero(),
                         f"[{naive.ci_low:.4g}, {naive.ci_high:.4g}] at c={config.c}, ell={config.ell}")
    survived = sum(1 for r in rows if r['min_position'] >= 0)
    alpha, alpha_se = proportion(survived, len(rows))
    report.results.update(alpha=alpha, alpha_se=alpha_se)
    explored = sum(r['explored_blocks'] for r in rows)
    if explored:
        report.results['once_block_fraction'] = sum(r['once_blocks'] for r in rows) / explored
    bad = sum(r['sandwich_violations'] for r in rows)
    report.check('estimator sandwich between cut times', bad == 0, f"{bad} violation(s)")
    report.results['replicas'] = [
        {k: r[k] for k in ('replica', 'naive', 'renewal', 'n_renewals', 'min_position')} for r in rows]
    report.rows = speed_rows


def _strassen_indices(cfg, count):
    depth = 2 * cfg.c
    return [(j, k) for j in range(math.ceil(count / depth)) for k in range(1, depth + 1)]


def run_couple(config, report, m_walk=False):
    env = config.environment()
    q = env.laws[0]
    cfg = MegaVertexConfig(config.c, config.ell)
    with replica_mapper(config.workers) as mapper:
        rows = list(mapper(partial(verify_replica, env, cfg, config.seed, config.horizon,
                                   config.sequenced), range(config.replicas)))
    ordering = sum(r['ordering_violations'] for r in rows)
    broken = [r['replica'] for r in rows if any(v is not None for v in r['dominance'].values())]
    sandwich = sum(r['sandwich']['violation_count'] for r in rows)
    if config.sequenced:
        report.check('trigger ordering', ordering == 0, f"{ordering} violation(s)")
        report.check('dominance chain K >= H >= E', not broken, f"broken in replicas {broken[:5]}")
    else:
        # literal scanning is known to intertwine; report counterexamples only
        report.results.update(
            literal_ordering_violations=ordering,
            literal_ordering_examples=[e for r in rows for e in r['ordering_examples']][:5],
            literal_dominance_broken=broken)
    report.check('sandwich', sandwich == 0, f"{sandwich} violation(s)")

    at_T = arrow_statistics(merge_counts(*(r['counts_T'] for r in rows)), cfg, q)
    at_V = arrow_statistics(merge_counts(*(r['counts_V'] for r in rows)), cfg, q)
    for branch, stats in at_T.items():
        report.check(f'{branch} arrows above bound', stats['passed'],
                     f"p={stats['p']:.4g} bound={stats['bound']:.4g} n={stats['count']}")
    report.results.update(arrows_at_T=at_T, arrows_at_V=at_V, m_drift=m_drift(cfg, q))

    landed = sum(r['landings']['landings'] for r in rows)
    rate, se = proportion(sum(r['landings']['successes'] for r in rows), landed)
    kappa = q.pmf(-1) ** (cfg.ell - cfg.c)
    report.check('landing success rate above kappa', landed == 0 or rate >= kappa - 3 * se,
                 f"rate {rate:.4g} over {landed}, kappa={kappa:.3g}")

    stays = sum(r['block_exit'][0] for r in rows)
    moves = sum(r['block_exit'][1] for r in rows)
    stay_rate, stay_se = proportion(stays, moves)
    report.check('block exit dominated by a fair coin', moves == 0 or stay_rate <= 0.5 + 3 * stay_se,
                 f"stay rate {stay_rate:.4g} over {moves}")

    # E-hat sampled at the pooled cookie-branch frequency, never below the M law
    M = build_M(cfg, q, config.seed)
    p_cookie = max(at_T['cookie']['p'] if at_T['cookie']['count'] else 0.0, M.law.p_cookie)

    def sampler(j, k, E_hat):
        return p_cookie if k <= cfg.c else 0.5

    bundle = strassen_bundle(sampler, M.law, config.seed, _strassen_indices(cfg, STRASSEN_SAMPLES))
    report.check('M <= E-hat at every index', bundle.dominated == len(bundle.indices),
                 f"{bundle.dominated}/{len(bundle.indices)} indices")
    if m_walk:
        with replica_mapper(config.workers) as mapper:
            speed = m_walk_speed(cfg, q, config.replicas, config.horizon, config.seed,
                                 config.level, mapper)
        report.results['m_walk_speed'] = speed
        report.check('M walk speed CI excludes 0', speed.excludes_zero(),
                     f"[{speed.ci_low:.4g}, {speed.ci_high:.4g}]")
    report.rows = [{
        'replica': r['replica'],
        'records': r['records'],
        'completed': r['completed'],
        'ordering': r['ordering_violations'],
        'sandwich': r['sandwich']['violation_count'],
        'landing_rate': r['landings']['success_rate'],
    } for r in rows]


def run_verify_lemmas(config, report):
    a, b = 0, LEMMA_WIDTH
    for name, sampler in (('ssrw', ssrw_sampler),
                          ('cookie walk', cookie_walk_sampler(config.environment()))):
        try:
            moments = exit_time_moments(sampler, a, b, config.replicas, config.seed)
        except HypothesisViolationError as e:
            report.check(f'exit time second moment ({name})', False, str(e))
            continue
        report.results[f'exit_time_{name}'] = moments
        report.check(f'exit time second moment ({name})', moments['passed'],
                     f"E[T^2]={moments['second_moment']:.4g} bound={moments['bound']}")
    scan = geometric_block_scan(a, b, config.replicas, config.seed)
    report.results['geometric_block'] = scan
    report.check('T <= G (b - a) pathwise', scan['passed'], f"{len(scan['violations'])} violation(s)")

    n = min(config.horizon, STRASSEN_SAMPLES)
    for name, xi, K in (('uniform', lambda u: 2.0 * u - 1.0, 1.0),
                        ('constant', lambda u: np.ones_like(u), 1.0)):
        slope = martingale_lln_check(xi, K, n, config.seed)
        report.results[f'martingale_{name}'] = slope
        report.check(f'martingale slope ({name})', slope.passed,
                     f"slope={slope.slope:.4g} K={K}")

    x_law, g_law = norm(loc=1.0), norm()
    pair = strassen_pair(g_law, x_law, config.seed, n)
    distances = ks_distances(pair, x_law, g_law)
    report.results['strassen'] = {'n': n, 'strict_rate': pair.strict_rate, 'ks': distances}
    report.check('Strassen marginals within KS 0.02', max(distances.values()) < 0.02,
                 f"x={distances['x_hat']:.4g} y={distances['y']:.4g}")
    report.rows = [{'check': c.name, 'passed': c.passed, 'detail': c.detail} for c in report.checks]


def run_sweep(config, report):
    q = config.law()
    L = int(config.distribution['L'])
    if config.c is not None:
        c, ell = config.c, config.ell
    else:
        pair = search_parameters(q)
        if pair is None:
            raise ConfigError('c', "no (c, ell) satisfies the condition; pass --c and --ell")
        c, ell = pair
    report.rows = sweep_epsilon(L, c, ell, config.eps)
    report.results.update(L=L, c=c, ell=ell, frontier_epsilon=_family_frontier(L, c, ell))


RUNNERS = {
    'criteria': run_criteria,
    'simulate': run_simulate,
    'speed': run_speed,
    'couple': run_couple,
    'verify-lemmas': run_verify_lemmas,
    'sweep': run_sweep,
}


def run(subcommand, config, **options):
    """Run one subcommand on a validated config; return ``(report, exit_code)``."""
    report = RunReport(subcommand, config.to_dict())
    started = time.perf_counter()
    RUNNERS[subcommand](config, report, **options)
    report.wall_time = time.perf_counter() - started
    return report, EXIT_OK if report.passed else EXIT_FAILED


def print_console(report):
    """Banner, tables and a one-line summary in the console register."""
    terminal_width = shutil.get_terminal_size().columns

    print(f"\n🔬 cookie-walk-lab {report.subcommand}")
    print("=" * min(80, terminal_width))
    print()
    if report.rows:
        print(render_table(report.rows))
        print()
    scalars = [{'result': k, 'value': v} for k, v in report.results.items()
               if isinstance(v, (int, float, str, bool)) or v is None]
    if scalars:
        print(render_table(scalars))
        print()
    for c in report.checks:
        symbol = '✓' if c.passed else '✗'
        print(f"   {symbol} {c.name}" + (f"  ({c.detail})" if c.detail else ''))
    passed = sum(1 for c in report.checks if c.passed)
    failed = len(report.checks) - passed
    print(f"\n📊 Summary: ✓ {passed} passed  |  ✗ {failed} failed  |  ⏱ {format_duration(report.wall_time)}\n")


def _distribution_flag(args):
    if getattr(args, 'dist', None):
        return JumpDistribution.load(args.dist).to_dict()
    if getattr(args, 'family', None):
        return parse_family(args.family)
    return None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--dist', metavar='FILE', help='Jump distribution JSON file')
    common.add_argument('--family', metavar='SPEC', help="Two-atom family, e.g. 'L=15,eps=0.01'")
    common.add_argument('--cookies', type=int, help='Cookies per vertex, all with the same law')
    common.add_argument('--c', type=int, help='Mega vertex size')
    common.add_argument('--ell', type=int, help='Mega vertex spacing')
    common.add_argument('--replicas', type=int, help='Number of independent replicas')
    common.add_argument('--horizon', type=int, help='Steps per replica')
    common.add_argument('--seed', type=int, help='Master seed')
    common.add_argument('--guard', type=int, help='Steps required after a cut time')
    common.add_argument('--level', type=float, help='Confidence level, e.g. 0.99')
    common.add_argument('--ci', choices=('mean', 'percentile'), help='Replica interval kind')
    common.add_argument('--workers', type=int, help='Worker processes')
    common.add_argument('--out', metavar='FILE', help='Write the report to FILE')
    common.add_argument('--format', choices=FORMATS, help='Report format')
    common.add_argument('--config', metavar='FILE', help='JSON experiment config')
    common.add_argument('--dump-config', action='store_true',
                        help='Print and archive the resolved config, then exit')
    common.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for progress, -vv for debug output')

    parser = argparse.ArgumentParser(
        prog='cookie-walk-lab',
        description='Cookie random walk experiments: criteria, speed estimation and couplings',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  cookie-walk-lab criteria --family L=15,eps=0.005        # Find (c, ell) for a law
  cookie-walk-lab speed --family L=15,eps=0.01 --replicas 100 --horizon 1000000 --workers 8
  cookie-walk-lab couple --c 3 --ell 13 --replicas 20     # Pathwise coupling checks
  cookie-walk-lab verify-lemmas --replicas 10000          # Auxiliary lemma verifiers
  cookie-walk-lab sweep --family L=15 --eps 0.0:0.05:0.005          # CSV by default
        """
    )
    sub = parser.add_subparsers(dest='subcommand', required=True, metavar='SUBCOMMAND')
    sub.add_parser('criteria', parents=[common], help='Drift, classification and condition')
    simulate_parser = sub.add_parser('simulate', parents=[common], help='One trajectory')
    simulate_parser.add_argument('--dump', metavar='FILE', help='Write the trajectory file')
    sub.add_parser('speed', parents=[common], help='Naive and renewal speed estimates')
    couple_parser = sub.add_parser('couple', parents=[common], help='Coupled arrow systems')
    couple_parser.add_argument('--literal', dest='sequenced', action='store_false', default=None,
                               help='Scan triggers per block without sequencing')
    couple_parser.add_argument('--m-walk', action='store_true',
                               help='Also estimate the speed of the M walk')
    sub.add_parser('verify-lemmas', parents=[common], help='Exit time, martingale and Strassen checks')
    sweep_parser = sub.add_parser('sweep', parents=[common], help='Condition over an epsilon range')
    sweep_parser.add_argument('--eps', help="'start:stop:step' or a comma separated list")
    return parser


def configure_logging(verbosity):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr,
                        format='%(levelname)s %(name)s: %(message)s')


def main(argv=None):
    """Main function to parse arguments and route to the subcommand."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    try:
        flags = {
            'distribution': _distribution_flag(args),
            'cookies': args.cookies,
            'c': args.c,
            'ell': args.ell,
            'replicas': args.replicas,
            'horizon': args.horizon,
            'seed': args.seed,
            'guard': args.guard,
            'level': args.level,
            'ci': args.ci,
            'workers': args.workers,
            'out': args.out,
            'format': args.format,
            'sequenced': getattr(args, 'sequenced', None),
            'eps': parse_eps_range(args.eps) if getattr(args, 'eps', None) else None,
        }
        config = resolve_config(args.subcommand, flags, args.config)
    except (CookieWalkError, OSError) as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    if args.dump_config:
        print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        result = archive_config(config)
        if result['success']:
            print(f"✓ Archived to {result['archive_file']}", file=sys.stderr)
            return EXIT_OK
        print(f"❌ {result['message']}", file=sys.stderr)
        return EXIT_USAGE

    options = {}
    if args.subcommand == 'simulate':
        options['dump'] = args.dump
    elif args.subcommand == 'couple':
        options['m_walk'] = args.m_walk
    try:
        report, code = run(args.subcommand, config, **options)
    except (ConfigError, PreconditionError) as e:
        print(f"❌ Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    if config.out:
        report.write(config.out, config.format)
        print(f"✓ Report written to {config.out}", file=sys.stderr)
    if config.format == 'table':
        print_console(report)
    elif not config.out:
        print(report.render(config.format))
    return code


if __name__ == '__main__':
    sys.exit(main())
