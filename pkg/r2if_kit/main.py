#!/usr/bin/env python3
from __future__ import annotations

import argparse
import logging
import sys
from typing import NoReturn

from hypy_utils import write

from .backends import Backends, build_backends
from .color_util import color, eprintc, fmt_score, printc
from .constants import CONFIG_PATH, GLOBAL_CFG, IS_WINDOWS
from .__version__ import VERSION
from .dataset import load_instances, load_rollouts, validate_dataset
from .errors import BackendError, ComponentError, InputError, R2ifError
from .grpo import group_normalize
from .harness import EvalFlags, ace, cer_robustness, emit_report, evaluate
from .log import log
from .models import BackendConfig, ROBUSTNESS_CONFIGS, ServiceConfig, load_config
from .parser import parse_response
from .prompts import render_system_prompt, render_user_prompt
from .reward import cer, composite_reward
from .serializer import canonical_json
from .toy import default_environment, toy_train

EXIT_OK, EXIT_INVALID, EXIT_BACKEND, EXIT_USAGE = 0, 1, 2, 64


class ArgParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def reward_args(p: argparse.ArgumentParser):
    p.add_argument('-C', '--config', dest='config_file', default=argparse.SUPPRESS, help='Config file')

    g = p.add_argument_group('reward')
    g.add_argument('--tau', type=float, help='Similarity gate threshold')
    g.add_argument('--eta', type=float, help='Advantage denominator regularizer')
    g.add_argument('--epsilon', type=float, help='PPO clip range')
    g.add_argument('--binary-weight', dest='binary_weight', type=float, help='Weight of the binary reward')
    g.add_argument('--cer-samples', dest='cer_samples', type=int, help='Student continuations per CER estimate')
    g.add_argument('--no-cer', dest='no_cer', action='store_true', help='Skip CER (no student calls)')
    g.add_argument('--smv-literal', dest='smv_literal', action='store_true',
                   help='Always divide SMV parameter scores by 3')

    g = p.add_argument_group('backends')
    g.add_argument('--student-endpoint', dest='student_endpoint', help='Chat-completions base URL of the student')
    g.add_argument('--student-model', dest='student_model', help='Student model name')
    g.add_argument('--student-script', dest='student_script', help='Scripted student JSONL (testing)')
    g.add_argument('--similarity', choices=['lexical', 'embedding', 'mock'], help='Similarity backend')
    g.add_argument('--embed-endpoint', dest='embed_endpoint', help='Embeddings base URL')
    g.add_argument('--similarity-script', dest='similarity_script', help='Scripted similarity JSONL (testing)')


def create_parser() -> argparse.ArgumentParser:
    title = color('&l&br2if-kit&~&L')
    parser = ArgParser(description=color(f'{title} - rewards and evaluation for tool-calling reasoning'),
                       prog='r2if-kit')
    parser.add_argument('-V', '--version', action='version', version=f'r2if-kit {VERSION}')
    parser.add_argument('-C', '--config', dest='config_file', help=f'Config file (default {CONFIG_PATH})')
    parser.add_argument('--debug', action='store_true', help='Debug logging')
    parser.add_argument('--no-color', dest='no_color', action='store_true', help='Disable colored output')

    sub = parser.add_subparsers(dest='command', required=True, parser_class=ArgParser)

    p = sub.add_parser('score', help='Score rollouts and print per-rollout breakdowns')
    p.add_argument('--data', required=True, help='Instance JSONL')
    p.add_argument('--rollouts', required=True, help='Rollout JSONL')
    p.add_argument('--out', help='Write breakdowns and advantages as JSON')
    reward_args(p)

    p = sub.add_parser('evaluate', help='Accuracy, ACE and reward statistics')
    p.add_argument('--data', required=True, help='Instance JSONL')
    p.add_argument('--rollouts', required=True, help='Rollout JSONL')
    p.add_argument('--out', help='Report path (stdout when omitted)')
    p.add_argument('--format', choices=['json', 'markdown', 'csv'], default='json')
    p.add_argument('--ace-rollout', dest='ace_rollout', choices=['first', 'all'])
    p.add_argument('--no-smv', dest='no_smv', action='store_true', help='Skip SMV')
    p.add_argument('--workers', type=int, default=1, help='Instances scored in parallel')
    reward_args(p)

    p = sub.add_parser('ace', help='Average CoT effectiveness of the first rollout per instance')
    p.add_argument('--data', required=True, help='Instance JSONL')
    p.add_argument('--rollouts', required=True, help='Rollout JSONL')
    p.add_argument('--out', help='Write per-instance estimates as JSON')
    reward_args(p)

    p = sub.add_parser('validate-dataset', help='Check a dataset against the schema and annotation rules')
    p.add_argument('--data', required=True, help='Instance JSONL')
    p.add_argument('--allow-missing-document', dest='allow_missing', action='store_true',
                   help='Accept instances without a gt_document')

    p = sub.add_parser('toy-train', help='Train the toy softmax policy with GRPO')
    p.add_argument('--mode', default='full', choices=['full', 'binary-only', 'binary_only', 'wo-cer', 'wo_cer',
                                                        'wo-smv', 'wo_smv'])
    p.add_argument('--seed', type=int, default=7)
    p.add_argument('--iterations', type=int, default=200)
    p.add_argument('--lr', type=float, default=1.0, help='Learning rate on the logits')
    p.add_argument('--out', help='Learning curve CSV')
    p.add_argument('--json', dest='json_out', help='Full training report JSON')
    reward_args(p)

    p = sub.add_parser('serve', help='Run the HTTP scoring service')
    p.add_argument('--host')
    p.add_argument('--port', type=int)
    reward_args(p)

    p = sub.add_parser('robustness', help='Rank stability of CER across sampling configurations')
    p.add_argument('--data', required=True, help='Instance JSONL')
    p.add_argument('--rollouts', help='Take reasoning from the first rollout instead of the annotations')
    p.add_argument('--out', help='Write the analysis as JSON')
    reward_args(p)

    p = sub.add_parser('prompt', help='Print the inference prompt of an instance')
    p.add_argument('--data', required=True, help='Instance JSONL')
    p.add_argument('--id', required=True, help='Instance id')

    return parser


def build_config(args: argparse.Namespace) -> ServiceConfig:
    """
    Config file values overridden by command-line flags
    """
    if args.config_file:
        base = load_config(args.config_file)
    elif CONFIG_PATH.is_file():
        base = load_config(CONFIG_PATH)
    else:
        base = ServiceConfig()

    g = vars(args).get
    reward = {k: v for k, v in dict(tau=g('tau'), eta=g('eta'), epsilon_clip=g('epsilon'),
                                    binary_weight=g('binary_weight'), cer_samples=g('cer_samples'),
                                    ace_rollout=g('ace_rollout')).items() if v is not None}
    if g('smv_literal'):
        reward['smv_renormalize'] = False

    be = {k: v for k, v in dict(student_endpoint=g('student_endpoint'), student_model=g('student_model'),
                                student_script=g('student_script'), similarity=g('similarity'),
                                embed_endpoint=g('embed_endpoint'),
                                similarity_script=g('similarity_script')).items() if v is not None}
    if 'student_endpoint' in be:
        be['student'] = 'http_chat'
    elif 'student_script' in be:
        be['student'] = 'scripted_mock'
    if 'similarity_script' in be and 'similarity' not in be:
        be['similarity'] = 'mock'

    server = {k: v for k, v in dict(host=g('host'), port=g('port')).items() if v is not None}
    return ServiceConfig(**{**vars(base), **server, 'reward': base.reward.replace(**reward),
                            'backends': BackendConfig(**{**vars(base.backends), **be})})


def output(path: str | None, data: str | bytes):
    if path:
        write(path, data)
        printc(f'&a[+] Wrote {path}')
    else:
        sys.stdout.write(data.decode('utf-8') if isinstance(data, bytes) else data)


def cmd_score(args, cfg: ServiceConfig, backends: Backends) -> int:
    instances = {i.id: i for i in load_instances(args.data)}
    rollouts = load_rollouts(args.rollouts)
    out = {}
    printc(f'&e{"instance":<24} {"#":>3} {"fmt":>3} {"ok":>3} {"cer":>8} {"smv":>8} {"total":>8}')
    for iid in sorted(rollouts):
        if iid not in instances:
            raise InputError(f'rollouts for unknown instance {iid!r}')
        bs = [composite_reward(r, instances[iid], backends, cfg.reward, not args.no_cer) for r in rollouts[iid]]
        out[iid] = {'breakdowns': bs}
        if len(bs) >= 2:
            out[iid]['advantages'] = group_normalize([b.total for b in bs], cfg.reward.eta)
        for k, b in enumerate(bs):
            mark = '&a  1' if b.r_binary else '&c  0'
            printc(f'{iid[:24]:<24} {k:>3} {b.r_format:>3}{mark}&~ {fmt_score(b.r_cer)} {fmt_score(b.r_smv)} '
                   f'{fmt_score(b.total)}')
    if args.out:
        output(args.out, canonical_json(out))
    return EXIT_OK


def cmd_evaluate(args, cfg: ServiceConfig, backends: Backends) -> int:
    instances = load_instances(args.data)
    rollouts = load_rollouts(args.rollouts)
    flags = EvalFlags(ace=not args.no_cer, smv=not args.no_smv)
    report = evaluate(instances, rollouts, backends, cfg.reward, flags, workers=args.workers)
    output(args.out, emit_report(report, args.format))
    return EXIT_OK


def cmd_ace(args, cfg: ServiceConfig, backends: Backends) -> int:
    instances = {i.id: i for i in load_instances(args.data)}
    rollouts = load_rollouts(args.rollouts)
    estimates = {}
    for iid in sorted(rollouts):
        if iid not in instances or not rollouts[iid]:
            continue
        reason = parse_response(rollouts[iid][0]).reason_text or ''
        estimates[iid] = cer(reason, instances[iid], backends.student, cfg.reward)
    if not estimates:
        raise InputError('no rollouts matched any instance')
    value = ace(list(estimates.values()))
    printc(f'&eACE&~ over {len(estimates)} instances: {fmt_score(value)}')
    if args.out:
        output(args.out, canonical_json({'ace': value, 'per_instance': estimates}))
    return EXIT_OK


def cmd_validate(args) -> int:
    instances, problems = validate_dataset(args.data, require_document=not args.allow_missing)
    for p in problems:
        eprintc(f'{args.data}: {p}')
    if problems:
        printc(f'&c[-] {len(problems)} problem(s), {len(instances)} instance(s) loaded')
        return EXIT_INVALID
    printc(f'&a[+] {len(instances)} instances OK')
    return EXIT_OK


def cmd_toy(args, cfg: ServiceConfig) -> int:
    mode = args.mode.replace('-', '_')
    report = toy_train(default_environment(args.seed), cfg.reward, mode, args.iterations, args.lr)
    first, last = report.curve[0], report.final
    printc(f'&e{mode}&~: expected correctness {first.expected_correctness:.3f} -> &a{last.expected_correctness:.3f}&~, '
           f'P(grounded) {last.p_grounded:.3f}, P(ungrounded) {last.p_ungrounded:.3f}')
    if args.out:
        output(args.out, report.to_csv())
    if args.json_out:
        output(args.json_out, report.to_json())
    return EXIT_OK


def cmd_robustness(args, cfg: ServiceConfig, backends: Backends) -> int:
    instances = load_instances(args.data)
    reasons = None
    if args.rollouts:
        reasons = {iid: parse_response(rs[0]).reason_text or '' for iid, rs in load_rollouts(args.rollouts).items()
                   if rs}
    if backends.student is None:
        raise BackendError('student', 'robustness analysis needs a student backend')
    report = cer_robustness(instances, backends.student, ROBUSTNESS_CONFIGS, cfg.reward, reasons)
    printc(f'&e{"config":<8} {"spearman":>9} {"kendall":>9} {"sign":>7} {"|d|<=.2":>8} {"E|d|":>7}')
    for r in report.rows:
        corr = [f'{v:>9.3f}' if v is not None else f'{"-":>9}' for v in (r.spearman, r.kendall)]
        printc(f'{r.config:<8} {corr[0]} {corr[1]} {r.sign_agreement:>7.3f} {r.within_02:>8.3f} '
               f'{r.mean_abs_delta:>7.3f}')
    if args.out:
        output(args.out, canonical_json(report, digits=6))
    return EXIT_OK


def cmd_prompt(args) -> int:
    inst = next((i for i in load_instances(args.data) if i.id == args.id), None)
    if inst is None:
        raise InputError(f'no instance {args.id!r} in {args.data}')
    printc('&e[system]')
    print(render_system_prompt())
    printc('&e[user]')
    print(render_user_prompt(inst))
    return EXIT_OK


def exit_code(e: R2ifError) -> int:
    cause = e.cause if isinstance(e, ComponentError) else e
    return EXIT_BACKEND if isinstance(cause, BackendError) else EXIT_INVALID


def run(argv: list[str] | None = None) -> int:
    # On Windows: Try to fix color rendering
    if IS_WINDOWS:
        import colorama
        colorama.just_fix_windows_console()

    parser = create_parser()
    args = parser.parse_args(argv)

    GLOBAL_CFG.debug = args.debug
    GLOBAL_CFG.color = not args.no_color and sys.stdout.isatty()
    if args.debug:
        log.setLevel(logging.DEBUG)

    try:
        if args.command == 'validate-dataset':
            return cmd_validate(args)
        if args.command == 'prompt':
            return cmd_prompt(args)

        cfg = build_config(args)
        if args.command == 'toy-train':
            return cmd_toy(args, cfg)
        if args.command == 'serve':
            from .service import serve
            serve(cfg)
            return EXIT_OK

        backends = build_backends(cfg.backends)
        if args.command == 'score':
            return cmd_score(args, cfg, backends)
        if args.command == 'evaluate':
            return cmd_evaluate(args, cfg, backends)
        if args.command == 'ace':
            return cmd_ace(args, cfg, backends)
        if args.command == 'robustness':
            return cmd_robustness(args, cfg, backends)
    except R2ifError as e:
        eprintc(f'Error: {e}')
        if GLOBAL_CFG.debug:
            log.exception(e)
        return exit_code(e)
    return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(run())
