#!/usr/bin/env python3
"""
QuMERA Command Line
===================
MERA networks read as quantum channels: validation, local and
thermodynamic observables, transfer spectra, critical exponents,
scale-invariant optimization and brute-force oracle checks.

Usage:
    python main.py validate --manifest net.json
    python main.py observe  --manifest net.json --observable z --site 5
    python main.py observe  --manifest si.json --observable x --thermo
    python main.py spectrum --manifest si.json [--channel R] [--observable x]
    python main.py exponent --manifest si.json --observable x [--kmax 10]
    python main.py optimize --config ising.json --out results/ising.json
    python main.py oracle   --manifest net.json --task compare

Exit codes: 0 success, 1 domain failure, 2 usage or parse error.
Environment: QUMERA_THREADS caps worker threads (see config.py for all keys).
"""

import argparse
import logging
import sys

from config import Config
from src.cli.commands import (
    cmd_exponent,
    cmd_observe,
    cmd_optimize,
    cmd_oracle,
    cmd_spectrum,
    cmd_validate,
    run_command,
)
from src.utils.performance import timing_decorator


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='MERA quantum-channel toolkit',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    def add(name, func, help_text, manifest=True):
        sub = subparsers.add_parser(name, help=help_text)
        if manifest:
            sub.add_argument('--manifest', required=True, help='Network manifest (JSON)')
        sub.add_argument('--out', help='ResultRecord path (printed to stdout when omitted)')
        sub.add_argument('--seed', type=int, default=None, help=f'Seed (default: {Config.SEED})')
        sub.add_argument('--tol', type=float, default=None, help='Command tolerance')
        sub.set_defaults(func=func)
        return sub

    add('validate', cmd_validate, 'Check the contraction rules of a manifest')

    observe = add('observe', cmd_observe, 'Local or thermodynamic expectation value')
    observe.add_argument('--observable', default='z', help='x|y|z|i, a 3-letter Pauli string or a .npy/.json file')
    observe.add_argument('--site', type=int, default=None, help='Window center (default: N/2)')
    observe.add_argument('--thermo', action='store_true', help='Use the fixed point of the transfer operator')
    observe.add_argument('--channel', choices=['L', 'R', 'avg'], default='R')

    spectrum = add('spectrum', cmd_spectrum, 'Transfer-operator spectrum and CSV')
    spectrum.add_argument('--channel', choices=['L', 'R', 'avg'], default='R')
    spectrum.add_argument('--observable', default=None, help='Report the filtered kappa of this observable')

    exponent = add('exponent', cmd_exponent, 'kappa, nu and the fitted correlator decay')
    exponent.add_argument('--observable', default='x')
    exponent.add_argument('--channel', choices=['L', 'R', 'avg'], default='R')
    exponent.add_argument('--kmax', type=int, default=None, help=f'Largest separation 2**kmax (default: {Config.KMAX})')

    optimize = add('optimize', cmd_optimize, 'Optimize a scale-invariant network', manifest=False)
    optimize.add_argument('--config', required=True, help='Optimization config (JSON)')

    oracle = add('oracle', cmd_oracle, 'Brute-force reference checks', manifest=False)
    oracle.add_argument('--manifest', help='Finite network manifest (norm and compare tasks)')
    oracle.add_argument('--task', choices=['norm', 'compare', 'ising'], default='compare')
    oracle.add_argument('--observable', default='z')
    oracle.add_argument('--field', type=float, default=1.0, help='Transverse field h (ising task)')
    oracle.add_argument('--sites', type=int, default=None, help='Also diagonalize a chain of this length (ising task)')
    return parser


@timing_decorator
def dispatch(args) -> int:
    if args.command == 'oracle' and args.task != 'ising' and not args.manifest:
        print("✗ The norm and compare tasks need --manifest")
        return 2
    return run_command(args.func, args)


def main(argv=None) -> int:
    logging.basicConfig(level=Config.LOG_LEVEL, format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    parser = build_parser()
    args = parser.parse_args(argv)
    code, elapsed_ms = dispatch(args)
    logging.getLogger(__name__).info("%s finished with exit code %d in %.0f ms", args.command, code, elapsed_ms)
    return code


if __name__ == "__main__":
    sys.exit(main())
