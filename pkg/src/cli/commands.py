"""
Commands Module
The cmd_* operations behind main.py. Each takes the parsed argparse
namespace, prints progress, writes its ResultRecord and returns the exit
code: 0 success, 1 domain failure, 2 usage or parse error.
"""

import logging
from pathlib import Path
from typing import Callable, Optional


from config import Config
from src.core.exceptions import (
    KappaUndefinedError,
    ManifestError,
    NonMixingError,
    OptimizationError,
    QuMeraError,
    ResourceGuardError,
)
from src.core.tensor_ops import trace_norm
from src.network.mera import FiniteMera, ScaleInvariantMera, validate
from src.services.channel_service import kraus_family, pi_deviation
from src.services.observable_service import (
    Observable,
    connected_correlator_series,
    critical_exponent,
    exponent_cross_check,
    kappa_state,
    load_observable,
    local_expectation,
    pauli_observable,
    reduced_density,
)
from src.services.optimizer_service import critical_kappas, load_config, optimize
from src.services.oracle_service import OracleService
from src.services.transfer_service import (
    filtered_kappa,
    liouville_matrix,
    lr_spectral_deviation,
    scaling_dimensions,
    spectral_analysis,
    spectrum_excerpt,
    thermo_expectation,
)
from src.storage import manifest
from src.storage.records import ResultRecord, write_series_csv, write_spectrum_csv, write_trace_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    """Arguments that do not fit the selected command."""


# ============================================================
# Helpers
# ============================================================

def _banner(title: str):
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)


def _seed(args) -> int:
    return Config.SEED if getattr(args, 'seed', None) is None else args.seed


def _output_dir(args) -> Path:
    out = getattr(args, 'out', None)
    return Path(out).parent if out else Path(Config.OUTPUT_DIR)


def _output_stem(args, command: str) -> str:
    out = getattr(args, 'out', None)
    return Path(out).stem if out else command


def _emit(record: ResultRecord, args):
    if getattr(args, 'out', None):
        record.save(args.out)
        print(f"✓ Record written to {args.out}")
    else:
        print(record.to_json())


def _echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != 'func'}


def resolve_observable(spec: Optional[str], D: int, default: str = 'z') -> Observable:
    """Pauli name ('x', 'y', 'z', 'i' or a 3-letter string) or a path to a matrix file."""
    spec = spec or default
    if Path(spec).suffix in ('.npy', '.json'):
        return load_observable(spec, D)
    try:
        return pauli_observable(spec, D)
    except ValueError as e:
        raise UsageError(str(e))


def _require_scale_invariant(network, command: str) -> ScaleInvariantMera:
    if not isinstance(network, ScaleInvariantMera):
        raise UsageError(f"{command} needs a scale-invariant manifest")
    return network


def _require_finite(network, command: str) -> FiniteMera:
    if not isinstance(network, FiniteMera):
        raise UsageError(f"{command} needs a finite manifest")
    return network


def run_command(func: Callable, args) -> int:
    """Run a command and map errors onto exit codes."""
    try:
        return func(args)
    except (ManifestError, UsageError) as e:
        print(f"✗ {str(e)}")
        return EXIT_USAGE
    except NonMixingError as e:
        print(f"✗ {str(e)}")
        print(f"  Leading eigenvalues: {[complex(v) for v in e.spectrum_excerpt]}")
        return EXIT_FAILURE
    except QuMeraError as e:
        print(f"✗ {str(e)}")
        return EXIT_FAILURE


# ============================================================
# Commands
# ============================================================

def cmd_validate(args) -> int:
    """Per-tensor residuals of a manifest; 0 iff every tensor obeys the contraction rules."""
    network = manifest.load(args.manifest, check=False)
    report = validate(network, args.tol)
    _banner(f"Validating {args.manifest}")
    for entry in report.entries:
        mark = '✓' if entry.residual <= report.tol else '✗'
        where = '' if entry.level is None else f" level {entry.level}"
        where += '' if entry.position is None else f" position {entry.position}"
        print(f"{mark} {entry.role}{where}: residual {entry.residual:.3e}")
    print(f"\nMax residual {report.max_residual:.3e} (tolerance {report.tol:.0e})")

    record = ResultRecord(
        command='validate', config=_echo(args), seed=None,
        outputs={
            'valid': report.valid,
            'max_residual': report.max_residual,
            'tol': report.tol,
            'residuals': [vars(e) for e in report.entries],
        },
    )
    _emit(record, args)
    return EXIT_OK if report.valid else EXIT_FAILURE


def cmd_observe(args) -> int:
    """Local expectation at --site through the cone, or thermodynamic with --thermo."""
    network = manifest.load(args.manifest)
    obs = resolve_observable(args.observable, network.D)

    if args.thermo:
        si = _require_scale_invariant(network, 'observe --thermo')
        S = spectral_analysis(liouville_matrix(kraus_family(si, args.channel)))
        value = thermo_expectation(S, obs.window_matrix())
        outputs = {
            'value': value,
            'picture': 'thermodynamic',
            'channel': args.channel,
            'mixing': S.mixing,
            'subleading_modulus': S.subleading_modulus,
            'fixed_point': S.fixed_point,
        }
    else:
        mera = _require_finite(network, 'observe')
        site = mera.N // 2 if args.site is None else args.site
        value = local_expectation(mera, obs, site)
        outputs = {'value': value, 'picture': 'cone', 'site': site}

    _banner(f"Observable {obs.label}")
    print(f"✓ <{obs.label}> = {value.real:.15g} {value.imag:+.3g}i")
    _emit(ResultRecord(command='observe', config=_echo(args), seed=None, outputs=outputs), args)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    """Transfer-operator spectrum of a scale-invariant manifest, with an optional filtered kappa."""
    si = _require_scale_invariant(manifest.load(args.manifest), 'spectrum')
    left, right = kraus_family(si, 'L'), kraus_family(si, 'R')
    family = kraus_family(si, args.channel)
    S = spectral_analysis(liouville_matrix(family))

    _banner(f"Transfer spectrum ({args.channel} channel, {len(S.eigenvalues)} eigenvalues)")
    print(f"  Leading eigenvalue: {S.eigenvalues[0]:.12g}")
    print(f"  |lambda_2| = {S.subleading_modulus:.12f} ({'mixing' if S.mixing else 'not mixing'})")
    lr = lr_spectral_deviation(left, right)
    print(f"  L/R modulus deviation: {lr:.3e}")

    outputs = {
        'channel': args.channel,
        'eigenvalues': S.eigenvalues,
        'leading': spectrum_excerpt(S),
        'mixing': S.mixing,
        'gap': S.gap,
        'subleading_modulus': S.subleading_modulus,
        'scaling_dimensions': scaling_dimensions(S) if S.mixing else [],
        'lr_modulus_deviation': lr,
        'pi_deviation': pi_deviation(left, right),
        'condition': S.condition,
        'notes': S.notes,
    }
    coefficients = None
    if args.observable and S.mixing:
        obs = resolve_observable(args.observable, si.D)
        kappa = filtered_kappa(S, obs.window_matrix(), kappa_state(si))
        coefficients = kappa.coefficients
        outputs.update({'kappa': kappa.kappa, 'kappa_eigenvalue': kappa.eigenvalue,
                        'coefficients': coefficients, 'schur': kappa.schur, 'state_filter': kappa.state_filter})
        print(f"✓ kappa({obs.label}) = {kappa.kappa:.12f}")

    csv_path = write_spectrum_csv(_output_dir(args) / f"{_output_stem(args, 'spectrum')}_spectrum.csv",
                                  S.eigenvalues, coefficients)
    print(f"✓ Spectrum written to {csv_path}")
    outputs['csv'] = csv_path
    _emit(ResultRecord(command='spectrum', config=_echo(args), seed=_seed(args), outputs=outputs), args)
    return EXIT_OK


def cmd_exponent(args) -> int:
    """kappa, nu = -2 log2 kappa and the fitted decay exponent of the correlator series."""
    si = _require_scale_invariant(manifest.load(args.manifest), 'exponent')
    obs = resolve_observable(args.observable, si.D, default='x')
    family = kraus_family(si, args.channel)
    S = spectral_analysis(liouville_matrix(family))

    _banner(f"Critical exponent of {obs.label}")
    try:
        kappa = filtered_kappa(S, obs.window_matrix(), kappa_state(si))
    except KappaUndefinedError as e:
        print(f"✗ {str(e)}")
        record = ResultRecord(command='exponent', config=_echo(args), seed=_seed(args),
                              outputs={'kappa': None, 'mixing': S.mixing, 'coefficients': e.coefficients})
        _emit(record, args)
        return EXIT_FAILURE

    nu = critical_exponent(kappa.kappa)
    print(f"✓ kappa = {kappa.kappa:.12f}, nu = {nu:.6f}")
    kmax = Config.KMAX if args.kmax is None else args.kmax
    series = connected_correlator_series(si, obs, kmax=kmax)
    check = exponent_cross_check(series, kappa.kappa)
    if check.nu_fit is not None:
        mark = '✓' if check.relation_holds else '✗'
        print(f"{mark} fitted nu = {check.nu_fit:.6f} (relative difference {check.relative_difference:.3%})")
    else:
        print("✗ Too few correlator values above the fit floor")
    if not series.converged:
        print(f"✗ Tiling depth not converged (boundary error {series.boundary_error:.3e})")

    csv_path = write_series_csv(_output_dir(args) / f"{_output_stem(args, 'exponent')}_series.csv", series)
    outputs = {
        'kappa': kappa.kappa,
        'kappa_eigenvalue': kappa.eigenvalue,
        'coefficients': kappa.coefficients,
        'mixing': S.mixing,
        'schur': kappa.schur,
        'state_filter': kappa.state_filter,
        'nu_kappa': check.nu_kappa,
        'nu_fit': check.nu_fit,
        'relative_difference': check.relative_difference,
        'relation_holds': check.relation_holds,
        'bound_holds': check.bound_holds,
        'series': {
            'ks': series.ks,
            'values': series.values,
            'excluded': series.excluded,
            'depth': series.depth,
            'boundary_error': series.boundary_error,
            'converged': series.converged,
            'fit': vars(series.fit) if series.fit else None,
        },
        'csv': csv_path,
    }
    _emit(ResultRecord(command='exponent', config=_echo(args), seed=_seed(args), outputs=outputs), args)
    return EXIT_OK


def cmd_optimize(args) -> int:
    """Optimize a scale-invariant network; writes the manifest, the trace CSV and the record."""
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.tol is not None:
        config.tol = args.tol

    _banner(f"Optimizing D={config.D} {config.hamiltonian.model} network")
    try:
        network, trace = optimize(config)
    except OptimizationError as e:
        if e.trace is not None and e.trace.energies:
            write_trace_csv(_output_dir(args) / f"{_output_stem(args, 'optimize')}_trace.csv", e.trace)
        raise

    stem = _output_stem(args, 'optimize')
    manifest_path = manifest.save(network, _output_dir(args) / f"{stem}_manifest.json")
    trace_path = write_trace_csv(_output_dir(args) / f"{stem}_trace.csv", trace)
    mark = '✓' if trace.converged else '✗'
    status = 'stalled' if trace.stalled else ('converged' if trace.converged else 'sweep limit')
    print(f"{mark} {len(trace.energies)} sweeps ({status}), energy per spin {trace.final_energy:.12f}")
    gap = trace.gap_report(config.D)
    if trace.energy_error is not None:
        print(f"  Error against the exact energy density: {trace.energy_error:.3e}")
    if gap is not None:
        print(f"{'✓' if gap['met'] else '✗'} Target {gap['target']:.0e} at D={config.D}; gap {gap['gap']:.3e}")
    kappas = None
    if config.hamiltonian.model == 'ising' and config.hamiltonian.h == 1.0:
        kappas = critical_kappas(network, config.hamiltonian.h)
        for axis, entry in kappas.items():
            shown = 'undefined' if entry['kappa'] is None else f"{entry['kappa']:.6f}"
            print(f"  kappa_{axis} = {shown} (Ising {entry['kappa_th']:.6f})")
    print(f"✓ Network written to {manifest_path}")

    outputs = {
        'energy_density': trace.final_energy,
        'exact_energy_density': trace.exact_energy,
        'energy_error': trace.energy_error,
        'energies': trace.energies,
        'sweeps': len(trace.energies),
        'converged': trace.converged,
        'stalled': trace.stalled,
        'restarts': trace.restarts,
        'gap_report': gap,
        'kappas': kappas,
        'manifest': manifest_path,
        'trace_csv': trace_path,
    }
    _emit(ResultRecord(command='optimize', config=config.echo(), seed=config.seed, outputs=outputs), args)
    return EXIT_OK


def cmd_oracle(args) -> int:
    """Brute-force checks: state norm, cone-vs-oracle comparison, Ising reference data."""
    task = args.task
    if task == 'ising':
        reference = OracleService.ising_reference(args.field)
        _banner(f"Ising reference at h = {args.field}")
        print(f"✓ Energy density {reference.energy_density:.15f}")
        outputs = {'h': reference.h, 'energy_density': reference.energy_density,
                   'nu': reference.nu, 'kappa_th': reference.kappa_th}
        if args.sites is not None:
            ground = OracleService.ising_ground(args.sites, args.field)
            outputs['finite_chain'] = {'n': ground.n, 'energy_density': ground.energy_density}
            print(f"✓ n={ground.n} chain: energy density {ground.energy_density:.15f}")
        _emit(ResultRecord(command='oracle', config=_echo(args), seed=None, outputs=outputs), args)
        return EXIT_OK

    mera = _require_finite(manifest.load(args.manifest), 'oracle')
    try:
        psi = OracleService.expand_state(mera)
    except ResourceGuardError as e:
        print(f"✗ {str(e)}")
        _emit(ResultRecord(command='oracle', config=_echo(args), seed=None,
                           outputs={'task': task, 'refused': True, 'required_bytes': e.required_bytes}), args)
        return EXIT_FAILURE

    if task == 'norm':
        _banner(f"State norm (N={mera.N})")
        print(f"✓ |psi| = {psi.norm:.15f}")
        _emit(ResultRecord(command='oracle', config=_echo(args), seed=None,
                           outputs={'task': task, 'norm': psi.norm}), args)
        return EXIT_OK

    tol = 1e-10 if args.tol is None else args.tol
    obs = resolve_observable(args.observable, mera.D)
    window = obs.window_matrix()
    value_diffs, density_diffs = [], []
    for j in range(mera.N):
        sites = [(j - 1) % mera.N, j, (j + 1) % mera.N]
        value_diffs.append(abs(local_expectation(mera, window, j) - OracleService.exact_expectation(psi, window, sites)))
        density_diffs.append(trace_norm(reduced_density(mera, j) - OracleService.exact_reduced_density(psi, sites)))
    worst = max(max(value_diffs), max(density_diffs))
    passed = worst <= tol
    _banner(f"Cone vs brute force ({obs.label}, N={mera.N})")
    print(f"{'✓' if passed else '✗'} max expectation difference {max(value_diffs):.3e}")
    print(f"{'✓' if passed else '✗'} max density trace-norm difference {max(density_diffs):.3e}")
    outputs = {'task': task, 'observable': obs.label, 'tol': tol, 'passed': passed,
               'expectation_differences': value_diffs, 'density_differences': density_diffs}
    _emit(ResultRecord(command='oracle', config=_echo(args), seed=None, outputs=outputs), args)
    return EXIT_OK if passed else EXIT_FAILURE
