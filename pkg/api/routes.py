import functools
import logging

import click
import numpy as np
from pydantic import ValidationError

from api.models import RunConfig
from services.asymptotics import default_points
from services.dirac import (
    PerturbedFamily,
    RegularityError,
    cd_residual,
    confluent_residual,
    moment_invariance,
    perturbed_biorthogonality,
    perturbed_recurrence,
    perturbed_V,
    regularity_check,
    reproducing_residual,
)
from services.experiment_runner import ExperimentRunner, build_job
from services.markov import ContourSpec, FamilyMarkov, MarkovEvaluator, contour_pairing, example1_reconciliation
from services.polymat import MopnlError, VerificationError, norm
from services.recurrence import GENERATORS, FamilyValidationError, liouville_residual
from services.sobolev import sobolev_pack
from services.spectral import QuadratureError, quadrature_weights

logger = logging.getLogger(__name__)

api = click.Group('api')

CONFIG_ERRORS = (ValidationError, FamilyValidationError, ValueError)


def _current_app():
    return click.get_current_context().find_root().command


def common_options(f):
    """
    Options shared by every subcommand: --config, --out, --m-max and --format.
    """
    @click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False),
                  help='Experiment configuration JSON.')
    @click.option('--out', 'out', default=None, help='Output directory.')
    @click.option('--m-max', 'm_max', default=None, type=click.IntRange(min=0), help='Override of the largest index.')
    @click.option('--format', 'fmt', default=None, type=click.Choice(['csv', 'json']), help='Output format.')
    @functools.wraps(f)
    def wrapper(config_path, out, m_max, fmt, **kwargs):
        ctx = click.get_current_context()
        app = _current_app()
        try:
            run = RunConfig.from_file(config_path)
            writer = app.extensions['table_writer']
            writer.configure(out or app.config['OUTPUT_DIR'], fmt or run.format or app.config['OUTPUT_FORMAT'])
            family = None if run.family is None else run.family.build()
        except CONFIG_ERRORS as e:
            logger.error(f"Invalid configuration {config_path}: {e}")
            click.echo(f"Invalid configuration: {e}", err=True)
            ctx.exit(2)
        seed = app.config['SEED'] if run.seed is None else run.seed
        try:
            passed = f(app=app, run=run, family=family, writer=writer, m_max=m_max, seed=seed, **kwargs)
        except CONFIG_ERRORS as e:
            logger.error(f"Invalid request: {e}")
            click.echo(f"Invalid request: {e}", err=True)
            ctx.exit(2)
        except MopnlError as e:
            logger.error(f"{f.__name__} failed: {type(e).__name__}: {e}")
            raise click.ClickException(f"{type(e).__name__}: {e}") from e
        if not passed:
            click.echo("Some checks did not pass, see the written tables", err=True)
            ctx.exit(1)
        ctx.exit(0)
    return wrapper


def _entries(matrix):
    return [(i, j, complex(matrix[i, j])) for i in range(matrix.shape[0]) for j in range(matrix.shape[1])]


def _coefficient_records(kind, m, p):
    return [[kind, m, power, i, j, value] for power, coefficient in enumerate(p.coeffs)
            for i, j, value in _entries(coefficient)]


def _require_family(family):
    if family is None:
        raise ValueError("The configuration has no 'family' section")
    return family


@api.command()
@common_options
def generate(app, run, family, writer, m_max, seed):
    """Dump coefficients of V, B1, G and G1."""
    family = _require_family(family)
    m_max = 10 if m_max is None else m_max
    if family.size is not None:
        m_max = min(m_max, family.size - 1)
    records = []
    for kind, generator in GENERATORS.items():
        for m, p in enumerate(generator(family, m_max)):
            records.extend(_coefficient_records(kind, m, p))
    writer.publish_records(f"coefficients_{family.name}", ['kind', 'm', 'power', 'i', 'j', 'value'], records)
    return True


@api.command()
@click.option('--m', 'm', required=True, type=click.IntRange(min=1), help='Index of V_m.')
@common_options
def zeros(app, run, family, writer, m_max, seed, m):
    """Zeros of V_m with their quadrature weights."""
    family = _require_family(family)
    try:
        rule = quadrature_weights(family, m)
    except QuadratureError as e:
        logger.error(f"Quadrature failed for {family.name} at m={m}: {e}")
        return False
    records = []
    for (x, multiplicity), weight in zip(rule.nodes, rule.weights):
        for i in range(family.dim):
            for j in range(family.dim):
                records.append([complex(x), multiplicity, i, j, complex(weight[i, j])])
    writer.publish_records(f"zeros_{family.name}_m{m}", ['node', 'multiplicity', 'i', 'j', 'weight'], records)
    return True


@api.command()
@click.option('--z', 'points', multiple=True, type=complex, help='Evaluation point, repeatable.')
@common_options
def markov(app, run, family, writer, m_max, seed, points):
    """Markov function values on a grid of points."""
    family = _require_family(family)
    points = list(points) or run.grid() or default_points(family)
    markov_function = FamilyMarkov(family, order=m_max)
    evaluator = MarkovEvaluator.from_family(family) if family.constant else None
    records = []
    for z in points:
        value = markov_function(z)
        residual = evaluator.evaluate(z).residual if evaluator is not None else float('nan')
        records.extend([complex(z), i, j, entry, residual] for i, j, entry in _entries(value))
    writer.publish_records(f"markov_{family.name}", ['z', 'i', 'j', 'value', 'residual'], records)
    if run.closed_forms:
        rows = []
        for z in points:
            report = example1_reconciliation(z)
            for kind in ('V', 'B1'):
                for (i, j), offsets in sorted(report[kind].items()):
                    rows.append([complex(z), kind, i, j, ' '.join(str(o) for o in offsets) or 'none'])
            rows.append([complex(z), 'F21_closed_form', 1, 0, report['F21_closed_form']])
            rows.append([complex(z), 'F21_fixed_point', 1, 0, report['F21_fixed_point']])
        writer.publish_records(f"closed_forms_{family.name}", ['z', 'quantity', 'i', 'j', 'value'], rows)
    return True


@api.command()
@common_options
def identities(app, run, family, writer, m_max, seed):
    """Christoffel-Darboux, Liouville, bi-orthogonality and reproducing suites."""
    family = _require_family(family)
    m_top = run.identity_m_max if m_max is None else m_max
    if family.size is not None:
        m_top = min(m_top, family.size - 2)
    rng = np.random.default_rng(seed)
    count = run.identity_points
    points = run.identity_radius * np.sqrt(rng.random(count)) * np.exp(2j * np.pi * rng.random(count))
    tol = app.config['VERIFY_TOL']
    suites = {
        'christoffel_darboux': (max(cd_residual(family, m, x, z) for m in range(m_top + 1)
                                    for x, z in zip(points, np.roll(points, 1))), 1e-10),
        'confluent_kernel': (max(confluent_residual(family, m) for m in range(m_top + 1)), tol),
        'liouville': (max(liouville_residual(family, m, z) for m in range(m_top + 1) for z in points), 1e-10),
    }
    n_pair = min(run.pairing_max, m_top)
    markov_function = FamilyMarkov(family)
    spec = ContourSpec.around(markov_function.bound)
    V = GENERATORS['V'](family, n_pair)
    G = GENERATORS['G'](family, n_pair)
    pairing_error = stability = 0.0
    for m in range(n_pair + 1):
        for n in range(n_pair + 1):
            value = contour_pairing(V[m], markov_function, G[n], spec)
            expected = np.eye(family.dim) if m == n else np.zeros((family.dim, family.dim))
            pairing_error = max(pairing_error, norm(value - expected))
            stability = max(stability, norm(contour_pairing(V[m], markov_function, G[n], spec.doubled()) - value))
    suites['biorthogonality'] = (pairing_error, 1e-8)
    suites['node_doubling'] = (stability, 1e-10)
    suites['reproducing'] = (max(reproducing_residual(family, j, n_pair, spec) for j in range(n_pair + 1)), 1e-8)
    records = [[name, residual, gate, residual < gate] for name, (residual, gate) in suites.items()]
    writer.publish_records(f"identities_{family.name}", ['suite', 'residual', 'gate', 'passed'], records)
    return all(r[3] for r in records)


@api.command()
@common_options
def perturb(app, run, family, writer, m_max, seed):
    """Perturbed family with regularity report, recurrence and bi-orthogonality checks."""
    family = _require_family(family)
    if run.perturbation is None:
        raise ValueError("The configuration has no 'perturbation' section")
    pf = PerturbedFamily(family, run.perturbation.delta(), run.perturbation.lam.to_array(),
                         cond_max=app.config['REGULARITY_COND_MAX'])
    m_top = run.perturb_m_max if m_max is None else m_max
    rng = np.random.default_rng(seed)
    points = 2 * rng.random(5) * np.exp(2j * np.pi * rng.random(5))
    regularity, coefficients, polys = [], [], {}
    passed = True
    for m in range(m_top + 1):
        report = regularity_check(pf, m)
        recurrence = ''
        if report.regular:
            polys[m] = perturbed_V(pf, m)
            coefficients.extend(_coefficient_records('V~', m, polys[m]))
            if m >= 1:
                try:
                    perturbed_recurrence(pf, m, points=points)
                    recurrence = True
                except (VerificationError, RegularityError) as e:
                    logger.error(f"Perturbed recurrence check failed at m={m}: {e}")
                    recurrence = False
                    passed = False
        regularity.append([m, bool(report.regular), report.condition, recurrence])
    writer.publish_records(f"regularity_{family.name}", ['m', 'regular', 'condition', 'recurrence_ok'], regularity)
    writer.publish_records(f"perturbed_{family.name}", ['kind', 'm', 'power', 'i', 'j', 'value'], coefficients)
    regular = [m for m in polys if m <= run.pairing_max]
    pairing_error = 0.0
    try:
        for m in regular:
            for n in regular:
                value = perturbed_biorthogonality(pf, m, n)
                expected = np.eye(family.dim) if m == n else np.zeros((family.dim, family.dim))
                pairing_error = max(pairing_error, norm(value - expected))
        moments = moment_invariance(pf)
    except MopnlError as e:
        logger.error(f"Perturbed contour checks failed: {e}")
        return False
    checks = [
        ['perturbed_biorthogonality', pairing_error, 1e-7],
        ['zeroth_moment_shift', moments.zeroth, 1e-8],
        ['higher_moments', moments.higher, 1e-8],
    ]
    records = [name_value + [name_value[1] < name_value[2]] for name_value in checks]
    writer.publish_records(f"perturbed_checks_{family.name}", ['check', 'error', 'gate', 'passed'], records)
    return passed and all(r[3] for r in records)


SOBOLEV_GATES = {
    'five_term_residual': 1e-9,
    'symmetry_error': 1e-9,
    'block_symmetry_error': 1e-12,
    'packing_error': 1e-9,
    'vector_orthogonality_error': 1e-9,
}


@api.command()
@common_options
def sobolev(app, run, family, writer, m_max, seed):
    """Sobolev five-term recurrence packed into a 2 x 2 block recurrence."""
    if run.sobolev is None:
        raise ValueError("The configuration has no 'sobolev' section")
    spec = run.sobolev
    n_max = spec.n_max if m_max is None else m_max
    pack = sobolev_pack(spec.measure_moments(n_max), spec.lam, n_max)
    writer.publish_records('sobolev_coefficients', ['n', 'c0', 'c1', 'c2'],
                           [[n] + list(row) for n, row in enumerate(pack.coefficients)])
    blocks = []
    for label, matrices in (('A', pack.A), ('B', pack.B), ('C', pack.C)):
        for m, matrix in enumerate(matrices):
            blocks.extend([label, m, i, j, value] for i, j, value in _entries(matrix))
    writer.publish_records('sobolev_blocks', ['block', 'm', 'i', 'j', 'value'], blocks)
    records = [[name, pack.report[name], gate, pack.report[name] < gate] for name, gate in SOBOLEV_GATES.items()]
    writer.publish_records('sobolev_report', ['check', 'value', 'gate', 'passed'], records)
    return all(r[3] for r in records)


@api.command()
@click.option('--z', 'points', multiple=True, type=complex, help='Override of the evaluation point, repeatable.')
@common_options
def asymptotics(app, run, family, writer, m_max, seed, points):
    """Convergence tables of the configured limit experiments."""
    family = _require_family(family)
    pf = None
    if run.perturbation is not None:
        pf = PerturbedFamily(family, run.perturbation.delta(), run.perturbation.lam.to_array(),
                             cond_max=app.config['REGULARITY_COND_MAX'])
    jobs = []
    for experiment in run.experiments:
        z_values = list(points) or [experiment.point()]
        for index, z in enumerate(z_values):
            experiment_id = experiment.id if len(z_values) == 1 else f"{experiment.id}_{index}"
            job = build_job(experiment.kind, family, pf, z=z, k=experiment.k,
                            m_max=m_max or experiment.m_max or app.config['DEFAULT_M_MAX'],
                            gate=experiment.gate, target=experiment.target, experiment_id=experiment_id)
            jobs.append((experiment_id, job))
    outcomes = ExperimentRunner(app.config['MAX_WORKERS']).run(jobs)
    passed = True
    for outcome in outcomes:
        if outcome.error is not None:
            passed = False
            continue
        writer.publish_table(outcome.table)
        passed = passed and outcome.table.passed
    return passed
