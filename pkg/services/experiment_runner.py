import logging
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from typing import NamedTuple

from config import Config
from services.asymptotics import (
    ExperimentRefusedError,
    derivative_ratio_experiment,
    inverse_decay_experiment,
    ratio_experiment,
    relative_asymptotics_experiment,
    xi_limit_experiment,
)
from services.dirac import RegularityError
from services.polymat import MopnlError

logger = logging.getLogger(__name__)

PERTURBED_KINDS = ('xi_limit', 'relative')


class ExperimentOutcome(NamedTuple):
    experiment_id: str
    table: object
    error: Exception


def build_job(kind, family, perturbed=None, z=None, k=1, m_max=None, gate=None, target='markov', experiment_id=None):
    """
    Binds an experiment kind to its family and parameters.

    Args:
        kind: One of ratio, derivative_ratio, inverse_decay, xi_limit, relative.
        family: The base RecurrenceFamily.
        perturbed: PerturbedFamily, required for xi_limit and relative.
        z: Evaluation point where the kind needs one.

    Returns:
        A callable producing a ConvergenceTable.

    Raises:
        ValueError: For an unknown kind or missing inputs.
    """
    if kind in PERTURBED_KINDS and perturbed is None:
        raise ValueError(f"Experiment {experiment_id!r} of kind {kind} needs a perturbation")
    if kind != 'xi_limit' and z is None:
        raise ValueError(f"Experiment {experiment_id!r} of kind {kind} needs a point z")
    common = dict(m_max=m_max, experiment_id=experiment_id)
    if gate is not None:
        common['gate'] = gate
    if kind == 'ratio':
        return partial(ratio_experiment, family, z, target=target, **common)
    if kind == 'derivative_ratio':
        return partial(derivative_ratio_experiment, family, z, k, target=target, **common)
    if kind == 'inverse_decay':
        return partial(inverse_decay_experiment, family, z, **common)
    if kind == 'xi_limit':
        return partial(xi_limit_experiment, perturbed, **common)
    if kind == 'relative':
        return partial(relative_asymptotics_experiment, perturbed, z, **common)
    raise ValueError(f"Unknown experiment kind {kind!r}")


class ExperimentRunner:
    """
    Runs independent experiments on a thread pool.

    Outcomes come back in submission order whatever the scheduling.
    """

    def __init__(self, max_workers=None):
        self.max_workers = Config.MAX_WORKERS if max_workers is None else max_workers

    def _guarded(self, experiment_id, job):
        try:
            return ExperimentOutcome(experiment_id, job(), None)
        except (ExperimentRefusedError, RegularityError) as e:
            logger.warning(f"Experiment {experiment_id} refused: {e}")
            return ExperimentOutcome(experiment_id, None, e)
        except MopnlError as e:
            logger.error(f"Experiment {experiment_id} failed: {e}")
            return ExperimentOutcome(experiment_id, None, e)

    def run(self, jobs):
        """
        Args:
            jobs: List of (experiment_id, callable) pairs.

        Returns:
            List of ExperimentOutcome in the order of jobs.
        """
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(self._guarded, experiment_id, job) for experiment_id, job in jobs]
            return [future.result() for future in futures]
