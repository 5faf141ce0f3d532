import logging

from celery import shared_task
from django.db import DatabaseError

from .experiments import ExperimentConfig
from .models import Sweep
from .services import ExperimentService

logger = logging.getLogger('cep')


@shared_task(name='cep.run_sweep_cell')
def run_sweep_cell(config, window, noise, replicate, output_dir, sweep_id=None):
    """
    Run gen, train and eval for one sweep cell and return its runs.csv row.
    Each cell is seeded on its own, so cells may execute in any order or in parallel.
    """
    sweep = None
    if sweep_id is not None:
        try:
            sweep = Sweep.objects.filter(id=sweep_id).first()
        except DatabaseError as e:
            logger.warning(f"Could not load sweep {sweep_id}: {str(e)}")
    row = ExperimentService.execute_run(ExperimentConfig(**config), window, noise, replicate, output_dir, sweep)
    logger.info(f"Sweep cell W={window} noise={noise:g} replicate={replicate}: {row['status']}")
    return row
