from decouple import config


class Config:
    """
    Base configuration class for mopnl.

    Every tolerance and default used by the numerical services is read here, so
    a run can be tuned from the environment or a `.env` file without touching
    the experiment JSON.
    """

    # Logging
    LOG_LEVEL = config('MOPNL_LOG_LEVEL', default='INFO')

    # Polynomial core
    CLUSTER_TOL = config('MOPNL_CLUSTER_TOL', default=1e-8, cast=float)
    INTERP_RADIUS = config('MOPNL_INTERP_RADIUS', default=1.0, cast=float)

    # Spectral
    MATCH_TOL = config('MOPNL_MATCH_TOL', default=1e-6, cast=float)

    # Markov functions
    FIXED_POINT_TOL = config('MOPNL_FIXED_POINT_TOL', default=1e-14, cast=float)
    FIXED_POINT_MAX_ITER = config('MOPNL_FIXED_POINT_MAX_ITER', default=2000, cast=int)
    NEWTON_MAX_ITER = config('MOPNL_NEWTON_MAX_ITER', default=200, cast=int)
    RESIDUAL_TOL = config('MOPNL_RESIDUAL_TOL', default=1e-10, cast=float)
    FD_REL_TOL = config('MOPNL_FD_REL_TOL', default=1e-5, cast=float)
    CONTOUR_NODES = config('MOPNL_CONTOUR_NODES', default=256, cast=int)
    CONTOUR_MARGIN = config('MOPNL_CONTOUR_MARGIN', default=1.0, cast=float)
    APPROXIMANT_MARGIN = config('MOPNL_APPROXIMANT_MARGIN', default=10, cast=int)

    # Families and perturbations
    NEVAI_CHECK_MAX = config('MOPNL_NEVAI_CHECK_MAX', default=1000, cast=int)
    REGULARITY_COND_MAX = config('MOPNL_REGULARITY_COND_MAX', default=1e12, cast=float)
    VERIFY_TOL = config('MOPNL_VERIFY_TOL', default=1e-9, cast=float)
    PSI_ORDER = config('MOPNL_PSI_ORDER', default=30, cast=int)

    # Experiments and output
    DEFAULT_M_MAX = config('MOPNL_DEFAULT_M_MAX', default=200, cast=int)
    OUTPUT_DIR = config('MOPNL_OUTPUT_DIR', default='results')
    OUTPUT_FORMAT = config('MOPNL_OUTPUT_FORMAT', default='csv')
    SEED = config('MOPNL_SEED', default=0, cast=int)
    MAX_WORKERS = config('MOPNL_MAX_WORKERS', default=4, cast=int)
