"""Online scheduling of deadline-constrained, partially completable jobs over time-varying rate regions."""
from .numerics import DomainError, PowerUtility, Utility
from .offline import brute_force_solve, competitive_ratio, offline_solve
from .online import (
    ConvergenceError,
    SchedulerState,
    competitive_bound,
    compute_dual,
    compute_primal,
    constant_c,
    do_step,
    feasibility_scale,
    lightweight_do_step,
)
from .rate_region import RateRegion, contains, linear_max
from .runner import LemmaMonitor, run_instance, run_online
from .stochastic import VirtualQueue, d_lookahead_frame, lfdo_frame, queue_update, run_stochastic
from .workload import FrameConfig, Instance, Job, JobTable, ScenarioConfig, fig3_config, generate_instance

__version__ = "0.1.0"
