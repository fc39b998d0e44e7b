"""Components package for FMD-analysis"""
from . import anonymity_metrics
from . import attacks_stat
from . import dp_calc
from . import experiments
from . import fmd_model
from . import game_theory
from . import network_data
from . import simulator
from .fmd_model import DetectionRate, IdealDetector, dyadic_rate, ideal_test, expected_tags
from .network_data import MessageEvent, CommGraph, RateAssignment, DegreeStats, load_edge_list, assign_rates, degree_stats
from .simulator import SimulationRun, TagTable, EpochPartition, simulate_per_message, simulate_aggregated, partition_epochs

__all__ = [
    'anonymity_metrics',
    'attacks_stat',
    'dp_calc',
    'experiments',
    'fmd_model',
    'game_theory',
    'network_data',
    'simulator',
    'DetectionRate',
    'IdealDetector',
    'dyadic_rate',
    'ideal_test',
    'expected_tags',
    'MessageEvent',
    'CommGraph',
    'RateAssignment',
    'DegreeStats',
    'load_edge_list',
    'assign_rates',
    'degree_stats',
    'SimulationRun',
    'TagTable',
    'EpochPartition',
    'simulate_per_message',
    'simulate_aggregated',
    'partition_epochs',
]
