"""Service modules for kantize."""
from .dataset_service import Dataset, load_idx, load_mnist, synthetic_dataset
from .training_service import train, cross_entropy, TrainResult
from .evaluation_service import evaluate_accuracy, predict, EVAL_MODES
from .report_service import ParetoPoint, read_csv, write_csv, plot_report
from .sweep_pipeline import SweepSpec, SweepPipeline, enumerate_configs, get_pipeline, run_sweep

__all__ = [
    'Dataset',
    'load_idx',
    'load_mnist',
    'synthetic_dataset',
    'train',
    'cross_entropy',
    'TrainResult',
    'evaluate_accuracy',
    'predict',
    'EVAL_MODES',
    'ParetoPoint',
    'read_csv',
    'write_csv',
    'plot_report',
    'SweepSpec',
    'SweepPipeline',
    'enumerate_configs',
    'get_pipeline',
    'run_sweep',
]
