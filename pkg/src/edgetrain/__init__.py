"""Small-footprint training of PV power forecasters: a numpy LSTM with BPTT,
exact-greedy gradient-boosted trees, and double/mixed/float precision policies."""

from .dataset import PowerSeries, SplitSpec, WindowedDataset, load_csv, make_windows, split, synthesize_pv
from .metrics import EvalResult, evaluate
from .numeric import PrecisionPolicy, Scheme, VariableGroup

__version__ = "0.1.0"
