"""Long-range univariate forecasting with a parallel gated cell.

The library is organized bottom-up:

* :mod:`tpgn.autodiff` - float64 tensors on a deterministic reverse-mode tape
* :mod:`tpgn.pgn` - the parallel gated cell (constant-depth sequence model)
* :mod:`tpgn.baselines` - sequential GRU/LSTM cells and an MLP block
* :mod:`tpgn.model` - the two-branch forecaster over period-reshaped input
* :mod:`tpgn.data` - CSV ingest, hourly aggregation, windowing, noise
* :mod:`tpgn.training` - L2 loss, Adam, early stopping, checkpoints
* :mod:`tpgn.bench` - wall-clock / memory / cost scaling measurements
* :mod:`tpgn.cli` - the ``tpgn`` command
"""

from .autodiff import (Graph, GradientMap, Tensor, backward, constant,
                       finite_diff_check)
from .errors import (ConfigError, ContractError, DataError, DimensionError,
                     DivergenceError, TpgnError)
from .pgn import PgnOutput, PgnParams, graph_depth, hie_forward, pgn_forward, \
    pgn_forward_oracle
from .baselines import (GruParams, LstmParams, MlpParams, gru_forward_seq,
                        lstm_forward_seq, mlp_block)
from .model import (VARIANTS, FlopCount, Grid2D, NormStats, SeriesWindow,
                    TpgnConfig, TpgnParams, TpgnVariant, flop_count,
                    forecast_head, long_branch, param_count, prepare_input,
                    short_branch, tpgn_forward, tpgn_forward_batch)

__version__ = "0.1.0"
