"""Two-branch forecaster over a period-reshaped series.

A history of length L_h is cut into R consecutive periods of length P and
stacked into a grid of shape [R, P, c] where element (r, p, channel) is
1-D timestep t = r*P + p; channel 0 is the (optionally normalized) target
value and the remaining channels are calendar features.

Two branches read the grid:

* long branch - each of the P grid columns is a length-R sequence sampled
  one period apart; the parallel gated cell (weights shared across
  columns) turns it into R hidden states, which a shared length-R weight
  vector collapses to one vector per column -> [P, hidden].
* short branch - each grid row (one full period) is flattened and mapped
  to a patch vector; a second length-R weight vector collapses the
  patches to one global vector, repeated P times -> [P, hidden].

The head concatenates both branches per column and maps each column to
its R_f future values (weights shared across columns by default, one map
per phase when head sharing is off).  The resulting [P, R_f] grid is
transposed and flattened so output index i = r_f*P + p, then
de-normalized back to original units when normalization is on.

Everything here is pure in (window, params); batched entry points stack
many windows into the same handful of matrix products.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import baselines
from .autodiff import Graph, Tensor
from .errors import ConfigError, ContractError, DimensionError
from .pgn import PgnParams

__all__ = [
    "SeriesWindow",
    "NormStats",
    "Grid2D",
    "TpgnVariant",
    "TpgnParams",
    "TpgnConfig",
    "VARIANTS",
    "FlopCount",
    "prepare_input",
    "long_branch",
    "short_branch",
    "forecast_head",
    "tpgn_forward",
    "tpgn_forward_batch",
    "param_count",
    "flop_count",
    "finite_diff_all_params",
    "tpgn_graph_depth",
    "tpgn_forward_tracked_grid",
]

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-5  # stands in for sigma when a history window is constant


@dataclass
class SeriesWindow:
    """One training sample: history, calendar features and future targets.

    Values are kept in original units; normalization happens per window in
    :func:`prepare_input`.  ``y_times`` optionally carries the horizon
    timestamps for prediction dumps.
    """

    x_1d: np.ndarray    # [L_h]
    tf_enc: np.ndarray  # [L_h, C_time], already scaled to [-0.5, 0.5]
    y_true: np.ndarray  # [L_f]
    y_times: list | None = None

    def __post_init__(self):
        self.x_1d = np.asarray(self.x_1d, dtype=np.float64)
        self.tf_enc = np.asarray(self.tf_enc, dtype=np.float64)
        self.y_true = np.asarray(self.y_true, dtype=np.float64)
        if self.x_1d.ndim != 1 or self.y_true.ndim != 1:
            raise DimensionError("x_1d and y_true must be 1-D")
        if self.tf_enc.ndim != 2 or self.tf_enc.shape[0] != self.x_1d.shape[0]:
            raise DimensionError(
                f"tf_enc shape {self.tf_enc.shape} does not match history length "
                f"{self.x_1d.shape[0]}")
        for name, arr in (("x_1d", self.x_1d), ("tf_enc", self.tf_enc),
                          ("y_true", self.y_true)):
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"{name} contains NaN or Inf")

    @property
    def l_h(self) -> int:
        return self.x_1d.shape[0]

    @property
    def l_f(self) -> int:
        return self.y_true.shape[0]

    @property
    def c_time(self) -> int:
        return self.tf_enc.shape[1]


@dataclass
class NormStats:
    """Per-window normalization state (population moments over the history)."""

    mu: float
    sigma: float
    norm: int


@dataclass
class Grid2D:
    """Period-stacked history: element (r, p, ch) is 1-D timestep r*P + p."""

    data: Tensor  # [R, P, c]

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def period(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


_LONG_KINDS = ("pgn", "gru", "lstm", "mlp", "off")


@dataclass(frozen=True)
class TpgnVariant:
    """Which cell drives the long branch, and whether the short branch runs."""

    long_branch: str = "pgn"
    short_branch: bool = True

    def __post_init__(self):
        if self.long_branch not in _LONG_KINDS:
            raise ConfigError(
                f"long_branch must be one of {_LONG_KINDS}, got {self.long_branch!r}")
        if self.long_branch == "off" and not self.short_branch:
            raise ConfigError("at least one branch must be active")


VARIANTS = {
    "full": TpgnVariant("pgn", True),
    "long": TpgnVariant("pgn", False),
    "short": TpgnVariant("off", True),
    "gru": TpgnVariant("gru", True),
    "lstm": TpgnVariant("lstm", True),
    "mlp": TpgnVariant("mlp", True),
}


@dataclass
class TpgnParams:
    """All weights of the forecaster plus its structural sizes.

    ``cell`` holds the alternative long-branch cell for the gru/lstm/mlp
    variants and stays None for the gated-cell default.
    """

    rows: int          # R, periods in the history
    period: int        # P
    channels: int      # c = 1 + C_time
    hidden: int        # d_m
    horizon_rows: int  # R_f, future periods; L_f = R_f * P
    pgn: PgnParams
    long_w: np.ndarray   # [R], shared across columns and channels
    long_b: np.ndarray   # scalar
    row_w: np.ndarray    # [hidden, P*c]
    row_b: np.ndarray    # [hidden]
    col_w: np.ndarray    # [R]
    col_b: np.ndarray    # scalar
    head_w: np.ndarray   # [R_f, 2*hidden], or [P, R_f, 2*hidden] per-phase
    head_b: np.ndarray   # [R_f], or [P, R_f] per-phase
    head_shared: bool = True
    cell: "baselines.GruParams | baselines.LstmParams | baselines.MlpParams | None" = None

    @classmethod
    def init(cls, l_h: int, l_f: int, period: int, c_time: int, hidden: int,
             rng: np.random.Generator, variant: TpgnVariant = VARIANTS["full"],
             head_shared: bool = True) -> "TpgnParams":
        if period < 1:
            raise ConfigError(f"period must be positive, got {period}")
        if l_h % period:
            raise ConfigError(f"history length {l_h} is not a multiple of period {period}")
        if l_f % period:
            raise ConfigError(f"horizon length {l_f} is not a multiple of period {period}")
        rows = l_h // period
        if rows < 2:
            raise ConfigError(
                f"history must span at least 2 periods, got {rows} (l_h={l_h}, P={period})")
        channels = 1 + c_time
        horizon_rows = l_f // period

        def u(rws, cols):
            bound = 1.0 / np.sqrt(cols)
            return rng.uniform(-bound, bound, size=(rws, cols))

        cell: object | None = None
        if variant.long_branch == "gru":
            cell = baselines.GruParams.init(channels, hidden, rng)
        elif variant.long_branch == "lstm":
            cell = baselines.LstmParams.init(channels, hidden, rng)
        elif variant.long_branch == "mlp":
            cell = baselines.MlpParams.init(channels, hidden, rng)
        if head_shared:
            head_w = u(horizon_rows, 2 * hidden)
            head_b = np.zeros(horizon_rows)
        else:
            head_w = np.stack([u(horizon_rows, 2 * hidden) for _ in range(period)])
            head_b = np.zeros((period, horizon_rows))
        return cls(
            rows=rows, period=period, channels=channels, hidden=hidden,
            horizon_rows=horizon_rows,
            pgn=PgnParams.init(rows, channels, hidden, rng),
            long_w=u(1, rows)[0], long_b=np.zeros(()),
            row_w=u(hidden, period * channels), row_b=np.zeros(hidden),
            col_w=u(1, rows)[0], col_b=np.zeros(()),
            head_w=head_w, head_b=head_b, head_shared=head_shared,
            cell=cell,
        )

    def validate(self) -> None:
        self.pgn.validate()
        if (self.pgn.seq_len, self.pgn.in_channels, self.pgn.hidden) != (
                self.rows, self.channels, self.hidden):
            raise DimensionError("cell sizes disagree with the grid structure")
        if self.head_shared:
            head_shapes = {"head_w": (self.horizon_rows, 2 * self.hidden),
                           "head_b": (self.horizon_rows,)}
        else:
            head_shapes = {"head_w": (self.period, self.horizon_rows, 2 * self.hidden),
                           "head_b": (self.period, self.horizon_rows)}
        expected = {
            "long_w": (self.rows,), "long_b": (),
            "row_w": (self.hidden, self.period * self.channels),
            "row_b": (self.hidden,),
            "col_w": (self.rows,), "col_b": (),
            **head_shapes,
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"{name} contains non-finite entries")
        if self.cell is not None:
            self.cell.validate()

    @property
    def l_h(self) -> int:
        return self.rows * self.period

    @property
    def l_f(self) -> int:
        return self.horizon_rows * self.period

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {f"pgn.{k}": v for k, v in self.pgn.named_arrays().items()}
        for name in ("long_w", "long_b", "row_w", "row_b", "col_w", "col_b",
                     "head_w", "head_b"):
            out[name] = getattr(self, name)
        if self.cell is not None:
            out.update({f"cell.{k}": v for k, v in self.cell.named_arrays().items()})
        return out

    def leaf_into(self, graph: Graph) -> dict[str, Tensor]:
        return {name: graph.leaf(arr) for name, arr in self.named_arrays().items()}

    def constants(self) -> dict[str, Tensor]:
        return {name: ad.constant(arr) for name, arr in self.named_arrays().items()}


@dataclass
class TpgnConfig:
    """Behavioral switches of a forward pass."""

    norm: int = 0
    period: int = 24
    variant: TpgnVariant = field(default_factory=lambda: VARIANTS["full"])

    def __post_init__(self):
        if self.norm not in (0, 1):
            raise ConfigError(f"norm must be 0 or 1, got {self.norm}")
        if self.period < 1:
            raise ConfigError(f"period must be positive, got {self.period}")


# ---------------------------------------------------------------------------
# input preparation

def prepare_input(window: SeriesWindow, norm: int, period: int,
                  ) -> tuple[Grid2D, NormStats]:
    """Normalize the history and stack it into the [R, P, c] grid.

    The moments use the population divisor L_h.  A constant history under
    norm=1 falls back to sigma = SIGMA_FLOOR so the normalized values
    become zeros; the event is logged.
    """
    if norm not in (0, 1):
        raise ConfigError(f"norm must be 0 or 1, got {norm}")
    l_h = window.l_h
    if period < 1 or l_h % period:
        raise ConfigError(f"history length {l_h} is not a multiple of period {period}")
    x = window.x_1d
    mu = float(x.mean())
    sigma = float(np.sqrt(((x - mu) ** 2).mean()))
    if norm == 1:
        if sigma == 0.0:
            logger.warning("constant history window; normalizing with sigma=%g",
                           SIGMA_FLOOR)
            sigma = SIGMA_FLOOR
        values = (x - mu) / sigma
    else:
        values = x
    stacked = np.concatenate([values[:, None], window.tf_enc], axis=1)
    rows = l_h // period
    grid = stacked.reshape(rows, period, stacked.shape[1])
    return Grid2D(ad.constant(grid)), NormStats(mu=mu, sigma=sigma, norm=norm)


def _grids_and_stats(windows, cfg: TpgnConfig, params: TpgnParams,
                     ) -> tuple[np.ndarray, list[NormStats]]:
    grids = []
    stats = []
    for w in windows:
        if w.l_h != params.l_h or w.l_f != params.l_f:
            raise ConfigError(
                f"window lengths ({w.l_h}, {w.l_f}) do not match the model "
                f"({params.l_h}, {params.l_f})")
        if 1 + w.c_time != params.channels:
            raise ConfigError(
                f"window has {w.c_time} time features, model expects "
                f"{params.channels - 1}")
        grid, st = prepare_input(w, cfg.norm, cfg.period)
        grids.append(grid.data.data)
        stats.append(st)
    return np.stack(grids), stats


# ---------------------------------------------------------------------------
# branches (batched cores; the per-grid public wrappers sit below)

def _pgn_stack(seqs: np.ndarray, w: dict[str, Tensor]) -> Tensor:
    """Gated-cell forward over M stacked sequences [M, R, c] -> [M*R, d]."""
    m, rows, c = seqs.shape
    width = rows - 1
    padded = np.concatenate([np.zeros((m, width, c)), seqs], axis=1)
    view = np.lib.stride_tricks.sliding_window_view(padded, width, axis=1)
    windows = np.ascontiguousarray(
        view[:, :rows].transpose(0, 1, 3, 2)).reshape(m * rows, width * c)
    x_all = ad.constant(seqs.reshape(m * rows, c))
    history = ad.linear(ad.constant(windows), w["pgn.hie_w"], w["pgn.hie_b"])
    joint = ad.concat([x_all, history], axis=1)
    gate = ad.sigmoid(ad.linear(joint, w["pgn.gate_w"], w["pgn.gate_b"]))
    cand = ad.tanh(ad.linear(joint, w["pgn.cand_w"], w["pgn.cand_b"]))
    return ad.lerp(gate, history, cand)


def _recurrent_stack(seqs: np.ndarray, w: dict[str, Tensor], kind: str,
                     hidden: int) -> Tensor:
    """Sequential cell over M stacked sequences; steps advance all M rows."""
    m, rows, _ = seqs.shape
    if kind == "gru":
        state = ad.constant(np.zeros((m, hidden)))
        outs = []
        for r in range(rows):
            state = baselines.gru_step(ad.constant(seqs[:, r, :]), state, w)
            outs.append(state)
    else:
        zeros = np.zeros((m, hidden))
        state = (ad.constant(zeros), ad.constant(zeros))
        outs = []
        for r in range(rows):
            state = baselines.lstm_step(ad.constant(seqs[:, r, :]), state, w)
            outs.append(state[0])
    stacked = ad.concat(outs, axis=0)  # r-major [rows*m, d]
    ordered = ad.permute(ad.reshape(stacked, (rows, m, hidden)), (1, 0, 2))
    return ad.reshape(ordered, (m * rows, hidden))


def _cell_keys(w: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    cut = len(prefix)
    return {k[cut:]: v for k, v in w.items() if k.startswith(prefix)}


def _long_branch_batch(grids: np.ndarray, w: dict[str, Tensor],
                       params: TpgnParams, kind: str) -> Tensor:
    """[B, R, P, c] -> column summaries [B*P, hidden], rows (b, p)-major."""
    b, rows, period, c = grids.shape
    d = params.hidden
    seqs = np.ascontiguousarray(grids.transpose(0, 2, 1, 3)).reshape(
        b * period, rows, c)
    if kind == "pgn":
        out_all = _pgn_stack(seqs, w)
    elif kind == "mlp":
        out_all = baselines.mlp_step(ad.constant(seqs.reshape(-1, c)),
                                     _cell_keys(w, "cell."))
    else:
        out_all = _recurrent_stack(seqs, _cell_keys(w, "cell."), kind, d)
    # weighted sum over the R axis, one matmul for every (b, p, channel)
    by_step = ad.permute(ad.reshape(out_all, (b * period, rows, d)), (1, 0, 2))
    flat = ad.reshape(by_step, (rows, b * period * d))
    agg = ad.matmul(ad.reshape(w["long_w"], (1, rows)), flat)
    return ad.add(ad.reshape(agg, (b * period, d)), w["long_b"])


def _short_branch_batch(grids: np.ndarray, w: dict[str, Tensor],
                        params: TpgnParams) -> Tensor:
    """[B, R, P, c] -> repeated global summaries [B*P, hidden]."""
    b, rows, period, c = grids.shape
    d = params.hidden
    rows_flat = ad.constant(grids.reshape(b * rows, period * c))
    patches = ad.linear(rows_flat, w["row_w"], w["row_b"])  # [B*R, d]
    by_step = ad.permute(ad.reshape(patches, (b, rows, d)), (1, 0, 2))
    flat = ad.reshape(by_step, (rows, b * d))
    agg = ad.matmul(ad.reshape(w["col_w"], (1, rows)), flat)
    global_vec = ad.add(ad.reshape(agg, (b, d)), w["col_b"])
    return ad.repeat_rows(global_vec, period)


def _head_batch(h_long: Tensor, h_rep: Tensor, w: dict[str, Tensor],
                params: TpgnParams, stats: list[NormStats], norm: int,
                batch: int) -> Tensor:
    """Per-column forecasts, laid out so output index i = r_f*P + p."""
    period, r_f, d = params.period, params.horizon_rows, params.hidden
    joint = ad.concat([h_long, h_rep], axis=1)  # [B*P, 2d]
    if params.head_shared:
        y2d = ad.linear(joint, w["head_w"], w["head_b"])  # [B*P, R_f]
        y3 = ad.permute(ad.reshape(y2d, (batch, period, r_f)), (0, 2, 1))
    else:
        # one weight set per phase column: regroup rows phase-major, apply
        # each phase's map to its own block, then restore the layout
        by_phase = ad.reshape(ad.permute(
            ad.reshape(joint, (batch, period, 2 * d)), (1, 0, 2)),
            (period * batch, 2 * d))
        outs = []
        for p in range(period):
            rows = ad.slice_rows(by_phase, p * batch, (p + 1) * batch)
            w_p = ad.reshape(ad.slice_rows(w["head_w"], p, p + 1), (r_f, 2 * d))
            b_p = ad.reshape(ad.slice_rows(w["head_b"], p, p + 1), (r_f,))
            outs.append(ad.linear(rows, w_p, b_p))       # [B, R_f]
        y3 = ad.permute(ad.reshape(ad.concat(outs, axis=0),
                                   (period, batch, r_f)), (1, 2, 0))
    out = ad.reshape(y3, (batch, r_f * period))
    if norm == 1:
        sig = np.array([[s.sigma] for s in stats])
        mu = np.array([[s.mu] for s in stats])
        out = ad.add(ad.mul(out, ad.constant(sig)), ad.constant(mu))
    return out


def _forward_core(grids: np.ndarray, stats: list[NormStats],
                  w: dict[str, Tensor], params: TpgnParams,
                  cfg: TpgnConfig) -> Tensor:
    batch, rows, period, _ = grids.shape
    d = params.hidden
    kind = cfg.variant.long_branch
    if kind != "off":
        h_long = _long_branch_batch(grids, w, params, kind)
    else:
        h_long = ad.constant(np.zeros((batch * period, d)))
    if cfg.variant.short_branch:
        h_rep = _short_branch_batch(grids, w, params)
    else:
        h_rep = ad.constant(np.zeros((batch * period, d)))
    return _head_batch(h_long, h_rep, w, params, stats, cfg.norm, batch)


# ---------------------------------------------------------------------------
# public operations

def _weights_or_constants(params: TpgnParams, weights) -> dict[str, Tensor]:
    return params.constants() if weights is None else weights


def _check_grid(grid: Grid2D, params: TpgnParams) -> None:
    if (grid.rows, grid.period, grid.channels) != (
            params.rows, params.period, params.channels):
        raise DimensionError(
            f"grid shape {grid.data.shape} does not match the model structure "
            f"({params.rows}, {params.period}, {params.channels})")


def long_branch(grid: Grid2D, params: TpgnParams,
                weights: dict[str, Tensor] | None = None) -> Tensor:
    """Column summaries [P, hidden] of one grid (gated-cell long branch)."""
    params.validate()
    _check_grid(grid, params)
    w = _weights_or_constants(params, weights)
    out = _long_branch_batch(grid.data.data[None], w, params, "pgn")
    return ad.reshape(out, (params.period, params.hidden))


def short_branch(grid: Grid2D, params: TpgnParams,
                 weights: dict[str, Tensor] | None = None) -> Tensor:
    """Global patch summary of one grid, repeated per column: [P, hidden]."""
    params.validate()
    _check_grid(grid, params)
    w = _weights_or_constants(params, weights)
    out = _short_branch_batch(grid.data.data[None], w, params)
    return ad.reshape(out, (params.period, params.hidden))


def forecast_head(h_long: Tensor, h_global_rep: Tensor, params: TpgnParams,
                  stats: NormStats,
                  weights: dict[str, Tensor] | None = None) -> Tensor:
    """Map branch outputs [P, hidden] each to the flat horizon [L_f]."""
    params.validate()
    if h_long.shape != (params.period, params.hidden):
        raise ConfigError(
            f"h_long shape {h_long.shape} does not match "
            f"({params.period}, {params.hidden})")
    if h_global_rep.shape != h_long.shape:
        raise ConfigError("branch outputs disagree in shape")
    w = _weights_or_constants(params, weights)
    out = _head_batch(h_long, h_global_rep, w, params, [stats], stats.norm, 1)
    return ad.reshape(out, (params.l_f,))


def tpgn_forward(window: SeriesWindow, params: TpgnParams, cfg: TpgnConfig,
                 weights: dict[str, Tensor] | None = None) -> Tensor:
    """Forecast one window: predictions [L_f] in original units."""
    out = tpgn_forward_batch([window], params, cfg, weights)
    return ad.reshape(out, (params.l_f,))


def tpgn_forward_batch(windows, params: TpgnParams, cfg: TpgnConfig,
                       weights: dict[str, Tensor] | None = None) -> Tensor:
    """Forecast a batch of windows at once: predictions [B, L_f].

    Pass ``weights = params.leaf_into(graph)`` to make the pass
    differentiable; by default everything stays plain numpy.
    """
    if not windows:
        raise ContractError("empty window batch")
    params.validate()
    if cfg.period != params.period:
        raise ConfigError(
            f"config period {cfg.period} does not match model period {params.period}")
    kind = cfg.variant.long_branch
    if kind in ("gru", "lstm", "mlp"):
        wanted = {"gru": baselines.GruParams, "lstm": baselines.LstmParams,
                  "mlp": baselines.MlpParams}[kind]
        if not isinstance(params.cell, wanted):
            raise ConfigError(f"variant {kind!r} needs matching cell parameters")
    w = _weights_or_constants(params, weights)
    grids, stats = _grids_and_stats(windows, cfg, params)
    return _forward_core(grids, stats, w, params, cfg)


# ---------------------------------------------------------------------------
# size and cost accounting

def param_count(params: TpgnParams) -> int:
    """Total learnable scalars."""
    return int(sum(a.size for a in params.named_arrays().values()))


@dataclass
class FlopCount:
    """Multiply-accumulate counts of one forward pass.

    ``total`` splits into the two branches plus the head.  ``per_layer``
    sums the cost of a single application of each linear layer (one step,
    one patch, one column) - the quantity whose growth the square-root
    complexity claim is about.
    """

    long_branch: int
    short_branch: int
    head: int
    total: int
    per_layer: int


def flop_count(params: TpgnParams, l_h: int, l_f: int,
               variant: TpgnVariant = VARIANTS["full"]) -> FlopCount:
    rows, period, c, d = params.rows, params.period, params.channels, params.hidden
    r_f = params.horizon_rows
    if rows * period != l_h or r_f * period != l_f:
        raise ConfigError(
            f"lengths ({l_h}, {l_f}) do not match the model structure "
            f"({rows}x{period}, {r_f}x{period})")

    per_layer = 0
    long_total = 0
    if variant.long_branch == "pgn":
        hie_step = (rows - 1) * c * d
        gate_step = (d + c) * d
        long_total = period * (rows * hie_step + 2 * rows * gate_step)
        per_layer += hie_step + 2 * gate_step
    elif variant.long_branch == "gru":
        long_total = period * baselines.gru_macs(rows, c, d)
        per_layer += 3 * (c + d) * d
    elif variant.long_branch == "lstm":
        long_total = period * baselines.lstm_macs(rows, c, d)
        per_layer += 4 * (c + d) * d
    elif variant.long_branch == "mlp":
        long_total = period * baselines.mlp_macs(rows, c, d)
        per_layer += c * d + d * d
    if variant.long_branch != "off":
        long_total += period * rows * d  # shared weighted sum over the R axis
        per_layer += rows * d

    short_total = 0
    if variant.short_branch:
        short_total = rows * (period * c) * d + rows * d
        per_layer += (period * c) * d + rows * d

    head_total = period * (2 * d) * r_f
    per_layer += 2 * d * r_f
    return FlopCount(
        long_branch=long_total, short_branch=short_total, head=head_total,
        total=long_total + short_total + head_total, per_layer=per_layer)


# ---------------------------------------------------------------------------
# structural depth

def tpgn_forward_tracked_grid(grid: Tensor, stats: NormStats,
                              w: dict[str, Tensor], params: TpgnParams,
                              cfg: TpgnConfig) -> Tensor:
    """Forward of one prepared grid built from tape ops end to end.

    Unlike the batched fast path, which feeds the grid in as constants,
    this keeps the grid itself on the tape so the input-to-output path
    length can be measured (and the fast path cross-checked).  Only the
    gated-cell long branch is supported.
    """
    from .pgn import pgn_apply  # local to avoid an import cycle at load

    rows, period, c = params.rows, params.period, params.channels
    d = params.hidden
    cols = ad.permute(grid, (1, 0, 2))  # [P, R, c]
    if cfg.variant.long_branch == "pgn":
        pgn_w = {k[len("pgn."):]: v for k, v in w.items() if k.startswith("pgn.")}
        outs = []
        for p in range(period):
            col = ad.reshape(ad.slice_rows(cols, p, p + 1), (rows, c))
            outs.append(pgn_apply(col, pgn_w, rows).output)
        out_all = ad.concat(outs, axis=0)  # [P*R, d], (p, r)-major
        by_step = ad.permute(ad.reshape(out_all, (period, rows, d)), (1, 0, 2))
        flat = ad.reshape(by_step, (rows, period * d))
        agg = ad.matmul(ad.reshape(w["long_w"], (1, rows)), flat)
        h_long = ad.add(ad.reshape(agg, (period, d)), w["long_b"])
    elif cfg.variant.long_branch == "off":
        h_long = ad.constant(np.zeros((period, d)))
    else:
        raise ContractError("tracked-grid forward supports the gated cell only")
    if cfg.variant.short_branch:
        rows_flat = ad.reshape(grid, (rows, period * c))
        patches = ad.linear(rows_flat, w["row_w"], w["row_b"])
        hg = ad.matmul(ad.reshape(w["col_w"], (1, rows)), patches)
        h_rep = ad.repeat_rows(ad.add(hg, w["col_b"]), period)
    else:
        h_rep = ad.constant(np.zeros((period, d)))
    out = _head_batch(h_long, h_rep, w, params, [stats], cfg.norm, 1)
    return ad.reshape(out, (params.l_f,))


def tpgn_graph_depth(params: TpgnParams, cfg: TpgnConfig | None = None) -> int:
    """Longest op chain from the prepared input grid to the forecast."""
    if cfg is None:
        cfg = TpgnConfig(norm=0, period=params.period)
    params.validate()
    graph = Graph()
    grid = graph.leaf(np.zeros((params.rows, params.period, params.channels)),
                      op="input")
    w = params.leaf_into(graph)
    out = tpgn_forward_tracked_grid(grid, NormStats(0.0, 1.0, cfg.norm), w,
                                    params, cfg)
    return graph.longest_path(grid.node_id, out.node_id)


# ---------------------------------------------------------------------------
# verification helper

def finite_diff_all_params(window: SeriesWindow, params: TpgnParams,
                           cfg: TpgnConfig, h: float = 1e-4) -> dict[str, float]:
    """Finite-difference error of d(sum of predictions)/d(theta), per tensor."""
    params.validate()
    arrays = params.named_arrays()
    errors = {}
    for name in arrays:
        def f(t, _name=name):
            w = {k: ad.constant(v) for k, v in arrays.items()}
            w[_name] = t
            out = tpgn_forward_batch([window], params, cfg, weights=w)
            return ad.reduce_sum(out)

        errors[name] = ad.finite_diff_check(f, arrays[name], h)
    return errors
