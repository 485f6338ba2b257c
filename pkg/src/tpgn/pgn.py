"""The parallel gated cell.

For an input sequence x of shape [L, c] the cell computes, for every step
t at once:

    history_t   = hie_w @ flatten(x[t-L+1 : t]) + hie_b     (zeros before t=0)
    gate_t      = sigmoid(gate_w @ [x_t, history_t] + gate_b)
    candidate_t = tanh(cand_w @ [x_t, history_t] + cand_b)
    out_t       = gate_t * history_t + (1 - gate_t) * candidate_t

The history summary looks at exactly the L-1 steps strictly before t
(oldest first), taken from a zero-padded prefix, so no step depends on any
other step's result: the whole sequence is one window-stacking, three
affine maps and a gate, and the computation-graph depth from input to
output does not grow with L.

Window flattening is time-major with channels contiguous per step, and
the gate concatenation puts the c input channels before the hidden state,
generalizing the single-channel layout to c > 1.  Both orderings are load
-bearing for saved weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .errors import ContractError, DimensionError

__all__ = [
    "PgnParams",
    "PgnOutput",
    "hie_forward",
    "pgn_forward",
    "pgn_forward_oracle",
    "graph_depth",
    "pgn_macs",
]


@dataclass
class PgnParams:
    """Weights of one cell: the history extractor and the two gate maps."""

    seq_len: int
    in_channels: int
    hidden: int
    hie_w: np.ndarray   # [hidden, (seq_len-1)*in_channels]
    hie_b: np.ndarray   # [hidden]
    gate_w: np.ndarray  # [hidden, hidden+in_channels]
    gate_b: np.ndarray  # [hidden]
    cand_w: np.ndarray  # [hidden, hidden+in_channels]
    cand_b: np.ndarray  # [hidden]

    @classmethod
    def init(cls, seq_len: int, in_channels: int, hidden: int,
             rng: np.random.Generator) -> "PgnParams":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
        if seq_len < 2:
            raise ContractError(f"seq_len must be >= 2, got {seq_len}")
        if in_channels < 1 or hidden < 1:
            raise ContractError("in_channels and hidden must be positive")

        def u(rows, cols):
            bound = 1.0 / np.sqrt(cols)
            return rng.uniform(-bound, bound, size=(rows, cols))

        window = (seq_len - 1) * in_channels
        gate_in = hidden + in_channels
        return cls(
            seq_len=seq_len, in_channels=in_channels, hidden=hidden,
            hie_w=u(hidden, window), hie_b=np.zeros(hidden),
            gate_w=u(hidden, gate_in), gate_b=np.zeros(hidden),
            cand_w=u(hidden, gate_in), cand_b=np.zeros(hidden),
        )

    def validate(self) -> None:
        if self.seq_len < 2:
            raise ContractError(f"seq_len must be >= 2, got {self.seq_len}")
        window = (self.seq_len - 1) * self.in_channels
        gate_in = self.hidden + self.in_channels
        expected = {
            "hie_w": (self.hidden, window), "hie_b": (self.hidden,),
            "gate_w": (self.hidden, gate_in), "gate_b": (self.hidden,),
            "cand_w": (self.hidden, gate_in), "cand_b": (self.hidden,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"{name} contains non-finite entries")

    def leaf_into(self, graph: Graph) -> dict[str, Tensor]:
        """Track every weight on ``graph``; keys match the field names."""
        names = ("hie_w", "hie_b", "gate_w", "gate_b", "cand_w", "cand_b")
        return {n: graph.leaf(getattr(self, n)) for n in names}

    def named_arrays(self) -> dict[str, np.ndarray]:
        names = ("hie_w", "hie_b", "gate_w", "gate_b", "cand_w", "cand_b")
        return {n: getattr(self, n) for n in names}


@dataclass
class PgnOutput:
    """Per-step activations: history summary, gate, candidate and fusion."""

    history: Tensor    # [L, hidden]
    gate: Tensor       # [L, hidden], entries in (0, 1)
    candidate: Tensor  # [L, hidden], entries in (-1, 1)
    output: Tensor     # [L, hidden] = gate*history + (1-gate)*candidate


def _check_input(x: np.ndarray, params: PgnParams) -> None:
    params.validate()
    if x.ndim != 2 or x.shape != (params.seq_len, params.in_channels):
        raise DimensionError(
            f"input shape {x.shape} does not match (seq_len, in_channels) = "
            f"({params.seq_len}, {params.in_channels})")
    if not np.all(np.isfinite(x)):
        raise ContractError("input contains non-finite entries")


def hie_apply(x: Tensor, w: dict[str, Tensor], seq_len: int) -> Tensor:
    """History summaries for a tracked/constant input of shape [L, c]."""
    padded = ad.pad_front(x, seq_len - 1)
    windows = ad.sliding_windows(padded, seq_len - 1, count=seq_len)
    return ad.linear(windows, w["hie_w"], w["hie_b"])


def pgn_apply(x: Tensor, w: dict[str, Tensor], seq_len: int) -> PgnOutput:
    """Cell forward on already-materialized tensors (tracked or constant)."""
    history = hie_apply(x, w, seq_len)
    joint = ad.concat([x, history], axis=1)
    gate = ad.sigmoid(ad.linear(joint, w["gate_w"], w["gate_b"]))
    candidate = ad.tanh(ad.linear(joint, w["cand_w"], w["cand_b"]))
    output = ad.lerp(gate, history, candidate)
    return PgnOutput(history=history, gate=gate, candidate=candidate, output=output)


def hie_forward(x, params: PgnParams, graph: Graph | None = None) -> Tensor:
    """History summaries [L, hidden]; step t sees only steps before t."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, params)
    if graph is None:
        return hie_apply(ad.constant(x), {k: ad.constant(v) for k, v in
                                          params.named_arrays().items()}, params.seq_len)
    return hie_apply(graph.leaf(x, op="input"), params.leaf_into(graph), params.seq_len)


def pgn_forward(x, params: PgnParams, graph: Graph | None = None) -> PgnOutput:
    """Full cell forward.

    With ``graph`` given, the input and every weight become tracked leaves
    so gradients and path lengths can be read off afterwards; without it
    the computation stays plain numpy.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, params)
    if graph is None:
        w = {k: ad.constant(v) for k, v in params.named_arrays().items()}
        return pgn_apply(ad.constant(x), w, params.seq_len)
    return pgn_apply(graph.leaf(x, op="input"), params.leaf_into(graph), params.seq_len)


def pgn_forward_oracle(x, params: PgnParams) -> PgnOutput:
    """Reference cell: a literal per-step loop with explicit history slices.

    Shares nothing with :func:`pgn_forward` beyond the parameter struct; each
    step rebuilds its zero-padded window from the raw input.  Used to pin the
    batched implementation down to floating-point noise.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, params)
    L, c = x.shape
    d = params.hidden
    history = np.empty((L, d))
    gate = np.empty((L, d))
    candidate = np.empty((L, d))
    output = np.empty((L, d))
    for t in range(L):
        window = np.zeros((L - 1, c))
        past = x[max(0, t - (L - 1)):t]
        if len(past):
            window[L - 1 - len(past):] = past
        h_t = params.hie_w @ window.reshape(-1) + params.hie_b
        joint = np.concatenate([x[t], h_t])
        z_g = params.gate_w @ joint + params.gate_b
        e = np.exp(-np.abs(z_g))
        g_t = np.where(z_g >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        c_t = np.tanh(params.cand_w @ joint + params.cand_b)
        history[t] = h_t
        gate[t] = g_t
        candidate[t] = c_t
        output[t] = g_t * h_t + (1.0 - g_t) * c_t
    return PgnOutput(history=ad.constant(history), gate=ad.constant(gate),
                     candidate=ad.constant(candidate), output=ad.constant(output))


def pgn_macs(length: int, in_channels: int, hidden: int) -> int:
    """Multiply-accumulates of one cell forward over a length-L sequence."""
    hie = length * (length - 1) * in_channels * hidden
    gates = 2 * length * (hidden + in_channels) * hidden
    return hie + gates


def graph_depth(params: PgnParams, x=None) -> int:
    """Longest op chain from the input to the fused output on a fresh tape.

    Constant in the sequence length: the cell has no step-to-step
    recurrence, so the path length is a fixed property of the op pipeline.
    """
    if x is None:
        x = np.zeros((params.seq_len, params.in_channels))
    graph = Graph()
    xt = graph.leaf(np.asarray(x, dtype=np.float64), op="input")
    out = pgn_apply(xt, params.leaf_into(graph), params.seq_len)
    return graph.longest_path(xt.node_id, out.output.node_id)
