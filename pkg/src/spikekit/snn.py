"""Spiking core: phase schedule, bistable IF units, baseline IF neurons,
synchronous shortcut units, the spiking max-pool gate, the synchronous
time-stepped simulator, decoders, and diagnostics.

Coding scheme
-------------
Time is divided into periods of K phases; the phase weight is
``S_t = 2^-(1 + t mod K)``.  A spike emitted at step t carries the value
``S_t * V_th`` downstream (rate mode: ``V_th``), so postsynaptic currents are
already value-weighted and the per-neuron conservation identity

    sum_t S_t * V_th * spike_t  ==  sum_t I_t  -  V_T

holds exactly under soft reset (64-bit accumulation).

Bistable units pair two neurons A and B: B may spike only in even periods,
A only in odd ones; the silent neuron accumulates incoming current.  Every
unit layer therefore adds one period of pipeline latency; decoders skip that
warm-up window before averaging.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, ValidationError
from .graph import LINEAR_KINDS, Layer, ModelGraph, _layer_out_shape
from .ann import annotate_points

MODES = ("bsnn", "phase", "rate")


@dataclass
class PhaseConfig:
    """Phase schedule: K phases per period, n_periods periods, threshold V_th."""

    K: int = 8
    n_periods: int = 16
    V_th: float = 1.0

    def __post_init__(self):
        if self.K < 1 or self.n_periods < 1:
            raise ConfigurationError(
                f"PhaseConfig requires K >= 1 and n_periods >= 1, "
                f"got K={self.K}, n_periods={self.n_periods}"
            )
        if self.V_th <= 0:
            raise DomainError(f"V_th must be positive, got {self.V_th}")

    @property
    def T(self) -> int:
        return self.K * self.n_periods


def phase_weight(t: int, K: int) -> float:
    """S_t = 2^-(1 + t mod K); exact dyadic value."""
    if t < 0 or K < 1:
        raise DomainError(f"phase_weight requires t >= 0 and K >= 1, got t={t}, K={K}")
    return 2.0 ** -(1 + (t % K))


def spiking_side(t: int, K: int) -> str:
    """Which neuron of a bistable unit may emit at step t (B in even periods)."""
    return "A" if (t // K) % 2 == 1 else "B"


def accumulating_side(t: int, K: int) -> str:
    return "B" if spiking_side(t, K) == "A" else "A"


@dataclass
class BIFUnitState:
    """Membrane potentials of a bistable unit (scalars or arrays)."""

    V_A: float | np.ndarray = 0.0
    V_B: float | np.ndarray = 0.0


def bif_step(state: BIFUnitState, I_A, I_B, t: int, cfg: PhaseConfig):
    """One synchronous update of a bistable unit.

    Both potentials integrate their (already value-weighted) currents; only
    the stage-active neuron may spike, against the dynamic threshold
    ``S_t * V_th``, with soft reset.  Returns (spike_A, spike_B).
    """
    state.V_A = state.V_A + np.asarray(I_A, dtype=np.float64)
    state.V_B = state.V_B + np.asarray(I_B, dtype=np.float64)
    thr = phase_weight(t, cfg.K) * cfg.V_th
    zero = np.zeros_like(state.V_A + state.V_B)
    if spiking_side(t, cfg.K) == "A":
        spike_A = (state.V_A >= thr).astype(np.float64) + zero
        state.V_A = state.V_A - thr * spike_A
        spike_B = zero
    else:
        spike_B = (state.V_B >= thr).astype(np.float64) + zero
        state.V_B = state.V_B - thr * spike_B
        spike_A = zero
    return spike_A, spike_B


def if_step(V, I, t: int, cfg: PhaseConfig, mode: str = "rate"):
    """One integrate-and-fire update with soft reset.

    ``rate`` mode uses the constant threshold V_th; ``phase`` mode uses the
    dynamic threshold ``S_t * V_th``.  Returns (spike, V').
    """
    if mode not in ("rate", "phase"):
        raise ConfigurationError(f"if_step: unknown mode {mode!r}")
    V = np.asarray(V, dtype=np.float64) + np.asarray(I, dtype=np.float64)
    thr = cfg.V_th if mode == "rate" else phase_weight(t, cfg.K) * cfg.V_th
    spike = (V >= thr).astype(np.float64)
    return spike, V - thr * spike


def inject_input(x, t: int, cfg: PhaseConfig, mode: str, input_mode: str = "phase"):
    """Input current for step t.  ``x`` must already be divided by the input
    lambda.  Rate mode (and ``input_mode='constant'``) injects x every step;
    otherwise the current is phase-weighted x * S_t.  In bsnn mode the engine
    delivers this to whichever first-layer neuron is accumulating at t."""
    x = np.asarray(x, dtype=np.float64)
    if mode == "rate" or input_mode == "constant":
        return x
    return x * phase_weight(t, cfg.K)


def spiking_maxpool_gate(spikes, running_sums):
    """Forward the current-step spike of the window's argmax unit.

    ``running_sums`` are each unit's accumulated weighted-spike totals; ties
    break to the lowest flat index (numpy argmax convention).
    """
    spikes = np.asarray(spikes)
    sums = np.asarray(running_sums)
    if spikes.shape != sums.shape:
        raise ValidationError(
            f"gate shapes differ: spikes {spikes.shape} vs sums {sums.shape}"
        )
    return spikes.ravel()[int(np.argmax(sums.ravel()))]


# ---------------------------------------------------------------------------
# Compiled network


class _Node:
    def step(self, v, ctx):  # pragma: no cover - interface
        raise NotImplementedError


class _DenseNode(_Node):
    def __init__(self, W):
        self.W = np.asarray(W, dtype=np.float64)

    def step(self, v, ctx):
        return v @ self.W.T


class _ConvNode(_Node):
    def __init__(self, W, stride, pad):
        self.W = np.asarray(W, dtype=np.float64)
        self.stride = stride
        self.pad = pad

    def step(self, v, ctx):
        cout, cin, kh, kw = self.W.shape
        n, c, h, w = v.shape
        if self.pad:
            v = np.pad(v, ((0, 0), (0, 0), (self.pad, self.pad), (self.pad, self.pad)))
        oh = (h + 2 * self.pad - kh) // self.stride + 1
        ow = (w + 2 * self.pad - kw) // self.stride + 1
        y = np.zeros((n, cout, oh, ow), dtype=np.float64)
        for i in range(kh):
            for j in range(kw):
                patch = v[:, :, i : i + self.stride * oh : self.stride,
                          j : j + self.stride * ow : self.stride]
                y += np.einsum("ncHW,oc->noHW", patch, self.W[:, :, i, j])
        return y


class _AvgPoolNode(_Node):
    def __init__(self, k, stride):
        self.k = k
        self.stride = stride

    def step(self, v, ctx):
        n, c, h, w = v.shape
        k, s = self.k, self.stride
        oh = (h - k) // s + 1
        ow = (w - k) // s + 1
        y = np.zeros((n, c, oh, ow), dtype=np.float64)
        for i in range(k):
            for j in range(k):
                y += v[:, :, i : i + s * oh : s, j : j + s * ow : s]
        return y / (k * k)


class _FlattenNode(_Node):
    def step(self, v, ctx):
        return v.reshape(v.shape[0], -1)


class _ScaleNode(_Node):
    def __init__(self, gain):
        self.gain = float(gain)

    def step(self, v, ctx):
        return v * self.gain


class _UnitNode(_Node):
    """One spiking layer: bistable pairs (bsnn) or single IF neurons."""

    def __init__(self, point, shape, bias, depth, mode):
        self.point = point
        self.shape = tuple(shape)
        self.bias = np.zeros(self.shape) if bias is None else np.asarray(bias, dtype=np.float64)
        self.depth = depth
        self.mode = mode
        self.state = None

    def reset(self, batch, n_periods, raster):
        full = (batch,) + self.shape
        self.state = s = {}
        sides = ("A", "B") if self.mode == "bsnn" else ("A",)
        for side in sides:
            s[f"V_{side}"] = np.zeros(full)
            s[f"in_{side}"] = np.zeros(full)
            s[f"ws_{side}"] = np.zeros(full)
        s["period_spikes"] = np.zeros((n_periods, batch) + self.shape)
        s["period_ws"] = np.zeros((n_periods, batch) + self.shape)
        if raster:
            s["raster"] = {side: [] for side in sides}

    def step(self, v, ctx):
        s = self.state
        t, cfg = ctx["t"], ctx["cfg"]
        S = phase_weight(t, cfg.K)
        I = v + self.bias * (1.0 if ctx["mode"] == "rate" else S)
        period = t // cfg.K
        if self.mode == "bsnn":
            acc = accumulating_side(t, cfg.K)
            act = "A" if acc == "B" else "B"
            s[f"V_{acc}"] += I
            s[f"in_{acc}"] += I
            thr = S * cfg.V_th
            spikes = (s[f"V_{act}"] >= thr).astype(np.float64)
            s[f"V_{act}"] -= thr * spikes
            emitted = thr * spikes
            s[f"ws_{act}"] += emitted
            if "raster" in s:
                s["raster"][act].append(spikes.astype(np.uint8))
                s["raster"][acc].append(np.zeros_like(spikes, dtype=np.uint8))
        else:
            s["V_A"] += I
            s["in_A"] += I
            thr = cfg.V_th if self.mode == "rate" else S * cfg.V_th
            spikes = (s["V_A"] >= thr).astype(np.float64)
            s["V_A"] -= thr * spikes
            emitted = thr * spikes
            s["ws_A"] += emitted
            if "raster" in s:
                s["raster"]["A"].append(spikes.astype(np.uint8))
        s["period_spikes"][period] += spikes
        s["period_ws"][period] += emitted
        return emitted


class _MaxPoolNode(_Node):
    """Spiking max-pool gate: per window, forward the spike of the unit with
    the largest accumulated weighted-spike sum (ties: lowest flat index)."""

    def __init__(self, k):
        self.k = k
        self.sums = None

    def reset(self, batch, shape):
        self.sums = np.zeros((batch,) + tuple(shape))

    def step(self, v, ctx):
        self.sums += v
        k = self.k
        n, c, h, w = v.shape
        oh, ow = h // k, w // k

        def windows(a):
            return (
                a.reshape(n, c, oh, k, ow, k)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, oh, ow, k * k)
            )

        winner = np.argmax(windows(self.sums), axis=-1)
        return np.take_along_axis(windows(v), winner[..., None], axis=-1)[..., 0]


class _ResidualNode(_Node):
    def __init__(self, body, shortcut, out_unit):
        self.body = body
        self.shortcut = shortcut
        self.out_unit = out_unit

    def step(self, v, ctx):
        vb = _step_nodes(self.body, v, ctx)
        vs = _step_nodes(self.shortcut, v, ctx)
        return self.out_unit.step(vb + vs, ctx)


class _OutputNode(_Node):
    """Non-spiking readout: accumulates the injected current per period."""

    def __init__(self, bias, shape, depth):
        self.bias = np.asarray(bias, dtype=np.float64)
        self.shape = tuple(shape)
        self.depth = depth
        self.period_in = None

    def reset(self, batch, n_periods):
        self.period_in = np.zeros((n_periods, batch) + self.shape)

    def step(self, v, ctx):
        t, cfg = ctx["t"], ctx["cfg"]
        S = 1.0 if ctx["mode"] == "rate" else phase_weight(t, cfg.K)
        self.period_in[t // cfg.K] += v + self.bias * S
        return v


def _step_nodes(nodes, v, ctx):
    for node in nodes:
        v = node.step(v, ctx)
    return v


def _iter_units(nodes):
    for node in nodes:
        if isinstance(node, _UnitNode):
            yield node
        elif isinstance(node, _ResidualNode):
            yield from _iter_units(node.body)
            yield from _iter_units(node.shortcut)
            yield node.out_unit


def _iter_pools(nodes):
    for node in nodes:
        if isinstance(node, _MaxPoolNode):
            yield node
        elif isinstance(node, _ResidualNode):
            yield from _iter_pools(node.body)
            yield from _iter_pools(node.shortcut)


@dataclass
class SpikingNetwork:
    """Converted network: compiled node list plus phase configuration."""

    mode: str
    cfg: PhaseConfig
    sn_enabled: bool
    input_shape: tuple
    nodes: list
    readout_point: str | None  # None => dedicated output accumulator
    node_shapes: dict = field(default_factory=dict)

    @property
    def unit_points(self) -> list:
        return [u.point for u in _iter_units(self.nodes)]

    def warmup(self, point: str) -> int:
        for u in _iter_units(self.nodes):
            if u.point == point:
                return u.depth
        raise ValidationError(f"no unit layer named {point!r}")


class _Compiler:
    def __init__(self, mode, sn_enabled, cfg):
        self.mode = mode
        self.sn_enabled = sn_enabled
        self.cfg = cfg
        self.pool_shapes = {}  # node id -> input shape

    def compile_seq(self, layers, shape, depth):
        """Returns (nodes, out_shape, out_depth, pending_bias, last_unit_seen)."""
        nodes = []
        pending_bias = None
        last_was_spiking = True  # model input counts as a spike-like source
        for layer in layers:
            kind = layer.kind
            if kind == "input":
                continue
            if kind == "batchnorm":
                raise ConfigurationError("fold batchnorm before building an SNN")
            if kind == "dense":
                nodes.append(_DenseNode(layer.params["W"]))
                shape = _layer_out_shape(layer, shape, "snn")
                pending_bias = layer.params["b"].astype(np.float64)
                last_was_spiking = False
            elif kind == "conv2d":
                nodes.append(
                    _ConvNode(layer.params["W"], layer.attrs["stride"], layer.attrs["pad"])
                )
                shape = _layer_out_shape(layer, shape, "snn")
                pending_bias = np.broadcast_to(
                    layer.params["b"].astype(np.float64)[:, None, None], shape
                ).copy()
                last_was_spiking = False
            elif kind == "relu":
                unit = _UnitNode(layer.out_point, shape, pending_bias, depth + 1, self.mode)
                nodes.append(unit)
                depth += 1
                pending_bias = None
                last_was_spiking = True
            elif kind == "avgpool2d":
                node = _AvgPoolNode(layer.attrs["k"], layer.attrs["stride"])
                nodes.append(node)
                shape = _layer_out_shape(layer, shape, "snn")
                if pending_bias is not None:
                    pending_bias = _avgpool_bias(pending_bias, layer.attrs)
            elif kind == "maxpool2d":
                if layer.attrs["k"] != layer.attrs["stride"]:
                    raise ConfigurationError(
                        "spiking max-pool supports non-overlapping windows only"
                    )
                if not last_was_spiking or pending_bias is not None:
                    raise ConfigurationError(
                        "spiking max-pool must follow an activation layer"
                    )
                node = _MaxPoolNode(layer.attrs["k"])
                self.pool_shapes[id(node)] = shape
                nodes.append(node)
                shape = _layer_out_shape(layer, shape, "snn")
            elif kind == "flatten":
                nodes.append(_FlattenNode())
                if pending_bias is not None:
                    pending_bias = pending_bias.reshape(-1)
                shape = (int(np.prod(shape)),)
            elif kind == "residual":
                node, shape, depth = self._compile_residual(layer, shape, depth)
                nodes.append(node)
                pending_bias = None
                last_was_spiking = True
            else:
                raise ConfigurationError(f"unsupported layer kind {kind!r}")
        return nodes, shape, depth, pending_bias, last_was_spiking

    def _compile_residual(self, layer, shape, depth):
        body_nodes, body_shape, body_depth, body_bias, body_spiking = self.compile_seq(
            layer.body, shape, depth
        )
        if body_spiking or body_bias is None:
            raise ConfigurationError("residual body must end with a linear layer")
        short_nodes = [_ScaleNode(layer.shortcut_gain)]
        short_depth = depth
        short_bias = np.zeros(body_shape)
        if self.sn_enabled and self.mode == "bsnn":
            sn = _UnitNode(f"{layer.out_point}.sn", shape, None, depth + 1, self.mode)
            short_nodes.append(sn)
            short_depth = depth + 1
        if layer.shortcut:
            sc_nodes, sc_shape, sc_depth, sc_bias, sc_spiking = self.compile_seq(
                layer.shortcut, shape, short_depth
            )
            if sc_spiking or sc_bias is None:
                raise ConfigurationError("shortcut projection must be a linear layer")
            short_nodes.extend(sc_nodes)
            short_bias = sc_bias
            short_depth = sc_depth
        out_depth = max(body_depth, short_depth) + 1
        out_unit = _UnitNode(
            layer.out_point, body_shape, body_bias + short_bias, out_depth, self.mode
        )
        return _ResidualNode(body_nodes, short_nodes, out_unit), body_shape, out_depth


def build_snn(
    model: ModelGraph,
    cfg: PhaseConfig,
    mode: str = "bsnn",
    sn_enabled: bool = True,
) -> SpikingNetwork:
    """Compile a BN-folded, weight-normalized model into a spiking network.

    Every ReLU becomes one spiking unit layer (a bistable pair in bsnn mode);
    identity residual shortcuts carry their normalization gain, and in bsnn
    mode with ``sn_enabled`` a synchronous unit with identity weights sits at
    the shortcut head.  A trailing linear layer becomes a non-spiking current
    accumulator used for classification readout.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
    annotate_points(model)
    compiler = _Compiler(mode, sn_enabled, cfg)
    nodes, shape, depth, pending_bias, last_spiking = compiler.compile_seq(
        model.layers, tuple(model.input_shape), 0
    )
    readout_point = None
    if pending_bias is not None:
        nodes.append(_OutputNode(pending_bias, shape, depth))
    elif last_spiking:
        units = list(_iter_units(nodes))
        if not units:
            raise ConfigurationError("model contains no spiking layers")
        readout_point = units[-1].point
    net = SpikingNetwork(
        mode=mode,
        cfg=cfg,
        sn_enabled=sn_enabled,
        input_shape=tuple(model.input_shape),
        nodes=nodes,
        readout_point=readout_point,
    )
    net.node_shapes = compiler.pool_shapes
    return net


# ---------------------------------------------------------------------------
# Simulation


@dataclass
class SimTrace:
    """Per-layer accumulators of one simulation run.

    ``units`` maps point name -> dict with (per neuron, 64-bit):
      period_ws      [n_periods, batch, ...] weighted-spike sums per period
      period_spikes  [n_periods, batch, ...] spike counts per period
      spikes         [batch, ...] total spike counts over all periods
      in_<side>   total injected current per side
      ws_<side>   total weighted spikes per side
      V_<side>    final membrane potential per side
      warmup      pipeline latency in periods
      raster      optional per-step 0/1 spike history per side
    ``output`` holds the non-spiking readout: period_in [n_periods, batch, C].
    """

    mode: str
    cfg: PhaseConfig
    units: dict
    output: dict | None
    readout_point: str | None


def simulate(
    net: SpikingNetwork,
    x,
    cfg: PhaseConfig | None = None,
    input_mode: str = "phase",
    record_raster: bool = False,
) -> SimTrace:
    """Run the synchronous step loop over all T = K * n_periods steps.

    ``x`` is one sample or a batch, already normalized by the input lambda.
    Layer l consumes layer l-1's spikes from the same step.
    """
    cfg = cfg or net.cfg
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.shape == tuple(net.input_shape)
    if squeeze:
        x = x[None]
    if x.shape[1:] != tuple(net.input_shape):
        raise ValidationError(
            f"input shape {x.shape} does not match network input {net.input_shape}"
        )
    batch = x.shape[0]
    for unit in _iter_units(net.nodes):
        unit.reset(batch, cfg.n_periods, record_raster)
    for pool in _iter_pools(net.nodes):
        pool.reset(batch, net.node_shapes[id(pool)])
    out_node = next((n for n in net.nodes if isinstance(n, _OutputNode)), None)
    if out_node is not None:
        out_node.reset(batch, cfg.n_periods)
    ctx = {"cfg": cfg, "mode": net.mode, "t": 0}
    for t in range(cfg.T):
        ctx["t"] = t
        v = inject_input(x, t, cfg, net.mode, input_mode)
        _step_nodes(net.nodes, v, ctx)
    units = {}
    for unit in _iter_units(net.nodes):
        s = unit.state
        entry = {
            "period_ws": s["period_ws"],
            "period_spikes": s["period_spikes"],
            "spikes": s["period_spikes"].sum(axis=0),
            "warmup": unit.depth,
            "shape": unit.shape,
        }
        sides = ("A", "B") if net.mode == "bsnn" else ("A",)
        for side in sides:
            entry[f"in_{side}"] = s[f"in_{side}"]
            entry[f"ws_{side}"] = s[f"ws_{side}"]
            entry[f"V_{side}"] = s[f"V_{side}"]
        if record_raster:
            entry["raster"] = {
                side: np.stack(s["raster"][side]) for side in s["raster"]
            }
        units[unit.point] = entry
    output = None
    if out_node is not None:
        output = {"period_in": out_node.period_in, "warmup": out_node.depth}
    return SimTrace(
        mode=net.mode,
        cfg=cfg,
        units=units,
        output=output,
        readout_point=net.readout_point,
    )


def _full_scale(cfg: PhaseConfig) -> float:
    # A period's maximum weighted-spike sum is sum_k S_k = 1 - 2^-K; currents
    # deliver the same fraction per unit value, so decoded values are exact
    # once period sums are divided by this full-scale factor.
    return 1.0 - 2.0 ** -cfg.K


def _window(trace: SimTrace, warmup: int, skip: int | None):
    n = trace.cfg.n_periods
    if n < 1:
        raise DomainError("decoding requires at least one completed period")
    if skip is None:
        skip = warmup if trace.mode == "bsnn" else 0
    skip = min(skip, n - 1)
    return skip, n - skip


def decode_phase(trace: SimTrace, point: str, skip: int | None = None) -> np.ndarray:
    """Mean weighted-spike value per completed period, Eq-style decode.

    In bsnn mode the unit's pipeline warm-up periods are excluded by default;
    pass ``skip=0`` for the raw average over all periods.
    """
    if point not in trace.units:
        raise ValidationError(f"trace has no unit layer {point!r}")
    entry = trace.units[point]
    skip, n_eff = _window(trace, entry["warmup"], skip)
    total = entry["period_ws"][skip:].sum(axis=0)
    return total / (n_eff * trace.cfg.V_th * _full_scale(trace.cfg))


def decode_rate(trace: SimTrace, point: str, skip: int | None = None) -> np.ndarray:
    """Spike count over time steps (firing rate)."""
    if point not in trace.units:
        raise ValidationError(f"trace has no unit layer {point!r}")
    entry = trace.units[point]
    skip, n_eff = _window(trace, entry["warmup"], skip)
    total = entry["period_ws"][skip:].sum(axis=0)
    return total / (n_eff * trace.cfg.K * trace.cfg.V_th)


def decode_output(trace: SimTrace, skip: int | None = None, upto: int | None = None):
    """Decoded readout values (normalized logits).

    ``upto`` limits the window to the first ``upto`` periods (for
    accuracy-vs-time curves); by default all periods count.
    """
    cfg = trace.cfg
    if trace.output is None:
        point = trace.readout_point
        return (
            decode_rate(trace, point, skip)
            if trace.mode == "rate"
            else decode_phase(trace, point, skip)
        )
    entry = trace.output
    n = cfg.n_periods if upto is None else min(upto, cfg.n_periods)
    if skip is None:
        skip = entry["warmup"] if trace.mode == "bsnn" else 0
    skip = min(skip, n - 1)
    total = entry["period_in"][skip:n].sum(axis=0)
    if trace.mode == "rate":
        return total / ((n - skip) * cfg.K)
    return total / ((n - skip) * _full_scale(cfg))


def sin_count(ann_acts: dict, trace: SimTrace, skip: int | None = None) -> dict:
    """Spikes of inactivated neurons: per layer, how many neurons have ANN
    activation exactly 0 but at least one SNN spike.

    Counts spikes over the same period window the decoders read (warm-up
    periods, which decoding discards, are excluded in bsnn mode by default);
    pass ``skip=0`` to count over the whole run.
    """
    counts = {}
    for point, entry in trace.units.items():
        if point.endswith(".sn"):
            continue  # synchronous units have no ANN counterpart
        if point not in ann_acts:
            raise ValidationError(f"activation record has no point {point!r}")
        acts = np.asarray(ann_acts[point])
        first, _ = _window(trace, entry["warmup"], skip)
        spikes = entry["period_spikes"][first:].sum(axis=0)
        if acts.shape != spikes.shape:
            raise ValidationError(
                f"layer {point!r}: ANN shape {acts.shape} != SNN shape {spikes.shape}"
            )
        counts[point] = int(np.sum((acts == 0) & (spikes >= 1)))
    return counts


def conservation_residual(trace: SimTrace) -> float:
    """Max per-neuron deviation from sum_t S_t V_th d_t = sum_t I_t - V_T."""
    worst = 0.0
    for entry in trace.units.values():
        for side in ("A", "B"):
            if f"ws_{side}" not in entry:
                continue
            res = np.abs(
                entry[f"ws_{side}"] + entry[f"V_{side}"] - entry[f"in_{side}"]
            )
            if res.size:
                worst = max(worst, float(res.max()))
    return worst
