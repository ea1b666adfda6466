"""Residual feedforward score network with early-exit execution.

Two topologies share one block type:

* ``stack``: embed -> blocks 1..N -> head.  Early exit at ``S`` runs blocks
  ``1..S`` and jumps straight to the head.
* ``u_skip``: embed -> encoder blocks (each output kept as a skip) -> mid
  block -> decoder blocks -> head.  Decoder block ``i`` first merges
  ``concat(hidden, skip)`` with a linear map, then runs its feedforward.
  Early exit at ``S`` keeps decoder blocks ``1..S`` (nearest the mid block)
  and reduces the rest to their merge map only.

A block is ``h + fc2(silu(fc1(layernorm(h) + shift(temb))))``, where
``temb`` is a fixed sinusoidal embedding of ``u = t / T``.  The head reads
``layernorm(h)`` plus a linear map of the raw input, so predictions can grow
with ``x`` far from the training data instead of saturating.

Gradients are computed by hand-written reverse mode over the cached forward
pass.  ``exit_blocks`` may be a scalar or a per-row integer array, so one
batch can mix depths.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, ContractError

LN_EPS = 1e-5

TOPOLOGIES = ("stack", "u_skip")


@dataclass(frozen=True)
class NetworkConfig:
    """Shape of a :class:`ScoreNetwork`.

    For ``u_skip`` ``n_blocks`` counts encoder + mid + decoder and must be
    odd, e.g. 13 for a 6-1-6 layout.
    """

    topology: str = "stack"
    n_blocks: int = 8
    width: int = 64
    in_dim: int = 2
    time_embed_dim: int = 32
    ff_mult: int = 2
    learned_variance: bool = False
    T: int = 1000

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigurationError(f"unknown topology {self.topology!r}")
        for name in ("n_blocks", "width", "in_dim", "time_embed_dim", "ff_mult", "T"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"{name} must be an integer >= 1, got {value!r}")
        if self.time_embed_dim % 2:
            raise ConfigurationError("time_embed_dim must be even")
        if self.topology == "u_skip" and (self.n_blocks < 3 or self.n_blocks % 2 == 0):
            raise ConfigurationError(
                "u_skip needs an odd n_blocks >= 3 (equal encoder and decoder halves)")

    @property
    def n_encoder(self) -> int:
        return (self.n_blocks - 1) // 2 if self.topology == "u_skip" else 0

    @property
    def n_decoder(self) -> int:
        return self.n_encoder

    @property
    def max_exit(self) -> int:
        """Largest valid exit depth (N for stack, n_decoder for u_skip)."""
        return self.n_blocks if self.topology == "stack" else self.n_decoder

    @property
    def hidden(self) -> int:
        return self.width * self.ff_mult

    @property
    def out_dim(self) -> int:
        return self.in_dim * (2 if self.learned_variance else 1)

    def to_dict(self) -> dict:
        return asdict(self)


def _block_shapes(cfg: NetworkConfig, prefix: str, merge: bool = False):
    w, e, hdn = cfg.width, cfg.time_embed_dim, cfg.hidden
    shapes = []
    if merge:
        shapes += [(f"{prefix}.merge.w", (2 * w, w)), (f"{prefix}.merge.b", (w,))]
    shapes += [
        (f"{prefix}.ln.g", (w,)), (f"{prefix}.ln.b", (w,)),
        (f"{prefix}.shift.w", (e, w)), (f"{prefix}.shift.b", (w,)),
        (f"{prefix}.fc1.w", (w, hdn)), (f"{prefix}.fc1.b", (hdn,)),
        (f"{prefix}.fc2.w", (hdn, w)), (f"{prefix}.fc2.b", (w,)),
    ]
    return shapes


def param_shapes(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered ``(name, shape)`` list; the order is the serialization order."""
    w, e = cfg.width, cfg.time_embed_dim
    shapes = [("embed.w_x", (cfg.in_dim, w)), ("embed.w_t", (e, w)), ("embed.b", (w,))]
    if cfg.topology == "stack":
        for l in range(cfg.n_blocks):
            shapes += _block_shapes(cfg, f"blocks.{l}")
    else:
        for i in range(cfg.n_encoder):
            shapes += _block_shapes(cfg, f"enc.{i}")
        shapes += _block_shapes(cfg, "mid")
        for i in range(cfg.n_decoder):
            shapes += _block_shapes(cfg, f"dec.{i}", merge=True)
    shapes += [("head.ln.g", (w,)), ("head.ln.b", (w,)),
               ("head.w", (w, cfg.out_dim)), ("head.b", (cfg.out_dim,)),
               ("head.w_x", (cfg.in_dim, cfg.out_dim))]
    return shapes


def time_embedding(t, T: int, dim: int) -> np.ndarray:
    """Sinusoidal features of ``u = t / T``, frequencies geometric in [1, 1000]."""
    u = np.asarray(t, dtype=np.float64).reshape(-1, 1) / T
    freqs = np.exp(np.linspace(0.0, np.log(1000.0), dim // 2))
    arg = u * freqs
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _ln_forward(h, g, b):
    mu = h.mean(axis=1, keepdims=True)
    xc = h - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _ln_backward(dy, g, cache, grads, prefix):
    xhat, inv = cache
    grads[prefix + ".g"] += (dy * xhat).sum(axis=0)
    grads[prefix + ".b"] += dy.sum(axis=0)
    dx = dy * g
    return inv * (dx - dx.mean(axis=1, keepdims=True)
                  - xhat * (dx * xhat).mean(axis=1, keepdims=True))


class ScoreNetwork:
    """Parameters plus forward/backward for one :class:`NetworkConfig`.

    ``params`` is an insertion-ordered dict of arrays sharing one dtype;
    float64 by default, float32 for faster toy training and sampling.
    """

    def __init__(self, config: NetworkConfig, params: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if [n for n, _ in expected] != list(params):
            raise ConfigurationError("parameter names do not match the configuration")
        for name, shape in expected:
            if params[name].shape != shape:
                raise ConfigurationError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = params

    @property
    def learned_variance(self) -> bool:
        return self.config.learned_variance

    @property
    def max_exit(self) -> int:
        return self.config.max_exit

    @property
    def in_dim(self) -> int:
        return self.config.in_dim

    @property
    def dtype(self):
        return self.params["embed.b"].dtype

    def astype(self, dtype) -> "ScoreNetwork":
        """Copy with parameters (and hence all network math) in ``dtype``."""
        return ScoreNetwork(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ScoreNetwork":
        return ScoreNetwork(self.config, {k: v.copy() for k, v in self.params.items()})

    # -- forward -----------------------------------------------------------

    def _exit_rows(self, exit_blocks, batch):
        limit = self.config.max_exit
        if exit_blocks is None:
            return None
        s = np.asarray(exit_blocks)
        if np.any(s < 1) or np.any(s > limit):
            raise ContractError(f"exit depth must lie in [1, {limit}]")
        if s.ndim == 0:
            return None if int(s) == limit else np.full(batch, int(s))
        if s.shape != (batch,):
            raise ContractError("per-row exit depths must have one entry per row")
        return None if np.all(s == limit) else s.astype(np.int64)

    def _block_forward(self, prefix, h, temb):
        p = self.params
        y, ln_cache = _ln_forward(h, p[prefix + ".ln.g"], p[prefix + ".ln.b"])
        z = y + (temb @ p[prefix + ".shift.w"] + p[prefix + ".shift.b"])
        a = z @ p[prefix + ".fc1.w"] + p[prefix + ".fc1.b"]
        sig = _sigmoid(a)
        s = a * sig
        out = h + (s @ p[prefix + ".fc2.w"] + p[prefix + ".fc2.b"])
        return out, (ln_cache, temb, z, a, sig, s)

    def _block_backward(self, prefix, dout, cache, grads):
        p = self.params
        ln_cache, temb, z, a, sig, s = cache
        grads[prefix + ".fc2.w"] += s.T @ dout
        grads[prefix + ".fc2.b"] += dout.sum(axis=0)
        da = (dout @ p[prefix + ".fc2.w"].T) * (sig * (1.0 + a * (1.0 - sig)))
        grads[prefix + ".fc1.w"] += z.T @ da
        grads[prefix + ".fc1.b"] += da.sum(axis=0)
        dz = da @ p[prefix + ".fc1.w"].T
        grads[prefix + ".shift.w"] += temb.T @ dz
        grads[prefix + ".shift.b"] += dz.sum(axis=0)
        return dout + _ln_backward(dz, p[prefix + ".ln.g"], ln_cache, grads, prefix + ".ln")

    def _run_block(self, prefix, h, temb, rows, trace):
        """Apply a block to all rows (``rows is None``) or a row subset."""
        if rows is None:
            h, cache = self._block_forward(prefix, h, temb)
        else:
            h = h.copy()
            sub, cache = self._block_forward(prefix, h[rows], temb[rows])
            h[rows] = sub
        trace.append(("block", prefix, rows, cache))
        return h

    def _merge(self, prefix, h, skip, trace):
        c = np.concatenate([h, skip], axis=1)
        trace.append(("merge", prefix, c))
        return c @ self.params[prefix + ".merge.w"] + self.params[prefix + ".merge.b"]

    def forward(self, x, t, exit_blocks=None, keep_cache=False):
        """Predict noise (and variance interpolation when configured).

        Args:
            x: ``(batch, in_dim)`` noisy inputs.
            t: integer steps, scalar or ``(batch,)``.
            exit_blocks: retained depth ``S`` (scalar or per row); ``None``
                runs the full network.
            keep_cache: also return the tape needed by :meth:`backward`.

        Returns:
            ``eps`` or ``(eps, v)``; with ``keep_cache`` a trailing cache.
        """
        cfg, p = self.config, self.params
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != cfg.in_dim:
            raise ContractError(f"expected input of shape (batch, {cfg.in_dim}), got {x.shape}")
        batch = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (batch,))
        s_rows = self._exit_rows(exit_blocks, batch)
        temb = time_embedding(t, cfg.T, cfg.time_embed_dim).astype(self.dtype, copy=False)
        h = x @ p["embed.w_x"] + temb @ p["embed.w_t"] + p["embed.b"]
        trace = []

        def active(depth):
            if s_rows is None:
                return None
            rows = np.flatnonzero(s_rows >= depth)
            return None if rows.size == batch else rows

        if cfg.topology == "stack":
            for l in range(cfg.n_blocks):
                rows = active(l + 1)
                if rows is not None and rows.size == 0:
                    break
                h = self._run_block(f"blocks.{l}", h, temb, rows, trace)
        else:
            skips = []
            for i in range(cfg.n_encoder):
                h = self._run_block(f"enc.{i}", h, temb, None, trace)
                skips.append(h)
            h = self._run_block("mid", h, temb, None, trace)
            for i in range(cfg.n_decoder):
                h = self._merge(f"dec.{i}", h, skips[cfg.n_encoder - 1 - i], trace)
                rows = active(i + 1)
                if rows is None or rows.size:
                    h = self._run_block(f"dec.{i}", h, temb, rows, trace)

        y, ln_cache = _ln_forward(h, p["head.ln.g"], p["head.ln.b"])
        # linear input skip: keeps eps ~ x reachable far outside the data
        out = y @ p["head.w"] + x @ p["head.w_x"] + p["head.b"]
        eps = out[:, :cfg.in_dim]
        v = _sigmoid(out[:, cfg.in_dim:]) if cfg.learned_variance else None
        result = (eps, v) if cfg.learned_variance else eps
        if keep_cache:
            return result, (x, temb, trace, y, ln_cache, v)
        return result

    def predict(self, x, t, exit_blocks=None):
        """Noise prediction only (drops the variance output)."""
        out = self.forward(x, t, exit_blocks)
        return out[0] if self.config.learned_variance else out

    # -- backward ----------------------------------------------------------

    def backward(self, cache, d_eps, d_v=None) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given its derivatives w.r.t. the outputs."""
        cfg, p = self.config, self.params
        x, temb, trace, y, ln_cache, v = cache
        grads = {k: np.zeros_like(val) for k, val in p.items()}
        d_out = d_eps
        if cfg.learned_variance:
            d_raw = np.zeros_like(d_eps) if d_v is None else d_v * v * (1.0 - v)
            d_out = np.concatenate([d_eps, d_raw], axis=1)
        grads["head.w"] += y.T @ d_out
        grads["head.b"] += d_out.sum(axis=0)
        grads["head.w_x"] += x.T @ d_out
        dh = _ln_backward(d_out @ p["head.w"].T, p["head.ln.g"], ln_cache, grads, "head.ln")

        d_skips = {}
        for entry in reversed(trace):
            if entry[0] == "merge":
                _, prefix, c = entry
                grads[prefix + ".merge.w"] += c.T @ dh
                grads[prefix + ".merge.b"] += dh.sum(axis=0)
                dc = dh @ p[prefix + ".merge.w"].T
                i = int(prefix.split(".")[1])
                d_skips[cfg.n_encoder - 1 - i] = dc[:, cfg.width:]
                dh = dc[:, :cfg.width]
                continue
            _, prefix, rows, cache_b = entry
            if prefix.startswith("enc."):
                dh = dh + d_skips.pop(int(prefix.split(".")[1]))
            if rows is None:
                dh = self._block_backward(prefix, dh, cache_b, grads)
            else:
                dh = dh.copy()
                dh[rows] = self._block_backward(prefix, dh[rows], cache_b, grads)

        grads["embed.w_x"] += x.T @ dh
        grads["embed.w_t"] += temb.T @ dh
        grads["embed.b"] += dh.sum(axis=0)
        return grads

    # -- cost --------------------------------------------------------------

    def flop_count(self, exit_blocks=None) -> int:
        """Multiply-accumulates of the linear maps in one forward, per sample.

        Normalization, activations and bias adds are not counted.
        """
        cfg = self.config
        s = cfg.max_exit if exit_blocks is None else int(exit_blocks)
        if not 1 <= s <= cfg.max_exit:
            raise ContractError(f"exit depth must lie in [1, {cfg.max_exit}]")
        w, e = cfg.width, cfg.time_embed_dim
        embed = cfg.in_dim * w + e * w
        block = e * w + 2 * w * cfg.hidden
        head = (w + cfg.in_dim) * cfg.out_dim
        if cfg.topology == "stack":
            return embed + s * block + head
        merge = 2 * w * w
        return embed + (cfg.n_encoder + 1 + s) * block + cfg.n_decoder * merge + head


def init_network(config: NetworkConfig, seed: int, dtype=np.float64) -> ScoreNetwork:
    """Fan-in uniform weights, zero biases, unit norm gains, zero output head.

    The zero head makes a fresh network predict ``eps = 0``.  Values are
    drawn in float64 and then cast, so the dtype does not change the draw.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    params = {}
    for name, shape in param_shapes(config):
        leaf = name.rsplit(".", 1)[-1]
        if name.startswith("head.") and name != "head.ln.g":
            params[name] = np.zeros(shape)
        elif name.endswith(".ln.g"):
            params[name] = np.ones(shape)
        elif leaf.startswith("w"):
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    net = ScoreNetwork(config, params)
    return net if np.dtype(dtype) == np.float64 else net.astype(dtype)


def forward_full(net: ScoreNetwork, x, t):
    return net.forward(x, t)


def forward_early_exit(net: ScoreNetwork, x, t, exit_blocks):
    if exit_blocks is None:
        raise ContractError("exit_blocks is required for early exit")
    return net.forward(x, t, exit_blocks)


def param_gradients(net: ScoreNetwork, x, t, loss_fn, exit_blocks=None):
    """Exact parameter gradients of ``loss_fn`` applied to the network output.

    ``loss_fn(eps, v)`` returns ``(loss, d_eps, d_v)``; ``v`` and ``d_v`` are
    ``None`` without a learned variance.

    Returns:
        ``(loss, grads)`` with ``grads`` keyed like ``net.params``.
    """
    out, cache = net.forward(x, t, exit_blocks, keep_cache=True)
    eps, v = out if net.learned_variance else (out, None)
    loss, d_eps, d_v = loss_fn(eps, v)
    return loss, net.backward(cache, d_eps, d_v)


def flop_count(net: ScoreNetwork, exit_blocks=None) -> int:
    return net.flop_count(exit_blocks)
