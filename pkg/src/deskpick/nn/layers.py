"""Layer specs, sequential networks, conv/deconv ops, initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .tensor import Tensor, ShapeError
from .params import ParamStore

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "identity")
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class LayerSpec:
    """Geometry and activation of one layer.

    kind "dense"    -> geometry {"in": fan_in, "out": fan_out}
    kind "conv2d"   -> geometry {"in_ch", "out_ch", "kernel", "stride", "padding"}
    kind "deconv2d" -> same keys as conv2d, producing the mirrored upsampling
    kind "flatten"  -> no geometry
    kind "unflatten"-> geometry {"shape": (C, H, W)}
    """
    kind: str
    activation: str = "identity"
    geometry: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("dense", "conv2d", "deconv2d", "flatten", "unflatten"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self):
        d = asdict(self)
        g = dict(d["geometry"])
        if "shape" in g:
            g["shape"] = list(g["shape"])
        d["geometry"] = g
        return d

    @staticmethod
    def from_dict(d):
        g = dict(d["geometry"])
        if "shape" in g:
            g["shape"] = tuple(g["shape"])
        return LayerSpec(d["kind"], d["activation"], g)


def dense(fan_in, fan_out, activation="identity"):
    return LayerSpec("dense", activation, {"in": int(fan_in), "out": int(fan_out)})


def conv2d(in_ch, out_ch, kernel, stride, padding, activation="identity"):
    return LayerSpec("conv2d", activation,
                     {"in_ch": int(in_ch), "out_ch": int(out_ch), "kernel": int(kernel),
                      "stride": int(stride), "padding": int(padding)})


def deconv2d(in_ch, out_ch, kernel, stride, padding, activation="identity"):
    return LayerSpec("deconv2d", activation,
                     {"in_ch": int(in_ch), "out_ch": int(out_ch), "kernel": int(kernel),
                      "stride": int(stride), "padding": int(padding)})


def flatten():
    return LayerSpec("flatten")


def unflatten(shape):
    return LayerSpec("unflatten", "identity", {"shape": tuple(int(s) for s in shape)})


def _out_hw(h, w, k, s, p):
    if (h + 2 * p - k) % s != 0 or (w + 2 * p - k) % s != 0:
        raise ShapeError(f"conv geometry does not tile: input {h}x{w}, kernel {k}, "
                         f"stride {s}, padding {p}")
    return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def _deconv_out_hw(h, w, k, s, p):
    return (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k


def layer_output_shape(spec: LayerSpec, in_shape: tuple) -> tuple:
    g = spec.geometry
    if spec.kind == "dense":
        if len(in_shape) != 1 or in_shape[0] != g["in"]:
            raise ShapeError(f"dense expects ({g['in']},), got {in_shape}")
        return (g["out"],)
    if spec.kind == "conv2d":
        if len(in_shape) != 3 or in_shape[0] != g["in_ch"]:
            raise ShapeError(f"conv2d expects ({g['in_ch']}, H, W), got {in_shape}")
        oh, ow = _out_hw(in_shape[1], in_shape[2], g["kernel"], g["stride"], g["padding"])
        return (g["out_ch"], oh, ow)
    if spec.kind == "deconv2d":
        if len(in_shape) != 3 or in_shape[0] != g["in_ch"]:
            raise ShapeError(f"deconv2d expects ({g['in_ch']}, H, W), got {in_shape}")
        oh, ow = _deconv_out_hw(in_shape[1], in_shape[2], g["kernel"], g["stride"], g["padding"])
        return (g["out_ch"], oh, ow)
    if spec.kind == "flatten":
        return (int(np.prod(in_shape)),)
    if spec.kind == "unflatten":
        shape = g["shape"]
        if int(np.prod(in_shape)) != int(np.prod(shape)):
            raise ShapeError(f"unflatten: {in_shape} has {np.prod(in_shape)} entries, "
                             f"target {shape} needs {np.prod(shape)}")
        return tuple(shape)
    raise AssertionError(spec.kind)


# -- conv plumbing ---------------------------------------------------------

def _pad_nchw(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(xp, k, s, oh, ow):
    """(N, C, Hp, Wp) -> (N*OH*OW, C*k*k), copying k*k strided views."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * k * k)


def _col2im(cols, n, c, hp, wp, k, s, oh, ow):
    """Scatter-add (N*OH*OW, C*k*k) back to (N, C, Hp, Wp)."""
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(n, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += cols6[:, :, ki, kj]
    return xp


def conv2d_op(x: Tensor, w: Tensor, b: Tensor, stride: int, padding: int) -> Tensor:
    """Batched 2-D convolution, channels-first. w: (Cout, Cin, k, k)."""
    n, c, h, wd = x.shape
    cout, cin, k, _ = w.shape
    oh, ow = _out_hw(h, wd, k, stride, padding)
    xp = _pad_nchw(x.data, padding)
    cols = _im2col(xp, k, stride, oh, ow)
    wmat = w.data.reshape(cout, cin * k * k)
    out2 = cols @ wmat.T + b.data[None, :]
    out = Tensor(out2.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))
    out.requires_grad = x.requires_grad or w.requires_grad or b.requires_grad
    if not out.requires_grad:
        return out
    out._parents = (x, w, b)
    hp, wp = xp.shape[2], xp.shape[3]

    def bwd(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, cout)
        if w.requires_grad:
            w._accumulate((g2.T @ cols).reshape(w.data.shape))
        if b.requires_grad:
            b._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            dxp = _col2im(g2 @ wmat, n, c, hp, wp, k, stride, oh, ow)
            dx = dxp if padding == 0 else dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dx)

    out._backward = bwd
    return out


def deconv2d_op(x: Tensor, w: Tensor, b: Tensor, stride: int, padding: int) -> Tensor:
    """Transposed convolution (conv gradient wrt input). w: (Cin, Cout, k, k)."""
    n, cin, h, wd = x.shape
    _, cout, k, _ = w.shape
    oh, ow = _deconv_out_hw(h, wd, k, stride, padding)
    hp, wp = oh + 2 * padding, ow + 2 * padding
    wmat = w.data.reshape(cin, cout * k * k)
    x2 = x.data.transpose(0, 2, 3, 1).reshape(n * h * wd, cin)
    outp = _col2im(x2 @ wmat, n, cout, hp, wp, k, stride, h, wd)
    outc = outp if padding == 0 else outp[:, :, padding:-padding, padding:-padding]
    out = Tensor(outc + b.data[None, :, None, None])
    out.requires_grad = x.requires_grad or w.requires_grad or b.requires_grad
    if not out.requires_grad:
        return out
    out._parents = (x, w, b)

    def bwd(g):
        gp = _pad_nchw(g, padding)
        gcols = _im2col(gp, k, stride, h, wd)
        if x.requires_grad:
            x._accumulate((gcols @ wmat.T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2))
        if w.requires_grad:
            w._accumulate((x2.T @ gcols).reshape(w.data.shape))
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    out._backward = bwd
    return out


# -- network ---------------------------------------------------------------

def _init_weight(rng, spec: LayerSpec, shape, fan_in, fan_out, dtype):
    if spec.activation in ("relu", "leaky_relu"):
        bound = math.sqrt(6.0 / fan_in)
    else:
        bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Network:
    """Sequential net over a ParamStore; validates shapes at every layer."""

    def __init__(self, layers, input_shape, *, rng=None, store=None, prefix="net",
                 dtype=np.float64):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.prefix = prefix
        self.store = store if store is not None else ParamStore()
        self._param_names = []
        shape = self.input_shape
        self.layer_shapes = [shape]
        for i, spec in enumerate(self.layers):
            shape = layer_output_shape(spec, shape)
            self.layer_shapes.append(shape)
            g = spec.geometry
            names = {}
            if spec.kind == "dense":
                fin, fout = g["in"], g["out"]
                if rng is None:
                    raise ValueError("rng required to initialize parameters")
                w = _init_weight(rng, spec, (fin, fout), fin, fout, self.dtype)
                names["w"] = self.store.add(f"{prefix}.{i}.w", w)
                names["b"] = self.store.add(f"{prefix}.{i}.b", np.zeros(fout, self.dtype))
            elif spec.kind == "conv2d":
                k, cin, cout = g["kernel"], g["in_ch"], g["out_ch"]
                fan_in = cin * k * k
                fan_out = cout * k * k
                w = _init_weight(rng, spec, (cout, cin, k, k), fan_in, fan_out, self.dtype)
                names["w"] = self.store.add(f"{prefix}.{i}.w", w)
                names["b"] = self.store.add(f"{prefix}.{i}.b", np.zeros(cout, self.dtype))
            elif spec.kind == "deconv2d":
                k, cin, cout = g["kernel"], g["in_ch"], g["out_ch"]
                fan_in = cin * k * k
                fan_out = cout * k * k
                w = _init_weight(rng, spec, (cin, cout, k, k), fan_in, fan_out, self.dtype)
                names["w"] = self.store.add(f"{prefix}.{i}.w", w)
                names["b"] = self.store.add(f"{prefix}.{i}.b", np.zeros(cout, self.dtype))
            self._param_names.append(names)
        self.output_shape = shape

    def _check_input(self, arr):
        if arr.shape[1:] != self.input_shape:
            raise ShapeError(f"{self.prefix}: layer 0 ({self.layers[0].kind}) expected "
                             f"per-sample shape {self.input_shape}, got {arr.shape[1:]}")

    def forward(self, x, final_activation=True) -> Tensor:
        """Batched forward; input (N, *input_shape). Records the graph when
        the input or any parameter requires grad. final_activation=False
        skips the last layer's nonlinearity (pre-activation fitting)."""
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if t.data.ndim == len(self.input_shape):
            t = t.reshape((1,) + t.shape)
        self._check_input(t.data)
        for i, spec in enumerate(self.layers):
            expected = self.layer_shapes[i]
            if t.data.shape[1:] != expected:
                raise ShapeError(f"{self.prefix}: layer {i} ({spec.kind}) expected "
                                 f"per-sample shape {expected}, got {t.data.shape[1:]}")
            names = self._param_names[i]
            if spec.kind == "dense":
                t = t.matmul(names["w"]).add_row(names["b"])
            elif spec.kind == "conv2d":
                t = conv2d_op(t, names["w"], names["b"],
                              spec.geometry["stride"], spec.geometry["padding"])
            elif spec.kind == "deconv2d":
                t = deconv2d_op(t, names["w"], names["b"],
                                spec.geometry["stride"], spec.geometry["padding"])
            elif spec.kind == "flatten":
                t = t.reshape((t.shape[0], -1))
            elif spec.kind == "unflatten":
                t = t.reshape((t.shape[0],) + spec.geometry["shape"])
            if final_activation or i < len(self.layers) - 1:
                t = t.activate(spec.activation, LEAKY_SLOPE)
        return t

    __call__ = forward

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Inference path: no graph, minimal overhead."""
        a = np.asarray(x, dtype=self.dtype)
        squeeze = a.ndim == len(self.input_shape)
        if squeeze:
            a = a[None]
        self._check_input(a)
        for i, spec in enumerate(self.layers):
            names = self._param_names[i]
            g = spec.geometry
            if spec.kind == "dense":
                a = a @ names["w"].data + names["b"].data
            elif spec.kind == "conv2d":
                n, c, h, wd = a.shape
                k, s, p = g["kernel"], g["stride"], g["padding"]
                oh, ow = _out_hw(h, wd, k, s, p)
                cols = _im2col(_pad_nchw(a, p), k, s, oh, ow)
                wmat = names["w"].data.reshape(g["out_ch"], -1)
                a = (cols @ wmat.T + names["b"].data[None, :]) \
                    .reshape(n, oh, ow, g["out_ch"]).transpose(0, 3, 1, 2)
            elif spec.kind == "deconv2d":
                out = deconv2d_op(Tensor(a), names["w"], names["b"], g["stride"], g["padding"])
                a = out.data
            elif spec.kind == "flatten":
                a = a.reshape(a.shape[0], -1)
            elif spec.kind == "unflatten":
                a = a.reshape((a.shape[0],) + g["shape"])
            if spec.activation == "relu":
                a = np.maximum(a, 0.0)
            elif spec.activation == "leaky_relu":
                a = np.where(a > 0, a, LEAKY_SLOPE * a)
            elif spec.activation == "tanh":
                a = np.tanh(a)
        return a[0] if squeeze else a

    def jvp(self, x: np.ndarray, tangents: dict[str, np.ndarray]) -> np.ndarray:
        """Forward-mode directional derivative of the output wrt parameters,
        for dense-only networks. `tangents` maps parameter name -> array of
        the same shape; missing entries count as zero."""
        a = np.asarray(x, dtype=self.dtype)
        if a.ndim == 1:
            a = a[None]
        da = np.zeros_like(a)
        for i, spec in enumerate(self.layers):
            if spec.kind != "dense":
                raise ValueError("jvp supports dense-only networks")
            names = self._param_names[i]
            w, b = names["w"].data, names["b"].data
            dw = tangents.get(f"{self.prefix}.{i}.w")
            db = tangents.get(f"{self.prefix}.{i}.b")
            pre = a @ w + b
            dpre = da @ w
            if dw is not None:
                dpre = dpre + a @ dw
            if db is not None:
                dpre = dpre + db[None, :]
            if spec.activation == "relu":
                a = np.maximum(pre, 0.0)
                da = np.where(pre > 0, dpre, 0.0)
            elif spec.activation == "leaky_relu":
                a = np.where(pre > 0, pre, LEAKY_SLOPE * pre)
                da = np.where(pre > 0, dpre, LEAKY_SLOPE * dpre)
            elif spec.activation == "tanh":
                a = np.tanh(pre)
                da = (1.0 - a * a) * dpre
            else:
                a = pre
                da = dpre
        return da

    def arch_dict(self):
        return {"layers": [s.to_dict() for s in self.layers],
                "input_shape": list(self.input_shape),
                "prefix": self.prefix,
                "dtype": self.dtype.str}

    @staticmethod
    def from_arch(arch, *, store=None, rng=None):
        layers = [LayerSpec.from_dict(d) for d in arch["layers"]]
        rng = rng if rng is not None else np.random.default_rng(0)
        return Network(layers, tuple(arch["input_shape"]), rng=rng, store=store,
                       prefix=arch["prefix"], dtype=np.dtype(arch["dtype"]))
