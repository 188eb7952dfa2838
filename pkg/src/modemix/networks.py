"""Model graphs: style and mode mapping networks, the K-root constant
bank with its blending/multiplexing layer, the AdaIN synthesis network,
and the mirrored discriminator with optional K-way classifier head.

Parameters live in flat name->Tensor dicts.  Weight tensors are stored
N(0,1)-initialized and rescaled by 1/sqrt(fan_in) at run time when
``equalized_lr`` is on (otherwise the scale is folded in at init).
Each component draws its initial values from an independent seeded
stream, so a K=1 build with the mode path removed shares every
remaining parameter bit-for-bit with the full build.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import (add_scaled_noise, as_tensor, conv1x1, conv2d, instance_norm,
                  leaky_relu, linear, matmul, modulate, normalize_latent,
                  reshape, softmax, upsample2x, downsample2x)
from .rng import Rng, derive_seed
from .tensor import Tensor, TensorError

BASE_RESOLUTION = 4


@dataclass(frozen=True)
class ArchConfig:
    """Shapes of the whole model family.

    ``channels`` gives the feature width at 4x4, 8x8, ... up to the
    target resolution (one entry per level).
    """
    k: int = 1
    latent_dim: int = 64
    target_resolution: int = 32
    channels: tuple[int, ...] = (128, 128, 64, 32)
    img_channels: int = 1
    mapping_depth: int = 4
    mode_depth: int = 4
    supervised: bool = False
    equalized_lr: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise TensorError("k must be >= 1")
        res, levels = BASE_RESOLUTION, 0
        while res < self.target_resolution:
            res *= 2
            levels += 1
        if res != self.target_resolution:
            raise TensorError(
                f"target_resolution {self.target_resolution} is not "
                f"{BASE_RESOLUTION}*2^L")
        if len(self.channels) != levels + 1:
            raise TensorError(
                f"channel schedule needs {levels + 1} entries for "
                f"{self.target_resolution}x{self.target_resolution}, "
                f"got {len(self.channels)}")
        if self.mode_depth < 1 or self.mapping_depth < 0:
            raise TensorError("mapping depths out of range")
        if self.latent_dim < 1 or self.img_channels < 1:
            raise TensorError("invalid dimensions")

    @property
    def levels(self) -> int:
        return len(self.channels) - 1

    @property
    def n_adain_sites(self) -> int:
        return 2 * (self.levels + 1)

    def resolution_of(self, block: int) -> int:
        return BASE_RESOLUTION * (2 ** block)


class _Params:
    """Flat parameter table plus per-weight runtime scales."""

    def __init__(self):
        self.tensors: dict[str, Tensor] = {}
        self.scales: dict[str, float] = {}

    def register(self, name: str, data: np.ndarray, scale: float = 1.0):
        t = Tensor(data, requires_grad=True)
        self.tensors[name] = t
        self.scales[name] = scale
        return t


def _init_weight(p: _Params, rng: Rng, name: str, shape, fan_in: int,
                 equalized: bool, zero: bool = False):
    gain = 1.0 / np.sqrt(fan_in)
    if zero:
        data = np.zeros(shape)
        p.register(name, data, 1.0)
    elif equalized:
        p.register(name, rng.normal(shape), gain)
    else:
        p.register(name, rng.normal(shape) * gain, 1.0)


class GeneratorBundle:
    """Generator parameters plus an EMA shadow used for sampling."""

    def __init__(self, config: ArchConfig, params: _Params,
                 has_mode_mapper: bool):
        self.config = config
        self.params = params.tensors
        self.scales = params.scales
        self.has_mode_mapper = has_mode_mapper
        self.ema = {k: t.data.copy() for k, t in self.params.items()}
        self._ema_tensors = {k: Tensor(v) for k, v in self.ema.items()}

    def view(self, use_ema: bool) -> dict[str, Tensor]:
        return self._ema_tensors if use_ema else self.params

    def scale(self, name: str) -> float:
        return self.scales[name]

    def ema_update(self, decay: float):
        for k, t in self.params.items():
            shadow = self.ema[k]
            shadow *= decay
            shadow += (1.0 - decay) * t.data

    def ema_reset(self):
        for k, t in self.params.items():
            self.ema[k][...] = t.data

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())


class Discriminator:
    def __init__(self, config: ArchConfig, params: _Params):
        self.config = config
        self.params = params.tensors
        self.scales = params.scales

    def scale(self, name: str) -> float:
        return self.scales[name]

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def _build_generator_params(cfg: ArchConfig, seed: int,
                            with_mode_mapper: bool) -> _Params:
    p = _Params()
    d = cfg.latent_dim
    eq = cfg.equalized_lr

    rng = Rng(derive_seed(seed, "style_mapper"))
    for i in range(cfg.mapping_depth):
        _init_weight(p, rng, f"map.{i}.w", (d, d), d, eq)
        p.register(f"map.{i}.b", np.zeros(d))

    rng = Rng(derive_seed(seed, "synthesis"))
    for i in range(cfg.levels + 1):
        cin = cfg.channels[i - 1] if i > 0 else cfg.channels[0]
        cout = cfg.channels[i]
        for j in range(2):
            _init_weight(p, rng, f"b{i}.conv{j}.w", (cout, cin, 3, 3),
                         cin * 9, eq)
            p.register(f"b{i}.conv{j}.b", np.zeros(cout))
            p.register(f"b{i}.noise{j}", np.zeros(cout))
            _init_weight(p, rng, f"b{i}.adain{j}.w", (d, 2 * cout), d, eq)
            p.register(f"b{i}.adain{j}.b", np.zeros(2 * cout))
            cin = cout
    _init_weight(p, rng, "out.w", (cfg.channels[-1], cfg.img_channels),
                 cfg.channels[-1], eq)
    p.register("out.b", np.zeros(cfg.img_channels))

    # Roots start at the all-ones constant plus a small per-constant
    # jitter (std 0.1) so the K constants can differentiate.
    rng = Rng(derive_seed(seed, "roots"))
    c0 = cfg.channels[0]
    roots = np.ones((cfg.k, c0, BASE_RESOLUTION, BASE_RESOLUTION))
    roots += 0.1 * rng.normal(roots.shape)
    p.register("roots", roots)

    if with_mode_mapper:
        rng = Rng(derive_seed(seed, "mode_mapper"))
        for i in range(cfg.mode_depth - 1):
            _init_weight(p, rng, f"mode.{i}.w", (d, d), d, eq)
            p.register(f"mode.{i}.b", np.zeros(d))
        # Zero-init head: mixing starts uniform over the K roots.
        last = cfg.mode_depth - 1
        _init_weight(p, rng, f"mode.{last}.w", (d, cfg.k), d, eq, zero=True)
        p.register(f"mode.{last}.b", np.zeros(cfg.k))
    return p


def _build_discriminator_params(cfg: ArchConfig, seed: int) -> _Params:
    p = _Params()
    eq = cfg.equalized_lr
    rng = Rng(derive_seed(seed, "discriminator"))
    ch = cfg.channels
    lv = cfg.levels
    _init_weight(p, rng, "from.w", (cfg.img_channels, ch[lv]),
                 cfg.img_channels, eq)
    p.register("from.b", np.zeros(ch[lv]))
    for i in range(lv, 0, -1):
        _init_weight(p, rng, f"b{i}.conv.w", (ch[i - 1], ch[i], 3, 3),
                     ch[i] * 9, eq)
        p.register(f"b{i}.conv.b", np.zeros(ch[i - 1]))
    _init_weight(p, rng, "b0.conv.w", (ch[0], ch[0], 3, 3), ch[0] * 9, eq)
    p.register("b0.conv.b", np.zeros(ch[0]))
    flat = ch[0] * BASE_RESOLUTION * BASE_RESOLUTION
    _init_weight(p, rng, "dense0.w", (flat, ch[0]), flat, eq)
    p.register("dense0.b", np.zeros(ch[0]))
    _init_weight(p, rng, "dense1.w", (ch[0], 1), ch[0], eq)
    p.register("dense1.b", np.zeros(1))
    if cfg.supervised:
        _init_weight(p, rng, "cls.w", (ch[0], cfg.k), ch[0], eq)
        p.register("cls.b", np.zeros(cfg.k))
    return p


def build(config: ArchConfig, seed: int) -> tuple[GeneratorBundle, Discriminator]:
    """All networks, freshly initialized from the seed."""
    g = GeneratorBundle(config, _build_generator_params(config, seed, True),
                        has_mode_mapper=True)
    d = Discriminator(config, _build_discriminator_params(config, seed))
    return g, d


def build_single_constant(config: ArchConfig, seed: int) -> GeneratorBundle:
    """The classic single-constant style generator: no mode mapping
    network at all, one root constant fed straight to synthesis.

    Built from the same seed as :func:`build`, every shared parameter is
    bit-identical, which makes the K=1 equivalence checkable.
    """
    if config.k != 1:
        raise TensorError("single-constant build requires k == 1")
    return GeneratorBundle(config, _build_generator_params(config, seed, False),
                           has_mode_mapper=False)


# ---------------------------------------------------------------------------
# forward graphs (record on the active tape if any)
# ---------------------------------------------------------------------------

def map_style(z, bundle: GeneratorBundle, use_ema: bool = False) -> Tensor:
    """Latents [B,D] -> style vectors w [B,D]."""
    cfg = bundle.config
    p = bundle.view(use_ema)
    h = normalize_latent(as_tensor(z))
    for i in range(cfg.mapping_depth):
        h = leaky_relu(linear(h, p[f"map.{i}.w"], p[f"map.{i}.b"],
                              bundle.scale(f"map.{i}.w")))
    return h


def map_mode(z, bundle: GeneratorBundle, use_ema: bool = False) -> Tensor:
    """Latents [B,D] -> mode weights w_R [B,K] on the simplex."""
    cfg = bundle.config
    zt = as_tensor(z)
    if not bundle.has_mode_mapper:
        return Tensor(np.ones((zt.shape[0], 1)))
    p = bundle.view(use_ema)
    h = normalize_latent(zt)
    for i in range(cfg.mode_depth - 1):
        h = leaky_relu(linear(h, p[f"mode.{i}.w"], p[f"mode.{i}.b"],
                              bundle.scale(f"mode.{i}.w")))
    last = cfg.mode_depth - 1
    h = linear(h, p[f"mode.{last}.w"], p[f"mode.{last}.b"],
               bundle.scale(f"mode.{last}.w"))
    return softmax(h)


def blend_roots(bank, w_r) -> Tensor:
    """Convex combination of the K root constants: [B,K] x [K,C,4,4]
    -> [B,C,4,4]."""
    bank = as_tensor(bank)
    w_r = as_tensor(w_r)
    k = bank.shape[0]
    if w_r.data.ndim != 2 or w_r.shape[1] != k:
        raise TensorError(
            f"mode weights have length {w_r.data.shape[-1]}, bank has {k}")
    flat = reshape(bank, (k, -1))
    out = matmul(w_r, flat)
    return reshape(out, (w_r.shape[0],) + tuple(bank.shape[1:]))


def select_root(bank, w_m) -> Tensor:
    """Multiplexer: a strict one-hot picks one constant; equals
    blend_roots on the same vector bit-for-bit."""
    w = as_tensor(w_m)
    data = w.data if w.data.ndim == 2 else w.data[None, :]
    ones = data == 1.0
    if not (np.all((data == 0.0) | ones) and np.all(ones.sum(axis=1) == 1)):
        raise TensorError("mode selector must be one-hot")
    return blend_roots(bank, w if w.data.ndim == 2 else reshape(w, (1, -1)))


def adain(x: Tensor, w: Tensor, affine_w: Tensor, affine_b: Tensor,
          scale: float = 1.0) -> Tensor:
    """Instance-normalize x, then channel scale/shift derived from w."""
    sb = linear(w, affine_w, affine_b, scale)
    return modulate(instance_norm(x), sb)


def make_noise(cfg: ArchConfig, batch: int, rng: Rng) -> list[np.ndarray]:
    """Fresh per-site noise images [B,1,H,W], one per conv site."""
    out = []
    for i in range(cfg.levels + 1):
        r = cfg.resolution_of(i)
        for _ in range(2):
            out.append(rng.normal((batch, 1, r, r)))
    return out


def synthesize(bundle: GeneratorBundle, root_input: Tensor, w,
               noise: list[np.ndarray] | None = None,
               use_ema: bool = False) -> Tensor:
    """Root constant(s) [B,C0,4,4] -> image [B,img_channels,R,R].

    ``w`` is either one [B,D] style for every AdaIN site or a list with
    one style per site.  ``noise=None`` disables the noise inputs.
    """
    cfg = bundle.config
    p = bundle.view(use_ema)
    x = as_tensor(root_input)
    c0 = cfg.channels[0]
    if x.data.ndim != 4 or x.shape[1:] != (c0, BASE_RESOLUTION, BASE_RESOLUTION):
        raise TensorError(
            f"root input shape {x.shape} != (B,{c0},{BASE_RESOLUTION},"
            f"{BASE_RESOLUTION})")
    per_site = isinstance(w, (list, tuple))
    if per_site and len(w) != cfg.n_adain_sites:
        raise TensorError(
            f"need {cfg.n_adain_sites} per-site styles, got {len(w)}")
    site = 0
    for i in range(cfg.levels + 1):
        if i > 0:
            x = upsample2x(x)
        for j in range(2):
            x = conv2d(x, p[f"b{i}.conv{j}.w"], p[f"b{i}.conv{j}.b"],
                       bundle.scale(f"b{i}.conv{j}.w"))
            if noise is not None:
                x = add_scaled_noise(x, p[f"b{i}.noise{j}"], noise[site])
            x = leaky_relu(x)
            ws = as_tensor(w[site]) if per_site else as_tensor(w)
            x = adain(x, ws, p[f"b{i}.adain{j}.w"], p[f"b{i}.adain{j}.b"],
                      bundle.scale(f"b{i}.adain{j}.w"))
            site += 1
    return conv1x1(x, p["out.w"], p["out.b"], bundle.scale("out.w"))


def discriminate(x, disc: Discriminator) -> tuple[Tensor, Tensor | None]:
    """Image batch -> per-sample logit, plus K class logits when the
    config carries the supervised classifier head."""
    cfg = disc.config
    xt = as_tensor(x)
    r = cfg.target_resolution
    if xt.data.ndim != 4 or xt.shape[1:] != (cfg.img_channels, r, r):
        raise TensorError(
            f"discriminator input {xt.shape} != (B,{cfg.img_channels},{r},{r})")
    p = disc.params
    h = leaky_relu(conv1x1(xt, p["from.w"], p["from.b"], disc.scale("from.w")))
    for i in range(cfg.levels, 0, -1):
        h = leaky_relu(conv2d(h, p[f"b{i}.conv.w"], p[f"b{i}.conv.b"],
                              disc.scale(f"b{i}.conv.w")))
        h = downsample2x(h)
    h = leaky_relu(conv2d(h, p["b0.conv.w"], p["b0.conv.b"],
                          disc.scale("b0.conv.w")))
    h = reshape(h, (xt.shape[0], -1))
    h = leaky_relu(linear(h, p["dense0.w"], p["dense0.b"],
                          disc.scale("dense0.w")))
    logit = reshape(linear(h, p["dense1.w"], p["dense1.b"],
                           disc.scale("dense1.w")), (xt.shape[0],))
    cls = None
    if cfg.supervised:
        cls = linear(h, p["cls.w"], p["cls.b"], disc.scale("cls.w"))
    return logit, cls


def truncate(w: np.ndarray, w_avg: np.ndarray, psi: float) -> np.ndarray:
    """Pull styles toward their average: w_avg + psi * (w - w_avg)."""
    return w_avg + psi * (np.asarray(w, dtype=np.float64) - w_avg)


# ---------------------------------------------------------------------------
# inference sampling
# ---------------------------------------------------------------------------

def style_statistics(bundle: GeneratorBundle, n: int = 10000,
                     seed: int = 0, use_ema: bool = True,
                     batch: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """(mean style vector, mean mode weights) over n seeded draws."""
    rng = Rng(derive_seed(seed, "style_statistics"))
    d = bundle.config.latent_dim
    w_sum = np.zeros(d)
    r_sum = np.zeros(bundle.config.k if bundle.has_mode_mapper else 1)
    done = 0
    while done < n:
        b = min(batch, n - done)
        z = rng.normal((b, d))
        w_sum += map_style(z, bundle, use_ema).data.sum(axis=0)
        r_sum += map_mode(z, bundle, use_ema).data.sum(axis=0)
        done += b
    return w_sum / n, r_sum / n


def sample_images(bundle: GeneratorBundle, n: int, seed: int, *,
                  psi: float = 1.0, noise: bool = True, use_ema: bool = True,
                  w_r_override: np.ndarray | None = None,
                  w_override: np.ndarray | None = None,
                  batch: int = 64) -> np.ndarray:
    """Draw n images [n,img_channels,R,R]; a pure function of
    (bundle, seed, options), independent of the batching granularity."""
    cfg = bundle.config
    rng = Rng(derive_seed(seed, "sample_images"))
    z = rng.normal((n, cfg.latent_dim))
    if noise:
        all_noise = make_noise(cfg, n, rng)
    w = map_style(z, bundle, use_ema).data if w_override is None \
        else np.asarray(w_override, dtype=np.float64)
    w_r = map_mode(z, bundle, use_ema).data if w_r_override is None \
        else np.asarray(w_r_override, dtype=np.float64)
    if psi != 1.0:
        w_avg, wr_avg = style_statistics(bundle, use_ema=use_ema)
        w = truncate(w, w_avg, psi)
        w_r = truncate(w_r, wr_avg, psi)
    bank = bundle.view(use_ema)["roots"]
    out = np.empty((n, cfg.img_channels, cfg.target_resolution,
                    cfg.target_resolution))
    for lo in range(0, n, batch):
        hi = min(lo + batch, n)
        root = blend_roots(bank, w_r[lo:hi])
        nz = [m[lo:hi] for m in all_noise] if noise else None
        out[lo:hi] = synthesize(bundle, root, Tensor(w[lo:hi]), nz,
                                use_ema).data
    return out
