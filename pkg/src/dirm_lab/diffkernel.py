"""Shallow ELU networks with exact first and mixed second derivatives.

A model is ``f(phi(x); beta)``: ``phi`` is 0-2 affine+ELU layers and the head
``beta = (w, b)`` is linear, followed by an identity (squared error) or
logistic (binary cross-entropy) link.

Every penalty used by the training objectives is a smooth function of
per-environment head statistics (losses, head gradients ``g_e``, scale
derivatives).  Given its cotangent, the gradient of such a statistic with
respect to all parameters is a single pullback of a per-sample cotangent
``q_i`` on the score ``s_i`` plus a direct cotangent on the representation
``z_i``.  For ``v . g_e`` with ``g_e = mean(r_i [z_i, 1])``:

    q_i  = r'_i (v_w . z_i + v_b) / n
    dz_i = q_i w + r_i v_w / n

where ``r = dl/ds`` and ``r' = d2l/ds2`` are known in closed form for both
links.  This gives exact ``d2L/dphi dbeta`` contractions without a
higher-order tape.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, LabelDomain, Unsupported, ValidationError
from .scm import EnvironmentData

LINKS = ("identity", "logistic")
MAX_HIDDEN = 2
GRID_SCALES = (0.25, 0.5, 1.0, 2.0, 4.0)


def elu(a):
    return np.where(a > 0, a, np.expm1(np.minimum(a, 0.0)))


def elu_prime(a):
    return np.where(a > 0, 1.0, np.exp(np.minimum(a, 0.0)))


# -- parameters --------------------------------------------------------------

@dataclass(frozen=True)
class ParamLayout:
    """Ordered ``(name, shape)`` entries; phi block first, then beta block."""

    entries: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def sizes(self) -> list[int]:
        return [int(np.prod(s)) for _, s in self.entries]

    @property
    def size(self) -> int:
        return sum(self.sizes)

    @property
    def n_phi(self) -> int:
        return sum(n for (name, _), n in zip(self.entries, self.sizes) if name.startswith("phi."))

    @property
    def n_beta(self) -> int:
        return self.size - self.n_phi

    def phi_slice(self) -> slice:
        return slice(0, self.n_phi)

    def beta_slice(self) -> slice:
        return slice(self.n_phi, self.size)

    def to_json(self) -> list:
        return [{"name": n, "shape": list(s)} for n, s in self.entries]

    @classmethod
    def from_json(cls, doc) -> "ParamLayout":
        return cls(tuple((e["name"], tuple(e["shape"])) for e in doc))


@dataclass(frozen=True, eq=False)
class Model:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    head_w: np.ndarray
    head_b: float = 0.0
    link: str = "identity"
    head_bias: bool = True

    def __post_init__(self):
        if self.link not in LINKS:
            raise ValidationError(f"link must be one of {LINKS}", key="link")
        if len(self.weights) != len(self.biases):
            raise DimensionMismatch("one bias per phi layer required")
        if len(self.weights) > MAX_HIDDEN:
            raise Unsupported(f"at most {MAX_HIDDEN} hidden layers are supported")
        ws = tuple(np.asarray(w, dtype=float) for w in self.weights)
        bs = tuple(np.asarray(c, dtype=float).reshape(-1) for c in self.biases)
        hw = np.asarray(self.head_w, dtype=float).reshape(-1)
        for i, (w, c) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or c.shape != (w.shape[1],):
                raise DimensionMismatch(f"layer {i}: weight {w.shape} / bias {c.shape}")
            if i and w.shape[0] != ws[i - 1].shape[1]:
                raise DimensionMismatch(f"layer {i} input width {w.shape[0]} != {ws[i - 1].shape[1]}")
        if ws and hw.shape[0] != ws[-1].shape[1]:
            raise DimensionMismatch(f"head width {hw.shape[0]} != representation width {ws[-1].shape[1]}")
        hb = float(self.head_b) if self.head_bias else 0.0
        if not all(np.all(np.isfinite(a)) for a in (*ws, *bs, hw)) or not np.isfinite(hb):
            raise ValidationError("non-finite parameters", key="model")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "head_w", hw)
        object.__setattr__(self, "head_b", hb)

    @property
    def n_hidden(self) -> int:
        return len(self.weights)

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0] if self.weights else self.head_w.shape[0]

    @property
    def width(self) -> int:
        return self.head_w.shape[0]

    @property
    def layout(self) -> ParamLayout:
        entries = []
        for i, w in enumerate(self.weights):
            entries.append((f"phi.{i}.W", w.shape))
            entries.append((f"phi.{i}.b", (w.shape[1],)))
        entries.append(("beta.w", (self.width,)))
        if self.head_bias:
            entries.append(("beta.b", (1,)))
        return ParamLayout(tuple(entries))

    @property
    def beta(self) -> np.ndarray:
        return np.r_[self.head_w, self.head_b] if self.head_bias else self.head_w.copy()

    def to_vector(self) -> np.ndarray:
        parts = []
        for w, c in zip(self.weights, self.biases):
            parts += [w.ravel(), c]
        parts.append(self.beta)
        return np.concatenate(parts) if parts else np.empty(0)

    def with_vector(self, vec) -> "Model":
        return from_vector(self.layout, vec, link=self.link)

    def with_head(self, w, b=None) -> "Model":
        return Model(self.weights, self.biases, w, self.head_b if b is None else b, self.link, self.head_bias)

    def scale_head(self, k: float) -> "Model":
        return self.with_head(k * self.head_w, k * self.head_b)


def from_vector(layout: ParamLayout, vec, link: str = "identity") -> Model:
    vec = np.array(vec, dtype=float)
    if vec.shape != (layout.size,):
        raise DimensionMismatch(f"expected {layout.size} parameters, got {vec.shape}")
    arrays = {}
    off = 0
    for (name, shape), n in zip(layout.entries, layout.sizes):
        arrays[name] = vec[off:off + n].reshape(shape)
        off += n
    n_layers = sum(1 for name, _ in layout.entries if name.endswith(".W"))
    head_bias = "beta.b" in arrays
    return Model(
        tuple(arrays[f"phi.{i}.W"] for i in range(n_layers)),
        tuple(arrays[f"phi.{i}.b"] for i in range(n_layers)),
        arrays["beta.w"],
        float(arrays["beta.b"][0]) if head_bias else 0.0,
        link,
        head_bias,
    )


def init_model(d_in: int, hidden: Sequence[int] = (), link: str = "identity", seed: int = 0,
               head_bias: bool = True) -> Model:
    """Xavier-uniform weights, zero biases, seeded with Philox."""
    rng = np.random.Generator(np.random.Philox(seed))
    dims = [d_in, *hidden]
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    a = np.sqrt(6.0 / (dims[-1] + 1))
    return Model(tuple(ws), tuple(bs), rng.uniform(-a, a, size=dims[-1]), 0.0, link, head_bias)


def linear_model(coef, bias: float = 0.0, link: str = "identity", head_bias: bool = True) -> Model:
    """A model with identity representation and the given head."""
    return Model((), (), np.asarray(coef, dtype=float), bias, link, head_bias)


# -- forward pass ------------------------------------------------------------

def _check_x(model: Model, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise DimensionMismatch(f"model expects {model.d_in} features, got shape {x.shape}")
    return x


def represent(model: Model, x):
    """Return ``(z, cache)``; cache holds ``(layer input, pre-activation)`` pairs."""
    h = _check_x(model, x)
    cache = []
    for w, c in zip(model.weights, model.biases):
        a = h @ w + c
        cache.append((h, a))
        h = elu(a)
    return h, cache


def scores(model: Model, x) -> np.ndarray:
    z, _ = represent(model, x)
    return z @ model.head_w + model.head_b


def forward(model: Model, x) -> np.ndarray:
    s = scores(model, x)
    return s if model.link == "identity" else expit(s)


def _check_labels(model: Model, y):
    if model.link == "logistic" and not np.all((y == 0) | (y == 1)):
        raise LabelDomain("logistic link requires labels in {0, 1}")


def _pointwise(link, s, y):
    """Per-sample loss, dl/ds and d2l/ds2."""
    if link == "identity":
        d = s - y
        return d * d, 2.0 * d, np.full_like(s, 2.0)
    p = expit(s)
    return np.logaddexp(0.0, s) - y * s, p - y, p * (1.0 - p)


@dataclass(eq=False)
class EnvPass:
    """Forward quantities of one environment, reused by every gradient term."""

    env: EnvironmentData
    z: np.ndarray
    cache: list
    s: np.ndarray
    ell: np.ndarray
    r: np.ndarray
    rp: np.ndarray

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def loss(self) -> float:
        return float(self.ell.mean())

    def zt(self, head_bias: bool) -> np.ndarray:
        return np.column_stack([self.z, np.ones(self.n)]) if head_bias else self.z

    def g(self, head_bias: bool) -> np.ndarray:
        """Head gradient of the mean environment loss."""
        gw = self.z.T @ self.r / self.n
        return np.r_[gw, self.r.mean()] if head_bias else gw


def env_pass(model: Model, env: EnvironmentData, z=None, cache=None) -> EnvPass:
    if env.n == 0:
        raise ValidationError("empty environment", key=env.env_id)
    _check_labels(model, env.y)
    if z is None:
        z, cache = represent(model, env.x)
    s = z @ model.head_w + model.head_b
    ell, r, rp = _pointwise(model.link, s, env.y)
    return EnvPass(env, z, cache, s, ell, r, rp)


def rehead(model: Model, p: EnvPass) -> EnvPass:
    """Re-evaluate the head of ``model`` on a pass computed with the same phi."""
    return env_pass(model, p.env, p.z, p.cache)


def loss(model: Model, env: EnvironmentData) -> float:
    return env_pass(model, env).loss


def grad_beta_env(model: Model, env: EnvironmentData) -> np.ndarray:
    return env_pass(model, env).g(model.head_bias)


# -- pullbacks ---------------------------------------------------------------

def phi_backprop(model: Model, p: EnvPass, dz) -> np.ndarray:
    """Flat phi-block gradient for a cotangent ``dz`` on the representation."""
    grads = []
    for (h, a), w in zip(reversed(p.cache), reversed(model.weights)):
        da = dz * elu_prime(a)
        grads.append((h.T @ da, da.sum(axis=0)))
        dz = da @ w.T
    out = []
    for gw, gb in reversed(grads):
        out += [gw.ravel(), gb]
    return np.concatenate(out) if out else np.empty(0)


@dataclass(eq=False)
class HeadCotangent:
    """Accumulated gradient of a head statistic: beta block + per-env ``dz``."""

    beta: np.ndarray
    dz: list

    @classmethod
    def zeros(cls, model: Model, passes: Sequence[EnvPass]) -> "HeadCotangent":
        n_beta = model.width + int(model.head_bias)
        # Identity representations have no phi block, so dz is never needed.
        dz = [np.zeros_like(p.z) if model.n_hidden else None for p in passes]
        return cls(np.zeros(n_beta), dz)

    def add_score(self, model: Model, e: int, p: EnvPass, q, k: float = 1.0):
        """Add a per-sample cotangent ``q`` on the scores of ``model``.

        ``model`` may be a head-scaled copy (factor ``k``) of the trained
        model; the beta block is then mapped back to the unscaled head.
        """
        self.beta += k * (p.zt(model.head_bias).T @ q)
        if self.dz[e] is not None:
            self.dz[e] += np.outer(q, model.head_w)

    def axpy(self, a: float, other: "HeadCotangent") -> "HeadCotangent":
        dz = [None if d is None else d + a * o for d, o in zip(self.dz, other.dz)]
        return HeadCotangent(self.beta + a * other.beta, dz)

    def phi(self, model: Model, passes: Sequence[EnvPass]) -> np.ndarray:
        n_phi = model.layout.n_phi
        out = np.zeros(n_phi)
        if n_phi:
            for p, dz in zip(passes, self.dz):
                out += phi_backprop(model, p, dz)
        return out


def loss_terms(model: Model, passes: Sequence[EnvPass], weights=None):
    """Weighted sum of env losses (default: mean) and its cotangent."""
    E = len(passes)
    wts = np.full(E, 1.0 / E) if weights is None else np.asarray(weights, dtype=float)
    ct = HeadCotangent.zeros(model, passes)
    for e, p in enumerate(passes):
        ct.add_score(model, e, p, wts[e] * p.r / p.n)
    return float(sum(w * p.loss for w, p in zip(wts, passes))), ct


# -- penalties ---------------------------------------------------------------

DIRM_FORMS = ("sqnorm", "norm", "vector")
DIRM_MODES = ("point", "scaled_grid")
PENALTY_KINDS = ("dirm", "irm", "rex")


@dataclass(frozen=True)
class Penalty:
    """Descriptor of a penalty on per-environment head statistics.

    ``form`` (DIRM only): ``sqnorm`` is the population variance of squared
    head-gradient norms, ``norm`` the variance of the norms, ``vector`` the
    mean squared deviation of the gradient vectors from their average.
    ``mode`` (DIRM only): ``point`` evaluates at the current head,
    ``scaled_grid`` averages over heads scaled by ``GRID_SCALES``.
    """

    kind: str = "dirm"
    form: str = "sqnorm"
    mode: str = "point"

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValidationError(f"must be one of {PENALTY_KINDS}", key="penalty.kind")
        if self.form not in DIRM_FORMS:
            raise ValidationError(f"must be one of {DIRM_FORMS}", key="penalty.form")
        if self.mode not in DIRM_MODES:
            raise ValidationError(f"must be one of {DIRM_MODES}", key="penalty.mode")


def dirm_statistic(G: np.ndarray, form: str = "sqnorm"):
    """Penalty value and its cotangent with respect to the rows of ``G`` (E x p)."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    E = G.shape[0]
    if form == "vector":
        D = G - G.mean(axis=0)
        return float((D * D).sum(axis=1).mean()), 2.0 * D / E
    sq = (G * G).sum(axis=1)
    if form == "sqnorm":
        dev = sq - sq.mean()
        return float(np.mean(dev * dev)), (4.0 * dev / E)[:, None] * G
    nrm = np.sqrt(sq)
    dev = nrm - nrm.mean()
    safe = np.where(nrm > 0, nrm, 1.0)
    return float(np.mean(dev * dev)), np.where(nrm > 0, 2.0 * dev / E / safe, 0.0)[:, None] * G


def _dirm_point(model: Model, passes, form, ct: HeadCotangent, k: float = 1.0, weight: float = 1.0):
    hb = model.head_bias
    G = np.array([p.g(hb) for p in passes])
    value, V = dirm_statistic(G, form)
    for e, p in enumerate(passes):
        v = weight * V[e]
        vw, vb = (v[:-1], v[-1]) if hb else (v, 0.0)
        proj = p.z @ vw + vb
        ct.add_score(model, e, p, p.rp * proj / p.n, k)
        if ct.dz[e] is not None:
            ct.dz[e] += np.outer(p.r / p.n, vw)
    return value, G


def penalty_terms(model: Model, passes: Sequence[EnvPass], penalty: Penalty):
    """Penalty value, its cotangent, and per-environment diagnostics.

    The beta block of the cotangent is with respect to the unscaled head,
    so grid-mode contributions are multiplied by their scale factor.
    """
    ct = HeadCotangent.zeros(model, passes)
    E = len(passes)
    info = {}
    if penalty.kind == "dirm":
        if penalty.mode == "point":
            value, G = _dirm_point(model, passes, penalty.form, ct)
        else:
            value = 0.0
            for k in GRID_SCALES:
                scaled = model.scale_head(k)
                sp = [rehead(scaled, p) for p in passes]
                v_k, G_k = _dirm_point(scaled, sp, penalty.form, ct, k=k, weight=1.0 / len(GRID_SCALES))
                value += v_k / len(GRID_SCALES)
                if k == 1.0:
                    G = G_k
        info["grad_sqnorm"] = (G * G).sum(axis=1)
    elif penalty.kind == "irm":
        D = np.array([np.mean(p.r * p.s) for p in passes])
        value = float(np.sum(D * D))
        for e, p in enumerate(passes):
            ct.add_score(model, e, p, 2.0 * D[e] * (p.rp * p.s + p.r) / p.n)
        info["scale_derivative"] = D
    else:
        L = np.array([p.loss for p in passes])
        dev = L - L.mean()
        value = float(np.mean(dev * dev))
        for e, p in enumerate(passes):
            ct.add_score(model, e, p, (2.0 * dev[e] / E) * p.r / p.n)
    return value, ct, info


def penalty_value(model: Model, envs: Sequence[EnvironmentData], penalty: Penalty) -> float:
    passes = [env_pass(model, e) for e in envs]
    return penalty_terms(model, passes, penalty)[0]


def grad_phi_of_penalty(model: Model, envs: Sequence[EnvironmentData], penalty: Penalty = Penalty()) -> np.ndarray:
    """Exact phi-block gradient of ``penalty``; empty for identity representations."""
    passes = [env_pass(model, e) for e in envs]
    _, ct, _ = penalty_terms(model, passes, penalty)
    return ct.phi(model, passes)


def grad_beta_of_penalty(model: Model, envs: Sequence[EnvironmentData], penalty: Penalty = Penalty()) -> np.ndarray:
    passes = [env_pass(model, e) for e in envs]
    _, ct, _ = penalty_terms(model, passes, penalty)
    return ct.beta


# -- finite-difference checks -------------------------------------------------

def central_difference(f, theta, step: float, coords=None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    coords = range(theta.size) if coords is None else coords
    out = []
    for i in coords:
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        out.append((f(tp) - f(tm)) / (2.0 * step))
    return np.array(out)


def max_relative_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=float)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)))


def fd_check(model: Model, envs: Sequence[EnvironmentData], which: str = "beta", step: float = 1e-5,
             penalty: Penalty = Penalty()) -> float:
    """Max relative error of an analytic gradient against central differences.

    ``which="beta"``: beta-block gradient of the mean environment loss.
    ``which="phi-penalty"``: phi-block gradient of ``penalty``.
    """
    if not step > 0:
        raise ValidationError(f"step must be > 0, got {step}", key="step")
    layout = model.layout
    theta = model.to_vector()
    if which == "beta":
        passes = [env_pass(model, e) for e in envs]
        analytic = loss_terms(model, passes)[1].beta

        def f(t):
            m = from_vector(layout, t, model.link)
            return float(np.mean([loss(m, e) for e in envs]))

        coords = range(layout.n_phi, layout.size)
    elif which == "phi-penalty":
        analytic = grad_phi_of_penalty(model, envs, penalty)

        def f(t):
            return penalty_value(from_vector(layout, t, model.link), envs, penalty)

        coords = range(layout.n_phi)
    else:
        raise ValidationError("which must be 'beta' or 'phi-penalty'", key="which")
    return max_relative_error(analytic, central_difference(f, theta, step, coords))


BATTERY_PENALTIES = (
    Penalty("dirm", "sqnorm", "point"),
    Penalty("dirm", "norm", "point"),
    Penalty("dirm", "vector", "point"),
    Penalty("dirm", "sqnorm", "scaled_grid"),
    Penalty("dirm", "vector", "scaled_grid"),
    Penalty("irm"),
    Penalty("rex"),
)


def random_case(n_hidden: int, link: str, seed: int, d_in: int = 3, width: int = 4, n: int = 24, n_envs: int = 2):
    """A random model and random environments for gradient checks."""
    rng = np.random.Generator(np.random.Philox(seed))
    model = init_model(d_in, (width,) * n_hidden, link, seed=seed + 1)
    vec = model.to_vector()
    vec = vec + 0.3 * rng.standard_normal(vec.size)
    model = model.with_vector(vec)
    envs = []
    names = tuple(f"x{j}" for j in range(d_in))
    for e in range(n_envs):
        x = rng.normal(0.3 * e, 1.0 + 0.5 * e, size=(n, d_in))
        if link == "logistic":
            y = (rng.random(n) < 0.5).astype(float)
        else:
            y = x @ rng.standard_normal(d_in) + rng.standard_normal(n)
        envs.append(EnvironmentData(x, y, f"e{e}", names))
    return model, envs


def fd_battery(cases: int = 100, seed: int = 0, step: float = 1e-5):
    """Rows of ``(n_hidden, link, case, penalty, beta_err, phi_err)``."""
    rows = []
    for n_hidden in range(MAX_HIDDEN + 1):
        for link in LINKS:
            for c in range(cases):
                pen = BATTERY_PENALTIES[c % len(BATTERY_PENALTIES)]
                model, envs = random_case(n_hidden, link, seed=seed + 1000 * c + 10 * n_hidden + LINKS.index(link))
                rows.append((
                    n_hidden, link, c, f"{pen.kind}-{pen.form}-{pen.mode}",
                    fd_check(model, envs, "beta", step),
                    fd_check(model, envs, "phi-penalty", step, pen),
                ))
    return rows


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_FORMAT = "dirm-lab-model"
CHECKPOINT_VERSION = 1


def model_to_json(model: Model) -> str:
    """JSON checkpoint; parameters are base64 of little-endian IEEE-754 float64."""
    raw = model.to_vector().astype("<f8").tobytes()
    return json.dumps({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "link": model.link,
        "layout": model.layout.to_json(),
        "byte_order": "little",
        "dtype": "float64",
        "params": base64.b64encode(raw).decode("ascii"),
    }, indent=2)


def model_from_json(text: str) -> Model:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError("unrecognized checkpoint format", key="format")
    vec = np.frombuffer(base64.b64decode(doc["params"]), dtype="<f8").astype(float)
    return from_vector(ParamLayout.from_json(doc["layout"]), vec, doc["link"])


def save_model(model: Model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model_to_json(model))
    return path


def load_model(path) -> Model:
    return model_from_json(Path(path).read_text())
