"""Multimodal VAE with pluggable barycentric posterior aggregation.

One Gaussian encoder and one decoder per modality. The joint posterior is
formed from the unimodal posteriors by the configured aggregation (poe, moe,
wb, mopoe, mwb). Training maximizes a reconstruction term plus a
beta-weighted KL term: single-Gaussian aggregations use the closed-form KL to
the standard-normal prior, mixture aggregations use the convex upper bound
(weighted component-wise KL) so the objective stays a valid bound, with one
reparameterized sample per mixture component feeding all decoders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import barycenter as bc
from . import diffgraph as dg
from .errors import NumericError
from .gaussian import SIGMA_FLOOR, DiagGaussian, GaussianMixture

AGGREGATIONS = ("poe", "moe", "mopoe", "wb", "mwb")
LIKELIHOODS = ("bernoulli", "gaussian")

GAUSSIAN_LIK_SIGMA = 0.75

_TAG_INIT = 21
_TAG_SHUFFLE = 22
_TAG_NOISE = 23


@dataclass(frozen=True)
class ModelConfig:
    num_modalities: int
    input_dims: tuple
    latent_dim: int = 16
    hidden: tuple = (128, 128)
    likelihood: str = "bernoulli"
    aggregation: str = "wb"
    beta: float = 2.5
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.num_modalities < 1:
            raise ValueError("num_modalities must be >= 1")
        if len(self.input_dims) != self.num_modalities:
            raise ValueError("input_dims length must equal num_modalities")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.likelihood not in LIKELIHOODS:
            raise ValueError(f"likelihood must be one of {LIKELIHOODS}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


def num_mixture_components(config: ModelConfig) -> int:
    """How many joint-posterior components the configured aggregation yields."""
    if config.aggregation in ("poe", "wb"):
        return 1
    if config.aggregation == "moe":
        return config.num_modalities
    return 1 << config.num_modalities


@dataclass
class MultimodalVae:
    config: ModelConfig
    store: dg.ParamStore = field(default=None)

    def __post_init__(self):
        if self.store is None:
            self.store = _init_params(self.config)

    @property
    def prior(self) -> DiagGaussian:
        d = self.config.latent_dim
        return DiagGaussian(np.zeros(d), np.ones(d))


def _init_params(config: ModelConfig) -> dg.ParamStore:
    store = dg.ParamStore()
    rng = dg.rng_stream(config.seed, _TAG_INIT)
    d = config.latent_dim
    for m in range(config.num_modalities):
        dims = [config.input_dims[m], *config.hidden]
        for i in range(len(dims) - 1):
            store.add(f"enc{m}.w{i}", dg.glorot_uniform(rng, dims[i], dims[i + 1]))
            store.add(f"enc{m}.b{i}", np.zeros(dims[i + 1]))
        top = dims[-1]
        store.add(f"enc{m}.mu_w", dg.glorot_uniform(rng, top, d))
        store.add(f"enc{m}.mu_b", np.zeros(d))
        store.add(f"enc{m}.sigma_w", dg.glorot_uniform(rng, top, d))
        store.add(f"enc{m}.sigma_b", np.zeros(d))
        dims = [d, *reversed(config.hidden)]
        for i in range(len(dims) - 1):
            store.add(f"dec{m}.w{i}", dg.glorot_uniform(rng, dims[i], dims[i + 1]))
            store.add(f"dec{m}.b{i}", np.zeros(dims[i + 1]))
        store.add(f"dec{m}.out_w", dg.glorot_uniform(rng, dims[-1], config.input_dims[m]))
        store.add(f"dec{m}.out_b", np.zeros(config.input_dims[m]))
    return store


# ---------------------------------------------------------------------------
# Graph-side forward passes (training)
# ---------------------------------------------------------------------------


def _encode_graph(values, config: ModelConfig, m: int, x: np.ndarray):
    h = dg.Value(x)
    for i in range(len(config.hidden)):
        h = dg.tanh(dg.add(dg.matmul(h, values[f"enc{m}.w{i}"]), values[f"enc{m}.b{i}"]))
    mu = dg.add(dg.matmul(h, values[f"enc{m}.mu_w"]), values[f"enc{m}.mu_b"])
    pre = dg.add(dg.matmul(h, values[f"enc{m}.sigma_w"]), values[f"enc{m}.sigma_b"])
    sigma = dg.add(dg.softplus(pre), SIGMA_FLOOR)
    return mu, sigma


def _decode_graph(values, config: ModelConfig, m: int, z):
    h = z
    for i in range(len(config.hidden)):
        h = dg.tanh(dg.add(dg.matmul(h, values[f"dec{m}.w{i}"]), values[f"dec{m}.b{i}"]))
    return dg.add(dg.matmul(h, values[f"dec{m}.out_w"]), values[f"dec{m}.out_b"])


def _wsum_graph(items, weights):
    acc = dg.mul(items[0], float(weights[0]))
    for item, w in zip(items[1:], weights[1:]):
        acc = dg.add(acc, dg.mul(item, float(w)))
    return acc


def _poe_graph(mus, sigmas):
    precs = [dg.reciprocal(dg.square(s)) for s in sigmas]
    total = precs[0]
    for p in precs[1:]:
        total = dg.add(total, p)
    var = dg.reciprocal(total)
    weighted = dg.mul(precs[0], mus[0])
    for p, mu in zip(precs[1:], mus[1:]):
        weighted = dg.add(weighted, dg.mul(p, mu))
    return dg.mul(var, weighted), dg.sqrt(var)


def _graph_components(values, config: ModelConfig, mus, sigmas, batch_size: int):
    """Joint-posterior components [(weight, mu, sigma)] inside the graph."""
    m_count = config.num_modalities
    method = config.aggregation
    if method == "poe":
        mu, sigma = _poe_graph(mus, sigmas)
        return [(1.0, mu, sigma)]
    if method == "wb":
        lam = [1.0 / m_count] * m_count
        return [(1.0, _wsum_graph(mus, lam), _wsum_graph(sigmas, lam))]
    if method == "moe":
        return [(1.0 / m_count, mus[m], sigmas[m]) for m in range(m_count)]
    # mopoe / mwb: equal-weight mixture over the modality powerset; the empty
    # subset contributes the prior.
    comps = []
    weight = 1.0 / (1 << m_count)
    shape = (batch_size, config.latent_dim)
    for subset in bc.subsets(m_count):
        idx = subset.members()
        if not idx:
            comps.append((weight, dg.Value(np.zeros(shape)), dg.Value(np.ones(shape))))
        elif method == "mopoe":
            mu, sigma = _poe_graph([mus[i] for i in idx], [sigmas[i] for i in idx])
            comps.append((weight, mu, sigma))
        else:
            lam = [1.0 / len(idx)] * len(idx)
            comps.append(
                (
                    weight,
                    _wsum_graph([mus[i] for i in idx], lam),
                    _wsum_graph([sigmas[i] for i in idx], lam),
                )
            )
    return comps


def _elbo_graph(values, config: ModelConfig, batch, noise: np.ndarray):
    """Scalar training loss (negative bound) plus reported term values."""
    batch = [np.asarray(x, dtype=np.float64) for x in batch]
    if len(batch) != config.num_modalities:
        raise ValueError("batch must provide one array per modality")
    for m, x in enumerate(batch):
        if x.ndim != 2 or x.shape[1] != config.input_dims[m]:
            raise ValueError(
                f"modality {m} batch shape {x.shape} does not match input dim "
                f"{config.input_dims[m]}"
            )
    b = batch[0].shape[0]
    k = num_mixture_components(config)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape == (b, config.latent_dim) and k == 1:
        noise = noise[None]
    if noise.shape != (k, b, config.latent_dim):
        raise ValueError(
            f"noise shape {noise.shape} != {(k, b, config.latent_dim)}"
        )

    mus, sigmas = [], []
    for m in range(config.num_modalities):
        mu, sigma = _encode_graph(values, config, m, batch[m])
        mus.append(mu)
        sigmas.append(sigma)
    comps = _graph_components(values, config, mus, sigmas, b)

    # KL term: weighted closed-form KL of each component to the N(0, I) prior,
    # averaged over the batch.
    kl = None
    for (lam, mu, sigma) in comps:
        per = dg.add(
            dg.add(dg.square(mu), dg.square(sigma)),
            dg.add(dg.mul(dg.log(sigma), -2.0), -1.0),
        )
        term = dg.mul(dg.vsum(per), 0.5 * lam / b)
        kl = term if kl is None else dg.add(kl, term)

    # Reconstruction: one reparameterized sample per component, all stacked
    # into a single decoder pass per modality, weighted by component weight.
    zs = [
        dg.add(mu, dg.mul(sigma, noise[i])) for i, (_, mu, sigma) in enumerate(comps)
    ]
    z_all = zs[0] if len(zs) == 1 else dg.concat(zs, axis=0)
    row_w = np.repeat([lam for (lam, _, _) in comps], b)[:, None] / b

    recon_terms = []
    for m in range(config.num_modalities):
        out = _decode_graph(values, config, m, z_all)
        x_rep = np.tile(batch[m], (k, 1))
        if config.likelihood == "bernoulli":
            ll = dg.add(dg.mul(dg.Value(x_rep), out), dg.mul(dg.softplus(out), -1.0))
            recon_m = dg.vsum(dg.mul(ll, row_w))
        else:
            sq = dg.square(dg.add(dg.Value(x_rep), dg.mul(out, -1.0)))
            scale = -0.5 / GAUSSIAN_LIK_SIGMA**2
            const = -config.input_dims[m] * (
                math.log(GAUSSIAN_LIK_SIGMA) + 0.5 * math.log(2.0 * math.pi)
            )
            recon_m = dg.add(dg.vsum(dg.mul(dg.mul(sq, scale), row_w)), const)
        recon_terms.append(recon_m)

    recon = recon_terms[0]
    for t in recon_terms[1:]:
        recon = dg.add(recon, t)
    loss = dg.add(dg.mul(recon, -1.0), dg.mul(kl, config.beta))

    terms = {f"recon_mod{m}": float(t.data) for m, t in enumerate(recon_terms)}
    terms["kl"] = float(kl.data)
    for name, value in [*terms.items(), ("loss", float(loss.data))]:
        if not math.isfinite(value):
            raise NumericError(f"non-finite {name} in training objective", term=name)
    return loss, terms


def elbo(vae: MultimodalVae, batch, noise: np.ndarray):
    """Training loss and its terms for one batch with injected noise.

    Returns (loss, terms) where loss is -reconstruction + beta * KL-term and
    terms holds the per-modality mean reconstruction log-likelihoods and the
    KL term.
    """
    loss, terms = _elbo_graph(vae.store.as_values(), vae.config, batch, noise)
    return float(loss.data), terms


def elbo_builder(vae: MultimodalVae, batch, noise: np.ndarray):
    """A graph-builder closure over (batch, noise) for forward_backward."""

    def build(values):
        return _elbo_graph(values, vae.config, batch, noise)[0]

    return build


# ---------------------------------------------------------------------------
# Array-side forward passes (evaluation and generation)
# ---------------------------------------------------------------------------


def _encode_one(vae: MultimodalVae, m: int, x) -> tuple:
    config, params = vae.config, vae.store.params
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dims[m]:
        raise ValueError(
            f"modality {m} batch shape {x.shape} does not match input dim "
            f"{config.input_dims[m]}"
        )
    h = x
    for i in range(len(config.hidden)):
        h = np.tanh(h @ params[f"enc{m}.w{i}"] + params[f"enc{m}.b{i}"])
    mu = h @ params[f"enc{m}.mu_w"] + params[f"enc{m}.mu_b"]
    pre = h @ params[f"enc{m}.sigma_w"] + params[f"enc{m}.sigma_b"]
    sigma = np.maximum(pre, 0.0) + np.log1p(np.exp(-np.abs(pre))) + SIGMA_FLOOR
    return mu, sigma


def encode_arrays(vae: MultimodalVae, batch):
    """Per-modality posterior parameter arrays [(mu B x d, sigma B x d)]."""
    return [_encode_one(vae, m, x) for m, x in enumerate(batch)]


def encode(vae: MultimodalVae, batch):
    """Unimodal posteriors, one DiagGaussian per modality per example."""
    arrays = encode_arrays(vae, batch)
    return [
        [DiagGaussian(mu[i], sigma[i]) for i in range(mu.shape[0])]
        for mu, sigma in arrays
    ]


def decode_array(vae: MultimodalVae, m: int, z: np.ndarray) -> np.ndarray:
    """Raw decoder output (logits for bernoulli, means for gaussian)."""
    config, params = vae.config, vae.store.params
    h = np.asarray(z, dtype=np.float64)
    for i in range(len(config.hidden)):
        h = np.tanh(h @ params[f"dec{m}.w{i}"] + params[f"dec{m}.b{i}"])
    return h @ params[f"dec{m}.out_w"] + params[f"dec{m}.out_b"]


def decode_mean(vae: MultimodalVae, m: int, z: np.ndarray) -> np.ndarray:
    out = decode_array(vae, m, z)
    if vae.config.likelihood == "bernoulli":
        return np.where(out >= 0, 1.0 / (1.0 + np.exp(-out)), np.exp(out) / (1.0 + np.exp(out)))
    return out


def modality_log_lik(vae: MultimodalVae, m: int, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """log p_m(x | z_i) for one observation x against rows z_i."""
    out = decode_array(vae, m, np.atleast_2d(z))
    x = np.asarray(x, dtype=np.float64)
    if vae.config.likelihood == "bernoulli":
        softplus = np.maximum(out, 0.0) + np.log1p(np.exp(-np.abs(out)))
        return np.sum(x[None, :] * out - softplus, axis=1)
    const = -0.5 * math.log(2.0 * math.pi) - math.log(GAUSSIAN_LIK_SIGMA)
    sq = (x[None, :] - out) ** 2 / (2.0 * GAUSSIAN_LIK_SIGMA**2)
    return np.sum(const - sq, axis=1)


def aggregate(posteriors, method: str, subset: bc.SubsetIndex, prior: DiagGaussian = None):
    """Aggregate one example's unimodal posteriors over an available subset.

    Returns a DiagGaussian for poe/wb and a GaussianMixture for moe, mopoe and
    mwb. The powerset methods take the powerset within the available subset;
    their empty subset contributes the standard-normal prior.
    """
    if method not in AGGREGATIONS:
        raise ValueError(f"method must be one of {AGGREGATIONS}")
    idx = subset.members()
    if prior is None:
        prior = DiagGaussian(
            np.zeros(posteriors[0].dim), np.ones(posteriors[0].dim)
        )
    if method in ("poe", "wb", "moe") and not idx:
        raise ValueError(f"{method} needs a non-empty modality subset")
    if not idx:
        return GaussianMixture((prior,), np.ones(1))
    family = bc.WeightedFamily.uniform([posteriors[i] for i in idx])
    if method == "poe":
        return bc.poe(family, np.ones(family.size))
    if method == "wb":
        return bc.wb_diag(family)
    if method == "moe":
        return bc.moe(family)
    if method == "mopoe":
        return bc.mopoe(family, prior)
    return bc.mwb(family, prior)


def aggregate_arrays(vae: MultimodalVae, encoded, subset: bc.SubsetIndex):
    """Batched aggregation: (weights K, mu K x B x d, sigma K x B x d).

    Mirrors `aggregate` over whole batches; encoded is the output of
    encode_arrays (only the entries selected by `subset` are read).
    """
    config = vae.config
    method = config.aggregation
    idx = subset.members()
    if method in ("poe", "wb", "moe") and not idx:
        raise ValueError(f"{method} needs a non-empty modality subset")
    ref = encoded[idx[0]][0] if idx else None
    shape = ref.shape if idx else None

    def poe_arrays(members):
        prec = np.zeros(shape)
        weighted = np.zeros(shape)
        for i in members:
            mu, sigma = encoded[i]
            p = 1.0 / sigma**2
            prec += p
            weighted += p * mu
        var = 1.0 / prec
        return var * weighted, np.sqrt(var)

    def wb_arrays(members):
        lam = 1.0 / len(members)
        mu = sum(encoded[i][0] for i in members) * lam
        sigma = sum(encoded[i][1] for i in members) * lam
        return mu, sigma

    if method == "poe":
        mu, sigma = poe_arrays(idx)
        return np.ones(1), mu[None], sigma[None]
    if method == "wb":
        mu, sigma = wb_arrays(idx)
        return np.ones(1), mu[None], sigma[None]
    if method == "moe":
        mus = np.stack([encoded[i][0] for i in idx])
        sigmas = np.stack([encoded[i][1] for i in idx])
        return np.full(len(idx), 1.0 / len(idx)), mus, sigmas

    if not idx:
        b = encoded[0][0].shape[0]
        shape0 = (b, config.latent_dim)
        return np.ones(1), np.zeros(shape0)[None], np.ones(shape0)[None]
    mus, sigmas = [], []
    for sub_mask in range(1 << len(idx)):
        members = [idx[j] for j in range(len(idx)) if sub_mask >> j & 1]
        if not members:
            mus.append(np.zeros(shape))
            sigmas.append(np.ones(shape))
        elif method == "mopoe":
            mu, sigma = poe_arrays(members)
            mus.append(mu)
            sigmas.append(sigma)
        else:
            mu, sigma = wb_arrays(members)
            mus.append(mu)
            sigmas.append(sigma)
    k = len(mus)
    return np.full(k, 1.0 / k), np.stack(mus), np.stack(sigmas)


def conditional_generate(
    vae: MultimodalVae,
    inputs,
    available: bc.SubsetIndex,
    target: int,
    noise: np.ndarray,
    component_u: np.ndarray = None,
) -> np.ndarray:
    """Generate the target modality from the available ones.

    Aggregates the available posteriors, draws z = mu + sigma * noise (for
    mixtures the component of each example is picked from `component_u` by
    inverse transform on the mixture weights), and decodes the target. The
    powerset methods sample only their data-conditioned components: the prior
    component exists to make the mixture a complete posterior, but drawing
    unconditional z would decouple the generation from the given inputs.
    Fully deterministic given the injected noise.
    """
    if available.is_empty:
        raise ValueError("available subset must be non-empty")
    if not 0 <= target < vae.config.num_modalities:
        raise ValueError(f"target modality {target} not in model")
    encoded = _encode_available(vae, inputs, available)
    weights, mus, sigmas = aggregate_arrays(vae, encoded, available)
    if vae.config.aggregation in ("mopoe", "mwb") and len(weights) > 1:
        weights, mus, sigmas = weights[1:], mus[1:], sigmas[1:]
        weights = weights / weights.sum()
    b = mus.shape[1]
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (b, vae.config.latent_dim):
        raise ValueError(f"noise shape {noise.shape} != {(b, vae.config.latent_dim)}")
    if len(weights) == 1:
        z = mus[0] + sigmas[0] * noise
    else:
        if component_u is None:
            raise ValueError("mixture aggregation needs component_u values")
        component_u = np.asarray(component_u, dtype=np.float64)
        if component_u.shape != (b,):
            raise ValueError(f"component_u shape {component_u.shape} != ({b},)")
        choice = np.searchsorted(np.cumsum(weights), component_u, side="right")
        choice = np.minimum(choice, len(weights) - 1)
        rows = np.arange(b)
        z = mus[choice, rows] + sigmas[choice, rows] * noise
    return decode_mean(vae, target, z)


def _encode_available(vae: MultimodalVae, inputs, available: bc.SubsetIndex):
    """Encode only the available modalities; absent slots are never touched."""
    encoded = [None] * vae.config.num_modalities
    for i in available.members():
        encoded[i] = _encode_one(vae, i, inputs[i])
    return encoded


def train(config: ModelConfig, dataset):
    """Train a model on the dataset; returns (vae, per-epoch metrics rows).

    Deterministic for a fixed seed: shuffling and reparameterization noise are
    drawn from counter-based streams keyed by (seed, epoch, step).
    """
    if dataset.num_modalities != config.num_modalities:
        raise ValueError("dataset modality count does not match config")
    for m, desc in enumerate(dataset.descriptors):
        if desc.dim != config.input_dims[m]:
            raise ValueError(
                f"modality {m} dim {desc.dim} does not match config {config.input_dims[m]}"
            )
    vae = MultimodalVae(config)
    n = dataset.num_examples
    k = num_mixture_components(config)
    history = []
    for epoch in range(config.epochs):
        perm = dg.rng_stream(config.seed, _TAG_SHUFFLE, epoch).permutation(n)
        sums = {}
        count = 0
        for step, lo in enumerate(range(0, n, config.batch_size)):
            idx = perm[lo : lo + config.batch_size]
            batch = [mod[idx] for mod in dataset.modalities]
            noise = dg.rng_stream(config.seed, _TAG_NOISE, epoch, step).standard_normal(
                (k, len(idx), config.latent_dim)
            )
            values = vae.store.as_values()
            try:
                loss, terms = _elbo_graph(values, config, batch, noise)
            except NumericError as err:
                raise NumericError(
                    f"{err} (epoch {epoch}, step {step})", epoch=epoch, step=step
                ) from err
            loss.backward()
            grads = {name: values[name].grad for name in vae.store.names()}
            dg.adam_step(vae.store, grads, lr=config.learning_rate)
            sums["loss"] = sums.get("loss", 0.0) + float(loss.data)
            for key, value in terms.items():
                sums[key] = sums.get(key, 0.0) + value
            count += 1
        row = {"epoch": epoch, "loss": sums["loss"] / count}
        for m in range(config.num_modalities):
            row[f"recon_mod{m}"] = sums[f"recon_mod{m}"] / count
        row["kl"] = sums["kl"] / count
        history.append(row)
    return vae, history


def config_with(config: ModelConfig, **overrides) -> ModelConfig:
    return replace(config, **overrides)
