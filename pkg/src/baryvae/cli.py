"""Command-line frontend: aggregate posteriors, train, evaluate, benchmark.

File formats:
  * configs and checkpoints are JSON with stable key order;
  * metrics and report tables are CSV with a header row;
  * floats are serialized in shortest round-trip form, so reruns with the
    same seed produce byte-identical outputs.

Exit codes: 0 success, 2 input/config error, 3 numeric failure, 4 checkpoint
format/version error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import barycenter as bc
from . import data as datamod
from . import evaluation, mmvae
from .errors import CheckpointFormatError, ConfigError, IdxFormatError, NumericError
from .gaussian import DiagGaussian, FullGaussian, GaussianMixture
from .linalg import SymMatrix

CHECKPOINT_VERSION = 1
OUT_ENV_VAR = "BARYVAE_OUT"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_FORMAT = 4

_MODEL_KEYS = {
    "num_modalities",
    "input_dims",
    "latent_dim",
    "hidden",
    "likelihood",
    "aggregation",
    "beta",
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
}
_TOY_KEYS = {
    "num_modalities",
    "examples_per_class",
    "classes",
    "resolution",
    "background_ids",
    "noise_level",
    "seed",
}
_SPLIT_DEFAULTS = {"train_fraction": 0.8, "seed": 0}
_EVAL_DEFAULTS = {
    "importance_samples": 512,
    "probe_samples": 500,
    "coherence_samples": 200,
    "loglik_examples": 64,
    "seed": 0,
}


def _reject_unknown(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown field '{unknown[0]}' in {where}")


@dataclass
class RunConfig:
    model: mmvae.ModelConfig
    data_spec: dict
    split_spec: dict
    eval_spec: dict

    def document(self) -> dict:
        model = {
            "num_modalities": self.model.num_modalities,
            "input_dims": list(self.model.input_dims),
            "latent_dim": self.model.latent_dim,
            "hidden": list(self.model.hidden),
            "likelihood": self.model.likelihood,
            "aggregation": self.model.aggregation,
            "beta": self.model.beta,
            "learning_rate": self.model.learning_rate,
            "batch_size": self.model.batch_size,
            "epochs": self.model.epochs,
            "seed": self.model.seed,
        }
        return {
            "model": model,
            "data": self.data_spec,
            "split": self.split_spec,
            "eval": self.eval_spec,
        }


def build_dataset(data_spec: dict) -> datamod.MultimodalDataset:
    if "toy" in data_spec:
        toy = dict(data_spec["toy"])
        _reject_unknown(toy, _TOY_KEYS, "data.toy section")
        for required in ("num_modalities", "examples_per_class"):
            if required not in toy:
                raise ConfigError(f"missing required field 'data.toy.{required}'")
        if "background_ids" in toy and toy["background_ids"] is not None:
            toy["background_ids"] = tuple(toy["background_ids"])
        try:
            config = datamod.ToyConfig(**toy)
        except ValueError as err:
            raise ConfigError(f"invalid data.toy section: {err}") from err
        return datamod.gen_toy(config)
    if "idx" in data_spec:
        idx = dict(data_spec["idx"])
        _reject_unknown(idx, {"images", "labels"}, "data.idx section")
        for required in ("images", "labels"):
            if required not in idx:
                raise ConfigError(f"missing required field 'data.idx.{required}'")
        return datamod.load_idx(idx["images"], idx["labels"])
    raise ConfigError("data section must contain either 'toy' or 'idx'")


def parse_run_config(doc, seed_override: int = None) -> tuple:
    """Validate the config document; returns (RunConfig, dataset)."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    _reject_unknown(doc, {"model", "data", "split", "eval"}, "config")
    if "data" not in doc:
        raise ConfigError("missing required field 'data'")
    data_spec = doc["data"]
    if not isinstance(data_spec, dict):
        raise ConfigError("data section must be an object")
    _reject_unknown(data_spec, {"toy", "idx"}, "data section")
    dataset = build_dataset(data_spec)

    model = dict(doc.get("model", {}))
    _reject_unknown(model, _MODEL_KEYS, "model section")
    derived_m = dataset.num_modalities
    derived_dims = [desc.dim for desc in dataset.descriptors]
    if model.get("num_modalities", derived_m) != derived_m:
        raise ConfigError(
            f"model.num_modalities {model['num_modalities']} does not match dataset ({derived_m})"
        )
    if "input_dims" in model and list(model["input_dims"]) != derived_dims:
        raise ConfigError(
            f"model.input_dims {model['input_dims']} does not match dataset {derived_dims}"
        )
    model["num_modalities"] = derived_m
    model["input_dims"] = tuple(derived_dims)
    if "hidden" in model:
        model["hidden"] = tuple(model["hidden"])
    if seed_override is not None:
        model["seed"] = seed_override
    try:
        model_cfg = mmvae.ModelConfig(**model)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid model section: {err}") from err

    split_spec = {**_SPLIT_DEFAULTS, **doc.get("split", {})}
    _reject_unknown(split_spec, _SPLIT_DEFAULTS, "split section")
    eval_spec = {**_EVAL_DEFAULTS, **doc.get("eval", {})}
    _reject_unknown(eval_spec, _EVAL_DEFAULTS, "eval section")
    return RunConfig(model_cfg, data_spec, split_spec, eval_spec), dataset


def _load_json(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def save_checkpoint(path: str, run_config: RunConfig, vae: mmvae.MultimodalVae) -> None:
    params = {
        name: {
            "shape": list(arr.shape),
            "data": arr.reshape(-1).tolist(),
        }
        for name, arr in vae.store.params.items()
    }
    _write_json(
        path,
        {
            "format_version": CHECKPOINT_VERSION,
            "config": run_config.document(),
            "params": params,
            "rng_state": {"seed": vae.config.seed, "adam_step": vae.store.step},
        },
    )


def load_checkpoint(path: str):
    """Returns (RunConfig document, MultimodalVae). Raises CheckpointFormatError."""
    try:
        doc = _load_json(path)
    except (OSError, ValueError) as err:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {err}") from err
    if not isinstance(doc, dict) or doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint format_version {doc.get('format_version')!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    try:
        config_doc = doc["config"]
        model = dict(config_doc["model"])
        model["input_dims"] = tuple(model["input_dims"])
        model["hidden"] = tuple(model["hidden"])
        model_cfg = mmvae.ModelConfig(**model)
        vae = mmvae.MultimodalVae(model_cfg)
        for name in vae.store.names():
            entry = doc["params"][name]
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if arr.shape != vae.store.params[name].shape:
                raise ValueError(f"parameter {name} has wrong shape")
            vae.store.params[name] = arr
        vae.store.step = int(doc["rng_state"]["adam_step"])
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointFormatError(f"corrupt checkpoint {path}: {err}") from err
    run_config = RunConfig(
        model_cfg,
        config_doc.get("data", {}),
        {**_SPLIT_DEFAULTS, **config_doc.get("split", {})},
        {**_EVAL_DEFAULTS, **config_doc.get("eval", {})},
    )
    return run_config, vae


# ---------------------------------------------------------------------------
# posterior document schema for `aggregate`
# ---------------------------------------------------------------------------


def _parse_posteriors(doc):
    if not isinstance(doc, dict) or "posteriors" not in doc:
        raise ConfigError("input document must contain a 'posteriors' list")
    entries = doc["posteriors"]
    if not isinstance(entries, list) or not entries:
        raise ConfigError("'posteriors' must be a non-empty list")
    kinds = set()
    posteriors = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "mean" not in entry:
            raise ConfigError(f"posteriors[{i}] must be an object with a 'mean'")
        if "sigma" in entry:
            _reject_unknown(entry, {"mean", "sigma"}, f"posteriors[{i}]")
            kinds.add("diag")
            try:
                posteriors.append(DiagGaussian(entry["mean"], entry["sigma"]))
            except ValueError as err:
                raise ConfigError(f"posteriors[{i}]: {err}") from err
        elif "cov" in entry:
            _reject_unknown(entry, {"mean", "cov"}, f"posteriors[{i}]")
            kinds.add("full")
            try:
                posteriors.append(FullGaussian(entry["mean"], SymMatrix(entry["cov"])))
            except ValueError as err:
                raise ConfigError(f"posteriors[{i}]: {err}") from err
        else:
            raise ConfigError(f"posteriors[{i}] needs 'sigma' or 'cov'")
    if len(kinds) != 1:
        raise ConfigError("posteriors must be all diagonal or all full-covariance")
    weights = doc.get("weights")
    _reject_unknown(doc, {"posteriors", "weights"}, "input document")
    return posteriors, kinds.pop(), weights


def _posterior_to_doc(result, method: str) -> dict:
    if isinstance(result, DiagGaussian):
        return {
            "method": method,
            "mean": result.mean.tolist(),
            "sigma": result.sigma.tolist(),
        }
    if isinstance(result, FullGaussian):
        return {
            "method": method,
            "mean": result.mean.tolist(),
            "cov": result.cov.array.tolist(),
        }
    if isinstance(result, GaussianMixture):
        return {
            "method": method,
            "weights": result.weights.tolist(),
            "components": [
                {"mean": c.mean.tolist(), "sigma": c.sigma.tolist()}
                for c in result.components
            ],
        }
    raise TypeError(f"unexpected aggregation result {type(result).__name__}")


def cmd_aggregate(args) -> int:
    doc = _load_json(args.input)
    posteriors, kind, weights = _parse_posteriors(doc)
    if args.weights is not None:
        weights = [float(w) for w in args.weights.split(",")]
    if weights is None:
        family = bc.WeightedFamily.uniform(posteriors)
    else:
        try:
            family = bc.WeightedFamily(tuple(posteriors), weights)
        except ValueError as err:
            raise ConfigError(f"invalid weights: {err}") from err

    method = args.method
    if kind == "full":
        if method != "wb":
            raise ConfigError(
                f"method {method!r} supports diagonal posteriors only; "
                "full-covariance inputs support 'wb'"
            )
        result = bc.wb_full(family)
    elif method == "poe":
        result = bc.poe(family, np.ones(family.size))
    elif method == "moe":
        result = bc.moe(family)
    elif method == "wb":
        result = bc.wb_diag(family)
    elif method in ("mopoe", "mwb"):
        prior = DiagGaussian(np.zeros(family.dim), np.ones(family.dim))
        result = (bc.mopoe if method == "mopoe" else bc.mwb)(family, prior)
    else:
        raise ConfigError(f"unknown method {method!r}")

    _write_json(args.output, _posterior_to_doc(result, method))
    return EXIT_OK


def _resolve_out_dir(args) -> str:
    out = args.out or os.environ.get(OUT_ENV_VAR) or "baryvae_out"
    os.makedirs(out, exist_ok=True)
    return out


def cmd_train(args) -> int:
    doc = _load_json(args.config)
    run_config, dataset = parse_run_config(doc, seed_override=args.seed)
    train_set, _ = datamod.split(
        dataset, run_config.split_spec["train_fraction"], run_config.split_spec["seed"]
    )
    try:
        vae, history = mmvae.train(run_config.model, train_set)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    out = _resolve_out_dir(args)
    save_checkpoint(os.path.join(out, "checkpoint.json"), run_config, vae)
    header = ["epoch", "loss"]
    header += [f"recon_mod{m}" for m in range(run_config.model.num_modalities)]
    header += ["kl"]
    rows = [[row[key] for key in header] for row in history]
    _write_csv(os.path.join(out, "metrics.csv"), header, rows)
    return EXIT_OK


def cmd_eval(args) -> int:
    run_config, vae = load_checkpoint(args.checkpoint)
    if args.config is not None:
        doc = _load_json(args.config)
        override, _ = parse_run_config(doc)
        run_config = RunConfig(
            run_config.model, override.data_spec, override.split_spec, override.eval_spec
        )
    dataset = build_dataset(run_config.data_spec)
    train_set, test_set = datamod.split(
        dataset, run_config.split_spec["train_fraction"], run_config.split_spec["seed"]
    )
    ev = run_config.eval_spec
    report = evaluation.evaluate_model(
        vae,
        train_set,
        test_set,
        importance_samples=ev["importance_samples"],
        probe_samples=ev["probe_samples"],
        coherence_samples=ev["coherence_samples"],
        loglik_examples=ev["loglik_examples"],
        seed=ev["seed"],
    )
    out = _resolve_out_dir(args)
    m_count = vae.config.num_modalities

    def subset_name(mask: int) -> str:
        return "+".join(str(i) for i in range(m_count) if mask >> i & 1)

    _write_json(
        os.path.join(out, "report.json"),
        {
            "importance_samples": report.importance_samples,
            "latent_accuracy": {
                subset_name(mask): acc for mask, acc in report.latent_accuracy.items()
            },
            "coherence": {
                f"{subset_name(mask)}->{target}": value
                for (mask, target), value in report.coherence.items()
            },
            "log_likelihood": {
                subset_name(mask): ll for mask, ll in report.log_likelihood.items()
            },
            "probe_train_counts": {
                subset_name(mask): n for mask, n in report.probe_train_counts.items()
            },
        },
    )
    _write_csv(
        os.path.join(out, "accuracy.csv"),
        ["subset", "accuracy", "probe_train_count"],
        [
            [subset_name(mask), acc, report.probe_train_counts[mask]]
            for mask, acc in report.latent_accuracy.items()
        ],
    )
    _write_csv(
        os.path.join(out, "coherence.csv"),
        ["source_subset", "target_modality", "coherence"],
        [
            [subset_name(mask), target, value]
            for (mask, target), value in report.coherence.items()
        ],
    )
    _write_csv(
        os.path.join(out, "loglik.csv"),
        ["subset", "log_likelihood", "importance_samples"],
        [
            [subset_name(mask), ll, report.importance_samples]
            for mask, ll in report.log_likelihood.items()
        ],
    )
    return EXIT_OK


def _parse_int_list(text: str):
    return [int(tok) for tok in text.split(",") if tok]


def cmd_bench(args) -> int:
    rng = np.random.default_rng(0)
    rows = []

    def time_call(fn, repeats: int) -> float:
        start = time.perf_counter()
        for _ in range(repeats):
            fn()
        return (time.perf_counter() - start) / repeats

    for dim in _parse_int_list(args.wb_dims):
        for m in _parse_int_list(args.wb_members):
            members = []
            for _ in range(m):
                q = np.linalg.qr(rng.standard_normal((dim, dim)))[0]
                w = rng.uniform(0.5, 2.0, dim)
                members.append(
                    FullGaussian(rng.standard_normal(dim), SymMatrix((q * w) @ q.T))
                )
            family = bc.WeightedFamily.uniform(members)
            rows.append(["wb_full", dim, m, _fmt(time_call(lambda: bc.wb_full(family), 1))])

    for dim in _parse_int_list(args.diag_dims):
        m = max(_parse_int_list(args.wb_members))
        members = [
            DiagGaussian(rng.standard_normal(dim), rng.uniform(0.5, 2.0, dim))
            for _ in range(m)
        ]
        family = bc.WeightedFamily.uniform(members)
        for name, fn in [
            ("poe", lambda: bc.poe(family)),
            ("moe", lambda: bc.moe(family)),
            ("wb_diag", lambda: bc.wb_diag(family)),
        ]:
            rows.append([name, dim, m, _fmt(time_call(fn, 20))])

    print("op,dim,members,seconds_per_call")
    for row in rows:
        print(",".join(str(v) for v in row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="baryvae",
        description="Barycentric posterior aggregation, training, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_agg = sub.add_parser("aggregate", help="aggregate posteriors from a JSON file")
    p_agg.add_argument("--input", required=True, help="input posterior JSON")
    p_agg.add_argument("--output", required=True, help="output posterior JSON")
    p_agg.add_argument(
        "--method", required=True, choices=["poe", "moe", "wb", "mopoe", "mwb"]
    )
    p_agg.add_argument("--weights", default=None, help="comma-separated weights")
    p_agg.set_defaults(func=cmd_aggregate)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True, help="run config JSON")
    p_train.add_argument("--out", default=None, help=f"output dir (default ${OUT_ENV_VAR})")
    p_train.add_argument("--seed", type=int, default=None, help="override model seed")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", default=None, help="optional config override")
    p_eval.add_argument("--out", default=None, help=f"output dir (default ${OUT_ENV_VAR})")
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="time the aggregation operations")
    p_bench.add_argument("--wb-dims", default="2,4,8,16,32")
    p_bench.add_argument("--wb-members", default="2,4,8")
    p_bench.add_argument("--diag-dims", default="64,512,4096")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckpointFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, IdxFormatError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
