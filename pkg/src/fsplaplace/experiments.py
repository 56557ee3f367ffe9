"""Experiment orchestration: data, model, prior, fitting and artifact files."""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import softmax

from .baselines import IsotropicPrior, laplace_ws, train_map_ws
from .config import ExperimentConfig
from .context import parse_sampler
from .data import Dataset, gen_sine, gen_two_moons
from .errors import ConfigError
from .gp import GpPrior, gp_regress, grid_search
from .kernels import Linear, Stationary, parse_kernel
from .laplace import LanczosConfig, PosteriorFactors, context_variance_terms, fsp_laplace
from .likelihoods import Categorical, Gaussian
from .nn import MlpSpec, forward, init_params
from .plot import PALETTE, Panel, write_svg
from .predict import ece, expected_log_likelihood, lin_predict, ood_stump, predictive_entropy, sample_posterior
from .train import TrainConfig, train_map, write_train_log

log = logging.getLogger(__name__)


@contextlib.contextmanager
def stage(name):
    """Tag any exception escaping the block with the pipeline stage name."""
    try:
        yield
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise


def write_csv(path, header, rows) -> None:
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.17g}"
        return str(v)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([cell(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# building blocks


@dataclass
class Setup:
    spec: MlpSpec
    prior: GpPrior
    likelihood: object
    train: Dataset
    val: Dataset | None
    test: Dataset
    prior_info: dict


def make_datasets(cfg: ExperimentConfig):
    d, seed = cfg["data"], cfg.seed
    if cfg.task == "two-moons":
        gen = lambda n, s: gen_two_moons(n, d["noise"], s)
    else:
        gen = lambda n, s: gen_sine(n, s, d["noise"])
    train = gen(d["n_train"], seed)
    val = gen(d["n_val"], seed + 1) if d["n_val"] > 0 else None
    test = gen(d["n_test"], seed + 2) if d["n_test"] > 0 else None
    return train, val, test


def make_prior(cfg: ExperimentConfig, kernel_text, data: Dataset, n_outputs: int):
    """Parse the kernel, optionally tuning (var, l) by log marginal likelihood."""
    kernel = parse_kernel(kernel_text)
    p = cfg["prior"]
    info = {"kernel": kernel_text}
    if p["select"] == "lml-grid":
        if not isinstance(kernel, Stationary):
            raise ConfigError("lml-grid selection needs a single base kernel")
        if data.task != "regression":
            raise ConfigError("lml-grid selection is only available for regression")
        extra = {k: getattr(kernel, k) for k in ("alpha", "period") if hasattr(kernel, k)}
        cls = type(kernel)
        result = grid_search(lambda var, l: cls(var, l, **extra), data.X, data.y,
                             {"var": p["grid_var"], "l": p["grid_l"]}, noise=cfg["likelihood"]["noise"],
                             mean=p["mean"])
        kernel = cls(result.params["var"], result.params["l"], **extra)
        info.update(selected_var=result.params["var"], selected_l=result.params["l"], lml=result.lml)
    elif p["select"] != "none":
        raise ConfigError(f"unknown prior selection {p['select']!r}")
    prior = GpPrior.from_kernel(kernel, n_outputs, p["mean"], jitter=cfg["train"]["jitter"])
    return prior, info


def make_spec(cfg, d_in, d_out):
    m = cfg["model"]
    return MlpSpec((d_in, *m["hidden"], d_out), m["activation"])


def build_setup(cfg: ExperimentConfig, kernel_text=None) -> Setup:
    if cfg.task == "oracle-blr":
        raise ConfigError("oracle-blr has no network setup")
    with stage("data"):
        train, val, test = make_datasets(cfg)
    if cfg.task == "two-moons":
        likelihood, O = Categorical(2), 2
    else:
        likelihood, O = Gaussian(cfg["likelihood"]["noise"]), 1
    with stage("prior"):
        prior, info = make_prior(cfg, kernel_text or cfg["prior"]["kernel"], train, O)
    spec = make_spec(cfg, train.X.shape[1], O)
    return Setup(spec, prior, likelihood, train, val, test, info)


def train_config(cfg: ExperimentConfig, context_count=None) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        batch_size=t["batch_size"], context_count=context_count or t["context_count"],
        learning_rate=t["learning_rate"], max_epochs=t["max_epochs"], patience=t["patience"],
        eval_every=t["eval_every"], jitter=t["jitter"], seed=cfg.seed,
        learn_noise=cfg["likelihood"]["learn_noise"],
    )


def lanczos_config(cfg: ExperimentConfig) -> LanczosConfig:
    l = cfg["laplace"]
    return LanczosConfig(max_rank=l["max_rank"], tol=l["tol"], eps_rel=l["eps_rel"])


def fit_fsp_map(cfg, setup: Setup, context_count=None):
    sampler = parse_sampler(cfg["train"]["sampler"], setup.train.X.shape[1], pool=setup.train.X)
    w0 = init_params(setup.spec, cfg.seed)
    with stage("train"):
        return train_map(setup.spec, w0, setup.prior, setup.likelihood, setup.train, sampler,
                         train_config(cfg, context_count), val=setup.val)


def covariance_context(cfg, setup: Setup, context_count=None):
    sampler = parse_sampler(cfg["laplace"]["sampler"], setup.train.X.shape[1], pool=setup.train.X)
    return sampler.sample(context_count or cfg["laplace"]["context_count"], np.random.SeedSequence([cfg.seed, 3]))


def fit_fsp_laplace(cfg, setup: Setup, params, likelihood=None, context_count=None) -> PosteriorFactors:
    with stage("laplace"):
        C = covariance_context(cfg, setup, context_count)
        return fsp_laplace(setup.spec, params, setup.prior, C, setup.train.X, likelihood or setup.likelihood,
                           lanczos_config(cfg), cfg["laplace"]["bound_tol"], seed=cfg.seed)


def map_only(params) -> PosteriorFactors:
    return PosteriorFactors(np.asarray(params), np.zeros((params.size, 0)), np.zeros(0), 0)


def fit_baselines(cfg, setup: Setup):
    """Weight-space MAP and its dense Laplace posterior, keyed by method name."""
    b = cfg["baselines"]
    out = {}
    wanted = set(b["methods"])
    unknown = wanted - {"map", "laplace", "gp"}
    if unknown:
        raise ConfigError(f"unknown baseline methods {sorted(unknown)}")
    if wanted & {"map", "laplace"}:
        iso = IsotropicPrior(b["prior_scale"])
        with stage("baseline-map"):
            res = train_map_ws(setup.spec, init_params(setup.spec, cfg.seed), iso, setup.likelihood, setup.train,
                               b["learning_rate"], b["steps"], seed=cfg.seed)
        if "map" in wanted:
            out["map"] = map_only(res.params)
        if "laplace" in wanted:
            with stage("baseline-laplace"):
                out["laplace"] = laplace_ws(setup.spec, res.params, iso, setup.train.X, setup.likelihood)
    if "gp" in wanted:
        if setup.train.task != "regression":
            raise ConfigError("the GP baseline is only available for regression")
        with stage("baseline-gp"):
            out["gp"] = gp_regress(setup.prior, setup.train.X, setup.train.y, setup.likelihood.sigma)
    return out


def output_grid(cfg, dim):
    o = cfg["output"]
    lo = np.broadcast_to(o["lower"], (dim,))
    hi = np.broadcast_to(o["upper"], (dim,))
    axes = [np.linspace(a, b, o["count"]) for a, b in zip(lo, hi)]
    if dim == 1:
        return axes[0].reshape(-1, 1), axes
    mesh = np.meshgrid(*axes, indexing="xy")
    return np.stack([m.reshape(-1) for m in mesh], axis=1), axes


def regression_metrics(post, spec, lik, test, n_mc, seed):
    mean = forward(spec, post.map, test.X)
    return {
        "expected_log_likelihood": expected_log_likelihood(post, spec, lik, test.X, test.y, n_mc, seed),
        "mse": float(np.mean((mean - test.y) ** 2)),
    }


def bound_excess(spec, pf: PosteriorFactors, prior: GpPrior) -> float:
    """Largest ``diag(J S S^T J^T) - diag K`` over the covariance context points."""
    if pf.rank == 0:
        return float(-prior.kernel.diag(pf.context).min())
    var = context_variance_terms(spec, pf.map, pf.context, pf.S).sum(axis=0)
    return float(np.max(var - prior.kernel.diag(pf.context)))


def roughness(samples) -> float:
    """Mean squared second difference of sampled curves on an even grid."""
    d2 = np.diff(samples, n=2, axis=-1)
    return float(np.mean(np.sum(d2 * d2, axis=-1)))


# task runners; each writes into ``out`` and returns the metrics dict


def _regression_panel(title, x, mean, std, data, color, samples=None):
    p = Panel(title)
    p.band(x, mean - 2 * std, mean + 2 * std, color)
    if samples is not None:
        for s in samples:
            p.line(x, s, color, width=0.7, opacity=0.6)
    p.scatter(data.X[:, 0], data.y[:, 0], PALETTE["data"])
    p.line(x, mean, PALETTE["map"] if color != PALETTE["map"] else "#000", width=1.8)
    return p


def run_sine(cfg: ExperimentConfig, out: Path) -> dict:
    setup = build_setup(cfg)
    res = fit_fsp_map(cfg, setup)
    write_train_log(out / "train_log.csv", res.log)
    pf = fit_fsp_laplace(cfg, setup, res.params, res.likelihood)
    lik = res.likelihood
    Xq, _ = output_grid(cfg, 1)
    x = Xq[:, 0]
    n_mc, n_s = cfg["output"]["n_mc"], cfg["output"]["n_samples"]
    with stage("predict"):
        pred = lin_predict(setup.spec, pf, Xq)
        samples = sample_posterior(pf, setup.spec, Xq, n_s, cfg.seed)[:, :, 0]
        prior_std = np.sqrt(setup.prior.kernel.diag(Xq))
        columns = {"x": x, "fsp_mean": pred.mean[:, 0], "fsp_std": pred.std[:, 0]}
        metrics = {"prior": setup.prior_info, "fsp": {
            **regression_metrics(pf, setup.spec, lik, setup.test, n_mc, cfg.seed),
            "rank": pf.rank, "k": pf.k, "noise": lik.sigma, "bound_excess": bound_excess(setup.spec, pf, setup.prior),
            "train_steps": len(res.log),
        }}
        panels = [_regression_panel("FSP-Laplace", x, pred.mean[:, 0], pred.std[:, 0], setup.train, PALETTE["fsp"], samples)]
        for name, post in fit_baselines(cfg, setup).items():
            if name == "gp":
                mean, var = post.predict(Xq)
                std = np.sqrt(var)
                gm, gv = post.predict(setup.test.X)
                s2 = setup.likelihood.sigma ** 2
                resid = setup.test.y[:, 0] - gm
                ell = np.mean(-0.5 * np.log(2 * np.pi * s2) - 0.5 * (resid ** 2 + gv) / s2)
                metrics["gp"] = {"expected_log_likelihood": float(ell), "mse": float(np.mean(resid ** 2))}
            else:
                p = lin_predict(setup.spec, post, Xq)
                mean, std = p.mean[:, 0], p.std[:, 0]
                metrics[name] = regression_metrics(post, setup.spec, setup.likelihood, setup.test, n_mc, cfg.seed)
            columns[f"{name}_mean"] = mean
            if name != "map":
                columns[f"{name}_std"] = std
            panels.append(_regression_panel(name.upper() if name != "laplace" else "Laplace", x, mean,
                                            std if name != "map" else np.zeros_like(mean), setup.train, PALETTE[name]))
        columns["prior_std"] = prior_std
    with stage("write"):
        write_csv(out / "predictions.csv", list(columns), zip(*columns.values()))
        write_csv(out / "samples.csv", ["x"] + [f"fsp_{i}" for i in range(n_s)], zip(x, *samples))
        write_svg(out / "plot.svg", panels, columns=min(len(panels), 2))
    return metrics


def _prob_stats(post, spec, X, n_samples, seed):
    P1 = softmax(sample_posterior(post, spec, X, n_samples, seed), axis=-1)[..., 1]
    return P1.mean(axis=0), P1.std(axis=0)


def far_ring(n, radius=4.0):
    ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def classification_metrics(post, spec, lik, test, n_mc, n_samples, seed):
    probs = softmax(sample_posterior(post, spec, test.X, n_samples, seed), axis=-1).mean(axis=0)
    far = far_ring(64)
    far_probs = softmax(sample_posterior(post, spec, far, n_samples, seed), axis=-1).mean(axis=0)
    _, std_far = _prob_stats(post, spec, far, n_samples, seed)
    _, std_test = _prob_stats(post, spec, test.X, n_samples, seed)
    return {
        "accuracy": float(np.mean(probs.argmax(axis=1) == test.y)),
        "ece": ece(probs, test.y),
        "expected_log_likelihood": expected_log_likelihood(post, spec, lik, test.X, test.y, n_mc, seed),
        "ood_accuracy": ood_stump(predictive_entropy(probs), predictive_entropy(far_probs))[1],
        "far_std_min": float(std_far.min()),
        "far_std_mean": float(std_far.mean()),
        "test_std_mean": float(std_test.mean()),
        "test_std_max": float(std_test.max()),
    }


def run_two_moons(cfg: ExperimentConfig, out: Path) -> dict:
    setup = build_setup(cfg)
    res = fit_fsp_map(cfg, setup)
    write_train_log(out / "train_log.csv", res.log)
    pf = fit_fsp_laplace(cfg, setup, res.params)
    Xq, axes = output_grid(cfg, 2)
    n_mc, n_s = cfg["output"]["n_mc"], cfg["output"]["n_samples"]
    with stage("predict"):
        posts = {"fsp": pf, **fit_baselines(cfg, setup)}
        columns = {"x1": Xq[:, 0], "x2": Xq[:, 1]}
        metrics = {"prior": setup.prior_info}
        panels = []
        for name, post in posts.items():
            mean, std = _prob_stats(post, setup.spec, Xq, n_s, cfg.seed)
            columns[f"{name}_p1_mean"] = mean
            columns[f"{name}_p1_std"] = std
            metrics[name] = classification_metrics(post, setup.spec, setup.likelihood, setup.test, n_mc, n_s, cfg.seed)
            shape = (len(axes[1]), len(axes[0]))
            for label, values, lim in (("p(y=1)", mean, (0, 1)), ("std p(y=1)", std, (0, 0.5))):
                p = Panel(f"{name}: {label}")
                p.heatmap(axes[0], axes[1], values.reshape(shape), *lim)
                for c, color in ((0, PALETTE["map"]), (1, PALETTE["laplace"])):
                    pts = setup.train.X[setup.train.y == c]
                    p.scatter(pts[:, 0], pts[:, 1], color, r=1.5)
                panels.append(p)
        metrics["fsp"].update(rank=pf.rank, k=pf.k, bound_excess=bound_excess(setup.spec, pf, setup.prior))
    with stage("write"):
        write_csv(out / "predictions.csv", list(columns), zip(*columns.values()))
        S = sample_posterior(pf, setup.spec, Xq, cfg["output"]["n_samples"], cfg.seed)
        P1 = softmax(S, axis=-1)[..., 1]
        write_csv(out / "samples.csv", ["x1", "x2"] + [f"fsp_{i}" for i in range(P1.shape[0])],
                  zip(Xq[:, 0], Xq[:, 1], *P1))
        write_svg(out / "plot.svg", panels, columns=2)
    return metrics


def run_prior_ablation(cfg: ExperimentConfig, out: Path) -> dict:
    Xq, _ = output_grid(cfg, 1)
    x = Xq[:, 0]
    n_s = cfg["output"]["n_samples"]
    pred_rows, sample_rows, panels, metrics = [], [], [], {}
    for text in cfg["ablation"]["kernels"]:
        with stage(f"prior-ablation[{text}]"):
            setup = build_setup(cfg, text)
            res = fit_fsp_map(cfg, setup)
            pf = fit_fsp_laplace(cfg, setup, res.params, res.likelihood)
            pred = lin_predict(setup.spec, pf, Xq)
            S = sample_posterior(pf, setup.spec, Xq, n_s, cfg.seed)[:, :, 0]
        pred_rows += [(text, a, b, c) for a, b, c in zip(x, pred.mean[:, 0], pred.std[:, 0])]
        sample_rows += [(text, a, *col) for a, col in zip(x, S.T)]
        metrics[text] = {"roughness": roughness(S), "rank": pf.rank, "k": pf.k,
                         "bound_excess": bound_excess(setup.spec, pf, setup.prior)}
        panels.append(_regression_panel(text, x, pred.mean[:, 0], pred.std[:, 0], setup.train, PALETTE["fsp"], S))
    with stage("write"):
        write_csv(out / "predictions.csv", ["kernel", "x", "fsp_mean", "fsp_std"], pred_rows)
        write_csv(out / "samples.csv", ["kernel", "x"] + [f"fsp_{i}" for i in range(n_s)], sample_rows)
        write_svg(out / "plot.svg", panels, columns=2)
    return metrics


def run_context_ablation(cfg: ExperimentConfig, out: Path) -> dict:
    setup = build_setup(cfg)
    Xq, _ = output_grid(cfg, setup.train.X.shape[1])
    x = Xq[:, 0]
    far = np.array([[3.0]])
    rows, pred_rows, panels, metrics = [], [], [], {}
    for M in cfg["ablation"]["context_counts"]:
        with stage(f"context-ablation[M={M}]"):
            res = fit_fsp_map(cfg, setup, context_count=M)
            pf = fit_fsp_laplace(cfg, setup, res.params, res.likelihood, context_count=M)
            pred = lin_predict(setup.spec, pf, Xq)
            std_far = float(lin_predict(setup.spec, pf, far).std[0, 0])
        excess = bound_excess(setup.spec, pf, setup.prior)
        std = pred.std[:, 0]
        rows.append((M, pf.k, pf.rank, float(std.max()), float(std.min()), std_far, excess, bool(np.all(np.isfinite(std)))))
        pred_rows += [(M, a, b, c) for a, b, c in zip(x, pred.mean[:, 0], std)]
        metrics[str(M)] = {"k": pf.k, "rank": pf.rank, "max_std": float(std.max()), "std_far": std_far,
                           "bound_excess": excess}
        panels.append(_regression_panel(f"M = {M}", x, pred.mean[:, 0], std, setup.train, PALETTE["fsp"]))
    with stage("write"):
        write_csv(out / "ablation.csv", ["M", "k", "rank", "max_std", "min_std", "std_far", "bound_excess", "finite"], rows)
        write_csv(out / "predictions.csv", ["M", "x", "fsp_mean", "fsp_std"], pred_rows)
        write_svg(out / "plot.svg", panels, columns=2)
    return metrics


def blr_posterior(Phi, y, prior_cov, noise):
    """Closed-form Bayesian linear regression: returns (mean, covariance)."""
    prec = np.linalg.inv(prior_cov) + Phi.T @ Phi / noise ** 2
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    return cov @ Phi.T @ y / noise ** 2, cov


def oracle_problem(cfg: ExperimentConfig):
    """Random linear-in-parameters regression instance for the conjugate check."""
    o = cfg["oracle"]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    d = o["n_features"]
    P = d + 1
    A = rng.standard_normal((P, P))
    prior_cov = A @ A.T / P + 0.5 * np.eye(P)
    X = rng.standard_normal((o["n_train"], d))
    noise = cfg["likelihood"]["noise"]
    phi = lambda Z: np.hstack([Z, np.ones((Z.shape[0], 1))])
    w_true = rng.multivariate_normal(np.zeros(P), prior_cov)
    y = phi(X) @ w_true + noise * rng.standard_normal(X.shape[0])
    Xq = rng.standard_normal((o["n_query"], d))
    C = rng.standard_normal((o["n_context"], d))
    return dict(X=X, y=y, Xq=Xq, C=C, prior_cov=prior_cov, noise=noise, phi=phi)


def run_oracle_blr(cfg: ExperimentConfig, out: Path) -> dict:
    pb = oracle_problem(cfg)
    X, y, Xq, C, phi = pb["X"], pb["y"], pb["Xq"], pb["C"], pb["phi"]
    spec = MlpSpec((X.shape[1], 1), "identity")
    lik = Gaussian(pb["noise"])
    with stage("oracle"):
        mu, cov = blr_posterior(phi(X), y, pb["prior_cov"], pb["noise"])
        # layer-major flattening of an affine layer is (W row-major, b) == (w_1..w_d, bias)
        prior = GpPrior.from_kernel(Linear(pb["prior_cov"]), 1, jitter=cfg["train"]["jitter"])
        pf = fsp_laplace(spec, mu, prior, C, X, lik, lanczos_config(cfg), cfg["laplace"]["bound_tol"], cfg.seed)
        fsp = lin_predict(spec, pf, Xq)
        Pq = phi(Xq)
        blr_mean = Pq @ mu
        blr_var = np.einsum("ij,jk,ik->i", Pq, cov, Pq)
        s = cfg["baselines"]["prior_scale"]
        mu_ws, cov_ws = blr_posterior(phi(X), y, s ** 2 * np.eye(mu.size), pb["noise"])
        ws = lin_predict(spec, laplace_ws(spec, mu_ws, IsotropicPrior(s), X, lik), Xq)
        ws_var = np.einsum("ij,jk,ik->i", Pq, cov_ws, Pq)
    fsp_var = fsp.var[:, 0]
    metrics = {
        "max_abs_var_diff": float(np.max(np.abs(fsp_var - blr_var))),
        "max_rel_var_diff": float(np.max(np.abs(fsp_var - blr_var) / blr_var)),
        "max_rel_mean_diff": float(np.max(np.abs(fsp.mean[:, 0] - blr_mean) / np.maximum(np.abs(blr_mean), 1e-12))),
        "ws_max_rel_var_diff": float(np.max(np.abs(ws.var[:, 0] - ws_var) / ws_var)),
        "ws_max_rel_mean_diff": float(np.max(np.abs(ws.mean[:, 0] - Pq @ mu_ws) / np.maximum(np.abs(Pq @ mu_ws), 1e-12))),
        "rank": pf.rank,
        "k": pf.k,
    }
    with stage("write"):
        rows = [(i, *Xq[i], fsp.mean[i, 0], fsp_var[i], blr_mean[i], blr_var[i]) for i in range(Xq.shape[0])]
        write_csv(out / "predictions.csv",
                  ["index"] + [f"x{j + 1}" for j in range(Xq.shape[1])] + ["fsp_mean", "fsp_var", "blr_mean", "blr_var"], rows)
        p = Panel("posterior variance at query points")
        idx = np.arange(Xq.shape[0], dtype=float)
        p.scatter(idx, blr_var, PALETTE["gp"], r=4)
        p.scatter(idx, fsp_var, PALETTE["fsp"], r=2)
        write_svg(out / "plot.svg", [p])
    return metrics


RUNNERS = {
    "sine-regression": run_sine,
    "two-moons": run_two_moons,
    "prior-ablation": run_prior_ablation,
    "context-ablation": run_context_ablation,
    "oracle-blr": run_oracle_blr,
}


def run_experiment(cfg: ExperimentConfig, out=None) -> Path:
    """Run ``cfg.task`` and write its artifacts to ``out`` (default ``cfg.out``).

    Files are produced in a scratch directory and only moved into place once
    the whole run succeeded, so a failing run leaves no partial artifacts.
    """
    out = Path(out or cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".partial-", dir=out.parent))
    try:
        metrics = RUNNERS[cfg.task](cfg, scratch)
        write_json(scratch / "metrics.json", {"task": cfg.task, "seed": cfg.seed, "metrics": metrics})
        text = cfg.text
        if cfg.overrides:
            text += "\n# command-line overrides: " + ", ".join(f"{k}={v}" for k, v in sorted(cfg.overrides.items())) + "\n"
        (scratch / "config.ini").write_text(text)
        out.mkdir(exist_ok=True)
        for f in sorted(scratch.iterdir()):
            shutil.move(str(f), str(out / f.name))
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return out
