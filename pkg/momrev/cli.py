# momrev/cli.py
from __future__ import annotations

import argparse
import itertools
import math
import os
import sys
from dataclasses import asdict, replace
from typing import Callable, Dict, List, Optional

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import accuracy_score, mean_squared_error

from .artifact_store import ArtifactStore
from .autodiff import ActivationCounter, Cotangent, backward_memory_free
from .checkpoint import save_network
from .config import Config, config_from_dict, load_config
from .datasets import Dataset, make_cubic, make_lista_problem, make_rings
from .errors import EXIT_OK, ConfigError, DivergenceError, MomrevError, exit_code_for
from .lintheory import lambda_eps, representable, revnet_instability_check
from .logger import get_logger
from .models import LinearHead, MomentumModel, RevNetModel, lista_network, mlp_network, revnet_lista
from .momentum_net import forward
from .odesim import (
    convergence_eps_to_infty,
    convergence_eps_to_zero,
    crossing_witness,
    damped_oscillator_check,
    free_velocity_flow,
    integrate_second_order,
)
from .revarith import Ratio, buffer_bits
from .run_ledger import RunLedger, RunManifest, load_manifest
from .trainer import LassoLoss, LogisticLoss, MSELoss, TrainConfig, ista_iterate, lasso_loss, sgd_train

log = get_logger(__name__)

RESNET = Ratio(0, 1)

# CLI command -> config section
SECTIONS = {
    "train-rings": "rings",
    "train-cubic": "cubic",
    "lista": "lista",
    "memcheck": "memcheck",
    "analyze-linear": "analyze_linear",
    "odecheck": "odecheck",
}


def _frac_bits(cfg: Config, mode: str) -> Optional[int]:
    if mode not in ("exact", "float"):
        raise ConfigError(f"mode must be 'exact' or 'float', got {mode!r}")
    return cfg.global_.frac_bits if mode == "exact" else None


def _train_config(cfg: Config, section, gamma: Ratio, depth: int) -> TrainConfig:
    return TrainConfig(
        seed=cfg.global_.seed,
        batch_size=section.batch_size,
        learning_rate=section.learning_rate,
        iterations=section.iterations,
        gamma=gamma,
        depth=depth,
        optimizer=section.optimizer,
        eval_every=section.eval_every,
        threads=cfg.global_.threads,
    )


def _save_history(store: ArtifactStore, name: str, result) -> str:
    header, rows = result.csv_rows()
    return store.save_csv(name, header, rows)


# ------------------------
# Experiments
# ------------------------
def cmd_train_rings(cfg: Config, store: ArtifactStore) -> None:
    """ResNet vs Momentum ResNet on four nested rings, same architecture and budget."""
    rc, seed = cfg.rings, cfg.global_.seed
    X, y = make_rings(rc.n_per_ring, rc.radii, rc.noise, seed)
    data = Dataset(X, y, X, y)
    gamma = Ratio.parse(cfg.global_.gamma)
    summary = []

    for name, gam in (("resnet", RESNET), ("momentum", gamma)):
        rng = np.random.default_rng(seed)
        exact = gam.invertible and rc.mode == "exact"
        net = mlp_network(2, rc.hidden, rc.depth, gam, rng, frac_bits=_frac_bits(cfg, rc.mode) if exact else None)
        model = MomentumModel(
            net,
            head=LinearHead.random(2, rng),
            backward="memory_free" if gam.invertible and rc.depth else "stored",
            dim=2,
        )
        log.info("rings: training %s (gamma=%s, depth=%d)", name, gam, rc.depth)
        result = sgd_train(
            model, data, LogisticLoss(), _train_config(cfg, rc, gam, rc.depth),
            stop_when=lambda m: _separates(m, X, y),
        )
        _save_history(store, f"rings_{name}_history.csv", result)
        if rc.depth:
            store.save_bytes(f"rings_{name}_network.mrnc", save_network(result.model.network))

        trained = result.model
        acc = accuracy_score(y, (trained.predict(X) > 0).astype(np.int64))
        clouds = trained.layer_states(X)
        rows = ([k, i, int(y[i]), float(s[i, 0]), float(s[i, 1])] for k, s in enumerate(clouds) for i in range(len(X)))
        store.save_csv(f"rings_{name}_layers.csv", ["layer", "point", "label", "x0", "x1"], rows)
        iterations = result.stopped_at or rc.iterations
        summary.append([name, str(gam), rc.depth, float(acc), result.history[-1].train_loss if result.history else "", iterations])
        log.info("rings: %s train accuracy %.4f", name, acc)

    baseline = LogisticRegression().fit(X, y)
    summary.append(["linear_readout", "", 0, float(accuracy_score(y, baseline.predict(X))), "", ""])
    store.save_csv(
        "rings_summary.csv", ["model", "gamma", "depth", "train_accuracy", "final_train_loss", "iterations"], summary
    )


def _separates(model, X: np.ndarray, y: np.ndarray) -> bool:
    return accuracy_score(y, (model.predict(X) > 0).astype(np.int64)) == 1.0


def _min_trajectory_gap(layers: List[np.ndarray]) -> float:
    return float(min(np.min(np.diff(np.sort(s[:, 0]))) for s in layers))


def cmd_train_cubic(cfg: Config, store: ArtifactStore) -> None:
    """Fit x -> -x^3 with tied weights; the ResNet flow cannot reverse the order of points."""
    cc, seed = cfg.cubic, cfg.global_.seed
    X, T = make_cubic(cc.n_train, (cc.low, cc.high), seed)
    Xt, Tt = make_cubic(cc.n_test, (cc.low, cc.high), seed + 1)
    data = Dataset(X, T, Xt, Tt)
    gamma = Ratio.parse(cfg.global_.gamma)
    grid = np.linspace(cc.low, cc.high, 21)[:, None]
    summary = []

    for name, gam in (("resnet", RESNET), ("momentum", gamma)):
        rng = np.random.default_rng(seed)
        exact = gam.invertible and cc.mode == "exact"
        net = mlp_network(1, cc.hidden, cc.depth, gam, rng, tied=True,
                          frac_bits=_frac_bits(cfg, cc.mode) if exact else None)
        model = MomentumModel(net, backward="memory_free" if gam.invertible and cc.depth else "stored", dim=1)
        log.info("cubic: training %s (gamma=%s)", name, gam)
        result = sgd_train(model, data, MSELoss(), _train_config(cfg, cc, gam, cc.depth))
        _save_history(store, f"cubic_{name}_history.csv", result)
        if cc.depth:
            store.save_bytes(f"cubic_{name}_network.mrnc", save_network(result.model.network))

        trained = result.model
        layers = trained.layer_states(grid)
        rows = ([k, float(grid[i, 0]), float(s[i, 0])] for k, s in enumerate(layers) for i in range(len(grid)))
        store.save_csv(f"cubic_{name}_trajectories.csv", ["layer", "x_in", "x"], rows)
        mse = mean_squared_error(Tt, trained.predict(Xt))
        summary.append([name, str(gam), cc.depth, float(mse), _min_trajectory_gap(layers)])
        log.info("cubic: %s test MSE %.6g", name, mse)

    store.save_csv("cubic_summary.csv", ["model", "gamma", "depth", "test_mse", "min_trajectory_gap"], summary)


def cmd_lista(cfg: Config, store: ArtifactStore) -> None:
    """ISTA, LISTA, Momentum-LISTA and RevNet-LISTA test Lasso losses per depth."""
    lc, seed = cfg.lista, cfg.global_.seed
    problem = make_lista_problem(lc.d, lc.p, lc.lasso_lambda, lc.n_train, lc.n_test, seed)
    data, loss = problem.dataset(), LassoLoss(problem)
    gamma = Ratio.parse(lc.gamma)
    frac_bits = _frac_bits(cfg, lc.mode)
    rows = []

    for depth in lc.depths:
        ista = lasso_loss(problem, ista_iterate(problem, problem.y_test, depth), problem.y_test)
        rows.append([depth, "ista", ista, ista, "ok"])
        variants: Dict[str, object] = {
            "lista": MomentumModel(lista_network(problem, depth), input_mode="context", backward="stored"),
            "momentum_lista": MomentumModel(
                lista_network(problem, depth, gamma, frac_bits),
                input_mode="context",
                backward="memory_free" if frac_bits is not None else "stored",
            ),
            "revnet_lista": RevNetModel(revnet_lista(problem, depth), dim=problem.p, input_mode="context"),
        }
        for name, model in variants.items():
            initial = final = math.inf
            try:
                initial = model.evaluate(problem.y_test, problem.y_test, loss)
                result = sgd_train(model, data, loss, _train_config(cfg, lc, gamma, depth))
                _save_history(store, f"lista_{name}_depth{depth}_history.csv", result)
                final = result.model.evaluate(problem.y_test, problem.y_test, loss)
            except DivergenceError as e:
                log.warning("lista: depth %d %s diverged: %s", depth, name, e)
            # a blown-up variant is a result (loss inf), not a failed run
            initial, final = (v if math.isfinite(v) else math.inf for v in (initial, final))
            status = "ok" if math.isfinite(final) else "diverged"
            rows.append([depth, name, initial, final, status])
            log.info("lista: depth %d %s test loss %.6g (init %.6g, ista %.6g, %s)",
                     depth, name, final, initial, ista, status)

    store.save_csv("lista_losses.csv", ["depth", "model", "initial_test_loss", "test_loss", "status"], rows)


def cmd_memcheck(cfg: Config, store: ArtifactStore) -> None:
    """Information-buffer growth and live activations of the memory-free backward."""
    mc, seed = cfg.memcheck, cfg.global_.seed
    rows = []
    for text in mc.gammas:
        gamma = Ratio.parse(text)
        for depth in mc.depths:
            rng = np.random.default_rng(seed)
            net = mlp_network(mc.dim, mc.hidden, depth, gamma, rng, frac_bits=cfg.global_.frac_bits)
            x0 = rng.standard_normal((mc.batch, mc.dim))
            _, final = forward(net, x0)
            bits = buffer_bits(final.buffers)
            predicted = depth * math.log2(gamma.d / gamma.n)
            counter = ActivationCounter()
            # also proves the buffers unwind to zero at the input
            backward_memory_free(net, final, Cotangent.from_output(np.ones_like(x0)), None, counter)
            lo, hi = int(bits.min()), int(bits.max())
            within = lo >= predicted - mc.slack_bits and hi <= predicted + depth + mc.slack_bits
            rows.append([depth, str(gamma), lo, hi, predicted, predicted + depth, counter.peak, within])
            log.info("memcheck: gamma=%s depth=%d bits=[%d, %d] predicted=%.2f peak=%d",
                     gamma, depth, lo, hi, predicted, counter.peak)
    store.save_csv(
        "memcheck.csv",
        ["depth", "gamma", "min_buffer_bits", "max_buffer_bits", "predicted_bits", "upper_bits",
         "peak_live_activations", "within_bounds"],
        rows,
    )


def cmd_analyze_linear(cfg: Config, store: ArtifactStore) -> None:
    ac, seed = cfg.analyze_linear, cfg.global_.seed
    store.save_csv("linear_lambda.csv", ["eps", "lambda_eps"], ([e, lambda_eps(e)] for e in ac.eps_grid))

    battery = []
    for eps in ac.battery_eps:
        for l1, l2 in itertools.combinations_with_replacement(sorted(ac.battery_values), 2):
            verdict = representable(np.diag([l1, l2]), eps)
            battery.append([eps, l1, l2, verdict.representable, verdict.lambda_eps])
    store.save_csv("linear_battery.csv", ["eps", "lambda1", "lambda2", "representable", "lambda_eps"], battery)

    rng = np.random.default_rng(seed)
    revnet = []
    for d in ac.revnet_dims:
        unstable = sum(
            revnet_instability_check(rng.standard_normal((d, d)), rng.standard_normal((d, d)))
            for _ in range(ac.revnet_pairs)
        )
        revnet.append([d, ac.revnet_pairs, unstable, unstable / ac.revnet_pairs])
        log.info("analyze-linear: d=%d %d/%d RevNet fixed points unstable", d, unstable, ac.revnet_pairs)
    store.save_csv("linear_revnet.csv", ["dim", "pairs", "unstable", "fraction"], revnet)


def cmd_odecheck(cfg: Config, store: ArtifactStore) -> None:
    oc = cfg.odecheck

    def decay(x):
        return -x

    closed = [[eps, oc.h, *damped_oscillator_check(eps, 1.0, oc.h)] for eps in oc.closed_form_eps]
    store.save_csv("ode_closed_form.csv", ["eps", "h", "integrated", "closed_form", "relative_error"], closed)

    to_zero = convergence_eps_to_zero(decay, [1.0], [0.0], oc.eps_to_zero, oc.h)
    store.save_csv("ode_eps_to_zero.csv", ["eps", "sup_error"], to_zero)
    to_infty = convergence_eps_to_infty(decay, [1.0], [0.0], oc.eps_to_infty, oc.h)
    store.save_csv("ode_eps_to_infty.csv", ["eps", "sup_error"], to_infty)

    bundle = crossing_witness(1.0, (1.0, 2.0), oc.crossing_steps)
    crossing = [
        [x0, float(c.final[0]), float(i.final[0]), float(np.max(np.abs(c.xs - i.xs)))]
        for x0, c, i in zip(bundle.x0s, bundle.closed_form, bundle.integrated)
    ]
    store.save_csv("ode_crossing.csv", ["x0", "closed_form_at_pi", "integrated_at_pi", "max_abs_diff"], crossing)

    flow = []
    for x0 in (-1.0, 0.5, 2.0):
        target = -x0 ** 3
        v0 = float(free_velocity_flow(target, x0)[()])
        reached = integrate_second_order(lambda x: 0.0 * x, [x0], [v0], 1.0, 1.0, oc.h).final[0]
        flow.append([x0, target, v0, float(reached)])
    store.save_csv("ode_free_flow.csv", ["x0", "target", "v0", "integrated_x1"], flow)


COMMANDS: Dict[str, Callable[[Config, ArtifactStore], None]] = {
    "train-rings": cmd_train_rings,
    "train-cubic": cmd_train_cubic,
    "lista": cmd_lista,
    "memcheck": cmd_memcheck,
    "analyze-linear": cmd_analyze_linear,
    "odecheck": cmd_odecheck,
}


# ------------------------
# Configuration plumbing
# ------------------------
def _apply_flags(cfg: Config, args: argparse.Namespace) -> Config:
    """CLI flags override the YAML layer; MOMREV_OUT overrides the output folder."""
    g = cfg.global_
    for flag, key in (("seed", "seed"), ("out_dir", "out_dir"), ("gamma", "gamma"),
                      ("frac_bits", "frac_bits"), ("threads", "threads")):
        value = getattr(args, flag, None)
        if value is not None:
            g = replace(g, **{key: value})
    if os.getenv("MOMREV_OUT"):
        g = replace(g, out_dir=os.environ["MOMREV_OUT"])
    Ratio.parse(g.gamma)
    cfg = replace(cfg, global_=g)

    name = SECTIONS[args.cmd]
    section = cfg.section(name)
    overrides = {}
    for flag in ("iterations", "learning_rate", "optimizer", "mode", "batch_size", "h", "revnet_pairs"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    if getattr(args, "gamma", None) is not None and hasattr(section, "gamma"):
        overrides["gamma"] = args.gamma
    if args.depth is not None:
        if hasattr(section, "depths"):
            overrides["depths"] = [args.depth]
        elif hasattr(section, "depth"):
            overrides["depth"] = args.depth
    if args.epochs is not None:
        if not hasattr(section, "iterations"):
            raise ConfigError(f"--epochs does not apply to {args.cmd}")
        n = {"rings": lambda s: 4 * s.n_per_ring, "cubic": lambda s: s.n_train, "lista": lambda s: s.n_train}[name](section)
        overrides["iterations"] = args.epochs * math.ceil(n / min(overrides.get("batch_size", section.batch_size), n))
    return replace(cfg, **{name: replace(section, **overrides)})


def _config_echo(cfg: Config, cmd: str) -> dict:
    name = SECTIONS[cmd]
    return {"global": asdict(cfg.global_), name: asdict(cfg.section(name))}


def run_command(cmd: str, cfg: Config) -> int:
    store = ArtifactStore(cfg.global_.out_dir)
    ledger = RunLedger(os.path.join(store.base, cfg.global_.ledger))
    manifest = RunManifest(command=cmd, config=_config_echo(cfg, cmd), seed=cfg.global_.seed)
    started = ledger.start(store, manifest)
    error: Optional[BaseException] = None
    try:
        COMMANDS[cmd](cfg, store)
    except MomrevError as e:
        log.error("%s failed: %s", cmd, e)
        error = e
        return exit_code_for(e)
    except BaseException as e:
        log.exception("%s crashed", cmd)
        error = e
        raise
    finally:
        ledger.finish(store, manifest, started, error)
    log.info("%s finished: %d outputs in %s", cmd, len(manifest.outputs), store.base)
    return EXIT_OK



def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=os.getenv("MOMREV_CONFIG", "config/config.yaml"))
    common.add_argument("--from-manifest", dest="from_manifest", help="replay the config echoed in a manifest.json")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--gamma", help="momentum term as N/D, e.g. 9/10")
    common.add_argument("--frac-bits", dest="frac_bits", type=int)
    common.add_argument("--depth", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--threads", type=int)

    ap = argparse.ArgumentParser(prog="momrev", description="Momentum ResNet experiments and linear theory tables")
    sub = ap.add_subparsers(dest="cmd", required=True)

    for cmd, help_text in (
        ("train-rings", "ResNet vs Momentum ResNet on four nested rings"),
        ("train-cubic", "tied-weight fit of x -> -x^3"),
        ("lista", "ISTA / LISTA / Momentum-LISTA / RevNet-LISTA over depth"),
    ):
        p = sub.add_parser(cmd, parents=[common], help=help_text)
        p.add_argument("--iterations", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--optimizer", choices=["sgd", "momentum"])
        p.add_argument("--mode", choices=["exact", "float"])

    sub.add_parser("memcheck", parents=[common], help="buffer bits and live activations vs depth")
    p = sub.add_parser("analyze-linear", parents=[common], help="lambda_eps, representability, RevNet instability")
    p.add_argument("--revnet-pairs", dest="revnet_pairs", type=int)
    p = sub.add_parser("odecheck", parents=[common], help="ODE limits and closed forms")
    p.add_argument("--h", type=float)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.from_manifest:
            manifest = load_manifest(args.from_manifest)
            if manifest.command != args.cmd:
                raise ConfigError(f"manifest was written by {manifest.command!r}, not {args.cmd!r}")
            cfg = config_from_dict(manifest.config)
        else:
            cfg = load_config(args.config)
        cfg = _apply_flags(cfg, args)
    except MomrevError as e:
        log.error("invalid configuration: %s", e)
        return exit_code_for(e)
    return run_command(args.cmd, cfg)


if __name__ == "__main__":
    sys.exit(main())
