"""Experiment runner.

    specguard <subcommand> --config <path> [--preset NAME] [--seed N]
              [--resume] [--out DIR] [--checkpoint PATH ...]

Subcommands: train, attack, geometry, etf, retrain-readout, report.
Exit codes: 0 success, 2 configuration error, 3 numeric failure.

Each seed owns a subdirectory of the output dir; the resolved configuration
is echoed next to the artifacts, and every SVG figure is a pure function of
the CSVs written beside it.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import data as data_mod
from . import geometry as geo_mod
from . import plots
from .attack import (AttackConfig, DecisionOracle, robustness_report,
                     tangent_attack)
from .config import ConfigError, ExperimentConfig, load_config, load_preset
from .etf import lastlayer_gd, make_simplex_etf, theta_x_analytic
from .network import (DenseLayer, Net, load_checkpoint, make_mlp, predict_batch,
                      save_checkpoint)
from .numerics import Rng
from .regularize import RegConfig
from .train import (TrainConfig, TrainingDiverged, evaluate, retrain_readout,
                    train_supervised, write_summary)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _build_datasets(cfg: ExperimentConfig):
    """(train, test) datasets per data.kind; test may be None for XOR."""
    kind = cfg["data.kind"]
    rng = Rng(cfg["data.seed"])
    if kind == "xor-clean":
        return data_mod.xor_dataset(noisy=False, split="train"), None
    if kind == "xor-noisy":
        return (data_mod.xor_dataset(True, cfg["data.points_per_cluster"],
                                     cfg["data.noise_std"], rng, split="train"),
                data_mod.xor_dataset(True, cfg["data.points_per_cluster"],
                                     cfg["data.noise_std"], rng.spawn(1),
                                     split="test"))
    if kind in ("mnist", "digits", "mnist-or-digits"):
        root = cfg.data_dir()
        if kind != "digits" and root:
            found = _find_idx_files(root)
            if found:
                train = data_mod.load_mnist_idx(found[0], found[1],
                                                center=cfg["data.center"],
                                                split="train")
                test = data_mod.load_mnist_idx(found[2], found[3],
                                               center=cfg["data.center"],
                                               split="test")
                train = data_mod.subset_sample(train, cfg["data.train_size"],
                                               stratified=True, rng=rng)
                test = data_mod.subset_sample(test, cfg["data.test_size"],
                                              stratified=True, rng=rng.spawn(1))
                return train, test
            if kind == "mnist":
                raise ConfigError(
                    f"no IDX digit files under {root!r}; set data.dir or "
                    "$SPECGUARD_DATA_DIR, or use data.kind = digits")
        elif kind == "mnist":
            raise ConfigError("data.kind = mnist needs data.dir or "
                              "$SPECGUARD_DATA_DIR; or use data.kind = digits")
        cache = _ensure_dir(root or os.path.join(cfg["output.dir"], "_data"))
        paths = _synth_cache(cache, cfg)
        train = data_mod.load_mnist_idx(paths["train_images"],
                                        paths["train_labels"],
                                        center=cfg["data.center"], split="train")
        test = data_mod.load_mnist_idx(paths["test_images"],
                                       paths["test_labels"],
                                       center=cfg["data.center"], split="test")
        return train, test
    raise ConfigError(f"unknown data.kind {cfg['data.kind']!r}")


def _find_idx_files(root: str):
    def pick(*names):
        for n in names:
            for suffix in ("", ".gz"):
                p = os.path.join(root, n + suffix)
                if os.path.exists(p):
                    return p
        return None

    got = (pick("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
           pick("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
           pick("t10k-images-idx3-ubyte", "test-images-idx3-ubyte"),
           pick("t10k-labels-idx1-ubyte", "test-labels-idx1-ubyte"))
    return got if all(got) else None


def _synth_cache(cache_dir: str, cfg: ExperimentConfig) -> dict:
    tag = (f"synth_{cfg['data.train_per_class']}x{cfg['data.test_per_class']}"
           f"_s{cfg['data.seed']}")
    d = _ensure_dir(os.path.join(cache_dir, tag))
    marker = os.path.join(d, "complete")
    paths = {
        "train_images": os.path.join(d, "train-images-idx3-ubyte"),
        "train_labels": os.path.join(d, "train-labels-idx1-ubyte"),
        "test_images": os.path.join(d, "test-images-idx3-ubyte"),
        "test_labels": os.path.join(d, "test-labels-idx1-ubyte"),
    }
    if not os.path.exists(marker):
        data_mod.synth_digit_idx_files(d, cfg["data.train_per_class"],
                                       cfg["data.test_per_class"],
                                       seed=cfg["data.seed"])
        with open(marker, "w") as f:
            f.write("ok\n")
    return paths


def _build_net(cfg: ExperimentConfig, input_dim: int, n_classes: int,
               seed: int) -> Net:
    dims = [input_dim] + list(cfg["model.hidden"]) + [n_classes]
    std = cfg["model.init_std"]
    return make_mlp(dims, cfg["model.activation"], Rng(seed),
                    init_std=None if std < 0 else std, bias=cfg["model.bias"])


def _train_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    reg = RegConfig(mode=cfg["reg.mode"], gamma=cfg["reg.gamma"],
                    burn_in_epoch=cfg.burn_in_epochs(),
                    refresh_period=cfg["reg.refresh_period"],
                    iters_per_refresh=cfg["reg.iters"])
    return TrainConfig(epochs=cfg["train.epochs"],
                       batch_size=cfg["train.batch_size"] or None,
                       lr=cfg["train.lr"], momentum=cfg["train.momentum"],
                       weight_decay=cfg["train.weight_decay"], seed=seed,
                       reg=reg, track_samples=cfg["train.track_samples"])


def _attack_config(cfg: ExperimentConfig) -> AttackConfig:
    std = cfg["attack.init_std"]
    return AttackConfig(T=cfg["attack.T"], init_draws=cfg["attack.init_draws"],
                        init_std=None if std < 0 else std,
                        normal_probes=cfg["attack.probes"],
                        probe_radius_coef=cfg["attack.probe_radius_coef"],
                        hemisphere_coef=cfg["attack.hemisphere_coef"],
                        bisect_tol=cfg["attack.bisect_tol"])


def _echo_config(cfg: ExperimentConfig, out_dir: str) -> None:
    with open(os.path.join(out_dir, "resolved.cfg"), "w") as f:
        f.write(cfg.echo())


def cmd_train(cfg: ExperimentConfig, args) -> int:
    train, test = _build_datasets(cfg)
    out_root = _ensure_dir(cfg["output.dir"])
    _echo_config(cfg, out_root)
    for seed in cfg["run.seeds"]:
        seed_dir = _ensure_dir(os.path.join(out_root, f"seed{seed}"))
        final_ck = os.path.join(seed_dir, "checkpoint.json")
        if args.resume and os.path.exists(final_ck):
            print(f"seed {seed}: checkpoint exists, skipping (resume)")
            continue
        net = _build_net(cfg, train.inputs.shape[1], train.n_classes, seed)
        tc = _train_config(cfg, seed)
        burn_in = tc.reg.burn_in_epoch

        def on_epoch(epoch, net_, _dir=seed_dir, _b=burn_in):
            if _b > 0 and epoch == _b - 1:
                save_checkpoint(net_, os.path.join(_dir, "checkpoint_burnin.json"),
                                {"epoch": epoch + 1, "phase": "burn-in-end"})

        net, log = train_supervised(
            net, train.inputs, train.labels, tc,
            test.inputs if test is not None else None,
            test.labels if test is not None else None,
            on_epoch_end=on_epoch)
        save_checkpoint(net, final_ck, {"seed": seed, "epochs": tc.epochs,
                                        "reg_mode": tc.reg.mode})
        log.to_csv(os.path.join(seed_dir, "trainlog.csv"))
        payload = log.summary()
        payload.update({"seed": seed, "reg_mode": tc.reg.mode,
                        "normalization": train.normalization})
        write_summary(os.path.join(seed_dir, "summary.json"), payload)
        print(f"seed {seed}: train_acc={log.train_acc[-1]:.4f} "
              f"test_acc={log.test_acc[-1]:.4f}")
    return EXIT_OK


def _attack_samples(cfg: ExperimentConfig, net: Net, train, test, rng: Rng):
    ds = test if (cfg["attack.split"] == "test" and test is not None) else train
    pred = predict_batch(net, ds.inputs)
    correct = np.where(pred == ds.labels)[0]
    n = min(cfg["attack.n_samples"], len(correct))
    take = correct[:n] if len(correct) <= n else correct[
        rng.choice(len(correct), size=n, replace=False)]
    return ds.inputs[take], ds.labels[take], take


def cmd_attack(cfg: ExperimentConfig, args) -> int:
    checkpoints = list(args.checkpoint or [])
    if not checkpoints and cfg["attack.checkpoints"]:
        checkpoints = [p.strip() for p in cfg["attack.checkpoints"].split(",")
                       if p.strip()]
    if not checkpoints:
        raise ConfigError("attack needs --checkpoint or attack.checkpoints")
    train, test = _build_datasets(cfg)
    out_root = _ensure_dir(cfg["output.dir"])
    _echo_config(cfg, out_root)
    acfg = _attack_config(cfg)
    summary = {}
    for ck_path in checkpoints:
        net, extra = load_checkpoint(ck_path)
        name = extra.get("reg_mode") or os.path.splitext(
            os.path.basename(ck_path))[0]
        seed = int(extra.get("seed", 0))
        rng = Rng(seed).spawn(1000)
        X, y, ids = _attack_samples(cfg, net, train, test, rng)
        oracle = DecisionOracle.from_net(net)
        rows, deltas = [], []
        for i in range(len(y)):
            res = tangent_attack(oracle, X[i], int(y[i]), acfg, rng.spawn(i))
            rows.append([int(ids[i]), int(y[i]),
                         res.adv_label if res.adv_label is not None else "",
                         repr(res.delta), res.queries])
            if res.success:
                deltas.append(res.delta)
        tag = f"{name}_seed{seed}"
        csv_path = os.path.join(out_root, f"attack_{tag}.csv")
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_id", "true_label", "adv_label", "delta",
                        "queries"])
            w.writerows(rows)
        stats = robustness_report(deltas, cfg["attack.thresholds"]) if deltas \
            else {"count": 0}
        ds_used = test if (cfg["attack.split"] == "test" and test is not None) \
            else train
        stats["normalization"] = ds_used.normalization  # delta in input units
        summary[tag] = stats
        print(f"{tag}: mean delta = {stats.get('mean', float('nan')):.4f} "
              f"({len(deltas)}/{len(y)} attacks succeeded)")
    write_summary(os.path.join(out_root, "attack_summary.json"), summary)
    groups = {tag: [s["mean"]] for tag, s in summary.items() if s.get("count")}
    if groups and all(len(v) for v in groups.values()):
        per_sample = {}
        for tag in summary:
            path = os.path.join(out_root, f"attack_{tag}.csv")
            with open(path) as f:
                rd = csv.DictReader(f)
                per_sample[tag] = [float(r["delta"]) for r in rd
                                   if r["delta"] not in ("", "inf")]
        plots.write_svg(os.path.join(out_root, "attack_boxplot.svg"),
                        plots.svg_boxplot(per_sample,
                                          title="adversarial distance by model",
                                          ylabel="delta"))
    return EXIT_OK


def cmd_geometry(cfg: ExperimentConfig, args) -> int:
    checkpoints = list(args.checkpoint or [])
    if not checkpoints:
        raise ConfigError("geometry needs --checkpoint")
    train, test = _build_datasets(cfg)
    out_root = _ensure_dir(cfg["output.dir"])
    _echo_config(cfg, out_root)
    for ck_path in checkpoints:
        net, extra = load_checkpoint(ck_path)
        name = extra.get("reg_mode") or os.path.splitext(
            os.path.basename(ck_path))[0]
        seed = int(extra.get("seed", 0))
        ds = train if cfg["geometry.split"] == "train" or test is None else test
        pred = predict_batch(net, ds.inputs)
        correct = np.where(pred == ds.labels)[0][:cfg["geometry.n_samples"]]
        R = cfg["geometry.ball_radius"] or None
        rows = []
        for i in correct:
            rep = geo_mod.geometry_report(net, ds.inputs[i], int(ds.labels[i]),
                                          ball_R=R,
                                          ball_M=cfg["geometry.ball_samples"],
                                          rng=Rng(seed).spawn(int(i)))
            rows.append([int(i)] + rep.row())
        tag = f"{name}_seed{seed}"
        with open(os.path.join(out_root, f"geometry_{tag}.csv"), "w",
                  newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_id"] + geo_mod.GeometryReport.ROW_HEADER)
            w.writerows(rows)
        if net.input_shape == (2,):
            box = cfg["geometry.box"]
            grid = geo_mod.volume_element_grid(net, tuple(box),
                                               cfg["geometry.resolution"])
            np.savetxt(os.path.join(out_root, f"volume_{tag}.csv"), grid,
                       delimiter=",")
            plots.write_svg(
                os.path.join(out_root, f"volume_{tag}.svg"),
                plots.svg_heatmap(grid, tuple(box),
                                  title=f"volume element sqrt(det g): {tag}",
                                  xlabel="x1", ylabel="x2"))
        print(f"{tag}: geometry written ({len(rows)} samples)")
    return EXIT_OK


def cmd_etf(cfg: ExperimentConfig, args) -> int:
    out_root = _ensure_dir(cfg["output.dir"])
    _echo_config(cfg, out_root)
    K, d = cfg["etf.classes"], cfg["etf.dim"]
    frame = make_simplex_etf(K, d)
    results = {}
    for seed in cfg["run.seeds"]:
        traj = lastlayer_gd(frame.Z, cfg["etf.init_std"], cfg["etf.lr"],
                            cfg["etf.steps"], Rng(seed))
        traj.to_csv(os.path.join(out_root, f"etf_seed{seed}.csv"))
        series = {f"class {k}": traj.cosines[:, k] for k in range(K)}
        plots.write_svg(os.path.join(out_root, f"etf_seed{seed}.svg"),
                        plots.svg_lines(np.arange(traj.cosines.shape[0]),
                                        series,
                                        title=f"last-layer alignment (seed {seed})",
                                        xlabel="step", ylabel="cos(W_k, z_k)"))
        results[f"seed{seed}"] = {
            "final_cosines": traj.cosines[-1].tolist(),
            "diverged": traj.diverged,
        }
    results["theta_analytic"] = theta_x_analytic(frame.Z, 0, 1)
    write_summary(os.path.join(out_root, "etf_summary.json"), results)
    print(f"etf: K={K} d={d} theta_analytic={results['theta_analytic']:.6f}")
    return EXIT_OK


def cmd_retrain_readout(cfg: ExperimentConfig, args) -> int:
    checkpoints = list(args.checkpoint or [])
    if not checkpoints:
        raise ConfigError("retrain-readout needs --checkpoint")
    train, test = _build_datasets(cfg)
    out_root = _ensure_dir(cfg["output.dir"])
    _echo_config(cfg, out_root)
    from .network import feature_map_batch

    for ck_path in checkpoints:
        net, extra = load_checkpoint(ck_path)
        feats = feature_map_batch(net, train.inputs)
        fit = retrain_readout(feats, train.labels, n_classes=train.n_classes,
                              l2_strength=cfg["retrain.l2"],
                              fit_intercept=cfg["retrain.fit_intercept"])
        new_net = Net(feature_layers=net.feature_layers,
                      readout=DenseLayer(fit.W, fit.b),
                      input_shape=net.input_shape)
        name = os.path.splitext(os.path.basename(ck_path))[0]
        seed = extra.get("seed", 0)
        out_ck = os.path.join(out_root, f"{name}_retrained.json")
        save_checkpoint(new_net, out_ck,
                        {"seed": seed, "retrained": True,
                         "reg_mode": (extra.get("reg_mode") or "?") + "+retrain"})
        acc = evaluate(new_net, test.inputs, test.labels) if test is not None \
            else evaluate(new_net, train.inputs, train.labels)
        write_summary(os.path.join(out_root, f"{name}_retrain_report.json"),
                      {"objective": fit.objective, "grad_norm": fit.grad_norm,
                       "converged": fit.converged, "test_acc": acc,
                       "checkpoint": out_ck})
        print(f"{name}: retrained readout, acc={acc:.4f}, "
              f"grad_norm={fit.grad_norm:.2e}")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, args) -> int:
    """Aggregate attack CSVs across a directory of runs into mean/std plus
    threshold-proportion curves."""
    root = args.out or cfg["output.dir"]
    if not os.path.isdir(root):
        raise ConfigError(f"report: no such directory {root!r}")
    by_model: dict[str, list[float]] = {}
    for dirpath, _dirnames, filenames in os.walk(root):
        for fn in sorted(filenames):
            if fn.startswith("attack_") and fn.endswith(".csv"):
                tag = fn[len("attack_"):-len(".csv")]
                model = tag.split("_seed")[0]
                with open(os.path.join(dirpath, fn)) as f:
                    rd = csv.DictReader(f)
                    vals = [float(r["delta"]) for r in rd
                            if r["delta"] not in ("", "inf")]
                if vals:
                    by_model.setdefault(model, []).append(float(np.mean(vals)))
    if not by_model:
        raise ConfigError(f"report: no attack_*.csv files under {root!r}")
    agg = {m: {"mean": float(np.mean(v)), "std": float(np.std(v)),
               "n_runs": len(v), "per_run_means": v}
           for m, v in by_model.items()}
    write_summary(os.path.join(root, "report.json"), agg)
    plots.write_svg(os.path.join(root, "report_boxplot.svg"),
                    plots.svg_boxplot(by_model,
                                      title="mean adversarial distance by model",
                                      ylabel="mean delta per run"))
    thresholds = cfg["attack.thresholds"]
    curves = {}
    for m, v in by_model.items():
        arr = np.asarray(v)
        curves[m] = [float(np.mean(arr >= t)) for t in thresholds]
    plots.write_svg(os.path.join(root, "report_thresholds.svg"),
                    plots.svg_lines(thresholds, curves,
                                    title="proportion of runs above threshold",
                                    xlabel="threshold", ylabel="proportion"))
    for m, s in sorted(agg.items()):
        print(f"{m}: mean={s['mean']:.4f} +- {s['std']:.4f} over {s['n_runs']} runs")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "geometry": cmd_geometry,
    "etf": cmd_etf,
    "retrain-readout": cmd_retrain_readout,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="specguard",
        description="spectral-regularization experiments: train, attack, "
                    "certify, and report")
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="path to a flat key=value config")
    parser.add_argument("--preset", help="named built-in config "
                                         "(xor-clean, xor-noisy, mnist-mlp, etf-demo)")
    parser.add_argument("--seed", type=int, help="override run.seeds with one seed")
    parser.add_argument("--out", help="override output.dir")
    parser.add_argument("--resume", action="store_true",
                        help="skip seeds whose final checkpoint already exists")
    parser.add_argument("--checkpoint", action="append",
                        help="checkpoint path (repeatable)")
    args = parser.parse_args(argv)

    try:
        if args.config:
            cfg = load_config(args.config)
        elif args.preset:
            cfg = load_preset(args.preset)
        else:
            raise ConfigError("pass --config PATH or --preset NAME")
        if args.seed is not None:
            cfg.values["run.seeds"] = [args.seed]
        if args.out:
            cfg.values["output.dir"] = args.out
        return COMMANDS[args.subcommand](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc} (snapshot: {exc.snapshot})",
              file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
