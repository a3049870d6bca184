"""Command-line entry point.

Subcommands: ingest, train, eval, ablate, cv, locexp, introspect.  Every
command is a pure function of (config, input files, seed): artifacts land
under the --out directory (or a timestamped directory under ./runs) with
the resolved configuration echoed alongside them.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
error.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import data as dp
from .config import RunConfig, config_help_text, load_config
from .errors import (
    ConfigError,
    DataError,
    DegenerateTestError,
    DroughtcastError,
    IoError,
    NumericError,
    SchemaError,
)
from .introspection import collect_attention, emit_figures, export_embeddings, tsne
from .metrics import (
    FoldResults,
    cross_validate,
    evaluate,
    location_experiment_report,
    paired_t_test,
)
from .model import AblationConfig, HybridModel, ModelConfig
from .training import (
    LrSchedule,
    TrainRunConfig,
    fit,
    history_csv,
    load_checkpoint,
    save_checkpoint,
)

ABLATION_SETTINGS = [
    AblationConfig(use_static=True, use_timeseries=True, use_attention=True),
    AblationConfig(use_static=False, use_timeseries=True, use_attention=True),
    AblationConfig(use_static=False, use_timeseries=True, use_attention=False),
    AblationConfig(use_static=True, use_timeseries=True, use_attention=False),
    AblationConfig(use_static=True, use_timeseries=False, use_attention=False),
]


def _out_root(cfg: RunConfig, command: str) -> Path:
    out = cfg.get("run", "out")
    if out:
        return Path(out)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return Path("runs") / f"{stamp}-{command}"


def _command_dir(cfg: RunConfig, command: str) -> Path:
    path = _out_root(cfg, command) / command
    path.mkdir(parents=True, exist_ok=True)
    (path / "resolved_config.ini").write_text(cfg.render())
    return path


def _ingest_dir(cfg: RunConfig) -> Path:
    path = _out_root(cfg, "ingest") / "ingest"
    if not (path / "train.samples").exists():
        raise DataError(f"no ingested dataset under {path}; run `ingest` first")
    return path


def _require_file(cfg: RunConfig, section: str, key: str) -> Path:
    raw = cfg.get(section, key)
    if not raw:
        raise ConfigError(f"[{section}] {key} is required for this command")
    path = Path(raw)
    if not path.exists():
        raise SchemaError(f"[{section}] {key}: {path} does not exist")
    return path


def _build_sets(cfg: RunConfig) -> tuple[list, list, list, list[str], dp.CategoricalEncoder, list[str]]:
    ts_path = _require_file(cfg, "data", "timeseries")
    statics_path = _require_file(cfg, "data", "statics")
    categorical = cfg.get_list("data", "categorical_columns")
    window = cfg.get_int("data", "window_days")
    phase = cfg.get("data", "target_phase")
    max_gap = cfg.get_int("data", "max_gap_days")

    messages: list[str] = []
    statics, encoder = dp.load_statics(statics_path, categorical)
    channel_names = dp.channel_names_of(ts_path)

    def build_from(path: Path) -> list:
        series = dp.load_timeseries(path, max_gap_days=max_gap, report=messages)
        samples, report = dp.build_samples(series, statics, window_days=window,
                                           target_phase=phase)
        messages.append(f"{path.name}: {report.describe()}")
        return samples

    train = build_from(ts_path)
    val_raw = cfg.get("data", "timeseries_val")
    test_raw = cfg.get("data", "timeseries_test")
    if val_raw or test_raw:
        val = build_from(_require_file(cfg, "data", "timeseries_val")) if val_raw else []
        test = build_from(_require_file(cfg, "data", "timeseries_test")) if test_raw else []
    else:
        train, val, test = dp.split_fractions(
            train, cfg.get_float("data", "val_fraction"),
            cfg.get_float("data", "test_fraction"), seed=cfg.seed,
        )
        messages.append(f"random split: {len(train)} train / {len(val)} val / {len(test)} test")
    return train, val, test, messages, encoder, channel_names


def cmd_ingest(cfg: RunConfig) -> int:
    out = _command_dir(cfg, "ingest")
    train, val, test, messages, encoder, channel_names = _build_sets(cfg)
    if not train:
        raise DataError("ingest produced no training samples")

    static_names = encoder.numeric_columns
    normalizer = dp.fit_normalizer(train, channel_names=channel_names,
                                   static_names=static_names)
    dp.save_samples(normalizer.apply(train), out / "train.samples")
    dp.save_samples(normalizer.apply(val), out / "val.samples")
    dp.save_samples(normalizer.apply(test), out / "test.samples")
    normalizer.save(out / "normalizer.csv")
    encoder.save(out / "categories.csv")
    for message in messages:
        print(message)
    print(f"ingested dataset -> {out}")
    return 0


def _load_sets(cfg: RunConfig) -> tuple[list, list, list, dp.CategoricalEncoder]:
    ingest = _ingest_dir(cfg)
    train = dp.load_samples(ingest / "train.samples")
    val = dp.load_samples(ingest / "val.samples")
    test = dp.load_samples(ingest / "test.samples")
    encoder = dp.CategoricalEncoder.load(ingest / "categories.csv")
    return train, val, test, encoder


def _model_config(cfg: RunConfig, sample, encoder: dp.CategoricalEncoder) -> ModelConfig:
    return ModelConfig(
        input_channels=sample.x.shape[1],
        numeric_static_count=sample.s_n.size,
        categorical_vocab_sizes=encoder.vocab_sizes,
        lstm_layers=cfg.get_int("model", "lstm_layers"),
        hidden_size=cfg.get_int("model", "hidden_size"),
        embed_dim=cfg.get_int("model", "embed_dim"),
        reduced_dim=cfg.get_int("model", "reduced_dim"),
        mlp_layers=cfg.get_int("model", "mlp_layers"),
        mlp_hidden=cfg.get_int("model", "mlp_hidden"),
        dropout=cfg.get_float("model", "dropout"),
        embed_dropout=cfg.get_float("model", "embed_dropout"),
    )


def _ablation(cfg: RunConfig, prefix: str = "") -> AblationConfig:
    return AblationConfig(
        use_static=cfg.get_bool("ablation" if not prefix else "cv", f"{prefix}use_static"),
        use_timeseries=cfg.get_bool("ablation" if not prefix else "cv", f"{prefix}use_timeseries"),
        use_attention=cfg.get_bool("ablation" if not prefix else "cv", f"{prefix}use_attention"),
    )


def _train_run(cfg: RunConfig, seed: int, checkpoint_dir: Path | None,
               epochs: int | None = None) -> TrainRunConfig:
    return TrainRunConfig(
        batch_size=cfg.get_int("train", "batch_size"),
        epochs=epochs if epochs is not None else cfg.get_int("train", "epochs"),
        seed=seed,
        weight_decay=cfg.get_float("train", "weight_decay"),
        loss=cfg.get("train", "loss"),
        selection=cfg.get("train", "selection"),
        checkpoint_dir=str(checkpoint_dir) if checkpoint_dir else None,
    )


def _schedule(cfg: RunConfig, n_train: int) -> LrSchedule:
    max_lr = cfg.get_float("train", "max_lr")
    base_raw = cfg.get("train", "base_lr")
    base_lr = float(base_raw) if base_raw else max_lr / 10.0
    batch = cfg.get_int("train", "batch_size")
    steps_per_epoch = max(1, -(-n_train // batch))
    cycle = max(2, cfg.get_int("train", "cycle_epochs") * steps_per_epoch)
    return LrSchedule(base_lr=base_lr, max_lr=max_lr, cycle_length=cycle)


def cmd_train(cfg: RunConfig) -> int:
    out = _command_dir(cfg, "train")
    train, val, _, encoder = _load_sets(cfg)
    if not train:
        raise DataError("no training samples in the ingest cache")
    model = HybridModel.build(_model_config(cfg, train[0], encoder), _ablation(cfg), cfg.seed)
    run = _train_run(cfg, cfg.seed, out)
    model, history = fit(model, train, val, run, _schedule(cfg, len(train)))
    (out / "history.csv").write_text(history_csv(history))
    save_checkpoint(model, out / "model.ckpt")
    print(f"trained {model.ablation.label()} model: "
          f"final train loss {history[-1].train_loss:.4f}, "
          f"val MAE {history[-1].val_mae:.4f} -> {out}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    out = _command_dir(cfg, "eval")
    _, _, test, _ = _load_sets(cfg)
    if not test:
        raise DataError("no test samples in the ingest cache")
    model_path = _out_root(cfg, "train") / "train" / "model.ckpt"
    if not model_path.exists():
        raise DataError(f"no trained checkpoint at {model_path}; run `train` first")
    model = load_checkpoint(model_path)
    report = evaluate(model, test)
    (out / "weekly.csv").write_text(report.weekly_csv())
    (out / "summary.csv").write_text(report.summary_csv())
    (out / "report.txt").write_text(report.render_text())
    print(report.render_text())
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    out = _command_dir(cfg, "ablate")
    train, val, test, encoder = _load_sets(cfg)
    if not train or not test:
        raise DataError("ablation needs train and test samples in the cache")
    base_config = _model_config(cfg, train[0], encoder)
    summary_lines = ["setting,static,timeseries,attention,mae,rmse,f1"]
    weekly_header = ["setting"]
    for w in range(1, 7):
        weekly_header += [f"week{w}_mae", f"week{w}_f1"]
    weekly_lines = [",".join(weekly_header)]

    for i, ablation in enumerate(ABLATION_SETTINGS):
        model = HybridModel.build(base_config, ablation, cfg.seed + i)
        run = _train_run(cfg, cfg.seed + i, None)
        model, _ = fit(model, train, val, run, _schedule(cfg, len(train)))
        report = evaluate(model, test)
        label = ablation.label()
        summary_lines.append(
            f"{label},{ablation.use_static},{ablation.use_timeseries},"
            f"{ablation.use_attention},{report.mae!r},{report.rmse!r},{report.f1!r}"
        )
        cells = [label]
        for w in range(6):
            cells += [repr(report.weekly_mae[w]), repr(report.weekly_f1[w])]
        weekly_lines.append(",".join(cells))
        print(f"{label}: MAE {report.mae:.3f}  RMSE {report.rmse:.3f}  F1 {report.f1:.1f}")

    (out / "ablation_summary.csv").write_text("\n".join(summary_lines) + "\n")
    (out / "ablation_weekly.csv").write_text("\n".join(weekly_lines) + "\n")
    return 0


def _cv_for(cfg: RunConfig, samples, ablation: AblationConfig, encoder,
            folds: int, epochs: int | None) -> FoldResults:
    base_config = _model_config(cfg, samples[0], encoder)

    def builder(fold_seed: int) -> HybridModel:
        return HybridModel.build(base_config, ablation, fold_seed)

    def trainer(model, train, val, fold_seed):
        run = _train_run(cfg, fold_seed, None, epochs=epochs)
        fit(model, train, val, run, _schedule(cfg, len(train)))

    return cross_validate(samples, folds, builder, trainer, seed=cfg.seed)


def cmd_cv(cfg: RunConfig) -> int:
    out = _command_dir(cfg, "cv")
    train, val, _, encoder = _load_sets(cfg)
    pool = train + val
    folds = cfg.get_int("cv", "folds")
    epochs_raw = cfg.get("cv", "epochs")
    epochs = int(epochs_raw) if epochs_raw else None

    primary = _cv_for(cfg, pool, _ablation(cfg), encoder, folds, epochs)
    baseline = _cv_for(cfg, pool, _ablation(cfg, prefix="baseline_"), encoder, folds, epochs)

    (out / "cv_folds_primary.csv").write_text(primary.folds_csv())
    (out / "cv_summary_primary.csv").write_text(primary.summary_csv())
    (out / "cv_folds_baseline.csv").write_text(baseline.folds_csv())
    (out / "cv_summary_baseline.csv").write_text(baseline.summary_csv())

    lines = ["metric,mean_difference,t,df,p"]
    for metric in primary.metric_names:
        try:
            result = paired_t_test(
                [fold[metric] for fold in baseline.folds],
                [fold[metric] for fold in primary.folds],
            )
        except DegenerateTestError:
            lines.append(f"{metric},0.0,nan,{folds - 1},nan")
            print(f"paired t-test on {metric}: degenerate (tied folds)")
            continue
        lines.append(
            f"{metric},{result.mean_difference!r},{result.t_stat!r},"
            f"{result.df},{result.p_value!r}"
        )
        print(f"paired t-test on {metric}: t={result.t_stat:.3f} p={result.p_value:.4f}")
    (out / "paired_tests.csv").write_text("\n".join(lines) + "\n")
    return 0


def cmd_locexp(cfg: RunConfig) -> int:
    out = _command_dir(cfg, "locexp")
    train, val, test, encoder = _load_sets(cfg)
    states = cfg.get_list("locexp", "states")
    if not states:
        raise ConfigError("[locexp] states must list at least one FIPS prefix")
    base_config = _model_config(cfg, train[0], encoder)

    def train_model(samples, val_samples, seed):
        model = HybridModel.build(base_config, _ablation(cfg), seed)
        run = _train_run(cfg, seed, None)
        model, _ = fit(model, samples, val_samples, run, _schedule(cfg, len(samples)))
        return model

    specific = {}
    agnostic = {}
    agnostic_model = train_model(train, val, cfg.seed)
    for i, state in enumerate(states):
        state_train = dp.filter_by_state(train, [state])
        state_val = dp.filter_by_state(val, [state])
        state_test = dp.filter_by_state(test, [state])
        if not state_train or not state_test:
            raise DataError(f"state prefix {state!r} has no train or test samples")
        state_model = train_model(state_train, state_val, cfg.seed + 100 * (i + 1))
        specific[state] = evaluate(state_model, state_test)
        agnostic[state] = evaluate(agnostic_model, state_test)
        print(f"state {state}: specific MAE {specific[state].mae:.3f}, "
              f"agnostic MAE {agnostic[state].mae:.3f}")

    report = location_experiment_report(specific, agnostic)
    (out / "location_weekly.csv").write_text(report.weekly_csv())
    (out / "location_summary.csv").write_text(report.summary_csv())
    (out / "location_improvements.csv").write_text(report.improvements_csv())
    return 0


def cmd_introspect(cfg: RunConfig) -> int:
    out = _command_dir(cfg, "introspect")
    _, _, test, _ = _load_sets(cfg)
    ingest = _ingest_dir(cfg)
    model_path = _out_root(cfg, "train") / "train" / "model.ckpt"
    if not model_path.exists():
        raise DataError(f"no trained checkpoint at {model_path}; run `train` first")
    model = load_checkpoint(model_path)
    if not test:
        raise DataError("no test samples in the ingest cache")

    categorical = cfg.get_list("data", "categorical_columns")
    encoder = dp.CategoricalEncoder.load(ingest / "categories.csv")
    statics, _ = dp.load_statics(_require_file(cfg, "data", "statics"), categorical,
                                 encoder=encoder)

    profile = collect_attention(model, test)
    export = export_embeddings(model, statics, encoder)
    projection = tsne(
        export.vectors,
        perplexity=cfg.get_float("introspect", "perplexity"),
        iterations=cfg.get_int("introspect", "iterations"),
        seed=cfg.seed,
    )
    color = cfg.get("introspect", "color_column") or None
    paths = emit_figures(profile, projection, export, out, color_column=color)
    print(f"wrote {len(paths)} introspection artifacts -> {out}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "cv": cmd_cv,
    "locexp": cmd_locexp,
    "introspect": cmd_introspect,
}


def _parse_set(values: list[str]) -> dict[tuple[str, str], str]:
    overrides: dict[tuple[str, str], str] = {}
    for item in values:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        section, name = key.split(".", 1)
        overrides[(section.strip(), name.strip())] = value.strip()
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="droughtcast",
        description="Train and analyze the hybrid county drought-score forecaster.",
        epilog=config_help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="run configuration file (ini-style sections)")
    parser.add_argument("--seed", type=int, help="run seed (overrides [run] seed)")
    parser.add_argument("--out", help="output directory (overrides [run] out)")
    parser.add_argument("--threads", type=int, help="worker-thread cap (overrides [run] threads)")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key; repeatable")
    parser.add_argument("command", choices=sorted(COMMANDS), help="experiment stage to run")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = _parse_set(args.set)
        if args.seed is not None:
            overrides[("run", "seed")] = str(args.seed)
        if args.out is not None:
            overrides[("run", "out")] = args.out
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            overrides[("run", "threads")] = str(args.threads)
        cfg = load_config(args.config, overrides)
        _ = cfg.seed  # fail fast when no seed was provided
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except (DataError, IoError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DroughtcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
