"""Command-line pipeline: extract, build datasets, split, fit scalers and
reducers, train model pairs, sweep the full reducer x dimension x estimator
grid, and evaluate with frozen artifacts.

Every stage appends to the workspace manifest (manifest.jsonl); re-running
a stage whose inputs, parameters and outputs are unchanged is a no-op
unless --force is given. A YAML config file supplies per-command defaults;
explicit flags override it. All seeds are explicit.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 artifact mismatch.
"""

import csv
import hashlib
import json
import os
import sys

import click
import numpy as np
import yaml

from . import __version__, forest, metrics, pair, scaling, store, synth, tuner
from . import reduce as dimred
from .errors import (
    ArtifactMismatchError,
    ConfigError,
    DataError,
    MalforestError,
    ManifestError,
)
from .manifest import Manifest, hash_artifact, run_stage
from .pe import vectorize

EXIT_CODES = [
    (ConfigError, 2),
    (ArtifactMismatchError, 4),
    (ManifestError, 4),
    (DataError, 3),
    (MalforestError, 3),
]


def _exit_code(exc: MalforestError) -> int:
    for etype, code in EXIT_CODES:
        if isinstance(exc, etype):
            return code
    return 3


class _Cli(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except MalforestError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_exit_code(exc))


@click.group(cls=_Cli)
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="YAML file with per-command option defaults.")
@click.option("--workspace", default=".", show_default=True,
              help="Directory holding the pipeline manifest.")
@click.option("--force", is_flag=True, help="Re-run stages even when the "
              "manifest shows identical inputs and intact outputs.")
@click.pass_context
def main(ctx, config_path, workspace, force):
    """Static PE malware detection pipeline."""
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{config_path}: top level must be a mapping")
        ctx.default_map = loaded
    ctx.obj = {"workspace": workspace, "force": force,
               "manifest": Manifest.open(workspace)}


def _external_hash(path) -> str:
    return hash_artifact(path)


def _parents_and_externals(manifest: Manifest, named_paths: dict):
    """Split inputs into manifest-produced parents and external inputs."""
    produced = set()
    for record in manifest.records:
        produced.update(record.outputs.values())
    parents = {}
    externals = {}
    for name, path in named_paths.items():
        digest = hash_artifact(path)
        if digest in produced:
            parents[name] = path
        else:
            externals[name] = digest
    return parents, externals


def _stage(ctx, stage, params, inputs, outputs, builder):
    manifest = ctx.obj["manifest"]
    for name, path in inputs.items():
        if not os.path.exists(path):
            raise ConfigError(f"stage {stage}: input {name} missing at {path}")
    parents, externals = _parents_and_externals(manifest, inputs)
    params = dict(params)
    if externals:
        params["external_inputs"] = externals
    record = run_stage(manifest, stage, params, parents, outputs, builder,
                       force=ctx.obj["force"])
    return record


def _read_labels_csv(path):
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lower() == "sha256":
                continue
            labels[row[0].lower()] = int(row[1])
    return labels


def _iter_input_files(inputs):
    for item in inputs:
        if os.path.isdir(item):
            for root, _dirs, files in os.walk(item):
                for name in sorted(files):
                    yield os.path.join(root, name)
        else:
            yield item


@main.command()
@click.argument("inputs", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--label", type=click.IntRange(-1, 1), default=None,
              help="Label for every input (-1 unlabeled, 0 benign, 1 malware).")
@click.option("--labels-csv", type=click.Path(exists=True), default=None,
              help="CSV of sha256,label overriding --label per file.")
@click.option("--tag", default="", help="Source tag stored with each record.")
@click.pass_context
def extract(ctx, inputs, out, label, labels_csv, tag):
    """Featurize PE files (or directories of them) into JSONL records."""
    files = list(_iter_input_files(inputs))
    if not files:
        raise DataError("no input files found")
    csv_labels = _read_labels_csv(labels_csv) if labels_csv else {}

    def build():
        tmp = out + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for path in files:
                with open(path, "rb") as src:
                    data = src.read()
                digest = hashlib.sha256(data).hexdigest()
                row_label = csv_labels.get(digest, label if label is not None else -1)
                record = {"sha256": digest, "label": int(row_label),
                          "features": [float(v) for v in vectorize(data).values]}
                if tag:
                    record["source_tag"] = tag
                fh.write(json.dumps(record) + "\n")
        os.replace(tmp, out)

    _stage(ctx, "extract",
           {"files": [os.path.basename(f) for f in files], "tag": tag,
            "label": label, "out": out},
           {f"input_{i}": f for i, f in enumerate(files)}, [out], build)
    click.echo(f"extracted {len(files)} files -> {out}")


@main.command("build-dataset")
@click.argument("jsonl", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--tag", default="", help="Source tag for records without one.")
@click.pass_context
def build_dataset(ctx, jsonl, out, tag):
    """Convert extractor JSONL into the FVS1 container."""
    def build():
        store.save(store.from_jsonl(jsonl, default_tag=tag), out)

    _stage(ctx, "build-dataset", {"tag": tag, "out": out},
           {"jsonl": jsonl}, [out], build)
    loaded = store.load(out)
    click.echo(f"built {out}: {loaded.n_rows} rows x {loaded.n_dims} dims")


@main.command()
@click.argument("stores", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def unify(ctx, stores, out):
    """Concatenate stores, drop unlabeled rows, deduplicate by sha256."""
    def build():
        loaded = [store.load(path) for path in stores]
        unified, report = store.unify(loaded)
        store.save(unified, out)
        build.report = report

    _stage(ctx, "unify", {"inputs": list(stores), "out": out},
           {f"store_{i}": path for i, path in enumerate(stores)}, [out], build)
    unified = store.load(out)
    click.echo(f"unified {len(stores)} stores -> {out}: {unified.n_rows} rows")
    if hasattr(build, "report"):
        r = build.report
        click.echo(f"  dropped {r.n_unlabeled_dropped} unlabeled, "
                   f"{r.n_duplicates_dropped} duplicates; "
                   f"{r.n_label_conflicts} label conflicts")


@main.command()
@click.argument("store_path", type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", type=int, required=True)
@click.option("--val", "val_fraction", type=float, default=0.1, show_default=True)
@click.option("--test", "test_fraction", type=float, default=0.1, show_default=True)
@click.option("--stratify/--no-stratify", default=True, show_default=True)
@click.pass_context
def split(ctx, store_path, out_dir, seed, val_fraction, test_fraction, stratify):
    """Carve validation/test and halve the training pool into two partitions."""
    outputs = {tag: os.path.join(out_dir, f"{tag.lower()}.fvs")
               for tag in store.PARTITIONS}
    plan_path = os.path.join(out_dir, "split_plan.json")

    def build():
        os.makedirs(out_dir, exist_ok=True)
        data = store.load(store_path)
        plan = store.split(data, seed=seed, val_fraction=val_fraction,
                           test_fraction=test_fraction, stratify=stratify)
        for tag, path in outputs.items():
            store.save(data.take(plan.indices(tag)), path)
        with open(plan_path + ".tmp", "w", encoding="utf-8") as fh:
            fh.write(plan.to_json())
        os.replace(plan_path + ".tmp", plan_path)

    _stage(ctx, "split",
           {"seed": seed, "val": val_fraction, "test": test_fraction,
            "stratify": stratify, "out_dir": out_dir},
           {"store": store_path}, list(outputs.values()) + [plan_path], build)
    click.echo(f"split {store_path} -> {out_dir} (seed {seed})")


@main.command("fit-scalers")
@click.option("--train-a", required=True, type=click.Path(exists=True))
@click.option("--train-b", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def fit_scalers(ctx, train_a, train_b, out):
    """Fit robust + min-max statistics on the combined training pool."""
    def build():
        pool, _ = store.unify([store.load(train_a), store.load(train_b)])
        params = scaling.fit(pool)
        tmp = out + ".tmp"
        params.save(tmp)
        os.replace(tmp, out)

    _stage(ctx, "fit-scalers", {"out": out},
           {"train_a": train_a, "train_b": train_b}, [out], build)
    click.echo(f"scaler -> {out}")


def _selector_gains_stage(ctx, train_a, train_b, scaler_path, out_dir):
    """Selector gains depend only on the pool and scaler; shared across dims."""
    gains_path = os.path.join(out_dir, "selector_gains.json")

    def build():
        os.makedirs(out_dir, exist_ok=True)
        params = scaling.ScalerParams.load(scaler_path)
        pool, _ = store.unify([store.load(train_a), store.load(train_b)])
        scaled = scaling.transform(pool.features, params)
        gains = dimred.selector_gains(scaled, pool.labels)
        payload = {"gains": gains.tolist(), "n_dims": int(scaled.shape[1]),
                   "train_fingerprint": pool.fingerprint(),
                   "scaler_ref": params.fingerprint()}
        tmp = gains_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(payload, sort_keys=True))
        os.replace(tmp, gains_path)

    _stage(ctx, "selector-gains", {"out": gains_path},
           {"train_a": train_a, "train_b": train_b, "scaler": scaler_path},
           [gains_path], build)
    return gains_path


@main.command("fit-reduce")
@click.option("--method", type=click.Choice(["pca", "xgbfs"]), required=True)
@click.option("--dim", type=int, required=True)
@click.option("--train-a", required=True, type=click.Path(exists=True))
@click.option("--train-b", required=True, type=click.Path(exists=True))
@click.option("--scaler", "scaler_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.pass_context
def fit_reduce(ctx, method, dim, train_a, train_b, scaler_path, out):
    """Fit a PCA projection or gain-based feature mask on the scaled pool."""
    inputs = {"train_a": train_a, "train_b": train_b, "scaler": scaler_path}
    if method == "xgbfs":
        gains_path = _selector_gains_stage(ctx, train_a, train_b, scaler_path,
                                           os.path.dirname(out) or ".")
        inputs["selector_gains"] = gains_path

    def build():
        params = scaling.ScalerParams.load(scaler_path)
        if method == "xgbfs":
            with open(gains_path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
            reducer = dimred.mask_from_gains(
                np.asarray(payload["gains"]), dim, payload["n_dims"],
                train_fingerprint=payload["train_fingerprint"],
                scaler_ref=payload["scaler_ref"])
        else:
            pool, _ = store.unify([store.load(train_a), store.load(train_b)])
            scaled = scaling.transform(pool.features, params)
            reducer = dimred.fit_pca(scaled, dim,
                                     train_fingerprint=pool.fingerprint(),
                                     scaler_ref=params.fingerprint())
        dimred.save_reducer(reducer, out)

    _stage(ctx, "fit-reduce", {"method": method, "dim": dim, "out": out},
           inputs, [out], build)
    click.echo(f"reducer {method}-{dim} -> {out}")


def _reduced_features(scaler_params, reducer):
    def get(s):
        return dimred.apply_reducer(reducer,
                                    scaling.transform(s.features, scaler_params))
    return get


@main.command("train-pair")
@click.option("--estimator", type=click.Choice(sorted(tuner.ESTIMATORS)),
              required=True)
@click.option("--train-a", required=True, type=click.Path(exists=True))
@click.option("--train-b", required=True, type=click.Path(exists=True))
@click.option("--val", "val_path", required=True, type=click.Path(exists=True))
@click.option("--scaler", "scaler_path", required=True,
              type=click.Path(exists=True))
@click.option("--reducer", "reducer_path", required=True,
              type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--max-trials", type=int, default=30, show_default=True)
@click.option("--max-seconds", type=float, default=None)
@click.option("--seed", type=int, required=True)
@click.pass_context
def train_pair(ctx, estimator, train_a, train_b, val_path, scaler_path,
               reducer_path, out_dir, max_trials, max_seconds, seed):
    """Tune and train one model per partition, then pick the fusion weight."""
    def build():
        params = scaling.ScalerParams.load(scaler_path)
        reducer = dimred.load_reducer(reducer_path)
        if reducer.scaler_ref and reducer.scaler_ref != params.fingerprint():
            raise ArtifactMismatchError(
                f"reducer {reducer_path} was fit behind scaler "
                f"{reducer.scaler_ref[:12]}, got {params.fingerprint()[:12]}")
        pm, logs = pair.train_pair(
            store.load(train_a), store.load(train_b), store.load(val_path),
            estimator, tuner.Budget(max_trials=max_trials,
                                    max_seconds=max_seconds),
            seed=seed,
            reducer_ref=dimred.reducer_fingerprint(reducer),
            scaler_ref=params.fingerprint(),
            features=_reduced_features(params, reducer))
        pair.save_pair(pm, out_dir, logs)

    _stage(ctx, "train-pair",
           {"estimator": estimator, "max_trials": max_trials,
            "max_seconds": max_seconds, "seed": seed, "out_dir": out_dir},
           {"train_a": train_a, "train_b": train_b, "val": val_path,
            "scaler": scaler_path, "reducer": reducer_path},
           [out_dir], build)
    click.echo(f"pair {estimator} -> {out_dir}")


@main.command()
@click.option("--pair", "pair_dir", required=True, type=click.Path(exists=True))
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True))
@click.option("--scaler", "scaler_path", required=True,
              type=click.Path(exists=True))
@click.option("--reducer", "reducer_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--tag", default=None, help="Dataset tag for the report.")
@click.pass_context
def evaluate(ctx, pair_dir, store_path, scaler_path, reducer_path, out, tag):
    """Score a dataset with frozen artifacts and write the metric report."""
    def build():
        report = metrics.evaluate(
            pair.load_pair(pair_dir), store.load(store_path),
            scaling.ScalerParams.load(scaler_path),
            dimred.load_reducer(reducer_path), dataset_tag=tag)
        tmp = out + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        os.replace(tmp, out)

    _stage(ctx, "evaluate", {"out": out, "tag": tag},
           {"pair": pair_dir, "store": store_path, "scaler": scaler_path,
            "reducer": reducer_path}, [out], build)
    with open(out, "r", encoding="utf-8") as fh:
        report = metrics.EvalReport.from_json(fh.read())
    click.echo(f"eval {report.dataset_tag}: f1_best={report.f1_best:.4f} "
               f"auc={report.auc:.4f} tpr@1%={report.tpr_at_1pct_fpr:.4f} "
               f"tpr@0.1%={report.tpr_at_01pct_fpr:.4f} -> {out}")


@main.command("gen-synth")
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, required=True)
@click.option("--dims", type=int, default=synth.DEFAULT_DIMS, show_default=True)
@click.option("--informative", type=int, default=synth.DEFAULT_INFORMATIVE,
              show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--info-out", type=click.Path(), default=None,
              help="Where to record the planted feature indices.")
@click.pass_context
def gen_synth(ctx, n, seed, dims, informative, out, info_out):
    """Generate the bundled synthetic feature corpus."""
    def build():
        corpus, info = synth.make_corpus(n=n, seed=seed, n_dims=dims,
                                         n_informative=informative)
        store.save(corpus, out)
        if info_out:
            tmp = info_out + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(json.dumps({"seed": seed,
                                     "informative": info.informative.tolist()},
                                    sort_keys=True))
            os.replace(tmp, info_out)

    outputs = [out] + ([info_out] if info_out else [])
    _stage(ctx, "gen-synth",
           {"n": n, "seed": seed, "dims": dims, "informative": informative,
            "out": out}, {}, outputs, build)
    click.echo(f"synthetic corpus ({n} rows, {dims} dims) -> {out}")


def sweep_job_seed(seed: int, estimator: str, dim: int) -> int:
    """Matched (dim, estimator) jobs share seeds across reducers so the
    PCA/XGBFS comparison sees identical sampled hyperparameters."""
    from .forest.grow import mix_seed
    est_code = sorted(tuner.ESTIMATORS).index(estimator)
    return mix_seed(mix_seed(seed, est_code), dim) % (1 << 32)


@main.command()
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", type=int, required=True)
@click.option("--val", "val_fraction", type=float, default=0.1, show_default=True)
@click.option("--test", "test_fraction", type=float, default=0.1, show_default=True)
@click.option("--dims", default="128,256,384", show_default=True)
@click.option("--estimators", default="lgbm,xgb,rf,et", show_default=True)
@click.option("--methods", default="pca,xgbfs", show_default=True)
@click.option("--max-trials", type=int, default=30, show_default=True)
@click.option("--max-seconds", type=float, default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.pass_context
def sweep(ctx, corpus_path, out_dir, seed, val_fraction, test_fraction, dims,
          estimators, methods, max_trials, max_seconds, workers):
    """Run the full reducer x dimension x estimator grid of pair models."""
    dims = [int(v) for v in dims.split(",") if v]
    estimators = [v.strip() for v in estimators.split(",") if v.strip()]
    methods = [v.strip() for v in methods.split(",") if v.strip()]
    for est in estimators:
        if est not in tuner.ESTIMATORS:
            raise ConfigError(f"unknown estimator {est!r}")
    for method in methods:
        if method not in ("pca", "xgbfs"):
            raise ConfigError(f"unknown reduction method {method!r}")

    split_dir = os.path.join(out_dir, "splits")
    ctx.invoke(split, store_path=corpus_path, out_dir=split_dir, seed=seed,
               val_fraction=val_fraction, test_fraction=test_fraction,
               stratify=True)
    paths = {tag: os.path.join(split_dir, f"{tag.lower()}.fvs")
             for tag in store.PARTITIONS}
    scaler_path = os.path.join(out_dir, "scaler.json")
    ctx.invoke(fit_scalers, train_a=paths["train_A"], train_b=paths["train_B"],
               out=scaler_path)

    reducer_paths = {}
    for method in methods:
        for dim in dims:
            ext = "bin" if method == "pca" else "json"
            out = os.path.join(out_dir, f"reducer_{method}_{dim}.{ext}")
            ctx.invoke(fit_reduce, method=method, dim=dim,
                       train_a=paths["train_A"], train_b=paths["train_B"],
                       scaler_path=scaler_path, out=out)
            reducer_paths[(method, dim)] = out

    jobs = [(method, dim, est)
            for method in methods for dim in dims for est in estimators]

    def run_job(job):
        method, dim, est = job
        pair_dir = os.path.join(out_dir, f"pair_{method}_{dim}_{est}")
        report_path = os.path.join(out_dir, f"report_{method}_{dim}_{est}.json")
        ctx.invoke(train_pair, estimator=est, train_a=paths["train_A"],
                   train_b=paths["train_B"], val_path=paths["validation"],
                   scaler_path=scaler_path,
                   reducer_path=reducer_paths[(method, dim)],
                   out_dir=pair_dir, max_trials=max_trials,
                   max_seconds=max_seconds,
                   seed=sweep_job_seed(seed, est, dim))
        ctx.invoke(evaluate, pair_dir=pair_dir, store_path=paths["test"],
                   scaler_path=scaler_path,
                   reducer_path=reducer_paths[(method, dim)],
                   out=report_path, tag=f"test/{method}-{dim}-{est}")
        return report_path

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            report_paths = list(pool_exec.map(run_job, jobs))
    else:
        report_paths = [run_job(job) for job in jobs]

    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path + ".tmp", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["red.", "dim.", "est.", "F1", "AUC",
                         "TPR@1%", "TPR@0.1%"])
        for (method, dim, est), report_path in zip(jobs, report_paths):
            with open(report_path, "r", encoding="utf-8") as rf:
                report = metrics.EvalReport.from_json(rf.read())
            writer.writerow([method, dim, est,
                             f"{report.f1_best:.4f}", f"{report.auc:.4f}",
                             f"{report.tpr_at_1pct_fpr:.4f}",
                             f"{report.tpr_at_01pct_fpr:.4f}"])
    os.replace(csv_path + ".tmp", csv_path)
    click.echo(f"sweep complete: {len(jobs)} jobs -> {csv_path}")


@main.command()
@click.argument("inputs", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--pair", "pair_dir", required=True, type=click.Path(exists=True))
@click.option("--scaler", "scaler_path", required=True,
              type=click.Path(exists=True))
@click.option("--reducer", "reducer_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None,
              help="Write JSONL verdicts here instead of stdout.")
@click.pass_context
def predict(ctx, inputs, pair_dir, scaler_path, reducer_path, out):
    """Score PE files with a trained pair and frozen preprocessing."""
    pm = pair.load_pair(pair_dir)
    params = scaling.ScalerParams.load(scaler_path)
    reducer = dimred.load_reducer(reducer_path)
    if reducer.scaler_ref and reducer.scaler_ref != params.fingerprint():
        raise ArtifactMismatchError("reducer and scaler fingerprints disagree")
    lines = []
    for path in _iter_input_files(inputs):
        with open(path, "rb") as fh:
            data = fh.read()
        reduced = dimred.apply_reducer(
            reducer, scaling.transform(vectorize(data).values, params))
        score, verdict = pair.predict(pm, reduced)
        lines.append(json.dumps({
            "path": path, "sha256": hashlib.sha256(data).hexdigest(),
            "score": score, "verdict": verdict}, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
