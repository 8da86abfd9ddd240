"""Experiment orchestration behind the CLI.

Commands: synth, degrade, restore, pretrain, train, eval, ablate,
gradcheck. Every command is a pure function of (config, seed): re-running
with the same inputs rewrites byte-identical artifacts. Dataset, degraded,
restored and checkpoint artifacts live under the config's output_dir; the
ablation command loads the dataset once and degrades/restores in memory.
"""

from __future__ import annotations

import json
import subprocess
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .backbone import BackboneConfig, BackboneParams, embed, pretrain
from .config import config_hash
from .datagen import DatasetManifest, load_images, make_pairs, synth_dataset
from .errors import ContractError, DependencyError, EvaluationError
from .fusion import FusionConfig, FusionParams
from .margin import ClassifierHead, MarginParams, angular_margin_loss
from .metrics import ScoreSet, VerificationReport, tar_at_far, top_k_hits, verification_accuracy
from .optim import finite_diff_check
from .restore import RestoreConfig, restore
from .tensorio import load_bundle, save_bundle, save_tensor
from .trainer import STRATEGIES, TrainConfig, forward_framework, probe_embeddings, train_adapter
from .turbsim import init_params, degrade, zernike_psf


def level_tag(meters):
    return f"{int(round(meters / 1000))}k"


def pct(x):
    """Rates rendered as percentages with 3 decimals, table style."""
    return f"{100.0 * x:.3f}"


def version_string():
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"], capture_output=True, text=True, timeout=5
        )
        suffix = desc.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        suffix = ""
    return f"turbfuse {__version__}" + (f" ({suffix})" if suffix else "")


def emit_report(results, path, fmt="json", csv_rows=None):
    """Write a machine-readable report; JSON always, CSV on request."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if fmt == "csv":
        if csv_rows is None:
            raise ContractError("csv output requested but no rows provided")
        csv_path = path.with_suffix(".csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            for row in csv_rows:
                fh.write(",".join(str(c) for c in row) + "\n")
    return path


# -- artifact plumbing ---------------------------------------------------------


def _out(cfg, out_dir=None):
    return Path(out_dir or cfg["output_dir"])


def _dataset_or_die(cfg, out):
    manifest_path = _out(cfg, out) / "dataset" / "manifest.json"
    if not manifest_path.exists():
        raise DependencyError("dataset not found; run the `synth` command first")
    return DatasetManifest.load(manifest_path)


def _turb_params(cfg, meters=None):
    t = cfg["turbulence"]
    overrides = {k: v for k, v in t.items() if k != "intensity_meters"}
    return init_params(meters or t["intensity_meters"], cfg["dataset"]["image_size"], overrides)


def _restore_cfg(cfg, **overrides):
    r = dict(cfg["restore"])
    r.update(overrides)
    return RestoreConfig(**r)


def _image_seed(cfg_seed, meters, index):
    return np.random.SeedSequence([int(cfg_seed), int(meters), int(index)])


def degrade_stack(images, params, cfg_seed):
    """Degrade a stack of images with per-image deterministic seed streams."""
    return np.stack(
        [degrade(img, params, _image_seed(cfg_seed, params.intensity_meters, i)) for i, img in enumerate(images)]
    ).astype(np.float32)


def restore_stack(degraded, clean, params, rcfg: RestoreConfig, cfg_seed, seed_salt=0):
    """Restore a degraded stack; wiener mode rebuilds each image's PSF."""
    out = []
    for i, img in enumerate(degraded):
        if rcfg.mode == "wiener":
            psf_rng = np.random.default_rng(_image_seed(cfg_seed, params.intensity_meters, i).spawn(2)[1])
            kern = zernike_psf(params, seed=psf_rng)
            out.append(restore(img, rcfg, psf=kern))
        else:
            seed = np.random.SeedSequence([int(cfg_seed), int(seed_salt), i, 0xA27])
            out.append(restore(img, rcfg, clean=clean[i], seed=np.random.default_rng(seed)))
    return np.stack(out).astype(np.float32)


# -- commands ------------------------------------------------------------------


def cmd_synth(cfg, out_dir=None):
    d = cfg["dataset"]
    manifest = synth_dataset(
        _out(cfg, out_dir) / "dataset",
        d["n_identities"],
        d["per_identity"],
        image_size=d["image_size"],
        seed=cfg["seed"],
        n_test_identities=d["n_test_identities"],
        test_per_identity=d["test_per_identity"],
    )
    return {"command": "synth", "images": len(manifest.images), "config_hash": config_hash(cfg)}


def cmd_degrade(cfg, out_dir=None):
    out = _out(cfg, out_dir)
    manifest = _dataset_or_die(cfg, out_dir)
    params = _turb_params(cfg)
    tag = level_tag(params.intensity_meters)
    images, _ = load_images(out / "dataset", manifest.images)
    degraded = degrade_stack(images.astype(np.float64), params, cfg["seed"])
    dest = out / "degraded" / tag
    for entry, img in zip(manifest.images, degraded):
        save_tensor(dest / entry.path, img)
    manifest.save(dest / "manifest.json")
    prov = {
        "level": tag,
        "intensity_meters": params.intensity_meters,
        "fried_r0": params.fried_r0,
        "seed": cfg["seed"],
        "turbulence": cfg["turbulence"],
    }
    emit_report(prov, dest / "provenance.json")
    return {"command": "degrade", "level": tag, "images": len(manifest.images)}


def cmd_restore(cfg, out_dir=None):
    out = _out(cfg, out_dir)
    manifest = _dataset_or_die(cfg, out_dir)
    params = _turb_params(cfg)
    tag = level_tag(params.intensity_meters)
    src = out / "degraded" / tag
    if not (src / "manifest.json").exists():
        raise DependencyError(f"degraded set {tag} not found; run the `degrade` command first")
    clean, _ = load_images(out / "dataset", manifest.images)
    degraded, _ = load_images(src, manifest.images)
    rcfg = _restore_cfg(cfg)
    restored = restore_stack(degraded.astype(np.float64), clean.astype(np.float64), params, rcfg, cfg["seed"])
    dest = out / "restored" / tag
    for entry, img in zip(manifest.images, restored):
        save_tensor(dest / entry.path, img)
    manifest.save(dest / "manifest.json")
    emit_report({"level": tag, "restore": cfg["restore"], "seed": cfg["seed"]}, dest / "provenance.json")
    return {"command": "restore", "level": tag, "images": len(manifest.images)}


def _backbone_cfg(cfg):
    b = cfg["backbone"]
    return BackboneConfig(
        image_size=cfg["dataset"]["image_size"],
        channels=tuple(b["channels"]),
        kernel=b["kernel"],
        embed_dim=b["embed_dim"],
    )


def _margin(cfg):
    m = cfg["loss"]
    return MarginParams(m["m1"], m["m2"], m["m3"], m["s"])


def cmd_pretrain(cfg, out_dir=None):
    out = _out(cfg, out_dir)
    manifest = _dataset_or_die(cfg, out_dir)
    images, labels = load_images(out / "dataset", manifest.split_images("train"))
    b = cfg["backbone"]
    result = pretrain(
        images,
        labels,
        _backbone_cfg(cfg),
        _margin(cfg),
        epochs=b["epochs"],
        batch_size=b["batch_size"],
        lr=b["lr"],
        warmup_steps=b["warmup_steps"],
        seed=cfg["seed"],
    )
    dest = out / "pretrain"
    save_bundle(dest / "backbone", {k: t.data for k, t in result.params.tensors().items()})
    save_bundle(dest / "head", {"weights": result.head.weights.data})
    drop = 1.0 - result.loss_history[-1] / max(result.loss_history[0], 1e-12)
    emit_report(
        {"loss_first": result.loss_history[0], "loss_last": result.loss_history[-1], "loss_drop": drop},
        dest / "history.json",
    )
    return {"command": "pretrain", "steps": len(result.loss_history), "loss_drop": drop}


def _load_backbone(cfg, out, trainable=False):
    dest = _out(cfg, out) / "pretrain" / "backbone"
    if not (dest / "index.json").exists():
        raise DependencyError("pretrained backbone not found; run the `pretrain` command first")
    arrays = load_bundle(dest)
    params = BackboneParams(_backbone_cfg(cfg))
    from .tensor import Tensor

    n_stages = len(params.cfg.channels)
    for i in range(n_stages):
        params.conv_w.append(Tensor(arrays[f"conv{i}.w"], requires_grad=trainable))
        params.conv_b.append(Tensor(arrays[f"conv{i}.b"], requires_grad=trainable))
    params.dense_w = Tensor(arrays["dense.w"], requires_grad=trainable)
    params.dense_b = Tensor(arrays["dense.b"], requires_grad=trainable)
    return params


def _fusion_cfg(cfg):
    f = cfg["fusion"]
    return FusionConfig(
        d_model=cfg["backbone"]["embed_dim"],
        n_heads=f["n_heads"],
        ffn_hidden=f["ffn_hidden"],
        attention_order=f["attention_order"],
        role_variant=f["role_variant"],
        cascade_depth=f["cascade_depth"],
        use_residual=f["use_residual"],
        block_norm=f["block_norm"],
        normalize_inputs=f["normalize_inputs"],
    )


def _train_cfg(cfg, strategy=None, seed=None, epochs=None):
    t = cfg["train"]
    return TrainConfig(
        batch_size=t["batch_size"],
        epochs=epochs if epochs is not None else t["epochs"],
        lr_base=t["lr_base"],
        momentum=t["momentum"],
        weight_decay=t["weight_decay"],
        warmup_steps=t["warmup_steps"],
        poly_power=t["poly_power"],
        seed=cfg["seed"] if seed is None else seed,
        strategy=strategy or t["strategy"],
        reuse_pretrain_head=t["reuse_pretrain_head"],
    )


def _train_stacks(cfg, out):
    """Clean/degraded/restored train-split stacks from disk artifacts."""
    out_p = _out(cfg, out)
    manifest = _dataset_or_die(cfg, out)
    tag = level_tag(cfg["turbulence"]["intensity_meters"])
    entries = manifest.split_images("train")
    if not (out_p / "degraded" / tag / "manifest.json").exists():
        raise DependencyError(f"degraded set {tag} not found; run the `degrade` command first")
    if not (out_p / "restored" / tag / "manifest.json").exists():
        raise DependencyError(f"restored set {tag} not found; run the `restore` command first")
    lq, labels = load_images(out_p / "degraded" / tag, entries)
    restored, _ = load_images(out_p / "restored" / tag, entries)
    return manifest, lq, restored, labels, tag


def cmd_train(cfg, out_dir=None):
    out = _out(cfg, out_dir)
    manifest, lq, restored, labels, tag = _train_stacks(cfg, out_dir)
    frozen = _load_backbone(cfg, out_dir, trainable=False)
    before = frozen.state_bytes()
    tcfg = _train_cfg(cfg)
    result = train_adapter(lq, restored, labels, frozen, _fusion_cfg(cfg), _margin(cfg), tcfg)
    assert frozen.state_bytes() == before  # freeze contract
    dest = out / "train" / tcfg.strategy
    dest.mkdir(parents=True, exist_ok=True)
    arrays = {}
    if result.hq is not None:
        arrays.update({f"hq.{k}": t.data for k, t in result.hq.tensors().items()})
    if result.fusion_params is not None:
        arrays.update({f"fusion.{k}": t.data for k, t in result.fusion_params.tensors().items()})
    if result.head is not None:
        arrays["head.weights"] = result.head.weights.data
    if arrays:
        save_bundle(dest / "checkpoint", arrays)
    (dest / "history.jsonl").write_text(result.history.to_jsonl() + "\n", encoding="utf-8")
    return {
        "command": "train",
        "strategy": tcfg.strategy,
        "level": tag,
        "optimizer_steps": result.optimizer_steps,
        "final_epoch_loss": result.history.epoch_loss[-1] if result.history.epoch_loss else None,
    }


def _load_train_result(cfg, out, strategy):
    from .tensor import Tensor

    dest = _out(cfg, out) / "train" / strategy / "checkpoint"
    if not (dest / "index.json").exists():
        raise DependencyError(f"checkpoint for {strategy} not found; run the `train` command first")
    arrays = load_bundle(dest)
    hq = BackboneParams(_backbone_cfg(cfg))
    n_stages = len(hq.cfg.channels)
    for i in range(n_stages):
        hq.conv_w.append(Tensor(arrays[f"hq.conv{i}.w"]))
        hq.conv_b.append(Tensor(arrays[f"hq.conv{i}.b"]))
    hq.dense_w = Tensor(arrays["hq.dense.w"])
    hq.dense_b = Tensor(arrays["hq.dense.b"])

    fusion_params = None
    fcfg = _fusion_cfg(cfg)
    if any(k.startswith("fusion.") for k in arrays):
        fusion_params = FusionParams.init(np.random.default_rng(0), fcfg)
        for k, t in fusion_params.tensors().items():
            t.data[...] = arrays["fusion." + k]
    head = ClassifierHead(Tensor(arrays["head.weights"])) if "head.weights" in arrays else None

    from .trainer import TrainHistory, TrainResult

    return TrainResult(strategy, hq, fusion_params, head, TrainHistory(), -1)


def evaluate_strategy(cfg, strategy, manifest, frozen, result, clean_test, lq_test, restored_test, labels_test):
    """Verification report for one strategy on the test split.

    Gallery side embeds clean images with the frozen baseline; probe side
    embeds degraded/restored images the way the strategy prescribes.
    """
    fcfg = _fusion_cfg(cfg)
    with T.no_grad():
        gallery_embs = embed(clean_test, frozen).data
    probe_embs = probe_embeddings(strategy, lq_test, restored_test, frozen, result, fcfg)

    e = cfg["eval"]
    pairs = make_pairs(manifest, "test", e["n_genuine_pairs"], e["n_impostor_pairs"], seed=cfg["seed"])
    fn = gallery_embs / np.linalg.norm(gallery_embs, axis=1, keepdims=True)
    pn = probe_embs / np.linalg.norm(probe_embs, axis=1, keepdims=True)
    scores = np.array([float(fn[p.index_a] @ pn[p.index_b]) for p in pairs])
    genuine = np.array([p.genuine for p in pairs])
    score_set = ScoreSet(scores, genuine)
    accuracy, thresholds = verification_accuracy(score_set, n_folds=e["n_folds"])
    tars = {far: tar_at_far(score_set, far) for far in e["far_points"]}

    # identification: first clean image per identity enrolls the gallery
    first_idx = {}
    for i, lbl in enumerate(labels_test):
        first_idx.setdefault(int(lbl), i)
    g_idx = sorted(first_idx.values())
    p_idx = [i for i in range(len(labels_test)) if i not in set(g_idx)]
    ranks = {
        k: top_k_hits(probe_embs[p_idx], labels_test[p_idx], gallery_embs[g_idx], labels_test[g_idx], k)
        for k in e["top_ks"]
        if k <= len(g_idx)
    }

    report = VerificationReport(
        accuracy=accuracy,
        thresholds=thresholds,
        tar_at_far=tars,
        rank_k_hit_rate=ranks,
        config={"strategy": strategy, "n_pairs": len(pairs), "seed": cfg["seed"]},
    )
    return report, score_set


def cmd_eval(cfg, out_dir=None, fmt="json"):
    out = _out(cfg, out_dir)
    manifest = _dataset_or_die(cfg, out_dir)
    tag = level_tag(cfg["turbulence"]["intensity_meters"])
    entries = manifest.split_images("test")
    clean_test, labels_test = load_images(out / "dataset", entries)
    for sub, cmd in (("degraded", "degrade"), ("restored", "restore")):
        if not (out / sub / tag / "manifest.json").exists():
            raise DependencyError(f"{sub} set {tag} not found; run the `{cmd}` command first")
    lq_test, _ = load_images(out / "degraded" / tag, entries)
    restored_test, _ = load_images(out / "restored" / tag, entries)
    frozen = _load_backbone(cfg, out_dir, trainable=False)

    strategy = cfg["train"]["strategy"]
    result = None
    if strategy in ("finetune_restored", "adapter_joint"):
        result = _load_train_result(cfg, out_dir, strategy)
    report, score_set = evaluate_strategy(
        cfg, strategy, manifest, frozen, result, clean_test, lq_test, restored_test, labels_test
    )
    payload = {
        "command": "eval",
        "level": tag,
        "strategy": strategy,
        "report": report.to_dict(),
        "accuracy_pct": pct(report.accuracy),
        "config_hash": config_hash(cfg),
        "version": version_string(),
    }
    csv_rows = [("pair_id", "score", "label")] + [
        (i, f"{s:.6f}", int(l)) for i, (s, l) in enumerate(zip(score_set.scores, score_set.labels))
    ]
    emit_report(payload, out / "reports" / f"eval_{strategy}_{tag}.json", fmt=fmt, csv_rows=csv_rows)
    return payload


# -- gradcheck -----------------------------------------------------------------


def full_pipeline_gradcheck(dtype, eps, d_model=16, n_heads=4, batch=4, n_classes=8, samples_per_tensor=4, seed=0):
    """Finite-difference check through embed -> fuse -> margin loss."""
    rng = np.random.default_rng(seed)
    bcfg = BackboneConfig(image_size=8, channels=(2, 4), embed_dim=d_model)
    frozen = BackboneParams.init(rng, bcfg, dtype=dtype, trainable=False)
    hq = BackboneParams.init(rng, bcfg, dtype=dtype, trainable=True)
    fcfg = FusionConfig(d_model=d_model, n_heads=n_heads, ffn_hidden=2 * d_model)
    fp = FusionParams.init(rng, fcfg, dtype=dtype)
    head = ClassifierHead.init(rng, n_classes, d_model, dtype=dtype)
    head.weights.data[...] = rng.standard_normal((n_classes, d_model)) * 0.1
    margin = MarginParams(1.0, 0.5, 0.0, 16.0)
    lq = rng.random((batch, 8, 8))
    hq_imgs = rng.random((batch, 8, 8))
    labels = rng.integers(0, n_classes, batch)

    params = dict(hq.tensors("hq."))
    params.update(fp.tensors("fusion."))
    params["head.weights"] = head.weights

    def f(ps):
        feats = forward_framework(lq.astype(dtype), hq_imgs.astype(dtype), frozen, hq, fp, fcfg)
        return angular_margin_loss(feats, labels, head, margin)

    return finite_diff_check(f, params, eps=eps, samples_per_tensor=samples_per_tensor, seed=seed)


def cmd_gradcheck(cfg, out_dir=None):
    import time

    t0 = time.time()
    err64 = full_pipeline_gradcheck(np.float64, eps=1e-5)
    err32 = full_pipeline_gradcheck(np.float32, eps=3e-3)
    elapsed = time.time() - t0
    ok = err64 < 1e-6 and err32 < 1e-3
    payload = {
        "command": "gradcheck",
        "max_rel_error_f64": err64,
        "max_rel_error_f32": err32,
        "tolerance_f64": 1e-6,
        "tolerance_f32": 1e-3,
        "elapsed_s": round(elapsed, 3),
        "passed": bool(ok),
    }
    emit_report(payload, _out(cfg, out_dir) / "reports" / "gradcheck.json")
    print(f"gradcheck: f64 max rel err {err64:.3e} (tol 1e-6), f32 {err32:.3e} (tol 1e-3)")
    if not ok:
        raise EvaluationError(f"gradient check failed: f64 {err64:.3e}, f32 {err32:.3e}")
    return payload


# -- ablation grid ---------------------------------------------------------------


def _ablate_data(cfg, out_dir, meters, artifact_sigma, seed_salt):
    """In-memory degraded/restored stacks for one intensity level."""
    out = _out(cfg, out_dir)
    manifest = _dataset_or_die(cfg, out_dir)
    params = _turb_params(cfg, meters=meters)
    rcfg = _restore_cfg(cfg, artifact_sigma=artifact_sigma)
    data = {"manifest": manifest, "params": params}
    for split in ("train", "test"):
        entries = manifest.split_images(split)
        clean, labels = load_images(out / "dataset", entries)
        clean64 = clean.astype(np.float64)
        lq = degrade_stack(clean64, params, cfg["seed"])
        restored = restore_stack(lq.astype(np.float64), clean64, params, rcfg, cfg["seed"], seed_salt=seed_salt)
        data[split] = (clean, lq, restored, labels)
    return data


def _table3(cfg, out_dir, frozen):
    ab = cfg["ablations"]
    meters = ab["table3_intensity"]
    rows = {s: [] for s in STRATEGIES}
    per_seed = []
    for seed in ab["table3_seeds"]:
        data = _ablate_data(cfg, out_dir, meters, ab["table3_artifact_sigma"], seed_salt=seed)
        clean_test, lq_test, restored_test, labels_test = data["test"]
        _, lq_train, restored_train, labels_train = data["train"]
        seed_row = {}
        for strategy in STRATEGIES:
            tcfg = _train_cfg(cfg, strategy=strategy, seed=seed)
            result = train_adapter(lq_train, restored_train, labels_train, frozen, _fusion_cfg(cfg), _margin(cfg), tcfg)
            report, _ = evaluate_strategy(
                cfg, strategy, data["manifest"], frozen, result, clean_test, lq_test, restored_test, labels_test
            )
            rows[strategy].append(report)
            seed_row[strategy] = report.accuracy
        per_seed.append(seed_row)

    table = []
    for strategy in STRATEGIES:
        accs = [r.accuracy for r in rows[strategy]]
        tars = [r.tar_at_far.get(0.01, float("nan")) for r in rows[strategy]]
        table.append(
            {
                "strategy": strategy,
                "accuracy_mean": float(np.mean(accs)),
                "accuracy_pct": pct(float(np.mean(accs))),
                "accuracy_per_seed": accs,
                "tar_at_far_0.01_mean": float(np.mean(tars)),
            }
        )
    return {"level": level_tag(meters), "seeds": ab["table3_seeds"], "rows": table, "per_seed": per_seed}


def _fusion_grid_variants(cfg):
    ab = cfg["ablations"]
    base = cfg["fusion"]
    variants = []

    def add(name, **kw):
        v = dict(base)
        v.update(kw)
        key = json.dumps(v, sort_keys=True)
        if key not in {x[2] for x in variants}:
            variants.append((name, v, key))

    for flag in ab["residual"]:
        add(f"residual={flag}", use_residual=flag)
    for depth in ab["cascade"]:
        add(f"cascade={depth}", cascade_depth=depth)
    for order in ab["attention_order"]:
        add(f"order={order}", attention_order=order)
    for rv in ab["role_variants"]:
        add(f"variant={rv}", role_variant=rv)
    return [(name, v) for name, v, _ in variants]


def _fusion_grid(cfg, out_dir, frozen):
    ab = cfg["ablations"]
    data = _ablate_data(cfg, out_dir, ab["table3_intensity"], ab["table3_artifact_sigma"], seed_salt=0)
    clean_test, lq_test, restored_test, labels_test = data["test"]
    _, lq_train, restored_train, labels_train = data["train"]
    rows = []
    for name, fdict in _fusion_grid_variants(cfg):
        vcfg = json.loads(json.dumps(cfg))
        vcfg["fusion"].update(fdict)
        tcfg = _train_cfg(vcfg, strategy="adapter_joint", epochs=ab["grid_epochs"])
        result = train_adapter(lq_train, restored_train, labels_train, frozen, _fusion_cfg(vcfg), _margin(vcfg), tcfg)
        report, _ = evaluate_strategy(
            vcfg, "adapter_joint", data["manifest"], frozen, result, clean_test, lq_test, restored_test, labels_test
        )
        gc_cfg = FusionConfig(
            d_model=16,
            n_heads=4,
            ffn_hidden=32,
            attention_order=fdict["attention_order"],
            role_variant=fdict["role_variant"],
            cascade_depth=fdict["cascade_depth"],
            use_residual=fdict["use_residual"],
            block_norm=fdict["block_norm"],
        )
        err64 = _variant_gradcheck(gc_cfg, np.float64, eps=1e-5)
        err32 = _variant_gradcheck(gc_cfg, np.float32, eps=3e-3)
        rows.append(
            {
                "variant": name,
                "accuracy": report.accuracy,
                "accuracy_pct": pct(report.accuracy),
                "gradcheck_f64": err64,
                "gradcheck_f32": err32,
                "gradcheck_passed": bool(err64 < 1e-6 and err32 < 1e-3),
            }
        )
    return {"level": level_tag(ab["table3_intensity"]), "rows": rows}


def _variant_gradcheck(fcfg: FusionConfig, dtype, eps, seed=0):
    """Criterion-1 style check with an arbitrary fusion variant."""
    rng = np.random.default_rng(seed)
    bcfg = BackboneConfig(image_size=8, channels=(2, 4), embed_dim=fcfg.d_model)
    frozen = BackboneParams.init(rng, bcfg, dtype=dtype, trainable=False)
    hq = BackboneParams.init(rng, bcfg, dtype=dtype, trainable=True)
    fp = FusionParams.init(rng, fcfg, dtype=dtype)
    head = ClassifierHead.init(rng, 8, fcfg.d_model, dtype=dtype)
    head.weights.data[...] = rng.standard_normal((8, fcfg.d_model)) * 0.1
    margin = MarginParams(1.0, 0.5, 0.0, 16.0)
    lq = rng.random((4, 8, 8))
    hq_imgs = rng.random((4, 8, 8))
    labels = rng.integers(0, 8, 4)
    params = dict(hq.tensors("hq."))
    params.update(fp.tensors("fusion."))
    params["head.weights"] = head.weights

    def f(ps):
        feats = forward_framework(lq.astype(dtype), hq_imgs.astype(dtype), frozen, hq, fp, fcfg)
        return angular_margin_loss(feats, labels, head, margin)

    return finite_diff_check(f, params, eps=eps, samples_per_tensor=2, seed=seed)


def _restorer_sweep(cfg, out_dir, frozen):
    """Frozen-baseline accuracy on restored probes per (mode, w)."""
    out = _out(cfg, out_dir)
    manifest = _dataset_or_die(cfg, out_dir)
    meters = cfg["turbulence"]["intensity_meters"]
    params = _turb_params(cfg)
    entries = manifest.split_images("test")
    clean, labels = load_images(out / "dataset", entries)
    clean64 = clean.astype(np.float64)
    lq = degrade_stack(clean64, params, cfg["seed"])
    rows = []
    sweeps = [("oracle_blend", w) for w in cfg["ablations"]["restore_ws"]] + [("wiener", None)]
    for mode, w in sweeps:
        overrides = {"mode": mode}
        if w is not None:
            overrides["fidelity_w"] = w
        rcfg = _restore_cfg(cfg, **overrides)
        restored = restore_stack(lq.astype(np.float64), clean64, params, rcfg, cfg["seed"])
        report, _ = evaluate_strategy(cfg, "eval_restored", manifest, frozen, None, clean, lq, restored, labels)
        rows.append(
            {
                "mode": mode,
                "fidelity_w": w,
                "accuracy": report.accuracy,
                "accuracy_pct": pct(report.accuracy),
                "mse_to_clean": float(((restored - clean) ** 2).mean()),
            }
        )
    return {"level": level_tag(meters), "rows": rows}


def _intensity_ladder(cfg, out_dir, frozen):
    """Degradation MSE and frozen-baseline accuracy across the ladder."""
    out = _out(cfg, out_dir)
    manifest = _dataset_or_die(cfg, out_dir)
    entries = manifest.split_images("test")
    clean, labels = load_images(out / "dataset", entries)
    clean64 = clean.astype(np.float64)
    rows = []
    for meters in cfg["ablations"]["intensity_levels"]:
        params = _turb_params(cfg, meters=meters)
        lq = degrade_stack(clean64, params, cfg["seed"])
        report, _ = evaluate_strategy(cfg, "baseline_lq", manifest, frozen, None, clean, lq, lq, labels)
        rows.append(
            {
                "level": level_tag(meters),
                "intensity_meters": meters,
                "mse": float(((lq - clean) ** 2).mean()),
                "accuracy": report.accuracy,
                "accuracy_pct": pct(report.accuracy),
            }
        )
    return {"rows": rows}


def cmd_ablate(cfg, out_dir=None, fmt="json"):
    out = _out(cfg, out_dir)
    frozen = _load_backbone(cfg, out_dir, trainable=False)
    parts = cfg["ablations"]["parts"]
    results = {"command": "ablate", "config_hash": config_hash(cfg), "version": version_string()}
    if "table3" in parts:
        results["table3"] = _table3(cfg, out_dir, frozen)
    if "fusion_grid" in parts:
        results["fusion_grid"] = _fusion_grid(cfg, out_dir, frozen)
    if "restorer" in parts:
        results["restorer"] = _restorer_sweep(cfg, out_dir, frozen)
    if "intensity" in parts:
        results["intensity"] = _intensity_ladder(cfg, out_dir, frozen)

    csv_rows = [("section", "name", "accuracy_pct")]
    for section in ("table3", "fusion_grid", "restorer", "intensity"):
        if section not in results:
            continue
        for row in results[section]["rows"]:
            name = row.get("strategy") or row.get("variant") or row.get("level") or str(row.get("mode"))
            csv_rows.append((section, name, row.get("accuracy_pct", "")))
    emit_report(results, out / "reports" / "ablate.json", fmt=fmt, csv_rows=csv_rows)
    return results


COMMANDS = {
    "synth": cmd_synth,
    "degrade": cmd_degrade,
    "restore": cmd_restore,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def run(command, cfg, out_dir=None, fmt="json"):
    if command not in COMMANDS:
        raise ContractError(f"unknown command {command!r}; choose from {sorted(COMMANDS)}")
    fn = COMMANDS[command]
    if command in ("eval", "ablate"):
        return fn(cfg, out_dir, fmt=fmt)
    return fn(cfg, out_dir)
