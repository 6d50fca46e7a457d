"""End-to-end orchestration: explainable models, topic encoding, guidance and injection training."""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import blobs
from .benchmark import BenchmarkSpec, build_benchmark
from .config import INJECTING_MODES, RunConfig
from .imgphy import TEST_SPLIT, ImgPhyDataset, dataset_hash
from .metrics import classification_report, fit_linear_probe, kmeans_cluster, pool_features, silhouette_score
from .nn import (PgnModel, PinModel, Tensor, TrainConfig, model_bytes, pgn_features, predict_scores,
                 train_classifier_from_pgn, train_pgn, train_pin)
from .rasters import ComplexImage, ScatteringLabelMap
from .synth import estimate_coherency
from .topics import (Vocabulary, bot_sparsity, build_vocabulary, crop_histograms, default_alpha,
                     encode_document, extract_word_vectors, infer_bots, train_lda)
from .xm import (build_filter_bank, class_centers, halpha_wishart, tfa_label_maps, wishart_assign,
                 HALPHA_ZONES)


class PipelineError(RuntimeError):
    pass


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------- stage 1: explainable models

def _fit_mask(ds: ImgPhyDataset, cfg: RunConfig) -> np.ndarray:
    fit_ids = set(ds.corpus_ids(include_test=cfg.transductive_corpus))
    return np.array([i in fit_ids for i in ds.ids])


def run_xm(ds: ImgPhyDataset, cfg: RunConfig) -> ImgPhyDataset:
    """Attach scattering-label rasters to every patch.

    Polarimetric inputs (2 or 3 channels) go through H/alpha zoning plus
    Wishart refinement; single-channel inputs through sub-band TFA clustering.
    Models are fitted on the unsupervised corpus and applied to every patch.
    """
    if not ds.slc:
        raise PipelineError("run_xm needs complex inputs (slc rasters)")
    stack = np.stack([np.asarray(ds.slc[i]) for i in ds.ids])
    if stack.ndim == 3:
        stack = stack[..., None]
    channels = stack.shape[-1]
    kind = cfg.xm if cfg.xm != "auto" else ("tfa" if channels == 1 else "halpha-wishart")
    fit = _fit_mask(ds, cfg)
    if kind == "halpha-wishart":
        if channels not in (2, 3):
            raise PipelineError(f"H/alpha-Wishart needs 2 or 3 channels, got {channels}")
        field_ = estimate_coherency(stack.astype(np.complex128), cfg.wishart_window)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lm = halpha_wishart(field_[fit], cfg.wishart_iter)
        centers = class_centers(field_[fit], lm.labels, HALPHA_ZONES)
        labels = np.empty(stack.shape[:3], dtype=np.uint8)
        labels[fit] = lm.labels
        if np.any(~fit):
            labels[~fit] = wishart_assign(field_[~fit], centers)
        ds.phy = {pid: labels[n] for n, pid in enumerate(ds.ids)}
        ds.n_s = HALPHA_ZONES
        ds.phy_provenance = "h-alpha-wishart"
        ds.extra["xm"] = {"iterations": lm.meta["iterations"], "changed": lm.meta["changed"],
                          "window": cfg.wishart_window}
    elif kind == "tfa":
        if channels != 1:
            raise PipelineError("TFA works on single-channel inputs")
        bank = build_filter_bank(cfg.tfa_bands, cfg.tfa_bands, cfg.tfa_bandwidth)
        images = [ComplexImage(stack[n, ..., 0].astype(np.complex128)) for n in range(len(ds.ids))]
        maps = tfa_label_maps(images, bank, cfg.tfa_segment, cfg.tfa_stride, cfg.tfa_classes,
                              seed=cfg.data_seed, fit=fit)
        ds.phy = {pid: m.labels for pid, m in zip(ds.ids, maps)}
        ds.n_s = cfg.tfa_classes
        ds.phy_provenance = "tfa-kmeans"
    else:
        raise PipelineError(f"unknown explainable model {kind!r}")
    ds.validate()
    return ds


# ---------------------------------------------------------------- stage 2: topic encoding

@dataclass
class BotStore:
    ids: list
    bots: np.ndarray          # (N, K) aligned with ids
    docs: np.ndarray          # (N, n_words) codeword counts
    vocab: Vocabulary
    topic_word: np.ndarray
    lda_alpha: float
    sparsity: dict
    hashes: dict

    def rows(self, ids) -> np.ndarray:
        pos = {p: n for n, p in enumerate(self.ids)}
        return self.bots[[pos[i] for i in ids]]


def _label_map(ds, pid):
    return ScatteringLabelMap(ds.phy[pid], ds.n_s, ds.phy_provenance)


def run_encode(ds: ImgPhyDataset, cfg: RunConfig, vocab: Vocabulary | None = None) -> BotStore:
    """Vocabulary, LDA and a topic mixture (BoT) for every patch."""
    if not ds.phy:
        raise PipelineError("run_encode needs Phy rasters; run the XM stage first")
    corpus = ds.corpus_ids(include_test=cfg.transductive_corpus)
    if len(corpus) < 2:
        raise PipelineError(f"corpus too small ({len(corpus)} patches)")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.data_seed, 2]))
    if vocab is None:
        per = max(1, cfg.vocab_samples // len(corpus))
        words = np.concatenate([extract_word_vectors(_label_map(ds, p), per, rng, cfg.crop) for p in corpus])
        if len(words) < cfg.n_words:
            raise PipelineError(f"corpus yields {len(words)} words, fewer than n_words={cfg.n_words}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            vocab = build_vocabulary(words, cfg.n_words, seed=cfg.data_seed)
    docs = np.stack([encode_document(_label_map(ds, p), vocab, cfg.crop, cfg.crop_step) for p in ds.ids])
    fit = np.array([p in set(corpus) for p in ds.ids])
    lda = train_lda(docs[fit].T, cfg.n_topics, cfg.lda_alpha, cfg.lda_beta, cfg.lda_iterations,
                    seed=cfg.data_seed)
    bots = infer_bots(docs, lda, cfg.infer_burn_in, cfg.infer_samples, seed=cfg.data_seed)
    sp = bot_sparsity(bots)
    vbytes = blobs.dumps({"centers": vocab.centers}, {"seed": vocab.seed}, "vocabulary")
    lbytes = blobs.dumps({"topic_word": lda.topic_word}, {"alpha": lda.alpha, "beta": lda.beta}, "lda")
    return BotStore(list(ds.ids), bots, docs, vocab, lda.topic_word, lda.alpha,
                    {"mean": float(sp.mean()), "min": float(sp.min()), "max": float(sp.max()),
                     "n_topics": cfg.n_topics},
                    {"vocabulary": _sha(vbytes), "lda": _sha(lbytes), "bots": _sha(bots.tobytes())})


def raw_label_guidance(ds: ImgPhyDataset, ids) -> np.ndarray:
    """Normalized scattering-label histograms, the guidance used without topic modelling."""
    maps = np.stack([ds.phy[i] for i in ids])
    return crop_histograms(maps, ds.n_s)


# ---------------------------------------------------------------- preparation and caching

@dataclass
class Prepared:
    ds: ImgPhyDataset
    store: BotStore
    seconds: dict
    hashes: dict
    pgn_cache: dict = field(default_factory=dict)


def prepare(cfg: RunConfig, ds: ImgPhyDataset | None = None, spec: BenchmarkSpec | None = None) -> Prepared:
    """Build (or take) the dataset, run the explainable models and the topic encoder."""
    cfg.validate()
    seconds = {}
    t = time.perf_counter()
    if ds is None:
        ds = build_benchmark(spec or BenchmarkSpec(seed=cfg.data_seed))
    seconds["data"] = time.perf_counter() - t
    if not ds.phy:
        t = time.perf_counter()
        run_xm(ds, cfg)
        seconds["xm"] = time.perf_counter() - t
    t = time.perf_counter()
    store = run_encode(ds, cfg)
    seconds["encode"] = time.perf_counter() - t
    hashes = {"dataset": dataset_hash(ds), **store.hashes}
    return Prepared(ds, store, seconds, hashes)


def pgn_train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(lr=cfg.pgn_lr, momentum=cfg.pgn_momentum, epochs=cfg.pgn_epochs,
                       batch_size=cfg.pgn_batch, schedule="constant", lam=cfg.lam, seed=cfg.seed,
                       constraint=cfg.constraint, alpha=cfg.alpha, p_a=cfg.p_a)


def pin_train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(lr=cfg.pin_lr, momentum=cfg.pin_momentum, epochs=cfg.pin_epochs,
                       batch_size=cfg.pin_batch, schedule=cfg.pin_schedule,
                       weight_decay=cfg.pin_weight_decay, lam=cfg.lam, seed=cfg.seed,
                       constraint=cfg.constraint, sal=cfg.effective_sal(),
                       finetune_scale=cfg.finetune_scale, alpha=cfg.alpha, p_a=cfg.p_a)


def guidance_targets(prep: Prepared, ids, raw: bool) -> np.ndarray:
    return raw_label_guidance(prep.ds, ids) if raw else prep.store.rows(ids)


def get_pgn(prep: Prepared, cfg: RunConfig, raw: bool = False):
    """Train (or fetch from the in-memory cache) the guidance network. Returns ``(state, log)``."""
    key = (cfg.seed, cfg.constraint, raw, cfg.profile, cfg.pgn_lr, cfg.pgn_momentum, cfg.pgn_epochs,
           cfg.pgn_batch, cfg.alpha, cfg.p_a, cfg.transductive_corpus, prep.hashes["bots"])
    if key not in prep.pgn_cache:
        ids = prep.ds.corpus_ids(include_test=cfg.transductive_corpus)
        y = guidance_targets(prep, ids, raw)
        pgn = PgnModel(cfg.profile, y.shape[1], seed=cfg.seed)
        log = train_pgn(pgn, prep.ds.image_stack(ids), y, pgn_train_config(cfg))
        prep.pgn_cache[key] = (pgn.state_dict(), log, y.shape[1])
    state, log, k = prep.pgn_cache[key]
    pgn = PgnModel(cfg.profile, k, seed=cfg.seed)
    pgn.load_state_dict(state)
    pgn.eval()
    return pgn, log


# ---------------------------------------------------------------- reports

@dataclass
class RunReport:
    mode: str
    seed: int
    config: dict
    seconds: dict
    hashes: dict
    metrics: dict
    logs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "config": self.config, "seconds": self.seconds,
                "hashes": self.hashes, "metrics": self.metrics, "logs": self.logs}

    def to_json(self, indent: int | None = 1) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=indent)

    def metrics_json(self) -> str:
        return json.dumps(self.metrics, sort_keys=True)


def _feature_diagnostics(train_feats, train_labels, test_feats, test_clusters, cfg) -> dict:
    probe = fit_linear_probe(train_feats, train_labels, cfg.probe_reg, cfg.probe_epochs, cfg.seed)
    return {"probe": probe, "silhouette": silhouette_score(test_feats, test_clusters)}


def _classifier_features(pin: PinModel, images, upto=3, batch=64) -> np.ndarray:
    pin.eval()
    out = [pool_features(pin.features(Tensor(images[i:i + batch]), None, upto=upto).data)
           for i in range(0, len(images), batch)]
    return np.concatenate(out)


def run_experiment(cfg: RunConfig, prepared: Prepared | None = None) -> RunReport:
    """Execute one mode end to end and score it on the test split."""
    cfg.validate()
    if cfg.mode in INJECTING_MODES and not cfg.sites:
        raise PipelineError("injection mode without sites")
    prep = prepared or prepare(cfg)
    ds = prep.ds
    if cfg.train_split not in ds.splits:
        raise PipelineError(f"dataset has no split {cfg.train_split!r}")
    seconds = dict(prep.seconds)
    hashes = dict(prep.hashes)
    train_ids = ds.split_ids(cfg.train_split)
    test_ids = ds.split_ids(TEST_SPLIT)
    x_tr, y_tr = ds.image_stack(train_ids), ds.labels(train_ids)
    x_te = ds.image_stack(test_ids)
    n_classes = len(ds.class_names)
    raw = cfg.mode == "raw-label-guidance"
    bots_tr = guidance_targets(prep, train_ids, raw)
    bots_te = guidance_targets(prep, test_ids, raw)
    clusters_te = kmeans_cluster(prep.store.rows(test_ids), n_classes, seed=cfg.seed)
    metrics: dict = {"sparsity": prep.store.sparsity}
    logs: dict = {}
    pin_cfg = pin_train_config(cfg)

    pgn = None
    if cfg.mode in ("pgn-probe", "pgil-full", "no-sal", "pgn-finetune-only", "raw-label-guidance"):
        t = time.perf_counter()
        pgn, logs["pgn"] = get_pgn(prep, cfg, raw)
        seconds["train_pgn"] = time.perf_counter() - t
        hashes["pgn"] = _sha(model_bytes(pgn))
        f_tr = pool_features(pgn_features(pgn, x_tr))
        f_te = pool_features(pgn_features(pgn, x_te))
        diag = _feature_diagnostics(f_tr, y_tr, f_te, clusters_te, cfg)
        metrics["pgn_silhouette"] = diag["silhouette"]
        probe_pred = diag["probe"].predict(f_te)
    pin = None
    t = time.perf_counter()
    if cfg.mode == "baseline-cnn":
        pin = PinModel(cfg.profile, n_classes, sites=(), seed=cfg.seed)
        logs["pin"] = train_pin(pin, x_tr, y_tr, pin_cfg, source="none")
        scores = predict_scores(pin, x_te, source="none")
    elif cfg.mode == "direct-bot-injection":
        pin = PinModel(cfg.profile, n_classes, cfg.sites, source_channels=bots_tr.shape[1], seed=cfg.seed)
        logs["pin"] = train_pin(pin, x_tr, y_tr, pin_cfg, bots=bots_tr, source="bot")
        scores = predict_scores(pin, x_te, bots=bots_te, source="bot")
    elif cfg.mode in ("pgil-full", "no-sal", "raw-label-guidance"):
        pin = PinModel(cfg.profile, n_classes, cfg.sites, seed=cfg.seed)
        logs["pin"] = train_pin(pin, x_tr, y_tr, pin_cfg, pgn=pgn, bots=bots_tr, source="pgn")
        scores = predict_scores(pin, x_te, pgn=pgn, source="pgn")
        if pin_cfg.sal:
            hashes["pgn_finetuned"] = _sha(model_bytes(pgn))
    elif cfg.mode == "pgn-finetune-only":
        pin = train_classifier_from_pgn(pgn, n_classes, x_tr, y_tr, pin_cfg)
        scores = predict_scores(pin, x_te, source="none")
    if pin is not None:
        seconds["train_pin"] = time.perf_counter() - t
        hashes["pin"] = _sha(model_bytes(pin))
    if cfg.mode == "baseline-cnn":
        f_tr = _classifier_features(pin, x_tr)
        f_te = _classifier_features(pin, x_te)
        metrics["cnn_silhouette"] = silhouette_score(f_te, clusters_te)

    # test labels are read only from here on
    y_te = ds.labels(test_ids, allow_test=True)
    names = list(ds.class_names)
    if pgn is not None:
        rep = classification_report(probe_pred, y_te, n_classes, names)
        metrics["probe_oa"], metrics["probe_macro_f1"] = rep.oa, rep.macro_f1
    if pin is not None:
        rep = classification_report(np.argmax(scores, axis=1), y_te, n_classes, names)
        metrics["oa"], metrics["macro_f1"] = rep.oa, rep.macro_f1
        metrics["report"] = rep.to_dict()
    return RunReport(cfg.mode, cfg.seed, cfg.to_dict(), seconds, hashes, metrics, logs)
