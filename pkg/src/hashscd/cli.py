"""Command-line surface: train, hash, detect, retrieve, eval, synth.

Every option can also come from a plain-text key=value config file
(``--config``); explicit flags win over file values, unknown file keys are
rejected, and each run writes a resolved-config manifest that can be fed
back through ``--config`` to reproduce the run byte-for-byte.

Exit codes: 0 ok, 2 config error, 3 data error, 4 store conflict,
5 geometry mismatch.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

from . import change, retrieval, store as store_mod, synth, training
from .errors import (
    ConflictError,
    DimensionError,
    FormatError,
    InvalidInputError,
    NotFoundError,
)
from .features import compute_feature_map, load_feature_map, load_image, save_image
from .model import hash_image, load_params, save_params
from .store import HashRecord

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONFLICT = 4
EXIT_GEOMETRY = 5

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- option plumbing ---------------------------------------------------------

def _conv_int(s: str) -> int:
    return int(s)


def _conv_float(s: str) -> float:
    return float(s)


def _conv_str(s: str) -> str:
    return s


def _conv_grid(s: str) -> tuple[int, int]:
    parts = s.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected HxW, got {s!r}")
    return int(parts[0]), int(parts[1])


def _conv_range(s: str) -> tuple[float, float]:
    parts = s.split(":")
    if len(parts) != 2:
        raise ValueError(f"expected lo:hi, got {s!r}")
    return float(parts[0]), float(parts[1])


def _conv_list(s: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in s.split(",") if t.strip())


@dataclass(frozen=True)
class Opt:
    name: str  # kebab-case; doubles as the config-file key
    conv: object
    default: str | None  # raw default, None means unset
    help: str
    required: bool = False
    repeatable: bool = False


def _add_opts(parser: argparse.ArgumentParser, opts: list[Opt]) -> None:
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--manifest", default=None,
                        help="where to write the resolved-config manifest")
    for o in opts:
        if o.repeatable:
            parser.add_argument(f"--{o.name}", action="append", default=None, help=o.help)
        else:
            parser.add_argument(f"--{o.name}", default=None, help=o.help)


def _read_config_file(path: str) -> dict[str, str]:
    cfg: dict[str, str] = {}
    p = Path(path)
    if not p.is_file():
        raise CLIError(EXIT_CONFIG, f"config file not found: {path}")
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise CLIError(EXIT_CONFIG, f"{path}:{lineno}: expected key=value")
        key, _, value = text.partition("=")
        cfg[key.strip()] = value.strip()
    return cfg


def _resolve(args: argparse.Namespace, opts: list[Opt], command: str):
    """Merge flags over config-file values over defaults; returns (typed, raw)."""
    file_cfg = _read_config_file(args.config) if args.config else {}
    known = {o.name for o in opts} | {"command", "manifest"}
    unknown = set(file_cfg) - known
    if unknown:
        raise CLIError(EXIT_CONFIG, f"unknown config keys: {sorted(unknown)}")
    typed: dict[str, object] = {}
    raw: dict[str, str] = {"command": command}
    for o in opts:
        flag_val = getattr(args, o.name.replace("-", "_"))
        if o.repeatable:
            if flag_val is not None:
                raw_val = "|".join(flag_val)
            elif o.name in file_cfg:
                raw_val = file_cfg[o.name]
            else:
                raw_val = o.default
            if raw_val is None:
                typed[o.name] = ()
                continue
            raw[o.name] = raw_val
            try:
                typed[o.name] = tuple(o.conv(part) for part in raw_val.split("|") if part)
            except (ValueError, InvalidInputError) as exc:
                raise CLIError(EXIT_CONFIG, f"bad value for {o.name}: {exc}")
            continue
        raw_val = flag_val if flag_val is not None else file_cfg.get(o.name, o.default)
        if raw_val is None:
            if o.required:
                raise CLIError(EXIT_CONFIG, f"missing required option --{o.name}")
            typed[o.name] = None
            continue
        raw[o.name] = raw_val
        try:
            typed[o.name] = o.conv(raw_val)
        except (ValueError, InvalidInputError) as exc:
            raise CLIError(EXIT_CONFIG, f"bad value for {o.name}: {exc}")
    return typed, raw


def _write_manifest(path_arg, default_path: Path, raw: dict[str, str]) -> None:
    path = Path(path_arg) if path_arg else default_path
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"command={raw['command']}"]
    lines += [f"{k}={raw[k]}" for k in sorted(raw) if k != "command"]
    path.write_text("\n".join(lines) + "\n")


def _list_images(directory: str) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CLIError(EXIT_DATA, f"image directory not found: {directory}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise CLIError(EXIT_DATA, f"no images in {directory}")
    return files


def _aug_config(cfg: dict) -> training.AugmentationConfig:
    kwargs = {}
    if cfg["augment-transforms"] is not None:
        kwargs["transforms"] = cfg["augment-transforms"]
    for key, field in [
        ("rotate-degrees", "rotate_degrees"),
        ("crop-scale", "crop_scale"),
        ("crop-ratio", "crop_ratio"),
        ("jitter-strength", "jitter_strength"),
        ("noise-sigma", "noise_sigma"),
        ("blur-sigma", "blur_sigma"),
        ("salt-pepper-fraction", "salt_pepper_fraction"),
        ("augment-seed", "seed"),
    ]:
        if cfg[key] is not None:
            kwargs[field] = cfg[key]
    try:
        return training.AugmentationConfig(**kwargs)
    except InvalidInputError as exc:
        raise CLIError(EXIT_CONFIG, str(exc))


_AUG_OPTS = [
    Opt("augment-transforms", _conv_list, None, "comma list of transforms"),
    Opt("rotate-degrees", _conv_float, None, "max |rotation| in degrees"),
    Opt("crop-scale", _conv_range, None, "crop area fraction range lo:hi"),
    Opt("crop-ratio", _conv_range, None, "crop aspect range lo:hi"),
    Opt("jitter-strength", _conv_float, None, "color jitter amplitude"),
    Opt("noise-sigma", _conv_float, None, "gaussian noise std (8-bit units)"),
    Opt("blur-sigma", _conv_range, None, "gaussian blur sigma range lo:hi"),
    Opt("salt-pepper-fraction", _conv_float, None, "fraction of s&p pixels"),
    Opt("augment-seed", _conv_int, None, "augmentation stream seed"),
]


# -- train -------------------------------------------------------------------

_TRAIN_OPTS = [
    Opt("images", _conv_str, None, "directory of training images", required=True),
    Opt("params-out", _conv_str, None, "output parameter file", required=True),
    Opt("loss-csv", _conv_str, None, "output loss history CSV"),
    Opt("hash-bits", _conv_int, "32", "hash length l"),
    Opt("grid", _conv_grid, "4x4", "patch grid HxW"),
    Opt("tau", _conv_float, "0.3", "contrastive temperature"),
    Opt("epochs", _conv_int, "50", "training epochs"),
    Opt("batch-size", _conv_int, "8", "sources per contrastive batch"),
    Opt("learning-rate", _conv_float, "0.01", "Adam learning rate"),
    Opt("beta1", _conv_float, "0.9", "Adam beta1"),
    Opt("beta2", _conv_float, "0.999", "Adam beta2"),
    Opt("adam-eps", _conv_float, "1e-8", "Adam epsilon"),
    Opt("seed", _conv_int, "0", "training seed"),
] + _AUG_OPTS


def cmd_train(args) -> int:
    cfg, raw = _resolve(args, _TRAIN_OPTS, "train")
    files = _list_images(cfg["images"])
    if len(files) < 2:
        raise CLIError(EXIT_DATA, "training needs at least 2 images")
    try:
        images = [load_image(p) for p in files]
    except OSError as exc:
        raise CLIError(EXIT_DATA, f"unreadable image: {exc}")
    grid_h, grid_w = cfg["grid"]
    try:
        train_cfg = training.TrainConfig(
            hash_bits=cfg["hash-bits"], tau=cfg["tau"], epochs=cfg["epochs"],
            batch_size=cfg["batch-size"], learning_rate=cfg["learning-rate"],
            beta1=cfg["beta1"], beta2=cfg["beta2"], adam_eps=cfg["adam-eps"],
            seed=cfg["seed"], grid_h=grid_h, grid_w=grid_w,
        )
    except InvalidInputError as exc:
        raise CLIError(EXIT_CONFIG, str(exc))
    aug_cfg = _aug_config(cfg)
    params, history = training.train(images, train_cfg, aug_cfg)
    params_out = Path(cfg["params-out"])
    params_out.parent.mkdir(parents=True, exist_ok=True)
    save_params(params, params_out)
    loss_path = Path(cfg["loss-csv"]) if cfg["loss-csv"] else params_out.with_suffix(".loss.csv")
    with open(loss_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, f"{loss:.10f}"])
    _write_manifest(args.manifest, params_out.with_suffix(".manifest"), raw)
    print(f"trained {train_cfg.epochs} epochs on {len(images)} images -> {params_out}")
    return EXIT_OK


# -- hash --------------------------------------------------------------------

_HASH_OPTS = [
    Opt("params", _conv_str, None, "parameter file", required=True),
    Opt("image", _conv_str, None, "image to hash"),
    Opt("feature-map", _conv_str, None, "precomputed HSFM feature map to hash"),
    Opt("grid", _conv_grid, "4x4", "patch grid HxW (image input only)"),
    Opt("location", _conv_str, None, "observation location id", required=True),
    Opt("timestamp", _conv_int, None, "observation epoch seconds", required=True),
    Opt("store", _conv_str, None, "store file to append to (created if absent)"),
    Opt("record-out", _conv_str, None, "standalone single-record store file"),
]


def _hash_from_inputs(cfg) -> tuple[HashRecord, int, int]:
    try:
        params = load_params(cfg["params"])
    except FileNotFoundError:
        raise CLIError(EXIT_DATA, f"parameter file not found: {cfg['params']}")
    if (cfg["image"] is None) == (cfg["feature-map"] is None):
        raise CLIError(EXIT_CONFIG, "provide exactly one of --image / --feature-map")
    if cfg["image"] is not None:
        try:
            img = load_image(cfg["image"])
        except OSError as exc:
            raise CLIError(EXIT_DATA, f"unreadable image: {exc}")
        grid_h, grid_w = cfg["grid"]
        fm = compute_feature_map(img, grid_h, grid_w)
    else:
        fm = load_feature_map(cfg["feature-map"])
        grid_h, grid_w = fm.shape[1], fm.shape[2]
    if fm.shape[0] != params.feature_dim:
        raise CLIError(
            EXIT_GEOMETRY,
            f"feature map has {fm.shape[0]} channels, head expects {params.feature_dim}",
        )
    hashes = hash_image(params, fm)
    record = HashRecord(
        location_id=cfg["location"], timestamp=cfg["timestamp"],
        global_code=hashes.global_code, patch_codes=hashes.patch_codes,
        grid_h=grid_h, grid_w=grid_w,
    )
    return record, grid_h, grid_w


def cmd_hash(args) -> int:
    cfg, raw = _resolve(args, _HASH_OPTS, "hash")
    if (cfg["store"] is None) == (cfg["record-out"] is None):
        raise CLIError(EXIT_CONFIG, "provide exactly one of --store / --record-out")
    record, grid_h, grid_w = _hash_from_inputs(cfg)
    if cfg["store"] is not None:
        target = Path(cfg["store"])
        if target.exists():
            st = store_mod.open_store(target)
            if (st.hash_bits, st.grid_h, st.grid_w) != (record.hash_bits, grid_h, grid_w):
                st.close()
                raise CLIError(
                    EXIT_GEOMETRY,
                    f"store geometry l={st.hash_bits} {st.grid_h}x{st.grid_w} does not "
                    f"match record l={record.hash_bits} {grid_h}x{grid_w}",
                )
        else:
            st = store_mod.create_store(target, record.hash_bits, grid_h, grid_w)
        with st:
            st.put(record)
        out_path = target
    else:
        out_path = Path(cfg["record-out"])
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with store_mod.create_store(out_path, record.hash_bits, grid_h, grid_w) as st:
            st.put(record)
    _write_manifest(args.manifest, out_path.with_suffix(out_path.suffix + ".manifest"), raw)
    print(
        f"hashed {cfg['location']}@{cfg['timestamp']}: l={record.hash_bits}, "
        f"payload {record.payload_bits} bits -> {out_path}"
    )
    return EXIT_OK


# -- detect ------------------------------------------------------------------

_DETECT_OPTS = [
    Opt("store", _conv_str, None, "store holding both observations"),
    Opt("location", _conv_str, None, "location id (store mode)"),
    Opt("timestamp-a", _conv_int, None, "reference observation time (store mode)"),
    Opt("timestamp-b", _conv_int, None, "comparison observation time (store mode)"),
    Opt("record-a", _conv_str, None, "reference single-record file"),
    Opt("record-b", _conv_str, None, "comparison single-record file"),
    Opt("image-b", _conv_str, None, "fresh comparison image (hashed on the fly)"),
    Opt("params", _conv_str, None, "parameter file (required with --image-b)"),
    Opt("threshold", _conv_float, "0.1", "global normalized-Hamming threshold"),
    Opt("pixel-threshold", _conv_float, "0.5", "per-pixel change threshold"),
    Opt("size", _conv_grid, None, "heatmap size HxW (record-vs-record mode)"),
    Opt("gt-mask", _conv_str, None, "ground-truth mask PNG for metrics"),
    Opt("heatmap-out", _conv_str, None, "output heatmap PNG", required=True),
    Opt("mask-out", _conv_str, None, "output mask PNG"),
    Opt("metrics-out", _conv_str, None, "output metrics CSV"),
    Opt("pair-id", _conv_str, "pair", "identifier written to the metrics row"),
]


def _load_single_record(path: str) -> HashRecord:
    try:
        with store_mod.open_store(path) as st:
            records = list(st.scan())
    except FileNotFoundError:
        raise CLIError(EXIT_DATA, f"record file not found: {path}")
    if len(records) != 1:
        raise CLIError(EXIT_DATA, f"{path}: expected exactly 1 record, found {len(records)}")
    return records[0]


def _detect_inputs(cfg) -> tuple[HashRecord, HashRecord, tuple[int, int] | None]:
    """Returns (record_a, record_b, image dims of a fresh comparison image)."""
    img_dims = None
    if cfg["store"] is not None:
        if cfg["location"] is None or cfg["timestamp-a"] is None:
            raise CLIError(EXIT_CONFIG, "store mode needs --location and --timestamp-a")
        try:
            with store_mod.open_store(cfg["store"]) as st:
                rec_a = st.get(cfg["location"], cfg["timestamp-a"])
                rec_b = (
                    st.get(cfg["location"], cfg["timestamp-b"])
                    if cfg["timestamp-b"] is not None else None
                )
        except FileNotFoundError:
            raise CLIError(EXIT_DATA, f"store not found: {cfg['store']}")
        except NotFoundError as exc:
            raise CLIError(EXIT_DATA, str(exc))
    elif cfg["record-a"] is not None:
        rec_a = _load_single_record(cfg["record-a"])
        rec_b = _load_single_record(cfg["record-b"]) if cfg["record-b"] else None
    else:
        raise CLIError(EXIT_CONFIG, "provide --store or --record-a")
    if rec_b is None:
        if cfg["image-b"] is None:
            raise CLIError(EXIT_CONFIG,
                           "provide --timestamp-b, --record-b or --image-b to compare against")
        if cfg["params"] is None:
            raise CLIError(EXIT_CONFIG, "--image-b needs --params")
        params = load_params(cfg["params"])
        try:
            img = load_image(cfg["image-b"])
        except OSError as exc:
            raise CLIError(EXIT_DATA, f"unreadable image: {exc}")
        fm = compute_feature_map(img, rec_a.grid_h, rec_a.grid_w)
        if fm.shape[0] != params.feature_dim:
            raise CLIError(EXIT_GEOMETRY, "feature channels do not match the head")
        hashes = hash_image(params, fm)
        if hashes.global_code.nbits != rec_a.hash_bits:
            raise CLIError(EXIT_GEOMETRY, "hash lengths differ between head and record")
        rec_b = HashRecord(
            location_id=rec_a.location_id, timestamp=cfg["timestamp-a"] or 0,
            global_code=hashes.global_code, patch_codes=hashes.patch_codes,
            grid_h=rec_a.grid_h, grid_w=rec_a.grid_w,
        )
        img_dims = img.shape[:2]
    return rec_a, rec_b, img_dims


def cmd_detect(args) -> int:
    cfg, raw = _resolve(args, _DETECT_OPTS, "detect")
    rec_a, rec_b, img_dims = _detect_inputs(cfg)
    if (rec_a.hash_bits, rec_a.grid_h, rec_a.grid_w) != (
        rec_b.hash_bits, rec_b.grid_h, rec_b.grid_w
    ):
        raise CLIError(EXIT_GEOMETRY, "records have different hash geometry")
    gt = None
    if cfg["gt-mask"] is not None:
        try:
            gt = change.load_mask_png(cfg["gt-mask"])
        except OSError as exc:
            raise CLIError(EXIT_DATA, f"unreadable ground-truth mask: {exc}")
    if img_dims is not None:
        out_h, out_w = img_dims
    elif cfg["size"] is not None:
        out_h, out_w = cfg["size"]
    elif gt is not None:
        out_h, out_w = gt.shape
    else:
        raise CLIError(EXIT_CONFIG, "record-vs-record mode needs --size (or --gt-mask)")
    if gt is not None and gt.shape != (out_h, out_w):
        raise CLIError(EXIT_GEOMETRY,
                       f"ground-truth mask {gt.shape} does not match heatmap {out_h}x{out_w}")
    if out_h < rec_a.grid_h or out_w < rec_a.grid_w:
        raise CLIError(EXIT_GEOMETRY, "heatmap size smaller than the patch grid")

    changed, distance = change.detect_global(
        rec_a.global_code, rec_b.global_code, cfg["threshold"]
    )
    grid = change.localize(rec_a.patch_codes, rec_b.patch_codes,
                           rec_a.grid_h, rec_a.grid_w)
    heatmap = change.upsample(grid, out_h, out_w)
    mask = change.threshold_heatmap(heatmap, cfg["pixel-threshold"])

    heatmap_out = Path(cfg["heatmap-out"])
    heatmap_out.parent.mkdir(parents=True, exist_ok=True)
    change.save_heatmap_png(heatmap, heatmap_out)
    if cfg["mask-out"]:
        change.save_mask_png(mask, cfg["mask-out"])
    f1_text = iou_text = ""
    if gt is not None:
        f1_text = f"{change.f1(mask, gt):.6f}"
        iou_text = f"{change.iou(mask, gt):.6f}"
    if cfg["metrics-out"]:
        with open(cfg["metrics-out"], "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["pair_id", "changed", "global_distance", "f1", "iou"])
            writer.writerow([cfg["pair-id"], int(changed), f"{distance:.6f}",
                             f1_text, iou_text])
    _write_manifest(args.manifest, heatmap_out.with_suffix(".manifest"), raw)
    print(f"changed={changed} distance={distance:.4f} -> {heatmap_out}")
    return EXIT_OK


# -- retrieve ----------------------------------------------------------------

_RETRIEVE_OPTS = [
    Opt("store", _conv_str, None, "store holding the code database", required=True),
    Opt("query-image", _conv_str, None, "query image (hashed on the fly)"),
    Opt("params", _conv_str, None, "parameter file (with --query-image)"),
    Opt("query-location", _conv_str, None, "use a stored code as the query"),
    Opt("query-timestamp", _conv_int, None, "timestamp of the stored query code"),
    Opt("k", _conv_int, None, "return only the top k candidates"),
    Opt("out", _conv_str, None, "output ranking CSV", required=True),
]


def cmd_retrieve(args) -> int:
    cfg, raw = _resolve(args, _RETRIEVE_OPTS, "retrieve")
    try:
        with store_mod.open_store(cfg["store"]) as st:
            records = list(st.scan())
    except FileNotFoundError:
        raise CLIError(EXIT_DATA, f"store not found: {cfg['store']}")
    if not records:
        raise CLIError(EXIT_DATA, "store holds no records")
    database = [(f"{r.location_id}@{r.timestamp}", r.global_code) for r in records]
    if (cfg["query-image"] is None) == (cfg["query-location"] is None):
        raise CLIError(EXIT_CONFIG, "provide exactly one of --query-image / --query-location")
    if cfg["query-image"] is not None:
        if cfg["params"] is None:
            raise CLIError(EXIT_CONFIG, "--query-image needs --params")
        params = load_params(cfg["params"])
        try:
            img = load_image(cfg["query-image"])
        except OSError as exc:
            raise CLIError(EXIT_DATA, f"unreadable image: {exc}")
        fm = compute_feature_map(img, records[0].grid_h, records[0].grid_w)
        if fm.shape[0] != params.feature_dim:
            raise CLIError(EXIT_GEOMETRY, "feature channels do not match the head")
        query_code = hash_image(params, fm).global_code
        query_id = str(cfg["query-image"])
    else:
        loc = cfg["query-location"]
        matching = [r for r in records if r.location_id == loc]
        if not matching:
            raise CLIError(EXIT_DATA, f"no stored records for location {loc!r}")
        if cfg["query-timestamp"] is not None:
            matching = [r for r in matching if r.timestamp == cfg["query-timestamp"]]
            if not matching:
                raise CLIError(EXIT_DATA, "no stored record at that timestamp")
        rec = max(matching, key=lambda r: r.timestamp)
        query_code = rec.global_code
        query_id = f"{rec.location_id}@{rec.timestamp}"
    if query_code.nbits != records[0].hash_bits:
        raise CLIError(EXIT_GEOMETRY, "query hash length does not match the store")
    ranked = retrieval.rank(query_code, database, k=cfg["k"], query_id=query_id)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    retrieval.write_ranking_csv(out, [ranked])
    _write_manifest(args.manifest, out.with_suffix(".manifest"), raw)
    print(f"ranked {len(ranked.entries)} candidates for {query_id} -> {out}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

_EVAL_OPTS = [
    Opt("mode", _conv_str, None, "change | retrieval", required=True),
    Opt("pred", _conv_str, None, "predicted mask directory (change mode)"),
    Opt("gt", _conv_str, None, "ground-truth mask directory (change mode)"),
    Opt("rankings", _conv_str, None, "ranking CSV (retrieval mode)"),
    Opt("relevance", _conv_str, None, "relevance CSV (retrieval mode)"),
    Opt("out", _conv_str, None, "output metrics CSV", required=True),
]


def _read_ranking_csv(path: str) -> dict[str, list[tuple[str, int]]]:
    rankings: dict[str, list[tuple[str, int]]] = {}
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["query_id", "rank", "candidate_id", "distance"]:
                raise CLIError(EXIT_DATA, f"{path}: unexpected ranking CSV header")
            for row in reader:
                if len(row) != 4:
                    raise CLIError(EXIT_DATA, f"{path}: malformed row {row}")
                rankings.setdefault(row[0], []).append((row[2], int(row[3])))
    except FileNotFoundError:
        raise CLIError(EXIT_DATA, f"ranking CSV not found: {path}")
    return rankings


def cmd_eval(args) -> int:
    cfg, raw = _resolve(args, _EVAL_OPTS, "eval")
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    if cfg["mode"] == "change":
        if not cfg["pred"] or not cfg["gt"]:
            raise CLIError(EXIT_CONFIG, "change mode needs --pred and --gt")
        pred_dir, gt_dir = Path(cfg["pred"]), Path(cfg["gt"])
        if not pred_dir.is_dir() or not gt_dir.is_dir():
            raise CLIError(EXIT_DATA, "prediction or ground-truth directory missing")
        stems = sorted(p.stem for p in pred_dir.glob("*.png"))
        if not stems:
            raise CLIError(EXIT_DATA, f"no mask PNGs in {pred_dir}")
        rows = []
        for stem in stems:
            gt_path = gt_dir / f"{stem}.png"
            if not gt_path.is_file():
                raise CLIError(EXIT_DATA, f"missing ground truth for {stem}")
            pred_mask = change.load_mask_png(pred_dir / f"{stem}.png")
            gt_mask = change.load_mask_png(gt_path)
            if pred_mask.shape != gt_mask.shape:
                raise CLIError(EXIT_GEOMETRY, f"mask sizes differ for {stem}")
            rows.append((stem, "", 0.0, change.f1(pred_mask, gt_mask),
                         change.iou(pred_mask, gt_mask)))
        with open(out, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["pair_id", "f1", "iou"])
            for stem, _, _, f1_val, iou_val in rows:
                writer.writerow([stem, f"{f1_val:.6f}", f"{iou_val:.6f}"])
            writer.writerow(["mean",
                             f"{sum(r[3] for r in rows) / len(rows):.6f}",
                             f"{sum(r[4] for r in rows) / len(rows):.6f}"])
        print(f"evaluated {len(rows)} mask pairs -> {out}")
    elif cfg["mode"] == "retrieval":
        if not cfg["rankings"] or not cfg["relevance"]:
            raise CLIError(EXIT_CONFIG, "retrieval mode needs --rankings and --relevance")
        rankings = _read_ranking_csv(cfg["rankings"])
        try:
            judgments = retrieval.load_relevance_csv(cfg["relevance"])
        except FileNotFoundError:
            raise CLIError(EXIT_DATA, f"relevance CSV not found: {cfg['relevance']}")
        queries = []
        for query_id, entries in rankings.items():
            if query_id not in judgments:
                continue
            ranked = retrieval.RankedList(query_id=query_id, entries=tuple(entries))
            queries.append((ranked, judgments[query_id]))
        if not queries:
            raise CLIError(EXIT_DATA, "no query appears in both rankings and relevance")
        with open(out, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["query_id", "ap"])
            for ranked, relevant in queries:
                writer.writerow([ranked.query_id,
                                 f"{retrieval.average_precision(ranked, relevant):.6f}"])
            writer.writerow(["mAP", f"{retrieval.mean_average_precision(queries):.6f}"])
        print(f"evaluated {len(queries)} queries -> {out}")
    else:
        raise CLIError(EXIT_CONFIG, f"unknown eval mode {cfg['mode']!r}")
    _write_manifest(args.manifest, out.with_suffix(".manifest"), raw)
    return EXIT_OK


# -- synth -------------------------------------------------------------------

_SYNTH_OPTS = [
    Opt("mode", _conv_str, None, "change | clusters", required=True),
    Opt("out", _conv_str, None, "output dataset directory", required=True),
    Opt("size", _conv_grid, "96x96", "image size HxW"),
    Opt("pairs", _conv_int, "10", "number of change pairs (change mode)"),
    Opt("rect", _conv_str, None, "top,left,h,w[,fill]; repeatable", repeatable=True),
    Opt("nuisance", _conv_float, "0.0", "photometric nuisance level"),
    Opt("clusters", _conv_int, "4", "number of clusters (clusters mode)"),
    Opt("items", _conv_int, "8", "items per cluster (clusters mode)"),
    Opt("separation", _conv_float, "1.0", "inter-cluster separation"),
    Opt("jitter", _conv_float, "0.0", "intra-cluster jitter"),
    Opt("seed", _conv_int, "0", "generator seed"),
]


def _parse_rect(text: str) -> synth.ChangeRect:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) not in (4, 5):
        raise ValueError(f"expected top,left,h,w[,fill], got {text!r}")
    fill = parts[4] if len(parts) == 5 else "solid"
    return synth.ChangeRect(int(parts[0]), int(parts[1]), int(parts[2]),
                            int(parts[3]), fill)


def cmd_synth(args) -> int:
    cfg, raw = _resolve(args, _SYNTH_OPTS, "synth")
    out = Path(cfg["out"])
    height, width = cfg["size"]
    if cfg["mode"] == "change":
        try:
            rects = tuple(_parse_rect(t) for t in cfg["rect"]) if cfg["rect"] else ()
        except (ValueError, InvalidInputError) as exc:
            raise CLIError(EXIT_CONFIG, f"bad --rect: {exc}")
        for sub in ("t0", "t1", "mask"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        entries = []
        for idx in range(cfg["pairs"]):
            try:
                spec = synth.SynthChangeSpec(
                    height=height, width=width, rects=rects,
                    nuisance=cfg["nuisance"], seed=cfg["seed"] + idx,
                )
            except InvalidInputError as exc:
                raise CLIError(EXIT_CONFIG, str(exc))
            t0, t1, mask = synth.gen_pair(spec)
            stem = f"pair{idx:04d}"
            save_image(t0, out / "t0" / f"{stem}.png")
            save_image(t1, out / "t1" / f"{stem}.png")
            change.save_mask_png(mask, out / "mask" / f"{stem}.png")
            entries.append((stem, spec))
        synth.write_pair_manifest(out / "pairs.csv", entries)
        print(f"wrote {cfg['pairs']} change pairs -> {out}")
    elif cfg["mode"] == "clusters":
        try:
            spec = synth.SynthClusterSpec(
                clusters=cfg["clusters"], items_per_cluster=cfg["items"],
                separation=cfg["separation"], jitter=cfg["jitter"],
                seed=cfg["seed"], height=height, width=width,
            )
        except InvalidInputError as exc:
            raise CLIError(EXIT_CONFIG, str(exc))
        out.mkdir(parents=True, exist_ok=True)
        labeled = synth.gen_clusters(spec)
        with open(out / "labels.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["file", "label"])
            counters: dict[int, int] = {}
            for label, img in labeled:
                item = counters.get(label, 0)
                counters[label] = item + 1
                name = f"c{label:02d}_i{item:03d}.png"
                save_image(img, out / name)
                writer.writerow([name, label])
        print(f"wrote {len(labeled)} cluster images -> {out}")
    else:
        raise CLIError(EXIT_CONFIG, f"unknown synth mode {cfg['mode']!r}")
    _write_manifest(args.manifest, out / "manifest.txt", raw)
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hashscd",
        description="Patch-wise binary hashing: train, hash, detect, retrieve, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts, func in [
        ("train", _TRAIN_OPTS, cmd_train),
        ("hash", _HASH_OPTS, cmd_hash),
        ("detect", _DETECT_OPTS, cmd_detect),
        ("retrieve", _RETRIEVE_OPTS, cmd_retrieve),
        ("eval", _EVAL_OPTS, cmd_eval),
        ("synth", _SYNTH_OPTS, cmd_synth),
    ]:
        p = sub.add_parser(name)
        _add_opts(p, opts)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConflictError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFLICT
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (FormatError, NotFoundError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
