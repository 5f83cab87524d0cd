"""DEW-ST stress protocol: embed, edit, decode and score over a sweep.

Every trial is addressed by the lane tuple ``(image, edit, strength, seed)``
and draws its randomness from ``derive_stream(master_seed, lanes + stage)``,
so results do not depend on how trials are scheduled across workers.  Rows
are emitted in lane order.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import metrics
from .edit_kernel import DEFAULT_GAINS, EditConfig, coupled_edit
from .schedule import schedule_from_config, snr_from_alpha_bar
from .spectral import BANDS, BandPartition, band_energies, retention_from_energies, DegenerateBandError
from .tensors_io import SYNTH_KINDS, derive_stream, load_image, synth_image
from .theory_bounds import LN2, fano_lower_bound, gaussian_capacity
from .watermark import (
    DEFAULT_PROFILE,
    CarrierBank,
    WatermarkKey,
    decode_bits,
    decode_soft,
    ecc_decode,
    ecc_encode,
    embed,
    gamma_for_psnr,
    make_carriers,
    payload_to_hex,
)

STAGE_IMAGE = 0
STAGE_PAYLOAD = 1
STAGE_EDIT = 2

EDIT_FAMILIES = ("global", "local", "resynth", "identity")

ROW_COLUMNS = [
    "image", "edit", "family", "strength", "seed", "t_star", "start_step", "alpha_bar",
    "payload_hex", "ba", "ber", "ba_blind", "msg_ok", "msg_ok_noecc",
    "detect_score", "detect_score_blind", "null_score", "null_score_blind",
    "psnr_wm", "psnr_edit", "ssim_edit", "rho_low", "rho_mid", "rho_high",
    "snr_theory", "snr_empirical", "mi_bound_bits", "fano_bound",
    "e_edit_low", "e_edit_mid", "e_edit_high", "e_input_low", "e_input_mid", "e_input_high",
]

AGG_COLUMNS = [
    "edit", "family", "strength", "t_star", "n", "alpha_bar",
    "ba_mean", "ba_std", "ba_blind_mean", "ba_blind_std", "ba_vote_mean", "ba_seed_mean",
    "msg_acc", "msg_acc_noecc", "auc", "auc_blind", "fpr_at_tpr",
    "psnr_edit_mean", "ssim_edit_mean", "rho_low", "rho_mid", "rho_high",
    "snr_theory", "snr_empirical_mean", "snr_empirical_stderr", "mi_bound_bits", "fano_bound",
]

VOTE_COLUMNS = ["image", "edit", "strength", "ba_vote", "ba_seed_mean"]


class ConfigError(ValueError):
    """Invalid protocol configuration."""


@dataclass
class EditTemplate:
    """Strength-free description of one edit instruction in the suite.

    ``mask_box`` is ``(y0, y1, x0, x1)`` in fractions of the image size.
    ``t_star_override`` pins the start time regardless of the swept strength
    (the identity edit uses 0).
    """

    name: str
    family: str = "global"
    mode: str = "linear_shrink"
    n_steps: int = 5
    band_gains: tuple[float, float, float] = DEFAULT_GAINS
    mask_box: tuple[float, float, float, float] | None = None
    coupling_kappa: float = 0.15
    anchor_sigma: float = 2.0
    t_star_override: float | None = None

    def __post_init__(self):
        if self.family not in EDIT_FAMILIES:
            raise ConfigError(f"edit {self.name!r}: unknown family {self.family!r}")
        self.band_gains = tuple(float(g) for g in self.band_gains)
        if self.mask_box is not None:
            box = tuple(float(v) for v in self.mask_box)
            if len(box) != 4 or not (0 <= box[0] < box[1] <= 1 and 0 <= box[2] < box[3] <= 1):
                raise ConfigError(f"edit {self.name!r}: bad mask_box {self.mask_box}")
            self.mask_box = box
        # validates gains, mode and kappa
        try:
            self.config(0.0, 8, 8)
        except ValueError as exc:
            raise ConfigError(f"edit {self.name!r}: {exc}") from exc

    def mask(self, h: int, w: int) -> np.ndarray | None:
        if self.mask_box is None:
            return None
        y0, y1, x0, x1 = self.mask_box
        m = np.zeros((h, w))
        m[int(round(y0 * h)):int(round(y1 * h)), int(round(x0 * w)):int(round(x1 * w))] = 1.0
        return m

    def config(self, t_star: float, h: int, w: int) -> EditConfig:
        t = t_star if self.t_star_override is None else self.t_star_override
        return EditConfig(
            t_star=t,
            n_steps=self.n_steps,
            band_gains=self.band_gains,
            mode=self.mode,
            mask=self.mask(h, w),
            coupling_kappa=self.coupling_kappa,
            anchor_sigma=self.anchor_sigma,
        )


def default_suite() -> list[EditTemplate]:
    return [
        EditTemplate("global", "global"),
        EditTemplate("local", "local", mask_box=(0.25, 0.75, 0.25, 0.75)),
        EditTemplate("resynth", "resynth", mode="resynth"),
    ]


def identity_suite() -> list[EditTemplate]:
    return [EditTemplate("identity", "identity", n_steps=0, t_star_override=0.0)]


def _default_schedule_cfg() -> dict:
    return {"kind": "geometric", "T": 100, "beta_start": 1e-5, "beta_end": 0.2}


@dataclass
class ProtocolConfig:
    n_images: int = 16
    image_source: str = "gaussian_field"
    image_size: int = 64
    channels: int = 3
    edit_suite: list[EditTemplate] = field(default_factory=default_suite)
    strengths: list[float] = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    seeds_per_instruction: int = 3
    payload_bits: int = 96
    ecc_r: int = 3
    gamma: float | None = None
    target_psnr: float = 40.0
    master_seed: int = 0
    key_seed: int = 1
    band_profile: tuple[float, float, float] = DEFAULT_PROFILE
    band_edges: tuple[float, float] = (0.125, 0.25)
    schedule: dict = field(default_factory=_default_schedule_cfg)
    tpr_target: float = 0.95
    workers: int = 1

    def __post_init__(self):
        self.edit_suite = [t if isinstance(t, EditTemplate) else _template_from_dict(t) for t in self.edit_suite]
        self.strengths = [float(s) for s in self.strengths]
        self.band_profile = tuple(float(v) for v in self.band_profile)
        self.band_edges = tuple(float(v) for v in self.band_edges)
        self.validate()

    def validate(self) -> None:
        if self.n_images < 1:
            raise ConfigError("n_images must be positive")
        if not self.edit_suite:
            raise ConfigError("edit_suite must not be empty")
        if not self.strengths:
            raise ConfigError("strengths must not be empty")
        if any(not 0.0 <= s <= 1.0 for s in self.strengths):
            raise ConfigError("strengths must lie in [0, 1]")
        if len({t.name for t in self.edit_suite}) != len(self.edit_suite):
            raise ConfigError("edit names must be unique")
        if self.seeds_per_instruction < 1 or self.seeds_per_instruction % 2 == 0:
            raise ConfigError("seeds_per_instruction must be odd and positive (majority voting)")
        if self.payload_bits < 1:
            raise ConfigError("payload_bits must be positive")
        if self.ecc_r < 1 or self.ecc_r % 2 == 0:
            raise ConfigError("ecc_r must be odd and positive")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if self.image_size < 8:
            raise ConfigError("image_size must be at least 8")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if not 0.0 < self.tpr_target <= 1.0:
            raise ConfigError("tpr_target must lie in (0, 1]")
        try:
            WatermarkKey(self.key_seed, self.band_profile)
            BandPartition(*self.band_edges)
            schedule_from_config(self.schedule)
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.image_source not in SYNTH_KINDS and not Path(self.image_source).is_dir():
            raise ConfigError(f"image_source {self.image_source!r} is neither a synthetic kind nor a directory")

    @property
    def strength_gamma(self) -> float:
        return self.gamma if self.gamma is not None else gamma_for_psnr(self.target_psnr)

    @property
    def n_rows(self) -> int:
        return self.n_images * len(self.edit_suite) * len(self.strengths) * self.seeds_per_instruction

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band_profile"] = list(self.band_profile)
        d["band_edges"] = list(self.band_edges)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ProtocolConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def _template_from_dict(data: dict) -> EditTemplate:
    known = {f.name for f in fields(EditTemplate)}
    if not isinstance(data, dict) or "name" not in data:
        raise ConfigError(f"edit template needs a name: {data!r}")
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown edit template fields: {sorted(unknown)}")
    return EditTemplate(**data)


@dataclass
class StressReport:
    rows: list[dict]
    aggregates: list[dict]
    votes: list[dict]
    config: dict = field(default_factory=dict)

    @property
    def null_scores(self) -> list[float]:
        return [r["null_score"] for r in self.rows]


# ---------------------------------------------------------------- per-image work


def _image_files(directory: Path) -> list[Path]:
    exts = {".png", ".dws", ".raw"}
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in exts)


def _load_inputs(cfg: ProtocolConfig, idx: int) -> np.ndarray:
    if cfg.image_source in SYNTH_KINDS:
        rng = derive_stream(cfg.master_seed, (idx, STAGE_IMAGE))
        return synth_image(cfg.image_source, cfg.image_size, cfg.image_size, rng, channels=cfg.channels)
    files = _image_files(Path(cfg.image_source))
    return load_image(files[idx])


_BANKS: dict = {}


def _bank_for(cfg: ProtocolConfig, shape) -> CarrierBank:
    key = (cfg.key_seed, cfg.band_profile, cfg.band_edges, cfg.payload_bits * cfg.ecc_r, tuple(shape))
    if key not in _BANKS:
        c, h, w = shape
        _BANKS.clear()
        _BANKS[key] = make_carriers(
            WatermarkKey(cfg.key_seed, cfg.band_profile),
            cfg.payload_bits * cfg.ecc_r, h, w, c, BandPartition(*cfg.band_edges),
        )
    return _BANKS[key]


def vote_decode(bit_matrix, truth) -> float:
    """Bit accuracy of the per-bit majority over seeds."""
    return metrics.bit_accuracy(metrics.majority_vote(bit_matrix), truth)[0]


def _run_image(cfg: ProtocolConfig, idx: int) -> tuple[list[dict], list[dict]]:
    sched = schedule_from_config(cfg.schedule)
    partition = BandPartition(*cfg.band_edges)
    x = _load_inputs(cfg, idx)
    c, h, w = x.shape
    bank = _bank_for(cfg, x.shape)
    d = bank.d
    gamma = cfg.strength_gamma
    payload = derive_stream(cfg.master_seed, (idx, STAGE_PAYLOAD)).bits(cfg.payload_bits)
    coded = ecc_encode(payload, cfg.ecc_r)
    x_w = embed(x, coded, bank, gamma)
    e_in = band_energies(x_w - x, partition)
    psnr_wm = metrics.psnr(x, x_w)
    norm = math.sqrt(d * bank.n_carriers)
    payload_hex = payload_to_hex(payload)

    rows, votes = [], []
    for ei, tmpl in enumerate(cfg.edit_suite):
        for si, strength in enumerate(cfg.strengths):
            ecfg = tmpl.config(strength, h, w)
            seed_bits = []
            for ki in range(cfg.seeds_per_instruction):
                rng = derive_stream(cfg.master_seed, (idx, ei, si, ki, STAGE_EDIT))
                out = coupled_edit(x_w, x, ecfg, sched, rng, partition=partition)
                s_inf = decode_soft(out.edited, bank, x)
                s_blind = decode_soft(out.edited, bank)
                bits = decode_bits(s_inf)
                seed_bits.append(bits)
                ba, ber = metrics.bit_accuracy(bits, coded.coded_bits)
                ba_blind = metrics.bit_accuracy(decode_bits(s_blind), coded.coded_bits)[0]
                info_hat, _ = ecc_decode(bits, cfg.ecc_r)
                null_inf = decode_soft(out.baseline_edited, bank, x)
                null_blind = decode_soft(out.baseline_edited, bank)
                e_ed = band_energies(out.residual, partition)
                snr_th = snr_from_alpha_bar(out.realized_alpha_bar, gamma)
                snr_emp = out.step_log[0] ** 2 / out.noise_norm**2 if out.noise_norm > 0 else math.inf
                mi = gaussian_capacity(d, snr_th)
                rows.append(
                    {
                        "image": idx,
                        "edit": tmpl.name,
                        "family": tmpl.family,
                        "strength": strength,
                        "seed": ki,
                        "t_star": ecfg.t_star,
                        "start_step": out.start_step,
                        "alpha_bar": out.realized_alpha_bar,
                        "payload_hex": payload_hex,
                        "ba": ba,
                        "ber": ber,
                        "ba_blind": ba_blind,
                        "msg_ok": int(np.array_equal(info_hat, payload)),
                        "msg_ok_noecc": int(np.array_equal(bits[:: cfg.ecc_r], payload)),
                        "detect_score": float(np.abs(s_inf).sum() * norm),
                        "detect_score_blind": float(np.abs(s_blind).sum() * norm),
                        "null_score": float(np.abs(null_inf).sum() * norm),
                        "null_score_blind": float(np.abs(null_blind).sum() * norm),
                        "psnr_wm": psnr_wm,
                        "psnr_edit": metrics.psnr(x, out.edited),
                        "ssim_edit": metrics.ssim(x, out.edited),
                        **{f"rho_{b}": (e_ed[b] / e_in[b] if e_in[b] > 0 else math.nan) for b in BANDS},
                        "snr_theory": snr_th,
                        "snr_empirical": snr_emp,
                        "mi_bound_bits": mi / LN2,
                        "fano_bound": fano_lower_bound(mi, cfg.payload_bits) if math.isfinite(mi) else 0.0,
                        **{f"e_edit_{b}": e_ed[b] for b in BANDS},
                        **{f"e_input_{b}": e_in[b] for b in BANDS},
                    }
                )
            seed_mean = float(np.mean([metrics.bit_accuracy(b, coded.coded_bits)[0] for b in seed_bits]))
            votes.append(
                {
                    "image": idx,
                    "edit": tmpl.name,
                    "strength": strength,
                    "ba_vote": vote_decode(np.array(seed_bits), coded.coded_bits),
                    "ba_seed_mean": seed_mean,
                }
            )
    return rows, votes


def _worker(args):
    cfg_dict, idx = args
    return idx, _run_image(ProtocolConfig.from_dict(cfg_dict), idx)


# ---------------------------------------------------------------- aggregation


def _mean_std(vals) -> tuple[float, float]:
    arr = np.asarray(vals, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def aggregate(rows: list[dict], votes: list[dict], cfg: ProtocolConfig) -> list[dict]:
    """Per (edit, strength) statistics in suite/strength order."""
    out = []
    for tmpl in cfg.edit_suite:
        for strength in cfg.strengths:
            grp = [r for r in rows if r["edit"] == tmpl.name and r["strength"] == strength]
            vgrp = [v for v in votes if v["edit"] == tmpl.name and v["strength"] == strength]
            if not grp:
                continue
            pos = [r["detect_score"] for r in grp]
            neg = [r["null_score"] for r in grp]
            pos_b = [r["detect_score_blind"] for r in grp]
            neg_b = [r["null_score_blind"] for r in grp]
            num = {b: float(np.mean([r[f"e_edit_{b}"] for r in grp])) for b in BANDS}
            den = {b: float(np.mean([r[f"e_input_{b}"] for r in grp])) for b in BANDS}
            try:
                rho = retention_from_energies(num, den).rho
            except DegenerateBandError:
                rho = {b: (num[b] / den[b] if den[b] > 0 else math.nan) for b in BANDS}
            ba_m, ba_s = _mean_std([r["ba"] for r in grp])
            bb_m, bb_s = _mean_std([r["ba_blind"] for r in grp])
            snr_emp = [r["snr_empirical"] for r in grp]
            if all(math.isfinite(v) for v in snr_emp):
                se_m, se_s = _mean_std(snr_emp)
                se_err = se_s / math.sqrt(len(snr_emp))
            else:
                se_m, se_err = math.inf, 0.0
            first = grp[0]
            out.append(
                {
                    "edit": tmpl.name,
                    "family": tmpl.family,
                    "strength": strength,
                    "t_star": first["t_star"],
                    "n": len(grp),
                    "alpha_bar": first["alpha_bar"],
                    "ba_mean": ba_m,
                    "ba_std": ba_s,
                    "ba_blind_mean": bb_m,
                    "ba_blind_std": bb_s,
                    "ba_vote_mean": float(np.mean([v["ba_vote"] for v in vgrp])),
                    "ba_seed_mean": float(np.mean([v["ba_seed_mean"] for v in vgrp])),
                    "msg_acc": float(np.mean([r["msg_ok"] for r in grp])),
                    "msg_acc_noecc": float(np.mean([r["msg_ok_noecc"] for r in grp])),
                    "auc": metrics.roc_auc(pos, neg),
                    "auc_blind": metrics.roc_auc(pos_b, neg_b),
                    "fpr_at_tpr": metrics.fpr_at_tpr(pos, neg, cfg.tpr_target),
                    "psnr_edit_mean": float(np.mean([r["psnr_edit"] for r in grp])),
                    "ssim_edit_mean": float(np.mean([r["ssim_edit"] for r in grp])),
                    **{f"rho_{b}": rho[b] for b in BANDS},
                    "snr_theory": first["snr_theory"],
                    "snr_empirical_mean": se_m,
                    "snr_empirical_stderr": se_err,
                    "mi_bound_bits": first["mi_bound_bits"],
                    "fano_bound": first["fano_bound"],
                }
            )
    return out


def run_dewst(cfg: ProtocolConfig, workers: int | None = None) -> StressReport:
    """Run the full sweep and return row-level results plus aggregates."""
    cfg.validate()
    if cfg.image_source not in SYNTH_KINDS:
        files = _image_files(Path(cfg.image_source))
        if not files:
            raise ConfigError(f"image directory {cfg.image_source} holds no .png/.dws/.raw files")
        if len(files) < cfg.n_images:
            raise ConfigError(f"need {cfg.n_images} images, directory holds {len(files)}")
    workers = cfg.workers if workers is None else workers
    results: dict[int, tuple] = {}
    if workers <= 1:
        for i in range(cfg.n_images):
            results[i] = _run_image(cfg, i)
    else:
        cfg_dict = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, res in pool.map(_worker, [(cfg_dict, i) for i in range(cfg.n_images)]):
                results[idx] = res
    rows, votes = [], []
    for i in sorted(results):
        rows.extend(results[i][0])
        votes.extend(results[i][1])
    edit_pos = {t.name: k for k, t in enumerate(cfg.edit_suite)}
    rows.sort(key=lambda r: (r["image"], edit_pos[r["edit"]], cfg.strengths.index(r["strength"]), r["seed"]))
    return StressReport(rows, aggregate(rows, votes, cfg), votes, cfg.to_dict())


# ---------------------------------------------------------------- report I/O


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, columns: list[str], records: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([_fmt(rec[c]) for c in columns])


def emit_report(report: StressReport, fmt: str, out_dir) -> list[Path]:
    """Write ``rows.csv``/``aggregates.csv``/``votes.csv`` or ``report.json`` under ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"report directory {out} is not writable")
    written = []
    if fmt == "csv":
        for name, cols, recs in (
            ("rows.csv", ROW_COLUMNS, report.rows),
            ("aggregates.csv", AGG_COLUMNS, report.aggregates),
            ("votes.csv", VOTE_COLUMNS, report.votes),
        ):
            _write_csv(out / name, cols, recs)
            written.append(out / name)
    elif fmt == "json":
        doc = {
            "config": report.config,
            "rows": [{c: r[c] for c in ROW_COLUMNS} for r in report.rows],
            "aggregates": [{c: a[c] for c in AGG_COLUMNS} for a in report.aggregates],
            "votes": [{c: v[c] for c in VOTE_COLUMNS} for v in report.votes],
        }
        path = out / "report.json"
        path.write_text(json.dumps(doc, indent=1, sort_keys=False))
        written.append(path)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return written


_STR_COLUMNS = {"edit", "family", "payload_hex"}
_INT_COLUMNS = {"image", "seed", "start_step", "msg_ok", "msg_ok_noecc", "n"}


def _parse(col: str, text: str):
    if col in _STR_COLUMNS:
        return text
    if col in _INT_COLUMNS:
        return int(text)
    return float(text)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: _parse(k, v) for k, v in rec.items()} for rec in reader]


def load_report(path) -> StressReport:
    """Read a report written by :func:`emit_report` (directory of CSVs or ``report.json``)."""
    path = Path(path)
    if path.is_file() and path.suffix == ".json":
        doc = json.loads(path.read_text())
        return StressReport(doc["rows"], doc["aggregates"], doc["votes"], doc.get("config", {}))
    if path.is_dir():
        if (path / "rows.csv").exists():
            return StressReport(
                _read_csv(path / "rows.csv"), _read_csv(path / "aggregates.csv"), _read_csv(path / "votes.csv")
            )
        if (path / "report.json").exists():
            return load_report(path / "report.json")
    raise FileNotFoundError(f"no report found at {path}")
