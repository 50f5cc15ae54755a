"""Run configuration, deterministic seeding, ensembles and manifests.

Every byte of output is a function of (config, master seed).  Replica
``i``'s generators are seeded by hashing (master_seed, i, stream), so
replicas can run in any order or in parallel and still reproduce bit for
bit; a manifest records every output file's hash so interrupted runs resume
and corrupted files are caught.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import estimators
from .config import AlphaParams, ModelParams, Variant, sample_nu
from .errors import IntegrityError, MergeError, ParameterError
from .front import (
    FrontTrace,
    build_front_remanent,
    build_front_single_rate,
    front_from_csv,
    front_to_csv,
    system_from_configuration,
)
from .renewal import (
    HorizonPolicy,
    RenewalScanner,
    attempts_to_csv,
    renewals_from_csv,
    renewals_to_csv,
)

__all__ = [
    "RunConfig",
    "RunManifest",
    "derive_seed",
    "run_ensemble",
    "run_replica",
    "merge_and_report",
    "parse_config_text",
    "config_to_text",
]

TOOL_VERSION = "frontsim 0.1.0"
MANIFEST_NAME = "run.json"

# stream ids for derive_seed
STREAM_CONFIG = 0
STREAM_WALKS = 1
STREAM_PILOT = 2

_CONFIG_KEYS = {
    "variant": str,
    "rho": float,
    "d_r": float,
    "d_b": float,
    "alpha": str,  # float or "auto"
    "theta": float,
    "beta": str,  # float or "auto" (then 1.5 * alpha)
    "cap_c": int,
    "cap_l": int,
    "h_back": float,
    "h_fwd": float,
    "tail_tol": float,
    "window_min": str,  # int or "auto"
    "window_max": str,
    "t_fwd": float,
    "t_back": str,  # float or "auto"
    "replicas": int,
    "replica_start": int,
    "master_seed": int,
    "output_dir": str,
    "confidence": float,
}

_DEFAULTS = {
    "variant": "single_rate",
    "d_b": None,  # defaults to d_r for single_rate
    "alpha": "auto",
    "beta": "auto",
    "theta": 0.5,
    "cap_c": 3,
    "cap_l": 5,
    "h_back": 30.0,
    "h_fwd": 30.0,
    "tail_tol": 1e-6,
    "window_min": "auto",
    "window_max": "auto",
    "t_back": "auto",
    "replica_start": 0,
    "confidence": 0.95,
}


def derive_seed(master_seed: int, replica: int, stream: int) -> int:
    """Collision-resistant 64-bit seed from (master, replica, stream).

    Bit-exact recipe: SHA-256 of the 24-byte little-endian packing
    ``<QQQ`` of the three values (each reduced mod 2^64), first 8 digest
    bytes little-endian.
    """
    payload = struct.pack(
        "<QQQ",
        master_seed & 0xFFFFFFFFFFFFFFFF,
        replica & 0xFFFFFFFFFFFFFFFF,
        stream & 0xFFFFFFFFFFFFFFFF,
    )
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class RunConfig:
    """All free parameters of one ensemble."""

    rho: float
    t_fwd: float
    replicas: int
    master_seed: int
    output_dir: str
    variant: Variant = Variant.SINGLE_RATE
    d_r: float = 2.0
    d_b: Optional[float] = None
    alpha: Optional[float] = None  # None: 0.5 * pilot speed
    theta: float = 0.5
    beta: Optional[float] = None  # None: 1.5 * alpha
    cap_c: int = 3
    cap_l: int = 5
    h_back: float = 30.0
    h_fwd: float = 30.0
    tail_tol: float = 1e-6
    window: Optional[tuple[int, int]] = None  # None: auto-sized
    t_back: Optional[float] = None  # None: -(h_back + 5)
    replica_start: int = 0
    confidence: float = 0.95

    def __post_init__(self):
        self.variant = Variant(self.variant)
        if self.d_b is None:
            self.d_b = self.d_r if self.variant is not Variant.FROG else 0.0
        self.model = ModelParams(
            rho=self.rho, d_r=self.d_r, d_b=self.d_b, variant=self.variant
        )
        if self.replicas < 1:
            raise ParameterError("replicas must be >= 1")
        if self.t_back is None:
            self.t_back = -(self.h_back + 5.0)
        self.horizons = HorizonPolicy(self.h_back, self.h_fwd, self.tail_tol)

    def resolved_alpha_params(self, pilot_speed: float) -> AlphaParams:
        alpha = self.alpha if self.alpha is not None else 0.5 * pilot_speed
        beta = self.beta if self.beta is not None else 1.5 * alpha
        return AlphaParams(
            alpha=alpha, theta=self.theta, beta=beta,
            cap_c=self.cap_c, cap_l=self.cap_l,
        )

    def resolved_window(self, pilot_speed: float) -> tuple[int, int]:
        if self.window is not None:
            return self.window
        rate = max(self.d_r, self.d_b)
        guard = math.ceil(6.0 * math.sqrt(rate * self.t_fwd))
        right = math.ceil(2.0 * pilot_speed * self.t_fwd) + guard
        return (-guard, right)

    def physics_dict(self) -> dict:
        """The keys whose equality makes two ensembles mergeable."""
        return {
            "variant": self.variant.value,
            "rho": self.rho,
            "d_r": self.d_r,
            "d_b": self.d_b,
            "alpha": self.alpha,
            "theta": self.theta,
            "beta": self.beta,
            "cap_c": self.cap_c,
            "cap_l": self.cap_l,
            "h_back": self.h_back,
            "h_fwd": self.h_fwd,
            "tail_tol": self.tail_tol,
            "window": list(self.window) if self.window else "auto",
            "t_fwd": self.t_fwd,
            "t_back": self.t_back,
            "confidence": self.confidence,
        }

    def run_key(self) -> str:
        payload = json.dumps(
            {**self.physics_dict(), "master_seed": self.master_seed},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def full_dict(self) -> dict:
        d = self.physics_dict()
        d.update(
            replicas=self.replicas,
            replica_start=self.replica_start,
            master_seed=self.master_seed,
            output_dir=self.output_dir,
        )
        return d


def parse_config_text(text: str) -> RunConfig:
    """Strict `key = value` parser; unknown keys are hard errors."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ParameterError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ParameterError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = val

    def opt(key, conv, default):
        if key not in raw:
            return default
        v = raw[key]
        return None if v == "auto" else conv(v)

    for required in ("rho", "t_fwd", "replicas", "master_seed", "output_dir"):
        if required not in raw:
            raise ParameterError(f"missing required key {required!r}")
    wmin = opt("window_min", int, None)
    wmax = opt("window_max", int, None)
    if (wmin is None) != (wmax is None):
        raise ParameterError("window_min and window_max must both be set or auto")
    return RunConfig(
        rho=float(raw["rho"]),
        t_fwd=float(raw["t_fwd"]),
        replicas=int(raw["replicas"]),
        master_seed=int(raw["master_seed"], 0),
        output_dir=raw["output_dir"],
        variant=raw.get("variant", _DEFAULTS["variant"]),
        d_r=float(raw.get("d_r", 2.0)),
        d_b=float(raw["d_b"]) if "d_b" in raw else None,
        alpha=opt("alpha", float, None),
        theta=float(raw.get("theta", 0.5)),
        beta=opt("beta", float, None),
        cap_c=int(raw.get("cap_c", 3)),
        cap_l=int(raw.get("cap_l", 5)),
        h_back=float(raw.get("h_back", 30.0)),
        h_fwd=float(raw.get("h_fwd", 30.0)),
        tail_tol=float(raw.get("tail_tol", 1e-6)),
        window=(wmin, wmax) if wmin is not None else None,
        t_back=opt("t_back", float, None),
        replica_start=int(raw.get("replica_start", 0)),
        confidence=float(raw.get("confidence", 0.95)),
    )


def config_to_text(cfg: RunConfig) -> str:
    d = cfg.full_dict()
    lines = []
    for key in _CONFIG_KEYS:
        if key in ("window_min", "window_max"):
            continue
        val = d.get(key)
        if key == "variant":
            val = cfg.variant.value
        if val is None:
            val = "auto"
        lines.append(f"{key} = {val}")
    if cfg.window is not None:
        lines.append(f"window_min = {cfg.window[0]}")
        lines.append(f"window_max = {cfg.window[1]}")
    else:
        lines.append("window_min = auto")
        lines.append("window_max = auto")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Replica execution
# ---------------------------------------------------------------------------


def _atomic_write(path: Path, data: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _replica_files(index: int) -> dict[str, str]:
    return {
        "front": f"front_{index:05d}.csv",
        "renewals": f"renewals_{index:05d}.csv",
        "attempts": f"attempts_{index:05d}.csv",
    }


def _base_rate_and_horizon(cfg: RunConfig, t_fwd: float) -> tuple[float, float]:
    """Base-path rate and base horizon per variant; remanent base paths must
    outlast the accelerated clock."""
    if cfg.variant is Variant.REMANENT:
        return cfg.d_b, t_fwd * cfg.d_r / cfg.d_b
    return cfg.d_r, t_fwd


def pilot_speed(cfg: RunConfig) -> float:
    """Short deterministic pilot used to size windows and default alpha;
    the first third of each pilot trace is discarded as transient."""
    t_pilot = min(100.0, cfg.t_fwd)
    rate = max(cfg.d_r, cfg.d_b)
    guard = math.ceil(6.0 * math.sqrt(rate * t_pilot))
    window = (-guard, math.ceil(2.5 * rate * t_pilot) + guard)
    base_rate, base_horizon = _base_rate_and_horizon(cfg, t_pilot)
    speeds = []
    for k in range(3):
        rng_cfg = np.random.default_rng(derive_seed(cfg.master_seed, k, STREAM_PILOT))
        w = sample_nu(cfg.rho, window, rng_cfg)
        psi = system_from_configuration(w, base_rate, 0.0, base_horizon, rng_cfg)
        tr = _build_variant_front(cfg, psi, t_pilot)
        t0 = t_pilot / 3.0
        speeds.append(
            (tr.position_at(tr.t_end) - tr.position_at(t0)) / (tr.t_end - t0)
        )
    return max(float(np.mean(speeds)), 1e-3)


def _build_variant_front(cfg: RunConfig, psi, t_end):
    if cfg.variant is Variant.SINGLE_RATE:
        return build_front_single_rate(psi, t_end=t_end)
    trace, _ = build_front_remanent(psi, cfg.d_r, cfg.d_b, t_end=t_end)
    return trace


def simulate_replica(cfg: RunConfig, index: int, pilot: float):
    """Build one replica's system, front, renewal records and attempts."""
    window = cfg.resolved_window(pilot)
    ap = cfg.resolved_alpha_params(pilot)
    rng_cfg = np.random.default_rng(derive_seed(cfg.master_seed, index, STREAM_CONFIG))
    rng_walk = np.random.default_rng(derive_seed(cfg.master_seed, index, STREAM_WALKS))
    w = sample_nu(cfg.rho, window, rng_cfg)
    base_rate, t_fwd_base = _base_rate_and_horizon(cfg, cfg.t_fwd)
    psi = system_from_configuration(w, base_rate, cfg.t_back, t_fwd_base, rng_walk)
    trace = _build_variant_front(cfg, psi, cfg.t_fwd)
    sc = RenewalScanner(
        psi, trace, ap.alpha, cfg.horizons, cap_c=ap.cap_c, cap_l=ap.cap_l,
        theta=ap.theta,
    )
    renewals = sc.separation_times()
    attempts = sc.attempts()
    return psi, trace, renewals, attempts


def run_replica(cfg: RunConfig, index: int, pilot: float, out_dir: Path) -> dict:
    _, trace, renewals, attempts = simulate_replica(cfg, index, pilot)
    files = _replica_files(index)
    _atomic_write(out_dir / files["front"], front_to_csv(trace))
    _atomic_write(out_dir / files["renewals"], renewals_to_csv(renewals))
    _atomic_write(out_dir / files["attempts"], attempts_to_csv(attempts))
    return {
        "index": index,
        "seed_config": derive_seed(cfg.master_seed, index, STREAM_CONFIG),
        "seed_walks": derive_seed(cfg.master_seed, index, STREAM_WALKS),
        "censored": bool(trace.censored),
        "n_renewals": len(renewals),
        "files": files,
    }


@dataclass
class RunManifest:
    config: dict
    run_key: str
    pilot_speed: float
    replicas: list
    hashes: dict
    tool: str = TOOL_VERSION

    def as_json(self) -> str:
        return json.dumps(
            {
                "tool": self.tool,
                "run_key": self.run_key,
                "pilot_speed": self.pilot_speed,
                "config": self.config,
                "replicas": self.replicas,
                "hashes": self.hashes,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        return cls(
            config=d["config"],
            run_key=d["run_key"],
            pilot_speed=d["pilot_speed"],
            replicas=d["replicas"],
            hashes=d["hashes"],
            tool=d.get("tool", "unknown"),
        )


def run_ensemble(cfg: RunConfig, workers: int = 1, resume: bool = True) -> RunManifest:
    """Simulate all replicas, write per-replica CSVs and the manifest.

    Re-running over an existing complete output tree verifies hashes instead
    of recomputing; a partial tree resumes from the first missing replica.
    """
    out_dir = Path(os.environ.get("FRONTSIM_OUT", cfg.output_dir))
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists():
        manifest = RunManifest.from_json(manifest_path.read_text())
        if manifest.run_key == cfg.run_key():
            for name, digest in manifest.hashes.items():
                path = out_dir / name
                if not path.exists() or _sha256_file(path) != digest:
                    raise IntegrityError(f"output file {name} does not match its "
                                         f"recorded hash")
            return manifest
        if not resume:
            raise ParameterError(
                "output directory holds a manifest for a different run"
            )
    pilot = pilot_speed(cfg)
    indices = list(range(cfg.replica_start, cfg.replica_start + cfg.replicas))
    todo = []
    for i in indices:
        files = _replica_files(i)
        if not all((out_dir / f).exists() for f in files.values()):
            todo.append(i)
    entries: dict[int, dict] = {}
    if workers > 1 and todo:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {
                pool.submit(run_replica, cfg, i, pilot, out_dir): i for i in todo
            }
            for fut in concurrent.futures.as_completed(futs):
                entry = fut.result()
                entries[entry["index"]] = entry
    else:
        for i in todo:
            entries[i] = run_replica(cfg, i, pilot, out_dir)
    replicas = []
    hashes = {}
    for i in indices:
        files = _replica_files(i)
        if i in entries:
            entry = entries[i]
        else:
            entry = _entry_from_existing(cfg, i, out_dir)
        replicas.append(entry)
        for f in files.values():
            hashes[f] = _sha256_file(out_dir / f)
    manifest = RunManifest(
        config=cfg.full_dict(),
        run_key=cfg.run_key(),
        pilot_speed=pilot,
        replicas=replicas,
        hashes=hashes,
    )
    _atomic_write(manifest_path, manifest.as_json())
    return manifest


def _entry_from_existing(cfg: RunConfig, index: int, out_dir: Path) -> dict:
    files = _replica_files(index)
    trace = front_from_csv((out_dir / files["front"]).read_text())
    renewals = renewals_from_csv((out_dir / files["renewals"]).read_text())
    return {
        "index": index,
        "seed_config": derive_seed(cfg.master_seed, index, STREAM_CONFIG),
        "seed_walks": derive_seed(cfg.master_seed, index, STREAM_WALKS),
        "censored": bool(trace.censored),
        "n_renewals": len(renewals),
        "files": files,
    }


# ---------------------------------------------------------------------------
# Merge and report
# ---------------------------------------------------------------------------


def merge_and_report(
    dirs: Sequence[str | Path],
    t_burn: Optional[float] = None,
    include_flagged: bool = False,
    sigma2_seed: int = 0,
) -> estimators.EstimateReport:
    """Pool replicas from several output trees into one estimate report.

    Manifests must agree on the physics keys; replicas are deduplicated by
    (run key, replica index), so merging a tree with itself is the identity
    and merge order cannot matter.
    """
    manifests = []
    for d in dirs:
        path = Path(d) / MANIFEST_NAME
        if not path.exists():
            raise MergeError(f"no manifest in {d}")
        manifests.append((Path(d), RunManifest.from_json(path.read_text())))
    base_cfg = {k: v for k, v in manifests[0][1].config.items()
                if k not in ("replicas", "replica_start", "output_dir",
                             "master_seed")}
    for _, m in manifests[1:]:
        other = {k: v for k, v in m.config.items()
                 if k not in ("replicas", "replica_start", "output_dir",
                              "master_seed")}
        if other != base_cfg:
            diff = sorted(
                k for k in set(base_cfg) | set(other)
                if base_cfg.get(k) != other.get(k)
            )
            raise MergeError(f"incompatible manifests; differing keys: {diff}")

    # deduplicate, then aggregate in a canonical global order so the merge is
    # commutative byte for byte (float summation order included)
    chosen: dict[tuple[str, int], tuple] = {}
    for d, m in manifests:
        for entry in m.replicas:
            chosen.setdefault((m.run_key, entry["index"]), (d, entry))
    fronts: list[FrontTrace] = []
    samples = []
    n_censored = 0
    for key in sorted(chosen):
        d, entry = chosen[key]
        trace = front_from_csv((d / entry["files"]["front"]).read_text())
        renewals = renewals_from_csv((d / entry["files"]["renewals"]).read_text())
        if trace.censored:
            n_censored += 1
            continue
        fronts.append(trace)
        samples.extend(
            estimators.increments_from_records(
                renewals,
                replica=entry["index"],
                include_flagged=include_flagged,
            )
        )

    t_end = fronts[0].t_end if fronts else 0.0
    t_burn = t_end / 2 if t_burn is None else t_burn
    speed = estimators.estimate_speed(fronts, t_burn)
    notes = []
    idx1 = [s for s in samples if s.index >= 1]
    sigma2_ren = math.nan
    sigma2_ren_ci = math.nan
    if len(idx1) >= 30:
        ren = estimators.estimate_variance_renewal(idx1, speed.v_hat, seed=sigma2_seed)
        sigma2_ren, sigma2_ren_ci = ren.sigma2, ren.ci_halfwidth
    else:
        notes.append(
            f"renewal variance skipped: {len(idx1)} index>=1 increments < 30"
        )
    grid = [t_end * f for f in (0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 1.0)]
    diff = estimators.estimate_variance_diffusive(fronts, grid, speed.v_hat)
    lag1_k = lag1_r = two = math.nan
    try:
        diag = estimators.iid_diagnostics(samples)
        lag1_k, lag1_r = diag.lag1_d_kappa, diag.lag1_d_r
        two = max(diag.two_sample_d_kappa, diag.two_sample_d_r)
    except Exception as exc:  # insufficient increments stays a note, not a crash
        notes.append(f"iid diagnostics skipped: {exc}")
    rmse = math.nan
    if diff.sigma2 > 0:
        try:
            prof = estimators.gaussian_profile_check(
                fronts, t_end / 2, speed.v_hat, diff.sigma2
            )
            rmse = prof.decile_rmse
        except Exception as exc:
            notes.append(f"gaussian profile skipped: {exc}")
    return estimators.EstimateReport(
        v_hat=speed.v_hat,
        v_ci=speed.ci_halfwidth,
        sigma2_renewal=sigma2_ren,
        sigma2_renewal_ci=sigma2_ren_ci,
        sigma2_diffusive=diff.sigma2,
        sigma2_diffusive_ci=diff.ci_halfwidth,
        n_increments=len(idx1),
        n_replicas=len(fronts),
        n_censored=n_censored,
        confidence=0.95,
        lag1_d_kappa=lag1_k,
        lag1_d_r=lag1_r,
        two_sample_distance=two,
        gaussian_decile_rmse=rmse,
        notes=tuple(notes),
    )
