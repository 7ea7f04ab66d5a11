"""Monte-Carlo orchestration: codes, BER sweeps, SE validation and output files.

Every frame draws its randomness from a generator keyed by
``(seed, snr index, frame index)`` and every channel from
``(seed, frame // reuse)``, so results do not depend on how frames are
split across worker processes.  Workers return per-frame tallies that the
parent merges in frame order; the stopping rule is applied during that
merge, which keeps the output identical for any worker count.
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .channel import ChannelMatrix
from .coding import LdpcCode, build_irregular, build_regular, measure_code_transfer, passthrough_code
from .config import CodeSpec, SimConfig
from .constellation import get_constellation, omega_S
from .detector import UserCode, run
from .state_evolution import find_fixed_point, interpolated_curve, se_iterate, se_threshold

__all__ = [
    "BerRecord",
    "SeValidation",
    "build_users",
    "get_code",
    "predict_threshold",
    "run_ber",
    "run_se_validation",
    "write_csv",
    "write_manifest",
]


# --------------------------------------------------------------------------
# output helpers


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def atomic_write_text(path, text: str):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, rows):
    """``rows`` is an iterable whose first item is the header."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    atomic_write_text(path, buf.getvalue())


def write_manifest(path, cfg: SimConfig, command: str, **extra):
    info = {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "versions": {
            "gmumimo": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    info.update(extra)
    atomic_write_text(path, json.dumps(info, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# --------------------------------------------------------------------------
# codes and users


def _build_code(spec: CodeSpec, n: int) -> LdpcCode:
    if spec.kind == "regular":
        return build_regular(n, spec.dv, spec.dc, seed=spec.seed, depth=spec.depth)
    if spec.kind == "irregular":
        lam = {int(k): float(v) for k, v in (spec.lambda_profile or {}).items()}
        rho = {int(k): float(v) for k, v in (spec.rho_profile or {}).items()}
        return build_irregular(n, lam, rho, seed=spec.seed, depth=spec.depth)
    if spec.kind == "none":
        return passthrough_code(n)
    raise ValueError(f"unknown code kind {spec.kind!r}")


def get_code(spec: CodeSpec, n: int, cache_dir=None) -> LdpcCode:
    """Build a code, or load it from ``cache_dir/<key>.npz`` if present."""
    if not cache_dir:
        return _build_code(spec, n)
    path = Path(cache_dir) / f"{spec.key(n)}.npz"
    if path.is_file():
        z = np.load(path)
        return LdpcCode(int(z["n"]), int(z["m"]), z["edge_check"], z["edge_var"], str(z["name"]))
    code = _build_code(spec, n)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(suffix=".npz", dir=path.parent)
    os.close(fd)
    np.savez(tmp, n=code.n, m=code.m, edge_check=code.edge_check, edge_var=code.edge_var,
             name=code.name)
    os.replace(tmp, path)
    return code


def code_length(cfg: SimConfig) -> int:
    """Coded bits per user per frame: one codeword spans all channel uses."""
    c = get_constellation(cfg.constellation)
    return c.bits_per_symbol * cfg.layout.antennas_per_user * cfg.layout.block_length


def build_users(cfg: SimConfig, cache_dir=None) -> list[UserCode]:
    """Users in antenna order; user k belongs to group k // (K / G).

    Users of one group share a single code object so the detector decodes
    them as one batch.
    """
    lay = cfg.layout
    n_bits = code_length(cfg)
    if cfg.mode == "coded":
        codes = [get_code(s, n_bits, cache_dir or cfg.code_cache) for s in cfg.codes]
    else:
        codes = [passthrough_code(n_bits)] * lay.groups
    per_group = lay.users // lay.groups
    users = []
    for k in range(lay.users):
        g = k // per_group
        ant = np.arange(k * lay.antennas_per_user, (k + 1) * lay.antennas_per_user)
        users.append(UserCode(ant, codes[g], g))
    return users


# --------------------------------------------------------------------------
# SE threshold from measured code transfer curves


@dataclass
class ThresholdPrediction:
    snr: float
    rho: np.ndarray
    group_mse: np.ndarray      # (G, len(rho))
    average: np.ndarray

    @property
    def snr_db(self) -> float:
        return float(10 * np.log10(self.snr))


def predict_threshold(cfg: SimConfig, users=None, snr_range_db=(-10.0, 40.0)) -> ThresholdPrediction:
    """SE decoding threshold of the coded receiver.

    Each group's code is run through the scalar surrogate channel to
    measure its MSE transfer curve; the group average (made nonincreasing)
    is the NLD curve fed to the tunnel test.
    """
    c = get_constellation(cfg.constellation)
    users = users or build_users(cfg)
    lo, hi, count = cfg.transfer_rho
    rho = np.geomspace(float(lo), float(hi), int(count))
    group_codes = {}
    for u in users:
        group_codes.setdefault(u.group, u.code)
    mse = []
    for g in sorted(group_codes):
        tm = measure_code_transfer(group_codes[g], c, rho, trials=cfg.transfer_trials,
                                   seed=[cfg.seed, 7, g], max_iters=cfg.detector.bp_iters * 2)
        mse.append(tm.mse)
    mse = np.array(mse)
    avg = np.maximum.accumulate(mse.mean(axis=0)[::-1])[::-1]
    head = float(omega_S(c, 0.0))
    curve = interpolated_curve(np.concatenate(([0.0], rho)), np.concatenate(([head], avg)))
    spectrum = cfg.channel.spectrum()
    lo_db, hi_db = snr_range_db
    th = se_threshold(spectrum, (10 ** (lo_db / 10), 10 ** (hi_db / 10)), curve)
    return ThresholdPrediction(th, rho, mse, avg)


# --------------------------------------------------------------------------
# BER


@dataclass
class BerRecord:
    snr_db: float
    frames: int
    frame_errors: int
    bit_errors: list          # per group
    bits: list                # per group
    mean_iters: float
    wall_time: float = 0.0

    @property
    def total_errors(self) -> int:
        return int(sum(self.bit_errors))

    @property
    def total_bits(self) -> int:
        return int(sum(self.bits))

    @property
    def ber(self) -> float:
        return self.total_errors / self.total_bits if self.total_bits else float("nan")

    @property
    def group_ber(self) -> list:
        return [e / b if b else float("nan") for e, b in zip(self.bit_errors, self.bits)]


def ber_rows(records):
    """CSV rows for a BER sweep.  Wall time is left to the manifest so that
    reruns produce identical files."""
    G = len(records[0].bits) if records else 0
    head = ["snr_db", "frames", "frame_errors", "bit_errors", "bits", "ber"]
    for g in range(G):
        head += [f"bit_errors_g{g}", f"bits_g{g}", f"ber_g{g}"]
    yield head + ["mean_iters"]
    for r in records:
        row = [r.snr_db, r.frames, r.frame_errors, r.total_errors, r.total_bits, r.ber]
        for e, b, x in zip(r.bit_errors, r.bits, r.group_ber):
            row += [e, b, x]
        yield row + [r.mean_iters]


_CTX = {}


def _init_worker(cfg: SimConfig, users):
    _CTX.clear()
    _CTX.update(cfg=cfg, users=users, c=get_constellation(cfg.constellation),
                spectrum=cfg.channel.spectrum(), channel=(None, None))


def _channel_for(frame: int) -> ChannelMatrix:
    cfg = _CTX["cfg"]
    block = frame // cfg.reuse
    key, ch = _CTX["channel"]
    if key != block:
        rng = np.random.default_rng([cfg.seed, 1, block])
        if cfg.channel_kind == "iid":
            ch = cfg.channel.draw(rng)
        else:
            ch = ChannelMatrix.draw(_CTX["spectrum"], rng)
        _CTX["channel"] = (block, ch)
    return ch


def _simulate_frame(snr_idx: int, snr_db: float, frame: int):
    cfg, users, c = _CTX["cfg"], _CTX["users"], _CTX["c"]
    G = cfg.layout.groups
    L = cfg.layout.block_length
    ch = _channel_for(frame)
    rng = np.random.default_rng([cfg.seed, 0, snr_idx, frame])
    snr = 10 ** (snr_db / 10)
    x = np.zeros((ch.n, L), dtype=complex)
    infos = []
    for u in users:
        info = rng.integers(0, 2, u.code.k, dtype=np.uint8)
        infos.append(info)
        u.scatter(x, c.modulate(u.code.encode(info)))
    noise = (rng.standard_normal((ch.m, L)) + 1j * rng.standard_normal((ch.m, L))) / np.sqrt(2 * snr)
    y = ch.apply(x) + noise
    errs = np.zeros(G, dtype=np.int64)
    bits = np.zeros(G, dtype=np.int64)
    if cfg.mode == "coded":
        res = run(y, ch, snr, c, "coded", cfg.detector, users)
        for u, info, d in zip(users, infos, res.decoded):
            info_hat = d.bits[u.code._encoder[1]]
            errs[u.group] += int(np.count_nonzero(info_hat != info))
            bits[u.group] += info.size
    else:
        res = run(y, ch, snr, c, "uncoded", cfg.detector)
        for u, info in zip(users, infos):
            hat = c.bits_of(c.hard_decision(u.gather(res.x_hat)))
            errs[u.group] += int(np.count_nonzero(hat != info))
            bits[u.group] += info.size
    return errs, bits, res.iterations


def _simulate_chunk(task):
    snr_idx, snr_db, start, stop = task
    return [_simulate_frame(snr_idx, snr_db, f) for f in range(start, stop)]


def _chunks(snr_idx, snr_db, frames, size):
    for start in range(0, frames, size):
        yield (snr_idx, snr_db, start, min(start + size, frames))


def run_ber(cfg: SimConfig, users=None, progress=None) -> list[BerRecord]:
    """BER sweep over ``cfg.snr_db``.

    Per SNR the run stops once ``target_frame_errors`` frames have failed
    or ``frames`` frames have been simulated.  A frame is in error if any
    information bit of any user is wrong.
    """
    cfg.validate()
    users = users or build_users(cfg)
    records = []
    pool = None
    if cfg.workers > 1:
        pool = ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker,
                                   initargs=(cfg, users))
    else:
        _init_worker(cfg, users)
    try:
        for si, snr_db in enumerate(cfg.snr_db):
            t0 = time.perf_counter()
            G = cfg.layout.groups
            errs = np.zeros(G, dtype=np.int64)
            bits = np.zeros(G, dtype=np.int64)
            n_frames = frame_errors = iters = 0
            tasks = list(_chunks(si, snr_db, cfg.frames, cfg.chunk))
            # submit in waves so an early stop does not wait on the whole budget
            wave = max(1, 2 * cfg.workers)
            done = False
            for w0 in range(0, len(tasks), wave):
                batch = tasks[w0:w0 + wave]
                results = pool.map(_simulate_chunk, batch) if pool else map(_simulate_chunk, batch)
                for chunk in results:
                    if done:
                        continue
                    for e, b, it in chunk:
                        errs += e
                        bits += b
                        n_frames += 1
                        iters += it
                        frame_errors += int(e.sum() > 0)
                        if frame_errors >= cfg.target_frame_errors:
                            done = True
                            break
                if done:
                    break
                if progress and w0 + wave < len(tasks):
                    progress(snr_db, n_frames, frame_errors)
            rec = BerRecord(float(snr_db), n_frames, frame_errors, errs.tolist(), bits.tolist(),
                            iters / max(n_frames, 1), time.perf_counter() - t0)
            records.append(rec)
            if progress:
                progress(snr_db, n_frames, frame_errors)
    finally:
        if pool:
            pool.shutdown()
    return records


# --------------------------------------------------------------------------
# SE validation


@dataclass
class SeValidation:
    snr_db: float
    iters: np.ndarray
    mse_r: np.ndarray          # empirical, averaged over seeds
    mse_s: np.ndarray
    se_mse_r: np.ndarray       # 1 / rho_t
    se_mse_s: np.ndarray       # v_t
    v_star: float
    seeds: int

    @property
    def gap_r(self) -> np.ndarray:
        return np.abs(self.mse_r - self.se_mse_r) / self.se_mse_r

    @property
    def gap_s(self) -> np.ndarray:
        return np.abs(self.mse_s - self.se_mse_s) / self.se_mse_s

    @property
    def terminal_gap(self) -> float:
        return float(abs(self.mse_s[-1] - self.v_star) / self.v_star)

    def rows(self):
        yield ("snr_db", "iter", "mse_r", "se_mse_r", "gap_r", "mse_s", "se_mse_s", "gap_s")
        for i in range(len(self.iters)):
            yield (self.snr_db, int(self.iters[i]), self.mse_r[i], self.se_mse_r[i], self.gap_r[i],
                   self.mse_s[i], self.se_mse_s[i], self.gap_s[i])


def run_se_validation(cfg: SimConfig, progress=None) -> list[SeValidation]:
    """Genie-aided uncoded detection against the SE prediction.

    The singular spectrum is fixed by ``cfg.seed``; each of ``se_seeds``
    runs draws fresh Haar singular vectors, symbols and noise and runs
    exactly ``se_iters`` iterations.  For an iid channel kind this is the
    iid ensemble conditioned on one spectrum draw.
    """
    c = get_constellation(cfg.constellation)
    spectrum = cfg.channel.spectrum()
    det = replace(cfg.detector, max_iters=cfg.se_iters, tol=-1.0, variance="analytic")
    n, m = spectrum.n, spectrum.m
    L = cfg.layout.block_length
    shape = (n,) if L == 1 else (n, L)
    out = []
    for si, snr_db in enumerate(cfg.snr_db):
        snr = 10 ** (snr_db / 10)
        rhos, vs = se_iterate(spectrum, snr, c, max_iters=cfg.se_iters)
        k = len(rhos)
        acc_r = np.zeros(cfg.se_iters)
        acc_s = np.zeros(cfg.se_iters)
        for s in range(cfg.se_seeds):
            rng = np.random.default_rng([cfg.seed, 2, si, s])
            ch = ChannelMatrix.draw(spectrum, rng, left=False)
            bits = rng.integers(0, 2, (int(np.prod(shape)) * c.bits_per_symbol,), dtype=np.uint8)
            x = c.modulate(bits).reshape(shape)
            mshape = (m,) + shape[1:]
            y = ch.apply(x) + (rng.standard_normal(mshape) + 1j * rng.standard_normal(mshape)) / np.sqrt(2 * snr)
            traj = run(y, ch, snr, c, "uncoded", det, x_true=x).trajectory
            tr = np.array(traj.mse_r)
            ts = np.array(traj.mse_s)
            acc_r[:tr.size] += tr
            acc_s[:ts.size] += ts
            if progress:
                progress(snr_db, s + 1)
        k = min(k, cfg.se_iters)
        fp = find_fixed_point(spectrum, snr, c)
        out.append(SeValidation(
            float(snr_db), np.arange(1, k + 1), acc_r[:k] / cfg.se_seeds, acc_s[:k] / cfg.se_seeds,
            1.0 / rhos[:k], vs[:k], fp.v_star, cfg.se_seeds,
        ))
    return out
