"""Command-line front end: sequence construction, BLER sweeps, SNR tables,
calibration, training, the PE ablation, and cache maintenance.

Every emitted file starts with a header carrying the tool version, a config
digest, and the seed, so artifacts are traceable and re-runs comparable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import __version__
from .channel import AWGN, RAYLEIGH
from .construct import dega_sequence, mc_sequence, nr_sequence
from .decode import DecoderConfig
from .policy import Policy, PolicyConfig, load_checkpoint
from .polar import CRC4_0X3, CRC_NONE
from .rewards import (CalibrationError, RateWeights, RewardCache, RewardEnv,
                      StopRule, calibrate_training_snr, estimate_bler)
from .sequences import ReliabilitySequence, load_sequence
from .train import TrainConfig, TrainingDiverged, extract_sequence, train

EVAL_COLUMNS = ["scheme", "channel", "N", "K", "L", "snr_db", "frames", "errors", "bler"]
FIND_SNR_COLUMNS = ["scheme", "K", "snr_db", "relative_snr_db", "status"]


def _config_digest(payload) -> str:
    if isinstance(payload, bytes):
        return hashlib.sha256(payload).hexdigest()[:16]
    canon = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


_NON_PHYSICS_ARGS = {"func", "cmd", "out", "cache_path", "resume", "jobs"}

def _args_digest(args) -> str:
    """Digest of the arguments that determine results (io plumbing excluded)."""
    return _config_digest({k: v for k, v in vars(args).items()
                           if k not in _NON_PHYSICS_ARGS})


def _header_lines(digest: str, seed, extras=()) -> list:
    lines = [f"# polarseq {__version__}", f"# config {digest}", f"# seed {seed}"]
    lines += [f"# {e}" for e in extras]
    return lines


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in columns) + "\n")


def _parse_grid(args) -> list:
    if args.grid:
        lo, hi, num = args.grid.split(":")
        return [float(x) for x in np.linspace(float(lo), float(hi), int(num))]
    if args.ebno:
        return [float(x) for x in args.ebno.split(",")]
    raise SystemExit("need --ebno or --grid")


def _crc_of(args):
    return CRC_NONE if args.crc == "off" else CRC4_0X3


def _decoder_of(args) -> DecoderConfig:
    crc_aided = args.crc != "off"
    return DecoderConfig(list_size=args.list_size, metric=args.metric,
                         crc_aided=crc_aided)


def _stop_of(args) -> StopRule:
    return StopRule(target_errors=args.target_errors, max_frames=args.max_frames,
                    chunk=args.chunk)


def _cache_of(args) -> RewardCache:
    return RewardCache(args.cache_path)


def _seed_of(args) -> int:
    return 0 if args.seed is None else args.seed


def _resolve_scheme(token: str, args) -> tuple:
    """Map a scheme token to (label, ReliabilitySequence)."""
    if token == "nr":
        return "nr", nr_sequence(args.n)
    if token == "dega":
        return "dega", dega_sequence(args.n, args.design_ebno, args.design_rate)
    if token == "mc":
        return "mc", mc_sequence(args.n, args.design_ebno, args.mc_trials,
                                 _seed_of(args), args.design_rate,
                                 channel=args.channel)
    if token.startswith("rl:"):
        ckpt_cfg, params, _ = load_checkpoint(token[3:])
        seq = extract_sequence(Policy(ckpt_cfg, params))
        label = "rl-" + os.path.splitext(os.path.basename(token[3:]))[0]
        return label, seq
    if token.endswith(".json"):
        seq = load_sequence(token)
        label = seq.provenance.get("scheme", "seq").lower()
        return f"{label}-{os.path.splitext(os.path.basename(token))[0]}", seq
    raise SystemExit(f"unknown scheme {token!r}")


def _resolve_schemes(tokens: str, args) -> list:
    out = []
    for token in tokens.split(","):
        label, seq = _resolve_scheme(token, args)
        if seq.N != args.n:
            raise SystemExit(f"scheme {token!r} is a length-{seq.N} sequence "
                             f"but --n is {args.n}")
        out.append((label, seq))
    return out


def _k_list(args) -> list:
    if not args.k:
        raise SystemExit("need --k")
    return [int(x) for x in args.k.split(",")]


def cmd_construct(args) -> int:
    if args.scheme == "rl" and args.config:
        raw = open(args.config, "rb").read()
        cfg_dict = _load_toml(args.config)
        out_dir = os.path.dirname(os.path.abspath(args.out))
        built = _build_training(args, cfg_dict, raw, out_dir=out_dir)
        seq = _run_training(*built)
        if seq is None:
            return 1
        seq.save(args.out)
        print(f"wrote {args.out} (rl, N={seq.N})")
        return 0
    label, seq = _resolve_scheme(args.scheme, args)
    digest = _args_digest(args)
    prov = dict(seq.provenance)
    prov.update({"tool_version": __version__, "config_digest": digest,
                 "seed": _seed_of(args)})
    seq = ReliabilitySequence(N=seq.N, order=seq.order, provenance=prov)
    seq.save(args.out)
    print(f"wrote {args.out} ({label}, N={seq.N})")
    return 0


def _read_done_keys(path) -> set:
    done = set()
    if not os.path.exists(path):
        return done
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("scheme,"):
                continue
            parts = line.strip().split(",")
            if len(parts) == len(EVAL_COLUMNS):
                scheme, channel, N, K, L, snr_db = parts[:6]
                done.add((scheme, channel, int(N), int(K), int(L),
                          int(round(float(snr_db) * 1000))))
    return done


def cmd_evaluate(args) -> int:
    grid = _parse_grid(args)
    stop = _stop_of(args)
    dec = _decoder_of(args)
    cache = _cache_of(args)
    digest = _args_digest(args)
    schemes = _resolve_schemes(args.scheme, args)
    done = _read_done_keys(args.out) if args.resume else set()
    fresh = not (args.resume and os.path.exists(args.out))
    fh = open(args.out, "a" if not fresh else "w")
    try:
        if fresh:
            extras = [f"stop {stop.digest()}", f"decoder {dec.digest()}"]
            for line in _header_lines(digest, _seed_of(args), extras):
                fh.write(line + "\n")
            fh.write(",".join(EVAL_COLUMNS) + "\n")
        for label, seq in schemes:
            for K in _k_list(args):
                info = seq.info_set(K)
                for snr in grid:
                    key = (label, args.channel, args.n, K, dec.list_size,
                           int(round(snr * 1000)))
                    if key in done:
                        continue
                    est = estimate_bler(args.n, info, args.channel, snr, dec,
                                        stop, _seed_of(args), crc=_crc_of(args),
                                        es_n0=args.es_n0, cache=cache,
                                        jobs=args.jobs)
                    row = [label, args.channel, args.n, K, dec.list_size,
                           f"{snr:g}", est.frames, est.errors, f"{est.bler:.8g}"]
                    fh.write(",".join(str(v) for v in row) + "\n")
                    fh.flush()
    finally:
        fh.close()
    print(f"wrote {args.out}")
    return 0


def cmd_find_snr(args) -> int:
    stop = _stop_of(args)
    dec = _decoder_of(args)
    cache = _cache_of(args)
    digest = _args_digest(args)
    bracket = tuple(float(x) for x in args.bracket.split(","))
    schemes = _resolve_schemes(args.scheme, args)
    nr_label, nr_seq = _resolve_scheme("nr", args)
    rows = []
    nr_snr = {}
    for K in _k_list(args):
        try:
            nr_snr[K] = calibrate_training_snr(
                nr_seq, K, args.channel, dec, args.target_bler, bracket, stop,
                _seed_of(args), _crc_of(args), args.es_n0, cache, args.jobs)
        except CalibrationError as exc:
            print(f"warning: nr K={K}: {exc}", file=sys.stderr)
            nr_snr[K] = float("nan")
    for label, seq in schemes:
        for K in _k_list(args):
            if label == nr_label:
                snr, rel, status = nr_snr[K], 0.0, "ok"
                if not np.isfinite(snr):
                    status = "bracket-failure"
            else:
                try:
                    snr = calibrate_training_snr(
                        seq, K, args.channel, dec, args.target_bler, bracket,
                        stop, _seed_of(args), _crc_of(args), args.es_n0, cache,
                        args.jobs)
                    rel, status = snr - nr_snr[K], "ok"
                except CalibrationError as exc:
                    print(f"warning: {label} K={K}: {exc}", file=sys.stderr)
                    snr, rel, status = float("nan"), float("nan"), "bracket-failure"
            rows.append({"scheme": label, "K": K, "snr_db": f"{snr:.4f}",
                         "relative_snr_db": f"{rel:.4f}", "status": status})
    extras = [f"target_bler {args.target_bler}",
              "relative_snr_db = scheme SNR minus NR SNR at the same K; lower is better"]
    _write_csv(args.out, _header_lines(digest, _seed_of(args), extras),
               FIND_SNR_COLUMNS, rows)
    print(f"wrote {args.out}")
    return 0


def _load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _weights_from_config(N: int, wc: dict) -> RateWeights:
    mode = wc.get("mode", "joint")
    stride = int(wc.get("stride", 1 if N <= 16 else 4))
    if mode == "joint":
        return RateWeights.joint(N, stride=stride)
    if mode == "target":
        w = RateWeights.target_rate(N, int(wc["target_k"]),
                                    float(wc.get("target_weight", 10.0)),
                                    float(wc.get("base", 1.0)))
        if stride > 1:
            keep = np.zeros(N + 1, bool)
            keep[stride::stride] = True
            keep[int(wc["target_k"])] = True
            w.c[~keep] = 0.0
        return w
    raise SystemExit(f"unknown weights mode {mode!r}")


def _build_training(args, cfg_dict, raw_bytes, use_pe_override=None, out_dir=None):
    """Shared assembly for train, ablate-pe, and construct rl."""
    code = cfg_dict.get("code", {})
    N = int(code.get("n", 16))
    crc = CRC_NONE if code.get("crc", "off") == "off" else CRC4_0X3
    ch = cfg_dict.get("channel", {})
    channel = ch.get("kind", AWGN)
    es_n0 = bool(ch.get("es_n0", False))
    dc = cfg_dict.get("decoder", {})
    dec = DecoderConfig(list_size=int(dc.get("list_size", 1)),
                        metric=dc.get("metric", "exact"),
                        crc_aided=bool(dc.get("crc_aided", False)))
    pc = cfg_dict.get("policy", {})
    use_pe = bool(pc.get("use_pe", True)) if use_pe_override is None else use_pe_override
    policy_cfg = PolicyConfig(N=N, d_model=int(pc.get("d_model", 64)),
                              n_heads=int(pc.get("n_heads", 4)),
                              n_layers=int(pc.get("n_layers", 2)),
                              d_ff=int(pc.get("d_ff", 256)), use_pe=use_pe)
    tc = cfg_dict.get("train", {})
    seed = int(args.seed if args.seed is not None else tc.get("seed", 0))
    weights = _weights_from_config(N, cfg_dict.get("weights", {}))
    rw = cfg_dict.get("reward", {})
    stop_train = StopRule(target_errors=int(rw.get("target_errors", 25)),
                          max_frames=int(rw.get("max_frames", 2000)),
                          chunk=int(rw.get("chunk", 500)))
    cal = cfg_dict.get("calibration", {})
    stop_cal = StopRule(target_errors=int(cal.get("target_errors", 100)),
                        max_frames=int(cal.get("max_frames", 100000)),
                        chunk=int(cal.get("chunk", 2000)))
    io = cfg_dict.get("io", {})
    if out_dir is None:
        out_dir = args.out or io.get("out_dir", "runs/train")
    os.makedirs(out_dir, exist_ok=True)
    cache_path = args.cache_path or io.get("cache_path") or os.path.join(out_dir, "rewards.cache")
    cache = RewardCache(cache_path)
    env = RewardEnv(N=N, channel=channel, dec=dec, stop=stop_train, seed=seed,
                    crc=crc, es_n0=es_n0, cache=cache, jobs=args.jobs)

    baseline_scheme = cal.get("baseline", "nr")
    if baseline_scheme != "nr":
        raise SystemExit("only the nr calibration baseline is supported")
    base_seq = nr_sequence(N)
    bracket = tuple(cal.get("bracket", (-4.0, 40.0)))
    table_path = os.path.join(out_dir, "calibration.json")
    digest = _config_digest(raw_bytes)
    snr_loaded = False
    if os.path.exists(table_path):
        saved = json.load(open(table_path))
        if saved.get("config") == digest and saved.get("seed") == seed:
            weights = RateWeights(c=np.array(saved["c"]),
                                  snr_db=np.array(saved["snr_db"]))
            snr_loaded = True
    if not snr_loaded:
        snr = weights.snr_db.copy()
        for k in weights.active_rates():
            snr[int(k)] = calibrate_training_snr(
                base_seq, int(k), channel, dec, float(cal.get("target_bler", 0.01)),
                bracket, stop_cal, seed, crc, es_n0, cache, args.jobs)
            print(f"calibrated k={int(k)}: {snr[int(k)]:.3f} dB")
        weights = RateWeights(c=weights.c, snr_db=snr)
        with open(table_path, "w") as fh:
            json.dump({"tool_version": __version__, "config": digest,
                       "seed": seed, "c": weights.c.tolist(),
                       "snr_db": weights.snr_db.tolist()}, fh, indent=2)

    train_cfg = TrainConfig(
        N=N, weights=weights, K=tc.get("episode_len"),
        gamma=float(tc.get("gamma", 1.0)), lr=float(tc.get("lr", 5e-4)),
        batch_size=int(tc.get("batch_size", 100)),
        epochs=int(tc.get("epochs", 20000)), beta=float(tc.get("beta", 0.99)),
        eval_every=int(tc.get("eval_every", 100)),
        grad_clip=float(tc.get("grad_clip", 1.0)), seed=seed)
    return train_cfg, env, policy_cfg, out_dir, digest


def _run_training(train_cfg, env, policy_cfg, out_dir, digest, tag=""):
    suffix = f"-{tag}" if tag else ""
    log_path = os.path.join(out_dir, f"train_log{suffix}.csv")
    ckpt_path = os.path.join(out_dir, f"policy{suffix}.ckpt")
    seq_path = os.path.join(out_dir, f"sequence{suffix}.json")
    tmp_log = log_path + ".rows"
    def progress(row):
        if int(row["epoch"]) % 50 == 0 or row["greedy_objective"]:
            print(f"epoch {row['epoch']}: mean_return {row['mean_return']} "
                  f"greedy {row['greedy_objective'] or '-'}")
    try:
        res = train(train_cfg, env, policy_cfg=policy_cfg, log_path=tmp_log,
                    checkpoint_path=ckpt_path, progress=progress)
    except TrainingDiverged as exc:
        _finalize_log(tmp_log, log_path, digest, train_cfg.seed)
        print(f"error: {exc}", file=sys.stderr)
        return None
    _finalize_log(tmp_log, log_path, digest, train_cfg.seed)
    prov = dict(res.sequence.provenance)
    prov.update({"tool_version": __version__, "config_digest": digest,
                 "seed": train_cfg.seed})
    seq = ReliabilitySequence(N=res.sequence.N, order=res.sequence.order,
                              provenance=prov)
    seq.save(seq_path)
    print(f"wrote {seq_path}, {ckpt_path}, {log_path}")
    return seq


def _finalize_log(tmp_log, log_path, digest, seed):
    if not os.path.exists(tmp_log):
        return
    with open(tmp_log) as fh:
        body = fh.read()
    with open(log_path, "w") as fh:
        for line in _header_lines(digest, seed):
            fh.write(line + "\n")
        fh.write(body)
    os.remove(tmp_log)


def cmd_train(args) -> int:
    raw = open(args.config, "rb").read()
    cfg_dict = _load_toml(args.config)
    built = _build_training(args, cfg_dict, raw)
    seq = _run_training(*built)
    return 0 if seq is not None else 1


def cmd_ablate_pe(args) -> int:
    raw = open(args.config, "rb").read()
    cfg_dict = _load_toml(args.config)
    results = {}
    for use_pe in (True, False):
        tag = "pe-on" if use_pe else "pe-off"
        print(f"--- training {tag} ---")
        built = _build_training(args, cfg_dict, raw, use_pe_override=use_pe)
        train_cfg, env, policy_cfg, out_dir, digest = built
        seq = _run_training(train_cfg, env, policy_cfg, out_dir,
                            _config_digest(raw + tag.encode()), tag=tag)
        if seq is None:
            return 1
        results[tag] = (seq, env, train_cfg)
    seq_on, env, train_cfg = results["pe-on"]
    seq_off = results["pe-off"][0]
    obj_on = env.objective(seq_on.order, train_cfg.weights)
    obj_off = env.objective(seq_off.order, train_cfg.weights)
    print(f"greedy objective: pe-on {obj_on:.6g}, pe-off {obj_off:.6g}")
    return 0


def cmd_calibrate(args) -> int:
    dec = _decoder_of(args)
    cache = _cache_of(args)
    stop = _stop_of(args)
    seq = _resolve_scheme(args.scheme, args)[1]
    bracket = tuple(float(x) for x in args.bracket.split(","))
    digest = _args_digest(args)
    table = {}
    for K in _k_list(args):
        snr = calibrate_training_snr(seq, K, args.channel, dec,
                                     args.target_bler, bracket, stop,
                                     _seed_of(args), _crc_of(args), args.es_n0,
                                     cache, args.jobs)
        table[str(K)] = snr
        print(f"K={K}: {snr:.4f} dB")
    with open(args.out, "w") as fh:
        json.dump({"tool_version": __version__, "config": digest,
                   "seed": _seed_of(args), "target_bler": args.target_bler,
                   "channel": args.channel, "snr_db": table}, fh, indent=2)
    print(f"wrote {args.out}")
    return 0


def cmd_cache(args) -> int:
    cache = RewardCache(args.cache_path)
    if args.cache_cmd == "stats":
        st = cache.stats()
        size = os.path.getsize(args.cache_path) if os.path.exists(args.cache_path) else 0
        print(f"path: {args.cache_path}")
        print(f"records: {st['records']}")
        print(f"frames: {st['frames']}")
        print(f"file_bytes: {size}")
    elif args.cache_cmd == "compact":
        before = os.path.getsize(args.cache_path) if os.path.exists(args.cache_path) else 0
        cache.compact()
        after = os.path.getsize(args.cache_path)
        print(f"compacted {args.cache_path}: {before} -> {after} bytes")
    return 0


def _add_common(p, with_code=True):
    if with_code:
        p.add_argument("--n", type=int, default=64)
        p.add_argument("--k", type=str, default=None,
                       help="comma-separated payload sizes")
        p.add_argument("--channel", choices=[AWGN, RAYLEIGH], default=AWGN)
        p.add_argument("--list-size", type=int, default=8)
        p.add_argument("--metric", choices=["exact", "min-sum"], default="exact")
        p.add_argument("--crc", choices=["off", "0x3"], default="0x3")
        p.add_argument("--es-n0", action="store_true",
                       help="interpret SNRs as Es/N0 instead of Eb/N0")
        p.add_argument("--target-errors", type=int, default=100)
        p.add_argument("--max-frames", type=int, default=100000)
        p.add_argument("--chunk", type=int, default=1000)
        p.add_argument("--design-ebno", type=float, default=2.0)
        p.add_argument("--design-rate", type=float, default=0.5)
        p.add_argument("--mc-trials", type=int, default=100000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cache-path", type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="polarseq",
                                 description="polar code construction toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("construct", help="write a reliability sequence file")
    p.add_argument("scheme", help="nr | dega | mc | rl:<checkpoint>")
    p.add_argument("--config", type=str, default=None,
                   help="training recipe (rl scheme only)")
    p.add_argument("--out", type=str, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("evaluate", help="BLER sweep over an SNR grid")
    p.add_argument("--scheme", type=str, required=True,
                   help="comma list: nr | dega | mc | rl:<ckpt> | <file.json>")
    p.add_argument("--ebno", type=str, default=None, help="comma list of dB points")
    p.add_argument("--grid", type=str, default=None, help="lo:hi:num dB grid")
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--resume", action="store_true",
                   help="skip (scheme,channel,N,K,L,snr) rows already in --out")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("find-snr", help="SNR at target BLER, relative to NR")
    p.add_argument("--scheme", type=str, required=True)
    p.add_argument("--target-bler", type=float, default=0.01)
    p.add_argument("--bracket", type=str, default="-4.0,40.0")
    p.add_argument("--out", type=str, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_find_snr)

    p = sub.add_parser("calibrate", help="per-rate training SNR table")
    p.add_argument("--scheme", type=str, default="nr")
    p.add_argument("--target-bler", type=float, default=0.01)
    p.add_argument("--bracket", type=str, default="-4.0,40.0")
    p.add_argument("--out", type=str, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", help="policy-gradient training from a recipe")
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cache-path", type=str, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate-pe", help="paired PE on/off training runs")
    p.add_argument("--config", type=str, required=True)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cache-path", type=str, default=None)
    p.set_defaults(func=cmd_ablate_pe)

    p = sub.add_parser("cache", help="reward cache maintenance")
    p.add_argument("cache_cmd", choices=["stats", "compact"])
    p.add_argument("--cache-path", type=str, required=True)
    p.set_defaults(func=cmd_cache)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
