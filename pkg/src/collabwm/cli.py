"""Command-line entry point: ``collabwm <subcommand> [options]``.

Exit status is 0 on success, 1 on runtime or data errors and 2 on usage
errors. Settings resolve as flag > ``--config`` JSON file > built-in default,
and the resolved settings are written to a sidecar JSON file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import patchwork as pw
from .augment import ALL_CONDITIONS, Condition, NoiseCorpus, apply_condition
from .signal import AudioClip, WavError, load_wav, save_wav

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


COMMON_DEFAULTS = {"seed": 0, "jobs": 1, "out_dir": None}
PATCHWORK_DEFAULTS = {"key_seed": 0, "payload": None, "grid_min": 0.01, "grid_max": 0.2, "grid_step": 0.01}
DEFAULTS = {
    "embed": {**PATCHWORK_DEFAULTS, "strength": None},
    "detect": {**PATCHWORK_DEFAULTS, "no_speed_search": False},
    "search-strength": dict(PATCHWORK_DEFAULTS),
    "augment": {"conditions": "s+n", "noise_manifest": None},
    "eval": {**PATCHWORK_DEFAULTS, "conditions": ",".join(c.value for c in ALL_CONDITIONS), "rounds": 20,
             "manifest": None, "synthetic": 0, "duration": 4.6, "sample_rate": 16000, "noise_manifest": None},
    "train-toy": {"iterations": 2000, "rounds": 3, "roles": "collaborator,observer", "augment": "none,stretch+noise",
                  "batch_size": 2, "segment": 4096, "n_utterances": 200, "lr": 2e-4, "wm_weight": 1.0, "checkpoint_every": 0,
                  "resume": False},
    "report": {"format": "markdown"},
}


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=None, help="JSON file with option values (flags take precedence)")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--jobs", type=int, default=S, help="utterance-level parallelism in evaluation")
    p.add_argument("--out-dir", default=S)


def _add_patchwork(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--key-seed", type=int, default=S)
    p.add_argument("--payload", default=S, help="32 hex characters, most significant bit first")
    p.add_argument("--grid-min", type=float, default=S)
    p.add_argument("--grid-max", type=float, default=S)
    p.add_argument("--grid-step", type=float, default=S)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="collabwm", description="Audio watermarking and detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="embed a patchwork payload into a WAV file")
    p.add_argument("input")
    p.add_argument("output")
    _add_patchwork(p)
    p.add_argument("--strength", type=float, default=S, help="fixed strength; searched on the grid when omitted")

    p = sub.add_parser("detect", help="decode a patchwork payload from a WAV file")
    p.add_argument("input")
    _add_patchwork(p)
    p.add_argument("--no-speed-search", action="store_true", default=S)

    p = sub.add_parser("search-strength", help="smallest grid strength that decodes on the clean signal")
    p.add_argument("input")
    _add_patchwork(p)

    p = sub.add_parser("augment", help="apply a test condition to a WAV file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--conditions", default=S, help="one of clean, stretch, noise, s+n")
    p.add_argument("--noise-manifest", default=S)

    p = sub.add_parser("eval", help="patchwork error rates under each condition")
    _add_patchwork(p)
    p.add_argument("--conditions", default=S, help="comma-separated condition list")
    p.add_argument("--rounds", type=int, default=S)
    p.add_argument("--manifest", default=S, help="JSONL manifest; its test split is evaluated")
    p.add_argument("--synthetic", type=int, default=S, help="evaluate N synthetic utterances instead")
    p.add_argument("--duration", type=float, default=S)
    p.add_argument("--sample-rate", type=int, default=S)
    p.add_argument("--noise-manifest", default=S)

    p = sub.add_parser("train-toy", help="train and evaluate the toy collaborative experiment")
    p.add_argument("--iterations", type=int, default=S)
    p.add_argument("--rounds", type=int, default=S)
    p.add_argument("--roles", default=S)
    p.add_argument("--augment", default=S, help="comma-separated subset of none, stretch+noise")
    p.add_argument("--batch-size", type=int, default=S)
    p.add_argument("--segment", type=int, default=S, help="training crop length in samples")
    p.add_argument("--n-utterances", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--wm-weight", type=float, default=S)
    p.add_argument("--checkpoint-every", type=int, default=S)
    p.add_argument("--resume", action="store_true", default=S)

    p = sub.add_parser("report", help="render per-round CSV reports as a table")
    p.add_argument("inputs", nargs="+", help="*_rounds.csv files")
    p.add_argument("--format", choices=("markdown", "csv"), default=S)

    for p in sub.choices.values():
        _add_common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the config file and explicit flags (in rising priority)."""
    resolved = {**COMMON_DEFAULTS, **DEFAULTS[args.command]}
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "command")}
    if args.config:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"config file is not valid JSON: {e}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
        unknown = set(file_cfg) - set(resolved) - set(flags)
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(sorted(unknown))}")
        resolved.update(file_cfg)
    resolved.update(flags)
    resolved["command"] = args.command
    resolved["config"] = args.config
    _validate(resolved)
    return resolved


def _validate(cfg: dict) -> None:
    if cfg.get("payload") is not None:
        try:
            pw.Payload.from_hex(cfg["payload"])
        except ValueError as e:
            raise UsageError(f"bad payload: {e}") from None
    if "grid_min" in cfg:
        try:
            _grid(cfg)
        except (ValueError, ZeroDivisionError) as e:
            raise UsageError(f"bad strength grid: {e}") from None
    if "conditions" in cfg:
        try:
            _conditions(cfg)
        except ValueError as e:
            raise UsageError(str(e)) from None
    for k in ("rounds", "jobs", "iterations", "batch_size"):
        if k in cfg and (not isinstance(cfg[k], int) or cfg[k] < (0 if k == "iterations" else 1)):
            raise UsageError(f"--{k.replace('_', '-')} must be a positive integer")


def _grid(cfg) -> pw.StrengthGrid:
    if cfg["grid_step"] <= 0 or cfg["grid_max"] < cfg["grid_min"]:
        raise ValueError("need grid-step > 0 and grid-max >= grid-min")
    return pw.StrengthGrid.linear(cfg["grid_min"], cfg["grid_max"], cfg["grid_step"])


def _conditions(cfg) -> tuple[Condition, ...]:
    names = cfg["conditions"]
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    if not names:
        raise ValueError("no conditions given")
    return tuple(Condition.parse(n.strip()) for n in names)


def _payload(cfg) -> pw.Payload:
    return pw.Payload.from_hex(cfg["payload"]) if cfg["payload"] else pw.Payload.random(cfg["key_seed"])


def _key(cfg) -> pw.WatermarkKey:
    return pw.WatermarkKey(cfg["key_seed"])


def _noise_corpus(cfg) -> NoiseCorpus | None:
    path = cfg.get("noise_manifest")
    return NoiseCorpus.from_jsonl(path) if path else None


def _write_sidecar(cfg: dict, path: str | None) -> None:
    text = json.dumps(cfg, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stderr.write("resolved config: " + json.dumps(cfg, sort_keys=True) + "\n")
        return
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _sidecar_path(cfg: dict, output: str | None = None) -> str | None:
    if cfg.get("out_dir"):
        return os.path.join(cfg["out_dir"], f"{cfg['command']}.config.json")
    if output:
        return output + ".config.json"
    return None


def _print_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_embed(cfg: dict) -> int:
    clip = load_wav(cfg["input"])
    payload, key = _payload(cfg), _key(cfg)
    if cfg["strength"] is not None:
        d = float(cfg["strength"])
    else:
        found = pw.search_strength(clip, payload, key, _grid(cfg))
        if not found.success:
            sys.stderr.write("strength search FAILED; embedding at the largest grid value\n")
        d = found.strength
    save_wav(pw.embed(clip, payload, key, d), cfg["output"])
    _print_json({"output": cfg["output"], "payload": payload.to_hex(), "strength": d})
    return EXIT_OK


def cmd_detect(cfg: dict) -> int:
    clip = load_wav(cfg["input"])
    reference = pw.Payload.from_hex(cfg["payload"]) if cfg["payload"] else None
    speeds = None if cfg["no_speed_search"] else pw.speed_grid(step=0.005)
    res = pw.detect(clip, _key(cfg), reference, speeds=speeds)
    _print_json({"payload": res.payload_hex, "valid": res.valid, "score": res.score,
                 "hard_decision": res.hard_decision, "speed": res.speed,
                 "per_bit_margin": [round(float(m), 9) for m in res.per_bit_margin]})
    return EXIT_OK


def cmd_search(cfg: dict) -> int:
    clip = load_wav(cfg["input"])
    found = pw.search_strength(clip, _payload(cfg), _key(cfg), _grid(cfg))
    sys.stdout.write(str(found) + "\n")
    return EXIT_OK


def cmd_augment(cfg: dict) -> int:
    conds = _conditions(cfg)
    if len(conds) != 1:
        raise UsageError("augment takes exactly one condition")
    clip = load_wav(cfg["input"])
    out = apply_condition(clip, conds[0], cfg["seed"], _noise_corpus(cfg))
    save_wav(out, cfg["output"])
    return EXIT_OK


def _eval_clips(cfg: dict) -> list[AudioClip]:
    from .collab.corpus import synth_toy_corpus
    from .manifest import CorpusManifest
    if cfg["manifest"]:
        manifest = CorpusManifest.from_jsonl(cfg["manifest"])
        base = os.path.dirname(os.path.abspath(cfg["manifest"]))
        paths = manifest.paths("test")
        if not paths:
            raise ValueError("manifest has no test records")
        return [load_wav(p if os.path.isabs(p) else os.path.join(base, p)) for p in paths]
    if cfg["synthetic"] > 0:
        clips, _ = synth_toy_corpus(cfg["synthetic"], cfg["duration"], cfg["sample_rate"], seed=cfg["seed"])
        return clips
    raise UsageError("eval needs --manifest or --synthetic N")


def cmd_eval(cfg: dict) -> int:
    from .metrics import evaluate_patchwork
    if not cfg["out_dir"]:
        raise UsageError("eval needs --out-dir")
    clips = _eval_clips(cfg)
    report = evaluate_patchwork(clips, _key(cfg), _grid(cfg), _conditions(cfg), cfg["rounds"], cfg["seed"],
                                _payload(cfg), _noise_corpus(cfg), jobs=cfg["jobs"])
    os.makedirs(cfg["out_dir"], exist_ok=True)
    report.write(os.path.join(cfg["out_dir"], "patchwork_report"))
    sys.stdout.write(report.to_markdown())
    return EXIT_OK


def _split_list(value) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()] if isinstance(value, str) else list(value)


def cmd_train_toy(cfg: dict) -> int:
    from .collab.losses import LossWeights, Role
    from .collab.train import TrainConfig, build_data, evaluate_state, train, write_log_csv
    if not cfg["out_dir"]:
        raise UsageError("train-toy needs --out-dir")
    try:
        roles = [Role.parse(r) for r in _split_list(cfg["roles"])]
    except ValueError as e:
        raise UsageError(str(e)) from None
    if Role.DISCRIMINATOR in roles:
        raise UsageError("roles must be collaborator and/or observer")
    augs = []
    for a in _split_list(cfg["augment"]):
        if a not in ("none", "stretch+noise"):
            raise UsageError(f"unknown augmentation {a!r}")
        augs.append(a == "stretch+noise")
    tcfg = TrainConfig(seed=cfg["seed"], iterations=cfg["iterations"], batch_size=cfg["batch_size"], lr=cfg["lr"],
                       segment=cfg["segment"],
                       n_utterances=cfg["n_utterances"], eval_rounds=cfg["rounds"],
                       weights=LossWeights(wm=cfg["wm_weight"]))
    os.makedirs(cfg["out_dir"], exist_ok=True)
    data = build_data(tcfg)
    report = None
    for augment in augs:
        for role in roles:
            run_cfg = TrainConfig(**{**tcfg.__dict__, "augment": augment})
            stem = os.path.join(cfg["out_dir"], f"{role.value}_{'aug' if augment else 'noaug'}")
            state = train(run_cfg, role, data=data, checkpoint=stem + ".npz",
                          checkpoint_every=cfg["checkpoint_every"], resume=cfg["resume"])
            write_log_csv(state.log, stem + "_log.csv")
            rep = evaluate_state(state, seed=cfg["seed"], jobs=cfg["jobs"])
            report = rep if report is None else report.merge(rep)
    report.write(os.path.join(cfg["out_dir"], "toy_report"))
    sys.stdout.write(report.to_markdown())
    return EXIT_OK


def cmd_report(cfg: dict) -> int:
    from .metrics import EvalReport
    report = None
    for path in cfg["inputs"]:
        with open(path) as fh:
            rep = EvalReport.from_rounds_csv(fh.read())
        report = rep if report is None else report.merge(rep)
    text = report.to_markdown() if cfg["format"] == "markdown" else report.to_csv()
    if cfg["out_dir"]:
        os.makedirs(cfg["out_dir"], exist_ok=True)
        with open(os.path.join(cfg["out_dir"], "report." + ("md" if cfg["format"] == "markdown" else "csv")), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"embed": cmd_embed, "detect": cmd_detect, "search-strength": cmd_search, "augment": cmd_augment,
            "eval": cmd_eval, "train-toy": cmd_train_toy, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        cfg = resolve_config(args)
        _write_sidecar(cfg, _sidecar_path(cfg, cfg.get("output")))
        return COMMANDS[args.command](cfg)
    except UsageError as e:
        sys.stderr.write(f"collabwm {args.command}: usage error: {e}\n")
        return EXIT_USAGE
    except FileNotFoundError as e:
        sys.stderr.write(f"collabwm {args.command}: error: file not found: {e.filename or e}\n")
        return EXIT_RUNTIME
    except (WavError, ValueError, FloatingPointError, OSError) as e:
        sys.stderr.write(f"collabwm {args.command}: error: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
