"""Command-line entry points binding the library into reproducible pipelines.

Exit codes are shared by every subcommand:

    0  success
    1  fatal error (unreadable input, bad schema, unwritable output)
    2  partial success (some per-item failures, run completed)
    3  validation failure (descriptor checks)

All randomness flows from the configured global seed, so any command rerun
with the same config reproduces byte-identical outputs; worker count only
changes wall time. Output artifacts embed the config hash and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import dataset, embed, evaluation, imaging, prompts, tensorio
from .errors import DomainBenchError

log = logging.getLogger("domainbench")

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2
EXIT_VALIDATION = 3


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _setup_logging(quiet: bool, verbose: bool) -> None:
    level = logging.ERROR if quiet else (logging.DEBUG if verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


@dataclass
class RunConfig:
    """Synthesis run configuration; see docs/config-schema.md."""

    annotations: str
    image_root: str
    out: str
    seed: int = 0
    workers: int = 1
    per_domain_count: int = 10
    domains: list = field(default_factory=list)
    exclude: str | None = None

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise DomainBenchError(f"unknown config keys: {sorted(unknown)}")
        missing = {"annotations", "image_root", "out"} - set(doc)
        if missing:
            raise DomainBenchError(f"config misses required keys: {sorted(missing)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {
            "annotations": self.annotations,
            "image_root": self.image_root,
            "out": self.out,
            "seed": self.seed,
            "workers": self.workers,
            "per_domain_count": self.per_domain_count,
            "domains": self.domains,
            "exclude": self.exclude,
        }


def _domain_specs(entries) -> list[tuple[str, object]]:
    specs: list[tuple[str, object]] = []
    for entry in entries:
        tag = entry["tag"]
        if "style_dir" in entry:
            specs.append((tag, dataset.StyleIngest(entry["style_dir"])))
        elif "preset" in entry:
            specs.append((tag, imaging.DegradationSpec.from_preset(entry["preset"])))
        else:
            specs.append((tag, imaging.DegradationSpec(kind=entry["kind"], params=entry.get("params", {}))))
    return specs


def _read_exclude(path) -> set[int]:
    with open(path, encoding="utf-8") as fh:
        return {int(line.strip()) for line in fh if line.strip()}


def cmd_synth(args) -> int:
    try:
        cfg = RunConfig.from_file(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.out is not None:
            cfg.out = args.out
        if args.preset:
            cfg.domains = [{"tag": name, "preset": name} for name in args.preset]

        exclude = _read_exclude(cfg.exclude) if cfg.exclude else None
        anns, table = dataset.load_annotations(cfg.annotations, exclude_image_ids=exclude)
        specs = _domain_specs(cfg.domains)
        out_dir = Path(cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.touch()
        probe.unlink()

        manifest = dataset.amplify(
            anns,
            table,
            specs,
            per_domain_count=cfg.per_domain_count,
            out_dir=out_dir,
            seed=cfg.seed,
            image_root=cfg.image_root,
            workers=cfg.workers,
            config_hash=config_hash(cfg.to_dict()),
            source_name=str(cfg.annotations),
        )
    except (DomainBenchError, OSError, json.JSONDecodeError, KeyError) as exc:
        log.error("synth failed: %s", exc)
        return EXIT_FATAL

    for record in manifest.domains:
        print(f"domain {record.tag:<24} {len(record.images):6d} images -> {record.out_dir}")
    print(f"total {manifest.m_output_images} images, {len(manifest.gaps)} gaps, seed {manifest.global_seed}")
    return EXIT_PARTIAL if manifest.gaps else EXIT_OK


def cmd_eval(args) -> int:
    try:
        dets = evaluation.load_detections(args.predictions)
        anns, table = dataset.load_annotations(args.annotations)
        cfg = evaluation.EvalConfig(federated=args.federated, max_detections=args.max_detections)
        if args.manifest:
            manifest = dataset.DatasetManifest.load(args.manifest)
            report = evaluation.evaluate_per_domain(dets, manifest, anns, table, cfg)
        else:
            report = evaluation.evaluate(dets, anns, table, cfg)
    except (DomainBenchError, OSError) as exc:
        log.error("eval failed: %s", exc)
        return EXIT_FATAL

    doc = report.to_dict()
    doc["config_hash"] = config_hash(
        {"predictions": args.predictions, "federated": args.federated, "max_detections": args.max_detections}
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    table_text = report.format_table()
    (out_dir / "report.txt").write_text(table_text + "\n", encoding="utf-8")
    print(table_text)
    return EXIT_OK


def cmd_fuse(args) -> int:
    try:
        params = embed.FusionParams.load(args.params)
        maps = [tensorio.read_tensor(p) for p in args.features]
        cats = tensorio.read_tensor(args.categories)
        roi = tensorio.read_tensor(args.roi) if args.roi else None
        perturb = None
        if args.mode == "train":
            perturb = embed.PerturbationSpec(strength=args.strength, seed=args.seed)
        result = embed.pipeline(maps, cats, params, roi_feature=roi, perturb=perturb, target_index=args.target)
    except (DomainBenchError, OSError) as exc:
        log.error("fuse failed: %s", exc)
        return EXIT_FATAL

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensorio.write_tensor(out_dir / "grafted.tnsr", result.grafted)
    tensorio.write_tensor(out_dir / "domain_embedding.tnsr", result.domain_embedding)
    report = {
        "mode": args.mode,
        "seed": args.seed,
        "strength": args.strength if args.mode == "train" else None,
        "config_hash": config_hash(
            {"features": args.features, "categories": args.categories, "params": args.params,
             "mode": args.mode, "seed": args.seed, "strength": args.strength}
        ),
        "orthogonality_loss": result.orthogonality,
        "contrastive_loss": result.contrastive,
        "prediction": result.prediction,
        "scores": None if result.scores is None else [float(s) for s in result.scores],
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    print(f"grafted {result.grafted.shape[0]} embeddings (dim {result.grafted.shape[1]}) -> {out_dir}")
    if result.prediction is not None:
        print(f"prediction: category index {result.prediction}")
    return EXIT_OK


def cmd_prompts(args) -> int:
    try:
        if args.action == "render":
            for d in prompts.load_descriptors(args.descriptors):
                print(prompts.render_prompt(d, verb=args.verb))
            return EXIT_OK

        if args.action == "validate":
            failures = 0
            for d in prompts.load_descriptors(args.descriptors):
                report = prompts.validate(d)
                status = "ok" if report.passed else "FAIL"
                print(f"{d.category:<24} {status}")
                for v in report.violations:
                    print(f"    {v.rule}: {v.text}")
                failures += 0 if report.passed else 1
            return EXIT_VALIDATION if failures else EXIT_OK

        # generate
        categories = args.categories.split(",") if args.categories else []
        if args.backend == "remote":
            import os

            with open(args.backend_config, encoding="utf-8") as fh:
                bc = json.load(fh)
            key = os.environ.get(bc.get("credential_env", "DOMAINBENCH_LLM_API_KEY"), "")
            backend = prompts.RemoteBackend(url=bc["url"], model=bc.get("model", ""), api_key=key)
        else:
            backend = prompts.OfflineFixtureBackend(args.fixtures)
        results = prompts.generate_descriptors(categories, backend=backend)
        good = [r.descriptor for r in results if r.ok]
        if args.out:
            prompts.save_descriptors(good, args.out)
        errors = invalid = 0
        for r in results:
            if r.error is not None:
                errors += 1
                print(f"{r.category:<24} ERROR {r.error}")
            elif not r.report.passed:
                invalid += 1
                print(f"{r.category:<24} FAIL " + "; ".join(f"{v.rule}: {v.text}" for v in r.report.violations))
            else:
                print(f"{r.category:<24} ok")
        if invalid:
            return EXIT_VALIDATION
        return EXIT_PARTIAL if errors else EXIT_OK
    except (DomainBenchError, OSError, KeyError, json.JSONDecodeError) as exc:
        log.error("prompts %s failed: %s", args.action, exc)
        return EXIT_FATAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="domainbench", description=__doc__)
    parser.add_argument("--quiet", action="store_true", help="errors only (CI mode)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="amplify a source dataset into degraded domains")
    p.add_argument("--config", required=True, help="run config JSON (docs/config-schema.md)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--workers", type=int, default=None, help="override the worker count")
    p.add_argument("--out", default=None, help="override the output root")
    p.add_argument("--preset", action="append", default=None, help="replace domains with named presets")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score detection predictions")
    p.add_argument("--predictions", required=True, help="COCO-results-style JSON")
    p.add_argument("--annotations", required=True, help="LVIS-schema annotation JSON")
    p.add_argument("--manifest", default=None, help="dataset manifest for per-domain breakdowns")
    p.add_argument("--out", required=True, help="directory for report.json / report.txt")
    p.add_argument("--federated", type=lambda s: s.lower() in ("1", "true", "yes"), default=True)
    p.add_argument("--max-detections", type=int, default=300)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="run the embedding fusion pipeline on tensor files")
    p.add_argument("--features", nargs="+", required=True, help="per-layer feature-map containers")
    p.add_argument("--categories", required=True, help="category embedding container (G x d)")
    p.add_argument("--params", required=True, help="fusion parameter bundle")
    p.add_argument("--roi", default=None, help="RoI feature container for losses/classification")
    p.add_argument("--mode", choices=("train", "test"), default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strength", type=float, default=0.0, help="perturbation strength (train mode)")
    p.add_argument("--target", type=int, default=None, help="category index for the contrastive loss")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("prompts", help="render, validate, or generate category descriptors")
    p.add_argument("action", choices=("render", "validate", "generate"))
    p.add_argument("--descriptors", default=None, help="descriptor JSON (render/validate)")
    p.add_argument("--verb", choices=("has", "is"), default="is")
    p.add_argument("--categories", default=None, help="comma-separated category names (generate)")
    p.add_argument("--backend", choices=("offline", "remote"), default="offline")
    p.add_argument("--fixtures", default=None, help="override the offline fixture file")
    p.add_argument("--backend-config", default=None, help="remote endpoint config JSON")
    p.add_argument("--out", default=None, help="write generated descriptors here")
    p.set_defaults(func=cmd_prompts)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.quiet, args.verbose)
    return args.func(args)


def entrypoint() -> None:
    sys.exit(main())
