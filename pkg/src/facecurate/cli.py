"""Command-line entry points.

Subcommands: ``clean`` (iterative corpus cleaning), ``evaluate``
(slice FNMR, fairness, latency tracks), ``gen-synth`` (labeled synthetic
corpora), ``dedup`` (duplicate and test-overlap removal only), and
``stats`` (similarity histograms). Exit codes: 0 success, 1 internal
error, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
import traceback
from pathlib import Path

import numpy as np

from facecurate import cast, dedup, fruits, merge, stats, synth
from facecurate.corpus import Corpus, load_corpus, write_corpus
from facecurate.errors import CurationError

EXIT_INTERNAL = 1
EXIT_DATA = 3


def _add_corpus_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="corpus manifest (TSV)")
    p.add_argument("--embeddings", required=True, help="embedding file")


def _add_exclusion_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--exclusion-manifest", help="test-set exclusion manifest")
    p.add_argument("--exclusion-embeddings", help="test-set exclusion embeddings")


def _load_exclusion(args: argparse.Namespace) -> merge.CenterIndex | None:
    if bool(args.exclusion_manifest) != bool(args.exclusion_embeddings):
        raise CurationError(
            "--exclusion-manifest and --exclusion-embeddings go together"
        )
    if not args.exclusion_manifest:
        return None
    return merge.load_center_index(args.exclusion_manifest, args.exclusion_embeddings)


def _write_corpus_files(corpus: Corpus, out: Path) -> None:
    write_corpus(corpus, out / "manifest.tsv", out / "embeddings.emb")


def _print_stages(stages: list[stats.StageStats]) -> None:
    for st in stages:
        print(
            f"{st.stage}: identities {st.identities_before} -> "
            f"{st.identities_after}, faces {st.faces_before} -> {st.faces_after}"
        )


def cmd_clean(args: argparse.Namespace) -> int:
    config = (
        cast.CastConfig.from_file(args.config) if args.config else cast.CastConfig()
    )
    corpus = load_corpus(args.manifest, args.embeddings)
    exclusion = _load_exclusion(args)
    if args.provider_embeddings:
        provider: cast.EmbeddingProvider = cast.FileProvider(args.provider_embeddings)
    else:
        provider = cast.StaticProvider()
    result = cast.run_cast(
        corpus, provider, config, exclusion=exclusion, workers=args.workers
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_corpus_files(result.corpus, out)
    stats.write_stage_stats(result.stages, out / "stage_stats.tsv")
    for i, plan in enumerate(result.merge_plans, start=1):
        merge.write_merge_plan(plan, out / f"merge_plan_iter{i}.tsv")
    stats.write_stage_histograms(result.stages, out / "histograms")
    _print_stages(result.stages)
    print(
        f"cleaned corpus: {result.corpus.num_identities} identities, "
        f"{result.corpus.num_faces} faces -> {out}"
    )
    return 0


def cmd_dedup(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.manifest, args.embeddings)
    exclusion = _load_exclusion(args)
    cleaned, stage = dedup.remove_duplicates(
        corpus, args.threshold, workers=args.workers
    )
    stages = [stage]
    if exclusion is not None:
        cleaned, overlap_stage = dedup.remove_test_overlap(
            cleaned, exclusion, args.overlap_threshold
        )
        stages.append(overlap_stage)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_corpus_files(cleaned, out)
    stats.write_stage_stats(stages, out / "stage_stats.tsv")
    _print_stages(stages)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.manifest, args.embeddings)
    st = cast.similarity_distributions(
        corpus, sample_folders=args.sample_folders, seed=args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stats.write_stage_histograms([st], out)
    overlap = stats.histogram_overlap(st.intra_hist, st.inter_hist)
    summary = [
        f"identities\t{corpus.num_identities}",
        f"faces\t{corpus.num_faces}",
        f"dim\t{corpus.dim}",
        f"intra_inter_overlap\t{overlap:.6f}",
    ]
    (out / "stats.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    for line in summary:
        print(line.replace("\t", ": "))
    return 0


def cmd_gen_synth(args: argparse.Namespace) -> int:
    spec = synth.SynthSpec(
        n_identities=args.identities,
        faces_per_identity=(args.faces_min, args.faces_max),
        dim=args.dim,
        test_identities=args.test_identities,
        seed=args.seed,
    )
    corpus, truth = synth.generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_corpus_files(corpus, out)
    synth.write_ground_truth(truth, out / "truth.tsv")
    merge.write_center_index(
        truth.exclusion_index,
        out / "exclusion_manifest.tsv",
        out / "exclusion_embeddings.emb",
    )
    if args.provider_scales:
        scales = tuple(float(s) for s in args.provider_scales.split(","))
        written = load_corpus(out / "manifest.tsv", out / "embeddings.emb")
        provider = synth.ShrinkingNoiseProvider(truth, scales, seed=args.seed)
        for i in range(1, len(scales) + 1):
            provider.provide(i, written).save(out / f"provider_iter{i}.emb")
    print(
        f"generated {corpus.num_identities} identities, "
        f"{corpus.num_faces} faces, dim {corpus.dim} -> {out}"
    )
    return 0


def _fairness_from_file(path: str) -> dict[str, dict[str, float]]:
    groups: dict[str, dict[str, float]] = {}
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CurationError(
                f"{path}:{lineno}: expected attribute<TAB>group<TAB>fnmr"
            )
        attr, group, raw = parts
        try:
            fnmr = float(raw)
        except ValueError:
            raise CurationError(f"{path}:{lineno}: bad FNMR value {raw!r}") from None
        groups.setdefault(attr, {})[group] = fnmr
    return groups


def _fairness_section(fnmr_by_group: dict[str, float]) -> dict:
    gm = fruits.fairness_metrics(fnmr_by_group)
    return {
        "groups": gm.fnmr_by_group,
        "avg": gm.avg,
        "std": gm.std,
        "ser": gm.ser,
    }


def _corpus_groups(corpus: Corpus, attribute: str) -> list[str]:
    values = set()
    for rec in corpus.faces.values():
        v = getattr(rec.attributes, attribute)
        if v is not None:
            values.add(v.value)
    return sorted(values)


def cmd_evaluate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.manifest, args.embeddings)
    report: dict = {
        "corpus": {
            "identities": corpus.num_identities,
            "faces": corpus.num_faces,
            "dim": corpus.dim,
        },
        "target_fmr": args.fmr,
    }
    slices = {}
    probe_pool: np.ndarray | None = None
    for name in [s.strip() for s in args.slices.split(",") if s.strip()]:
        proto = fruits.build_protocol(
            corpus, name, seed=args.seed, impostor_cap=args.impostor_cap
        )
        if probe_pool is None and proto.genuine.shape[0]:
            probe_pool = proto.genuine
        entry: dict = {
            "genuine_pairs": int(proto.genuine.shape[0]),
            "impostor_pairs": int(proto.impostor.shape[0]),
        }
        try:
            scores = fruits.score_protocol(corpus, proto, workers=args.workers)
            fnmr, threshold = fruits.fnmr_at_fmr(scores, args.fmr)
            entry["fnmr"] = fnmr
            entry["threshold"] = threshold
        except CurationError as exc:
            entry["error"] = str(exc)
        slices[name] = entry
    report["slices"] = slices

    fairness: dict = {}
    if args.group_fnmr_file:
        for attr, groups in sorted(_fairness_from_file(args.group_fnmr_file).items()):
            try:
                fairness[attr] = _fairness_section(groups)
            except CurationError as exc:
                fairness[attr] = {"error": str(exc)}
    else:
        for attr in [a.strip() for a in args.fairness.split(",") if a.strip()]:
            if attr not in ("race", "gender"):
                raise CurationError(
                    f"unsupported fairness attribute {attr!r}; "
                    f"expected race or gender"
                )
            groups: dict[str, float] = {}
            failed = None
            for value in _corpus_groups(corpus, attr):
                proto = fruits.build_protocol(
                    corpus,
                    f"{attr}:{value}",
                    seed=args.seed,
                    impostor_cap=args.impostor_cap,
                )
                try:
                    scores = fruits.score_protocol(
                        corpus, proto, workers=args.workers
                    )
                    groups[value], _ = fruits.fnmr_at_fmr(scores, args.fmr)
                except CurationError as exc:
                    failed = f"group {value!r}: {exc}"
                    break
            if failed:
                fairness[attr] = {"error": failed}
            else:
                try:
                    fairness[attr] = _fairness_section(groups)
                except CurationError as exc:
                    fairness[attr] = {"error": str(exc)}
    if fairness:
        report["fairness"] = fairness

    if args.track:
        budget = fruits.TimeBudget.from_track(args.track, flip=args.flip)
        if args.matcher:
            matcher: fruits.Matcher = fruits.CommandMatcher(
                shlex.split(args.matcher),
                timeout_s=10.0 * budget.budget_ms * budget.batch_size / 1000.0 + 5.0,
            )
        else:
            matcher = fruits.EmbeddingMatcher(corpus)
        res = fruits.measure_latency(
            matcher, args.probe_pairs, budget, pairs=probe_pool
        )
        report["latency"] = {
            "track": res.track,
            "budget_ms": res.budget_ms,
            "flip": res.flip,
            "batch_size": res.batch_size,
            "invocations": res.invocations,
            "median_ms_per_pair": res.median_ms_per_pair,
            "passed": res.passed,
        }

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    text = _render_report(report)
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _render_report(report: dict) -> str:
    lines = []
    c = report["corpus"]
    lines.append(
        f"corpus: {c['identities']} identities, {c['faces']} faces, dim {c['dim']}"
    )
    lines.append(f"target FMR: {report['target_fmr']:.1e}")
    lines.append("")
    lines.append(
        f"{'slice':<20}{'genuine':>10}{'impostor':>12}{'FNMR':>10}{'threshold':>12}"
    )
    for name, entry in report["slices"].items():
        if "error" in entry:
            lines.append(
                f"{name:<20}{entry['genuine_pairs']:>10}"
                f"{entry['impostor_pairs']:>12}  unavailable: {entry['error']}"
            )
        else:
            lines.append(
                f"{name:<20}{entry['genuine_pairs']:>10}"
                f"{entry['impostor_pairs']:>12}{entry['fnmr']:>10.4f}"
                f"{entry['threshold']:>12.6f}"
            )
    for attr, section in report.get("fairness", {}).items():
        lines.append("")
        lines.append(f"fairness over {attr}")
        if "error" in section:
            lines.append(f"  unavailable: {section['error']}")
            continue
        for group, fnmr in section["groups"].items():
            lines.append(f"  {group:<16}{fnmr:.4f}")
        lines.append(
            f"  Avg {section['avg']:.4f}  STD {section['std']:.4f}  "
            f"SER {section['ser']:.2f}"
        )
    if "latency" in report:
        lat = report["latency"]
        lines.append("")
        lines.append(
            f"latency {lat['track']} (budget {lat['budget_ms']:.0f} ms/pair, "
            f"batch {lat['batch_size']})"
        )
        verdict = "PASS" if lat["passed"] else "FAIL"
        lines.append(
            f"  invocations {lat['invocations']}, median "
            f"{lat['median_ms_per_pair']:.1f} ms/pair -> {verdict}"
        )
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facecurate",
        description="Embedding-corpus cleaning and 1:1 verification evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("clean", help="run the iterative cleaning pipeline")
    _add_corpus_args(p)
    _add_exclusion_args(p)
    p.add_argument("--provider-embeddings", help="per-iteration embedding pattern, {i} = iteration")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("dedup", help="remove duplicates and test overlap only")
    _add_corpus_args(p)
    _add_exclusion_args(p)
    p.add_argument("--threshold", type=float, default=dedup.DUPLICATE_THRESHOLD)
    p.add_argument(
        "--overlap-threshold", type=float, default=dedup.OVERLAP_THRESHOLD
    )
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("stats", help="write similarity histograms")
    _add_corpus_args(p)
    p.add_argument("--sample-folders", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gen-synth", help="generate a labeled synthetic corpus")
    p.add_argument("--identities", type=int, default=1000)
    p.add_argument("--faces-min", type=int, default=8)
    p.add_argument("--faces-max", type=int, default=24)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--test-identities", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--provider-scales",
        help="comma list of per-iteration noise scales; writes provider_iter{i}.emb",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("evaluate", help="slice FNMR, fairness, latency tracks")
    _add_corpus_args(p)
    p.add_argument("--slices", default="all", help="comma list of slice names")
    p.add_argument("--fmr", type=float, default=fruits.DEFAULT_TARGET_FMR)
    p.add_argument(
        "--impostor-cap", type=int, default=fruits.DEFAULT_IMPOSTOR_CAP
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--fairness",
        default="",
        help="comma list of grouping attributes (race, gender)",
    )
    p.add_argument(
        "--group-fnmr-file",
        help="TSV of attribute<TAB>group<TAB>fnmr; fairness from these "
        "published per-group FNMRs instead of corpus slices",
    )
    p.add_argument("--track", choices=sorted(fruits.TRACKS), help="latency track")
    p.add_argument("--flip", action="store_true", help="two-pair flip batches")
    p.add_argument("--matcher", help="external matcher command (shell-quoted)")
    p.add_argument("--probe-pairs", type=int, default=30)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        name = f" {exc.filename!r}" if getattr(exc, "filename", None) else ""
        print(f"error: cannot access{name}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
