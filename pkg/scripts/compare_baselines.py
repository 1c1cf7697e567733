"""Score the rule+smoothing pipeline against zero and white-noise baselines.

    python scripts/compare_baselines.py [--corpus corpus] [--out out/baselines] [--seed 42]

Prints one table row per system with corpus-mean metrics.
"""

import argparse
import json
import shutil
from pathlib import Path

from audio2arkit import pipeline
from audio2arkit.baselines import BASELINES, write_baseline
from audio2arkit.config import config_from_dict

ROOT = Path(__file__).resolve().parents[1]
KEYS = ("mse", "mae", "fd", "wind_mean", "wind_std")


def run(corpus: Path, out: Path, seed: int = 42) -> dict[str, dict]:
    """Corpus-mean metrics for ``pipeline`` and each baseline."""
    if out.exists():
        shutil.rmtree(out)
    base = {"paths": {"corpus": str(corpus), "output": str(out / "pipeline")}, "metrics": {"seed": seed}}
    config = config_from_dict(base, ROOT)
    for cmd in (pipeline.cmd_build_units, pipeline.cmd_generate, pipeline.cmd_smooth, pipeline.cmd_eval):
        res = cmd(config)
        if res.exit_code:
            raise SystemExit(f"{cmd.__name__} failed: {res.failures}")
    manifest = out / "pipeline" / "manifest.jsonl"
    results = {"pipeline": _mean(out / "pipeline")}
    schema = pipeline.schema_of(config)
    for kind in BASELINES:
        cfg = config_from_dict({**base, "paths": {"corpus": str(corpus), "output": str(out / kind)}}, ROOT)
        write_baseline(kind, out / "pipeline" / "smoothed", out / kind / "pred", schema, seed, config.fps)
        res = pipeline.cmd_eval(cfg, pred_dir=out / kind / "pred", manifest=manifest)
        if res.exit_code:
            raise SystemExit(f"eval {kind} failed: {res.failures}")
        results[kind] = _mean(out / kind)
    return results


def _mean(output: Path) -> dict:
    return json.loads((output / "reports" / "summary.json").read_text("utf-8"))["mean"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus", type=Path, default=ROOT / "corpus")
    ap.add_argument("--out", type=Path, default=ROOT / "out" / "baselines")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()
    results = run(args.corpus, args.out, args.seed)
    print(f"{'system':<10}" + "".join(f"{k:>12}" for k in KEYS))
    for name, m in results.items():
        print(f"{name:<10}" + "".join(f"{m[k]:>12.6f}" for k in KEYS))


if __name__ == "__main__":
    main()
