"""`probegeom-extract` command line. Exit codes follow the engine: 0 success,
1 invalid input or usage, 2 failure while running the model."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from . import formats
from .formats import DumpRecord, ValidationError
from .paraphrase import Row, paraphrase_rows


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_rows(path: Path, paraphrase: bool) -> List[Row]:
    try:
        rows = [Row.from_json(d) for d in formats.read_jsonl(path)]
    except OSError as e:
        raise ValidationError(f"{path}: {e}") from e
    except (ValueError, TypeError) as e:
        raise ValidationError(f"{path}: {e}") from e
    if not rows:
        raise ValidationError(f"{path}: no rows")
    return paraphrase_rows(rows) if paraphrase else rows


def record_ids(rows: List[Row]) -> List[int]:
    """Explicit ids where every row has one, otherwise 0..n in file order."""
    if all(r.record_id is not None for r in rows):
        return [r.record_id for r in rows]
    return list(range(len(rows)))


def parse_layers(value: str, n_blocks: int) -> List[int]:
    if value == "all":
        return list(range(n_blocks))
    try:
        layers = sorted({int(p) for p in value.split(",") if p.strip()})
    except ValueError as e:
        raise ValidationError(f"--layers: {e}") from e
    if not layers:
        raise ValidationError("--layers: empty list")
    return layers


def report(errors) -> None:
    for i, msg in errors:
        print(f"row {i}: {msg}", file=sys.stderr)


def cmd_extract(a) -> None:
    from . import model as m

    rows = read_rows(a.rows, a.paraphrase)
    ids = record_ids(rows)
    net, encode, _, _ = m.load(a.model, a.device)
    layers = parse_layers(a.layers, len(m.blocks(net)))
    ex = m.last_token_states(net, encode, rows, layers, position=a.position, batch_size=a.batch_size, device=a.device)
    report(ex.errors)
    records = [
        DumpRecord(
            record_id=ids[i],
            group_id=rows[i].group_id,
            label=rows[i].label,
            paraphrase_id=rows[i].paraphrase_id,
            dataset_tag=rows[i].dataset_tag,
            answer_length=n,
            text=f"{rows[i].question}{m.SEP}{rows[i].answer}" if a.keep_text else None,
        )
        for i, n in zip(ex.kept, ex.answer_lengths)
    ]
    manifest = formats.write_dump(
        a.out, records, ex.states, model_tag=a.model_tag or a.model,
        num_layers=len(m.blocks(net)), contrastive=a.contrastive,
    )
    print(f"wrote {manifest['num_records']} records x {len(layers)} layers to {a.out}")


def cmd_steer_generate(a) -> None:
    bundle = formats.read_bundle(a.bundle)
    prompts = formats.read_jsonl(a.prompts)
    if not prompts or any("item" not in p or "prompt" not in p for p in prompts):
        raise ValidationError(f"{a.prompts}: every row needs item and prompt")
    items = [int(p["item"]) for p in prompts]
    a.out.mkdir(parents=True, exist_ok=True)
    if a.model:
        from . import model as m

        net, encode, decode, eos = m.load(a.model, a.device)
        gens = m.steer_generate(net, encode, decode, bundle, prompts,
                                max_new_tokens=a.max_new_tokens, eos=eos, device=a.device)
        formats.write_jsonl(a.out / "generations.jsonl", gens)
        print(f"wrote {len(gens)} generations to {a.out / 'generations.jsonl'}")
    elif not a.judged:
        raise UsageError("give --model to generate, --judged to build an outcome, or both")
    if a.judged:
        rows = formats.outcome_rows(formats.read_jsonl(a.judged), bundle, items)
        formats.write_outcome(a.out / "outcome.jsonl", rows)
        print(f"wrote {len(rows)} outcome rows to {a.out / 'outcome.jsonl'}")


def cmd_baselines(a) -> None:
    from . import model as m

    rows = read_rows(a.rows, a.paraphrase)
    ids = record_ids(rows)
    net, encode, _, _ = m.load(a.model, a.device)
    scores, errors = m.output_baselines(net, encode, rows, a.device)
    report(errors)
    out = [{"record_id": ids[i], **s} for i, s in enumerate(scores) if s is not None]
    if not out:
        raise ValidationError("every row failed")
    formats.write_baselines(a.out, out)
    print(f"wrote {len(out)} rows to {a.out}")


def parser() -> Parser:
    p = Parser(prog="probegeom-extract", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", parser_class=Parser)

    def common(s):
        s.add_argument("--model", help="hub id or local directory")
        s.add_argument("--device", default="cpu")

    e = sub.add_parser("extract", help="write an activation dump")
    common(e)
    e.add_argument("--rows", type=Path, required=True, help="JSONL of question, answer, label, group_id")
    e.add_argument("--out", type=Path, required=True)
    e.add_argument("--layers", default="all", help="'all' or comma-separated block indices")
    e.add_argument("--position", choices=["answer", "question"], default="answer",
                   help="read the last answer token or the last question token")
    e.add_argument("--batch-size", type=int, default=8)
    e.add_argument("--paraphrase", action="store_true", help="expand each row into 5 templated variants")
    e.add_argument("--model-tag")
    e.add_argument("--contrastive", action="store_true", help="every group holds both labels")
    e.add_argument("--keep-text", action="store_true", help="store question and answer in meta.jsonl")
    e.set_defaults(fn=cmd_extract, needs_model=True)

    g = sub.add_parser("steer-generate", help="greedy generations under each steering direction")
    common(g)
    g.add_argument("--bundle", type=Path, required=True)
    g.add_argument("--prompts", type=Path, required=True, help="JSONL of item, prompt")
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--max-new-tokens", type=int, default=32)
    g.add_argument("--judged", type=Path, help="JSONL of item, direction, alpha, correct")
    g.set_defaults(fn=cmd_steer_generate, needs_model=False)

    b = sub.add_parser("baselines", help="P(True), answer NLL and token entropy per record")
    common(b)
    b.add_argument("--rows", type=Path, required=True)
    b.add_argument("--out", type=Path, required=True, help="CSV path")
    b.add_argument("--paraphrase", action="store_true")
    b.set_defaults(fn=cmd_baselines, needs_model=True)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    p = parser()
    try:
        a = p.parse_args(argv)
        if a.command is None:
            raise UsageError("missing command")
        if a.needs_model and not a.model:
            raise UsageError("--model is required")
        if getattr(a, "batch_size", 1) < 1 or getattr(a, "max_new_tokens", 1) < 1:
            raise UsageError("sizes must be positive")
        a.fn(a)
    except UsageError as e:
        p.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValidationError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0
