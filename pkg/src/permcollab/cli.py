"""Command-line surface for the whole pipeline.

Subcommands: keygen-config, encrypt, serve, upload, fetch-model,
verify-roundtrip, export-png, embed-check, cost.  Every subcommand accepts
`--format json` for scripting; all flags are validated before any side
effect.  The master secret for `encrypt` comes from `--secret-file`, the
PERMCOLLAB_MASTER_SECRET environment variable (64 hex chars), or `--seed`
for replayable demo runs, in that precedence order.  No subcommand ever
writes key material anywhere except the explicit `--keys` cache path.

Exit codes: 0 success, 1 operational failure (mismatch, protocol error,
failed check), 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import block_cipher, dataset_io, embed_check, key_schedule, perm_core
from .collab_proto import client as proto_client
from .collab_proto import cost as proto_cost
from .collab_proto.server import CollabServer
from .collab_proto.transport import TcpEndpoint, connect_tcp
from .errors import PermCollabError, ValidationError

SECRET_ENV = "PERMCOLLAB_MASTER_SECRET"
CHANNELS = 3


def _emit(args, payload: dict) -> None:
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValidationError(f"endpoint must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _geometry(p: int, side: int) -> tuple[int, int]:
    if p < 1 or side < 1:
        raise ValidationError("block size and image side must be positive")
    if side % p:
        raise ValidationError(f"block size {p} does not divide image side {side}")
    return (side // p) ** 2, p * p * CHANNELS


def _specs(args, n_blocks: int, l_vec: int):
    if not 0 <= args.nbs <= n_blocks:
        raise ValidationError(f"--nbs must be in [0, {n_blocks}], got {args.nbs}")
    if not 0 <= args.nps <= l_vec:
        raise ValidationError(f"--nps must be in [0, {l_vec}], got {args.nps}")
    return perm_core.RestrictionSpec(n_blocks, args.nbs), perm_core.RestrictionSpec(l_vec, args.nps)


def _resolve_secret(args) -> bytes:
    if getattr(args, "secret_file", None):
        raw = Path(args.secret_file).read_bytes().strip()
        if len(raw) == key_schedule.MASTER_SECRET_BYTES:
            return bytes(raw)
        try:
            secret = bytes.fromhex(raw.decode("ascii"))
        except (UnicodeDecodeError, ValueError):
            raise ValidationError(
                f"secret file must hold {key_schedule.MASTER_SECRET_BYTES} raw bytes or their hex form"
            ) from None
        if len(secret) != key_schedule.MASTER_SECRET_BYTES:
            raise ValidationError(f"secret file decodes to {len(secret)} bytes, expected 32")
        return secret
    env = os.environ.get(SECRET_ENV)
    if env:
        try:
            secret = bytes.fromhex(env)
        except ValueError:
            raise ValidationError(f"{SECRET_ENV} must be 64 hex characters") from None
        if len(secret) != key_schedule.MASTER_SECRET_BYTES:
            raise ValidationError(f"{SECRET_ENV} decodes to {len(secret)} bytes, expected 32")
        return secret
    if getattr(args, "seed", None) is not None:
        return key_schedule.master_secret_from_seed(args.seed)
    raise ValidationError(
        f"no master secret: pass --secret-file, set {SECRET_ENV}, or use --seed"
    )


def _restriction_type(n_fixed: int, n: int) -> str:
    if n_fixed == n:
        return "identity"
    return "partial" if n_fixed else "unrestricted"


# -- subcommand handlers -----------------------------------------------------


def _cmd_keygen_config(args) -> int:
    n_blocks, l_vec = _geometry(args.p, args.side)
    spec_bs, spec_ps = _specs(args, n_blocks, l_vec)
    payload = {
        "p": args.p,
        "side": args.side,
        "n_blocks": n_blocks,
        "l_vec": l_vec,
        "nbs_fixed": args.nbs,
        "nps_fixed": args.nps,
        "block_restriction": _restriction_type(args.nbs, n_blocks),
        "pixel_restriction": _restriction_type(args.nps, l_vec),
        "keyspace_block": perm_core.keyspace_size(spec_bs),
        "keyspace_pixel": perm_core.keyspace_size(spec_ps),
        "keyspace_total": perm_core.keyspace_size(spec_bs) * perm_core.keyspace_size(spec_ps),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        payload["written"] = str(args.out)
    _emit(args, payload)
    return 0


def _cmd_encrypt(args) -> int:
    secret = _resolve_secret(args)
    n_blocks, l_vec = _geometry(args.p, args.side)
    spec_bs, spec_ps = _specs(args, n_blocks, l_vec)
    ds = dataset_io.ingest_cifar10(args.in_path, split=args.split)
    if args.limit is not None:
        if args.limit < 1:
            raise ValidationError("--limit must be >= 1")
        ds = dataset_io.PlainDataset(ds.images[: args.limit], ds.labels[: args.limit])

    def ctx_factory(image_id: int) -> key_schedule.KeyDerivationContext:
        return key_schedule.KeyDerivationContext(secret, args.client_id, image_id, args.epoch)

    result = dataset_io.encrypt_dataset(
        ds,
        ctx_factory,
        spec_bs,
        spec_ps,
        args.p,
        out_dir=args.out,
        side=args.side,
        epoch=args.epoch,
        client_id=args.client_id,
        keys_path=args.keys,
    )
    payload = {
        "records": result.n_records,
        "n_blocks": result.n_blocks,
        "l_vec": result.l_vec,
        "shard": str(result.shard_path),
        "shard_sha256": result.manifest["shards"][0]["sha256"],
        "manifest": str(result.manifest_path),
    }
    if args.keys:
        payload["key_cache"] = str(args.keys)
    _emit(args, payload)
    return 0


def _cmd_serve(args) -> int:
    host, port = _parse_endpoint(args.endpoint)
    endpoint = TcpEndpoint(host, port)
    server = CollabServer(
        endpoint, args.out, args.expected_clients, model_path=args.model
    ).start()
    print(f"serving on {endpoint.host}:{endpoint.port}, output in {args.out}", file=sys.stderr)
    try:
        if args.until_sealed:
            if not server.wait_sealed(args.timeout):
                server.stop()
                print("error: timed out before all clients finished", file=sys.stderr)
                return 1
        else:
            while not server.wait_sealed(3600):
                pass
    except KeyboardInterrupt:
        pass
    server.stop()
    stats = server.session_stats()
    payload = {
        "sealed": server.sealed,
        "manifest": str(server.manifest_path) if server.sealed else None,
        "clients": {
            str(cid): {"records": s.received, "done": s.done, "connects": s.n_connects}
            for cid, s in sorted(stats.items())
        },
    }
    _emit(args, payload)
    return 0 if server.sealed else 1


def _cmd_upload(args) -> int:
    host, port = _parse_endpoint(args.endpoint)
    summary = proto_client.upload(
        lambda: connect_tcp(host, port), args.shard, args.client_id
    )
    _emit(args, summary.to_dict())
    return 0 if summary.done else 1


def _cmd_fetch_model(args) -> int:
    host, port = _parse_endpoint(args.endpoint)
    blob = proto_client.fetch_model(
        lambda: connect_tcp(host, port), args.client_id, out_path=args.out
    )
    _emit(
        args,
        {
            "bytes": len(blob),
            "sha256": hashlib.sha256(blob).hexdigest(),
            "out": str(args.out),
        },
    )
    return 0


def _iter_shards(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        shards = sorted(p.glob("*.pced"))
        if not shards:
            raise ValidationError(f"no .pced shards under {p}")
        return shards
    return [p]


def _cmd_verify_roundtrip(args) -> int:
    cache: dict = {}
    for path in args.keys:
        cache.update(key_schedule.read_key_cache(path))
    total = verified = mismatched = missing = 0
    for shard in _iter_shards(args.in_path):
        header, records = dataset_io.read_shard(shard)
        for rec in records:
            total += 1
            entry = cache.get(rec.triple)
            if entry is None:
                missing += 1
                continue
            enc = dataset_io.record_to_encrypted_image(rec, header)
            try:
                plain = block_cipher.decrypt(enc, entry.key)
            except PermCollabError:
                mismatched += 1
                continue
            if key_schedule.plain_digest(plain.array.tobytes()) == entry.plain_digest:
                verified += 1
            else:
                mismatched += 1
    exact = verified == total and total > 0
    payload = {
        "records": total,
        "verified": verified,
        "mismatched": mismatched,
        "missing_keys": missing,
        "bit_exact_percent": round(100.0 * verified / total, 2) if total else 0.0,
    }
    _emit(args, payload)
    return 0 if exact else 1


def _cmd_export_png(args) -> int:
    header, records = dataset_io.read_shard(args.shard)
    if not 0 <= args.index < len(records):
        raise ValidationError(f"--index must be in [0, {len(records) - 1}]")
    image = dataset_io.record_to_encrypted_image(records[args.index], header).image
    dataset_io.export_png(image, args.out)
    payload = {"out": str(args.out), "index": args.index, "image_id": records[args.index].image_id}
    if args.grid:
        from . import reports  # defer: pulls in matplotlib

        count = min(args.grid, len(records))
        images = [
            dataset_io.record_to_encrypted_image(r, header).image for r in records[:count]
        ]
        titles = [f"id={r.image_id}" for r in records[:count]]
        grid_out = args.grid_out or Path(args.out).with_suffix(".grid.png")
        reports.write_image_grid(images, grid_out, titles=titles)
        payload["grid"] = str(grid_out)
    _emit(args, payload)
    return 0


def _cmd_embed_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    runs: list[embed_check.VerificationReport] = []
    for _ in range(args.trials):
        grid = int(rng.integers(1, 5))
        blk = int(rng.choice([2, 3, 4]))
        c = int(rng.choice([1, 2, 3]))
        n_blocks, l_vec = grid * grid, blk * blk * c
        d = int(rng.integers(1, 9))
        blocks = block_cipher.BlockSet(
            rng.integers(0, 256, size=(n_blocks, l_vec), dtype=np.uint8), blk
        )
        pe = embed_check.PatchEmbedding(rng.standard_normal((l_vec, d)))
        pos = embed_check.PositionEmbedding(rng.standard_normal((n_blocks + 1, d)))
        cls = rng.standard_normal(d)
        u = perm_core.random_permutation(
            perm_core.RestrictionSpec(l_vec, int(rng.integers(0, l_vec + 1))), rng
        )
        l = perm_core.random_permutation(
            perm_core.RestrictionSpec(n_blocks, int(rng.integers(0, n_blocks + 1))), rng
        )
        runs.append(embed_check.verify_pixel_shuffle_absorption(blocks, u, pe, args.tolerance))
        runs.append(
            embed_check.verify_block_scramble_equivalence(blocks, l, pe, pos, cls, args.tolerance)
        )
    payload: dict = {"trials": args.trials, "tolerance": args.tolerance}
    all_passed = True
    for name in ("pixel_shuffle_absorption", "block_scramble_equivalence"):
        mine = [r for r in runs if r.identity == name]
        worst = max(r.max_deviation for r in mine)
        passed = all(r.passed for r in mine)
        all_passed &= passed
        payload[name] = {"worst_deviation": worst, "passed": passed}
    if args.out:
        from . import reports  # defer: pulls in matplotlib

        paths = reports.write_embed_report(runs, args.out)
        payload["csv"] = str(paths["csv"])
        payload["png"] = str(paths["png"])
    _emit(args, payload)
    return 0 if all_passed else 1


def _cmd_cost(args) -> int:
    report = proto_cost.cost_report(
        proto_cost.CostParams(
            m_clients=args.clients,
            images_per_client=args.images,
            bytes_per_image=args.image_bytes,
            model_bytes=args.model_bytes,
            fl_rounds=args.rounds,
            fl_participation=args.participation,
        )
    )
    payload = report.to_dict()
    if args.out:
        from . import reports  # defer: pulls in matplotlib

        paths = reports.write_cost_report(report, args.out)
        payload["csv"] = str(paths["csv"])
        payload["png"] = str(paths["png"])
    _emit(args, payload)
    return 0


# -- parser -------------------------------------------------------------------


def _add_format(sp) -> None:
    sp.add_argument("--format", choices=("text", "json"), default="text")


def _add_geometry(sp, with_specs: bool = True) -> None:
    sp.add_argument("--p", type=int, default=16, help="block side length")
    sp.add_argument("--side", type=int, default=224, help="square image side after resize")
    if with_specs:
        sp.add_argument("--nbs", type=int, required=True, help="fixed block positions")
        sp.add_argument("--nps", type=int, required=True, help="fixed pixel positions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="permcollab",
        description="Disposable-key block-wise image encryption and one-shot collaborative sharing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("keygen-config", help="validate a restriction config and report keyspace sizes")
    _add_geometry(sp)
    sp.add_argument("--out", type=Path, help="optional path for the config as JSON")
    _add_format(sp)
    sp.set_defaults(func=_cmd_keygen_config)

    sp = sub.add_parser("encrypt", help="encrypt a CIFAR-10 dataset into a PCED shard")
    sp.add_argument("--in", dest="in_path", required=True, help="CIFAR-10 binary file or directory")
    sp.add_argument("--out", required=True, help="output directory for shard + manifest")
    _add_geometry(sp)
    sp.add_argument("--split", choices=("train", "test"), default="train")
    sp.add_argument("--epoch", type=int, default=0)
    sp.add_argument("--client-id", type=int, default=0)
    sp.add_argument("--limit", type=int, help="encrypt only the first N images")
    sp.add_argument("--seed", type=int, help="derive the master secret from a seed (demo runs)")
    sp.add_argument("--secret-file", help="file holding the 32-byte master secret (raw or hex)")
    sp.add_argument("--keys", type=Path, help="client-local key cache path (enables verify-roundtrip)")
    _add_format(sp)
    sp.set_defaults(func=_cmd_encrypt)

    sp = sub.add_parser("serve", help="run the collection server")
    sp.add_argument("--endpoint", default="127.0.0.1:9631")
    sp.add_argument("--out", required=True, help="directory for shards + manifest")
    sp.add_argument("--expected-clients", type=int, required=True)
    sp.add_argument("--model", type=Path, help="model artifact to serve on MODEL_REQUEST")
    sp.add_argument("--until-sealed", action="store_true", help="exit once the manifest is sealed")
    sp.add_argument("--timeout", type=float, help="with --until-sealed, give up after this many seconds")
    _add_format(sp)
    sp.set_defaults(func=_cmd_serve)

    sp = sub.add_parser("upload", help="upload shards to the server (one-shot, resumable)")
    sp.add_argument("--endpoint", default="127.0.0.1:9631")
    sp.add_argument("--shard", nargs="+", required=True, help="PCED shard path(s)")
    sp.add_argument("--client-id", type=int, required=True)
    _add_format(sp)
    sp.set_defaults(func=_cmd_upload)

    sp = sub.add_parser("fetch-model", help="download and digest-verify the model artifact")
    sp.add_argument("--endpoint", default="127.0.0.1:9631")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--client-id", type=int, default=0)
    _add_format(sp)
    sp.set_defaults(func=_cmd_fetch_model)

    sp = sub.add_parser("verify-roundtrip", help="prove bit-exact recovery against a key cache")
    sp.add_argument("--in", dest="in_path", required=True, help="PCED shard or directory of shards")
    sp.add_argument("--keys", nargs="+", required=True, help="key cache file(s) from encrypt --keys")
    _add_format(sp)
    sp.set_defaults(func=_cmd_verify_roundtrip)

    sp = sub.add_parser("export-png", help="export encrypted images from a shard as PNG")
    sp.add_argument("--shard", required=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--grid", type=int, help="also render a contact sheet of the first N records")
    sp.add_argument("--grid-out", type=Path)
    _add_format(sp)
    sp.set_defaults(func=_cmd_export_png)

    sp = sub.add_parser("embed-check", help="run the transformer-compatibility identities")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--tolerance", type=float, default=embed_check.DEFAULT_TOLERANCE)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=Path, help="directory for CSV + figure output")
    _add_format(sp)
    sp.set_defaults(func=_cmd_embed_check)

    sp = sub.add_parser("cost", help="one-shot vs. federated communication cost report")
    sp.add_argument("--clients", type=int, required=True)
    sp.add_argument("--images", type=int, required=True)
    sp.add_argument("--image-bytes", type=int, required=True)
    sp.add_argument("--model-bytes", type=int, required=True)
    sp.add_argument("--rounds", type=int, required=True)
    sp.add_argument("--participation", type=float, default=1.0)
    sp.add_argument("--out", type=Path, help="directory for CSV + figure output")
    _add_format(sp)
    sp.set_defaults(func=_cmd_cost)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PermCollabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
