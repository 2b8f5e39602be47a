"""Operator command line: a thin client over the ledger service.

Every subcommand builds a request, sends it to the service (in-process over
the app for a local tree directory, HTTP with --server), and renders the
response. Exit codes are fixed so shell scripts can branch on them:

  0 ok / verified   1 verification false or audit failed
  2 validation error   3 card file error   4 scenario error   5 bad address
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

EXIT_OK = 0
EXIT_VERIFY_FALSE = 1
EXIT_VALIDATION = 2
EXIT_CARD_FORMAT = 3
EXIT_SCENARIO = 4
EXIT_ADDRESS = 5

_ERROR_EXIT_CODES = {
    "CardFormatError": EXIT_CARD_FORMAT,
    "ScenarioError": EXIT_SCENARIO,
    "AddressOutOfRange": EXIT_ADDRESS,
    "KindMismatch": EXIT_ADDRESS,
}


class CliError(Exception):
    def __init__(self, exit_code: int, error: str, detail: str):
        super().__init__(detail)
        self.exit_code = exit_code
        self.error = error
        self.detail = detail


def _emit_error(error: str, detail: str) -> None:
    print(json.dumps({"error": error, "detail": detail}), file=sys.stderr)


def _make_client(args):
    if args.server:
        import httpx

        return httpx.Client(base_url=args.server, timeout=60.0)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app(args.tree))


def _call(client, method: str, path: str, **kwargs):
    response = client.request(method, path, **kwargs)
    try:
        body = response.json()
    except ValueError:
        raise CliError(EXIT_VALIDATION, "BadResponse",
                       f"service returned non-JSON body (HTTP {response.status_code})")
    if response.status_code >= 400:
        if isinstance(body, dict) and "error" in body:
            code = _ERROR_EXIT_CODES.get(body["error"], EXIT_VALIDATION)
            raise CliError(code, body["error"], body.get("detail", ""))
        raise CliError(EXIT_VALIDATION, "ValidationError", json.dumps(body))
    return body


def _load_json_file(path: str, exit_code: int):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(exit_code, "FileError", f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise CliError(exit_code, "FileError", f"{path} is not valid JSON: {exc}")


def parse_address_label(text: str) -> list[list]:
    """root3-country0 -> [["root", 3], ["country", 0]]"""
    segments = []
    for token in text.split("-"):
        kind = token.rstrip("0123456789")
        digits = token[len(kind):]
        if not kind or not digits:
            raise CliError(EXIT_ADDRESS, "KindMismatch",
                           f"cannot parse address segment {token!r}")
        segments.append([kind, int(digits)])
    return segments


def _print(args, human: str, payload) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(human)


# subcommand handlers --------------------------------------------------------

def cmd_init(args, client) -> int:
    countries = [c for c in (args.countries or "").split(",") if c]
    body = _call(client, "POST", "/init",
                 json={"mode": args.mode, "countries": countries})
    _print(args, f"initialized {body['mode']} tree at {args.tree} "
                 f"({body['total_blocks']} block(s))", body)
    return EXIT_OK


def cmd_issue(args, client) -> int:
    record = _load_json_file(args.record, EXIT_VALIDATION)
    if not isinstance(record, dict):
        raise CliError(EXIT_VALIDATION, "ValidationError",
                       "record file must be a JSON object keyed by field number")
    if args.init:
        health = _call(client, "GET", "/health")
        if not health.get("initialized"):
            countries = [c for c in (args.countries or "").split(",") if c]
            _call(client, "POST", "/init",
                  json={"mode": args.mode, "countries": countries})
    payload = {"record": record, "country": args.country,
               "officer_id": args.officer, "timestamp": args.timestamp,
               "force": args.force_audit_skip}
    body = _call(client, "POST", "/issue", json=payload)
    card_path = args.card_out or f"card-{body['serial']}.json"
    with open(card_path, "w", encoding="utf-8") as fh:
        json.dump(body["card"], fh, indent=2, sort_keys=True)
        fh.write("\n")
    label = "-".join(f"{k}{i}" for k, i in body["address"])
    _print(args, f"issued serial {body['serial']} at {label} "
                 f"hash {body['block_hash']}\ncard written to {card_path}",
           dict(body, card_path=card_path))
    return EXIT_OK


def cmd_reissue(args, client) -> int:
    record = _load_json_file(args.record, EXIT_VALIDATION)
    if not isinstance(record, dict):
        raise CliError(EXIT_VALIDATION, "ValidationError",
                       "record file must be a JSON object keyed by field number")
    payload = {"old_serial": args.old_serial, "record": record,
               "officer_id": args.officer, "timestamp": args.timestamp,
               "force": args.force_audit_skip}
    body = _call(client, "POST", "/reissue", json=payload)
    card_path = args.card_out or f"card-{body['serial']}.json"
    with open(card_path, "w", encoding="utf-8") as fh:
        json.dump(body["card"], fh, indent=2, sort_keys=True)
        fh.write("\n")
    label = "-".join(f"{k}{i}" for k, i in body["address"])
    _print(args, f"reissued {args.old_serial} -> {body['serial']} at {label} "
                 f"hash {body['block_hash']}\ncard written to {card_path}",
           dict(body, card_path=card_path))
    return EXIT_OK


def _load_card_model(path: str) -> dict:
    raw = _load_json_file(path, EXIT_CARD_FORMAT)
    from pydantic import ValidationError

    from .service.schemas import CardModel

    try:
        return CardModel.model_validate(raw).model_dump()
    except ValidationError as exc:
        raise CliError(EXIT_CARD_FORMAT, "CardFormatError",
                       f"{path} is not a card dump: {exc.errors()[0]['msg']}")


def cmd_verify(args, client) -> int:
    card = _load_card_model(args.card)
    payload = {"card": card, "timestamp": args.timestamp}
    if args.audit:
        payload["audit"] = {"device_id": args.audit[0], "user_id": args.audit[1]}
    body = _call(client, "POST", "/verify", json=payload)
    verdict = "VALID" if body["valid"] else "INVALID"
    lines = [f"card {verdict}"] + [f"  finding: {f}" for f in body["findings"]]
    _print(args, "\n".join(lines), body)
    return EXIT_OK if body["valid"] else EXIT_VERIFY_FALSE


def cmd_log_access(args, client) -> int:
    payload = {"address": parse_address_label(args.address),
               "device_id": args.device, "user_id": args.user,
               "purpose": args.purpose, "timestamp": args.timestamp,
               "force": args.force_audit_skip}
    body = _call(client, "POST", "/access", json=payload)
    label = "-".join(f"{k}{i}" for k, i in body["address"])
    _print(args, f"access logged at {label}", body)
    return EXIT_OK


def cmd_audit(args, client) -> int:
    body = _call(client, "GET", "/audit")
    if body["valid"]:
        _print(args, "tree audit clean", body)
        return EXIT_OK
    lines = ["tree audit FAILED"] + [
        f"  {f['chain']}: {f['check']}: {f['detail']}" for f in body["findings"]]
    _print(args, "\n".join(lines), body)
    return EXIT_VERIFY_FALSE


def cmd_inspect(args, client) -> int:
    params = {}
    if args.address:
        params["address"] = args.address
    body = _call(client, "GET", "/inspect", params=params)
    if args.address:
        human = (f"block {args.address}: created {body['timestamp']} "
                 f"by {body['creator_id']}\n"
                 f"  payload kind {body['payload_kind']}, "
                 f"hash {body['block_hash']}\n"
                 f"  subchains: {body['subchains'] or 'none'}")
    else:
        human = (f"{body['mode']} tree, {body['counts']['total']} block(s) total\n"
                 f"  breakdown: root {body['counts']['root_blocks']}, "
                 f"country {sum(body['counts']['country_blocks'].values())}, "
                 f"reissue {sum(body['counts']['reissue_blocks'].values())}, "
                 f"access {sum(body['counts']['access_blocks'].values())}")
    _print(args, human, body)
    return EXIT_OK


def _resolve_scenario(name: str) -> list:
    path = Path(name)
    if path.exists():
        raw = path.read_text(encoding="utf-8")
    else:
        bundle = resources.files("bctree") / "scenarios" / f"{name}.json"
        if not bundle.is_file():
            raise CliError(EXIT_SCENARIO, "ScenarioError",
                           f"no scenario file or bundled scenario named {name!r}")
        raw = bundle.read_text(encoding="utf-8")
    try:
        scenario = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_SCENARIO, "ScenarioError",
                       f"scenario is not valid JSON: {exc}")
    if not isinstance(scenario, list):
        raise CliError(EXIT_SCENARIO, "ScenarioError",
                       "scenario must be a JSON list of directives")
    return scenario


def cmd_simulate(args, client) -> int:
    scenario = _resolve_scenario(args.scenario)
    countries = [c for c in (args.countries or "").split(",") if c]
    payload = {"scenario": scenario, "nodes": args.nodes, "seed": args.seed,
               "mode": args.mode, "countries": countries,
               "save_replicas": args.save_replicas}
    body = _call(client, "POST", "/simulate", json=payload)
    out_path = Path(args.out)
    with open(out_path, "w", encoding="utf-8") as fh:
        for record in body["transcript"]:
            fh.write(json.dumps(record, separators=(",", ":")))
            fh.write("\n")
    _print(args, f"{body['verdict']} checks={body['checks']}\n"
                 f"transcript written to {out_path}",
           {"verdict": body["verdict"], "checks": body["checks"],
            "transcript_path": str(out_path)})
    return EXIT_OK if body["verdict"] == "PASS" else EXIT_VERIFY_FALSE


def cmd_repair(args, client) -> int:
    payload = {"replicas": args.replicas, "seed": args.seed}
    body = _call(client, "POST", "/repair", json=payload)
    human = (f"repair: {len(body['replaced'])} block(s) replaced, "
             f"{len(body['conflicts'])} conflict(s), "
             f"clean={body['clean_after']}")
    _print(args, human, body)
    if body["conflicts"] or not body["clean_after"]:
        return EXIT_VERIFY_FALSE
    return EXIT_OK


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bctree",
        description="Operator CLI for the blockchain-tree ID-card ledger")
    parser.add_argument("--tree", default="tree", help="tree directory (default ./tree)")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--seed", type=int, default=1, help="simulation seed")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a fresh tree directory")
    p.add_argument("--mode", choices=["flat", "nested"], default="flat")
    p.add_argument("--countries", default="", help="comma-separated country codes")
    p.set_defaults(handler=cmd_init)

    p = sub.add_parser("issue", help="issue a new card from a record JSON file")
    p.add_argument("record", help="record JSON path (field-number keyed)")
    p.add_argument("--country", type=int, default=None)
    p.add_argument("--officer", required=True)
    p.add_argument("--card-out", default=None)
    p.add_argument("--timestamp", type=int, default=None)
    p.add_argument("--init", action="store_true",
                   help="initialize the tree first if needed")
    p.add_argument("--mode", choices=["flat", "nested"], default="flat")
    p.add_argument("--countries", default="")
    p.add_argument("--force-audit-skip", action="store_true")
    p.set_defaults(handler=cmd_issue)

    p = sub.add_parser("reissue", help="replace an active card")
    p.add_argument("record")
    p.add_argument("--old-serial", required=True)
    p.add_argument("--officer", required=True)
    p.add_argument("--card-out", default=None)
    p.add_argument("--timestamp", type=int, default=None)
    p.add_argument("--force-audit-skip", action="store_true")
    p.set_defaults(handler=cmd_reissue)

    p = sub.add_parser("verify", help="verify a card dump against the ledger")
    p.add_argument("card", help="card JSON path")
    p.add_argument("--audit", nargs=2, metavar=("DEVICE", "USER"), default=None,
                   help="log the attempt on the card's access chain")
    p.add_argument("--timestamp", type=int, default=None)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("log-access", help="append an access-log entry")
    p.add_argument("address", help="block address label, e.g. root1")
    p.add_argument("--device", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--purpose", default=None)
    p.add_argument("--timestamp", type=int, default=None)
    p.add_argument("--force-audit-skip", action="store_true")
    p.set_defaults(handler=cmd_log_access)

    p = sub.add_parser("audit", help="verify every chain and anchoring in the tree")
    p.set_defaults(handler=cmd_audit)

    p = sub.add_parser("repair", help="repair the tree from saved peer replicas")
    p.add_argument("--replicas", nargs="+", required=True,
                   help="peer replica tree directories")
    p.set_defaults(handler=cmd_repair)

    p = sub.add_parser("simulate", help="run a scenario on the simulated network")
    p.add_argument("scenario", help="scenario JSON path or bundled scenario name")
    p.add_argument("--nodes", type=int, default=5)
    p.add_argument("--mode", choices=["flat", "nested"], default="flat")
    p.add_argument("--countries", default="")
    p.add_argument("--out", default="transcript.jsonl")
    p.add_argument("--save-replicas", default=None,
                   help="directory to dump final per-node replicas into")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("inspect", help="show tree totals or one block")
    p.add_argument("address", nargs="?", default=None,
                   help="block address label, e.g. root3-country0")
    p.set_defaults(handler=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        client = _make_client(args)
    except Exception as exc:
        _emit_error("ClientError", str(exc))
        return EXIT_VALIDATION
    try:
        with client:
            return args.handler(args, client)
    except CliError as exc:
        _emit_error(exc.error, exc.detail)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
