#!/usr/bin/env python3
"""Print the headline numbers from a study output directory.

Reads only ``manifest.json`` (stdlib, no package import), so it works on any
results directory produced by the ``torus-gossip`` subcommands, including ones
copied from another machine.  Pass ``--json`` to dump the raw manifest instead
of the formatted view.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _fmt_num(x) -> str:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        return str(x)
    if isinstance(x, int):
        return str(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    if abs(x) >= 1e4 or abs(x) < 1e-3:
        return f"{x:.4g}"
    return f"{x:.5f}"


def _report_clt(summary: dict) -> None:
    print(f"  gate attempts {summary['gate_attempts']}, "
          f"conditioning mass {_fmt_num(summary['what_v'])}")
    print(f"  {'u':>6} {'n':>6} {'mean':>11} {'se_mean':>10} "
          f"{'var_ratio':>10} {'W1/sd':>9} {'KS':>8}")
    for u, st in summary["per_u"].items():
        var_ratio = st["variance"] / st["target_variance"]
        sd = st["target_variance"] ** 0.5
        print(f"  {u:>6} {st['n']:>6} {st['mean']:>11.3e} "
              f"{st['se_mean']:>10.2e} {_fmt_num(var_ratio):>10} "
              f"{_fmt_num(st['w1_to_normal'] / sd):>9} "
              f"{_fmt_num(st['ks_to_normal']):>8}")


def _report_collapse(summary: dict) -> None:
    u_keys = list(summary["ladder"][0]["per_u"])
    header = "  " + f"{'size':>10}" + "".join(
        f" {'W1(u=' + u + ')':>14} {'KS(u=' + u + ')':>14}" for u in u_keys
    )
    print(header)
    for entry in summary["ladder"]:
        row = f"  {_fmt_num(entry['big_lambda']):>10}"
        for u in u_keys:
            st = entry["per_u"][u]
            row += f" {_fmt_num(st['w1']):>14} {_fmt_num(st['ks']):>14}"
        print(row)
    for u, ok in summary["w1_weakly_decreasing"].items():
        trend = "weakly decreasing" if ok else "NOT monotone"
        print(f"  W1 along ladder at u={u}: {trend}")


def _report_variance(summary: dict) -> None:
    print(f"  predicted log-log slope {_fmt_num(summary['predicted_slope'])}")
    for u in summary["slopes"]:
        print(f"  u={u}: fitted slope {_fmt_num(summary['slopes'][u])}, "
              f"ratio spread {_fmt_num(summary['ratio_spreads'][u])}")
    print(f"  {'size':>10} {'mean cond var':>14} {'ratio of means':>15}")
    for entry in summary["ladder"]:
        for u in summary["slopes"]:
            print(f"  {_fmt_num(entry['big_lambda']):>10} "
                  f"{_fmt_num(entry['mean_cond_var'][u]):>14} "
                  f"{_fmt_num(entry['ratio_of_means'][u]):>15}  (u={u})")


_REPORTERS = {
    "clt": _report_clt,
    "collapse": _report_collapse,
    "variance": _report_variance,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir", type=Path,
                        help="directory containing manifest.json")
    parser.add_argument("--json", action="store_true",
                        help="dump the raw manifest instead of a summary")
    args = parser.parse_args(argv)

    path = args.run_dir / "manifest.json"
    if not path.is_file():
        print(f"no manifest.json in {args.run_dir}", file=sys.stderr)
        return 1
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if args.json:
        json.dump(manifest, sys.stdout, indent=2, sort_keys=True)
        print()
        return 0

    kind = manifest.get("experiment") or manifest.get("command", "?")
    print(f"{args.run_dir}: {kind}")
    for key in ("master_seed", "code_version", "wall_time_s"):
        if key in manifest:
            print(f"  {key} = {_fmt_num(manifest[key])}")
    reporter = _REPORTERS.get(kind)
    if reporter is not None and "summary" in manifest:
        reporter(manifest["summary"])
    else:
        skip = {"command", "experiment", "master_seed", "code_version",
                "wall_time_s", "config", "csv_columns"}
        for key, value in manifest.items():
            if key not in skip and not isinstance(value, (dict, list)):
                print(f"  {key} = {_fmt_num(value)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
