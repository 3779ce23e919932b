"""Regenerate the alist files shipped in src/shapelink/codes.

Each code is built with ``make_ldpc`` from the first seed (counting up from
the base seed) whose parity-check matrix has full rank.
"""

import json
import pathlib

from shapelink.errors import EncodingSetupError
from shapelink.fec import SystematicEncoder, format_alist, make_ldpc

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "shapelink" / "codes"

CODES = {
    # name: (n, checks, column weight, base seed, note)
    "reg108": (108, 54, 3, 108, "(3,6)-regular toy code for unfolded training"),
    "ldpc1440_r23": (1440, 480, 3, 1440, "rate-2/3 code for the shaped R=3 system"),
    "ldpc1440_r35": (1440, 576, 3, 1441, "rate-3/5 code for the uniform R=3 baseline"),
}


def build(n, checks, wc, seed, name):
    while True:
        H = make_ldpc(n, checks, wc, seed=seed, name=name)
        try:
            SystematicEncoder(H)
            return H, seed
        except EncodingSetupError:
            seed += 1000


def main():
    index = {}
    for name, (n, checks, wc, base, note) in CODES.items():
        H, seed = build(n, checks, wc, base, name)
        (OUT / f"{name}.alist").write_text(format_alist(H))
        index[name] = {"file": f"{name}.alist", "n": n, "checks": checks,
                       "col_weight": wc, "seed": seed, "note": note}
        print(name, "seed", seed, "row degrees", sorted(set(H.row_degrees.tolist())))
    (OUT / "index.json").write_text(json.dumps(index, indent=1) + "\n")


if __name__ == "__main__":
    main()
