"""Load game specifications from INI-style files.

Grammar::

    [game]
    name        = two_state_example     ; optional label
    n_scenarios = 2
    horizon     = 1.0
    dim_x       = 1                      ; 1 or 2
    x_lo        = 0.0                    ; one value per coordinate, comma separated
    x_hi        = 0.0

    [dynamics]
    drift       = 0.0                    ; b_j = drift_j + drift_slope_j * x_j
    drift_slope = 0.0                    ; optional
    vol         = 0.0                    ; diagonal of a, constant

    [scenario.1]                         ; scenarios are numbered 1..I in files
    stop2    = poly(const=-1, t=2)       ; f_1, paid when Player 2 stops first
    stop1    = poly(const=1, t=2)        ; h_1, paid when Player 1 stops first or ties
    terminal = poly(const=2)             ; g_1

A payoff is either ``poly(const=.., t=.., lin=a|b, quad=a|b)`` (``lin`` and
``quad`` take one coefficient per coordinate separated by ``|``) or
``table(file=path.csv)`` where the CSV holds columns ``t, x1, .., value``
(``x1, .., value`` for terminal payoffs) on a full tensor grid.  Relative
table paths resolve against the config file's directory.
"""

from __future__ import annotations

import configparser
import re
from importlib import resources
from pathlib import Path

from .model import AffineDrift, DiagonalVol, GameSpec, Poly, SpecError, Table

_CALL = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$")

BUILTIN_SPECS = ("paper_2_3", "noisy_2_3", "three_scenarios")


def _floats(text: str, n: int, key: str) -> tuple[float, ...]:
    vals = tuple(float(v) for v in text.split(","))
    if len(vals) == 1:
        vals = vals * n
    if len(vals) != n:
        raise SpecError(f"{key}: expected {n} values, got {len(vals)}")
    return vals


def parse_payoff(text: str, dim_x: int, with_time: bool, base: Path):
    m = _CALL.match(text)
    if not m:
        raise SpecError(f"cannot parse payoff {text!r}")
    family, args = m.group(1).lower(), m.group(2)
    kw = {}
    for part in filter(None, (p.strip() for p in args.split(","))):
        if "=" not in part:
            raise SpecError(f"payoff argument {part!r} must be key=value")
        k, v = (s.strip() for s in part.split("=", 1))
        kw[k] = v
    if family == "poly":
        unknown = set(kw) - {"const", "t", "lin", "quad"}
        if unknown:
            raise SpecError(f"unknown poly arguments {sorted(unknown)}")
        if not with_time and float(kw.get("t", 0.0)) != 0.0:
            raise SpecError("terminal payoffs cannot depend on t")
        lin = tuple(float(v) for v in kw["lin"].split("|")) if "lin" in kw else ()
        quad = tuple(float(v) for v in kw["quad"].split("|")) if "quad" in kw else ()
        for name, coefs in (("lin", lin), ("quad", quad)):
            if coefs and len(coefs) != dim_x:
                raise SpecError(f"poly {name} needs {dim_x} coefficients")
        poly = Poly(float(kw.get("const", 0.0)), float(kw.get("t", 0.0)), lin, quad)
        return poly if with_time else poly.of_x
    if family == "table":
        path = Path(kw["file"])
        if not path.is_absolute():
            path = base / path
        return Table.from_csv(path, with_time=with_time)
    raise SpecError(f"unknown payoff family {family!r}")


def parse_spec(text: str, base: Path | None = None) -> GameSpec:
    base = base or Path.cwd()
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    if "game" not in cp:
        raise SpecError("missing [game] section")
    game = cp["game"]
    n = game.getint("n_scenarios")
    d = game.getint("dim_x", fallback=1)
    if d not in (1, 2):
        raise SpecError("only dim_x = 1 or 2 is supported")
    dyn = cp["dynamics"] if "dynamics" in cp else {}
    drift = AffineDrift(
        _floats(dyn.get("drift", "0"), d, "drift"),
        _floats(dyn["drift_slope"], d, "drift_slope") if "drift_slope" in dyn else (),
    )
    vol = DiagonalVol(_floats(dyn.get("vol", "0"), d, "vol"))
    f, h, g = [], [], []
    for i in range(1, n + 1):
        sec = f"scenario.{i}"
        if sec not in cp:
            raise SpecError(f"missing [{sec}] section")
        s = cp[sec]
        f.append(parse_payoff(s["stop2"], d, True, base))
        h.append(parse_payoff(s["stop1"], d, True, base))
        g.append(parse_payoff(s["terminal"], d, False, base))
    return GameSpec(
        dim_x=d,
        n_scenarios=n,
        horizon=game.getfloat("horizon"),
        drift=drift,
        vol=vol,
        stop2_payoff=tuple(f),
        stop1_payoff=tuple(h),
        terminal_payoff=tuple(g),
        x_lo=_floats(game.get("x_lo", "0"), d, "x_lo"),
        x_hi=_floats(game.get("x_hi", "0"), d, "x_hi"),
        name=game.get("name", "game"),
    )


def load_spec(path_or_name: str | Path) -> GameSpec:
    """Load a spec file, or one of the bundled specs by name (see ``BUILTIN_SPECS``)."""
    name = str(path_or_name)
    if name in BUILTIN_SPECS:
        text = resources.files("infodynkin.data").joinpath(f"{name}.cfg").read_text()
        return parse_spec(text)
    path = Path(path_or_name)
    if not path.exists():
        raise FileNotFoundError(f"spec file {path} not found")
    return parse_spec(path.read_text(), base=path.parent)
