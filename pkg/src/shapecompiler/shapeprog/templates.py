"""Parametric furniture templates and the (cloud, program) synthesizer.

Each template samples integer parameters from per-slot ranges and builds a
program whose statements stay inside the DSL invariants. The z axis is up;
shapes sit near the grid center and get recentered by unit-ball
normalization anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ContractError
from ..geometry import normalize_unit_ball, sample_surface
from .executor import execute
from .lang import Draw, ForRotate, ForTranslate, Program, Reflect, validate_program


@dataclass(frozen=True)
class Template:
    name: str
    category: str
    slots: dict          # slot name -> (lo, hi), inclusive
    build: callable      # dict -> Program


def _leg(p, g):
    return Draw("Leg", "Bar", p, g)


def _corner_legs(x0, span, lt, lh):
    """2x2 legs via nested translation loops (span = center distance)."""
    return ForTranslate(2, (span, 0, 0), (
        ForTranslate(2, (0, span, 0), (
            _leg((x0, x0, 0), (lt, lt, lh)),
        )),
    ))


def _chair_basic(v):
    s, lt, lh, bh = v["side"], v["leg_t"], v["leg_h"], v["back_h"]
    x0 = -(s // 2)
    return Program((
        _corner_legs(x0, s - lt, lt, lh),
        Draw("Seat", "Bar", (x0, x0, lh), (s, s, 1)),
        Draw("Back", "Bar", (x0, x0, lh + 1), (1, s, bh)),
    ))


def _chair_arms(v):
    s = 2 * v["half_side"]
    lh, bh, ah = v["leg_h"], v["back_h"], v["arm_h"]
    x0 = -(s // 2)
    return Program((
        ForRotate(4, "Z", (_leg((x0, x0, 0), (1, 1, lh)),)),
        Draw("Seat", "Bar", (x0, x0, lh), (s, s, 1)),
        Draw("Back", "Bar", (x0, x0, lh + 1), (1, s, bh)),
        Reflect("Y", (
            Draw("Arm", "Bar", (x0 + 1, x0, lh + 1), (s - 2, 1, ah)),
        )),
    ))


def _chair_pedestal(v):
    bw, ch, sw, bh = v["base_w"], v["col_h"], v["seat_w"], v["back_h"]
    return Program((
        Draw("Base", "Bar", (-bw, -bw, 0), (2 * bw, 2 * bw, 1)),
        _leg((-1, -1, 1), (2, 2, ch)),
        Draw("Seat", "Bar", (-sw, -sw, ch + 1), (2 * sw, 2 * sw, 1)),
        Draw("Back", "Bar", (-sw, -sw, ch + 2), (1, 2 * sw, bh)),
    ))


def _stool_round(v):
    c, r, lh = v["legs"], v["radius"], v["leg_h"]
    tr = r + 1
    return Program((
        ForRotate(c, "Z", (_leg((r, 0, 0), (1, 1, lh)),)),
        Draw("Top", "Circle", (-tr, -tr, lh), (1, tr)),
    ))


def _table_basic(v):
    s, lt, lh, tt = v["side"], v["leg_t"], v["leg_h"], v["top_t"]
    x0 = -(s // 2)
    return Program((
        _corner_legs(x0, s - lt, lt, lh),
        Draw("Top", "Square", (x0, x0, lh), (tt, s)),
    ))


def _table_round(v):
    s, lh, tt = v["side"], v["leg_h"], v["top_t"]
    r = s // 2
    x0 = -r
    return Program((
        _corner_legs(x0 + 2, s - 5, 1, lh),
        Draw("Top", "Circle", (-r, -r, lh), (tt, r)),
    ))


def _table_pedestal(v):
    bw, ph, tr = v["base_w"], v["col_h"], v["top_r"]
    return Program((
        Draw("Base", "Bar", (-bw, -bw, 0), (2 * bw, 2 * bw, 1)),
        _leg((-1, -1, 1), (2, 2, ph)),
        Draw("Top", "Circle", (-tr, -tr, ph + 1), (1, tr)),
    ))


def _table_long(v):
    c, dx, w, lh = v["pairs"], v["spacing"], v["depth"], v["leg_h"]
    s = dx * (c - 1) + 1
    side = max(s, w)
    x0 = -(s // 2)
    y0 = -(w // 2)
    return Program((
        ForTranslate(c, (dx, 0, 0), (
            ForTranslate(2, (0, w - 1, 0), (
                _leg((x0, y0, 0), (1, 1, lh)),
            )),
        )),
        Draw("Top", "Square", (x0, -(side // 2), lh), (1, side)),
    ))


def _table_side_panels(v):
    s2, h, pt = v["half_side"], v["height"], v["panel_t"]
    return Program((
        Reflect("X", (
            Draw("Base", "Bar", (-s2, -s2 + 1, 0), (pt, 2 * s2 - 2, h)),
        )),
        Draw("Top", "Square", (-s2, -s2, h), (1, 2 * s2)),
    ))


def _coffee_table(v):
    s, lt, lh, tt = v["side"], v["leg_t"], v["leg_h"], v["top_t"]
    x0 = -(s // 2)
    return Program((
        _corner_legs(x0, s - lt, lt, lh),
        Draw("Top", "Square", (x0, x0, lh), (tt, s)),
    ))


def _bar_table(v):
    bw, h, tr = v["base_w"], v["col_h"], v["top_r"]
    return Program((
        Draw("Base", "Bar", (-bw, -bw, 0), (2 * bw, 2 * bw, 1)),
        _leg((-1, -1, 1), (2, 2, h)),
        Draw("Top", "Circle", (-tr, -tr, h + 1), (1, tr)),
    ))


def _desk(v):
    s2, d2, h = v["half_side"], v["half_depth"], v["height"]
    return Program((
        Reflect("X", (
            Draw("Base", "Bar", (-s2, -d2, 0), (2, 2 * d2, h)),
        )),
        Draw("Top", "Square", (-s2, -s2, h), (1, 2 * s2)),
    ))


def _table_rot_legs(v):
    s = 2 * v["half_side"]
    lh, tt = v["leg_h"], v["top_t"]
    x0 = -(s // 2)
    return Program((
        ForRotate(4, "Z", (_leg((x0, x0, 0), (1, 1, lh)),)),
        Draw("Top", "Square", (x0, x0, lh), (tt, s)),
    ))


def _table_two_tier(v):
    s, lh = v["side"], v["leg_h"]
    x0 = -(s // 2)
    shelf_z = lh // 2
    return Program((
        _corner_legs(x0, s - 1, 1, lh),
        Draw("Top", "Square", (x0, x0, lh), (1, s)),
        Draw("Top", "Square", (x0 + 2, x0 + 2, shelf_z), (1, s - 4)),
    ))


TEMPLATES = {t.name: t for t in (
    Template("chair_basic", "chair",
             {"side": (6, 10), "leg_t": (1, 2), "leg_h": (4, 8),
              "back_h": (4, 8)}, _chair_basic),
    Template("chair_arms", "chair",
             {"half_side": (3, 5), "leg_h": (3, 6), "back_h": (4, 7),
              "arm_h": (2, 3)}, _chair_arms),
    Template("chair_pedestal", "chair",
             {"base_w": (2, 4), "col_h": (4, 7), "seat_w": (3, 5),
              "back_h": (3, 6)}, _chair_pedestal),
    Template("stool_round", "chair",
             {"legs": (3, 5), "radius": (3, 5), "leg_h": (4, 8)}, _stool_round),
    Template("table_basic", "table",
             {"side": (8, 14), "leg_t": (1, 2), "leg_h": (5, 9),
              "top_t": (1, 2)}, _table_basic),
    Template("table_round", "table",
             {"side": (8, 12), "leg_h": (5, 8), "top_t": (1, 2)}, _table_round),
    Template("table_pedestal", "table",
             {"base_w": (3, 5), "col_h": (5, 9), "top_r": (4, 7)},
             _table_pedestal),
    Template("table_long", "table",
             {"pairs": (3, 4), "spacing": (4, 6), "depth": (4, 6),
              "leg_h": (5, 8)}, _table_long),
    Template("table_side_panels", "table",
             {"half_side": (4, 6), "height": (5, 8), "panel_t": (1, 2)},
             _table_side_panels),
    Template("coffee_table", "table",
             {"side": (10, 14), "leg_t": (1, 2), "leg_h": (2, 4),
              "top_t": (1, 2)}, _coffee_table),
    Template("bar_table", "table",
             {"base_w": (2, 3), "col_h": (10, 13), "top_r": (3, 4)},
             _bar_table),
    Template("desk", "table",
             {"half_side": (5, 7), "half_depth": (3, 4), "height": (5, 7)},
             _desk),
    Template("table_rot_legs", "table",
             {"half_side": (3, 6), "leg_h": (5, 9), "top_t": (1, 2)},
             _table_rot_legs),
    Template("table_two_tier", "table",
             {"side": (8, 12), "leg_h": (6, 9)}, _table_two_tier),
)}

CHAIR_TEMPLATES = [t for t in TEMPLATES.values() if t.category == "chair"]
TABLE_TEMPLATES = [t for t in TEMPLATES.values() if t.category == "table"]


def synthesize(template, rng, resolution=32, max_tries=16):
    """Sample one valid, non-empty program from a template."""
    for _ in range(max_tries):
        values = {name: int(rng.integers(lo, hi + 1))
                  for name, (lo, hi) in template.slots.items()}
        program = validate_program(template.build(values))
        if execute(program, resolution).count() > 0:
            return program
    raise ContractError(
        f"template {template.name}: empty geometry after {max_tries} tries")


def make_pair(program, n_points, rng, resolution=32):
    """Execute a program and sample a normalized surface cloud from it."""
    if n_points < 1:
        raise ContractError("make_pair: n_points must be >= 1")
    grid = execute(program, resolution)
    if grid.count() == 0:
        raise ContractError("make_pair: program executes to empty geometry")
    cloud = normalize_unit_ball(sample_surface(grid, n_points, rng))
    return cloud, program
