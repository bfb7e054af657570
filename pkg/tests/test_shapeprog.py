"""DSL parsing, execution semantics, tokenizer exactness, templates."""

import numpy as np
import pytest

from shapecompiler import shapeprog as sp
from shapecompiler.errors import CapacityError, ContractError, DecodeError
from shapecompiler.shapeprog.lang import Draw, ForRotate, ForTranslate, Program, Reflect
from shapecompiler.shapeprog.tokens import OP_END, OP_PAD, PARAM_BASE


def random_program(rng, depth=0):
    """Random invariant-respecting program for oracle sweeps."""
    stmts = []
    for _ in range(rng.integers(1, 4)):
        roll = rng.random()
        if roll < 0.55 or depth >= 2:
            part, prim, n_g = [("Top", "Square", 2), ("Top", "Circle", 2),
                               ("Leg", "Bar", 3), ("Back", "Bar", 3),
                               ("Arm", "Bar", 3), ("Base", "Bar", 3),
                               ("Seat", "Bar", 3)][rng.integers(0, 7)]
            p = tuple(int(v) for v in rng.integers(-10, 11, size=3))
            g = tuple(int(v) for v in rng.integers(1, 7, size=n_g))
            stmts.append(Draw(part, prim, p, g))
        elif roll < 0.75:
            body = random_program(rng, depth + 1).statements
            delta = tuple(int(v) for v in rng.integers(-4, 5, size=3))
            stmts.append(ForTranslate(int(rng.integers(1, 5)), delta, body))
        elif roll < 0.9:
            body = random_program(rng, depth + 1).statements
            stmts.append(ForRotate(int(rng.integers(1, 7)),
                                   "XYZ"[rng.integers(0, 3)], body))
        else:
            body = random_program(rng, depth + 1).statements
            stmts.append(Reflect("XYZ"[rng.integers(0, 3)], body))
    return Program(tuple(stmts))


class TestParsePrint:
    def test_worked_draw_statement(self):
        prog = sp.parse("draw('Top','Square',P=(-1,0,0),G=(2,5))")
        assert prog.statements == (Draw("Top", "Square", (-1, 0, 0), (2, 5)),)

    def test_roundtrip_on_synthesized_programs(self):
        rng = np.random.default_rng(0)
        for template in sp.TEMPLATES.values():
            prog = sp.synthesize(template, rng)
            text = sp.print_program(prog)
            assert sp.parse(text) == prog
            assert sp.print_program(sp.parse(text)) == text

    def test_out_of_range_names_parameter(self):
        with pytest.raises(ContractError) as err:
            sp.parse("draw('Top','Square',P=(-99,0,0),G=(2,5))")
        assert "parameter 1" in str(err.value)

    def test_syntax_error_carries_line_and_column(self):
        with pytest.raises(sp.ParseError) as err:
            sp.parse("draw('Top','Square',P=(-1,0,0),G=(2,5))\nnonsense(")
        assert err.value.line == 2

    def test_block_statements(self):
        text = ("for(i<4,'T',u=(2,0,0)){\n"
                "  draw('Leg','Bar',P=(0,0,0),G=(1,1,4))\n"
                "}\n")
        prog = sp.parse(text)
        assert prog.statements[0].count == 4
        assert sp.print_program(prog) == text

    def test_depth_limit_enforced(self):
        text = ("for(i<2,'T',u=(1,0,0)){ for(i<2,'T',u=(0,1,0)){ "
                "reflect(axis=X){ draw('Leg','Bar',P=(0,0,0),G=(1,1,1)) } } }")
        with pytest.raises(ContractError):
            sp.parse(text)


class TestExecutor:
    def test_leg_bar_fill_count(self):
        prog = Program((Draw("Leg", "Bar", (0, 0, 0), (1, 1, 4)),))
        assert sp.execute(prog).count() == 4

    def test_translated_legs_disjoint(self):
        leg = Draw("Leg", "Bar", (0, 0, 0), (1, 1, 4))
        prog = Program((ForTranslate(4, (2, 0, 0), (leg,)),))
        assert sp.execute(prog).count() == 16

    def test_empty_program_empty_grid(self):
        assert sp.execute(Program()).count() == 0

    def test_out_of_grid_statement_skipped_with_warning(self):
        prog = Program((Draw("Leg", "Bar", (18, 18, 18), (2, 2, 2)),))
        warnings = []
        grid = sp.execute(prog, warnings=warnings)
        assert grid.count() == 0
        assert len(warnings) == 1

    @pytest.mark.parametrize("seed", range(40))
    def test_unrolling_equivalence(self, seed):
        rng = np.random.default_rng(100 + seed)
        prog = random_program(rng)
        direct = sp.execute(prog)
        unrolled = sp.execute(sp.unroll(prog))
        assert np.array_equal(direct.occupancy, unrolled.occupancy)

    @pytest.mark.parametrize("axis", ["X", "Y", "Z"])
    def test_reflect_mirror_symmetry(self, axis):
        rng = np.random.default_rng(7)
        body = random_program(rng).statements
        grid = sp.execute(Program((Reflect(axis, body),)))
        flipped = np.flip(grid.occupancy, "XYZ".index(axis))
        assert np.array_equal(grid.occupancy, flipped)

    def test_rotation_by_quarter_turns_is_exact(self):
        leg = Draw("Leg", "Bar", (5, 1, 0), (1, 2, 3))
        prog = Program((ForRotate(4, "Z", (leg,)),))
        grid = sp.execute(prog)
        # 4 disjoint quarter-turn copies preserve the cell count exactly
        assert grid.count() == 4 * 6
        assert np.array_equal(grid.occupancy, np.rot90(grid.occupancy, axes=(0, 1)))

    def test_rotate_count_one_is_identity(self):
        body = (Draw("Back", "Bar", (2, 3, 0), (2, 2, 5)),)
        a = sp.execute(Program((ForRotate(1, "Z", body),)))
        b = sp.execute(Program(body))
        assert np.array_equal(a.occupancy, b.occupancy)

    def _fill_oracle(self, stmt, resolution=32):
        """Independent per-cell recomputation of one Draw footprint."""
        half = resolution // 2
        px, py, pz = stmt.p
        count = 0
        if stmt.primitive == "Circle":
            t, r = stmt.g
            cx, cy = px + r, py + r
            layers = 0
            for x in range(resolution):
                for y in range(resolution):
                    xc = x - half + 0.5
                    yc = y - half + 0.5
                    if (xc - cx) ** 2 + (yc - cy) ** 2 <= r * r:
                        layers += 1
            zs = len([z for z in range(max(pz, -half), min(pz + t, half))])
            return layers * zs
        if stmt.primitive == "Square":
            t, s = stmt.g
            size = (s, s, t)
        else:
            size = stmt.g
        for x in range(resolution):
            for y in range(resolution):
                for z in range(resolution):
                    cx, cy, cz = x - half, y - half, z - half
                    if (px <= cx < px + size[0] and py <= cy < py + size[1]
                            and pz <= cz < pz + size[2]):
                        count += 1
        return count

    @pytest.mark.parametrize("seed", range(10))
    def test_draw_fill_matches_closed_form(self, seed):
        rng = np.random.default_rng(300 + seed)
        prog = random_program(rng)
        for stmt in prog.statements:
            if isinstance(stmt, Draw):
                got = sp.execute(Program((stmt,))).count()
                assert got == self._fill_oracle(stmt)


class TestTokens:
    def test_worked_statement_encoding(self):
        stmt = Draw("Top", "Square", (-1, 0, 0), (2, 5))
        assert sp.encode_statement(stmt) == [3, -1, 0, 0, 2, 5, 0, 0]

    def test_for_translate_header_layout(self):
        stmt = ForTranslate(4, (2, 0, 0), ())
        assert sp.encode_statement(stmt) == [9, 4, 2, 0, 0, 0, 0, 0]

    def test_encode_decode_statement_identity(self):
        rng = np.random.default_rng(1)
        prog = random_program(rng)
        for stmt in prog.statements:
            row = sp.encode_statement(stmt)
            back = sp.decode_statement(row)
            if isinstance(stmt, Draw):
                assert back == stmt

    def test_parameter_shift(self):
        prog = Program((Draw("Leg", "Bar", (-20, 0, 0), (1, 1, 1)),))
        code = sp.tokenize(prog, length=80)
        # raw -20 maps to the first id of the shifted parameter range
        assert code[1] == PARAM_BASE

    def test_all_pad_decodes_to_empty(self):
        assert sp.detokenize(np.zeros(80, dtype=np.int64)) == Program()

    def test_end_then_padding(self):
        code = sp.tokenize(Program(), length=80)
        assert code[0] == OP_END
        assert (code[1:] == OP_PAD).all()

    @pytest.mark.parametrize("seed", range(30))
    def test_roundtrip_random_programs(self, seed):
        rng = np.random.default_rng(500 + seed)
        prog = random_program(rng)
        assert sp.detokenize(sp.tokenize(prog)) == prog

    def test_roundtrip_template_programs_desk_width(self):
        rng = np.random.default_rng(2)
        for template in sp.TEMPLATES.values():
            for _ in range(5):
                prog = sp.synthesize(template, rng)
                assert sp.tokenized_length(prog) <= 80
                assert sp.detokenize(sp.tokenize(prog, length=80)) == prog

    def test_capacity_error(self):
        stmts = tuple(Draw("Leg", "Bar", (0, 0, 0), (1, 1, 1))
                      for _ in range(30))
        with pytest.raises(CapacityError):
            sp.tokenize(Program(stmts), length=240)

    def test_malformed_code_names_slot(self):
        code = sp.tokenize(
            Program((Draw("Leg", "Bar", (0, 0, 0), (1, 1, 4)),)), length=80)
        code[3] = 2  # opcode token inside a parameter slot
        with pytest.raises(DecodeError) as err:
            sp.detokenize(code)
        assert err.value.slot == 3

    def test_unclosed_block_rejected(self):
        code = np.zeros(80, dtype=np.int64)
        header = sp.encode_statement(ForTranslate(2, (1, 0, 0), ()))
        code[0] = header[0]
        code[1:8] = [PARAM_BASE + 20 + v for v in header[1:]]
        code[8] = OP_END
        with pytest.raises(DecodeError):
            sp.detokenize(code)

    @pytest.mark.parametrize("seed", range(20))
    def test_sampler_state_walk_always_decodes(self, seed):
        rng = np.random.default_rng(700 + seed)
        state = sp.ProgramSamplerState(80)
        tokens = []
        for _ in range(80):
            allowed = np.flatnonzero(state.allowed())
            tok = int(rng.choice(allowed))
            state.consume(tok)
            tokens.append(tok)
        sp.detokenize(np.array(tokens))


class TestTemplates:
    def test_fourteen_templates(self):
        assert len(sp.TEMPLATES) == 14
        assert len([t for t in sp.TEMPLATES.values() if t.category == "chair"]) == 4
        assert len([t for t in sp.TEMPLATES.values() if t.category == "table"]) == 10

    @pytest.mark.parametrize("name", sorted(sp.TEMPLATES))
    def test_synthesized_program_valid_and_nonempty(self, name):
        rng = np.random.default_rng(hash(name) % 2 ** 31)
        for _ in range(8):
            prog = sp.synthesize(sp.TEMPLATES[name], rng)
            sp.validate_program(prog)
            assert sp.execute(prog).count() > 0
            assert sp.detokenize(sp.tokenize(prog, length=80)) == prog

    def test_chair_occupies_multiple_part_footprints(self):
        rng = np.random.default_rng(3)
        prog = sp.synthesize(sp.TEMPLATES["chair_basic"], rng)
        parts = set()
        for stmt in sp.unroll(prog).statements:
            if isinstance(stmt, Draw) and sp.execute(
                    Program((stmt,))).count() > 0:
                parts.add(stmt.part)
        assert len(parts) >= 2

    def test_fixed_seed_reproducible_pair(self):
        prog1 = sp.synthesize(sp.TEMPLATES["table_basic"], np.random.default_rng(9))
        cloud1, _ = sp.make_pair(prog1, 256, np.random.default_rng(10))
        prog2 = sp.synthesize(sp.TEMPLATES["table_basic"], np.random.default_rng(9))
        cloud2, _ = sp.make_pair(prog2, 256, np.random.default_rng(10))
        assert prog1 == prog2
        assert np.array_equal(cloud1, cloud2)

    def test_make_pair_cloud_normalized(self):
        rng = np.random.default_rng(11)
        prog = sp.synthesize(sp.TEMPLATES["stool_round"], rng)
        cloud, _ = sp.make_pair(prog, 512, rng)
        assert cloud.shape == (512, 3)
        assert np.abs(cloud.mean(axis=0)).max() < 1e-5
        assert np.linalg.norm(cloud, axis=1).max() <= 1 + 1e-5
