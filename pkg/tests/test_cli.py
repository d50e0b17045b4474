"""End-to-end checks of the command-line entry point.

Everything goes through ``main(argv)`` so the tests see the same parsing,
dispatch, and exit-code mapping a shell user would.
"""

import csv
import json

import numpy as np
import pytest

from diatomic_dp.cli import main
from diatomic_dp.corpus import bundled_corpus, fig1_mdp, random_mdp
from diatomic_dp.diatomic import spe
from diatomic_dp.mdp import Policy, is_balanced, load_mdp, save_mdp, value_iteration


@pytest.fixture()
def fig1_path(tmp_path):
    path = tmp_path / "fig1.json"
    save_mdp(fig1_mdp(), path)
    return str(path)


@pytest.fixture()
def unbalanced_path(tmp_path):
    path = tmp_path / "plain.json"
    save_mdp(random_mdp(2, 2, gamma=0.5, seed=3), path)
    return str(path)


def read_result(out_dir):
    with open(out_dir / "result.json") as fh:
        return json.load(fh)


def read_trace(out_dir):
    with open(out_dir / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestSpe:
    def test_twenty_sweeps_leave_twenty_rows(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        code = main(
            [
                "spe",
                fig1_path,
                "--alpha",
                "0.5",
                "--policy",
                "always:a2",
                "--max-iter",
                "20",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        header, rows = read_trace(out)
        assert header[:2] == ["iteration", "residual"]
        assert len(rows) == 20
        assert [r[0] for r in rows] == [str(i) for i in range(1, 21)]
        result = read_result(out)
        assert result["converged"] is False
        assert result["iterations"] == 20
        # gamma = 1/2 halves the residual each sweep, so twenty sweeps land
        # within 1e-5 of the fixed point
        assert np.allclose(result["q1"], [[1.75, 1.5], [3.75, 3.5]], atol=1e-5)
        assert np.allclose(result["q2"], [[2.25, 2.5], [4.25, 4.5]], atol=1e-5)

    def test_uniform_policy_trace_approaches_fixed_point(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        argv = [
            "spe",
            fig1_path,
            "--alpha",
            "0.5",
            "--max-iter",
            "20",
            "--out",
            str(out),
        ]
        assert main(argv) == 0
        header, rows = read_trace(out)
        assert len(rows) == 20
        mdp = fig1_mdp()
        dq = spe(mdp, Policy.uniform(mdp), 0.5, tol=1e-12).double_q
        want = np.concatenate([dq.q1.ravel(), dq.q2.ravel()])
        got = np.array([float(v) for v in rows[-1][2:]])
        assert np.abs(got - want).max() < 1e-4

    def test_tight_tolerance_converges(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        assert main(["spe", fig1_path, "--out", str(out)]) == 0
        result = read_result(out)
        assert result["converged"] is True
        assert result["iterations"] < 60
        _, rows = read_trace(out)
        assert len(rows) == result["iterations"]

    def test_artifacts_are_byte_identical_across_runs(self, fig1_path, tmp_path):
        argv = ["spe", fig1_path, "--alpha", "0.5", "--max-iter", "20"]
        for name in ("a", "b"):
            assert main(argv + ["--out", str(tmp_path / name)]) == 0
        for fname in ("trace.csv", "result.json"):
            first = (tmp_path / "a" / fname).read_bytes()
            second = (tmp_path / "b" / fname).read_bytes()
            assert first == second

    def test_result_never_echoes_paths(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        assert main(["spe", fig1_path, "--out", str(out)]) == 0
        blob = (out / "result.json").read_text()
        assert fig1_path not in blob
        assert str(tmp_path) not in blob


class TestEval:
    def test_uniform_policy_reaches_plain_values(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        assert main(["eval", fig1_path, "--out", str(out)]) == 0
        result = read_result(out)
        assert result["converged"] is True
        assert result["v"] == pytest.approx([2.0, 4.0], abs=1e-8)

    def test_max_iter_caps_row_count(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        assert main(
            ["eval", fig1_path, "--max-iter", "7", "--out", str(out)]
        ) == 0
        _, rows = read_trace(out)
        assert len(rows) == 7

    def test_inline_policy_table(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        argv = [
            "eval",
            fig1_path,
            "--policy",
            "[[0, 1], [0, 1]]",
            "--out",
            str(out),
        ]
        assert main(argv) == 0
        result = read_result(out)
        assert result["v"] == pytest.approx([2.0, 4.0], abs=1e-8)


class TestControlCommands:
    def test_safe_picks_first_action(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        assert main(["safe", fig1_path, "--out", str(out)]) == 0
        result = read_result(out)
        assert result["action_set_names"] == [["a1"], ["a1"]]
        assert result["v1"] == pytest.approx([2.0, 4.0], abs=1e-7)
        assert result["v2"] == pytest.approx([2.0, 4.0], abs=1e-7)

    def test_risky_picks_second_action(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        assert main(["risky", fig1_path, "--out", str(out)]) == 0
        result = read_result(out)
        assert result["action_set_names"] == [["a2"], ["a2"]]
        assert result["v1"] == pytest.approx([1.5, 3.5], abs=1e-7)
        assert result["v2"] == pytest.approx([2.5, 4.5], abs=1e-7)

    def test_unbalanced_input_exits_2(self, unbalanced_path, tmp_path):
        code = main(
            ["safe", unbalanced_path, "--out", str(tmp_path / "run")]
        )
        assert code == 2


class TestDbo:
    def test_step_trace_and_tail_means(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        argv = [
            "dbo",
            fig1_path,
            "--policy",
            "always:a1",
            "--k",
            "6",
            "--alpha",
            "0.3",
            "--out",
            str(out),
        ]
        assert main(argv) == 0
        header, rows = read_trace(out)
        assert header == ["step", "total_atoms", "max_entry_atoms"]
        assert len(rows) == 6
        result = read_result(out)
        entry = result["entries"]["x2_a1"]
        # deterministic self-loop: a single atom at 2 * (1 - 0.5^6) / 0.5
        assert entry["values"] == pytest.approx([3.9375])
        assert entry["avar_left"] == pytest.approx(3.9375)
        assert entry["avar_right"] == pytest.approx(3.9375)


class TestRobustVerify:
    def test_fig1_report(self, fig1_path, tmp_path, capsys):
        out = tmp_path / "run"
        argv = [
            "robust-verify",
            fig1_path,
            "--alpha",
            "0.5",
            "--policy",
            "always:a2",
            "--out",
            str(out),
        ]
        assert main(argv) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["n_candidates"] == 9
        assert printed["ties"] is False
        assert printed["max_deviation"] < 1e-7
        assert printed["per_state"]["x1"]["worst"] == pytest.approx(1.5)
        assert printed["per_state"]["x2"]["best"] == pytest.approx(4.5)
        result = read_result(out)
        kernel = np.asarray(result["kernel"])
        assert kernel.shape == (4, 2, 4)
        assert np.allclose(kernel.sum(axis=2), 1.0)

    def test_incoherent_policy_exits_2(self, unbalanced_path, tmp_path):
        code = main(
            ["robust-verify", unbalanced_path, "--out", str(tmp_path / "r")]
        )
        assert code == 2


class TestRiskyLp:
    def test_fig1_objective_and_dump(self, fig1_path, tmp_path, capsys):
        out = tmp_path / "run"
        dump = tmp_path / "lp.txt"
        argv = [
            "risky-lp",
            fig1_path,
            "--alpha",
            "0.5",
            "--dump-lp",
            str(dump),
            "--out",
            str(out),
        ]
        assert main(argv) == 0
        result = read_result(out)
        assert result["ok"] is True
        assert result["primal_objective"] == pytest.approx(1.25, abs=1e-7)
        assert result["gap"] <= 1e-7
        assert result["v1"] == pytest.approx([1.5, 3.5], abs=1e-7)
        text = dump.read_text()
        assert text.startswith("max ")
        # one constraint row per state/action/order triple
        assert text.count("<=") == 24
        assert "primal objective" in capsys.readouterr().out

    def test_explicit_weights(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        argv = [
            "risky-lp",
            fig1_path,
            "--nu0",
            "0.9,0.1",
            "--out",
            str(out),
        ]
        assert main(argv) == 0
        result = read_result(out)
        assert result["params"]["nu0"] == pytest.approx([0.9, 0.1])
        assert result["v1"] == pytest.approx([1.5, 3.5], abs=1e-7)


class TestAvar:
    def test_four_atom_example(self, tmp_path, capsys):
        dist = tmp_path / "dist.json"
        atoms = [
            {"value": -5, "prob": 0.2},
            {"value": -1, "prob": 0.4},
            {"value": 4, "prob": 0.2},
            {"value": 8, "prob": 0.2},
        ]
        dist.write_text(json.dumps(atoms))
        out = tmp_path / "run"
        argv = ["avar", str(dist), "--alpha", "0.7", "--out", str(out)]
        assert main(argv) == 0
        result = read_result(out)
        assert result["avar_left"] == pytest.approx(-1.0 / 0.7, abs=1e-12)
        assert result["avar_right"] == pytest.approx(2.0 / 0.3, abs=1e-12)
        assert "left avar" in capsys.readouterr().out

    def test_malformed_distribution_exits_1(self, tmp_path):
        dist = tmp_path / "dist.json"
        dist.write_text('{"value": 1}')
        assert main(["avar", str(dist), "--out", str(tmp_path / "r")]) == 1


class TestBundledCorpus:
    def test_files_reload_and_validate(self, tmp_path):
        paths = bundled_corpus(tmp_path / "corpus")
        assert len(paths) == 26
        for path in paths:
            mdp = load_mdp(path)
            assert is_balanced(mdp)
        fig1 = load_mdp(paths[0])
        sol = value_iteration(fig1, tol=1e-12)
        assert np.allclose(sol.q, [[2.0, 2.0], [4.0, 4.0]], atol=1e-9)


class TestErrorMapping:
    def test_missing_file_exits_1(self, tmp_path):
        code = main(["eval", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
        assert code == 1

    def test_garbage_json_exits_1(self, tmp_path):
        path = tmp_path / "garbage.json"
        path.write_text("not json")
        assert main(["spe", str(path), "--out", str(tmp_path / "r")]) == 1

    def test_unknown_action_name_exits_1(self, fig1_path, tmp_path):
        argv = [
            "spe",
            fig1_path,
            "--policy",
            "always:zzz",
            "--out",
            str(tmp_path / "r"),
        ]
        assert main(argv) == 1

    def test_bad_alpha_exits_2(self, fig1_path, tmp_path):
        argv = ["spe", fig1_path, "--alpha", "1.5", "--out", str(tmp_path / "r")]
        assert main(argv) == 2

    def test_gamma_override_applies(self, fig1_path, tmp_path):
        out = tmp_path / "run"
        argv = [
            "eval",
            fig1_path,
            "--policy",
            "always:a1",
            "--gamma",
            "0.25",
            "--out",
            str(out),
        ]
        assert main(argv) == 0
        result = read_result(out)
        # self-loop worth r / (1 - gamma) with the overridden discount
        assert result["v"] == pytest.approx([4.0 / 3.0, 8.0 / 3.0], abs=1e-8)
        assert result["params"]["gamma_override"] == 0.25
