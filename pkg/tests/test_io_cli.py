import json
import re
import struct
import subprocess
import sys

import numpy as np
import pytest

from sdot import (ParseError, SiteSet, ValidationError, compute_diagram,
                  damped_newton, export_cells, load_density, load_mesh,
                  load_points, write_obj, write_weights, write_xyz)
from sdot.cli import main

from helpers import unit_square, write_off

SQUARE_OFF = ("OFF\n4 2 0\n"
              "0 0 0\n1 0 0\n1 1 0\n0 1 0\n"
              "3 0 1 2\n3 0 2 3\n")


@pytest.fixture()
def square_off(tmp_path):
    p = tmp_path / "square.off"
    p.write_text(SQUARE_OFF)
    return str(p)


class TestMeshLoading:
    def test_off_round_trip(self, tmp_path):
        soup = unit_square()
        p = tmp_path / "m.off"
        write_off(p, soup.vertices, soup.triangles)
        back = load_mesh(str(p))
        assert np.array_equal(back.triangles, soup.triangles)
        assert np.allclose(back.vertices, soup.vertices)

    def test_off_without_magic_line(self, tmp_path):
        p = tmp_path / "m.off"
        p.write_text("4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n")
        assert load_mesh(str(p)).n_triangles == 2

    def test_off_truncated_vertices(self, tmp_path):
        p = tmp_path / "m.off"
        p.write_text("OFF\n4 2 0\n0 0 0\n1 0 0\n")
        with pytest.raises(ParseError):
            load_mesh(str(p))

    def test_off_bad_number_reports_line(self, tmp_path):
        p = tmp_path / "m.off"
        p.write_text("OFF\n3 1 0\n0 0 0\n1 0 zap\n0 1 0\n3 0 1 2\n")
        with pytest.raises(ParseError, match=r"m\.off:4"):
            load_mesh(str(p))

    def test_obj_negative_and_textured_indices(self, tmp_path):
        p = tmp_path / "m.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nvt 0 0\nvn 0 0 1\n"
                     "f 1/1/1 2/2/1 -1/3/1\n")
        soup = load_mesh(str(p))
        assert soup.triangles.tolist() == [[0, 1, 2]]

    def test_obj_zero_index_rejected(self, tmp_path):
        p = tmp_path / "m.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 0 1 2\n")
        with pytest.raises(ParseError, match="1-based"):
            load_mesh(str(p))

    def test_quad_fan_triangulated_with_warning(self, tmp_path, caplog):
        p = tmp_path / "m.off"
        p.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
        with caplog.at_level("WARNING"):
            soup = load_mesh(str(p))
        assert soup.n_triangles == 2
        assert any("fan" in r.message for r in caplog.records)

    def test_fan_can_be_disabled(self, tmp_path):
        p = tmp_path / "m.off"
        p.write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
        with pytest.raises(ParseError, match="non-triangle"):
            load_mesh(str(p), allow_fan=False)

    def test_unknown_extension(self, tmp_path):
        p = tmp_path / "m.stl"
        p.write_text("whatever")
        with pytest.raises(ValidationError, match="extension"):
            load_mesh(str(p))

    def test_density_sidecar(self, tmp_path, square_off):
        d = tmp_path / "rho.csv"
        d.write_text("1.0\n2.0\n2.0\n1.0\n")
        soup = load_mesh(square_off, str(d))
        assert soup.total_mass == pytest.approx(1.5, rel=1e-12)

    def test_density_count_mismatch(self, tmp_path, square_off):
        d = tmp_path / "rho.csv"
        d.write_text("1.0\n2.0\n")
        with pytest.raises(ValidationError, match="4 vertices"):
            load_mesh(square_off, str(d))

    def test_load_density_parses_lines(self, tmp_path):
        d = tmp_path / "rho.csv"
        d.write_text("# comment\n1.5\n2.5\n")
        assert load_density(str(d), 2).tolist() == [1.5, 2.5]


class TestPointLoading:
    def test_xyz_three_columns_uniform(self, tmp_path):
        p = tmp_path / "p.xyz"
        p.write_text("0 0 0\n1 0 0\n")
        sites = load_points(str(p))
        assert np.allclose(sites.masses, [0.5, 0.5])

    def test_xyz_mass_column_normalized(self, tmp_path):
        p = tmp_path / "p.xyz"
        p.write_text("0.25 0.5 0 3\n0.75 0.5 0 1\n")
        sites = load_points(str(p))
        assert sites.masses == pytest.approx([0.75, 0.25], abs=1e-15)

    def test_xyz_width_change_rejected(self, tmp_path):
        p = tmp_path / "p.xyz"
        p.write_text("0 0 0\n1 0 0 2.0\n")
        with pytest.raises(ParseError, match="width"):
            load_points(str(p))

    def test_duplicate_points_rejected(self, tmp_path):
        p = tmp_path / "p.xyz"
        p.write_text("0.5 0.5 0\n0.5 0.5 0\n")
        with pytest.raises(ValidationError, match="coincident"):
            load_points(str(p))

    def test_ply_ascii_with_mass(self, tmp_path):
        p = tmp_path / "p.ply"
        p.write_text("ply\nformat ascii 1.0\nelement vertex 2\n"
                     "property float x\nproperty float y\nproperty float z\n"
                     "property float mass\nend_header\n"
                     "0 0 0 3\n1 0 0 1\n")
        sites = load_points(str(p))
        assert sites.masses == pytest.approx([0.75, 0.25])

    def test_ply_binary_little_endian(self, tmp_path):
        p = tmp_path / "p.ply"
        header = ("ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
                  "property double x\nproperty double y\nproperty double z\n"
                  "end_header\n")
        payload = struct.pack("<6d", 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
        p.write_bytes(header.encode("ascii") + payload)
        sites = load_points(str(p))
        assert np.allclose(sites.positions, [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])

    def test_ply_requires_xyz(self, tmp_path):
        p = tmp_path / "p.ply"
        p.write_text("ply\nformat ascii 1.0\nelement vertex 1\n"
                     "property float x\nproperty float y\nend_header\n0 0\n")
        with pytest.raises(ParseError, match="'z'"):
            load_points(str(p))

    def test_ply_list_property_rejected(self, tmp_path):
        p = tmp_path / "p.ply"
        p.write_text("ply\nformat ascii 1.0\nelement vertex 1\n"
                     "property list uchar int rows\nend_header\n")
        with pytest.raises(ParseError, match="list"):
            load_points(str(p))


class TestWriters:
    def test_xyz_round_trip_is_exact(self, tmp_path, rng):
        pos = rng.normal(size=(5, 3))
        p = tmp_path / "p.xyz"
        write_xyz(str(p), pos)
        back = load_points(str(p))
        # 17 significant digits reproduce doubles exactly
        assert np.array_equal(back.positions, pos)

    def test_weights_round_trip_is_exact(self, tmp_path, rng):
        psi = rng.normal(size=7)
        p = tmp_path / "w.txt"
        write_weights(str(p), psi)
        back = np.array([float(line) for line in p.read_text().split()])
        assert np.array_equal(back, psi)

    def test_obj_round_trip(self, tmp_path):
        soup = unit_square()
        p = tmp_path / "m.obj"
        write_obj(str(p), soup.vertices, soup.triangles)
        back = load_mesh(str(p))
        assert np.array_equal(back.triangles, soup.triangles)
        assert np.array_equal(back.vertices, soup.vertices)


class TestExportCells:
    def _diagram(self, n=5, seed=8):
        rng = np.random.default_rng(seed)
        square = unit_square()
        pos = rng.uniform(0.1, 0.9, size=(n, 3)) * np.array([1.0, 1.0, 0.0])
        sites = SiteSet(pos)
        psi, _ = damped_newton(square, sites)
        return compute_diagram(square, sites, psi, want_geometry=True)

    def test_reimported_group_masses_match(self, tmp_path):
        diagram = self._diagram()
        p = tmp_path / "cells.obj"
        export_cells(diagram, str(p))
        # group areas equal cell masses for the unit density
        verts, group, areas = [], None, {}
        for line in p.read_text().splitlines():
            if line.startswith("g cell_"):
                group = int(line.split("_")[1])
            elif line.startswith("v "):
                verts.append([float(t) for t in line.split()[1:]])
            elif line.startswith("f "):
                a, b, c = (int(t) - 1 for t in line.split()[1:])
                v = np.asarray(verts)
                tri_area = 0.5 * np.linalg.norm(np.cross(v[b] - v[a], v[c] - v[a]))
                areas[group] = areas.get(group, 0.0) + tri_area
        for i, mass in enumerate(diagram.masses):
            assert areas[i] == pytest.approx(mass, abs=1e-9)

    def test_reimports_as_valid_soup(self, tmp_path):
        diagram = self._diagram()
        p = tmp_path / "cells.obj"
        export_cells(diagram, str(p))
        back = load_mesh(str(p))
        assert back.total_mass == pytest.approx(1.0, rel=1e-9)

    def test_export_is_deterministic(self, tmp_path):
        a = tmp_path / "a.obj"
        b = tmp_path / "b.obj"
        export_cells(self._diagram(), str(a))
        export_cells(self._diagram(), str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_requires_geometry(self, square):
        sites = SiteSet(np.array([[0.5, 0.5, 0.0]]))
        diagram = compute_diagram(square, sites, np.zeros(1))
        with pytest.raises(ValidationError, match="geometry"):
            export_cells(diagram, "/tmp/unused.obj")


@pytest.fixture()
def points_xyz(tmp_path):
    p = tmp_path / "pts.xyz"
    p.write_text("0.25 0.5 0 3\n0.75 0.5 0 1\n")
    return str(p)


def _strip_times(text: str) -> str:
    text = re.sub(r'"wall_time_s": [^,\n]+', '"wall_time_s": 0', text)
    return re.sub(r'"wall_time": [^,\n]+', '"wall_time": 0', text)


class TestCli:
    def test_solve_success(self, tmp_path, square_off, points_xyz):
        out = tmp_path / "report.json"
        cells = tmp_path / "cells.obj"
        weights = tmp_path / "w.txt"
        rc = main(["solve", "--mesh", square_off, "--points", points_xyz,
                   "--out", str(out), "--export-cells", str(cells),
                   "--weights", str(weights)])
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["schema"] == 1
        assert report["status"] == "ok"
        assert report["inputs"]["mesh"]["triangles"] == 2
        assert report["inputs"]["points"]["count"] == 2
        assert report["inputs"]["points"]["total_mass"] == pytest.approx(1.0)
        assert report["certificate"]["ok"] is True
        assert report["solve"]["converged"] is True
        assert "threads" not in report["arguments"]
        assert cells.exists() and weights.exists()
        # the solved split honors the 3:1 mass column
        psi = [float(x) for x in weights.read_text().split()]
        masses = compute_diagram(load_mesh(square_off),
                                 load_points(points_xyz), psi).masses
        assert masses == pytest.approx([0.75, 0.25], abs=1e-6)

    def test_report_identical_across_thread_counts(self, tmp_path, square_off,
                                                   points_xyz):
        texts = []
        for threads in ("1", "7"):
            out = tmp_path / f"r{threads}.json"
            rc = main(["solve", "--mesh", square_off, "--points", points_xyz,
                       "--out", str(out), "--threads", threads])
            assert rc == 0
            # only the out path differs between the invocations; normalize it
            text = _strip_times(out.read_text()).replace(str(out), "OUT")
            texts.append(text)
        assert texts[0] == texts[1]

    def test_usage_errors_exit_1(self, square_off):
        with pytest.raises(SystemExit) as info:
            main(["solve", "--mesh", square_off])
        assert info.value.code == 1
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 1

    def test_validation_errors_exit_2(self, tmp_path, square_off):
        bad = tmp_path / "bad.xyz"
        bad.write_text("0.5 0.5 0\n0.5 0.5 0\n")
        assert main(["solve", "--mesh", square_off,
                     "--points", str(bad)]) == 2
        assert main(["solve", "--mesh", str(tmp_path / "missing.off"),
                     "--points", str(bad)]) == 2

    def test_solver_failure_exits_3_with_partial_report(self, tmp_path):
        mesh = tmp_path / "pinch.off"
        mesh.write_text("OFF\n7 4 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n"
                        "2 1 0\n2 2 0\n1 2 0\n"
                        "3 0 1 2\n3 0 2 3\n3 2 4 5\n3 2 5 6\n")
        pts = tmp_path / "two.xyz"
        pts.write_text("0.5 0.5 0 6\n1.5 1.5 0 4\n")
        out = tmp_path / "fail.json"
        rc = main(["solve", "--mesh", str(mesh), "--points", str(pts),
                   "--out", str(out)])
        assert rc == 3
        report = json.loads(out.read_text())
        assert report["status"] == "error"
        assert any("component" in w for w in report["warnings"])
        assert report["solve"] is not None

    def test_quantize_writes_points(self, tmp_path, square_off):
        out = tmp_path / "q.xyz"
        rep = tmp_path / "q.json"
        rc = main(["quantize", "--mesh", square_off, "--n", "4",
                   "--iters", "3", "--out", str(out), "--report", str(rep)])
        assert rc == 0
        assert load_points(str(out)).n == 4
        report = json.loads(rep.read_text())
        h = report["cost_history"]
        assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))

    def test_remesh_writes_dual(self, tmp_path):
        mesh = tmp_path / "m.off"
        soup = unit_square()
        write_off(mesh, soup.vertices, soup.triangles)
        out = tmp_path / "dual.obj"
        rep = tmp_path / "r.json"
        rc = main(["remesh", "--mesh", str(mesh), "--out", str(out),
                   "--report", str(rep)])
        assert rc == 0
        report = json.loads(rep.read_text())
        assert report["dual_vertices"] == 4
        assert out.exists()

    def test_register_writes_transform(self, tmp_path, square_off, rng):
        pts = tmp_path / "cloud.xyz"
        cloud = rng.uniform(0.1, 0.9, size=(10, 3)) * np.array([1, 1, 0.0])
        write_xyz(str(pts), cloud)
        out = tmp_path / "tf.json"
        rc = main(["register", "--mesh", square_off, "--points", str(pts),
                   "--max-outer", "4", "--out", str(out)])
        assert rc == 0
        tf = json.loads(out.read_text())
        r = np.asarray(tf["rotation"])
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-10)
        assert len(tf["rms_history"]) == tf["iterations"]
        assert "wall_time" not in json.dumps(tf)

    def test_log_level_from_environment(self, square_off, points_xyz,
                                        tmp_path):
        env = {"SDOT_LOG": "debug", "PATH": "/usr/bin:/bin"}
        proc = subprocess.run(
            [sys.executable, "-m", "sdot.cli", "solve", "--mesh", square_off,
             "--points", points_xyz], capture_output=True, text=True, env=env)
        assert proc.returncode == 0
        quiet = subprocess.run(
            [sys.executable, "-m", "sdot.cli", "solve", "--mesh", square_off,
             "--points", points_xyz], capture_output=True, text=True,
            env={"SDOT_LOG": "warn", "PATH": "/usr/bin:/bin"})
        assert quiet.returncode == 0
        assert len(quiet.stderr) < len(proc.stderr)
