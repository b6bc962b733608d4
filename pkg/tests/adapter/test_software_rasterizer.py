"""SoftwareRasterizerのテスト"""

import numpy as np
import pytest
from scipy import ndimage

from src.adapter.software_rasterizer import SoftwareRasterizer, render_depth
from src.domain.geometry import PoseSE3, project, reconstruct_point
from src.domain.mesh import TriangleMesh
from tests.mesh_factory import box_mesh, camera, sphere_mesh


def _triangle_at(z: float, size: float = 0.1) -> np.ndarray:
    return np.array([[-size, -size, z], [size, -size, z], [0.0, size, z]])


class TestSoftwareRasterizer:
    """SoftwareRasterizerのテストクラス"""

    def test_render_depth_主点を覆う三角形の場合_主点の奥行きが1mになること(self):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        mesh = TriangleMesh(_triangle_at(1.0), [[0, 1, 2]])
        intr = camera()

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        depth, silhouette = render_depth(mesh, PoseSE3.identity(), intr)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert depth.values[240, 320] == pytest.approx(1.0, abs=1e-12)
        assert silhouette.values[240, 320]

    def test_render_depth_何もない領域の場合_奥行き0で背景になること(self):
        mesh = TriangleMesh(_triangle_at(1.0), [[0, 1, 2]])
        depth, silhouette = render_depth(mesh, PoseSE3.identity(), camera())
        assert depth.values[0, 0] == 0.0
        assert not silhouette.values[0, 0]

    def test_render_depth_重なる三角形の場合_手前の奥行きが残ること(self):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        vertices = np.concatenate([_triangle_at(2.0, 0.2), _triangle_at(1.0)])
        far_first = TriangleMesh(vertices, [[0, 1, 2], [3, 4, 5]])
        near_first = TriangleMesh(vertices, [[3, 4, 5], [0, 1, 2]])
        intr = camera()

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        depth_a, _ = render_depth(far_first, PoseSE3.identity(), intr)
        depth_b, _ = render_depth(near_first, PoseSE3.identity(), intr)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert depth_a.values[240, 320] == pytest.approx(1.0, abs=1e-12)
        assert depth_b.values[240, 320] == pytest.approx(1.0, abs=1e-12)

    def test_rasterize_三角形番号_最も手前の三角形が記録されること(self):
        vertices = np.concatenate([_triangle_at(2.0, 0.2), _triangle_at(1.0)])
        mesh = TriangleMesh(vertices, [[0, 1, 2], [3, 4, 5]])
        result = SoftwareRasterizer().rasterize(mesh, PoseSE3.identity(), camera())
        assert result.triangle_ids[240, 320] == 1
        assert result.triangle_ids[0, 0] == -1

    def test_render_depth_球の場合_最小奥行きと面積が解析値と一致すること(self):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        radius, distance = 0.05, 0.5
        intr = camera(320, 320, 500.0)
        pose = PoseSE3.from_translation([0.0, 0.0, distance])

        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        depth, silhouette = render_depth(sphere_mesh(radius, level=3), pose, intr)

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        minimum = depth.values[silhouette.values].min()
        assert minimum == pytest.approx(distance - radius, abs=1e-3)
        disk_radius = intr.fx * radius / np.sqrt(distance**2 - radius**2)
        assert silhouette.area == pytest.approx(np.pi * disk_radius**2, rel=0.03)

    def test_render_depth_凸なメッシュの場合_シルエットが連結であること(self):
        pose = PoseSE3(
            np.array([[0.8, -0.6, 0.0], [0.6, 0.8, 0.0], [0.0, 0.0, 1.0]]), [0.01, 0.0, 0.5]
        )
        _, silhouette = render_depth(box_mesh(0.05), pose, camera())
        _, count = ndimage.label(silhouette.values)
        assert count == 1

    def test_render_depth_同じ入力の場合_結果がビット単位で一致すること(self):
        pose = PoseSE3.from_translation([0.0, 0.0, 0.4])
        first = render_depth(sphere_mesh(0.05, level=2), pose, camera())
        second = render_depth(sphere_mesh(0.05, level=2), pose, camera())
        assert first[0] == second[0]
        assert first[1] == second[1]

    def test_render_depth_カメラがメッシュ内部にある場合_正面の面の奥行きになること(self):
        # ------------------------------
        # 実行 (Act)
        # ------------------------------
        depth, silhouette = render_depth(box_mesh(0.05), PoseSE3.identity(), camera())

        # ------------------------------
        # 検証 (Assert)
        # ------------------------------
        assert silhouette.values[240, 320]
        assert depth.values[240, 320] == pytest.approx(0.05, abs=1e-9)

    def test_render_depth_カメラ後方の三角形の場合_描画されないこと(self):
        mesh = TriangleMesh(_triangle_at(-1.0), [[0, 1, 2]])
        _, silhouette = render_depth(mesh, PoseSE3.identity(), camera())
        assert silhouette.area == 0

    def test_render_depth_描画した点を復元する場合_メッシュ表面上の点になること(self):
        # ------------------------------
        # 準備 (Arrange)
        # ------------------------------
        intr = camera()
        pose = PoseSE3.from_translation([0.0, 0.0, 0.5])
        depth, silhouette = render_depth(box_mesh(0.05), pose, intr)
        rows, cols = np.nonzero(silhouette.values)

        # ------------------------------
        # 実行 (Act) & 検証 (Assert)
        # ------------------------------
        for row, col in zip(rows[::97], cols[::97]):
            point = reconstruct_point(intr, [col + 0.5, row + 0.5], depth.values[row, col])
            assert point[2] == pytest.approx(0.45, abs=1e-9)
            np.testing.assert_allclose(project(intr, point), [col + 0.5, row + 0.5], atol=1e-6)

    def test_SoftwareRasterizer作成_near_planeが0の場合_例外が発生すること(self):
        with pytest.raises(ValueError, match="near_plane"):
            SoftwareRasterizer(near_plane=0.0)
