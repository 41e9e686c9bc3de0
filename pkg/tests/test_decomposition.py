import csv
import math

import numpy as np
import pytest

from msgfem.decomposition import (
    PartitionError,
    build_cover,
    build_pu,
    dump_pu_csv,
    overlap_stats,
)
from msgfem.errors import ConfigError
from msgfem.fem import Box, build_mesh


def test_cover_boxes_and_numbering():
    mesh = build_mesh(16)

    cover = build_cover(mesh, N=4, ell=2)

    assert len(cover) == 16
    # row-major, x fastest
    assert cover[1].core == Box(4, 8, 0, 4)
    assert cover[4].core == Box(0, 4, 4, 8)
    assert cover[5].omega == Box(2, 10, 2, 10)
    assert cover[5].omega_star == Box(0, 12, 0, 12)


def test_subdomains_are_clipped_at_the_boundary():
    mesh = build_mesh(16)

    cover = build_cover(mesh, N=4, ell=3)

    assert cover[0].omega == Box(0, 6, 0, 6)
    assert cover[0].omega_star == Box(0, 9, 0, 9)


def test_oversampling_distance_is_measured_away_from_the_boundary():
    mesh = build_mesh(16)

    cover = build_cover(mesh, N=4, ell=3)

    for sub in cover.subdomains:
        assert sub.delta_star == pytest.approx(3 * mesh.h)


def test_single_subdomain_has_no_oversampling_distance():
    cover = build_cover(build_mesh(8), N=1, ell=2)

    assert cover[0].omega == cover[0].omega_star == Box(0, 8, 0, 8)
    assert math.isinf(cover[0].delta_star)
    assert (cover.kappa, cover.kappa_star) == (1, 1)


def test_overlap_multiplicities():
    cover = build_cover(build_mesh(16), N=4, ell=2)

    # two layers of overlap into a 4-cell core: 2 per axis; ω* reaches 4 cells, 3 per axis
    assert overlap_stats(cover) == (4, 9)
    assert (cover.kappa, cover.kappa_star) == (4, 9)


@pytest.mark.parametrize("N", [0, 3])
def test_n_must_divide_the_grid(N):
    with pytest.raises(PartitionError):
        build_cover(build_mesh(16), N=N, ell=2)


@pytest.mark.parametrize("overlap", [0, 3])
def test_overlap_must_fit_between_cores(overlap):
    with pytest.raises(PartitionError):
        build_cover(build_mesh(8), N=4, ell=1, overlap=overlap)


def test_negative_oversampling_is_rejected():
    with pytest.raises(ConfigError):
        build_cover(build_mesh(8), N=2, ell=-1)


@pytest.mark.parametrize("N,ell", [(2, 0), (4, 3), (8, 1)])
def test_partition_sums_to_one(N, ell):
    mesh = build_mesh(32)
    cover = build_cover(mesh, N=N, ell=ell)

    pu = build_pu(cover, mesh)

    assert pu.partition_error() <= 1e-13
    assert all(np.all((chi >= 0.0) & (chi <= 1.0)) for chi in pu.chi)


def test_partition_vanishes_on_interior_subdomain_edges():
    mesh = build_mesh(16)
    cover = build_cover(mesh, N=4, ell=2)
    pu = build_pu(cover, mesh)

    for sub, chi in zip(cover.subdomains, pu.chi):
        ii, jj = sub.omega.node_indices()
        on_edge = (ii == sub.omega.i0) | (ii == sub.omega.i1) | (jj == sub.omega.j0) | (jj == sub.omega.j1)
        interior_edge = on_edge & ~mesh.boundary_mask(sub.omega)
        assert np.all(chi[interior_edge] == 0.0)


def test_partition_is_flat_on_the_core_centre():
    mesh = build_mesh(16)
    cover = build_cover(mesh, N=2, ell=2)
    pu = build_pu(cover, mesh)

    chi = pu.global_vector(0)

    # node (4, 4) is 4 cells from the neighbouring cores, beyond their 2-layer ramps
    assert chi[4 * 17 + 4] == 1.0
    assert chi[12 * 17 + 12] == 0.0


def test_single_subdomain_partition_is_one():
    mesh = build_mesh(8)
    pu = build_pu(build_cover(mesh, N=1, ell=0), mesh)

    assert np.all(pu.chi[0] == 1.0)
    assert pu.gradient_bound == 0.0


def test_gradient_is_bounded_by_the_overlap_width():
    mesh = build_mesh(32)
    cover = build_cover(mesh, N=4, ell=2, overlap=2)

    pu = build_pu(cover, mesh)

    assert 0.0 < pu.gradient_bound * mesh.h <= math.sqrt(2.0) / 2 + 1e-12


def test_partition_dump_has_one_column_per_subdomain(tmp_path):
    mesh = build_mesh(8)
    pu = build_pu(build_cover(mesh, N=2, ell=1), mesh)
    path = tmp_path / "pu.csv"

    dump_pu_csv(pu, path)

    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["node_id", "chi_0", "chi_1", "chi_2", "chi_3"]
    assert len(rows) == 1 + mesh.num_nodes
    assert sum(float(v) for v in rows[1 + 4 * 9 + 4][1:]) == pytest.approx(1.0)
