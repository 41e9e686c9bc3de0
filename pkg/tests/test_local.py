import math
from dataclasses import replace

import numpy as np
import pytest

from msgfem.coefficient import benchmark_source, cell_values, generate_multiscale
from msgfem.decomposition import Subdomain, build_cover, build_pu
from msgfem.errors import ConfigError
from msgfem.fem import Box, build_mesh, energy_norm
from msgfem.local import (
    BasisFormatError,
    DegenerateDomainError,
    RequestError,
    best_local_error,
    build_extension,
    build_local,
    load_basis,
    membership_residual,
    nwidth,
    save_basis,
    solve_eigenproblem,
    solve_particular,
)
from msgfem.validation import source_l2_norm


def _setup(n=16, N=2, ell=2, eps=0.1, seed=5):
    mesh = build_mesh(n)
    cells = cell_values(generate_multiscale(seed, 1 / 8, 100.0), mesh)
    cover = build_cover(mesh, N=N, ell=ell)
    pu = build_pu(cover, mesh)
    return mesh, cells, cover, pu


def _local(i=0, **kwargs):
    mesh, cells, cover, pu = _setup(**kwargs)
    eps = kwargs.get("eps", 0.1)
    return build_local(mesh, cells, eps, cover, i, pu)


def test_node_sets_partition_the_oversampling_domain():
    local = _local(i=0)

    frame = local.frame
    constrained = local.dofs.constrained
    assert frame.num_nodes == constrained.size + local.interior.size + local.boundary.size
    assert not set(local.boundary) & set(constrained)
    # corner subdomain: ω* = [0, 12]², the boundary set is the two inner edges
    assert local.boundary.size == 2 * 13 - 1 - 2


def test_tiny_oversampling_domain_is_degenerate():
    mesh, cells, cover, pu = _setup(n=8)
    cell = Box(0, 1, 0, 1)
    tiny = replace(cover, subdomains=(Subdomain(0, cell, cell, cell, math.inf),))

    with pytest.raises(DegenerateDomainError):
        build_local(mesh, cells, 0.1, tiny, 0, pu)


def test_particular_solution_meets_its_equation():
    local = _local(i=3)

    particular = solve_particular(local, benchmark_source())

    assert particular.residual <= 1e-10
    assert np.all(particular.psi[local.dofs.constrained] == 0.0)
    assert particular.restriction(local).size == local.subdomain.omega.num_nodes


def test_zero_trace_particular_vanishes_on_the_inner_boundary():
    local = _local(i=3)

    natural = solve_particular(local, benchmark_source())
    zero = solve_particular(local, benchmark_source(), bc="zero")

    assert zero.residual <= 1e-10
    assert np.all(zero.psi[local.boundary] == 0.0)
    assert np.all(zero.psi[local.dofs.constrained] == 0.0)
    assert np.abs(natural.psi[local.boundary]).max() > 0.0


def test_unknown_particular_condition_is_a_config_error():
    with pytest.raises(ConfigError, match="robin"):
        solve_particular(_local(i=0), benchmark_source(), bc="robin")


@pytest.mark.parametrize("bc", ["natural", "zero"])
@pytest.mark.parametrize("eps", [1.0, 0.1, 1e-4])
def test_particular_energy_is_bounded_by_the_source(eps, bc):
    mesh, cells, cover, pu = _setup(eps=eps)
    f = benchmark_source()

    for i in range(len(cover)):
        local = build_local(mesh, cells, eps, cover, i, pu)
        psi = solve_particular(local, f, bc=bc).psi

        limit = source_l2_norm(mesh, f, region=local.frame)
        assert energy_norm(local.op_star, psi) <= limit * (1 + 1e-8)


def test_extensions_are_discrete_harmonic():
    local = _local(i=1)
    ext = build_extension(local)
    rng = np.random.default_rng(0)

    x = ext.extend(rng.standard_normal((ext.dim, 4)))

    assert membership_residual(local, x) <= 1e-10


def test_schur_complement_is_the_energy_of_the_extension():
    local = _local(i=2)
    ext = build_extension(local)
    b = np.random.default_rng(1).standard_normal(ext.dim)

    via_schur = float(b @ ext.schur @ b)
    via_energy = energy_norm(local.op_star, ext.extend(b)) ** 2

    assert via_schur == pytest.approx(via_energy, rel=1e-10)


def test_eigenpairs_are_ordered_and_harmonic():
    local = _local(i=0)
    ext = build_extension(local)

    basis = solve_eigenproblem(local, ext, n=6)

    assert basis.count == 6
    assert np.all(np.diff(basis.eigenvalues) <= 0.0)
    assert np.all(basis.eigenvalues >= 0.0)
    assert membership_residual(local, basis.vectors) <= 1e-10


def test_eigenvectors_are_schur_orthonormal():
    local = _local(i=0)
    ext = build_extension(local)

    basis = solve_eigenproblem(local, ext, n=5)

    gram = basis.vectors.T @ (local.op_star @ basis.vectors)
    assert np.allclose(gram, np.eye(5), atol=1e-9)


def test_nwidth_is_the_next_eigenvalue_root():
    local = _local(i=0)
    basis = solve_eigenproblem(local, build_extension(local), n=4)

    assert nwidth(basis, 3) == pytest.approx(np.sqrt(basis.eigenvalues[3]))
    with pytest.raises(RequestError):
        nwidth(basis, 4)


def test_requesting_more_than_the_harmonic_space_holds_fails():
    local = _local(i=0)
    ext = build_extension(local)

    with pytest.raises(RequestError):
        solve_eigenproblem(local, ext, n=ext.dim + 1)


def test_single_subdomain_has_an_empty_harmonic_space():
    mesh, cells, cover, pu = _setup(n=8, N=1, ell=0)
    local = build_local(mesh, cells, 0.1, cover, 0, pu)
    ext = build_extension(local)

    basis = solve_eigenproblem(local, ext, n=3)

    assert ext.dim == 0
    assert basis.count == 0


def test_best_error_never_grows_with_more_vectors():
    mesh, cells, cover, pu = _setup()
    local = build_local(mesh, cells, 0.1, cover, 0, pu)
    particular = solve_particular(local, benchmark_source())
    basis = solve_eigenproblem(local, build_extension(local), n=8)
    target = np.random.default_rng(2).standard_normal(local.frame.num_nodes)

    errors = [best_local_error(local, target, particular.psi, basis.vectors[:, :k]) for k in range(9)]

    assert all(b <= a * (1 + 1e-10) for a, b in zip(errors, errors[1:]))


def test_basis_file_round_trips(tmp_path):
    local = _local(i=0)
    basis = solve_eigenproblem(local, build_extension(local), n=3)
    path = tmp_path / "basis_0000.bin"

    save_basis(path, basis, subdomain=0, eps=0.1, ell=2)
    meta, loaded = load_basis(path)

    assert meta == {"subdomain": 0, "eps": 0.1, "ell": 2, "n": 3, "dofs": local.frame.num_nodes}
    assert np.array_equal(loaded.eigenvalues, basis.eigenvalues)
    assert np.array_equal(loaded.vectors, basis.vectors)


def test_truncated_basis_file_is_rejected(tmp_path):
    local = _local(i=0)
    basis = solve_eigenproblem(local, build_extension(local), n=2)
    path = tmp_path / "basis_0000.bin"
    save_basis(path, basis, subdomain=0, eps=0.1, ell=2)
    path.write_bytes(path.read_bytes()[:-16])

    with pytest.raises(BasisFormatError):
        load_basis(path)
