import warnings

import numpy as np
import pytest
import scipy.linalg as sla

from dpgbem.bem import assemble_bem
from dpgbem.coupling import (CompatibilityWarning, Coupling, UnsupportedVariantError, assemble_c_ca,
                             assemble_c_hy, assemble_c_ls, assemble_c_sl, assemble_coupling,
                             build_h12_product, build_system, check_compatibility)
from dpgbem.dpg import assemble_ultraweak
from dpgbem.mesh import BoundaryMesh, adaptive_refine, lshape, uniform_refine
from dpgbem.problems import get_problem
from dpgbem.solvers import solve_direct
from dpgbem.spaces import (DofLayout, boundary_mass_s1, boundary_traces, interpolate_trial,
                           l2_errors, project_boundary_data)

VARIANTS = ["ls", "hy", "sl", "ca"]


def uniform_chain(levels):
    mesh = lshape()
    meshes = []
    for _ in range(levels):
        meshes.append(mesh)
        mesh = uniform_refine(mesh)
    return meshes, [BoundaryMesh.from_mesh(m) for m in meshes]


@pytest.fixture(scope="module")
def level1():
    meshes, chain = uniform_chain(2)
    bem = assemble_bem(chain[-1])
    return meshes[-1], bem, build_h12_product("ml", chain, bem)


# ----------------------------------------------------------------------
# H^1/2 products

def test_w_product_of_constant():
    bd = BoundaryMesh.from_mesh(uniform_refine(lshape()))
    P = build_h12_product("w", [bd])
    one = np.ones(bd.n)
    assert one @ P.P @ one == pytest.approx(bd.total_length**2, rel=1e-12)
    assert P.norm(one) == pytest.approx(bd.total_length, rel=1e-12)


def test_multilevel_single_level_is_l2():
    bd = BoundaryMesh.from_mesh(lshape())
    P = build_h12_product("ml", [bd])
    np.testing.assert_allclose(P.P, boundary_mass_s1(bd), atol=1e-15)


def test_products_are_spd_and_equivalent():
    _, chain = uniform_chain(4)
    rng = np.random.default_rng(5)
    bands = []
    for k in range(1, 4):
        sub = chain[:k + 1]
        Pml = build_h12_product("ml", sub).P
        Pw = build_h12_product("w", sub).P
        for P in (Pml, Pw):
            assert np.abs(P - P.T).max() == 0
            sla.cholesky(P)
        x = rng.standard_normal((20, sub[-1].n))
        ratio = np.einsum("ij,jk,ik->i", x, Pml, x) / np.einsum("ij,jk,ik->i", x, Pw, x)
        bands.append((ratio.min(), ratio.max()))
    # constants are recorded in the decisions ledger; only boundedness is asserted here
    lo = min(b[0] for b in bands)
    hi = max(b[1] for b in bands)
    assert 0 < lo <= hi < np.inf
    assert hi / lo < 50


def test_multilevel_rejects_adaptive_chain():
    mesh = lshape()
    coarse = BoundaryMesh.from_mesh(mesh)
    fine = BoundaryMesh.from_mesh(adaptive_refine(mesh, [0]))
    with pytest.raises(UnsupportedVariantError):
        build_h12_product("ml", [coarse, fine])
    build_h12_product("w", [coarse, fine])


# ----------------------------------------------------------------------
# coupling matrices

def test_ls_matrix_symmetric_psd(level1):
    _, bem, h12 = level1
    C, R = assemble_c_ls(bem, h12)
    assert np.abs(C - C.T).max() == 0
    assert np.linalg.eigvalsh(C).min() >= -1e-12 * np.abs(C).max()
    assert not (R @ np.zeros(2 * bem.n)).any()
    with pytest.raises(ValueError):
        assemble_c_ls(bem, build_h12_product("w", [BoundaryMesh.from_mesh(lshape())]))


def test_hy_constant_is_in_kernel_of_w_part(level1):
    _, bem, _ = level1
    C, _ = assemble_c_hy(bem)
    s = bem.vgamma_matrix("constant")
    z = np.concatenate([np.ones(bem.n), np.zeros(bem.n)])
    np.testing.assert_allclose(C @ z, s * (s @ z), atol=1e-12)
    sv = np.linalg.svd(np.outer(s, s), compute_uv=False)
    assert sv[1] <= 1e-12 * sv[0]


def test_sl_rows_of_dirichlet_test_functions_hold_only_rank_one(level1):
    _, bem, _ = level1
    C, _ = assemble_c_sl(bem)
    s = bem.vgamma_matrix("constant")
    n = bem.n
    np.testing.assert_allclose(C[:n], np.outer(s[:n], s), atol=1e-15)


def test_ca_is_sum_of_hy_and_sl(level1):
    _, bem, _ = level1
    s = bem.vgamma_matrix("constant")
    Cca, _ = assemble_c_ca(bem)
    Chy, _ = assemble_c_hy(bem)
    Csl, _ = assemble_c_sl(bem)
    assert np.abs(Cca - Chy - Csl + np.outer(s, s)).max() <= 1e-14 * np.abs(Cca).max()


@pytest.mark.parametrize("variant", VARIANTS)
def test_coupling_is_bilinear(level1, variant):
    _, bem, h12 = level1
    C, R = assemble_coupling(variant, bem, h12)
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((2, 2 * bem.n))
    np.testing.assert_allclose(C @ (2.5 * a + b), 2.5 * C @ a + C @ b, atol=1e-12)
    assert not (R @ np.zeros(2 * bem.n)).any()


def test_ls_needs_product(level1):
    _, bem, _ = level1
    with pytest.raises(ValueError):
        assemble_coupling("ls", bem)


@pytest.mark.parametrize("problem", ["smooth", "singular"])
@pytest.mark.parametrize("variant", VARIANTS)
def test_exact_solution_insertion_residual_decreases(problem, variant):
    data = get_problem(problem)
    meshes, chain = uniform_chain(5)
    res = []
    for k, mesh in enumerate(meshes):
        lay = DofLayout.from_mesh(mesh)
        bem = assemble_bem(chain[k])
        h12 = build_h12_product("ml", chain[:k + 1], bem)
        C, R = assemble_coupling(variant, bem, h12)
        uG, sG = boundary_traces(lay, interpolate_trial(mesh, lay, data.exact_u, data.exact_sigma))
        zdata = np.concatenate([project_boundary_data(chain[k], data.u0, "S1"),
                                project_boundary_data(chain[k], data.phi0, "P0")])
        res.append(np.linalg.norm(C @ np.concatenate([uG, sG]) - R @ zdata))
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-1] < 0.05 * res[0]


# ----------------------------------------------------------------------
# coupled system

def coupled(mesh, variant, problem="smooth", beta=1.0, chain=None, zero=False):
    data = get_problem(problem)
    lay = DofLayout.from_mesh(mesh)
    bd = BoundaryMesh.from_mesh(mesh)
    f = (lambda p: np.zeros(len(p))) if zero else data.f
    system = assemble_ultraweak(mesh, lay, f)
    bem = assemble_bem(bd)
    h12 = build_h12_product("ml", (chain or []) + [bd], bem)
    if zero:
        u0h = phi0h = np.zeros(bd.n)
    else:
        u0h = project_boundary_data(bd, data.u0, "S1")
        phi0h = project_boundary_data(bd, data.phi0, "P0")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CompatibilityWarning)
        return build_system(system, bem, variant, u0h, phi0h, beta, h12), lay


@pytest.mark.parametrize("variant", VARIANTS)
def test_zero_data_gives_zero_solution(variant):
    cs, _ = coupled(uniform_refine(lshape()), variant, zero=True)
    assert not cs.rhs.any()
    x, report = solve_direct(cs)
    assert not x.any() and report.converged


@pytest.mark.parametrize("variant", VARIANTS)
def test_boundary_support_of_coupling(variant):
    cs, lay = coupled(lshape(), variant)
    D = (cs.A - cs.A_dpg).toarray()
    mask = np.zeros(cs.n, bool)
    mask[lay.boundary_dofs] = True
    assert not D[~mask].any() and not D[:, ~mask].any()
    np.testing.assert_allclose(cs.matvec(np.ones(cs.n)), cs.A @ np.ones(cs.n), atol=1e-12)


def test_ls_system_symmetric():
    cs, _ = coupled(uniform_refine(lshape()), "ls")
    assert cs.is_symmetric()
    assert abs(cs.A - cs.A.T).max() <= 1e-12 * abs(cs.A).max()


def test_beta_changes_solution_but_not_limit():
    meshes, chain = uniform_chain(4)
    data = get_problem("smooth")
    errs = {1.0: [], 2.0: []}
    diffs = []
    for k, mesh in enumerate(meshes[1:], start=1):
        xs = {}
        for beta in errs:
            cs, lay = coupled(mesh, "ls", beta=beta, chain=chain[:k])
            xs[beta], _ = solve_direct(cs)
            errs[beta].append(l2_errors(mesh, lay, xs[beta], data.exact_u, data.exact_sigma)[0])
        diffs.append(np.abs(xs[1.0] - xs[2.0]).max())
    assert min(diffs) > 1e-8
    for e in errs.values():
        assert all(b < a for a, b in zip(e, e[1:]))


def test_compatibility_warning():
    mesh = lshape()
    lay = DofLayout.from_mesh(mesh)
    bd = BoundaryMesh.from_mesh(mesh)
    system = assemble_ultraweak(mesh, lay, lambda p: np.ones(len(p)))
    bem = assemble_bem(bd)
    with pytest.warns(CompatibilityWarning):
        build_system(system, bem, "hy", np.zeros(bd.n), np.zeros(bd.n))
    # data with int f + int phi0 = 0 pass silently
    phi = np.full(bd.n, -mesh.areas.sum() / bd.total_length)
    with warnings.catch_warnings():
        warnings.simplefilter("error", CompatibilityWarning)
        assert check_compatibility(system, bd, phi) < 1e-14
    assert Coupling("ca") is Coupling.CA


@pytest.mark.parametrize("variant", ["hy", "sl", "ca"])
def test_symmetric_part_probe_over_beta(variant, capsys):
    """Smallest eigenvalue of (A + A^T)/2 for small weights; positivity asserted at beta = 1 only."""
    meshes, chain = uniform_chain(2)
    probe = {}
    for beta in (1 / 8, 1 / 3, 1.0):
        lam = []
        for k, mesh in enumerate(meshes):
            A = coupled(mesh, variant, beta=beta, chain=chain[:k])[0].A.toarray()
            lam.append(np.linalg.eigvalsh(0.5 * (A + A.T)).min())
        probe[beta] = min(lam)
    with capsys.disabled():
        print(f"\n{variant} min eig of symmetric part: "
              + ", ".join(f"beta={b:.3f}: {l:.3e}" for b, l in probe.items()))
    assert probe[1.0] > 0
