import numpy as np
import pytest
from numpy.testing import assert_allclose

from traceforms.chain import beurling_deny
from traceforms.errors import DegenerateGrid, EmptyTraceSet
from traceforms.lattice import BoxGrid, ball_and_shell_predicate, lattice_chain_from_kernel
from traceforms.sphere import prototype_trace_energy, stable_jump_matrix
from traceforms.trace import feller_for, trace_form, verify_identities


def prototype_grid():
    """3d box covering the unit ball at the origin and a shell around
    (3,0,0), nine sites per axis."""
    return BoxGrid(shape=(9, 9, 9), h=0.75, origin=(-1.5, -1.5, -1.5))


class TestGrid:
    def test_1d_laplacian_stencil(self):
        grid = BoxGrid(shape=(5,), h=1.0, origin=(0.0,))
        chain, sub, pts = lattice_chain_from_kernel(
            grid, ("laplacian",), lambda p: p[0] < 1.0)
        Q = chain.Q
        off = Q - np.diag(np.diag(Q))
        expected = np.zeros((5, 5))
        for i in range(4):
            expected[i, i + 1] = expected[i + 1, i] = 0.5
        assert_allclose(off, expected)
        assert chain.conservative

    def test_site_mass(self):
        grid = BoxGrid(shape=(3, 3), h=0.5, origin=(0.0, 0.0))
        chain, _, _ = lattice_chain_from_kernel(grid, ("laplacian",),
                                                lambda p: p[0] == 0.0)
        assert_allclose(chain.m, 0.25)

    def test_degenerate_grid(self):
        with pytest.raises(DegenerateGrid):
            BoxGrid(shape=(1, 3), h=1.0, origin=(0.0, 0.0))
        with pytest.raises(DegenerateGrid):
            BoxGrid(shape=(3, 3), h=0.0, origin=(0.0, 0.0))

    def test_empty_trace_set(self):
        grid = BoxGrid(shape=(3,), h=1.0, origin=(0.0,))
        with pytest.raises(EmptyTraceSet):
            lattice_chain_from_kernel(grid, ("laplacian",), lambda p: False)
        with pytest.raises(EmptyTraceSet):
            lattice_chain_from_kernel(grid, ("laplacian",), lambda p: True)

    def test_stable_rates(self):
        grid = BoxGrid(shape=(4,), h=1.0, origin=(0.0,))
        chain, _, pts = lattice_chain_from_kernel(
            grid, ("stable", 1.0, 2.5), lambda p: p[0] == 0.0)
        # A(1,-1) = 1/pi; neighbours at distance 1 and 2 within cutoff
        assert_allclose(chain.Q[0, 1], (1 / np.pi) / 1.0**2, rtol=1e-13)
        assert_allclose(chain.Q[0, 2], (1 / np.pi) / 2.0**2, rtol=1e-13)
        assert chain.Q[0, 3] == 0.0

    def test_cutoff_below_spacing_rejected(self):
        grid = BoxGrid(shape=(4,), h=1.0, origin=(0.0,))
        with pytest.raises(ValueError):
            lattice_chain_from_kernel(grid, ("stable", 1.0, 0.5), lambda p: p[0] == 0)

    def test_mixed_kernel_adds(self):
        grid = BoxGrid(shape=(4,), h=1.0, origin=(0.0,))
        lap, _, _ = lattice_chain_from_kernel(grid, ("laplacian",), lambda p: p[0] == 0)
        sta, _, _ = lattice_chain_from_kernel(grid, ("stable", 1.0, 2.5), lambda p: p[0] == 0)
        mix, _, _ = lattice_chain_from_kernel(grid, ("mixed", 1.0, 2.5), lambda p: p[0] == 0)
        assert_allclose(mix.Q, lap.Q + sta.Q, rtol=1e-13)


class TestPrototypeInstance:
    def test_geometry(self):
        grid = prototype_grid()
        chain, sub, pts = lattice_chain_from_kernel(
            grid, ("mixed", 1.0, 1.0),
            ball_and_shell_predicate(1.0, (3.0, 0.0, 0.0), (0.25, 1.75)))
        # solid ball: origin plus its six axis neighbours
        ball = [i for i in sub.F if np.linalg.norm(pts[i]) <= 1.0]
        shell = [i for i in sub.F if i not in ball]
        assert len(ball) == 7
        assert len(shell) > 0
        assert chain.conservative
        # shell sites exclude the shell centre itself
        centers = [i for i in range(chain.n) if np.allclose(pts[i], [3.0, 0.0, 0.0])]
        assert centers and centers[0] not in sub.F

    def test_identity_suite_on_lattice(self):
        grid = prototype_grid()
        chain, sub, _ = lattice_chain_from_kernel(
            grid, ("mixed", 1.0, 1.0),
            ball_and_shell_predicate(1.0, (3.0, 0.0, 0.0), (0.25, 1.75)))
        rng = np.random.default_rng(7)
        u = rng.standard_normal(len(sub.F))
        rep = verify_identities(chain, sub, u)
        assert rep.max_residual() <= 1e-10

    def test_prototype_energy_matches_trace_form(self):
        grid = prototype_grid()
        pred = ball_and_shell_predicate(1.0, (3.0, 0.0, 0.0), (0.25, 1.75))
        chain, sub, pts = lattice_chain_from_kernel(grid, ("mixed", 1.0, 1.0), pred)
        _, _, feller = feller_for(chain, sub)
        J, kappa = beurling_deny(chain)
        iF = np.array(sub.F)
        dec = trace_form(chain, sub)

        ball_mask = np.array([np.linalg.norm(pts[i]) <= 1.0 for i in sub.F])
        phi = ball_mask.astype(float)  # 1 on the ball, 0 on the shell
        assembled = prototype_trace_energy(
            phi, feller.U, feller.V,
            jump=J[np.ix_(iF, iF)], kill=kappa[iF])
        target = dec.form(phi)
        assert abs(assembled - target) / max(abs(target), 1.0) <= 1e-10

        # a generic phi matches too, the lattice jump data playing the role
        # of the local-plus-stable pair kernel
        rng = np.random.default_rng(8)
        phi2 = rng.standard_normal(len(sub.F))
        assembled2 = prototype_trace_energy(
            phi2, feller.U, feller.V, jump=J[np.ix_(iF, iF)], kill=kappa[iF])
        assert abs(assembled2 - dec.form(phi2)) / max(abs(dec.form(phi2)), 1.0) <= 1e-10

    def test_stable_jump_matrix_mirrors_lattice_rates(self):
        # the continuum assembly helper reproduces the lattice jump measure
        # of a pure-stable chain up to the 1/2 in J = m Q / 2
        grid = BoxGrid(shape=(4, 4), h=1.0, origin=(0.0, 0.0))
        chain, _, pts = lattice_chain_from_kernel(grid, ("stable", 0.5, 2.0),
                                                  lambda p: p[0] == 0.0)
        J, _ = beurling_deny(chain)
        K = stable_jump_matrix(pts, chain.m, 0.5, cutoff=2.0)
        assert_allclose(K, 2.0 * J, rtol=1e-12)
