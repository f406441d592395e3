import numpy as np
import pytest
import scipy.integrate as si
from hypothesis import given, settings
from hypothesis import strategies as st

from neumkac.errors import DomainError
from neumkac.kernels import CosineProfile, KacKernel, QuarticProfile, neumann_kernel


def test_profile_is_probability_density(kernel):
    mass, _ = si.quad(kernel.profile, -1, 1, limit=200)
    assert abs(mass - 1.0) < 1e-12
    assert kernel.profile(0.3) == kernel.profile(-0.3)
    assert kernel.profile(1.2) == 0.0


def test_profile_derivative_vanishes_at_support_edge(kernel):
    assert abs(kernel.profile.derivative(1.0)) < 1e-14
    assert abs(kernel.profile.derivative(-1.0)) < 1e-14


def test_deep_interior_diagonal_equals_profile_peak(kernel):
    # both reflected images fall outside the support
    assert neumann_kernel(kernel, [0.0], [0.0]) == pytest.approx(1.0)
    assert neumann_kernel(kernel, [-0.2, 0.3], [-0.2, 0.3], d=2) == \
        pytest.approx(kernel.profile(0.0))


def test_wall_diagonal_doubles(kernel):
    # at u1 = -1 the left reflection coincides with the point itself
    assert neumann_kernel(kernel, [-1.0], [-1.0]) == pytest.approx(
        2.0 * kernel.profile(0.0))
    assert neumann_kernel(kernel, [1.0], [1.0]) == pytest.approx(
        2.0 * kernel.profile(0.0))


@pytest.mark.parametrize("u1", [-1.0, -0.95, -0.4, 0.0, 0.63, 0.98, 1.0])
def test_reflected_kernel_mass_one(kernel, u1):
    mass, err = si.quad(lambda v: kernel.neumann(u1, v), -1, 1, limit=400)
    assert abs(mass - 1.0) < max(1e-10, 10 * err)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_reflected_kernel_symmetric(u, v):
    k = KacKernel()
    assert k.neumann(u, v) == pytest.approx(k.neumann(v, u), abs=1e-12)


def test_kernel_derivative_matches_finite_differences(kernel):
    u = np.linspace(-0.999, 0.999, 23)
    v = 0.37
    h = 1e-6
    fd = (kernel.neumann(u + h, v) - kernel.neumann(u - h, v)) / (2 * h)
    assert np.max(np.abs(fd - kernel.neumann_d1(u, v))) < 1e-7


def test_domain_validation(kernel):
    with pytest.raises(DomainError):
        neumann_kernel(kernel, [1.5], [0.0])
    with pytest.raises(DomainError):
        neumann_kernel(kernel, [0.0, 1.0], [0.0, 0.0], d=2)


def test_quartic_profile_also_normalized():
    k = KacKernel(QuarticProfile())
    mass, _ = si.quad(k.profile, -1, 1, limit=200)
    assert abs(mass - 1.0) < 1e-12
    mass, err = si.quad(lambda v: k.neumann(-0.9, v), -1, 1, limit=400)
    assert abs(mass - 1.0) < max(1e-10, 10 * err)


def test_slab_matrix_matches_pointwise(kernel):
    N = 7
    K = kernel.slab_matrix(N)
    a, b = 3, 11
    assert K[a, b] == pytest.approx(
        kernel.neumann((a - N) / N, (b - N) / N), abs=1e-15)
    assert np.allclose(K, K.T)
