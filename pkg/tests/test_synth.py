import numpy as np
import pytest

from fima import synth
from fima.deconv import convolve_circular


def test_instance_determinism():
    a = synth.synthetic_instance(5, 64, "motion-line", 0.02, 11)
    b = synth.synthetic_instance(5, 64, "motion-line", 0.02, 11)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_instance_noise_statistics():
    z, b, y = synth.synthetic_instance(9, 64, "gaussian", 0.01, 9)
    resid = y - convolve_circular(z, b)
    assert 0.009 <= resid.std() <= 0.011


def test_delta_kernel_noiseless_observation_equals_truth():
    z, b, y = synth.synthetic_instance(2, 64, "delta", 0.0, 9)
    assert np.max(np.abs(y - z)) <= 1e-12


def test_kernels_live_on_the_simplex():
    for kind in synth.KERNEL_KINDS:
        k = synth.synthetic_kernel(11, kind, seed=4)
        assert k.shape == (11, 11)
        assert np.all(k >= 0)
        assert abs(k.sum() - 1.0) <= 1e-12


def test_image_range_and_shape():
    img = synth.synthetic_image(48, 12)
    assert img.shape == (48, 48)
    assert img.min() >= 0.1499999
    assert img.max() <= 0.8500001


def test_parameter_validation():
    with pytest.raises(ValueError):
        synth.synthetic_instance(0, 16, "gaussian", 0.01, 9)
    with pytest.raises(ValueError):
        synth.synthetic_instance(0, 64, "gaussian", 0.2, 9)
    with pytest.raises(ValueError):
        synth.synthetic_kernel(8, "gaussian")
    with pytest.raises(ValueError):
        synth.synthetic_kernel(9, "box")
