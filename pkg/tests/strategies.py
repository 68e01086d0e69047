import numpy as np
from hypothesis import strategies as st

from condensate.model import ModelParams, RateSpec


@st.composite
def rate_specs(draw, max_A=5):
    A = draw(st.integers(1, max_A))
    rate = st.floats(0.1, 5.0)
    q = [draw(rate) for _ in range(A)]
    r0 = draw(rate)
    r = [r0] + [qk * draw(st.floats(1.0, 3.0)) for qk in q]
    return RateSpec(A=A, q=tuple(q), r=tuple(r))


@st.composite
def control_points(draw, A):
    w = np.array([draw(st.floats(0.0, 1.0)) for _ in range(A + 1)])
    if w.sum() == 0:
        w[-1] = 1.0
    return (w / w.sum())[:A]


@st.composite
def params_and_y(draw, max_A=5):
    spec = draw(rate_specs(max_A))
    rho = draw(st.floats(0.05, 3.0 * spec.A + 1))
    return ModelParams(spec, rho), draw(control_points(spec.A))
