"""Shared builders for the test suite."""

import numpy as np
import pytest

from wavekit.coeffs import KPPSystem, Mode, PeriodicField


def const(v, n=1, T=1.0, L=None):
    return PeriodicField.constant(v, n=n, T=T, L=L)


def scalar_system(a=1.0, q=0.0, l=1.0, b=1.0, l_field=None, a_field=None, q_field=None):
    """u_t - (a u_x)_x + q u_x = l u - b u^2 with unit periods."""
    af = a_field if a_field is not None else const(a)
    qf = q_field if q_field is not None else const(q)
    lf = l_field if l_field is not None else const(l)
    return KPPSystem(1, 1, (((af,),),), ((qf,),), ((lf,),), ((const(b),),))


def system_2x2(l11=0.0, l12=2.0, l21=2.0, l22=0.0, b=1.0,
               l11_field=None, l12_field=None):
    f11 = l11_field if l11_field is not None else const(l11)
    f12 = l12_field if l12_field is not None else const(l12)
    return KPPSystem(
        2, 1,
        (((const(1.0),),), ((const(1.0),),)),
        ((const(0.0),), (const(0.0),)),
        ((f11, f12), (const(l21), const(l22))),
        ((const(b), const(b)), (const(b), const(b))),
    )


def time_periodic_l(mean=1.0, amp=1.0):
    """l(t) = mean + amp sin(2 pi t)."""
    return PeriodicField(1.0, (1.0,), (Mode(0, (0,), mean, 0.0), Mode(1, (0,), 0.0, amp)))


def space_periodic_l(mean=1.0, amp=0.5):
    """l(x) = mean + amp cos(2 pi x)."""
    return PeriodicField(1.0, (1.0,), (Mode(0, (0,), mean, 0.0), Mode(0, (1,), amp, 0.0)))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240801)
