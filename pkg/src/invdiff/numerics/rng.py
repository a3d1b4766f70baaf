"""Counter-based splittable pseudorandom number generator.

The generator is a keyed SplitMix64: output ``i`` of the stream
``(seed, stream_id)`` is

    out_i = mix64(key + (i + 1) * GOLDEN)          (mod 2**64)
    key   = mix64(mix64(seed) ^ (stream_id * MULT + 1))

where ``mix64`` is the SplitMix64 finalizer (Steele, Lea & Flood 2014)

    x ^= x >> 30;  x *= 0xBF58476D1CE4E5B9
    x ^= x >> 27;  x *= 0x94D049BB133111EB
    x ^= x >> 31

and ``GOLDEN = 0x9E3779B97F4A7C15``, ``MULT = 0xD2B74407B1CE6E93``. All
arithmetic is modulo 2**64, so the sequence is reproducible bit-for-bit in
any language with 64-bit unsigned integers. Because each output depends
only on (key, counter), the stream supports random access and distinct
``stream_id`` values give statistically independent streams.

Derived values:

  * uniform double in [0, 1): ``(out >> 11) * 2**-53``
  * standard normal: inverse-CDF method. The uniform is mapped through
    Wichura's AS 241 PPND16 rational approximation of the normal quantile
    (double precision, |error| < 1e-15), using the strictly interior
    uniform ``((out >> 11) + 0.5) * 2**-53``. One 64-bit word per normal.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_STREAM_MULT = 0xD2B74407B1CE6E93
_U64 = np.uint64


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over a uint64 array (in place on a copy)."""
    x = x.copy()
    x ^= x >> 30
    x *= 0xBF58476D1CE4E5B9
    x ^= x >> 27
    x *= 0x94D049BB133111EB
    x ^= x >> 31
    return x


def _key_for(seed: int, stream_id: int) -> int:
    a = _mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=_U64))
    b = np.array([(stream_id * _STREAM_MULT + 1) & 0xFFFFFFFFFFFFFFFF], dtype=_U64)
    return int(_mix64(a ^ b)[0])


class Rng:
    """Deterministic random stream identified by (seed, stream_id).

    Instances are single-owner: drawing advances ``counter``. Independent
    parallel streams are obtained with :meth:`child`, never by sharing one
    instance.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.counter = 0
        self._key = _key_for(self.seed, self.stream_id)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def child(self, *ids: int) -> "Rng":
        """Independent stream derived from this stream's id and ``ids``.

        The child's stream_id hashes (parent stream_id, *ids) so disjoint
        id tuples give disjoint streams under the same seed.
        """
        if not ids:
            raise ValueError("child() needs at least one id")
        h = np.array([self.stream_id & 0xFFFFFFFFFFFFFFFF], dtype=_U64)
        for k in ids:
            h = _mix64((h * _STREAM_MULT) ^ ((int(k) * _GOLDEN + 1) & 0xFFFFFFFFFFFFFFFF))
        return Rng(self.seed, int(h[0]))

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words as a uint64 array."""
        if n < 0:
            raise ValueError("n must be non-negative")
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=_U64)
        self.counter += n
        return _mix64(np.array(self._key, dtype=_U64) + idx * _GOLDEN)

    def uniform(self, size=None):
        """Uniform float64 in [0, 1); scalar when ``size`` is None."""
        n, shape = _size_to_n(size)
        out = (self.u64(n) >> 11).astype(np.float64) * 2.0**-53
        return _reshape(out, size, shape)

    def normal(self, size=None):
        """Standard normal float64 via the documented inverse-CDF method."""
        n, shape = _size_to_n(size)
        u = ((self.u64(n) >> 11).astype(np.float64) + 0.5) * 2.0**-53
        return _reshape(normal_quantile(u), size, shape)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high).

        Computed as ``low + floor(uniform() * (high - low))``: deterministic
        and exactly reproducible; the floor bias is < 2**-53 * (high - low).
        """
        if high <= low:
            raise ValueError("require high > low")
        n, shape = _size_to_n(size)
        vals = low + np.floor(self.uniform(n) * (high - low)).astype(np.int64)
        return _reshape(vals, size, shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of arange(n) driven by this stream."""
        perm = np.arange(n)
        if n > 1:
            u = self.uniform(n - 1)
            for i in range(n - 1, 0, -1):
                j = int(u[n - 1 - i] * (i + 1))
                perm[i], perm[j] = perm[j], perm[i]
        return perm


def _size_to_n(size):
    if size is None:
        return 1, None
    if isinstance(size, (int, np.integer)):
        return int(size), (int(size),)
    shape = tuple(int(s) for s in size)
    n = 1
    for s in shape:
        n *= s
    return n, shape


def _reshape(arr, size, shape):
    if size is None:
        return arr[0].item()
    return arr.reshape(shape)


# AS 241 algorithm PPND16 (Wichura 1988): rational approximations of the
# standard normal quantile on three regions, |relative error| < 1e-15.
_A = np.array([
    3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3])
_B = np.array([
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
    2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
    5.2264952788528545610e3])
_C = np.array([
    1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
    3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4])
_D = np.array([
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
    1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
    1.05075007164441684324e-9])
_E = np.array([
    6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
    2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
    2.71155556874348757815e-5, 2.01033439929228813265e-7])
_F = np.array([
    1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
    7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
    2.04426310338993978564e-15])


def _polyval(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.full_like(x, coeffs[-1])
    for c in coeffs[-2::-1]:
        out = out * x + c
    return out


def normal_quantile(u) -> np.ndarray:
    """Inverse standard-normal CDF (AS 241 PPND16) for u in (0, 1)."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    q = u - 0.5
    out = np.empty_like(u)

    central = np.abs(q) <= 0.425
    r = 0.180625 - q[central] * q[central]
    out[central] = q[central] * _polyval(_A, r) / _polyval(_B, r)

    tail = ~central
    qt = q[tail]
    r = np.where(qt < 0, u[tail], 1.0 - u[tail])
    r = np.sqrt(-np.log(r))
    near = r <= 5.0
    rt = np.empty_like(r)
    rn = r[near] - 1.6
    rt[near] = _polyval(_C, rn) / _polyval(_D, rn)
    rf = r[~near] - 5.0
    rt[~near] = _polyval(_E, rf) / _polyval(_F, rf)
    out[tail] = np.where(qt < 0, -rt, rt)
    return out
