"""System model parameters and SNR bookkeeping."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any, Mapping, Optional

# Frame used by the reference SB-IDMA configuration; the data portion
# (n - n_pre) is what user densities are quoted against.
REFERENCE_FRAME_LENGTH = 30000
REFERENCE_PREAMBLE_LENGTH = 275

PARAM_KEYS = ("k", "n_c", "n0", "mu", "ebno_db", "K_a", "N")
_MU_CONSISTENCY_RTOL = 1e-9


class ParamError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


def sigma_from_snr(ebno_db, k, n_c):
    """Noise variance for a per-user Eb/N0 in dB.

    A user spends ``n_c`` unit-power symbols on ``k`` bits, so
    ``Eb = n_c / k``, ``N0 = 2 sigma^2`` and
    ``sigma^2 = n_c / (2 k 10^(ebno_db/10))``.
    """
    if k < 1:
        raise ParamError("k", f"must be >= 1, got {k}")
    if n_c < 1:
        raise ParamError("n_c", f"must be >= 1, got {n_c}")
    return n_c / (2.0 * k * 10.0 ** (ebno_db / 10.0))


def snr_from_sigma(sigma2, k, n_c):
    """Inverse of :func:`sigma_from_snr`."""
    if sigma2 <= 0:
        raise ParamError("sigma2", f"must be > 0, got {sigma2}")
    return 10.0 * math.log10(n_c / (2.0 * k * sigma2))


def mu_from_users(K_a, n=REFERENCE_FRAME_LENGTH, n_pre=REFERENCE_PREAMBLE_LENGTH):
    """User density of ``K_a`` users against the data portion of a frame."""
    return K_a / (n - n_pre)


def users_from_mu(mu, n=REFERENCE_FRAME_LENGTH, n_pre=REFERENCE_PREAMBLE_LENGTH):
    return mu * (n - n_pre)


def preamble_overhead_db(n_c, n_pre=REFERENCE_PREAMBLE_LENGTH):
    """Extra energy per bit spent on a unit-power preamble, in dB."""
    return 10.0 * math.log10((n_c + n_pre) / n_c)


def _count(raw, name, minimum=1):
    value = raw[name]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParamError(name, f"must be an integer, got {value!r}")
    if isinstance(value, float):
        if not value.is_integer():
            raise ParamError(name, f"must be an integer, got {value!r}")
        value = int(value)
    if value < minimum:
        raise ParamError(name, f"must be >= {minimum}, got {value}")
    return value


@dataclass(frozen=True)
class SystemParams:
    k: int
    n_c: int
    n0: int
    mu: float
    ebno_db: float = 0.0
    K_a: Optional[int] = None
    N: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise ParamError("k", f"must be >= 1, got {self.k}")
        if self.n_c < 1:
            raise ParamError("n_c", f"must be >= 1, got {self.n_c}")
        if self.n0 < 1:
            raise ParamError("n0", f"must be >= 1, got {self.n0}")
        if self.n_c % self.n0:
            raise ParamError("n_c", f"n_c={self.n_c} is not divisible by n0={self.n0}")
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ParamError("mu", f"must be > 0, got {self.mu}")
        if not math.isfinite(self.ebno_db):
            raise ParamError("ebno_db", f"must be finite, got {self.ebno_db}")
        if (self.K_a is None) != (self.N is None):
            raise ParamError("K_a" if self.K_a is None else "N", "K_a and N must be given together")
        if self.K_a is not None:
            if self.K_a < 1:
                raise ParamError("K_a", f"must be >= 1, got {self.K_a}")
            if self.N < 1:
                raise ParamError("N", f"must be >= 1, got {self.N}")
            frame_mu = self.K_a / (self.N * self.n0)
            if abs(frame_mu - self.mu) > _MU_CONSISTENCY_RTOL * frame_mu:
                raise ParamError("mu", f"mu={self.mu} inconsistent with K_a/(N*n0)={frame_mu}")

    @property
    def N_s(self) -> int:
        return self.n_c // self.n0

    @property
    def d_u(self) -> int:
        return self.N_s

    @property
    def sigma2(self) -> float:
        return sigma_from_snr(self.ebno_db, self.k, self.n_c)

    @property
    def d_bar_s(self) -> float:
        """Mean slot degree, ``mu * n_c``."""
        return self.mu * self.n_c

    @property
    def log2_M(self) -> int:
        return self.k

    @property
    def finite_frame(self) -> bool:
        return self.K_a is not None

    def with_snr(self, ebno_db) -> "SystemParams":
        return dataclasses.replace(self, ebno_db=float(ebno_db))

    def with_mu(self, mu) -> "SystemParams":
        return dataclasses.replace(self, mu=float(mu), K_a=None, N=None)

    def to_dict(self) -> dict:
        d = {"k": self.k, "n_c": self.n_c, "n0": self.n0, "mu": self.mu, "ebno_db": self.ebno_db}
        if self.finite_frame:
            d["K_a"] = self.K_a
            d["N"] = self.N
        return d

    def describe(self) -> dict:
        """All fields plus derived quantities, for output headers."""
        d = self.to_dict()
        d.update(N_s=self.N_s, sigma2=self.sigma2, d_bar_s=self.d_bar_s)
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def derive(raw: Mapping[str, Any]) -> SystemParams:
    """Build :class:`SystemParams` from a raw mapping.

    Accepts ``mu`` (asymptotic mode), ``K_a`` with ``N`` (finite frame), or
    both when consistent. Keys starting with ``_`` are treated as comments.
    """
    raw = {k: v for k, v in raw.items() if not str(k).startswith("_")}
    unknown = sorted(set(raw) - set(PARAM_KEYS))
    if unknown:
        raise ParamError(unknown[0], "unknown parameter")
    for name in ("k", "n_c", "n0"):
        if name not in raw:
            raise ParamError(name, "missing")
    k = _count(raw, "k")
    n_c = _count(raw, "n_c")
    n0 = _count(raw, "n0")
    if n_c % n0:
        raise ParamError("n_c", f"n_c={n_c} is not divisible by n0={n0}")

    K_a = N = None
    if "K_a" in raw or "N" in raw:
        if "K_a" not in raw or "N" not in raw:
            raise ParamError("K_a" if "K_a" not in raw else "N", "K_a and N must be given together")
        K_a = _count(raw, "K_a")
        N = _count(raw, "N")
    if "mu" in raw:
        mu = raw["mu"]
        if isinstance(mu, bool) or not isinstance(mu, (int, float)) or not mu > 0:
            raise ParamError("mu", f"must be a positive number, got {mu!r}")
        mu = float(mu)
    elif K_a is not None:
        mu = K_a / (N * n0)
    else:
        raise ParamError("mu", "missing (give mu, or K_a and N)")

    ebno_db = raw.get("ebno_db", 0.0)
    if isinstance(ebno_db, bool) or not isinstance(ebno_db, (int, float)):
        raise ParamError("ebno_db", f"must be a number, got {ebno_db!r}")
    return SystemParams(k=k, n_c=n_c, n0=n0, mu=mu, ebno_db=float(ebno_db), K_a=K_a, N=N)
