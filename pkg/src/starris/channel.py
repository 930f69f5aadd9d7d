"""Scenario generation, STAR-RIS effective channels and IQI transceiver chains."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .wl_algebra import (
    WidelyLinearMap,
    real_decompose,
    real_vector,
    wl_real_decompose,
)

SET_KINDS = ("T_U", "T_I", "T_N")
MODES = ("ES", "MS")


@dataclass
class ScenarioConfig:
    """Geometry, propagation and hardware constants of one scenario.

    Distances are in meters, powers in dB/dBm. Path loss of a link at
    distance ``d`` is ``ref_db + 10 * exponent * log10(d)``.
    """

    L: int = 2
    K: int = 2
    M: int = 2
    N_BS: int = 2
    N_u: int = 2
    N_RIS: int = 4
    cell_radius: float = 100.0
    user_min_distance: float = 10.0
    ris_distance: float = 100.0
    pathloss_ref_db_direct: float = 30.0
    pathloss_exp_direct: float = 3.5
    pathloss_ref_db_ris: float = 30.0
    pathloss_exp_ris: float = 2.2
    direct_extra_loss_db: float = 0.0
    rician_k_db: float = 3.0
    noise_power_dbm: float = -94.0
    transmit_fraction: float = 0.0
    iqi_tx_amplitude: float = 1.15
    iqi_tx_phase_deg: float = 8.0
    iqi_rx_amplitude: float = 1.15
    iqi_rx_phase_deg: float = 8.0
    min_link_distance: float = 1.0

    def validate(self):
        for name in ("L", "K", "M", "N_BS", "N_u", "N_RIS"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("cell_radius", "user_min_distance", "ris_distance", "min_link_distance"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.user_min_distance > self.cell_radius:
            raise ValueError("user_min_distance exceeds cell_radius")
        if not 0.0 <= self.transmit_fraction <= 1.0:
            raise ValueError("transmit_fraction must lie in [0, 1]")
        if self.iqi_tx_amplitude <= 0 or self.iqi_rx_amplitude <= 0:
            raise ValueError("IQI amplitude imbalance must be positive")

    @property
    def noise_power(self) -> float:
        """Noise power in watts."""
        return 10.0 ** ((self.noise_power_dbm - 30.0) / 10.0)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class NetworkTopology:
    L: int
    K: int
    M: int
    N_BS: int
    N_u: int
    N_RIS: int
    bs_pos: np.ndarray  # (L, 2)
    user_pos: np.ndarray  # (L, K, 2)
    ris_pos: np.ndarray  # (M, 2)
    transmit_side: np.ndarray  # (L, K, M) bool


@dataclass
class ChannelSet:
    """Complex channels of the network.

    ``G_user[l, k, m]`` is RIS ``m`` -> user ``(l, k)`` (N_u x N_RIS),
    ``G_bs[m, i]`` is BS ``i`` -> RIS ``m`` (N_RIS x N_BS) and
    ``F[l, k, i]`` is the direct BS ``i`` -> user ``(l, k)`` link.
    """

    G_user: np.ndarray
    G_bs: np.ndarray
    F: np.ndarray
    transmit_side: np.ndarray

    @property
    def dims(self):
        L, K, M, N_u, N_RIS = self.G_user.shape
        return L, K, M, self.F.shape[-1], N_u, N_RIS

    def without_ris(self) -> "ChannelSet":
        return ChannelSet(
            np.zeros_like(self.G_user), np.zeros_like(self.G_bs), self.F.copy(), self.transmit_side.copy()
        )


@dataclass
class IQIParams:
    """Per-chain amplitude (``g``) and phase (``phi``, radians) imbalance."""

    tx_amplitude: np.ndarray  # (L, N_BS)
    tx_phase: np.ndarray
    rx_amplitude: np.ndarray  # (L, K, N_u)
    rx_phase: np.ndarray
    noise_power: float

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "IQIParams":
        L, K = cfg.L, cfg.K
        return cls(
            np.full((L, cfg.N_BS), cfg.iqi_tx_amplitude),
            np.full((L, cfg.N_BS), math.radians(cfg.iqi_tx_phase_deg)),
            np.full((L, K, cfg.N_u), cfg.iqi_rx_amplitude),
            np.full((L, K, cfg.N_u), math.radians(cfg.iqi_rx_phase_deg)),
            cfg.noise_power,
        )

    @classmethod
    def ideal(cls, L, K, N_BS, N_u, noise_power) -> "IQIParams":
        return cls(
            np.ones((L, N_BS)), np.zeros((L, N_BS)), np.ones((L, K, N_u)), np.zeros((L, K, N_u)), noise_power
        )


@dataclass
class RISConfig:
    """Reflection/transmission coefficients of every STAR-RIS element.

    ``reflect_only`` is the mode-switching mask (True: element only
    reflects, False: element only transmits); it is ignored in ES mode.
    """

    theta_r: np.ndarray  # (M, N_RIS) complex
    theta_t: np.ndarray
    set_kind: str = "T_I"
    mode: str = "ES"
    reflect_only: np.ndarray | None = None

    def __post_init__(self):
        if self.set_kind not in SET_KINDS:
            raise ValueError(f"unknown feasibility set {self.set_kind!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown STAR-RIS mode {self.mode!r}")
        self.theta_r = np.asarray(self.theta_r, dtype=complex)
        self.theta_t = np.asarray(self.theta_t, dtype=complex)
        if self.mode == "MS" and self.reflect_only is None:
            raise ValueError("MS mode needs a reflect_only mask")
        if self.reflect_only is not None:
            self.reflect_only = np.asarray(self.reflect_only, dtype=bool)

    def copy(self, **changes) -> "RISConfig":
        kw = dict(
            theta_r=self.theta_r.copy(),
            theta_t=self.theta_t.copy(),
            set_kind=self.set_kind,
            mode=self.mode,
            reflect_only=None if self.reflect_only is None else self.reflect_only.copy(),
        )
        kw.update(changes)
        return RISConfig(**kw)

    def violations(self) -> dict:
        """Largest violation of each feasibility condition (0 when satisfied)."""
        pw = np.abs(self.theta_r) ** 2 + np.abs(self.theta_t) ** 2
        out = {"budget": float(np.max(pw - 1.0, initial=0.0))}
        if self.set_kind in ("T_I", "T_N"):
            out["unit"] = float(np.max(np.abs(pw - 1.0), initial=0.0))
        if self.set_kind == "T_N":
            plus = np.abs(self.theta_r + self.theta_t) ** 2 - 1.0
            minus = np.abs(self.theta_r - self.theta_t) ** 2 - 1.0
            out["phase"] = float(max(np.max(plus, initial=0.0), np.max(minus, initial=0.0)))
        if self.mode == "MS":
            masked = np.where(self.reflect_only, np.abs(self.theta_t), np.abs(self.theta_r))
            out["mask"] = float(np.max(masked, initial=0.0))
        return out

    def is_feasible(self, tol: float = 1e-9) -> bool:
        v = self.violations()
        return all(val <= tol for key, val in v.items() if key != "mask") and v.get("mask", 0.0) == 0.0


def _steering(n: int, angle: float) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle))


def _gain(d, ref_db, exponent, extra_db=0.0):
    return 10.0 ** (-(ref_db + extra_db) / 10.0) * np.power(d, -exponent)


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate_scenario(seed: int, cfg: ScenarioConfig):
    """Draw a topology and its channels; deterministic in ``(seed, cfg)``.

    RIS links are Rician with half-wavelength ULA line-of-sight components,
    direct links are Rayleigh.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    L, K, M = cfg.L, cfg.K, cfg.M
    N_BS, N_u, N_RIS = cfg.N_BS, cfg.N_u, cfg.N_RIS
    R = cfg.cell_radius

    bs_pos = np.stack([2.0 * R * np.arange(L), np.zeros(L)], axis=1)
    per_cell = int(math.ceil(M / L))
    ris_pos = np.empty((M, 2))
    for m in range(M):
        ang = 0.5 * np.pi + 2.0 * np.pi * (m // L) / per_cell
        ris_pos[m] = bs_pos[m % L] + cfg.ris_distance * np.array([np.cos(ang), np.sin(ang)])

    # uniform in the annulus [user_min_distance, R]
    r_in, r_out = cfg.user_min_distance, R
    radius = np.sqrt(rng.uniform(r_in**2, r_out**2, size=(L, K)))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(L, K))
    user_pos = bs_pos[:, None, :] + np.stack([radius * np.cos(phase), radius * np.sin(phase)], axis=-1)

    n_t = int(round(cfg.transmit_fraction * K))
    transmit_side = np.zeros((L, K, M), dtype=bool)
    for l in range(L):
        chosen = rng.permutation(K)[:n_t]
        transmit_side[l, chosen, :] = True

    kf = 10.0 ** (cfg.rician_k_db / 10.0)
    w_los, w_nlos = np.sqrt(kf / (1.0 + kf)), np.sqrt(1.0 / (1.0 + kf))
    dmin = cfg.min_link_distance

    def angle(src, dst):
        v = dst - src
        return math.atan2(v[1], v[0])

    G_bs = np.empty((M, L, N_RIS, N_BS), dtype=complex)
    for m in range(M):
        for i in range(L):
            d = max(np.linalg.norm(ris_pos[m] - bs_pos[i]), dmin)
            a = angle(bs_pos[i], ris_pos[m])
            los = np.outer(_steering(N_RIS, a), _steering(N_BS, a).conj())
            nlos = _cn(rng, (N_RIS, N_BS))
            G_bs[m, i] = np.sqrt(_gain(d, cfg.pathloss_ref_db_ris, cfg.pathloss_exp_ris)) * (w_los * los + w_nlos * nlos)

    G_user = np.empty((L, K, M, N_u, N_RIS), dtype=complex)
    F = np.empty((L, K, L, N_u, N_BS), dtype=complex)
    for l in range(L):
        for k in range(K):
            u = user_pos[l, k]
            for m in range(M):
                d = max(np.linalg.norm(u - ris_pos[m]), dmin)
                a = angle(ris_pos[m], u)
                los = np.outer(_steering(N_u, a), _steering(N_RIS, a).conj())
                nlos = _cn(rng, (N_u, N_RIS))
                G_user[l, k, m] = np.sqrt(_gain(d, cfg.pathloss_ref_db_ris, cfg.pathloss_exp_ris)) * (
                    w_los * los + w_nlos * nlos
                )
            for i in range(L):
                d = max(np.linalg.norm(u - bs_pos[i]), dmin)
                g = _gain(d, cfg.pathloss_ref_db_direct, cfg.pathloss_exp_direct, cfg.direct_extra_loss_db)
                F[l, k, i] = np.sqrt(g) * _cn(rng, (N_u, N_BS))

    topo = NetworkTopology(L, K, M, N_BS, N_u, N_RIS, bs_pos, user_pos, ris_pos, transmit_side)
    return topo, ChannelSet(G_user, G_bs, F, transmit_side)


def effective_channel(ch: ChannelSet, ris: RISConfig, l: int, k: int, i: int) -> np.ndarray:
    """``F + sum_m G_user diag(theta) G_bs`` with the user's side coefficient."""
    H = ch.F[l, k, i].copy()
    for m in range(ch.G_user.shape[2]):
        theta = ris.theta_t[m] if ch.transmit_side[l, k, m] else ris.theta_r[m]
        H += (ch.G_user[l, k, m] * theta) @ ch.G_bs[m, i]
    return H


def iqi_gammas(g, phi, dim: int) -> WidelyLinearMap:
    """Imbalance model ``G1 = (1 + g e^{j phi}) / 2``, ``G2 = (1 - g e^{-j phi}) / 2``.

    ``g`` and ``phi`` may be scalars or per-chain arrays of length ``dim``.
    """
    g = np.broadcast_to(np.asarray(g, dtype=float), (dim,))
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (dim,))
    if np.any(g <= 0):
        raise ValueError("amplitude imbalance must be positive")
    return WidelyLinearMap(np.diag((1.0 + g * np.exp(1j * phi)) / 2.0), np.diag((1.0 - g * np.exp(-1j * phi)) / 2.0))


def end_to_end_real_channel(H, tx: WidelyLinearMap, rx: WidelyLinearMap) -> np.ndarray:
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    if rx.shape[1] != H.shape[0] or H.shape[1] != tx.shape[0]:
        raise ValueError(f"cannot chain rx {rx.shape}, H {H.shape}, tx {tx.shape}")
    return wl_real_decompose(rx) @ real_decompose(H) @ wl_real_decompose(tx)


def noise_covariance(rx: WidelyLinearMap, noise_power: float) -> np.ndarray:
    """Real-domain covariance of proper white noise seen through the RX chain."""
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    w = wl_real_decompose(rx)
    return 0.5 * noise_power * (w @ w.T)


@dataclass
class ThetaLayout:
    """Free complex RIS coefficients and their place in a real vector.

    Entry ``j`` is ``(m, n, side)`` with side 0 for reflection, 1 for
    transmission; the real vector stores ``[Re c_0, Im c_0, Re c_1, ...]``.
    """

    entries: np.ndarray  # (n_free, 3) int

    @classmethod
    def for_config(cls, ris: RISConfig) -> "ThetaLayout":
        M, N = ris.theta_r.shape
        rows = []
        for m in range(M):
            for n in range(N):
                if ris.mode == "MS":
                    rows.append((m, n, 0 if ris.reflect_only[m, n] else 1))
                else:
                    rows.append((m, n, 0))
                    rows.append((m, n, 1))
        return cls(np.asarray(rows, dtype=int).reshape(-1, 3))

    @property
    def size(self) -> int:
        return 2 * len(self.entries)

    def to_vector(self, ris: RISConfig) -> np.ndarray:
        m, n, s = self.entries.T
        c = np.where(s == 0, ris.theta_r[m, n], ris.theta_t[m, n])
        return real_vector(c).reshape(2, -1).T.ravel()

    def from_vector(self, x: np.ndarray, template: RISConfig) -> RISConfig:
        out = template.copy()
        c = x[0::2] + 1j * x[1::2]
        m, n, s = self.entries.T
        refl = s == 0
        out.theta_r[m[refl], n[refl]] = c[refl]
        out.theta_t[m[~refl], n[~refl]] = c[~refl]
        return out

    def element_pairs(self):
        """Per element ``(m, n)``, the vector offsets of its reflection and
        transmission coefficients (``-1`` where the coefficient is fixed)."""
        pairs = {}
        for j, (m, n, s) in enumerate(self.entries):
            pairs.setdefault((int(m), int(n)), [-1, -1])[int(s)] = 2 * j
        keys = sorted(pairs)
        return keys, np.asarray([pairs[key] for key in keys], dtype=int).reshape(-1, 2)


@dataclass
class Network:
    """Channels plus transceiver impairments: everything rates depend on."""

    channels: ChannelSet
    iqi: IQIParams
    W_tx: np.ndarray = field(init=False)  # (L, 2N_BS, 2N_BS)
    W_rx: np.ndarray = field(init=False)  # (L, K, 2N_u, 2N_u)
    C_n: np.ndarray = field(init=False)  # (L, K, 2N_u, 2N_u)

    def __post_init__(self):
        L, K, M, N_BS, N_u, N_RIS = self.channels.dims
        self.tx_maps = [iqi_gammas(self.iqi.tx_amplitude[l], self.iqi.tx_phase[l], N_BS) for l in range(L)]
        self.rx_maps = [
            [iqi_gammas(self.iqi.rx_amplitude[l, k], self.iqi.rx_phase[l, k], N_u) for k in range(K)]
            for l in range(L)
        ]
        self.W_tx = np.stack([wl_real_decompose(t) for t in self.tx_maps])
        self.W_rx = np.stack([np.stack([wl_real_decompose(r) for r in row]) for row in self.rx_maps])
        self.C_n = np.stack(
            [np.stack([noise_covariance(r, self.iqi.noise_power) for r in row]) for row in self.rx_maps]
        )

    @property
    def dims(self):
        return self.channels.dims

    def real_channels(self, ris: RISConfig) -> np.ndarray:
        """``Hr[l, k, i]``: real-domain end-to-end channel BS ``i`` -> user ``(l, k)``."""
        L, K, M, N_BS, N_u, N_RIS = self.dims
        ch = self.channels
        theta = np.where(ch.transmit_side[..., None], ris.theta_t[None, None], ris.theta_r[None, None])
        # (L, K, M, N_u, N_RIS) * theta -> sum over m, n against G_bs (M, L_i, N_RIS, N_BS)
        H = ch.F + np.einsum("lkmun,lkmn,minb->lkiub", ch.G_user, theta, ch.G_bs)
        Hr = np.empty((L, K, L, 2 * N_u, 2 * N_BS))
        Hr[..., :N_u, :N_BS] = H.real
        Hr[..., :N_u, N_BS:] = -H.imag
        Hr[..., N_u:, :N_BS] = H.imag
        Hr[..., N_u:, N_BS:] = H.real
        return np.einsum("lkuv,lkivw,iwb->lkiub", self.W_rx, Hr, self.W_tx)

    def theta_affine(self, ris: RISConfig, layout: ThetaLayout) -> np.ndarray:
        """Affine map from the free coefficient vector to the real channels.

        Returns ``A`` of shape ``(L, K, L, 1 + layout.size, 2N_u, 2N_BS)``
        with ``Hr = A[..., 0, :, :] + sum_p x_p A[..., 1 + p, :, :]``.
        """
        L, K, M, N_BS, N_u, N_RIS = self.dims
        ch = self.channels
        fixed = layout.from_vector(np.zeros(layout.size), ris)
        base = self.real_channels(fixed)
        m, n, s = layout.entries.T
        # outer product g_user[:, n] g_bs[n, :] for every free coefficient
        O = np.einsum("lkju,jib->lkijub", _user_cols(ch.G_user, m, n), ch.G_bs[m, :, n, :])
        side_ok = ch.transmit_side[:, :, m] == (s == 1)[None, None, :]  # (L, K, n_free)
        O = O * side_ok[:, :, None, :, None, None]
        n_free = len(layout.entries)
        A = np.empty((L, K, L, 1 + 2 * n_free, 2 * N_u, 2 * N_BS))
        A[:, :, :, 0] = base
        for part, z in ((0, O), (1, 1j * O)):
            Zr = np.empty(z.shape[:-2] + (2 * N_u, 2 * N_BS))
            Zr[..., :N_u, :N_BS] = z.real
            Zr[..., :N_u, N_BS:] = -z.imag
            Zr[..., N_u:, :N_BS] = z.imag
            Zr[..., N_u:, N_BS:] = z.real
            A[:, :, :, 1 + part :: 2] = np.einsum("lkuv,lkijvw,iwb->lkijub", self.W_rx, Zr, self.W_tx)
        return A


def _user_cols(G_user, m, n):
    """``G_user[l, k, m_j, :, n_j]`` for every free coefficient ``j``: (L, K, n_free, N_u)."""
    return np.moveaxis(G_user[:, :, m, :, n], 0, 2)
