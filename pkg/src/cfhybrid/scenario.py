"""Network configuration, wrap-around geometry and the AP-UE service map.

The simulation area is a square torus: distances are measured to the nearest
of the 3x3 toroidal images, which removes boundary effects. An AP serves a UE
whenever their wrap-around distance does not exceed the service radius, which
yields the binary association mask that every downstream module respects.
"""

from dataclasses import dataclass, field, fields, replace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .util import ConfigError, derive_rng


@dataclass(frozen=True)
class Scenario:
    """Static network parameters. Validated eagerly on construction."""

    num_aps: int = 12
    antennas_per_ap: int = 32
    rf_chains: int = 8
    num_ues: int = 16
    pilot_len: int = 8
    coherence: int = 200
    ue_power: float = 0.2            # watts
    pilot_power: float = 0.2         # watts
    noise: float = 2.5118864315095823e-13   # watts (-96 dBm)
    rzf_reg: float = 1e-4
    serve_radius: float = 90.0       # meters
    conv_tol: float = 1e-3
    area_side: float = 200.0         # meters
    carrier_freq: float = 2.0        # GHz
    ap_height: float = 10.0          # meters
    rng_seed: int = 1
    shadow_sigma_db: float = 4.0
    shadow_decorr: float = 9.0       # meters
    angle_spread_deg: float = 10.0
    ap_grid: bool = False            # place APs on a jittered grid instead of uniform

    def __post_init__(self):
        counts = ["num_aps", "antennas_per_ap", "rf_chains", "num_ues", "pilot_len", "coherence"]
        for name in counts:
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
            if v < 1:
                raise ConfigError(f"{name} out of range (must be >= 1, got {v})")
        if self.rf_chains > self.antennas_per_ap:
            raise ConfigError(f"rf_chains out of range (L={self.rf_chains} exceeds N={self.antennas_per_ap})")
        if self.pilot_len > self.coherence:
            raise ConfigError(f"pilot_len out of range (tau={self.pilot_len} exceeds tau_c={self.coherence})")
        for name in ["ue_power", "pilot_power", "noise", "rzf_reg", "conv_tol",
                     "serve_radius", "area_side", "carrier_freq"]:
            v = getattr(self, name)
            if not v > 0:
                raise ConfigError(f"{name} out of range (must be > 0, got {v})")
        for name in ["ap_height", "shadow_sigma_db", "shadow_decorr", "angle_spread_deg"]:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} out of range (must be >= 0)")

    # short aliases used throughout the math-heavy modules
    @property
    def M(self):
        return self.num_aps

    @property
    def N(self):
        return self.antennas_per_ap

    @property
    def L(self):
        return self.rf_chains

    @property
    def K(self):
        return self.num_ues

    @property
    def tau(self):
        return self.pilot_len

    @property
    def overhead_factor(self):
        return 1.0 - self.pilot_len / self.coherence

    def asdict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Topology:
    """AP and UE coordinates in meters, all inside [0, area_side)."""

    ap_positions: np.ndarray   # (M, 2)
    ue_positions: np.ndarray   # (K, 2)
    area_side: float
    pinned: bool = False       # True when positions came from the config document

    def __post_init__(self):
        for name, pos in (("ap_positions", self.ap_positions), ("ue_positions", self.ue_positions)):
            p = np.asarray(pos, dtype=float)
            if p.ndim != 2 or p.shape[1] != 2:
                raise ConfigError(f"{name} must be an (n, 2) array")
            if np.any(p < 0) or np.any(p >= self.area_side):
                raise ConfigError(f"{name} out of range [0, {self.area_side})")
            object.__setattr__(self, name, p)


def wrap_distance(a, b, side):
    """Torus distance: minimum Euclidean distance over the 3x3 image grid.

    Broadcasts over leading axes; `a` and `b` have coordinate pairs on the
    last axis. Never exceeds side*sqrt(2)/2.
    """
    if not side > 0:
        raise ConfigError(f"area_side out of range (must be > 0, got {side})")
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    d = np.minimum(d, side - d)
    return np.sqrt(np.sum(d * d, axis=-1))


def wrap_displacement(src, dst, side):
    """Displacement vector dst - src of the nearest toroidal image of dst."""
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    return (d + side / 2.0) % side - side / 2.0


def cross_distances(points_a, points_b, side):
    """(len(a), len(b)) matrix of wrap distances."""
    return wrap_distance(np.asarray(points_a)[:, None, :], np.asarray(points_b)[None, :, :], side)


@dataclass(frozen=True)
class ServiceMap:
    """Binary AP-UE association: AP m serves UE k iff mask[m, k]."""

    mask: np.ndarray                       # (M, K) bool
    served_by: tuple = field(init=False)   # F_k: AP indices serving UE k
    serves: tuple = field(init=False)      # U_m: UE indices served by AP m

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "served_by", tuple(np.flatnonzero(mask[:, k]) for k in range(mask.shape[1])))
        object.__setattr__(self, "serves", tuple(np.flatnonzero(mask[m, :]) for m in range(mask.shape[0])))

    @property
    def num_aps(self):
        return self.mask.shape[0]

    @property
    def num_ues(self):
        return self.mask.shape[1]

    def expanded(self, L):
        """mask replicated L times per AP row: the (M*L, K) RF-chain-level mask."""
        return np.repeat(self.mask, L, axis=0)

    def complement(self, L):
        """RF-chain-level mask of the disregarded AP-UE pairs (ones minus expanded)."""
        return ~self.expanded(L)


def build_service_map(topology, scenario):
    """Associate each UE with every AP within the service radius (wrap metric)."""
    d = cross_distances(topology.ap_positions, topology.ue_positions, scenario.area_side)
    mask = d <= scenario.serve_radius
    uncovered = np.flatnonzero(~mask.any(axis=0))
    if uncovered.size:
        raise ConfigError(f"uncovered UE {uncovered[0]} (no AP within {scenario.serve_radius} m)")
    return ServiceMap(mask)


def _grid_shape(m):
    rows = max(1, int(np.floor(np.sqrt(m))))
    cols = int(np.ceil(m / rows))
    return rows, cols


def random_topology(scenario, rng=None):
    """Draw a topology: UEs uniform; APs uniform or on a jittered grid.

    The jittered grid keeps APs roughly evenly spread so that, with the
    default service radius, every UE is covered with high probability.
    """
    rng = rng if rng is not None else derive_rng(scenario.rng_seed, 0)
    side = scenario.area_side
    ue = rng.uniform(0.0, side, size=(scenario.num_ues, 2))
    if scenario.ap_grid:
        rows, cols = _grid_shape(scenario.num_aps)
        cw, ch = side / cols, side / rows
        centers = [((c + 0.5) * cw, (r + 0.5) * ch) for r in range(rows) for c in range(cols)]
        centers = np.asarray(centers[: scenario.num_aps])
        jitter = rng.uniform(-0.25, 0.25, size=centers.shape) * np.array([cw, ch])
        ap = (centers + jitter) % side
    else:
        ap = rng.uniform(0.0, side, size=(scenario.num_aps, 2))
    return Topology(ap_positions=ap, ue_positions=ue, area_side=side)


_TABLE_KEYS = {
    "shadowing": {"sigma_db": "shadow_sigma_db", "decorr_dist": "shadow_decorr"},
    "angular": {"spread_deg": "angle_spread_deg"},
    "placement": {"ap_grid": "ap_grid"},
}


def load_scenario(source, seed_override=None):
    """Parse a TOML scenario document into a validated (Scenario, Topology) pair.

    `source` is a path or a TOML string. Top-level keys map 1:1 onto Scenario
    fields; the optional [shadowing], [angular] and [placement] tables tune
    the channel model; an optional [positions] table pins AP/UE coordinates,
    otherwise they are drawn from the scenario seed.
    """
    text = source
    if "\n" not in str(source) and str(source).endswith(".toml"):
        with open(source, "rb") as f:
            raw = tomllib.load(f)
    else:
        try:
            raw = tomllib.loads(str(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"scenario parse failure: {exc}") from exc
    kwargs = {}
    positions = raw.pop("positions", None)
    for table, mapping in _TABLE_KEYS.items():
        sub = raw.pop(table, {})
        for key, val in sub.items():
            if key not in mapping:
                raise ConfigError(f"unknown key {table}.{key} in scenario document")
            kwargs[mapping[key]] = val
    field_names = {f.name for f in fields(Scenario)}
    for key, val in raw.items():
        if key not in field_names:
            raise ConfigError(f"unknown key {key} in scenario document")
        kwargs[key] = val
    scenario = Scenario(**kwargs)
    if seed_override is not None:
        scenario = replace(scenario, rng_seed=int(seed_override))
    if positions is not None:
        try:
            topo = Topology(np.asarray(positions["aps"], dtype=float),
                            np.asarray(positions["ues"], dtype=float), scenario.area_side,
                            pinned=True)
        except KeyError as exc:
            raise ConfigError(f"positions table must define both 'aps' and 'ues' ({exc})") from exc
        if topo.ap_positions.shape[0] != scenario.num_aps:
            raise ConfigError("positions.aps inconsistent with num_aps")
        if topo.ue_positions.shape[0] != scenario.num_ues:
            raise ConfigError("positions.ues inconsistent with num_ues")
    else:
        topo = random_topology(scenario)
    return scenario, topo
