"""Analytical cost model: memory footprint, search-operation counts, disk
time, and energy for eight index layouts.

All memory figures are bytes, times are milliseconds (converted to seconds
only inside energy_joules), currents are amperes, and energies are joules.
Graph-bearing rows use the level-zero mass p0 = 1/ln(M), which requires
M >= 3 so that 1 - p0 stays positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

# timing and electrical constants
T_OP_MS = 1.94e-4  # one distance computation
T_SEEK_MS = 0.025
T_CMD_MS = 0.015
T_TRANSFER_MS_PER_BYTE = 3.6e-7
I_SEARCH_A = 2300e-6
I_DISK_A = 800e-6
VOLT_MIN = 3.8
VOLT_MAX = 4.2
VOLT_DEFAULT = 4.0

FLOAT_BYTES = 4
ID_BYTES = 8


class Algorithm(str, Enum):
    IVF = "ivf"
    IVFPQ = "ivfpq"
    HNSW = "hnsw"
    HNSWPQ = "hnswpq"
    IVF_DISK = "ivf-disk"
    IVFPQ_DISK = "ivfpq-disk"
    IVF_HNSW = "ivf-hnsw"
    ECOVECTOR = "ecovector"


RAM_ALGORITHMS = frozenset(
    {Algorithm.IVF, Algorithm.IVFPQ, Algorithm.HNSW, Algorithm.HNSWPQ}
)
DISK_ALGORITHMS = frozenset(
    {Algorithm.IVF_DISK, Algorithm.IVFPQ_DISK, Algorithm.IVF_HNSW, Algorithm.ECOVECTOR}
)


@dataclass(frozen=True)
class CostModelParams:
    """Workload and structure parameters shared by every row.

    n: corpus size, n_c: cluster count, d: dimension, n_probe: probed lists,
    m_h: degree of a monolithic RAM graph, m_prime: degree of the centroid
    and partition graphs, m_pq/nbits: product-quantization shape,
    ef_h/ef_c/ef_l: beam widths (monolithic, centroid stage, partition stage).
    """

    n: int
    n_c: int
    d: int
    n_probe: int
    m_h: int = 8
    m_prime: int = 8
    m_pq: int = 8
    nbits: int = 8
    ef_h: int = 64
    ef_c: int = 32
    ef_l: int = 64

    def __post_init__(self):
        for name in (
            "n",
            "n_c",
            "d",
            "m_h",
            "m_prime",
            "m_pq",
            "nbits",
            "ef_h",
            "ef_c",
            "ef_l",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.n_probe, int) or self.n_probe < 0:
            raise ValueError(f"n_probe must be a non-negative integer, got {self.n_probe!r}")


def p_zero(m: int) -> float:
    """Fraction 1/ln(m) of node mass sitting above level zero."""
    if m < 3:
        raise ValueError(f"graph degree must be >= 3 for a finite layer sum, got {m}")
    return 1.0 / math.log(m)


def _layer_factor(m: int) -> float:
    # M/(1 - p0): per-node link slots summed over the expected level geometry
    return m / (1.0 - p_zero(m))


def memory_bytes(algorithm: Algorithm, p: CostModelParams) -> float:
    """Resident bytes during search for one layout."""
    codes = p.m_pq * p.nbits / 8
    codebook = 2**p.nbits * FLOAT_BYTES * p.d
    if algorithm is Algorithm.IVF:
        return p.n_c * FLOAT_BYTES * p.d + ID_BYTES * p.n + p.n * FLOAT_BYTES * p.d
    if algorithm is Algorithm.IVFPQ:
        return p.n_c * FLOAT_BYTES * p.d + ID_BYTES * p.n + p.n * codes + codebook
    if algorithm is Algorithm.HNSW:
        return p.n * FLOAT_BYTES * p.d + FLOAT_BYTES * p.n * _layer_factor(p.m_h)
    if algorithm is Algorithm.HNSWPQ:
        return p.n * codes + FLOAT_BYTES * p.n * 4 * _layer_factor(p.m_h) + codebook
    if algorithm is Algorithm.IVF_DISK:
        return p.n_c * FLOAT_BYTES * p.d + ID_BYTES * p.n + FLOAT_BYTES * p.d
    if algorithm is Algorithm.IVFPQ_DISK:
        return p.n_c * FLOAT_BYTES * p.d + ID_BYTES * p.n + codes + codebook
    if algorithm is Algorithm.IVF_HNSW:
        return (
            FLOAT_BYTES * p.n_c * (p.d + _layer_factor(p.m_prime))
            + ID_BYTES * p.n
            + FLOAT_BYTES * p.d
        )
    if algorithm is Algorithm.ECOVECTOR:
        per_unit = p.d + _layer_factor(p.m_prime)
        return FLOAT_BYTES * p.n_c * per_unit + ID_BYTES * p.n + FLOAT_BYTES * per_unit
    raise ValueError(f"unknown algorithm {algorithm!r}")


def search_ops(algorithm: Algorithm, p: CostModelParams) -> float:
    """Modeled distance computations for one query."""
    pq_ratio = (p.m_pq / p.d) * (p.nbits / 8)
    table_cost = 2**p.nbits
    scan = p.n_probe * p.n / p.n_c
    if algorithm in (Algorithm.IVF, Algorithm.IVF_DISK):
        return p.n_c + scan
    if algorithm in (Algorithm.IVFPQ, Algorithm.IVFPQ_DISK):
        return p.n_c + scan * pq_ratio + table_cost
    if algorithm is Algorithm.HNSW:
        return p.ef_h * p.m_h
    if algorithm is Algorithm.HNSWPQ:
        return p.ef_h * p.m_h * pq_ratio + table_cost
    if algorithm is Algorithm.IVF_HNSW:
        return p.ef_c * p.m_prime + scan
    if algorithm is Algorithm.ECOVECTOR:
        return p.ef_c * p.m_prime + p.n_probe * p.ef_l * p.m_prime
    raise ValueError(f"unknown algorithm {algorithm!r}")


def compute_time_ms(
    algorithm: Algorithm, p: CostModelParams, t_op_ms: float = T_OP_MS
) -> float:
    return search_ops(algorithm, p) * t_op_ms


def disk_time_ms(
    n_seek: int,
    n_byte: float,
    t_seek_ms: float = T_SEEK_MS,
    t_cmd_ms: float = T_CMD_MS,
    t_transfer_ms_per_byte: float = T_TRANSFER_MS_PER_BYTE,
) -> float:
    """n_seek reads of n_byte bytes each."""
    if n_seek < 0 or n_byte < 0:
        raise ValueError("n_seek and n_byte must be non-negative")
    return n_seek * (t_seek_ms + t_cmd_ms + n_byte * t_transfer_ms_per_byte)


def validate_trace(trace, p: CostModelParams) -> dict:
    """Compare one search trace against the partitioned-index model row.

    The trace only needs distance_ops, edges_examined, bytes_read, and
    clusters_loaded attributes. The headline ratio is measured distance
    computations over the modeled count; edges_examined is reported beside it
    because the ef*M expressions count link traversals, not deduplicated
    distance evaluations.
    """
    model_ops = search_ops(Algorithm.ECOVECTOR, p)
    measured = trace.distance_ops
    loaded = trace.clusters_loaded
    mean_bytes = trace.bytes_read / loaded if loaded else 0.0
    t_s = measured * T_OP_MS
    t_d = disk_time_ms(loaded, mean_bytes)
    return {
        "measured_distance_ops": measured,
        "measured_edges": getattr(trace, "edges_examined", 0),
        "model_search_ops": model_ops,
        "ops_ratio": measured / model_ops if model_ops else 0.0,
        "ops_in_band": bool(0.5 * model_ops <= measured <= 2.0 * model_ops),
        "measured_bytes_read": trace.bytes_read,
        "clusters_loaded": loaded,
        "compute_time_ms": t_s,
        "disk_time_ms": t_d,
        "energy_joules": energy_joules(t_s, t_d),
    }


def energy_joules(
    search_ms: float,
    disk_ms: float,
    volts: float = VOLT_DEFAULT,
    i_search_a: float = I_SEARCH_A,
    i_disk_a: float = I_DISK_A,
) -> float:
    """Battery draw for one query: V * (I_search*t_search + I_disk*t_disk)."""
    if not (VOLT_MIN <= volts <= VOLT_MAX):
        raise ValueError(f"volts must lie in [{VOLT_MIN}, {VOLT_MAX}], got {volts}")
    if search_ms < 0 or disk_ms < 0:
        raise ValueError("times must be non-negative")
    return volts * (i_search_a * search_ms / 1e3 + i_disk_a * disk_ms / 1e3)
