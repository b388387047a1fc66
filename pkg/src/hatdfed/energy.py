"""Per-round energy accounting: device upload, local compute and model transfer."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .config import LinkId

ENERGY_CSV_COLUMNS = ["kind", "round", "server", "src", "dst", "e_dt_J", "e_cp_J", "e_mt_J",
                      "tot_cost_MJ", "mt_cost_MJ"]


class AccountingError(RuntimeError):
    pass


def data_transmission_cost(server: int, conn: np.ndarray, psi: float) -> float:
    """``psi`` per connected device of ``server`` (row of the device matrix)."""
    if psi < 0:
        raise ValueError("psi must be non-negative")
    return psi * int(conn[server].sum())


def computation_cost(dataset_size: int, tau: float) -> float:
    if not tau > 0:
        raise ValueError("tau must be positive")
    return dataset_size * tau


def model_transmission_cost(link: LinkId, sigma: np.ndarray) -> float:
    """Cost of one upload over ``link``; ``sigma`` is indexed ``[dst, src]``."""
    if link.src == link.dst:
        raise AccountingError(f"self-link {link} has no transmission cost")
    return float(sigma[link.dst, link.src])


@dataclass
class EnergyLedger:
    n_servers: int
    e_dt: Dict[Tuple[int, int], float] = field(default_factory=dict)
    e_cp: Dict[Tuple[int, int], float] = field(default_factory=dict)
    e_mt: Dict[Tuple[int, LinkId], float] = field(default_factory=dict)
    round_totals: Dict[int, float] = field(default_factory=dict)
    round_mt: Dict[int, float] = field(default_factory=dict)
    tot_cost: float = 0.0
    mt_cost: float = 0.0

    def record_server(self, k: int, server: int, e_dt: float, e_cp: float) -> None:
        if e_dt < 0 or e_cp < 0:
            raise AccountingError(f"negative energy for server {server} in round {k}")
        self.e_dt[k, server] = float(e_dt)
        self.e_cp[k, server] = float(e_cp)

    def record_link(self, k: int, link: LinkId, e_mt: float) -> None:
        if e_mt < 0:
            raise AccountingError(f"negative energy on {link} in round {k}")
        self.e_mt[k, LinkId(*link)] = float(e_mt)

    def round_total(self, k: int, topology: np.ndarray) -> float:
        """Close round ``k``: sum all components, charging only links in ``topology``."""
        if k in self.round_totals:
            raise AccountingError(f"round {k} already closed")
        missing = [i for i in range(self.n_servers) if (k, i) not in self.e_dt]
        if missing:
            raise AccountingError(f"round {k}: no device/compute record for servers {missing}")
        dt = sum(self.e_dt[k, i] for i in range(self.n_servers))
        cp = sum(self.e_cp[k, i] for i in range(self.n_servers))
        mt = 0.0
        for dst, src in zip(*np.nonzero(topology)):
            link = LinkId(int(src), int(dst))
            if (k, link) not in self.e_mt:
                raise AccountingError(f"round {k}: selected link {link} has no transmission record")
            mt += self.e_mt[k, link]
        total = dt + cp + mt
        self.round_totals[k] = total
        self.round_mt[k] = mt
        self.tot_cost += total
        self.mt_cost += mt
        return total

    @property
    def tot_cost_mj(self) -> float:
        return self.tot_cost / 1e6

    @property
    def mt_cost_mj(self) -> float:
        return self.mt_cost / 1e6

    def rows(self) -> List[list]:
        out = []
        for k in sorted(self.round_totals):
            for i in range(self.n_servers):
                out.append(["server", k, i, "", "", repr(self.e_dt[k, i]), repr(self.e_cp[k, i]), "", "", ""])
            for (kk, link), e in sorted(self.e_mt.items()):
                if kk == k:
                    out.append(["link", k, "", link.src, link.dst, "", "", repr(e), "", ""])
        out.append(["summary", "", "", "", "", "", "", "", repr(self.tot_cost_mj), repr(self.mt_cost_mj)])
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(ENERGY_CSV_COLUMNS)
            writer.writerows(self.rows())
