"""Communication-cost model: one-shot encrypted upload vs. iterative FL.

This is a documented model, not a measurement.  All byte totals are exact
integers:

    one_shot_upload = m_clients * images_per_client * bytes_per_image
    one_shot_model  = m_clients * model_bytes          (final distribution)
    fl_up = fl_down = fl_rounds * participants * model_bytes
    fl_final        = m_clients * model_bytes
    participants    = ceil(fl_participation * m_clients)

Both totals include the final model distribution, so the comparison reduces
to upload bytes vs. 2 * rounds * participants * model_bytes.  The report
flags which regime is cheaper instead of asserting either side wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction


@dataclass(frozen=True)
class CostParams:
    m_clients: int
    images_per_client: int
    bytes_per_image: int
    model_bytes: int
    fl_rounds: int
    fl_participation: float = 1.0

    def __post_init__(self):
        for name in ("m_clients", "images_per_client", "bytes_per_image", "model_bytes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.fl_rounds < 0:
            raise ValueError("fl_rounds must be >= 0")
        if not 0 < self.fl_participation <= 1:
            raise ValueError("fl_participation must be in (0, 1]")


@dataclass(frozen=True)
class CostReport:
    params: CostParams
    participants_per_round: int
    one_shot_upload_bytes: int
    one_shot_model_bytes: int
    one_shot_total_bytes: int
    fl_up_bytes: int
    fl_down_bytes: int
    fl_final_bytes: int
    fl_total_bytes: int
    cheaper: str  # "one-shot" | "federated" | "tie"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["params"] = dict(self.params.__dict__)
        return d


def cost_report(p: CostParams) -> CostReport:
    # str() round-trips the float exactly, so 0.2 * 5 cannot ceil to 2
    participants = math.ceil(Fraction(str(p.fl_participation)) * p.m_clients)
    upload = p.m_clients * p.images_per_client * p.bytes_per_image
    model_dist = p.m_clients * p.model_bytes
    fl_up = p.fl_rounds * participants * p.model_bytes
    fl_down = fl_up
    one_shot_total = upload + model_dist
    fl_total = fl_up + fl_down + model_dist
    if one_shot_total < fl_total:
        cheaper = "one-shot"
    elif fl_total < one_shot_total:
        cheaper = "federated"
    else:
        cheaper = "tie"
    return CostReport(
        params=p,
        participants_per_round=participants,
        one_shot_upload_bytes=upload,
        one_shot_model_bytes=model_dist,
        one_shot_total_bytes=one_shot_total,
        fl_up_bytes=fl_up,
        fl_down_bytes=fl_down,
        fl_final_bytes=model_dist,
        fl_total_bytes=fl_total,
        cheaper=cheaper,
    )
