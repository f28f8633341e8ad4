"""Static world construction: road geometry, vehicle drops, V2V pairing.

Vehicles arrive through a spatial Poisson process on a 120 m x 20 m road
segment with two lanes per direction.  A drop selects the requested number of
active VUEs and V2V transmitter/receiver pairs; the same vehicle may serve as
both a VUE and a V2V endpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientVehicles
from .params import SimParams

_MAX_REDRAWS = 25


@dataclass(frozen=True)
class Vehicle:
    position: tuple[float, float, float]   # x, y, z in metres
    speed_mps: float
    direction: int                         # +1 along +x, -1 along -x


@dataclass(frozen=True)
class Scenario:
    params: SimParams
    bs_position: np.ndarray
    ris_position: np.ndarray
    vehicles: tuple[Vehicle, ...]
    vue_indices: tuple[int, ...]           # vehicle index per VUE
    v2v_tx_indices: tuple[int, ...]        # vehicle index per V2V transmitter
    v2v_rx_indices: tuple[int, ...]        # paired receiver per transmitter
    rng_seed: int

    def vehicle_positions(self) -> np.ndarray:
        return np.array([v.position for v in self.vehicles], dtype=float)

    def vue_positions(self) -> np.ndarray:
        return self.vehicle_positions()[list(self.vue_indices)]

    def v2v_tx_positions(self) -> np.ndarray:
        return self.vehicle_positions()[list(self.v2v_tx_indices)]

    def v2v_rx_positions(self) -> np.ndarray:
        return self.vehicle_positions()[list(self.v2v_rx_indices)]


def _lane_centers(params: SimParams) -> list[tuple[float, int]]:
    """Four lanes, two per direction; returns (y_center, direction) pairs."""
    w = params.road_width_m
    lane_w = w / 4.0
    ys = [lane_w * (k + 0.5) for k in range(4)]
    # lanes in the lower half run +x, upper half run -x
    return [(y, 1 if y < w / 2 else -1) for y in ys]


def _draw_vehicles(params: SimParams, rng: np.random.Generator) -> list[Vehicle]:
    lanes = _lane_centers(params)
    needed = params.n_vues_i + 2 * params.n_v2v_pairs_v
    if params.poisson_intensity_per_m is not None:
        per_lane_mean = params.poisson_intensity_per_m * params.road_length_m
    else:
        # calibrated so the expected total comfortably exceeds the demand
        per_lane_mean = 2.0 * needed / len(lanes)
    vehicles: list[Vehicle] = []
    for y, direction in lanes:
        count = rng.poisson(per_lane_mean)
        xs = rng.uniform(0.0, params.road_length_m, size=count)
        speeds = rng.uniform(params.speed_min_mps, params.speed_max_mps, size=count)
        for x, s in zip(xs, speeds):
            vehicles.append(
                Vehicle((float(x), y, params.vehicle_antenna_height_m), float(s), direction)
            )
    return vehicles


def _stratified_vue_choice(params: SimParams, vehicles: list[Vehicle],
                           rng: np.random.Generator) -> np.ndarray | None:
    """Pick VUEs round-robin across lanes (one per lane, then wrap).

    Keeps the lane composition of the VUE set identical across seeds, which
    removes a large cross-seed variance source in ordering experiments.
    Returns ``None`` when some lane runs out of vehicles before the requested
    count is met.
    """
    lane_ys = [y for y, _ in _lane_centers(params)]
    ris_x = params.ris_position[0]
    window = (params.service_window_m if params.service_window_m is not None
              else params.road_length_m / 4.0)
    by_lane: list[list[int]] = [[] for _ in lane_ys]
    spill: list[list[int]] = [[] for _ in lane_ys]
    for idx, veh in enumerate(vehicles):
        lane = int(np.argmin([abs(veh.position[1] - y) for y in lane_ys]))
        # prefer vehicles inside the surface's service window along the road
        if abs(veh.position[0] - ris_x) <= window:
            by_lane[lane].append(idx)
        else:
            spill[lane].append(idx)
    for lane, extra in zip(by_lane, spill):
        if not lane:
            lane.extend(extra)
    for lane in by_lane:
        rng.shuffle(lane)
    chosen: list[int] = []
    k = 0
    while len(chosen) < params.n_vues_i:
        lane = by_lane[k % len(lane_ys)]
        if not lane:
            return None
        chosen.append(lane.pop())
        k += 1
    return np.array(chosen)


def drop_scenario(params: SimParams, seed: int) -> Scenario:
    """Drop a scenario deterministically from ``seed``.

    Raises :class:`InsufficientVehicles` if after a bounded number of redraws
    the drop cannot supply ``n_vues_i`` VUEs and ``n_v2v_pairs_v`` paired
    transmitters (each paired with the nearest vehicle inside broadcast range).
    """
    rng = np.random.default_rng(seed)
    for _ in range(_MAX_REDRAWS):
        vehicles = _draw_vehicles(params, rng)
        n = len(vehicles)
        if n < max(params.n_vues_i, 2):
            continue
        positions = np.array([v.position for v in vehicles])
        if params.lane_stratified_vues:
            vues = _stratified_vue_choice(params, vehicles, rng)
            if vues is None:
                continue
        else:
            vues = rng.choice(n, size=min(params.n_vues_i, n), replace=False)
            if len(vues) < params.n_vues_i:
                continue
        tx_order = rng.permutation(n)
        tx_list: list[int] = []
        rx_list: list[int] = []
        for cand in tx_order:
            if len(tx_list) == params.n_v2v_pairs_v:
                break
            if cand in tx_list or cand in rx_list:
                continue
            d = np.linalg.norm(positions - positions[cand], axis=1)
            d[cand] = np.inf
            for idx in tx_list + rx_list:
                d[idx] = np.inf
            rx = int(np.argmin(d))
            if d[rx] > params.broadcast_range_m:
                continue
            tx_list.append(int(cand))
            rx_list.append(rx)
        if len(tx_list) < params.n_v2v_pairs_v:
            continue
        return Scenario(
            params=params,
            bs_position=np.array(params.bs_position, dtype=float),
            ris_position=np.array(params.ris_position, dtype=float),
            vehicles=tuple(vehicles),
            vue_indices=tuple(int(i) for i in sorted(vues)),
            v2v_tx_indices=tuple(tx_list),
            v2v_rx_indices=tuple(rx_list),
            rng_seed=seed,
        )
    raise InsufficientVehicles(
        f"could not draw {params.n_vues_i} VUEs + {params.n_v2v_pairs_v} pairs "
        f"after {_MAX_REDRAWS} redraws; check intensity/road configuration"
    )


def advance_mobility(scn: Scenario, dt: float) -> Scenario:
    """Advance every vehicle along its lane by speed*dt, wrapping at the ends.

    Vehicle count and pairing indices are untouched.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    length = scn.params.road_length_m
    moved = []
    for v in scn.vehicles:
        x, y, z = v.position
        x = (x + v.direction * v.speed_mps * dt) % length
        moved.append(Vehicle((x, y, z), v.speed_mps, v.direction))
    return Scenario(
        params=scn.params,
        bs_position=scn.bs_position,
        ris_position=scn.ris_position,
        vehicles=tuple(moved),
        vue_indices=scn.vue_indices,
        v2v_tx_indices=scn.v2v_tx_indices,
        v2v_rx_indices=scn.v2v_rx_indices,
        rng_seed=scn.rng_seed,
    )


def scenario_to_json(scn: Scenario) -> str:
    payload = {
        "seed": scn.rng_seed,
        "bs_position": scn.bs_position.tolist(),
        "ris_position": scn.ris_position.tolist(),
        "vehicles": [
            {"position": list(v.position), "speed": v.speed_mps, "direction": v.direction}
            for v in scn.vehicles
        ],
        "vue_indices": list(scn.vue_indices),
        "v2v_tx_indices": list(scn.v2v_tx_indices),
        "v2v_rx_indices": list(scn.v2v_rx_indices),
    }
    return json.dumps(payload, indent=2, sort_keys=True)
