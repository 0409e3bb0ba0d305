#!/usr/bin/env python3
"""Authoring script for the bundled town files (towns/a.json, towns/b.json).

The towns are authored data: this script lays out an axis-aligned road grid
and emits every polygon explicitly so the simulator never generates geometry
at runtime. Run with --stats to print task-pool statistics used while
laying the towns out.
"""

import argparse
import itertools
import json
import math
import os

LANE_WIDTH = 3.5
ROAD_HALF = LANE_WIDTH            # one lane per direction
SIDEWALK = 3.0
OUTER = ROAD_HALF + SIDEWALK      # 6.5
SPAWN_MARGIN = 10.5               # from box edge to first spawn
SPAWN_STEP = 12.0
PED_SPAWN_STEP = 10.0

DIRS = {"E": (1, 0), "N": (0, 1), "W": (-1, 0), "S": (0, -1)}

LAYOUTS = {
    # Training town: outer loop with two full-width cross streets -> four
    # T-junctions, four curves, 2.9 km of road.
    "a": {
        "id": "town_a",
        "declared_km": 2.9,
        "nodes": {
            0: (0.0, 0.0), 1: (450.0, 0.0), 2: (450.0, 550.0), 3: (0.0, 550.0),
            4: (0.0, 550.0 / 3), 5: (450.0, 550.0 / 3),
            6: (0.0, 1100.0 / 3), 7: (450.0, 1100.0 / 3),
        },
        "roads": [(0, 1, 30), (1, 5, 30), (5, 7, 30), (7, 2, 30), (2, 3, 30),
                  (3, 6, 30), (6, 4, 30), (4, 0, 30), (4, 5, 40), (7, 6, 40)],
    },
    # Testing town: outer loop plus one avenue, 1.4 km.
    "b": {
        "id": "town_b",
        "declared_km": 1.4,
        "nodes": {
            0: (0.0, 0.0), 1: (162.5, 0.0), 2: (325.0, 0.0),
            3: (325.0, 250.0), 4: (162.5, 250.0), 5: (0.0, 250.0),
        },
        "roads": [(0, 1, 30), (1, 2, 30), (2, 3, 30), (3, 4, 30), (4, 5, 30),
                  (5, 0, 30), (1, 4, 40)],
    },
}

TASK_TARGETS = {"a": (200.0, 400.0, 770.0), "b": (100.0, 170.0, 360.0)}


def unit(a, b):
    dx, dy = b[0] - a[0], b[1] - a[1]
    n = math.hypot(dx, dy)
    return (dx / n, dy / n)


def dir_name(u):
    for k, v in DIRS.items():
        if abs(u[0] - v[0]) < 1e-9 and abs(u[1] - v[1]) < 1e-9:
            return k
    raise ValueError("roads must be axis-aligned")


def rect(x0, y0, x1, y1):
    x0, x1 = min(x0, x1), max(x0, x1)
    y0, y1 = min(y0, y1), max(y0, y1)
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]


def build(key):
    lay = LAYOUTS[key]
    nodes = lay["nodes"]
    present = {n: set() for n in nodes}
    roads = []
    for rid, (a, b, limit) in enumerate(lay["roads"]):
        u = unit(nodes[a], nodes[b])
        present[a].add(dir_name(u))
        present[b].add(dir_name((-u[0], -u[1])))
        roads.append({"id": rid, "from": a, "to": b, "limit": limit})

    half = {n: {d: (OUTER if d in present[n] else ROAD_HALF) for d in DIRS} for n in nodes}

    intersections = []
    for n, (x, y) in sorted(nodes.items()):
        h = half[n]
        intersections.append({
            "id": n, "position": [x, y],
            "box": rect(x - h["W"], y - h["S"], x + h["E"], y + h["N"]),
        })

    sidewalks = []
    for n, (x, y) in sorted(nodes.items()):
        h = half[n]
        p = present[n]
        if "N" not in p:
            sidewalks.append(rect(x - h["W"], y + ROAD_HALF, x + h["E"], y + OUTER))
        if "S" not in p:
            sidewalks.append(rect(x - h["W"], y - OUTER, x + h["E"], y - ROAD_HALF))
        if "E" not in p:
            sidewalks.append(rect(x + ROAD_HALF, y - h["S"], x + OUTER, y + h["N"]))
        if "W" not in p:
            sidewalks.append(rect(x - OUTER, y - h["S"], x - ROAD_HALF, y + h["N"]))
        for a, b in (("N", "E"), ("N", "W"), ("S", "E"), ("S", "W")):
            if a not in p and b not in p:
                sx = 1 if b == "E" else -1
                sy = 1 if a == "N" else -1
                sidewalks.append(rect(x + sx * ROAD_HALF, y + sy * ROAD_HALF,
                                      x + sx * OUTER, y + sy * OUTER))
    road_strips = []
    for r in roads:
        a, b = nodes[r["from"]], nodes[r["to"]]
        u = unit(a, b)
        da, db = dir_name(u), dir_name((-u[0], -u[1]))
        s0 = (a[0] + u[0] * half[r["from"]][da], a[1] + u[1] * half[r["from"]][da])
        s1 = (b[0] - u[0] * half[r["to"]][db], b[1] - u[1] * half[r["to"]][db])
        nx, ny = -u[1], u[0]
        for side in (1, -1):
            p0 = (s0[0] + side * nx * ROAD_HALF, s0[1] + side * ny * ROAD_HALF)
            p1 = (s1[0] + side * nx * OUTER, s1[1] + side * ny * OUTER)
            sidewalks.append(rect(p0[0], p0[1], p1[0], p1[1]))
            road_strips.append((r, side, s0, s1))

    # Obstacles: buildings fill each block inset from the sidewalks; fences
    # ring the town; poles carry the lights; signs carry speed limits.
    xs = sorted({x for x, _ in nodes.values()})
    ys = sorted({y for _, y in nodes.values()})
    obstacles = []
    for (x0, x1), (y0, y1) in itertools.product(zip(xs, xs[1:]), zip(ys, ys[1:])):
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        # skip strips crossed by a road through the cell centre
        bx0, bx1 = x0 + OUTER + 3.0, x1 - OUTER - 3.0
        by0, by1 = y0 + OUTER + 3.0, y1 - OUTER - 3.0
        blocked = False
        for r in roads:
            a, b = nodes[r["from"]], nodes[r["to"]]
            if a[0] == b[0] and bx0 - 3 < a[0] < bx1 + 3 and min(a[1], b[1]) < cy < max(a[1], b[1]):
                blocked = True
            if a[1] == b[1] and by0 - 3 < a[1] < by1 + 3 and min(a[0], b[0]) < cx < max(a[0], b[0]):
                blocked = True
        if blocked or bx1 - bx0 < 5 or by1 - by0 < 5:
            continue
        obstacles.append({"class": "building", "polygon": rect(bx0, by0, bx1, by1)})
    fx0, fx1 = xs[0] - OUTER - 2.0, xs[-1] + OUTER + 2.0
    fy0, fy1 = ys[0] - OUTER - 2.0, ys[-1] + OUTER + 2.0
    obstacles.append({"class": "fence", "polygon": rect(fx0 - 0.3, fy0 - 0.3, fx1 + 0.3, fy0)})
    obstacles.append({"class": "fence", "polygon": rect(fx0 - 0.3, fy1, fx1 + 0.3, fy1 + 0.3)})
    obstacles.append({"class": "wall", "polygon": rect(fx0 - 0.3, fy0, fx0, fy1)})
    obstacles.append({"class": "wall", "polygon": rect(fx1, fy0, fx1 + 0.3, fy1)})

    lights = []
    junctions = [n for n in nodes if len(present[n]) >= 3]
    for n in sorted(junctions):
        x, y = nodes[n]
        p = present[n]
        through = {"E", "W"} if {"E", "W"} <= p else {"N", "S"}
        for r in roads:
            if n not in (r["from"], r["to"]):
                continue
            other = r["to"] if r["from"] == n else r["from"]
            d = dir_name(unit(nodes[n], nodes[other]))  # arm direction
            ax, ay = DIRS[d]
            # approaching traffic travels -arm; its right side is +arm rotated
            travel = (-ax, -ay)
            right = (travel[1], -travel[0])
            pos = (x + ax * (OUTER + 1.0) + right[0] * 5.0,
                   y + ay * (OUTER + 1.0) + right[1] * 5.0)
            phase = 0.0 if d in through else 15.0
            lights.append({"id": len(lights), "position": [pos[0], pos[1]],
                           "intersection": n, "road": r["id"],
                           "cycle": 30.0, "green_start": phase,
                           "green": 11.0, "yellow": 3.0})
            obstacles.append({"class": "pole", "polygon": rect(pos[0] - 0.2, pos[1] - 0.2,
                                                                pos[0] + 0.2, pos[1] + 0.2)})

    speed_limits = []
    spawns_vehicle = []
    for r in roads:
        a, b = nodes[r["from"]], nodes[r["to"]]
        u = unit(a, b)
        da, db = dir_name(u), dir_name((-u[0], -u[1]))
        for forward in (True, False):
            start, end = (a, b) if forward else (b, a)
            hs = half[r["from"]][da] if forward else half[r["to"]][db]
            he = half[r["to"]][db] if forward else half[r["from"]][da]
            v = u if forward else (-u[0], -u[1])
            right = (v[1], -v[0])
            length = math.hypot(end[0] - start[0], end[1] - start[1])
            heading = math.atan2(v[1] + 0.0, v[0] + 0.0)
            s = hs + SPAWN_MARGIN
            while s <= length - he - SPAWN_MARGIN + 1e-9:
                spawns_vehicle.append([start[0] + v[0] * s + right[0] * LANE_WIDTH / 2,
                                       start[1] + v[1] * s + right[1] * LANE_WIDTH / 2,
                                       heading])
                s += SPAWN_STEP
            sp = (start[0] + v[0] * (hs + 15.0) + right[0] * (ROAD_HALF + 1.0),
                  start[1] + v[1] * (hs + 15.0) + right[1] * (ROAD_HALF + 1.0))
            speed_limits.append({"position": [sp[0], sp[1]], "limit_kmh": float(r["limit"])})
            obstacles.append({"class": "traffic_sign", "polygon": rect(sp[0] - 0.15, sp[1] - 0.15,
                                                                        sp[0] + 0.15, sp[1] + 0.15)})

    # Nav grid: rasterise cell centres.
    cell = 1.0
    # quarter-cell offset keeps cell centres off region boundaries
    ox, oy = fx0 - 4.25, fy0 - 4.25
    width = int(math.ceil((fx1 + 4.0 - ox) / cell))
    height = int(math.ceil((fy1 + 4.0 - oy) / cell))

    def inside(poly, px, py):
        xs_ = [q[0] for q in poly]
        ys_ = [q[1] for q in poly]
        return min(xs_) <= px <= max(xs_) and min(ys_) <= py <= max(ys_)

    def bbox(poly):
        xs_ = [q[0] for q in poly]
        ys_ = [q[1] for q in poly]
        return min(xs_), min(ys_), max(xs_), max(ys_)

    grid = [["#"] * width for _ in range(height)]

    def paint(poly, ch, pad=0.0):
        x0, y0, x1, y1 = bbox(poly)
        x0 -= pad
        y0 -= pad
        x1 += pad
        y1 += pad
        i0 = max(0, int(math.floor((x0 - ox) / cell)))
        i1 = min(width - 1, int(math.ceil((x1 - ox) / cell)))
        j0 = max(0, int(math.floor((y0 - oy) / cell)))
        j1 = min(height - 1, int(math.ceil((y1 - oy) / cell)))
        for j in range(j0, j1 + 1):
            for i in range(i0, i1 + 1):
                px, py = ox + (i + 0.5) * cell, oy + (j + 0.5) * cell
                if x0 <= px <= x1 and y0 <= py <= y1:
                    grid[j][i] = ch

    for it in intersections:
        paint(it["box"], "R")
    for r in roads:
        a, b = nodes[r["from"]], nodes[r["to"]]
        u = unit(a, b)
        da, db = dir_name(u), dir_name((-u[0], -u[1]))
        s0 = (a[0] + u[0] * half[r["from"]][da], a[1] + u[1] * half[r["from"]][da])
        s1 = (b[0] - u[0] * half[r["to"]][db], b[1] - u[1] * half[r["to"]][db])
        nx, ny = -u[1], u[0]
        paint(rect(s0[0] - nx * ROAD_HALF, s0[1] - ny * ROAD_HALF,
                   s1[0] + nx * ROAD_HALF, s1[1] + ny * ROAD_HALF), "R")
        # marked crossings next to junction boxes
        for node, s, sign in ((r["from"], s0, 1), (r["to"], s1, -1)):
            if len(present[node]) < 3:
                continue
            e = (s[0] + sign * u[0] * 3.0, s[1] + sign * u[1] * 3.0)
            paint(rect(s[0] - nx * ROAD_HALF, s[1] - ny * ROAD_HALF,
                       e[0] + nx * ROAD_HALF, e[1] + ny * ROAD_HALF), "C")
    for sw in sidewalks:
        paint(sw, "S")
    for ob in obstacles:
        paint(ob["polygon"], "#", pad=0.5)

    ped_spawns = []
    for sw in sidewalks:
        x0, y0, x1, y1 = bbox(sw)
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        if x1 - x0 >= y1 - y0:
            pts = [(x, cy) for x in frange(x0 + 2.0, x1 - 2.0, PED_SPAWN_STEP)]
        else:
            pts = [(cx, y) for y in frange(y0 + 2.0, y1 - 2.0, PED_SPAWN_STEP)]
        for px, py in pts:
            i = int(math.floor((px - ox) / cell))
            j = int(math.floor((py - oy) / cell))
            if grid[j][i] == "S":
                ped_spawns.append([px, py])

    town = {
        "id": lay["id"],
        "roads": [{
            "id": r["id"],
            "centerline": [list(nodes[r["from"]]), list(nodes[r["to"]])],
            "lanes_per_direction": 1,
            "lane_width": LANE_WIDTH,
            "speed_limit": float(r["limit"]),
            "from": r["from"], "to": r["to"],
        } for r in roads],
        "intersections": intersections,
        "sidewalks": sidewalks,
        "obstacles": obstacles,
        "spawns": {"player": spawns_vehicle, "vehicles": spawns_vehicle,
                   "pedestrians": ped_spawns},
        "lights": lights,
        "speed_limits": speed_limits,
        "nav_grid": {
            "origin": [ox, oy], "cell_size": cell, "width": width, "height": height,
            "legend": {"S": 1.0, "C": 2.0, "R": 10.0, "#": None},
            "rows": ["".join(row) for row in grid],
        },
        "declared_km": lay["declared_km"],
    }
    return town, present


def frange(a, b, step):
    out = []
    x = a
    while x <= b + 1e-9:
        out.append(x)
        x += step
    return out


def stats(key, town, present):
    """Task-pool statistics with the same rules the benchmark applies."""
    nodes = {it["id"]: tuple(it["position"]) for it in town["intersections"]}
    edges = []  # directed: (road id, from, to, length)
    for r in town["roads"]:
        a, b = r["from"], r["to"]
        L = math.dist(nodes[a], nodes[b])
        edges.append((r["id"], a, b, L))
        edges.append((r["id"], b, a, L))
    junction = {n: len(present[n]) >= 3 for n in nodes}

    def label(e_in, e_out):
        u = unit(nodes[e_in[1]], nodes[e_in[2]])
        v = unit(nodes[e_out[1]], nodes[e_out[2]])
        ang = math.degrees(math.atan2(u[0] * v[1] - u[1] * v[0], u[0] * v[0] + u[1] * v[1]))
        if abs(ang) < 30:
            return "straight"
        return "left" if ang >= 30 else "right"

    succ = {i: [j for j, f in enumerate(edges) if f[1] == e[2] and f[2] != e[1]]
            for i, e in enumerate(edges)}
    import heapq

    def dijkstra(src):
        dist = {src: 0.0}
        prev = {}
        pq = [(0.0, src)]
        while pq:
            d, i = heapq.heappop(pq)
            if d > dist[i]:
                continue
            for j in succ[i]:
                nd = d + edges[j][3]
                if nd < dist.get(j, 1e18):
                    dist[j] = nd
                    prev[j] = i
                    heapq.heappush(pq, (nd, j))
        return dist, prev

    allp = {i: dijkstra(i) for i in range(len(edges))}

    def locate(p):
        for i, (rid, a, b, L) in enumerate(edges):
            u = unit(nodes[a], nodes[b])
            rel = (p[0] - nodes[a][0], p[1] - nodes[a][1])
            s = rel[0] * u[0] + rel[1] * u[1]
            lat = rel[0] * u[1] - rel[1] * u[0]  # right-positive
            if -1e-6 <= s <= L and abs(lat - LANE_WIDTH / 2) < 1e-6 and \
                    abs(math.remainder(math.atan2(u[1], u[0]) - p[2], 2 * math.pi)) < 1e-6:
                return i, s
        raise ValueError(p)

    spawns = [locate(p) for p in town["spawns"]["player"]]
    targets = TASK_TARGETS[key]
    pools = {"straight": [], "one_turn": [], "navigation": []}
    for (ei, si), (ej, sj) in itertools.permutations(spawns, 2):
        if ei == ej and sj > si:
            pools_len = sj - si
            labels = []
        else:
            dist, prev = allp[ei]
            if ej not in dist:
                continue
            pools_len = edges[ei][3] - si + dist[ej] - edges[ej][3] + sj
            chain = [ej]
            while chain[-1] != ei:
                chain.append(prev[chain[-1]])
            chain.reverse()
            labels = []
            curves = 0
            for x, y in zip(chain, chain[1:]):
                if junction[edges[x][2]]:
                    labels.append(label(edges[x], edges[y]))
                else:
                    curves += 1
        band = lambda t: 0.75 * t <= pools_len <= 1.25 * t
        if not labels and ei == ej and band(targets[0]):
            pools["straight"].append(pools_len)
        if len(labels) == 1 and labels[0] != "straight" and ei != ej and \
                curves == 0 and band(targets[1]):
            pools["one_turn"].append(pools_len)
        if band(targets[2]):
            pools["navigation"].append(pools_len)
    total = sum(math.dist(nodes[r["from"]], nodes[r["to"]]) for r in town["roads"])
    print(f"{town['id']}: road length {total:.1f} m, spawns {len(spawns)}, "
          f"ped spawns {len(town['spawns']['pedestrians'])}")
    for k, v in pools.items():
        if v:
            print(f"  {k}: {len(v)} pairs, mean {sum(v) / len(v):.1f} m")
        else:
            print(f"  {k}: empty")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "towns"))
    ap.add_argument("--stats", action="store_true")
    args = ap.parse_args()
    for key in LAYOUTS:
        town, present = build(key)
        if args.stats:
            stats(key, town, present)
        path = os.path.join(args.out, f"{key}.json")
        with open(path, "w") as f:
            json.dump(town, f, separators=(",", ":"))
            f.write("\n")


if __name__ == "__main__":
    main()
