"""Regenerate the bundled case files under src/dynopf/cases/.

Source tables are the standard published benchmark data (100 MVA base),
adapted to the package's line model: each branch keeps only its series
impedance (charging susceptance, shunts, and transformer taps are dropped),
converted to a series admittance g + jb = 1/(r + jx).

Machine dynamic parameters:
* wscc9 uses the standard WSCC machine constants
  (x'_d = 0.0608/0.1198/0.1813 pu, m = 2H/omega_base with H = 23.64/6.4/3.01 s,
  d = 0.01 pu s for all three).
* ieee57 has no published companion machine set; the values below are
  assumptions scaled with unit size (documented in the README).

Branch ratings: the published 57-bus case leaves rateA at 0 (unlimited);
the schema requires positive limits, so generous non-binding limits are
substituted.  Angle limits are set to 30 degrees everywhere.
"""

import json
import math
import os

OUT = os.path.join(os.path.dirname(__file__), "..", "src", "dynopf", "cases")
ANGLE_LIMIT = 0.5235987755982988  # 30 degrees


def series_admittance(r, x):
    d = r * r + x * x
    return r / d, -x / d


def build_case(base_mva, buses, branches, gens, ref_bus):
    out_buses = []
    for bid, pd, qd, vmin, vmax in buses:
        out_buses.append({
            "id": bid, "vmin": vmin, "vmax": vmax,
            "pd": pd / base_mva, "qd": qd / base_mva, "ref": bid == ref_bus,
        })
    out_lines = []
    for f, t, r, x, rate in branches:
        g, b = series_admittance(r, x)
        out_lines.append({
            "from": f, "to": t, "g": g, "b": b,
            "angle_limit_rad": ANGLE_LIMIT, "smax": rate / base_mva,
        })
    out_gens = []
    for bus, pmin, pmax, qmin, qmax, c2, c1, c0, xd, m, d in gens:
        out_gens.append({
            "bus": bus,
            "pmin": pmin / base_mva, "pmax": pmax / base_mva,
            "qmin": qmin / base_mva, "qmax": qmax / base_mva,
            "c2": c2 * base_mva * base_mva, "c1": c1 * base_mva, "c0": c0,
            "xd_prime": xd, "inertia": m, "damping": d,
        })
    return {"base_mva": float(base_mva), "buses": out_buses,
            "lines": out_lines, "generators": out_gens}


OMEGA_BASE = 2 * math.pi * 60


def m_of_h(h):
    return 2 * h / OMEGA_BASE


# --- WSCC 9-bus ------------------------------------------------------------
# bus: id, Pd (MW), Qd (MVAr), vmin, vmax
WSCC9_BUSES = [
    (1, 0, 0, 0.9, 1.1), (2, 0, 0, 0.9, 1.1), (3, 0, 0, 0.9, 1.1),
    (4, 0, 0, 0.9, 1.1), (5, 90, 30, 0.9, 1.1), (6, 0, 0, 0.9, 1.1),
    (7, 100, 35, 0.9, 1.1), (8, 0, 0, 0.9, 1.1), (9, 125, 50, 0.9, 1.1),
]
# branch: from, to, r, x, rateA (MVA)
WSCC9_BRANCHES = [
    (1, 4, 0.0, 0.0576, 250),
    (4, 5, 0.017, 0.092, 250),
    (5, 6, 0.039, 0.17, 150),
    (3, 6, 0.0, 0.0586, 300),
    (6, 7, 0.0119, 0.1008, 150),
    (7, 8, 0.0085, 0.072, 250),
    (8, 2, 0.0, 0.0625, 250),
    (8, 9, 0.032, 0.161, 250),
    (9, 4, 0.01, 0.085, 250),
]
# gen: bus, Pmin, Pmax, Qmin, Qmax (MW/MVAr), c2 ($/MW^2), c1 ($/MW), c0 ($),
#      x'_d (pu), inertia m (pu s^2), damping d (pu s)
WSCC9_GENS = [
    (1, 10, 250, -300, 300, 0.11, 5.0, 150.0, 0.0608, m_of_h(23.64), 0.01),
    (2, 10, 300, -300, 300, 0.085, 1.2, 600.0, 0.1198, m_of_h(6.4), 0.01),
    (3, 10, 270, -300, 300, 0.1225, 1.0, 335.0, 0.1813, m_of_h(3.01), 0.01),
]

# --- IEEE 57-bus -----------------------------------------------------------
# id, Pd, Qd
IEEE57_LOADS = {
    1: (55, 17), 2: (3, 88), 3: (41, 21), 5: (13, 4), 6: (75, 2),
    8: (150, 22), 9: (121, 26), 10: (5, 2), 12: (377, 24), 13: (18, 2.3),
    14: (10.5, 5.3), 15: (22, 5), 16: (43, 3), 17: (42, 8), 18: (27.2, 9.8),
    19: (3.3, 0.6), 20: (2.3, 1), 23: (6.3, 2.1), 25: (6.3, 3.2),
    27: (9.3, 0.5), 28: (4.6, 2.3), 29: (17, 2.6), 30: (3.6, 1.8),
    31: (5.8, 2.9), 32: (1.6, 0.8), 33: (3.8, 1.9), 35: (6, 3),
    38: (14, 7), 41: (6.3, 3), 42: (7.1, 4.4), 43: (2, 1), 44: (12, 1.8),
    47: (29.7, 11.6), 49: (18, 8.5), 50: (21, 10.5), 51: (18, 5.3),
    52: (4.9, 2.2), 53: (20, 10), 54: (4.1, 1.4), 55: (6.8, 3.4),
    56: (7.6, 2.2), 57: (6.7, 2),
}
# from, to, r, x (taps/charging dropped)
IEEE57_BRANCHES = [
    (1, 2, 0.0083, 0.0280), (2, 3, 0.0298, 0.0850), (3, 4, 0.0112, 0.0366),
    (4, 5, 0.0625, 0.1320), (4, 6, 0.0430, 0.1480), (6, 7, 0.0200, 0.1020),
    (6, 8, 0.0339, 0.1730), (8, 9, 0.0099, 0.0505), (9, 10, 0.0369, 0.1679),
    (9, 11, 0.0258, 0.0848), (9, 12, 0.0648, 0.2950), (9, 13, 0.0481, 0.1580),
    (13, 14, 0.0132, 0.0434), (13, 15, 0.0269, 0.0869), (1, 15, 0.0178, 0.0910),
    (1, 16, 0.0454, 0.2060), (1, 17, 0.0238, 0.1080), (3, 15, 0.0162, 0.0530),
    (4, 18, 0.0, 0.5550), (4, 18, 0.0, 0.4300), (5, 6, 0.0302, 0.0641),
    (7, 8, 0.0139, 0.0712), (10, 12, 0.0277, 0.1262), (11, 13, 0.0223, 0.0732),
    (12, 13, 0.0178, 0.0580), (12, 16, 0.0180, 0.0813), (12, 17, 0.0397, 0.1790),
    (14, 15, 0.0171, 0.0547), (18, 19, 0.4610, 0.6850), (19, 20, 0.2830, 0.4340),
    (21, 20, 0.0, 0.7767), (21, 22, 0.0736, 0.1170), (22, 23, 0.0099, 0.0152),
    (23, 24, 0.1660, 0.2560), (24, 25, 0.0, 1.1820), (24, 25, 0.0, 1.2300),
    (24, 26, 0.0, 0.0473), (26, 27, 0.1650, 0.2540), (27, 28, 0.0618, 0.0954),
    (28, 29, 0.0418, 0.0587), (7, 29, 0.0, 0.0648), (25, 30, 0.1350, 0.2020),
    (30, 31, 0.3260, 0.4970), (31, 32, 0.5070, 0.7550), (32, 33, 0.0392, 0.0360),
    (34, 32, 0.0, 0.9530), (34, 35, 0.0520, 0.0780), (35, 36, 0.0430, 0.0537),
    (36, 37, 0.0290, 0.0366), (37, 38, 0.0651, 0.1009), (37, 39, 0.0239, 0.0379),
    (36, 40, 0.0300, 0.0466), (22, 38, 0.0192, 0.0295), (11, 41, 0.0, 0.7490),
    (41, 42, 0.2070, 0.3520), (41, 43, 0.0, 0.4120), (38, 44, 0.0289, 0.0585),
    (15, 45, 0.0, 0.1042), (14, 46, 0.0, 0.0735), (46, 47, 0.0230, 0.0680),
    (47, 48, 0.0182, 0.0233), (48, 49, 0.0834, 0.1290), (49, 50, 0.0801, 0.1280),
    (50, 51, 0.1386, 0.2200), (10, 51, 0.0, 0.0712), (13, 49, 0.0, 0.1910),
    (29, 52, 0.1442, 0.1870), (52, 53, 0.0762, 0.0984), (53, 54, 0.1878, 0.2320),
    (54, 55, 0.1732, 0.2265), (11, 43, 0.0, 0.1530), (44, 45, 0.0624, 0.1242),
    (40, 56, 0.0, 1.1950), (56, 41, 0.5530, 0.5490), (56, 42, 0.2125, 0.3540),
    (39, 57, 0.0, 1.3550), (57, 56, 0.1740, 0.2600), (38, 49, 0.1150, 0.1770),
    (38, 48, 0.0312, 0.0482), (9, 55, 0.0, 0.1205),
]
IEEE57_RATE = 500.0  # MVA, non-binding substitute for the published 0
# bus, Pmin, Pmax, Qmin, Qmax, c2, c1, c0, x'_d, H (s), d
IEEE57_GENS = [
    (1, 0, 575.88, -140, 200, 0.0775795, 20.0, 0.0, 0.08, 20.0, 0.01),
    (2, 0, 100, -17, 50, 0.0775795, 20.0, 0.0, 0.20, 6.0, 0.01),
    (3, 0, 140, -10, 60, 0.0775795, 20.0, 0.0, 0.18, 6.0, 0.01),
    (6, 0, 100, -8, 25, 0.0775795, 20.0, 0.0, 0.22, 5.0, 0.01),
    (8, 0, 550, -140, 200, 0.0775795, 20.0, 0.0, 0.09, 18.0, 0.01),
    (9, 0, 100, -3, 9, 0.0775795, 20.0, 0.0, 0.22, 5.0, 0.01),
    (12, 0, 410, -150, 155, 0.0775795, 20.0, 0.0, 0.12, 12.0, 0.01),
]


def main():
    os.makedirs(OUT, exist_ok=True)

    wscc9 = build_case(100.0, WSCC9_BUSES, WSCC9_BRANCHES, WSCC9_GENS, ref_bus=1)
    with open(os.path.join(OUT, "wscc9.json"), "w") as f:
        json.dump(wscc9, f, indent=1)

    buses57 = []
    for bid in range(1, 58):
        pd, qd = IEEE57_LOADS.get(bid, (0.0, 0.0))
        buses57.append((bid, pd, qd, 0.94, 1.06))
    branches57 = [(f, t, r, x, IEEE57_RATE) for f, t, r, x in IEEE57_BRANCHES]
    gens57 = [(bus, pmin, pmax, qmin, qmax, c2, c1, c0, xd, m_of_h(h), d)
              for bus, pmin, pmax, qmin, qmax, c2, c1, c0, xd, h, d in IEEE57_GENS]
    ieee57 = build_case(100.0, buses57, branches57, gens57, ref_bus=1)
    with open(os.path.join(OUT, "ieee57.json"), "w") as f:
        json.dump(ieee57, f, indent=1)

    # sanity: connectivity of both cases
    for name, case in (("wscc9", wscc9), ("ieee57", ieee57)):
        ids = {b["id"] for b in case["buses"]}
        adj = {i: set() for i in ids}
        for l in case["lines"]:
            adj[l["from"]].add(l["to"])
            adj[l["to"]].add(l["from"])
        seen, stack = set(), [next(iter(ids))]
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            stack.extend(adj[u] - seen)
        assert seen == ids, f"{name}: disconnected buses {ids - seen}"
        print(f"{name}: {len(case['buses'])} buses, {len(case['lines'])} lines, "
              f"{len(case['generators'])} generators, connected")


if __name__ == "__main__":
    main()
