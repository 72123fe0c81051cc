#!/usr/bin/env python3
"""Receptive fields of the backbone stages and atrous branch intervals.

Walks the layer list explicitly (no shared code with the Rust crate) and
prints one line per value. Regenerate with:

    python3 rf_golden.py > rf_golden.txt
"""

PRESETS = {"toy": [2, 2, 2, 2], "paper": [3, 4, 23, 3]}
STRIDES = [1, 2, 2, 1]
DILATIONS = [1, 1, 2, 4]
RATES_C1 = {"V34": 18, "V24": 12, "V14": 6, "Y4": 1}


def layers(blocks):
    """(kernel, stride, dilation, stage-end marker) in forward order."""
    out = [(3, 2, 1, None), (3, 1, 1, None)]  # stem conv, max pool
    for s, n in enumerate(blocks):
        for b in range(n):
            stride = STRIDES[s] if b == 0 else 1
            d = DILATIONS[s]
            out.append((3, stride, 1 if stride > 1 else d, None))
            out.append((3, 1, d, s if b == n - 1 else None))
    return out


def stages(blocks):
    r, j, res = 1, 1, []
    for k, s, d, end in layers(blocks):
        r += (k - 1) * d * j
        j *= s
        if end is not None:
            res.append((r, j))
    return res


def intervals(st, combination):
    rates = dict(RATES_C1)
    if combination == 2:
        rates["V14"], rates["V34"] = rates["V34"], rates["V14"]
    r4, j4 = st[3]
    out = []
    for name in ["V14", "V24", "V34", "Y4"]:
        ri = r4 if name == "Y4" else st[int(name[1]) - 1][0]
        g = 2 * rates[name] * j4
        out.append((name, rates[name], min(ri, r4) + g, max(ri, r4) + g))
    return out


for preset, blocks in PRESETS.items():
    st = stages(blocks)
    for i, (r, j) in enumerate(st, 1):
        print(f"{preset} Y{i} rf={r} stride={j}")
    for c in (1, 2):
        iv = intervals(st, c)
        for name, rate, lo, hi in iv:
            print(f"{preset} c{c} {name} rate={rate} lo={lo} hi={hi}")
        span = max(h for *_, h in iv) - min(l for _, _, l, _ in iv)
        ov = sum(
            1
            for a in range(len(iv))
            for b in range(a + 1, len(iv))
            if iv[a][2] <= iv[b][3] and iv[b][2] <= iv[a][3]
        )
        print(f"{preset} c{c} span={span} overlaps={ov}")
