"""Hand-rolled reference for the sensitivity controller trace.

Prints the expected (q, b, frozen, rebased) rows as a Rust array literal for
tests/acceptance.rs. Written against the rules, not the Rust code:

  level:    frozen -> hold; |e - E| < band -> hold; e > E -> q / g; else q * g;
            clamp to [q_min, q_max]; append e to history.
  freeze:   mean of the last W values (needs W of them); <= E counts a calm
            check, W calm checks in a row freeze; a mean above E clears the
            count and unfreezes.
  rebase:   on every T-th update, population variance of the last T values;
            above V resets the baseline, unfreezes and clears the calm count.
  bits:     clamp(round(b_base - log2(q / 16)), 1, 12).
"""

import math

E_THRESH, GAMMA, BAND, W, T, V = 1.0, 2.0, 0.0625, 3, 10, 0.25
Q_INIT, Q_MIN, Q_MAX, B_BASE = 16.0, 1.0, 256.0, 8

SEQ = (
    [2.0] * 6
    + [0.25] * 10
    + [3.0, 3.0, 1.0, 1.03125]
    + [0.5, 0.5, 0.5, 0.5, 0.5, 0.5]
    + [0.125, 4.0, 0.125, 4.0, 0.125, 4.0, 0.125, 4.0]
    + [1.0] * 6
    + [0.25, 0.25, 0.25, 2.0, 2.0, 2.0, 2.0, 2.0, 0.5, 0.5]
)
assert len(SEQ) == 50


def bits(q):
    b = B_BASE - math.log2(q / 16.0)
    # round half away from zero, as f64::round does
    r = math.floor(b + 0.5) if b >= 0 else -math.floor(-b + 0.5)
    return int(min(max(r, 1), 12))


def main():
    q, frozen, calm, hist, updates = Q_INIT, False, 0, [], 0
    rows = []
    for e in SEQ:
        if not frozen:
            if abs(e - E_THRESH) < BAND:
                nq = q
            elif e > E_THRESH:
                nq = q / GAMMA
            else:
                nq = q * GAMMA
            q = min(max(nq, Q_MIN), Q_MAX)
        hist.append(e)
        updates += 1
        if len(hist) >= W:
            tail = hist[-W:]
            avg = sum(reversed(tail)) / W
            if avg <= E_THRESH:
                calm += 1
                if calm >= W:
                    frozen = True
            else:
                calm, frozen = 0, False
        rebased = False
        if updates % T == 0 and len(hist) >= T:
            tail = hist[-T:]
            mean = sum(reversed(tail)) / T
            var = sum((x - mean) ** 2 for x in reversed(tail)) / T
            if var > V:
                frozen, calm, rebased = False, 0, True
        rows.append((q, bits(q), frozen, rebased))
    print("const EXPECTED: [(f64, u8, bool, bool); 50] = [")
    for q, b, f, r in rows:
        print(f"    ({q:.1f}, {b}, {str(f).lower()}, {str(r).lower()}),")
    print("];")


if __name__ == "__main__":
    main()
