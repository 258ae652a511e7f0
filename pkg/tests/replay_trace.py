"""Hand-derived replay-selection trace shared by the unit and acceptance suites."""

# Worked by hand with tau=1 and passband [0.2, 0.5], inclusive.
# (current classes, selected, counts after the step)
TRACE = [
    ((0, 1), [], {0: 1, 1: 1}),
    ((0, 2), [], {0: 2, 1: 1, 2: 1}),             # class 1: count 1 is not > 1
    ((1, 2), [], {0: 2, 1: 2, 2: 2}),             # class 0: 2/3 above the band
    ((0, 3), [1, 2], {0: 3, 1: 3, 2: 3, 3: 1}),   # 2/4 sits on the upper edge; both bumped
    ((0, 1), [], {0: 4, 1: 4, 2: 3, 3: 1}),
    ((2, 3), [], {0: 4, 1: 4, 2: 4, 3: 2}),
    ((0, 4), [3], {0: 5, 1: 4, 2: 4, 3: 3, 4: 1}),
    ((0, 1), [2, 3], {0: 6, 1: 5, 2: 5, 3: 4, 4: 1}),
    ((0, 2), [3], {0: 7, 1: 5, 2: 6, 3: 5, 4: 1}),
    ((0, 3), [1], {0: 8, 1: 6, 2: 6, 3: 6, 4: 1}),
    ((0, 1), [], {0: 9, 1: 7, 2: 6, 3: 6, 4: 1}),
    ((0, 2), [3], {0: 10, 1: 7, 2: 7, 3: 7, 4: 1}),
    ((0, 4), [], {0: 11, 1: 7, 2: 7, 3: 7, 4: 2}),
    ((0, 1), [2, 3], {0: 12, 1: 8, 2: 8, 3: 8, 4: 2}),  # class 4: 2/14 below the band
    ((0, 3), [], {0: 13, 1: 8, 2: 8, 3: 9, 4: 2}),
    ((0, 2), [1], {0: 14, 1: 9, 2: 9, 3: 9, 4: 2}),
    ((0, 1), [], {0: 15, 1: 10, 2: 9, 3: 9, 4: 2}),
    ((0, 4), [2, 3], {0: 16, 1: 10, 2: 10, 3: 10, 4: 3}),
    ((0, 3), [], {0: 17, 1: 10, 2: 10, 3: 11, 4: 3}),
    ((0, 2), [1], {0: 18, 1: 11, 2: 11, 3: 11, 4: 3}),
]
