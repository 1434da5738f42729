"""Published AIS 2024 RTSR challenge leaderboard rows used as ground truth.

Each scored row: (method, score, delta_db, runtime_ms, psnr_y_qp31, psnr_y_qp63).
The baseline row carries only its PSNR-Y numbers.
"""

SCORED_ROWS = [
    ("basicvision", 27.27, 0.350, 0.874, 33.30, 29.27),
    ("cmvg", 27.55, 0.330, 0.833, 33.27, 29.26),
    ("ivp", 27.08, 0.365, 0.905, 33.33, 29.27),
    ("rvsr", 12.00, 0.720, 7.542, 33.88, 29.43),
    ("vpeg_r", 25.77, 0.100, 0.692, 32.94, 29.13),
    ("vpeg_s", 16.15, 0.735, 4.251, 33.93, 29.41),
    ("anunet", 22.77, 0.545, 1.642, 33.66, 29.30),
    ("resr", 28.68, 0.455, 0.914, 33.50, 29.28),
    ("megastudy", 13.12, 0.210, 3.109, 33.01, 29.28),
    ("casr", 33.70, 0.205, 0.468, 33.11, 29.17),
    ("xiaomimm", 18.60, 0.690, 3.010, 33.85, 29.40),
    ("c3", 20.35, 0.500, 1.932, 33.52, 29.35),
    ("ustc_noah", 25.63, 0.485, 1.193, 33.52, 29.32),
    ("lanczospp", 33.24, 0.070, 0.399, 32.88, 29.13),
    ("pixelart", 33.32, 0.395, 0.623, 33.40, 29.26),
    ("reptcn", 30.91, 0.355, 0.685, 33.31, 29.27),
]

BASELINE_PSNR_Y = {31: 32.75, 63: 29.12}
