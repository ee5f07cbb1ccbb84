"""Synthetic inputs with the layout of the MARK-MD biomarker study.

93 subjects (55 events), 240 antibody items measuring 118 proteins with
between one and five items per protein, irregular visit counts and
subject-specific baseline ages. The values carry no resemblance to the
real measurements; only the dimensions match.
"""

from __future__ import annotations

import numpy as np

from prcsurv.data import ItemMap, LongitudinalDataset, Study, SurvivalDataset

# items per process -> number of processes; 118 processes, 240 items
COMPOSITION = {1: 47, 2: 39, 3: 18, 4: 9, 5: 5}
N_SUBJECTS, N_EVENTS = 93, 55
VISIT_TIMES = (0.0, 1.0, 2.0, 3.0, 4.0)


def item_map() -> ItemMap:
    entries, s = [], 0
    for r, count in COMPOSITION.items():
        for _ in range(count):
            s += 1
            entries += [(f"ab{s:03d}_{q}", f"prot{s:03d}") for q in range(r)]
    return ItemMap.from_mapping(entries)


def markmd_shaped_study(seed: int = 0, n: int = N_SUBJECTS, n_events: int = N_EVENTS) -> Study:
    rng = np.random.default_rng(seed)
    imap = item_map()
    procs = imap.processes
    proc_of = np.array([procs.index(p) for _, p in imap.entries])
    n_items = len(imap.items)
    # shared intercept/slope per (subject, process) on the absolute age scale,
    # with unit intercept variance as in the fitted model; item intercepts
    C = np.array([[1.0, -0.02], [-0.02, 0.0016]])
    u = rng.multivariate_normal(np.zeros(2), C, size=(n, len(procs)))
    b = rng.normal(scale=0.5, size=(n, n_items))
    mu = rng.normal(size=(n_items, 2)) * [1.0, 0.02]
    # survival driven by the shared effects of the first ten proteins
    gamma = rng.uniform(0.3, 0.6, size=10) * rng.choice([-1, 1], size=10)
    lp = u[:, :10, 0] @ gamma + 25.0 * u[:, :10, 1] @ gamma
    baseline = np.round(rng.uniform(40, 75, size=n), 2)
    event = (-np.log(rng.random(n)) / (0.08 * np.exp(lp))) ** 0.5
    status = np.zeros(n, int)
    status[rng.permutation(n)[:n_events]] = 1
    time = np.where(status == 1, event, event * rng.uniform(0.2, 1.0, size=n))
    time = np.maximum(time, 0.05)
    subj, ages, vals = [], [], []
    for i in range(n):
        t_rel = np.array([v for v in VISIT_TIMES if v <= time[i]])
        age = baseline[i] + t_rel
        y = (mu[:, 0] + b[i] + u[i, proc_of, 0]
             + (mu[:, 1] + u[i, proc_of, 1]) * age[:, None]
             + rng.normal(scale=0.6, size=(len(t_rel), n_items)))
        miss = rng.random(y.shape) < 0.05
        miss[:, 0] = False
        y[miss] = np.nan
        subj += [f"p{i:03d}"] * len(t_rel)
        ages.append(age)
        vals.append(y)
    ids = np.array([f"p{i:03d}" for i in range(n)])
    longit = LongitudinalDataset(np.array(subj), np.concatenate(ages), np.vstack(vals), imap.items)
    return Study(longit, SurvivalDataset(ids, baseline, time, status), imap)
