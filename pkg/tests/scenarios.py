"""Scenario builders and cached runs shared by several test modules."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from crflow.config import parse_config
from crflow.geometry.asymptotics import compare_weighted_sups, t_tensor_report
from crflow.geometry.curvature import compute_curvature
from crflow.geometry.metric import build_background, perturbed
from crflow.geometry.profiles import perturbation_fields

AH_TEMPLATE = """
family = "AH_BALL"
m = {m}
mode = "{mode}"
normalize = {normalize}

[grid]
s_max = {s_max}
n_points = {n}

[time]
t_end = {t_end}
{snap}

[perturbation]
amplitude = {amp}
profile = "{profile}"
seed = {seed}
"""


def ah_config(n=401, t_end=0.05, amp=0.01, mode="CRF", normalize=True, m=3, s_max=8.0,
              snapshot_interval=None, profile="random", seed=1, extra=""):
    snap = "" if snapshot_interval is None else f"snapshot_interval = {snapshot_interval!r}"
    text = AH_TEMPLATE.format(m=m, mode=mode, normalize=str(normalize).lower(), s_max=s_max, n=n,
                              t_end=t_end, snap=snap, amp=amp, profile=profile, seed=seed)
    return parse_config(text + extra)


# ---------------------------------------------------------------------------
# Random family: far-field decay of the Einstein deviation vs the
# boundary behavior of the compactified metric
# ---------------------------------------------------------------------------

def far_field_pair(profile, decay, amplitude, seed=0, m=3, ds=0.02, s_short=8.0, extend=4.0):
    """The same analytic perturbation on ``[0, s_short]`` and ``[0, s_short + extend]``."""
    out = []
    for s_max in (s_short, s_short + extend):
        n = int(round(s_max / ds)) + 1
        h = build_background("AH_BALL", m, s_max=s_max, n_points=n)
        da, db = perturbation_fields(h, amplitude, profile, decay, seed)
        out.append(perturbed(h, da, db))
    return out


def far_field_verdicts(g_short, g_long):
    dev_s = np.sqrt(compute_curvature(g_short).norm_dev_sq)
    dev_l = np.sqrt(compute_curvature(g_long).norm_dev_sq)
    decay = compare_weighted_sups(dev_s, g_short.grid, dev_l, g_long.grid, mu=2.0)
    tt = t_tensor_report(g_short)
    return decay, tt


def random_far_field_family(count=50, seed=2024):
    rng = np.random.default_rng(seed)
    profiles = ("warp", "lapse", "both", "random")
    for i in range(count):
        profile = profiles[rng.integers(len(profiles))]
        decay = float(rng.choice([1.0, 2.0, 3.0]))
        amp = float(rng.uniform(0.02, 0.1) * rng.choice([-1.0, 1.0]))
        yield dict(profile=profile, decay=decay, amplitude=amp, seed=int(rng.integers(1 << 16)))


COUNTEREXAMPLES = [dict(profile="warp", decay=1.0, amplitude=a, seed=0) for a in (0.01, 0.03, 0.1)] + [
    dict(profile="lapse", decay=1.0, amplitude=0.05, seed=0)]


@lru_cache(maxsize=None)
def cached_run(key):
    """Run a scenario once per test session; ``key`` is a hashable description."""
    from crflow.flow import run_comparison, run_flow
    kind, kwargs = key[0], dict(key[1])
    cfg = ah_config(**kwargs)
    return run_comparison(cfg) if kind == "compare" else run_flow(cfg)


def run(kind="flow", **kwargs):
    return cached_run((kind, tuple(sorted(kwargs.items()))))


CLOSED_TEMPLATE = """
family = "CLOSED"
m = {m}
c = {c}
mode = "{mode}"
{extra}

[grid]
n_points = {n}

[time]
t_end = {t_end}
{snap}

[perturbation]
amplitude = {amp}
profile = "random"
seed = {seed}
"""


def closed_config(n=101, t_end=0.01, amp=0.02, c=-1.0, m=2, mode="CRF", snapshot_interval=None,
                  seed=3, allow_positive_c=False):
    snap = "" if snapshot_interval is None else f"snapshot_interval = {snapshot_interval!r}"
    extra = "allow_positive_c = true" if allow_positive_c else ""
    return parse_config(CLOSED_TEMPLATE.format(m=m, c=c, mode=mode, extra=extra, n=n, t_end=t_end,
                                               snap=snap, amp=amp, seed=seed))
