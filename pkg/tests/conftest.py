import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_market_inputs(rng):
    """A random valid bid problem with room to bid (shared by several modules)."""
    from freqreg.market import MarketInputs

    p_avg = rng.uniform(200, 2000)
    p_var = rng.uniform(0, 400)
    p_max = p_avg + p_var / 2 + rng.uniform(1, 1000)

    def price(hi):
        return 0.0 if rng.random() < 0.1 else rng.uniform(0, hi)

    return MarketInputs(p_avg=p_avg, p_var=p_var, p_max=p_max, cost=price(1e-4),
                        rew_up=price(2e-4), rew_down=price(2e-4),
                        perf_score=rng.uniform(0, 1), threshold=rng.uniform(0, 1))


def random_uc_problem(rng, max_gens=6, max_hours=4):
    """A random feasible unit-commitment instance (None if the draw is infeasible)."""
    from freqreg.grid import Generator, UcProblem

    gens = []
    for j in range(int(rng.integers(1, max_gens + 1))):
        p_min = rng.uniform(10, 60)
        gens.append(Generator(f"g{j}", p_min, p_min + rng.uniform(1, 100),
                              rng.uniform(0, 500), float(rng.integers(10, 60)),
                              rng.uniform(0.3, 1.0), rng.uniform(0, 0.5)))
    cap = sum(g.p_max for g in gens)
    ru, rd = rng.uniform(0, 0.2) * cap, rng.uniform(0, 0.2) * cap
    lo = min(g.p_min for g in gens) + rd
    hi = cap - ru
    if lo >= hi:
        return None
    demand = tuple(rng.uniform(lo, hi) for _ in range(int(rng.integers(1, max_hours + 1))))
    return UcProblem(tuple(gens), demand, ru, rd)


# --- acceptance gate reporting ----------------------------------------------------

_GATE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    n, title = mark.args
    ok = call.excinfo is None
    prev = _GATE.get(n)
    _GATE[n] = (title, (prev[1] if prev else True) and ok, (prev[2] if prev else 0.0) + call.duration)


def pytest_terminal_summary(terminalreporter):
    if not _GATE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_GATE):
        title, ok, secs = _GATE[n]
        terminalreporter.write_line(
            f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  ({secs:6.2f} s)  {title}")
