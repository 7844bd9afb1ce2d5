"""Carbon and cost accounting for a data center offering regulation.

Operational carbon is facility energy times grid intensity.  Exogenous carbon
is the grid-side saving credited to the data center's regulation provision,
``R_DC * MCE``, and is subtracted from operational carbon.  Embodied carbon of
servers (and of the UPS fleet) is amortized per year.  All report figures are
on an annual basis, in tCO2eq and USD.  Per-server simulation results are
scaled linearly to the fleet and to a year.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError, ParameterError

HOURS_PER_YEAR = 8760.0
SCENARIOS = ("baseline", "ecocenter", "cpu_only", "ups_only")


@dataclass(frozen=True)
class ServerComponents:
    gpus_per_server: int = 8
    gpu_kg: float = 30.0
    cpu_kg: float = 18.0
    dram_kg: float = 7.0
    disk_kg: float = 20.0


@dataclass(frozen=True)
class DcSpec:
    capacity_mw: float = 100.0
    pue: float = 1.09
    server_power_kw: float = 7.0
    components: ServerComponents = field(default_factory=ServerComponents)
    embodied_amortization_years: float = 5.0
    ups_capacity_mwh: float = 100.0
    ups_kg_per_mwh: float = 74000.0
    ups_lifespan_penalty: float = 0.28
    ups_regulation_share: float = 0.2
    cpu_provision_share: float = 0.2

    def __post_init__(self):
        values = [self.capacity_mw, self.server_power_kw, self.ups_capacity_mwh,
                  self.ups_kg_per_mwh, self.ups_lifespan_penalty, *asdict(self.components).values()]
        if any(v < 0 for v in values):
            raise ParameterError("data center parameters must be non-negative")
        if self.pue < 1:
            raise ParameterError("pue must be >= 1")
        if not self.server_power_kw > 0 or not self.embodied_amortization_years > 0:
            raise ParameterError("server power and amortization period must be positive")
        if not self.ups_lifespan_penalty < 1:
            raise ParameterError("ups_lifespan_penalty must be < 1")
        for share in (self.ups_regulation_share, self.cpu_provision_share):
            if not 0 <= share <= 1:
                raise ParameterError("provision shares must lie in [0, 1]")


@dataclass(frozen=True)
class TcoPrices:
    elec: float = 0.10               # $/kWh
    gpu_hour: float = 1.0            # $/GPU-hour of lost BE work
    facility_per_w: float = 8.0      # $/W of capacity
    server_cost: float = 235000.0    # $/server
    reward_per_mw_h: float = 7.0     # $/MW-h of provision
    facility_years: float = 15.0
    server_amortization_years: float = 5.0

    def __post_init__(self):
        if min(self.elec, self.gpu_hour, self.facility_per_w, self.server_cost,
               self.reward_per_mw_h) < 0:
            raise ParameterError("prices must be non-negative")
        if not (self.facility_years > 0 and self.server_amortization_years > 0):
            raise ParameterError("amortization periods must be positive")


@dataclass(frozen=True)
class CarbonReport:
    scenario: str
    c_op: float
    c_em_amortized: float
    c_exogenous: float
    c_op_with_rs: float
    provision_mw: float = 0.0

    @property
    def identity_holds(self) -> bool:
        return math.isclose(self.c_op_with_rs, self.c_op - self.c_exogenous,
                            rel_tol=1e-12, abs_tol=1e-9)


@dataclass(frozen=True)
class TcoReport:
    scenario: str
    capex_servers: float
    capex_infra: float
    opex_power: float
    regulation_revenue: float
    opportunity_cost: float
    total: float


# --- carbon ----------------------------------------------------------------

def operational_carbon(e_dc_mwh: float, ci_gen: float) -> float:
    """tCO2eq from ``e_dc_mwh`` of facility energy at intensity ``ci_gen``."""
    if e_dc_mwh < 0 or ci_gen < 0:
        raise ParameterError("energy and carbon intensity must be non-negative")
    return e_dc_mwh * ci_gen


def exogenous_carbon(r_dc_mw: float, mce: float) -> float:
    """Grid-side saving credited to ``r_dc_mw`` of regulation provision."""
    if r_dc_mw < 0:
        raise ParameterError("r_dc must be non-negative")
    return r_dc_mw * mce + 0.0  # no negative zero


def op_with_rs(c_op: float, c_exo: float) -> float:
    """Operational carbon net of exogenous savings; negative when outweighed."""
    return c_op - c_exo


def net_improvement(c_exo: float, c_op_increase: float) -> float:
    return c_exo - c_op_increase


def n_servers(spec: DcSpec) -> int:
    """Servers fitting the capacity once facility overhead is counted."""
    per_server_mw = spec.server_power_kw * spec.pue / 1000.0
    return int(math.floor(spec.capacity_mw / per_server_mw + 1e-9))


def embodied_carbon(spec: DcSpec, ups_regulation: bool = False) -> dict:
    """Per-server embodied carbon and amortized fleet totals.

    Returns:
        dict with ``per_server`` (kg), ``n_servers``, ``dc_total_amortized``
        and ``ups_total_amortized`` (t/yr).  A UPS fleet that also provides
        regulation wears out sooner, which raises its annual share.
    """
    c = spec.components
    per_server = c.gpus_per_server * c.gpu_kg + c.cpu_kg + c.dram_kg + c.disk_kg
    count = n_servers(spec)
    years = spec.embodied_amortization_years
    dc_total = per_server * count / 1000.0 / years
    ups_total = spec.ups_capacity_mwh * spec.ups_kg_per_mwh / 1000.0 / years
    if ups_regulation:
        ups_total /= 1.0 - spec.ups_lifespan_penalty
    return {"per_server": per_server, "n_servers": count,
            "dc_total_amortized": dc_total, "ups_total_amortized": ups_total}


def backsolve_ci(c_op_t: float, capacity_mw: float, load: float,
                 hours: float = HOURS_PER_YEAR) -> float:
    """Grid intensity that makes a facility at ``load`` emit ``c_op_t`` per year."""
    energy = capacity_mw * load * hours
    if energy <= 0:
        raise ParameterError("energy must be positive to back-solve intensity")
    return c_op_t / energy


# --- TCO -------------------------------------------------------------------

def tco(spec: DcSpec, prices: TcoPrices, energy_mwh: float, revenue: float,
        be_gpu_hours_lost: float, scenario: str = "") -> TcoReport:
    """Annual total cost of ownership.

    Args:
        spec: facility description.
        prices: unit prices and amortization periods.
        energy_mwh: annual IT energy (PUE is applied here).
        revenue: annual regulation revenue in $.
        be_gpu_hours_lost: annual BE GPU-hours lost to modulation.
    """
    if min(energy_mwh, revenue, be_gpu_hours_lost) < 0:
        raise ParameterError("simulation outputs must be non-negative")
    capex_infra = spec.capacity_mw * 1e6 * prices.facility_per_w / prices.facility_years
    capex_servers = n_servers(spec) * prices.server_cost / prices.server_amortization_years
    opex_power = energy_mwh * 1000.0 * spec.pue * prices.elec
    opportunity = be_gpu_hours_lost * prices.gpu_hour
    total = capex_servers + capex_infra + opex_power - revenue + opportunity
    return TcoReport(scenario, capex_servers, capex_infra, opex_power, revenue, opportunity, total)


def crossover_gpu_hour_price(revenue: float, be_gpu_hours_lost: float) -> float:
    """GPU-hour price above which lost BE work costs more than regulation earns."""
    if be_gpu_hours_lost <= 0:
        return math.inf
    return revenue / be_gpu_hours_lost


# --- scenario reports ------------------------------------------------------

@dataclass(frozen=True)
class ScenarioInputs:
    """Per-server simulation results plus grid figures for the reports.

    Powers are simulated server averages in W; ``server_nameplate_w`` is the
    simulated server's peak, used to scale one simulated server to one fleet
    server of ``DcSpec.server_power_kw``.  ``mce`` is tCO2eq per MW of
    provision over ``mce_horizon_h`` hours.
    """

    ci_gen: float
    mce: float
    mce_horizon_h: float
    baseline_power_w: float
    ecocenter_power_w: float
    ecocenter_provision_w: float
    server_nameplate_w: float
    be_gpu_hours_lost_per_h: float = 0.0

    def __post_init__(self):
        if not self.mce_horizon_h > 0 or not self.server_nameplate_w > 0:
            raise ConfigError("mce_horizon_h and server_nameplate_w must be positive")
        if min(self.ci_gen, self.baseline_power_w, self.ecocenter_power_w,
               self.ecocenter_provision_w, self.be_gpu_hours_lost_per_h) < 0:
            raise ConfigError("scenario inputs must be non-negative")


def scenario_figures(scenario: str, spec: DcSpec, inputs: ScenarioInputs) -> dict:
    """Fleet-level provision (MW), IT energy (MWh/yr) and lost GPU-hours/yr."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    fleet = n_servers(spec) * spec.server_power_kw * 1000.0 / inputs.server_nameplate_w
    to_mw = fleet / 1e6
    base_mw = inputs.baseline_power_w * to_mw
    eco_mw = inputs.ecocenter_power_w * to_mw
    eco_prov = inputs.ecocenter_provision_w * to_mw
    lost = inputs.be_gpu_hours_lost_per_h * fleet * HOURS_PER_YEAR
    if scenario == "baseline":
        power, provision, lost = base_mw, 0.0, 0.0
    elif scenario == "ecocenter":
        power, provision = eco_mw, eco_prov
    elif scenario == "cpu_only":
        share = spec.cpu_provision_share
        power, provision, lost = base_mw + share * (eco_mw - base_mw), share * eco_prov, 0.0
    else:
        power, provision, lost = base_mw, spec.ups_regulation_share * spec.ups_capacity_mwh, 0.0
    return {"provision_mw": provision, "energy_mwh": power * HOURS_PER_YEAR,
            "be_gpu_hours_lost": lost}


def build_report(scenario: str, spec: DcSpec, inputs: ScenarioInputs,
                 prices: TcoPrices | None = None) -> tuple:
    """CarbonReport and TcoReport for one scenario."""
    prices = prices or TcoPrices()
    fig = scenario_figures(scenario, spec, inputs)
    c_op = operational_carbon(fig["energy_mwh"] * spec.pue, inputs.ci_gen)
    annual_mce = inputs.mce * HOURS_PER_YEAR / inputs.mce_horizon_h
    c_exo = exogenous_carbon(fig["provision_mw"], annual_mce)
    em = embodied_carbon(spec, ups_regulation=scenario == "ups_only")
    c_em = em["dc_total_amortized"] + em["ups_total_amortized"]
    carbon = CarbonReport(scenario, c_op, c_em, c_exo, op_with_rs(c_op, c_exo),
                          fig["provision_mw"])
    revenue = fig["provision_mw"] * prices.reward_per_mw_h * HOURS_PER_YEAR
    cost = tco(spec, prices, fig["energy_mwh"], revenue, fig["be_gpu_hours_lost"], scenario)
    return carbon, cost


def build_all(spec: DcSpec, inputs: ScenarioInputs, prices: TcoPrices | None = None,
              scenarios=SCENARIOS) -> list:
    return [build_report(s, spec, inputs, prices) for s in scenarios]


def comparison_table(reports) -> str:
    """Aligned-column text table of carbon (t/yr) and TCO ($/yr) per scenario."""
    header = ("scenario", "provision_mw", "c_op_t", "c_exogenous_t", "c_op_with_rs_t",
              "c_em_t", "tco_total_usd")
    rows = [header]
    for carbon, cost in reports:
        rows.append((carbon.scenario, f"{carbon.provision_mw:.3f}", f"{carbon.c_op:.3f}",
                     f"{carbon.c_exogenous:.3f}", f"{carbon.c_op_with_rs:.3f}",
                     f"{carbon.c_em_amortized:.3f}", f"{cost.total:.2f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["# annual figures; per-server simulation scaled linearly to fleet and year"]
    for r in rows:
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w)
                               for i, (v, w) in enumerate(zip(r, widths))).rstrip())
    return "\n".join(lines) + "\n"


def reports_json(reports) -> str:
    data = {"basis": "annual; per-server simulation scaled linearly to fleet and year",
            "scenarios": [{"carbon": asdict(c), "tco": asdict(t)} for c, t in reports]}
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_reports(reports, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json", out / "report.txt"]
    paths[0].write_text(reports_json(reports), encoding="utf-8")
    paths[1].write_text(comparison_table(reports), encoding="utf-8")
    return paths
