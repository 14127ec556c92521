//! Wind scenario and the hourly TSO → DSO → RL orchestration.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::central::{self, CentralClearingResult, SettlementReport};
use crate::error::{Error, Result};
use crate::grid::{BusId, Violation, ValidatedSystem};
use crate::local::{self, LocalDispatch, SteppedBid};
use crate::REPORT_TOL;

pub const HOURS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindHour {
    pub forecast: f64,
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindScenario {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub description: Vec<String>,
    pub wind_bus: BusId,
    pub hours: Vec<WindHour>,
}

impl WindScenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Schema {
            path: path.to_owned(),
            source,
        })
    }

    pub fn bundled() -> Result<Self> {
        Self::load(&crate::bundled_data_dir().join("scenario.json"))
    }

    /// Forecast equal to observation every hour.
    pub fn flat(wind_bus: BusId, mw: f64) -> Self {
        Self {
            description: vec![],
            wind_bus,
            hours: vec![
                WindHour {
                    forecast: mw,
                    observed: mw
                };
                HOURS
            ],
        }
    }

    pub fn validate(&self, bus_count: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.hours.len() != HOURS {
            out.push(Violation::new("scenario-hours", format!("scenario has {} hours, expected {HOURS}", self.hours.len())));
        }
        if self.wind_bus >= bus_count {
            out.push(Violation::new("scenario-bus", format!("wind bus {} does not exist", self.wind_bus)));
        }
        for (h, w) in self.hours.iter().enumerate() {
            if !(w.forecast >= 0.0 && w.observed >= 0.0) || !w.forecast.is_finite() || !w.observed.is_finite() {
                out.push(Violation::new("scenario-power", format!("hour {h}: wind powers must be finite and ≥ 0")));
            }
        }
        out
    }
}

/// ΔP per bus for one hour: observed − forecast at the wind bus.
pub fn hourly_imbalance(scenario: &WindScenario, hour: usize, bus_count: usize) -> Result<Vec<f64>> {
    let w = scenario.hours.get(hour).filter(|_| hour < HOURS).ok_or(Error::HourOutOfRange(hour))?;
    if scenario.wind_bus >= bus_count {
        return Err(Error::UnknownBus(scenario.wind_bus));
    }
    let mut out = vec![0.0; bus_count];
    out[scenario.wind_bus] = w.observed - w.forecast;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRecord {
    pub hour: usize,
    /// MW per bus.
    pub imbalance: Vec<f64>,
    pub stepped_bids: Vec<SteppedBid>,
    pub clearing: CentralClearingResult,
    /// Empty in idle hours.
    pub local_dispatches: Vec<LocalDispatch>,
    pub settlement: SettlementReport,
}

impl HourRecord {
    pub fn is_idle(&self) -> bool {
        self.imbalance.iter().all(|v| v.abs() < REPORT_TOL)
    }

    pub fn total_imbalance(&self) -> f64 {
        self.imbalance.iter().sum()
    }
}

/// Runs one hour: aggregate → clear → dispatch locally → settle.
pub fn simulate_hour(system: &ValidatedSystem, scenario: &WindScenario, hour: usize) -> Result<HourRecord> {
    let network = system.network();
    let config = system.config();
    let imbalance = hourly_imbalance(scenario, hour, network.bus_count())?;

    let stepped_bids = system
        .dsos()
        .into_iter()
        .map(|dso| {
            let feeder = system
                .feeder(dso)
                .ok_or_else(|| Error::ContractViolation(format!("DSO {dso} has a tie line but no feeder")))?;
            local::aggregate_bids(dso, &system.bids_for(dso), config.aggregation, feeder, config.loss_price)
        })
        .collect::<Result<Vec<_>>>()?;

    let idle = imbalance.iter().all(|v| v.abs() < REPORT_TOL);
    let (clearing, local_dispatches) = if idle {
        (CentralClearingResult::idle(network, &stepped_bids, config.power_base)?, Vec::new())
    } else {
        let clearing = central::clear_central(network, &stepped_bids, &imbalance, config)?;
        let dispatches = stepped_bids
            .iter()
            .map(|b| {
                let feeder = system.feeder(b.dso).expect("stepped bids exist only for DSOs with feeders");
                local::dispatch_local(b.dso, clearing.dso_accepted(b.dso), &system.bids_for(b.dso), feeder, config.loss_price)
            })
            .collect::<Result<Vec<_>>>()?;
        (clearing, dispatches)
    };
    let settlement = central::settle(&clearing, &stepped_bids, &local_dispatches, config);
    Ok(HourRecord {
        hour,
        imbalance,
        stepped_bids,
        clearing,
        local_dispatches,
        settlement,
    })
}

/// Runs all 24 hours. Hours are independent and cleared in parallel; the
/// records come back in hour order.
pub fn run_simulation(system: &ValidatedSystem, scenario: &WindScenario) -> Result<Vec<HourRecord>> {
    let violations = scenario.validate(system.network().bus_count());
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    (0..HOURS)
        .into_par_iter()
        .map(|h| simulate_hour(system, scenario, h).map_err(|e| Error::AtHour { hour: h, source: Box::new(e) }))
        .collect()
}
