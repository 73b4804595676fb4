//! Price-driven three-step dispatch.
//!
//! Step 1 collects step-shaped bid functions from every flexible device and
//! aggregates them. Step 2 plans the production profile over a finite
//! horizon by minimizing the effective heat cost on fitted aggregate models.
//! Step 3 projects the plan onto the devices through a market clearing with
//! a PI trim loop, and picks the cheaper heat source (CHP versus boiler)
//! from the spot price.

mod bid;
mod fit;
mod mpc;
mod pi;
mod source;

pub use bid::{aggregate, build_bid, clear_market, AggregateBid, BidFunction};
pub use fit::{
    building_one_step_rms, fit_aggregate_models, fit_building, fit_tank, tank_one_step_rms,
    AggregateBuildingModel, AggregateTankModel, HistoricTrace,
};
pub use mpc::{plan, DispatchPlan, PlanConfig, PlanInputs};
pub use pi::PiController;
pub use source::{boiler_heat_cost_eur_mwh, effective_heat_cost_eur_mwh, select_source, SourceSplit};
