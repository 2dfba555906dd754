//! Safety analysis for control loops with learned controllers.
//!
//! Simulation traces of a closed loop are abstracted into a finite labeled
//! MDP ([`abstraction`]), and safety queries on that model ([`pmc`]) drive
//! two consumers. [`monitor`] switches from an AI controller to a safety
//! controller at run time, and [`falsify`] steers a search for inputs that
//! violate a signal temporal logic specification ([`stl`]).
//!
//! ```
//! use cpsafe::controllers::{ControllerHandle, PidController};
//! use cpsafe::plants::{simulate, PlantModel};
//! use cpsafe::stl::{parse_stl, robustness};
//!
//! let plant = PlantModel::watertank();
//! let mut pid = ControllerHandle::Pid(PidController::for_plant(&plant));
//! let input = plant.default_input_spec();
//! let signal = cpsafe::signals::make_input(input, vec![vec![2.0, 2.0, 2.0, 2.0]]).unwrap();
//! let trace = simulate(&plant, &mut pid, &signal, &plant.default_sim_config()).unwrap();
//! let spec = parse_stl(plant.default_spec()).unwrap();
//! assert!(robustness(&trace, &spec, 0.0).unwrap() > 0.0);
//! ```

pub mod abstraction;
pub mod controllers;
pub mod falsify;
pub mod mdp;
pub mod monitor;
pub mod pipeline;
pub mod plants;
pub mod pmc;
pub mod signals;
pub mod stl;

pub use abstraction::{build_abstraction, refine, AbstractMdp, AbstractionConfig, LabeledTrace};
pub use mdp::{Label, Mdp};
pub use pmc::{check, parse_pctl, PctlFormula, Quantifier};
pub use stl::{parse_stl, robustness, StlFormula};
