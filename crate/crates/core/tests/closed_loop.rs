use std::sync::Arc;

use cpsafe::abstraction::{build_abstraction, AbstractionConfig};
use cpsafe::controllers::{ControllerHandle, PidController};
use cpsafe::monitor::{run_monitored, MonitorConfig, QueryTable};
use cpsafe::pipeline::{collect_traces, label_trace, stream_rng, streams};
use cpsafe::plants::{simulate, PlantModel};
use cpsafe::stl::parse_stl;

fn pid(plant: &PlantModel) -> ControllerHandle {
    ControllerHandle::Pid(PidController::for_plant(plant))
}

#[test]
fn simulation_is_a_pure_function_of_its_inputs() {
    for plant in [PlantModel::acc(), PlantModel::cstr(), PlantModel::watertank()] {
        let sim = plant.default_sim_config();
        let input = plant.default_input_spec().random(&mut stream_rng(3, streams::COLLECT, 0));
        let a = simulate(&plant, &mut pid(&plant), &input, &sim).unwrap();
        let b = simulate(&plant, &mut pid(&plant), &input, &sim).unwrap();
        assert_eq!(a, b, "{}", plant.name());
        assert_eq!(a.len(), sim.num_steps() + 1);
    }
}

#[test]
fn monitored_runs_repeat_and_share_tables() {
    let plant = PlantModel::watertank();
    let sim = plant.default_sim_config();
    let spec = parse_stl(plant.default_spec()).unwrap();
    let runs = collect_traces(&plant, &pid(&plant), &plant.default_input_spec(), &sim, 20, 5, streams::COLLECT).unwrap();
    let labeled: Vec<_> = runs.iter().map(|(_, t)| label_trace(&plant, t, &spec).unwrap()).collect();
    let model = Arc::new(build_abstraction(&labeled, &AbstractionConfig { k: 2, ..AbstractionConfig::default() }).unwrap());
    let cfg = MonitorConfig::default();
    let ai = ControllerHandle::Constant(plant.nominal_control());
    let input = &runs[0].0;

    let first = run_monitored(&plant, ai.clone(), pid(&plant), model.clone(), &cfg, input, &sim).unwrap();
    let again = run_monitored(&plant, ai.clone(), pid(&plant), model.clone(), &cfg, input, &sim).unwrap();
    assert_eq!(first.trace, again.trace);
    assert_eq!(first.tags, again.tags);
    let outcomes = |m: &cpsafe::monitor::MonitoredTrace| m.queries.iter().map(|q| q.outcome).collect::<Vec<_>>();
    assert_eq!(outcomes(&first), outcomes(&again));

    let table = first.table.clone().expect("a query ran");
    assert_eq!(*table, QueryTable::new(&model, &cfg.query, cfg.quantifier).unwrap());
    let reused = cpsafe::monitor::run_monitored_with(&plant, ai, pid(&plant), model, &cfg, input, &sim, Some(table)).unwrap();
    assert_eq!(reused.trace, first.trace);
    assert_eq!(outcomes(&reused), outcomes(&first));
}
