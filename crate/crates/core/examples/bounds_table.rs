//! Closed-form safety bounds for the built-in scenarios.
//!
//! cargo run --release --example bounds_table

use ssk::harness::cli::bounds_lines;
use ssk::harness::config::ScenarioConfig;

fn main() {
    let scenarios = [
        r#"{"model":"planar","certificate":{"family":"scbf"},"T":5,"model_params":{"x0":[0,1.5]}}"#,
        r#"{"model":"unicycle","certificate":{"family":"ho_scbf"},"T":5,"model_params":{"x0":[0,1.5,-1.27]}}"#,
        r#"{"model":"acc","certificate":{"family":"scbf"},"T":20}"#,
    ];
    for json in scenarios {
        let s = ScenarioConfig::from_json_str(json, &[]).unwrap();
        println!("== {:?}", s.config.model);
        for line in bounds_lines(&s).unwrap() {
            println!("  {line}");
        }
    }
}
