//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test -p uvfield --test acceptance -- 1 2 3`. Criterion 5 needs
//! `BUNNY_OBJ` pointing at the Stanford bunny and is skipped otherwise.

mod chamfer;
mod desk;
mod fixed_points;
mod gradients;
mod support;

use std::time::Instant;

use desk::DeskRun;
use support::Outcome;

const SEED: u64 = 0x5eed;

struct Suite {
    selected: Vec<u32>,
    failed: usize,
    desk: Option<DeskRun>,
}

impl Suite {
    fn wants(&self, id: u32) -> bool {
        self.selected.is_empty() || self.selected.contains(&id)
    }

    fn report(&mut self, id: u32, name: &str, start: Instant, outcome: Outcome) {
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        if !outcome.pass {
            self.failed += 1;
        }
        println!(
            "[{status}] {id} {name} ({:.1}s): {}",
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }

    fn desk(&mut self) -> &DeskRun {
        self.desk.get_or_insert_with(|| DeskRun::train(&desk::desk_config()))
    }
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut suite = Suite {
        selected,
        failed: 0,
        desk: None,
    };

    let mut fingerprints = Vec::new();
    if suite.wants(1) || suite.wants(7) {
        let start = Instant::now();
        let (outcome, fp) = gradients::run(SEED);
        fingerprints.push(fp);
        if suite.wants(1) {
            suite.report(1, "gradient correctness", start, outcome);
        }
    }
    if suite.wants(2) || suite.wants(7) {
        let start = Instant::now();
        let (outcome, fp) = fixed_points::run();
        fingerprints.push(fp);
        if suite.wants(2) {
            suite.report(2, "loss fixed points", start, outcome);
        }
    }
    if suite.wants(3) || suite.wants(7) {
        let start = Instant::now();
        let (outcome, fp) = chamfer::run(SEED);
        fingerprints.push(fp);
        if suite.wants(3) {
            suite.report(3, "chamfer oracle", start, outcome);
        }
    }
    if suite.wants(4) {
        let start = Instant::now();
        let outcome = desk::end_to_end(suite.desk());
        suite.report(4, "desk-scale sphere fit", start, outcome);
    }
    if suite.wants(5) {
        let start = Instant::now();
        match std::env::var("BUNNY_OBJ") {
            Ok(path) => {
                let outcome = desk::bunny(&path);
                suite.report(5, "bunny reproduction", start, outcome);
            }
            Err(_) => println!("[SKIP] 5 bunny reproduction: set BUNNY_OBJ to the bunny mesh to run"),
        }
    }
    if suite.wants(6) {
        let start = Instant::now();
        let outcome = desk::ablations(suite.desk());
        suite.report(6, "ablation directionality", start, outcome);
    }
    if suite.wants(7) {
        let start = Instant::now();
        let again = [
            gradients::run(SEED).1,
            fixed_points::run().1,
            chamfer::run(SEED).1,
        ];
        let mut differ: Vec<&str> = Vec::new();
        for (name, (a, b)) in ["gradients", "fixed points", "chamfer"].iter().zip(fingerprints.iter().zip(&again)) {
            if a != b {
                differ.push(name);
            }
        }
        let rerun = DeskRun::train(&desk::desk_config());
        differ.extend(desk::same_run(suite.desk(), &rerun));
        let detail = if differ.is_empty() {
            "criteria 1-3 results, desk log, checkpoint and report are bit-identical across two runs".to_owned()
        } else {
            format!("differences in: {}", differ.join(", "))
        };
        suite.report(7, "determinism", start, Outcome::new(differ.is_empty(), detail));
    }
    if suite.wants(8) {
        let start = Instant::now();
        let model = suite.desk().model.clone();
        let outcome = desk::baking_fidelity(&model);
        suite.report(8, "baking fidelity", start, outcome);
    }

    if suite.failed > 0 {
        println!("{} criteria failed", suite.failed);
        std::process::exit(1);
    }
}
