mod common;

use common::protocol::random_run;
use dichoptic::experiment::{
    Command, ExperimentConfig, LogWriter, Session, SessionLog, SessionRecord, T3Order, TaskPhase,
};
use proptest::prelude::*;

fn finished_session(seed: u64) -> Session {
    let config = ExperimentConfig {
        rng_seed: seed,
        ..ExperimentConfig::default()
    };
    let mut s = Session::new("P01", &config).unwrap();
    let script = [
        (Command::Confirm, 1.0),
        (Command::Confirm, 2.0),
        (Command::DecreaseBoth, 2.5),
        (Command::DecreaseBoth, 2.7),
        (Command::Confirm, 3.0),
        (Command::Confirm, 4.0),
        (Command::DecreaseLeft, 4.5),
        (Command::IncreaseRight, 4.6),
        (Command::Confirm, 5.0),
        (Command::Confirm, 6.0),
        (Command::Confirm, 7.0),
        (Command::Confirm, 8.0),
        (Command::ChooseCurrent, 9.0),
    ];
    for (c, t) in script {
        s.apply_command(c, t).unwrap();
    }
    s
}

#[test]
fn scripted_session_reaches_done_with_expected_values() {
    let s = finished_session(3);
    assert_eq!(s.phase(), TaskPhase::Done);
    let record = s.export().unwrap();
    assert!((record.t1_alpha - 0.98).abs() < 1e-12);
    assert!((record.t2_left_alpha - 0.97).abs() < 1e-12);
    assert!((record.t2_right_alpha - 0.99).abs() < 1e-12);
    assert_eq!(record.t3_order, T3Order::from_seed(3));
    // T3_Choice opens on the second view; ChooseCurrent picks it.
    assert_eq!(record.t3_preference, record.t3_order.second());
    let entered: Vec<TaskPhase> = record.phase_timestamps.iter().map(|p| p.phase).collect();
    assert_eq!(entered, TaskPhase::ALL.to_vec());
}

#[test]
fn random_sequences_respect_the_protocol() {
    let mut finished = 0;
    for seed in 0..500 {
        let run = random_run(seed, 120).unwrap_or_else(|e| panic!("{e}"));
        if run.session.phase() == TaskPhase::Done {
            finished += 1;
        }
    }
    // The generator prefers legal commands, so most runs should get through.
    assert!(finished > 250, "only {finished} of 500 runs finished");
}

#[test]
fn t3_order_is_balanced_over_seeds() {
    let first = (0..1000u64)
        .filter(|&s| T3Order::from_seed(s) == T3Order::DichopticFirst)
        .count();
    assert!((450..=550).contains(&first), "{first} of 1000");
}

#[test]
fn unfinished_session_does_not_export() {
    let mut s = Session::new("P02", &ExperimentConfig::default()).unwrap();
    s.apply_command(Command::Confirm, 1.0).unwrap();
    assert!(s.export().is_err());
}

#[test]
fn log_written_incrementally_replays_to_same_record() {
    let s = finished_session(11);
    let mut buf = Vec::new();
    let mut w = LogWriter::new(&mut buf, &s.log_header()).unwrap();
    for c in s.accepted_commands() {
        w.append(c).unwrap();
    }
    let text = String::from_utf8(buf).unwrap();
    let log = SessionLog::parse(&text).unwrap();
    assert_eq!(log.to_jsonl(), text);
    let replayed = log.replay(&ExperimentConfig::default()).unwrap();
    assert_eq!(replayed.export().unwrap(), s.export().unwrap());

    // A truncated log still parses; replay then stops short of Done.
    let partial: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
    let partial = SessionLog::parse(&partial)
        .unwrap()
        .replay(&ExperimentConfig::default())
        .unwrap();
    assert!(partial.export().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn record_json_round_trips(seed in any::<u64>()) {
        let record = finished_session(seed).export().unwrap();
        let back = SessionRecord::from_json(&record.to_json()).unwrap();
        prop_assert_eq!(back, record);
    }

    #[test]
    fn finished_random_runs_replay_exactly(seed in any::<u64>()) {
        let run = random_run(seed, 150).map_err(TestCaseError::fail)?;
        let s = run.session;
        let mut buf = Vec::new();
        let mut w = LogWriter::new(&mut buf, &s.log_header()).unwrap();
        for c in s.accepted_commands() {
            w.append(c).unwrap();
        }
        let log = SessionLog::parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        if s.accepted_commands().iter().any(|c| c.command == Command::Confirm) {
            let replayed = log.replay(&ExperimentConfig::default()).unwrap();
            prop_assert_eq!(replayed.phase(), s.phase());
            prop_assert_eq!(replayed.opacity(), s.opacity());
            prop_assert_eq!(replayed.export().ok(), s.export().ok());
        }
    }
}
