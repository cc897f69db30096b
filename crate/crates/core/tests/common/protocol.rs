//! Random command sequences checked against a small independent model of
//! the task protocol.

use dichoptic::experiment::{Command, ExperimentConfig, Session, TaskPhase};
use dichoptic::OpacityState;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-9;

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

fn check_opacity(o: OpacityState) -> Result<(), String> {
    if in_unit(o.left_alpha) && in_unit(o.right_alpha) {
        Ok(())
    } else {
        Err(format!("alpha out of range: {o:?}"))
    }
}

fn legal_in(phase: TaskPhase) -> Vec<Command> {
    use Command::*;
    use TaskPhase::*;
    match phase {
        Briefing | T1Instructions | T2Instructions | T3Instructions | T3ViewA | T3ViewB => {
            vec![Confirm]
        }
        T1 => vec![IncreaseBoth, DecreaseBoth, Confirm],
        T2 => vec![
            IncreaseLeft,
            DecreaseLeft,
            IncreaseRight,
            DecreaseRight,
            IncreaseBoth,
            DecreaseBoth,
            Confirm,
        ],
        T3Choice => vec![Confirm, ChooseCurrent],
        Done => vec![],
    }
}

/// Outcome of one random run.
pub struct Run {
    pub session: Session,
    pub steps: usize,
    pub rejected: usize,
}

/// Drive a session with `len` random commands drawn from `seed` and check
/// every step. Mostly legal commands are chosen so that many runs finish.
pub fn random_run(seed: u64, len: usize) -> Result<Run, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ExperimentConfig {
        alpha_step: [0.01, 0.05, 0.1, 0.037][rng.gen_range(0..4)],
        initial_alpha: [1.0, 0.0, 0.5, rng.gen_range(0.0..=1.0)][rng.gen_range(0..4)],
        rng_seed: rng.gen(),
        ..ExperimentConfig::default()
    };
    let step = config.alpha_step;
    let mut s = Session::new(format!("P{seed}"), &config).map_err(|e| e.to_string())?;

    // Model state.
    let mut t1_model = config.initial_alpha;
    let mut t2_model = (config.initial_alpha, config.initial_alpha);
    let mut t1_locked: Option<f64> = None;
    let mut t2_locked: Option<(f64, f64)> = None;
    let mut rejected = 0;
    let mut t = 0.0;

    for i in 0..len {
        let phase = s.phase();
        let legal = legal_in(phase);
        let command = if !legal.is_empty() && rng.gen_bool(0.8) {
            *legal.choose(&mut rng).unwrap()
        } else {
            *Command::ALL.choose(&mut rng).unwrap()
        };
        t += rng.gen_range(0.01..2.0);
        let before = s.clone();
        let result = s.apply_command(command, t);
        let ctx = |msg: String| format!("seed {seed} step {i} ({command} in {phase}): {msg}");

        if !legal.contains(&command) {
            if result.is_ok() {
                return Err(ctx("illegal command accepted".into()));
            }
            if s != before {
                return Err(ctx("rejected command changed the session".into()));
            }
            rejected += 1;
            continue;
        }
        let shown = result.map_err(|e| ctx(format!("legal command rejected: {e}")))?;
        check_opacity(shown).map_err(ctx)?;
        if shown != s.opacity() {
            return Err(ctx("returned opacity differs from session opacity".into()));
        }

        // Phase never moves backwards and advances by at most one step.
        let (a, b) = (phase.ordinal(), s.phase().ordinal());
        if b < a || b > a + 1 {
            return Err(ctx(format!("phase jumped from {phase} to {}", s.phase())));
        }
        let advancing = matches!(
            (phase, command),
            (TaskPhase::T3Choice, Command::ChooseCurrent)
        ) || (command == Command::Confirm && phase != TaskPhase::T3Choice);
        if (b == a + 1) != advancing {
            return Err(ctx("phase change did not match the command".into()));
        }

        let nudge = |v: f64, d: f64| (v + d * step).clamp(0.0, 1.0);
        match (phase, command) {
            (TaskPhase::T1, Command::IncreaseBoth) => t1_model = nudge(t1_model, 1.0),
            (TaskPhase::T1, Command::DecreaseBoth) => t1_model = nudge(t1_model, -1.0),
            (TaskPhase::T1, Command::Confirm) => {
                t1_locked = Some(t1_model);
                t2_model = (t1_model, t1_model);
            }
            (TaskPhase::T2, Command::Confirm) => t2_locked = Some(t2_model),
            (TaskPhase::T2, c) => {
                let (dl, dr) = match c {
                    Command::IncreaseLeft => (1.0, 0.0),
                    Command::DecreaseLeft => (-1.0, 0.0),
                    Command::IncreaseRight => (0.0, 1.0),
                    Command::DecreaseRight => (0.0, -1.0),
                    Command::IncreaseBoth => (1.0, 1.0),
                    _ => (-1.0, -1.0),
                };
                t2_model = (nudge(t2_model.0, dl), nudge(t2_model.1, dr));
            }
            _ => {}
        }
        // Keep the model on the same grid as values that went through rounding.
        t1_model = s.t1_alpha().unwrap_or(t1_model);
        if (s.t2_current().0 - t2_model.0).abs() > EPS
            || (s.t2_current().1 - t2_model.1).abs() > EPS
        {
            return Err(ctx(format!(
                "T2 values {:?}, model {:?}",
                s.t2_current(),
                t2_model
            )));
        }
        t2_model = s.t2_current();

        if s.phase() == TaskPhase::T1 && (s.opacity().left_alpha - t1_model).abs() > EPS {
            return Err(ctx(format!("T1 alpha {:?}, model {t1_model}", s.opacity())));
        }
        if s.phase() == TaskPhase::T1 {
            t1_model = s.opacity().left_alpha;
        }
        if s.phase() == TaskPhase::T1 && s.opacity().dichoptic_enabled {
            return Err(ctx("T1 shows a dichoptic frame".into()));
        }

        // Selections are frozen once confirmed.
        if let Some(locked) = t1_locked {
            if s.t1_alpha() != Some(locked) {
                return Err(ctx("T1 selection changed after confirmation".into()));
            }
        }
        if let Some(locked) = t2_locked {
            if s.t2_alphas() != Some(locked) {
                return Err(ctx("T2 selection changed after confirmation".into()));
            }
        }

        // T2 starts from the T1 selection in both eyes.
        if phase == TaskPhase::T1 && command == Command::Confirm {
            let base = s.t1_alpha().unwrap();
            if s.t2_current() != (base, base) {
                return Err(ctx("T2 does not start at the T1 baseline".into()));
            }
        }
        if s.phase() == TaskPhase::T2 && !s.opacity().dichoptic_enabled {
            return Err(ctx("T2 shows a non-dichoptic frame".into()));
        }

        // T3 views show exactly the two confirmed settings.
        if let Some(schedule) = s.t3_schedule() {
            let t1 = s.t1_alpha().unwrap();
            let (l, r) = s.t2_alphas().unwrap();
            let non = OpacityState::new(t1, t1, false);
            let dich = OpacityState::new(l, r, true);
            let mut views = [schedule.view_a, schedule.view_b];
            views.sort_by_key(|v| v.dichoptic_enabled);
            if views != [non, dich] {
                return Err(ctx("T3 views are not the confirmed settings".into()));
            }
        }
        if s.phase() == TaskPhase::Done {
            let record = s.export().map_err(|e| ctx(e.to_string()))?;
            if record.t1_alpha != s.t1_alpha().unwrap()
                || record.non_dichoptic_setting() != OpacityState::uniform(record.t1_alpha)
            {
                return Err(ctx("export disagrees with the session".into()));
            }
            return Ok(Run {
                session: s,
                steps: i + 1,
                rejected,
            });
        }
    }
    if s.export().is_ok() {
        return Err(format!("seed {seed}: unfinished session exported"));
    }
    Ok(Run {
        session: s,
        steps: len,
        rejected,
    })
}
