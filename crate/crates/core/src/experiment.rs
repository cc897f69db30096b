//! Three-task selection protocol.
//!
//! The participant first picks one occluder alpha applied to both eyes (T1),
//! then a separate alpha per eye starting from the T1 value (T2), and finally
//! views both settings in a seeded random order and picks the one they prefer
//! (T3). Each task is preceded by an instruction screen dismissed with
//! `Confirm`.
//!
//! Commands carry a caller-supplied timestamp so a logged session replays to an
//! identical record.

use crate::analysis::{ParticipantRow, Preference};
use crate::raster::{clamp_unit, OpacityState};
use crate::scene::{SceneConfig, StereoRig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

/// Alphas are kept on this grid so repeated steps do not accumulate drift.
const ALPHA_GRID: f64 = 1e9;

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("illegal command {command} in phase {phase}")]
    IllegalCommand { command: Command, phase: TaskPhase },
    #[error("incomplete session: missing {0}")]
    IncompleteSession(String),
    #[error("illegal sequence: {0}")]
    IllegalSequence(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("log parse error at line {line}: {message}")]
    LogParse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskPhase {
    Briefing,
    #[serde(rename = "T1_Instructions")]
    T1Instructions,
    T1,
    #[serde(rename = "T2_Instructions")]
    T2Instructions,
    T2,
    #[serde(rename = "T3_Instructions")]
    T3Instructions,
    #[serde(rename = "T3_ViewA")]
    T3ViewA,
    #[serde(rename = "T3_ViewB")]
    T3ViewB,
    #[serde(rename = "T3_Choice")]
    T3Choice,
    Done,
}

impl TaskPhase {
    pub const ALL: [TaskPhase; 10] = [
        TaskPhase::Briefing,
        TaskPhase::T1Instructions,
        TaskPhase::T1,
        TaskPhase::T2Instructions,
        TaskPhase::T2,
        TaskPhase::T3Instructions,
        TaskPhase::T3ViewA,
        TaskPhase::T3ViewB,
        TaskPhase::T3Choice,
        TaskPhase::Done,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskPhase::Briefing => "Briefing",
            TaskPhase::T1Instructions => "T1_Instructions",
            TaskPhase::T1 => "T1",
            TaskPhase::T2Instructions => "T2_Instructions",
            TaskPhase::T2 => "T2",
            TaskPhase::T3Instructions => "T3_Instructions",
            TaskPhase::T3ViewA => "T3_ViewA",
            TaskPhase::T3ViewB => "T3_ViewB",
            TaskPhase::T3Choice => "T3_Choice",
            TaskPhase::Done => "Done",
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }

    fn next(self) -> TaskPhase {
        TaskPhase::ALL[(self.ordinal() + 1).min(TaskPhase::ALL.len() - 1)]
    }
}

impl fmt::Display for TaskPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    IncreaseLeft,
    DecreaseLeft,
    IncreaseRight,
    DecreaseRight,
    IncreaseBoth,
    DecreaseBoth,
    Confirm,
    ChooseCurrent,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::IncreaseLeft,
        Command::DecreaseLeft,
        Command::IncreaseRight,
        Command::DecreaseRight,
        Command::IncreaseBoth,
        Command::DecreaseBoth,
        Command::Confirm,
        Command::ChooseCurrent,
    ];

    /// Wire code, 1 through 8 in declaration order.
    pub fn code(self) -> u8 {
        Command::ALL.iter().position(|&c| c == self).unwrap() as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<Command> {
        Command::ALL.get((code as usize).checked_sub(1)?).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Command::IncreaseLeft => "IncreaseLeft",
            Command::DecreaseLeft => "DecreaseLeft",
            Command::IncreaseRight => "IncreaseRight",
            Command::DecreaseRight => "DecreaseRight",
            Command::IncreaseBoth => "IncreaseBoth",
            Command::DecreaseBoth => "DecreaseBoth",
            Command::Confirm => "Confirm",
            Command::ChooseCurrent => "ChooseCurrent",
        }
    }

    /// Whether the command may be issued in `phase`.
    pub fn is_legal(self, phase: TaskPhase) -> bool {
        use Command::*;
        use TaskPhase::*;
        match phase {
            Briefing | T1Instructions | T2Instructions | T3Instructions | T3ViewA | T3ViewB => {
                self == Confirm
            }
            T1 => matches!(self, IncreaseBoth | DecreaseBoth | Confirm),
            T2 => self != ChooseCurrent,
            T3Choice => matches!(self, Confirm | ChooseCurrent),
            Done => false,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Command::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown command `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum T3Order {
    DichopticFirst,
    NonDichopticFirst,
}

impl T3Order {
    /// Order drawn from a ChaCha8 generator seeded with `seed`.
    pub fn from_seed(seed: u64) -> T3Order {
        draw_order(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn first(self) -> Preference {
        match self {
            T3Order::DichopticFirst => Preference::Dichoptic,
            T3Order::NonDichopticFirst => Preference::NonDichoptic,
        }
    }

    pub fn second(self) -> Preference {
        match self {
            T3Order::DichopticFirst => Preference::NonDichoptic,
            T3Order::NonDichopticFirst => Preference::Dichoptic,
        }
    }
}

fn draw_order<R: Rng + ?Sized>(rng: &mut R) -> T3Order {
    if rng.gen_bool(0.5) {
        T3Order::DichopticFirst
    } else {
        T3Order::NonDichopticFirst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Alpha change per key press.
    pub alpha_step: f64,
    /// Seeds the T3 presentation order.
    pub rng_seed: u64,
    /// Occluder alpha when T1 begins.
    pub initial_alpha: f64,
    pub scene: SceneConfig,
    pub rig: StereoRig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha_step: 0.01,
            rng_seed: 0,
            initial_alpha: 1.0,
            scene: SceneConfig::default(),
            rig: StereoRig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse TOML with optional top-level `alpha_step`, `rng_seed` and
    /// `initial_alpha` plus the `[scene]` and `[rig]` tables of a view config.
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.alpha_step > 0.0 && self.alpha_step <= 0.1) {
            return Err(ExperimentError::InvalidConfig(format!(
                "alpha_step must be in (0, 0.1], got {}",
                self.alpha_step
            )));
        }
        if !(0.0..=1.0).contains(&self.initial_alpha) {
            return Err(ExperimentError::InvalidConfig(format!(
                "initial_alpha must be in [0, 1], got {}",
                self.initial_alpha
            )));
        }
        self.scene
            .validate()
            .and(self.rig.validate())
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
    }
}

/// On-screen text for the phases that show instructions.
pub fn instruction_text(phase: TaskPhase) -> Option<&'static str> {
    match phase {
        TaskPhase::Briefing => Some(
            "Welcome. You will see a pyramid inside a cube, both slowly turning. \
             Over three short tasks you will adjust how see-through the outer cube is. \
             There is no time limit. Press Enter when you are ready.",
        ),
        TaskPhase::T1Instructions => Some(
            "Task 1. Use the up and down keys to make the outer cube more or less \
             see-through; both eyes change together. First try the full range, from \
             fully clear to fully solid. Then settle on the setting where you can see \
             both the cube and the pyramid clearly while still judging their shape and \
             depth. Press Enter to begin, and Enter again to lock in your choice.",
        ),
        TaskPhase::T2Instructions => Some(
            "Task 2. You start from the setting you just chose. Now each eye can be \
             adjusted on its own, or both together. Again try the full range for each \
             eye first, then settle on the setting where both shapes are easiest to \
             see while keeping their shape and depth clear. Press Enter to begin, and \
             Enter again to lock in your choice.",
        ),
        TaskPhase::T3Instructions => Some(
            "Task 3. You will now see your two chosen settings one after the other. \
             Press Enter to move from the first to the second. Afterwards you can \
             switch between them with Enter, and press Space on the one you prefer \
             for seeing shape, detail and the overall layout.",
        ),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimestamp {
    pub phase: TaskPhase,
    /// Seconds since the session began.
    pub entered_at: f64,
}

/// A finished session, as written to the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub participant_id: String,
    pub t1_alpha: f64,
    pub t2_left_alpha: f64,
    pub t2_right_alpha: f64,
    pub t3_preference: Preference,
    pub t3_order: T3Order,
    pub phase_timestamps: Vec<PhaseTimestamp>,
}

impl SessionRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session record always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_participant_row(&self) -> ParticipantRow {
        ParticipantRow {
            participant_id: self.participant_id.clone(),
            non_dichoptic_alpha: self.t1_alpha,
            dichoptic_left: self.t2_left_alpha,
            dichoptic_right: self.t2_right_alpha,
            preference: self.t3_preference,
        }
    }

    pub fn non_dichoptic_setting(&self) -> OpacityState {
        OpacityState::new(self.t1_alpha, self.t1_alpha, false)
    }

    pub fn dichoptic_setting(&self) -> OpacityState {
        OpacityState::new(self.t2_left_alpha, self.t2_right_alpha, true)
    }
}

/// The two settings shown in T3, in presentation order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct T3Schedule {
    pub order: T3Order,
    pub view_a: OpacityState,
    pub view_b: OpacityState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedCommand {
    pub seq: u64,
    pub t: f64,
    pub command: Command,
}

/// Live state of one participant's session.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    participant_id: String,
    alpha_step: f64,
    rng_seed: u64,
    initial_alpha: f64,
    phase: TaskPhase,
    t1_current: f64,
    t1_alpha: Option<f64>,
    t2_current: (f64, f64),
    t2_alphas: Option<(f64, f64)>,
    t3: Option<T3Schedule>,
    /// Setting shown during T3_Choice.
    t3_showing: Preference,
    preference: Option<Preference>,
    timestamps: Vec<PhaseTimestamp>,
    accepted: Vec<LoggedCommand>,
}

impl Session {
    pub fn new(
        participant_id: impl Into<String>,
        config: &ExperimentConfig,
    ) -> Result<Self, ExperimentError> {
        config.validate()?;
        Ok(Self {
            participant_id: participant_id.into(),
            alpha_step: config.alpha_step,
            rng_seed: config.rng_seed,
            initial_alpha: config.initial_alpha,
            phase: TaskPhase::Briefing,
            t1_current: config.initial_alpha,
            t1_alpha: None,
            t2_current: (config.initial_alpha, config.initial_alpha),
            t2_alphas: None,
            t3: None,
            t3_showing: Preference::Dichoptic,
            preference: None,
            timestamps: vec![PhaseTimestamp {
                phase: TaskPhase::Briefing,
                entered_at: 0.0,
            }],
            accepted: Vec::new(),
        })
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn phase(&self) -> TaskPhase {
        self.phase
    }

    pub fn t1_alpha(&self) -> Option<f64> {
        self.t1_alpha
    }

    /// Current per-eye values while adjusting in T2.
    pub fn t2_current(&self) -> (f64, f64) {
        self.t2_current
    }

    pub fn t2_alphas(&self) -> Option<(f64, f64)> {
        self.t2_alphas
    }

    pub fn t3_schedule(&self) -> Option<T3Schedule> {
        self.t3
    }

    pub fn preference(&self) -> Option<Preference> {
        self.preference
    }

    pub fn timestamps(&self) -> &[PhaseTimestamp] {
        &self.timestamps
    }

    /// Commands accepted so far, in application order.
    pub fn accepted_commands(&self) -> &[LoggedCommand] {
        &self.accepted
    }

    /// Opacity that should be on screen right now.
    pub fn opacity(&self) -> OpacityState {
        use TaskPhase::*;
        match self.phase {
            Briefing | T1Instructions | T1 => OpacityState::uniform(self.t1_current),
            T2Instructions => OpacityState::uniform(self.t1_current),
            T2 => OpacityState::new(self.t2_current.0, self.t2_current.1, true),
            T3Instructions => {
                let (l, r) = self.t2_current;
                OpacityState::new(l, r, true)
            }
            T3ViewA | T3ViewB => {
                let schedule = self.t3.expect("T3 schedule is drawn before the views");
                if self.phase == T3ViewA {
                    schedule.view_a
                } else {
                    schedule.view_b
                }
            }
            T3Choice | Done => {
                let shown = self.preference.unwrap_or(self.t3_showing);
                self.setting_for(shown)
            }
        }
    }

    fn setting_for(&self, which: Preference) -> OpacityState {
        match which {
            Preference::NonDichoptic => {
                OpacityState::uniform(self.t1_alpha.unwrap_or(self.t1_current))
            }
            Preference::Dichoptic => {
                let (l, r) = self.t2_alphas.unwrap_or(self.t2_current);
                OpacityState::new(l, r, true)
            }
        }
    }

    fn step(&self, value: f64, direction: f64) -> f64 {
        let next = clamp_unit(value + direction * self.alpha_step);
        (next * ALPHA_GRID).round() / ALPHA_GRID
    }

    fn enter(&mut self, phase: TaskPhase, t: f64) {
        debug_assert!(phase > self.phase);
        self.phase = phase;
        self.timestamps.push(PhaseTimestamp {
            phase,
            entered_at: t,
        });
    }

    /// Apply one command at time `t` and return the opacity now on screen.
    pub fn apply_command(
        &mut self,
        command: Command,
        t: f64,
    ) -> Result<OpacityState, ExperimentError> {
        if !command.is_legal(self.phase) {
            return Err(ExperimentError::IllegalCommand {
                command,
                phase: self.phase,
            });
        }
        use Command::*;
        match (self.phase, command) {
            (TaskPhase::T1, IncreaseBoth) => self.t1_current = self.step(self.t1_current, 1.0),
            (TaskPhase::T1, DecreaseBoth) => self.t1_current = self.step(self.t1_current, -1.0),
            (TaskPhase::T1, Confirm) => {
                self.t1_alpha = Some(self.t1_current);
                self.t2_current = (self.t1_current, self.t1_current);
                self.enter(TaskPhase::T2Instructions, t);
            }
            (TaskPhase::T2, Confirm) => {
                self.t2_alphas = Some(self.t2_current);
                self.enter(TaskPhase::T3Instructions, t);
            }
            (TaskPhase::T2, adjust) => {
                let (l, r) = self.t2_current;
                let (dl, dr) = match adjust {
                    IncreaseLeft => (1.0, 0.0),
                    DecreaseLeft => (-1.0, 0.0),
                    IncreaseRight => (0.0, 1.0),
                    DecreaseRight => (0.0, -1.0),
                    IncreaseBoth => (1.0, 1.0),
                    DecreaseBoth => (-1.0, -1.0),
                    Confirm | ChooseCurrent => unreachable!("handled above or illegal"),
                };
                self.t2_current = (self.step(l, dl), self.step(r, dr));
            }
            (TaskPhase::T3Instructions, Confirm) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
                self.begin_t3(&mut rng)?;
                self.enter(TaskPhase::T3ViewA, t);
            }
            (TaskPhase::T3ViewB, Confirm) => {
                self.t3_showing = self.t3.expect("schedule set before views").order.second();
                self.enter(TaskPhase::T3Choice, t);
            }
            (TaskPhase::T3Choice, Confirm) => {
                self.t3_showing = match self.t3_showing {
                    Preference::Dichoptic => Preference::NonDichoptic,
                    Preference::NonDichoptic => Preference::Dichoptic,
                };
            }
            (TaskPhase::T3Choice, ChooseCurrent) => {
                self.preference = Some(self.t3_showing);
                self.enter(TaskPhase::Done, t);
            }
            (phase, Confirm) => self.enter(phase.next(), t),
            (phase, command) => unreachable!("{command} accepted in {phase} without a handler"),
        }
        self.accepted.push(LoggedCommand {
            seq: self.accepted.len() as u64 + 1,
            t,
            command,
        });
        Ok(self.opacity())
    }

    /// Draw the T3 presentation order. Requires T2 to be confirmed.
    pub fn begin_t3<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
    ) -> Result<T3Schedule, ExperimentError> {
        let (Some(t1), Some((l, r))) = (self.t1_alpha, self.t2_alphas) else {
            return Err(ExperimentError::IllegalSequence(
                "T3 requires confirmed T1 and T2 selections".into(),
            ));
        };
        let order = draw_order(rng);
        let non = OpacityState::new(t1, t1, false);
        let dich = OpacityState::new(l, r, true);
        let (view_a, view_b) = match order {
            T3Order::DichopticFirst => (dich, non),
            T3Order::NonDichopticFirst => (non, dich),
        };
        let schedule = T3Schedule {
            order,
            view_a,
            view_b,
        };
        self.t3 = Some(schedule);
        Ok(schedule)
    }

    /// The finished record; fails unless the session reached `Done`.
    pub fn export(&self) -> Result<SessionRecord, ExperimentError> {
        let missing = |what: &str| ExperimentError::IncompleteSession(what.to_string());
        if self.phase != TaskPhase::Done {
            return Err(ExperimentError::IncompleteSession(format!(
                "session ended in phase {}",
                self.phase
            )));
        }
        let t1 = self.t1_alpha.ok_or_else(|| missing("t1_alpha"))?;
        let (l, r) = self.t2_alphas.ok_or_else(|| missing("t2 alphas"))?;
        let order = self.t3.ok_or_else(|| missing("t3_order"))?.order;
        let preference = self.preference.ok_or_else(|| missing("t3_preference"))?;
        Ok(SessionRecord {
            participant_id: self.participant_id.clone(),
            t1_alpha: t1,
            t2_left_alpha: l,
            t2_right_alpha: r,
            t3_preference: preference,
            t3_order: order,
            phase_timestamps: self.timestamps.clone(),
        })
    }

    pub fn log_header(&self) -> LogHeader {
        LogHeader {
            participant_id: self.participant_id.clone(),
            alpha_step: self.alpha_step,
            rng_seed: self.rng_seed,
            initial_alpha: self.initial_alpha,
        }
    }
}

/// First line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub participant_id: String,
    pub alpha_step: f64,
    pub rng_seed: u64,
    pub initial_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Header(LogHeader),
    Command(LoggedCommand),
}

/// A session log: header plus accepted commands, stored as JSON lines.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: LogHeader,
    pub commands: Vec<LoggedCommand>,
}

impl SessionLog {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let Some((_, first)) = lines.next() else {
            return Err(ExperimentError::IllegalSequence("empty log".into()));
        };
        let header = match serde_json::from_str::<LogLine>(first) {
            Ok(LogLine::Header(h)) => h,
            Ok(LogLine::Command(_)) => {
                return Err(ExperimentError::LogParse {
                    line: 1,
                    message: "first line must be the header".into(),
                })
            }
            Err(e) => {
                return Err(ExperimentError::LogParse {
                    line: 1,
                    message: e.to_string(),
                })
            }
        };
        let mut commands = Vec::new();
        for (i, line) in lines {
            match serde_json::from_str::<LogLine>(line) {
                Ok(LogLine::Command(c)) => commands.push(c),
                Ok(LogLine::Header(_)) => {
                    return Err(ExperimentError::LogParse {
                        line: i + 1,
                        message: "duplicate header".into(),
                    })
                }
                Err(e) => {
                    return Err(ExperimentError::LogParse {
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(Self { header, commands })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = header_line(&self.header);
        for c in &self.commands {
            out.push_str(&command_line(c));
        }
        out
    }

    pub fn config(&self, base: &ExperimentConfig) -> ExperimentConfig {
        ExperimentConfig {
            alpha_step: self.header.alpha_step,
            rng_seed: self.header.rng_seed,
            initial_alpha: self.header.initial_alpha,
            ..base.clone()
        }
    }

    /// Re-run the logged commands; any rejected command is an illegal sequence.
    pub fn replay(&self, base: &ExperimentConfig) -> Result<Session, ExperimentError> {
        if !self.commands.iter().any(|c| c.command == Command::Confirm) {
            return Err(ExperimentError::IllegalSequence(
                "log contains no Confirm events".into(),
            ));
        }
        let mut session = Session::new(self.header.participant_id.clone(), &self.config(base))?;
        for c in &self.commands {
            session.apply_command(c.command, c.t).map_err(|e| {
                ExperimentError::IllegalSequence(format!("command #{} ({}): {e}", c.seq, c.command))
            })?;
        }
        Ok(session)
    }
}

fn header_line(h: &LogHeader) -> String {
    let mut s = serde_json::to_string(&LogLine::Header(h.clone())).expect("header serializes");
    s.push('\n');
    s
}

fn command_line(c: &LoggedCommand) -> String {
    let mut s = serde_json::to_string(&LogLine::Command(*c)).expect("command serializes");
    s.push('\n');
    s
}

/// Appends log lines as they happen, flushing each one so an interrupted
/// session still leaves a parseable log.
pub struct LogWriter<W: Write> {
    out: W,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader) -> std::io::Result<Self> {
        out.write_all(header_line(header).as_bytes())?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn append(&mut self, command: &LoggedCommand) -> std::io::Result<()> {
        self.out.write_all(command_line(command).as_bytes())?;
        self.out.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> Session {
        Session::new("P1", &ExperimentConfig::default()).unwrap()
    }

    fn run(s: &mut Session, cmds: &[Command]) {
        for (i, &c) in cmds.iter().enumerate() {
            s.apply_command(c, i as f64).unwrap();
        }
    }

    fn to_t1(s: &mut Session) {
        run(s, &[Command::Confirm, Command::Confirm]);
        assert_eq!(s.phase(), TaskPhase::T1);
    }

    #[test]
    fn t1_step_and_clamp() {
        let mut s = Session::new(
            "P",
            &ExperimentConfig {
                initial_alpha: 0.5,
                ..ExperimentConfig::default()
            },
        )
        .unwrap();
        to_t1(&mut s);
        let state = s.apply_command(Command::IncreaseBoth, 3.0).unwrap();
        assert_eq!(state.left_alpha, 0.51);
        assert!(!state.dichoptic_enabled);

        let mut s = session();
        to_t1(&mut s);
        let state = s.apply_command(Command::IncreaseBoth, 3.0).unwrap();
        assert_eq!(state.left_alpha, 1.0);
    }

    #[test]
    fn t1_confirm_seeds_t2() {
        let mut s = Session::new(
            "P",
            &ExperimentConfig {
                initial_alpha: 0.5,
                ..ExperimentConfig::default()
            },
        )
        .unwrap();
        to_t1(&mut s);
        run(
            &mut s,
            &[Command::IncreaseBoth, Command::Confirm, Command::Confirm],
        );
        assert_eq!(s.phase(), TaskPhase::T2);
        assert_eq!(s.t1_alpha(), Some(0.51));
        let state = s.opacity();
        assert_eq!((state.left_alpha, state.right_alpha), (0.51, 0.51));
        assert!(state.dichoptic_enabled);
    }

    #[test]
    fn per_eye_commands_are_illegal_in_t1() {
        let mut s = session();
        to_t1(&mut s);
        let before = s.clone();
        let err = s.apply_command(Command::IncreaseLeft, 5.0).unwrap_err();
        assert_eq!(
            err,
            ExperimentError::IllegalCommand {
                command: Command::IncreaseLeft,
                phase: TaskPhase::T1
            }
        );
        assert_eq!(s, before);
    }

    #[test]
    fn legality_table() {
        assert!(Command::Confirm.is_legal(TaskPhase::Briefing));
        assert!(!Command::IncreaseBoth.is_legal(TaskPhase::Briefing));
        assert!(Command::DecreaseRight.is_legal(TaskPhase::T2));
        assert!(!Command::ChooseCurrent.is_legal(TaskPhase::T2));
        assert!(Command::ChooseCurrent.is_legal(TaskPhase::T3Choice));
        assert!(!Command::ChooseCurrent.is_legal(TaskPhase::T3ViewA));
        assert!(Command::ALL.iter().all(|c| !c.is_legal(TaskPhase::Done)));
    }

    #[test]
    fn command_codes_round_trip() {
        for c in Command::ALL {
            assert_eq!(Command::from_code(c.code()), Some(c));
            assert_eq!(c.as_str().parse::<Command>(), Ok(c));
        }
        assert_eq!(Command::from_code(0), None);
        assert_eq!(Command::from_code(9), None);
    }

    #[test]
    fn t3_views_show_both_settings() {
        let cfg = ExperimentConfig {
            initial_alpha: 0.5,
            ..ExperimentConfig::default()
        };
        let mut s = Session::new("P", &cfg).unwrap();
        run(
            &mut s,
            &[
                Command::Confirm,
                Command::Confirm,
                Command::Confirm,
                Command::Confirm,
            ],
        );
        for _ in 0..20 {
            s.apply_command(Command::DecreaseLeft, 5.0).unwrap();
            s.apply_command(Command::IncreaseRight, 5.0).unwrap();
        }
        run(&mut s, &[Command::Confirm, Command::Confirm]);
        assert_eq!(s.phase(), TaskPhase::T3ViewA);
        let sched = s.t3_schedule().unwrap();
        let non = OpacityState::new(0.5, 0.5, false);
        let dich = OpacityState::new(0.3, 0.7, true);
        let (a, b) = match sched.order {
            T3Order::DichopticFirst => (dich, non),
            T3Order::NonDichopticFirst => (non, dich),
        };
        assert_eq!((sched.view_a, sched.view_b), (a, b));
        assert_eq!(s.opacity(), a);
        s.apply_command(Command::Confirm, 9.0).unwrap();
        assert_eq!(s.opacity(), b);
        s.apply_command(Command::Confirm, 9.5).unwrap();
        assert_eq!(s.phase(), TaskPhase::T3Choice);
        assert_eq!(s.opacity(), b);
        s.apply_command(Command::Confirm, 10.0).unwrap();
        assert_eq!(s.opacity(), a);
        s.apply_command(Command::ChooseCurrent, 11.0).unwrap();
        assert_eq!(s.phase(), TaskPhase::Done);
        let rec = s.export().unwrap();
        assert_eq!(rec.t3_preference, sched.order.first());
        assert_eq!(rec.non_dichoptic_setting(), non);
        assert_eq!(rec.dichoptic_setting(), dich);
    }

    #[test]
    fn begin_t3_requires_t2() {
        let mut s = session();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            s.begin_t3(&mut rng),
            Err(ExperimentError::IllegalSequence(_))
        ));
    }

    #[test]
    fn seeded_order_is_reproducible() {
        for seed in 0..50 {
            assert_eq!(T3Order::from_seed(seed), T3Order::from_seed(seed));
        }
    }

    #[test]
    fn aborted_session_cannot_export() {
        let mut s = session();
        run(
            &mut s,
            &[
                Command::Confirm,
                Command::Confirm,
                Command::Confirm,
                Command::Confirm,
            ],
        );
        assert_eq!(s.phase(), TaskPhase::T2);
        assert!(matches!(
            s.export(),
            Err(ExperimentError::IncompleteSession(_))
        ));
    }

    #[test]
    fn config_rejects_large_steps() {
        let cfg = ExperimentConfig {
            alpha_step: 0.2,
            ..ExperimentConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(ExperimentError::InvalidConfig(_))
        ));
    }

    #[test]
    fn instructions_exist_for_instruction_phases() {
        for p in [
            TaskPhase::Briefing,
            TaskPhase::T1Instructions,
            TaskPhase::T2Instructions,
            TaskPhase::T3Instructions,
        ] {
            assert!(instruction_text(p).is_some());
        }
        assert!(instruction_text(TaskPhase::T1).is_none());
    }

    #[test]
    fn phase_names_serialize_as_documented() {
        assert_eq!(
            serde_json::to_string(&TaskPhase::T3ViewA).unwrap(),
            "\"T3_ViewA\""
        );
        assert_eq!(TaskPhase::T1Instructions.to_string(), "T1_Instructions");
    }
}
