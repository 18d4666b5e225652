//! Cognition → arranger → synthesis → refiner, repeated until approval or
//! the iteration budget runs out.

use serde::{Deserialize, Serialize};

use regionpost_core::geometry::RegionSet;
use regionpost_core::layout::LayoutSpec;

use crate::arranger::{arranger_step, ArrangerOutcome};
use crate::client::ChatClient;
use crate::cognition::cognition_step;
use crate::exchange::DEFAULT_ATTEMPTS;
use crate::refiner::refiner_step;
use crate::theme::extract_theme;
use crate::types::{ElementPair, FeedbackTarget, RefinerVerdict, Theme, Thresholds};
use crate::AgentError;

pub type SynthesisError = Box<dyn std::error::Error + Send + Sync>;

pub trait PosterImage {
    fn png(&self) -> &[u8];
}

impl PosterImage for Vec<u8> {
    fn png(&self) -> &[u8] {
        self
    }
}

/// Turns a layout into a rendered poster (one sampler run per call).
pub trait PosterSynthesizer {
    type Output: PosterImage;
    fn synthesize(&mut self, layout: &LayoutSpec, theme: &Theme, iteration: usize) -> Result<Self::Output, SynthesisError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub max_iterations: usize,
    pub thresholds: Thresholds,
    pub max_escalations: usize,
    pub max_attempts: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            thresholds: Thresholds::default(),
            max_escalations: 2,
            max_attempts: DEFAULT_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Initial,
    Refiner,
    Arranger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitionCall {
    /// 1-based count over the whole loop.
    pub call: usize,
    pub trigger: Trigger,
    pub feedback: Option<String>,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub cognition_calls: Vec<CognitionCall>,
    pub arranger_feedback: Option<String>,
    pub escalations: Vec<String>,
    pub layout: Option<LayoutSpec>,
    pub verdict: Option<RefinerVerdict>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopLog {
    pub description: String,
    pub theme: Option<Theme>,
    pub iterations: Vec<IterationLog>,
    pub sampler_runs: usize,
    pub approved: bool,
    pub selected_iteration: Option<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct LoopOutcome<O> {
    pub output: O,
    pub layout: LayoutSpec,
    pub theme: Theme,
    pub verdict: RefinerVerdict,
    pub log: LoopLog,
}

#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct LoopError {
    #[source]
    pub source: AgentError,
    pub log: Box<LoopLog>,
}

struct Loop<'a> {
    client: &'a dyn ChatClient,
    cfg: LoopConfig,
    log: LoopLog,
    cognition_calls: usize,
}

impl Loop<'_> {
    fn cognition(
        &mut self,
        theme: &Theme,
        trigger: Trigger,
        feedback: Option<String>,
        it: &mut IterationLog,
    ) -> Result<Vec<ElementPair>, AgentError> {
        let out = cognition_step(theme, feedback.as_deref(), self.client, self.cfg.max_attempts)?;
        self.cognition_calls += 1;
        self.log.warnings.extend(out.warnings);
        it.cognition_calls.push(CognitionCall {
            call: self.cognition_calls,
            trigger,
            feedback,
            pairs: out.pairs.len(),
        });
        Ok(out.pairs)
    }
}

/// Runs the design loop. On exhaustion the iteration with the highest
/// contrast + harmony score is returned (earliest on ties).
pub fn run_design_loop<S: PosterSynthesizer>(
    description: &str,
    rs: &RegionSet,
    synth: &mut S,
    cfg: LoopConfig,
    client: &dyn ChatClient,
) -> Result<LoopOutcome<S::Output>, LoopError> {
    let mut state = Loop {
        client,
        cfg,
        log: LoopLog {
            description: description.to_owned(),
            ..LoopLog::default()
        },
        cognition_calls: 0,
    };
    match drive(description, rs, synth, &mut state) {
        Ok(outcome) => Ok(outcome),
        Err(source) => Err(LoopError {
            source,
            log: Box::new(state.log),
        }),
    }
}

fn drive<S: PosterSynthesizer>(
    description: &str,
    rs: &RegionSet,
    synth: &mut S,
    st: &mut Loop<'_>,
) -> Result<LoopOutcome<S::Output>, AgentError> {
    if st.cfg.max_iterations == 0 {
        return Err(AgentError::EmptyInput("max_iterations"));
    }
    let theme = extract_theme(description, st.client, st.cfg.max_attempts)?;
    st.log.theme = Some(theme.clone());

    let mut pairs: Vec<ElementPair> = Vec::new();
    let mut cognition_feedback: Option<(Trigger, Option<String>)> = Some((Trigger::Initial, None));
    let mut arranger_feedback: Option<String> = None;
    let mut best: Option<(S::Output, LayoutSpec, RefinerVerdict, usize)> = None;

    for iteration in 1..=st.cfg.max_iterations {
        let mut it = IterationLog {
            iteration,
            cognition_calls: Vec::new(),
            arranger_feedback: arranger_feedback.clone(),
            escalations: Vec::new(),
            layout: None,
            verdict: None,
        };
        let result = (|| {
            if let Some((trigger, feedback)) = cognition_feedback.take() {
                pairs = st.cognition(&theme, trigger, feedback, &mut it)?;
            }
            let layout = loop {
                match arranger_step(&pairs, rs, &theme, arranger_feedback.as_deref(), st.client, st.cfg.max_attempts)? {
                    ArrangerOutcome::Layout(l) => break l,
                    ArrangerOutcome::NeedMoreElements { reason } => {
                        if it.escalations.len() == st.cfg.max_escalations {
                            return Err(AgentError::EscalationLimit {
                                count: it.escalations.len(),
                                reason,
                            });
                        }
                        it.escalations.push(reason.clone());
                        let more = st.cognition(&theme, Trigger::Arranger, Some(reason), &mut it)?;
                        for p in more {
                            if !pairs.contains(&p) {
                                pairs.push(p);
                            }
                        }
                    }
                }
            };
            it.layout = Some(layout.clone());
            st.log.sampler_runs += 1;
            let output = synth.synthesize(&layout, &theme, iteration).map_err(AgentError::Synthesis)?;
            let verdict = refiner_step(
                output.png(),
                &layout,
                &theme,
                iteration,
                st.client,
                st.cfg.thresholds,
                st.cfg.max_attempts,
            )?;
            it.verdict = Some(verdict.clone());
            Ok((output, layout, verdict))
        })();
        st.log.iterations.push(it);
        let (output, layout, verdict) = result?;

        if verdict.approved {
            st.log.approved = true;
            st.log.selected_iteration = Some(iteration);
            return Ok(LoopOutcome {
                output,
                layout,
                theme,
                verdict,
                log: std::mem::take(&mut st.log),
            });
        }
        match verdict.feedback_target {
            FeedbackTarget::Cognition => {
                cognition_feedback = Some((Trigger::Refiner, Some(verdict.feedback_text.clone())));
                arranger_feedback = None;
            }
            FeedbackTarget::Arranger => arranger_feedback = Some(verdict.feedback_text.clone()),
            FeedbackTarget::None => {}
        }
        if best.as_ref().is_none_or(|b| verdict.score() > b.2.score()) {
            best = Some((output, layout, verdict, iteration));
        }
    }
    let (output, layout, verdict, iteration) = best.expect("at least one iteration ran");
    st.log.selected_iteration = Some(iteration);
    Ok(LoopOutcome {
        output,
        layout,
        theme,
        verdict,
        log: std::mem::take(&mut st.log),
    })
}
